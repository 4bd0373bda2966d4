#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "epi/envsim.hpp"
#include "epi/policy.hpp"

namespace epi::dataset {

using policy::Vec;

struct Transition {
  Vec s;
  Vec a;
  Vec s_next;
  int env_id = -1;
  int vine_group = -1;  // -1: not a vine transition
};

// Per-dimension mean/std of the training split.
struct NormStats {
  Vec s_mean, s_std;
  Vec a_mean, a_std;
  Vec sn_mean, sn_std;
  Vec dl_mean, dl_std;  // per-step state delta (s_next - s)

  Vec norm_s(std::span<const double> x) const;
  Vec norm_a(std::span<const double> x) const;
  Vec norm_sn(std::span<const double> x) const;
  Vec norm_delta(std::span<const double> x) const;
};

// Immutable once frozen. The split is stratified by env_id; vine groups are
// kept whole on one side. Normalization statistics come from the training
// split only.
class TransitionDataset {
 public:
  TransitionDataset() = default;

  void add(Transition t);  // throws std::logic_error once frozen

  const std::vector<Transition>& transitions() const { return transitions_; }
  const std::vector<size_t>& train_indices() const { return train_; }
  const std::vector<size_t>& val_indices() const { return val_; }
  const NormStats& stats() const;
  bool frozen() const { return frozen_; }
  int num_envs() const { return num_envs_; }

  std::vector<size_t> val_indices_for_env(int env_id) const;

 private:
  friend TransitionDataset split_and_freeze(std::vector<Transition> transitions,
                                            double val_fraction, uint64_t seed);
  friend TransitionDataset restore(std::vector<Transition> transitions,
                                   std::vector<size_t> train, std::vector<size_t> val);
  std::vector<Transition> transitions_;
  std::vector<size_t> train_, val_;
  NormStats stats_;
  bool frozen_ = false;
  int num_envs_ = 0;
};

// Trains a task policy on the single fixed environment (this doubles as the
// Simple Policy baseline). Deterministic given seed.
policy::GaussianPolicy pretrain_seed_policy(env::Family family, const env::EnvParams& fixed_params,
                                            int iterations, size_t batch_timesteps, uint64_t seed);

std::vector<Transition> collect_epsilon_greedy(const policy::GaussianPolicy& seed_policy,
                                               const env::ParamGrid& grid, size_t n_transitions,
                                               double epsilon, uint64_t seed);

// For each anchor (state, action) sampled from seed-policy rollouts, every
// training cell is set to the anchor state and steps the same action; the
// |grid| resulting transitions share a vine_group tag.
std::vector<Transition> collect_vine(const policy::GaussianPolicy& seed_policy,
                                     const env::ParamGrid& grid, int n_anchor_states,
                                     uint64_t seed);

TransitionDataset split_and_freeze(std::vector<Transition> transitions, double val_fraction,
                                   uint64_t seed);

// Rebuilds a frozen dataset from an explicit, previously computed split
// (persistence path); recomputes the normalization statistics.
TransitionDataset restore(std::vector<Transition> transitions, std::vector<size_t> train,
                          std::vector<size_t> val);

}  // namespace epi::dataset

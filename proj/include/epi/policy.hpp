#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "epi/nn.hpp"
#include "epi/rng.hpp"

namespace epi::policy {

using nn::Vec;

inline constexpr double kStdFloor = 1e-6;

struct ActResult {
  Vec action;
  double log_prob = 0.0;
  Vec mean;
  Vec stddev;
};

// Exact diagonal-Gaussian log density.
double gaussian_log_prob(std::span<const double> action, std::span<const double> mean,
                         std::span<const double> stddev);

// One per-episode acting session. Stateless for MLP policies; recurrent
// policies carry hidden state that is reset at construction.
class ActorSession {
 public:
  virtual ~ActorSession() = default;
  virtual ActResult act(std::span<const double> obs, Rng& rng) = 0;
  virtual ActResult act_mean(std::span<const double> obs) = 0;
};

class Actor {
 public:
  virtual ~Actor() = default;
  virtual std::unique_ptr<ActorSession> session() const = 0;
  virtual int obs_dim() const = 0;
  virtual int act_dim() const = 0;
};

// Diagonal-Gaussian MLP policy: network mean, learnable per-dimension
// log standard deviation.
class GaussianPolicy : public Actor {
 public:
  GaussianPolicy(int obs_dim, int act_dim, uint64_t seed,
                 std::vector<int> hidden = {32, 32}, double init_log_std = -0.5);

  std::unique_ptr<ActorSession> session() const override;
  int obs_dim() const override { return obs_dim_; }
  int act_dim() const override { return act_dim_; }

  ActResult act(std::span<const double> obs, Rng& rng) const;
  Vec mean_action(std::span<const double> obs) const;
  Vec stddev() const;  // exp(log_std), floored at kStdFloor

  nn::NetworkSpec spec;
  nn::NetworkParams params;
  std::vector<float> log_std;

 private:
  int obs_dim_;
  int act_dim_;
};

// Single-update-gate recurrent cell (32 hidden units) with a linear mean
// head. Hidden state is zeroed at every episode boundary.
class RecurrentPolicy : public Actor {
 public:
  RecurrentPolicy(int obs_dim, int act_dim, uint64_t seed, int hidden_dim = 32,
                  double init_log_std = -0.5);

  std::unique_ptr<ActorSession> session() const override;
  int obs_dim() const override { return obs_dim_; }
  int act_dim() const override { return act_dim_; }
  int hidden_dim() const { return hidden_dim_; }

  struct Cache {
    std::vector<Vec> x;      // inputs per step
    std::vector<Vec> gate;   // update gate z_t
    std::vector<Vec> cand;   // candidate tanh activation
    std::vector<Vec> h;      // h[0] = zeros, h[t+1] after step t
  };

  // Mean actions for a whole episode from a zero hidden state.
  std::vector<Vec> forward_episode(const std::vector<Vec>& obs, Cache* cache = nullptr) const;

  struct Grads {
    Vec wg, bg, wc, bc, wo, bo;
    void add_scaled(const Grads& o, double s);
  };
  Grads zero_grads() const;
  // Backprop through time of sum_t (mean_t . upstream_t).
  void backward_episode(const Cache& cache, const std::vector<Vec>& upstream, Grads& accum) const;

  Vec stddev() const;

  // Gate and candidate weights act on [x ; h]; output head on h.
  std::vector<float> wg, bg, wc, bc, wo, bo;
  std::vector<float> log_std;

 private:
  int obs_dim_;
  int act_dim_;
  int hidden_dim_;
};

// ---------------------------------------------------------------------------
// Rollouts

struct Trajectory {
  std::vector<Vec> obs;
  std::vector<Vec> act;
  Vec rew;
  Vec logp;
  std::vector<Vec> mean;
  std::vector<Vec> stddev;
  int env_id = -1;
  bool terminal = false;  // ended by the environment, not the episode limit

  size_t size() const { return rew.size(); }
};

struct RolloutBatch {
  std::vector<Trajectory> trajectories;
  // Flattened, episode-major step data.
  std::vector<Vec> obs, act, old_mean, old_std;
  Vec old_logp, returns, advantages;
  std::vector<std::pair<size_t, size_t>> episode_spans;  // (start, length) per trajectory
  size_t total_steps = 0;

  void flatten_and_finalize(double gamma, const class ValueNet* baseline);
};

// R_t = r_t + gamma * R_{t+1}.
Vec discounted_returns(std::span<const double> rewards, double gamma);

// One playable episode; constructed fresh per rollout by an EpisodeSampler.
class Episode {
 public:
  virtual ~Episode() = default;
  virtual Vec reset() = 0;
  virtual Vec step(std::span<const double> action, double* reward, bool* done) = 0;
  virtual int env_id() const = 0;
};

using EpisodeSampler = std::function<std::unique_ptr<Episode>(int episode_index, uint64_t seed)>;

// Runs whole episodes until at least min_timesteps steps are collected.
// Episode i always uses the rng stream (seed, i), so the result does not
// depend on how execution is scheduled.
RolloutBatch collect_rollouts(const Actor& actor, const EpisodeSampler& sampler,
                              size_t min_timesteps, uint64_t seed, double gamma,
                              const class ValueNet* baseline, bool deterministic = false);

// ---------------------------------------------------------------------------
// Value baseline

class ValueNet {
 public:
  ValueNet(int obs_dim, uint64_t seed, std::vector<int> hidden = {32, 32});

  double predict(std::span<const double> obs) const;
  void fit(const std::vector<Vec>& obs, std::span<const double> targets, int epochs,
           uint64_t seed, int minibatch = 64);

  nn::NetworkSpec spec;
  nn::NetworkParams params;

 private:
  nn::AdamState adam_;
};

// ---------------------------------------------------------------------------
// Trust-region policy update (clipped surrogate, KL-limited)

struct TrustRegionConfig {
  double clip = 0.2;
  int epochs = 10;
  double kl_limit = 0.01;
  double lr = 3e-4;
  int minibatch = 64;
};

struct UpdateStats {
  double mean_kl = 0.0;
  int epochs_run = 0;
  bool aborted = false;  // non-finite surrogate; policy left unchanged
};

// Owns the optimizer state across updates of one policy.
class TrustRegionUpdater {
 public:
  TrustRegionUpdater(const GaussianPolicy& policy, TrustRegionConfig cfg = {});
  UpdateStats update(GaussianPolicy& policy, const RolloutBatch& batch, uint64_t seed);

  const TrustRegionConfig& config() const { return cfg_; }

 private:
  TrustRegionConfig cfg_;
  nn::AdamState adam_params_;
  nn::AdamVecState adam_log_std_;
};

class RecurrentTrustRegionUpdater {
 public:
  RecurrentTrustRegionUpdater(const RecurrentPolicy& policy, TrustRegionConfig cfg = {});
  UpdateStats update(RecurrentPolicy& policy, const RolloutBatch& batch, uint64_t seed);

 private:
  TrustRegionConfig cfg_;
  std::vector<nn::AdamVecState> adam_;  // wg, bg, wc, bc, wo, bo, log_std
};

// Mean KL(old || new) between the stored batch Gaussians and the ones the
// current policy produces on the batch states.
double mean_kl_gaussian(const std::vector<Vec>& old_mean, const std::vector<Vec>& old_std,
                        const std::vector<Vec>& new_mean, const std::vector<Vec>& new_std);

}  // namespace epi::policy

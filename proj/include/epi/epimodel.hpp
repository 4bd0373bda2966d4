#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "epi/dataset.hpp"
#include "epi/nn.hpp"

namespace epi::epimodel {

using nn::Vec;

inline constexpr int kProbeSteps = 10;

// A fixed-length probing trajectory. Early-terminated probes are
// zero-padded; true_len records the real step count.
struct EpiTrajectory {
  std::vector<Vec> obs;
  std::vector<Vec> act;
  int true_len = 0;
  int env_id = -1;
};

// A network with its architecture (embedding net, prediction models).
struct Net {
  nn::NetworkSpec spec;
  nn::NetworkParams params;

  Vec operator()(std::span<const double> input) const {
    return nn::forward(spec, params, input);
  }
};

struct EpiConfig {
  int embed_dim = 2;
  std::vector<int> embed_hidden = {32, 32};
  std::vector<int> pred_hidden = {128, 128, 128, 128};
  double d_min = 1.0;
  double sigma_max = 0.1;
  double lambda_sigma = 1.0;
  double separation_weight = 1.0;  // weight of the separation term in joint training
  double adam_lr = 1e-3;
  int minibatch = 64;
  int train_epochs = 10;
  int val_subsample = 64;     // per-env validation transitions used by epi_reward
  int separation_envs = 0;    // 0 = all envs participate in the separation loss
  bool reward_flip_sign = false;  // literal-Eq.-3 sign, for replication studies
  bool predict_delta = true;
};

// Flattened, normalized network input for psi: 10 x (obs + act), zero-padded.
Vec flatten_trajectory(const EpiTrajectory& tau, const dataset::NormStats& stats);

Vec embed(const Net& psi, const EpiTrajectory& tau, const dataset::NormStats& stats);

// Mean ||f(s,a) - s_next||^2 over the given transition indices (normalized
// spaces). For the epi variant each transition is paired with a probing
// trajectory from its own environment.
double pred_loss(const Net& f, const dataset::TransitionDataset& ds,
                 std::span<const size_t> indices, const EpiConfig& cfg);
double epi_pred_loss(const Net& f_epi, const Net& psi, const dataset::TransitionDataset& ds,
                     std::span<const size_t> indices,
                     const std::function<const EpiTrajectory&(int env_id, size_t i)>& tau_for,
                     const EpiConfig& cfg);

// Hinge-squared separation of per-env embedding means plus a variance cap.
// Groups with fewer than two members contribute their mean only.
double separation_loss(const std::vector<std::vector<Vec>>& embeddings_by_env, double d_min,
                       double sigma_max, double lambda_sigma);

struct TrainedModels {
  Net f;
  Net f_epi;
  Net psi;
  double train_loss_f = 0.0, val_loss_f = 0.0;
  double train_loss_epi = 0.0, val_loss_epi = 0.0;
  double final_separation_loss = 0.0;
};

// Trains f on the plain prediction loss and (f_epi, psi) jointly, all three
// freshly initialized. probe_pool[env_id] supplies current-policy probing
// trajectories for that environment (>= 1 each).
TrainedModels train_pred_models(const dataset::TransitionDataset& ds,
                                const std::vector<std::vector<EpiTrajectory>>& probe_pool,
                                int epochs, bool with_separation, const EpiConfig& cfg,
                                uint64_t seed);

// Per-environment EPI reward: L_pred(val slice) - L_epi_pred(val slice; psi(tau)).
// Precomputes the deterministic validation subsample and the f baseline per env.
class EpiRewarder {
 public:
  EpiRewarder(const TrainedModels& models, const dataset::TransitionDataset& ds,
              const EpiConfig& cfg);

  double reward(const EpiTrajectory& tau) const;
  double baseline_loss(int env_id) const;  // cached L_pred on the env's val slice

 private:
  const TrainedModels& models_;
  const dataset::TransitionDataset& ds_;
  EpiConfig cfg_;
  std::vector<std::vector<size_t>> val_slices_;  // per env, subsampled
  std::vector<double> l_pred_;
};

// Convenience form of the reward for a single trajectory.
double epi_reward(const EpiTrajectory& tau, const TrainedModels& models,
                  const dataset::TransitionDataset& ds, const EpiConfig& cfg);

}  // namespace epi::epimodel

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "epi/dataset.hpp"
#include "epi/envsim.hpp"
#include "epi/epimodel.hpp"
#include "epi/policy.hpp"

namespace epi::training {

using policy::Vec;

struct TrainConfig {
  double gamma = 0.99;
  double kl_limit = 0.01;
  double policy_lr = 3e-4;
  int epi_iterations = 100;
  int retrain_period = 25;
  size_t epi_batch_timesteps = 2000;
  int task_iterations = 150;
  size_t task_batch_timesteps = 5000;
  int pred_epochs = 10;
  int probe_pool_per_env = 4;  // probing trajectories per env for loss pairing
  int seed_policy_iterations = 250;
  size_t seed_policy_batch = 4000;
  int value_fit_epochs = 3;
  bool use_vine = true;
  bool use_separation = true;
  bool reset_after_probe = true;
  uint64_t seed = 0;

  void validate() const;  // throws on non-positive counts
  policy::TrustRegionConfig trust_region() const {
    return {.clip = 0.2, .epochs = 10, .kl_limit = kl_limit, .lr = policy_lr, .minibatch = 64};
  }
};

enum class BaselineKind {
  simple,
  invariant,
  oracle,
  random_interaction,
  history,
  recurrent,
  system_id,
  direct_reward,
};

std::string baseline_name(BaselineKind kind);
BaselineKind baseline_from_name(const std::string& name);

// Long-format metric rows: (stage, iteration, key, value).
struct Metrics {
  struct Row {
    std::string stage;
    int iteration;
    std::string key;
    double value;
  };
  std::vector<Row> rows;

  void append(const std::string& stage, int iteration, const std::string& key, double value) {
    rows.push_back({stage, iteration, key, value});
  }
  void write_csv(const std::string& path) const;
};

// ---------------------------------------------------------------------------
// EPI training

struct EpiArtifacts {
  policy::GaussianPolicy pi_epi;
  epimodel::TrainedModels models;
  Metrics metrics;
};

EpiArtifacts train_epi(const TrainConfig& config, const dataset::TransitionDataset& ds,
                       const env::ParamGrid& grid, const epimodel::EpiConfig& epi_cfg);

struct ProbeResult {
  epimodel::EpiTrajectory tau;
  Vec embedding;
};

// Runs pi_epi for 10 steps on a freshly reset env; the env is left in its
// post-probe state. Deterministic (mean) actions unless a stochastic rng
// stream is supplied.
ProbeResult probe_and_embed(const policy::GaussianPolicy& pi_epi, const epimodel::Net& psi,
                            env::EnvInstance& env, const dataset::NormStats& stats, int env_id,
                            Rng* stochastic_rng = nullptr);

policy::GaussianPolicy train_task(const TrainConfig& config, const policy::GaussianPolicy& pi_epi,
                                  const epimodel::Net& psi, const env::ParamGrid& grid,
                                  const dataset::NormStats& stats, Metrics* metrics = nullptr);

// ---------------------------------------------------------------------------
// Baselines

struct BaselinePolicy {
  BaselineKind kind = BaselineKind::invariant;
  std::shared_ptr<policy::GaussianPolicy> mlp;    // all kinds except recurrent
  std::shared_ptr<policy::RecurrentPolicy> rnn;   // recurrent
  std::shared_ptr<policy::GaussianPolicy> probe;  // direct_reward probing policy
};

BaselinePolicy train_baseline(BaselineKind kind, const TrainConfig& config,
                              const env::ParamGrid& grid, Metrics* metrics = nullptr);

struct SystemIdArtifacts {
  std::shared_ptr<policy::GaussianPolicy> oracle;
  epimodel::Net osi;
  Vec iteration_mse;          // normalized-parameter MSE per OSI retrain
  double final_mse = 0.0;     // on held-in environments
  double constant_mean_mse = 0.0;  // same windows, constant-mean predictor
};

SystemIdArtifacts train_system_id(const TrainConfig& config, const env::ParamGrid& grid,
                                  Metrics* metrics = nullptr);

// ---------------------------------------------------------------------------
// Shared episode protocol (training and evaluation must agree on it)

inline constexpr int kHistoryLag = 10;

// Normalized environment parameters: (value - lo) / (hi - lo) over the
// grid's training range (oracle / system-id observation input).
Vec normalized_rho(const env::ParamGrid& grid, const env::EnvParams& params);

struct EvalBundle {
  enum class Kind { epi, baseline, system_id };
  Kind kind = Kind::baseline;
  // epi
  const policy::GaussianPolicy* pi_epi = nullptr;
  const epimodel::Net* psi = nullptr;
  const policy::GaussianPolicy* pi_task = nullptr;
  const dataset::NormStats* stats = nullptr;
  bool reset_after_probe = true;
  // baseline
  BaselineKind baseline = BaselineKind::invariant;
  const BaselinePolicy* baseline_policy = nullptr;
  // system id
  const SystemIdArtifacts* sysid = nullptr;
  // shared context
  const env::ParamGrid* grid = nullptr;
};

struct EpisodeOutcome {
  double episode_return = 0.0;  // undiscounted
  double final_distance = 0.0;  // SlidePuck puck-goal distance at episode end
  int steps = 0;
};

// Plays one full episode under the bundle's protocol with deterministic
// (mean) actions. Never mutates any policy.
EpisodeOutcome play_episode(const EvalBundle& bundle, const env::EnvParams& params,
                            uint64_t episode_seed);

}  // namespace epi::training

#include "epi/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <utility>

#include "epi/episodes.hpp"
#include "epi/threads.hpp"

namespace epi::training {

namespace {

using epimodel::EpiTrajectory;
using epimodel::kProbeSteps;
using policy::GaussianPolicy;
using policy::RolloutBatch;
using policy::Trajectory;

// Continues an environment from its current (post-probe) state; reset() does
// not reseed, so the step budget spent on probing counts against the episode.
class ResumeEpisode : public policy::Episode {
 public:
  ResumeEpisode(env::EnvInstance env, int env_id) : env_(std::move(env)), env_id_(env_id) {}

  Vec reset() override { return env_.observe(); }

  Vec step(std::span<const double> action, double* reward, bool* done) override {
    env::StepResult res = env_.step(action);
    *reward = res.reward;
    *done = res.done;
    return std::move(res.obs);
  }

  int env_id() const override { return env_id_; }
  env::EnvInstance& env() { return env_; }

 private:
  env::EnvInstance env_;
  int env_id_;
};

// Runs a 10-step probe from the env's current state. Stochastic when rng is
// given, mean actions otherwise. Optionally records a policy trajectory
// (zero rewards) alongside the raw probing trajectory.
EpiTrajectory run_probe(const GaussianPolicy& pi, env::EnvInstance& env, int env_id, Rng* rng,
                        Trajectory* traj_out) {
  EpiTrajectory tau;
  tau.env_id = env_id;
  Vec obs = env.observe();
  for (int t = 0; t < kProbeSteps; ++t) {
    policy::ActResult ar;
    if (rng != nullptr) {
      ar = pi.act(obs, *rng);
    } else {
      ar.mean = pi.mean_action(obs);
      ar.action = ar.mean;
      ar.stddev = pi.stddev();
      ar.log_prob = policy::gaussian_log_prob(ar.action, ar.mean, ar.stddev);
    }
    env::StepResult res = env.step(ar.action);
    tau.obs.push_back(obs);
    tau.act.push_back(ar.action);
    ++tau.true_len;
    if (traj_out != nullptr) {
      traj_out->obs.push_back(obs);
      traj_out->act.push_back(ar.action);
      traj_out->rew.push_back(0.0);
      traj_out->logp.push_back(ar.log_prob);
      traj_out->mean.push_back(std::move(ar.mean));
      traj_out->stddev.push_back(std::move(ar.stddev));
    }
    obs = std::move(res.obs);
    if (res.done) break;
  }
  const Vec zero_obs(env.obs_dim(), 0.0);
  const Vec zero_act(env.act_dim(), 0.0);
  while (static_cast<int>(tau.obs.size()) < kProbeSteps) {
    tau.obs.push_back(zero_obs);
    tau.act.push_back(zero_act);
  }
  if (traj_out != nullptr) traj_out->env_id = env_id;
  return tau;
}

// Flattened raw (unnormalized) probing trajectory, zero-padded to 10 steps.
Vec raw_probe_context(const EpiTrajectory& tau) {
  Vec out;
  for (int t = 0; t < kProbeSteps; ++t) {
    out.insert(out.end(), tau.obs[t].begin(), tau.obs[t].end());
    out.insert(out.end(), tau.act[t].begin(), tau.act[t].end());
  }
  return out;
}

double trajectory_return(const Trajectory& tr) {
  return std::accumulate(tr.rew.begin(), tr.rew.end(), 0.0);
}

// Diagonal-Gaussian differential entropy.
double policy_entropy(std::span<const double> stddev) {
  double h = 0.5 * stddev.size() * (1.0 + std::log(2.0 * std::acos(-1.0)));
  for (double s : stddev) h += std::log(s);
  return h;
}

double batch_mean_return(const RolloutBatch& batch) {
  double sum = 0.0;
  for (const auto& tr : batch.trajectories) sum += trajectory_return(tr);
  return batch.trajectories.empty() ? 0.0 : sum / static_cast<double>(batch.trajectories.size());
}

struct EnvDims {
  int obs = 0;
  int act = 0;
  int episode_limit = 0;
};

EnvDims env_dims(const env::ParamGrid& grid) {
  env::EnvInstance probe(grid.family, grid.cell_params(env::GridSide::train, 0));
  return {probe.obs_dim(), probe.act_dim(), probe.episode_limit()};
}

// Stochastic probe pool for prediction-model training: probe_pool_per_env
// trajectories per training cell, deterministically seeded.
std::vector<std::vector<EpiTrajectory>> collect_probe_pool(const GaussianPolicy& pi,
                                                           const env::ParamGrid& grid,
                                                           int per_env, uint64_t seed) {
  const int cells = grid.num_cells();
  std::vector<std::vector<EpiTrajectory>> pool(cells);
  for (auto& v : pool) v.resize(per_env);
  threads::parallel_for(cells * per_env, [&](int idx) {
    const int cell = idx / per_env;
    Rng rng = Rng::stream(seed, static_cast<uint64_t>(idx));
    env::EnvInstance env(grid.family, grid.cell_params(env::GridSide::train, cell));
    env.reset(rng.next_u64());
    pool[cell][idx % per_env] = run_probe(pi, env, cell, &rng, nullptr);
  });
  return pool;
}

}  // namespace

void TrainConfig::validate() const {
  if (gamma <= 0.0 || gamma > 1.0) throw std::invalid_argument("TrainConfig: gamma out of (0,1]");
  if (epi_iterations < 0) throw std::invalid_argument("TrainConfig: epi_iterations < 0");
  if (retrain_period <= 0) throw std::invalid_argument("TrainConfig: retrain_period <= 0");
  if (epi_batch_timesteps == 0) throw std::invalid_argument("TrainConfig: epi_batch_timesteps == 0");
  if (task_iterations <= 0) throw std::invalid_argument("TrainConfig: task_iterations <= 0");
  if (task_batch_timesteps == 0) throw std::invalid_argument("TrainConfig: task_batch_timesteps == 0");
  if (probe_pool_per_env <= 0) throw std::invalid_argument("TrainConfig: probe_pool_per_env <= 0");
  if (pred_epochs <= 0) throw std::invalid_argument("TrainConfig: pred_epochs <= 0");
}

std::string baseline_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::simple: return "simple";
    case BaselineKind::invariant: return "invariant";
    case BaselineKind::oracle: return "oracle";
    case BaselineKind::random_interaction: return "random_interaction";
    case BaselineKind::history: return "history";
    case BaselineKind::recurrent: return "recurrent";
    case BaselineKind::system_id: return "system_id";
    case BaselineKind::direct_reward: return "direct_reward";
  }
  throw std::invalid_argument("baseline_name: unknown kind");
}

BaselineKind baseline_from_name(const std::string& name) {
  for (BaselineKind k :
       {BaselineKind::simple, BaselineKind::invariant, BaselineKind::oracle,
        BaselineKind::random_interaction, BaselineKind::history, BaselineKind::recurrent,
        BaselineKind::system_id, BaselineKind::direct_reward}) {
    if (baseline_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown baseline: " + name);
}

void Metrics::write_csv(const std::string& path) const {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (f == nullptr) throw std::runtime_error("cannot open metrics file: " + path);
  std::fprintf(f, "stage,iteration,key,value\n");
  for (const Row& r : rows) {
    std::fprintf(f, "%s,%d,%s,%.17g\n", r.stage.c_str(), r.iteration, r.key.c_str(), r.value);
  }
  std::fclose(f);
}

Vec normalized_rho(const env::ParamGrid& grid, const env::EnvParams& params) {
  Vec out(params.values.size());
  for (size_t p = 0; p < params.values.size(); ++p) {
    const double lo = grid.train_values[p].front();
    const double hi = grid.train_values[p].back();
    out[p] = (params.values[p] - lo) / (hi - lo);
  }
  return out;
}

ProbeResult probe_and_embed(const GaussianPolicy& pi_epi, const epimodel::Net& psi,
                            env::EnvInstance& env, const dataset::NormStats& stats, int env_id,
                            Rng* stochastic_rng) {
  ProbeResult res;
  res.tau = run_probe(pi_epi, env, env_id, stochastic_rng, nullptr);
  res.embedding = epimodel::embed(psi, res.tau, stats);
  return res;
}

// ---------------------------------------------------------------------------
// EPI training

EpiArtifacts train_epi(const TrainConfig& config, const dataset::TransitionDataset& ds,
                       const env::ParamGrid& grid, const epimodel::EpiConfig& epi_cfg) {
  config.validate();
  const EnvDims dims = env_dims(grid);
  const int cells = grid.num_cells();

  GaussianPolicy pi(dims.obs, dims.act, Rng::stream(config.seed, 101).next_u64());
  policy::TrustRegionUpdater updater(pi, config.trust_region());
  policy::ValueNet value(dims.obs, Rng::stream(config.seed, 102).next_u64());

  Metrics metrics;
  epimodel::TrainedModels models;
  int total = 0;
  int round = 0;
  while (true) {
    auto pool = collect_probe_pool(pi, grid, config.probe_pool_per_env,
                                   Rng::stream(config.seed, 200 + round).next_u64());
    models = epimodel::train_pred_models(ds, pool, config.pred_epochs, config.use_separation,
                                         epi_cfg, Rng::stream(config.seed, 300 + round).next_u64());
    metrics.append("train_epi", total, "val_loss_f", models.val_loss_f);
    metrics.append("train_epi", total, "val_loss_epi", models.val_loss_epi);
    metrics.append("train_epi", total, "separation_loss", models.final_separation_loss);
    if (total >= config.epi_iterations) break;

    epimodel::EpiRewarder rewarder(models, ds, epi_cfg);
    for (int k = 0; k < config.retrain_period && total < config.epi_iterations; ++k, ++total) {
      const size_t n_eps =
          (config.epi_batch_timesteps + kProbeSteps - 1) / static_cast<size_t>(kProbeSteps);
      std::vector<Trajectory> trajs(n_eps);
      std::vector<EpiTrajectory> taus(n_eps);
      const uint64_t it_seed = Rng::stream(config.seed, 1000 + total).next_u64();
      threads::parallel_for(static_cast<int>(n_eps), [&](int i) {
        Rng rng = Rng::stream(it_seed, static_cast<uint64_t>(i));
        const int cell = static_cast<int>(rng.uniform_int(cells));
        env::EnvInstance env(grid.family, grid.cell_params(env::GridSide::train, cell));
        env.reset(rng.next_u64());
        taus[i] = run_probe(pi, env, cell, &rng, &trajs[i]);
      });
      double mean_reward = 0.0;
      for (size_t i = 0; i < n_eps; ++i) {
        const double rw = rewarder.reward(taus[i]);
        trajs[i].rew.back() = rw;
        mean_reward += rw;
      }
      mean_reward /= static_cast<double>(n_eps);

      RolloutBatch batch;
      batch.trajectories = std::move(trajs);
      batch.flatten_and_finalize(config.gamma, &value);
      const policy::UpdateStats st =
          updater.update(pi, batch, Rng::stream(it_seed, 1u << 20).next_u64());
      value.fit(batch.obs, batch.returns, config.value_fit_epochs,
                Rng::stream(it_seed, 1u << 21).next_u64());

      metrics.append("train_epi", total, "mean_epi_reward", mean_reward);
      metrics.append("train_epi", total, "mean_kl", st.mean_kl);
      metrics.append("train_epi", total, "entropy", policy_entropy(pi.stddev()));
    }
    ++round;
  }
  return EpiArtifacts{std::move(pi), std::move(models), std::move(metrics)};
}

// ---------------------------------------------------------------------------
// Task policy on top of probe embeddings

policy::GaussianPolicy train_task(const TrainConfig& config, const GaussianPolicy& pi_epi,
                                  const epimodel::Net& psi, const env::ParamGrid& grid,
                                  const dataset::NormStats& stats, Metrics* metrics) {
  config.validate();
  const EnvDims dims = env_dims(grid);
  const int cells = grid.num_cells();
  const int embed_dim = psi.spec.layer_sizes.back();

  GaussianPolicy pi(dims.obs + embed_dim, dims.act, Rng::stream(config.seed, 401).next_u64());
  policy::TrustRegionUpdater updater(pi, config.trust_region());
  policy::ValueNet value(dims.obs + embed_dim, Rng::stream(config.seed, 402).next_u64());

  const policy::EpisodeSampler sampler = [&](int /*index*/, uint64_t ep_seed) {
    Rng r = Rng::stream(ep_seed, 7);
    const int cell = static_cast<int>(r.uniform_int(cells));
    env::EnvParams params = grid.cell_params(env::GridSide::train, cell);
    env::EnvInstance probe_env(grid.family, params);
    probe_env.reset(Rng::stream(ep_seed, 0xA).next_u64());
    ProbeResult pr = probe_and_embed(pi_epi, psi, probe_env, stats, cell);
    std::unique_ptr<policy::Episode> ep;
    if (config.reset_after_probe) {
      ep = std::make_unique<EnvEpisode>(grid.family, std::move(params), ep_seed, cell);
    } else {
      ep = std::make_unique<ResumeEpisode>(std::move(probe_env), cell);
    }
    return std::make_unique<AugmentedEpisode>(std::move(ep), std::move(pr.embedding));
  };

  for (int it = 0; it < config.task_iterations; ++it) {
    const uint64_t it_seed = Rng::stream(config.seed, 5000 + it).next_u64();
    RolloutBatch batch =
        collect_rollouts(pi, sampler, config.task_batch_timesteps, it_seed, config.gamma, &value);
    const policy::UpdateStats st =
        updater.update(pi, batch, Rng::stream(it_seed, 1u << 20).next_u64());
    value.fit(batch.obs, batch.returns, config.value_fit_epochs,
              Rng::stream(it_seed, 1u << 21).next_u64());
    if (metrics != nullptr) {
      metrics->append("train_task", it, "mean_return", batch_mean_return(batch));
      metrics->append("train_task", it, "mean_kl", st.mean_kl);
      metrics->append("train_task", it, "entropy", policy_entropy(pi.stddev()));
    }
  }
  return pi;
}

// ---------------------------------------------------------------------------
// Baselines

namespace {

// Standard task-policy training loop over a conditioned episode sampler.
GaussianPolicy train_conditioned(const TrainConfig& config, const env::ParamGrid& grid,
                                 int extra_obs_dim, const policy::EpisodeSampler& sampler,
                                 const std::string& stage, Metrics* metrics) {
  const EnvDims dims = env_dims(grid);
  GaussianPolicy pi(dims.obs + extra_obs_dim, dims.act, Rng::stream(config.seed, 601).next_u64());
  policy::TrustRegionUpdater updater(pi, config.trust_region());
  policy::ValueNet value(dims.obs + extra_obs_dim, Rng::stream(config.seed, 602).next_u64());
  for (int it = 0; it < config.task_iterations; ++it) {
    const uint64_t it_seed = Rng::stream(config.seed, 7000 + it).next_u64();
    RolloutBatch batch =
        collect_rollouts(pi, sampler, config.task_batch_timesteps, it_seed, config.gamma, &value);
    const policy::UpdateStats st =
        updater.update(pi, batch, Rng::stream(it_seed, 1u << 20).next_u64());
    value.fit(batch.obs, batch.returns, config.value_fit_epochs,
              Rng::stream(it_seed, 1u << 21).next_u64());
    if (metrics != nullptr) {
      metrics->append(stage, it, "mean_return", batch_mean_return(batch));
      metrics->append(stage, it, "mean_kl", st.mean_kl);
      metrics->append(stage, it, "entropy", policy_entropy(pi.stddev()));
    }
  }
  return pi;
}

std::unique_ptr<policy::Episode> make_plain_episode(const env::ParamGrid& grid, uint64_t ep_seed) {
  Rng r = Rng::stream(ep_seed, 7);
  const int cell = static_cast<int>(r.uniform_int(grid.num_cells()));
  return std::make_unique<EnvEpisode>(grid.family, grid.cell_params(env::GridSide::train, cell),
                                      ep_seed, cell);
}

// 10 uniform random actions in [-1, 1]^act from a derived stream; returns
// the raw flattened interaction.
Vec random_probe_context(const env::ParamGrid& grid, const env::EnvParams& params,
                         uint64_t ep_seed) {
  env::EnvInstance env(grid.family, params);
  env.reset(Rng::stream(ep_seed, 0xA).next_u64());
  Rng rng = Rng::stream(ep_seed, 0xB);
  EpiTrajectory tau;
  Vec obs = env.observe();
  for (int t = 0; t < kProbeSteps; ++t) {
    Vec a(env.act_dim());
    for (double& v : a) v = rng.uniform(-1.0, 1.0);
    env::StepResult res = env.step(a);
    tau.obs.push_back(std::move(obs));
    tau.act.push_back(std::move(a));
    obs = std::move(res.obs);
    if (res.done) break;
  }
  const Vec zo(env.obs_dim(), 0.0), za(env.act_dim(), 0.0);
  while (static_cast<int>(tau.obs.size()) < kProbeSteps) {
    tau.obs.push_back(zo);
    tau.act.push_back(za);
  }
  return raw_probe_context(tau);
}

std::shared_ptr<policy::RecurrentPolicy> train_recurrent(const TrainConfig& config,
                                                         const env::ParamGrid& grid,
                                                         Metrics* metrics) {
  const EnvDims dims = env_dims(grid);
  auto pi = std::make_shared<policy::RecurrentPolicy>(dims.obs, dims.act,
                                                      Rng::stream(config.seed, 801).next_u64());
  policy::RecurrentTrustRegionUpdater updater(*pi, config.trust_region());
  policy::ValueNet value(dims.obs, Rng::stream(config.seed, 802).next_u64());
  const policy::EpisodeSampler sampler = [&grid](int, uint64_t ep_seed) {
    return make_plain_episode(grid, ep_seed);
  };
  for (int it = 0; it < config.task_iterations; ++it) {
    const uint64_t it_seed = Rng::stream(config.seed, 9000 + it).next_u64();
    RolloutBatch batch =
        collect_rollouts(*pi, sampler, config.task_batch_timesteps, it_seed, config.gamma, &value);
    const policy::UpdateStats st =
        updater.update(*pi, batch, Rng::stream(it_seed, 1u << 20).next_u64());
    value.fit(batch.obs, batch.returns, config.value_fit_epochs,
              Rng::stream(it_seed, 1u << 21).next_u64());
    if (metrics != nullptr) {
      metrics->append("train_recurrent", it, "mean_return", batch_mean_return(batch));
      metrics->append("train_recurrent", it, "mean_kl", st.mean_kl);
      metrics->append("train_recurrent", it, "entropy", policy_entropy(pi->stddev()));
    }
  }
  return pi;
}

BaselinePolicy train_direct_reward(const TrainConfig& config, const env::ParamGrid& grid,
                                   Metrics* metrics) {
  const EnvDims dims = env_dims(grid);
  const int context_dim = kProbeSteps * (dims.obs + dims.act);
  const int cells = grid.num_cells();

  auto probe = std::make_shared<GaussianPolicy>(dims.obs, dims.act,
                                                Rng::stream(config.seed, 901).next_u64());
  auto task = std::make_shared<GaussianPolicy>(dims.obs + context_dim, dims.act,
                                               Rng::stream(config.seed, 902).next_u64());
  policy::TrustRegionUpdater probe_updater(*probe, config.trust_region());
  policy::TrustRegionUpdater task_updater(*task, config.trust_region());
  policy::ValueNet probe_value(dims.obs, Rng::stream(config.seed, 903).next_u64());
  policy::ValueNet task_value(dims.obs + context_dim, Rng::stream(config.seed, 904).next_u64());

  const size_t n_pairs = std::max<size_t>(
      8, (config.task_batch_timesteps + dims.episode_limit - 1) / dims.episode_limit);

  for (int it = 0; it < config.task_iterations; ++it) {
    const uint64_t it_seed = Rng::stream(config.seed, 11000 + it).next_u64();
    std::vector<Trajectory> probe_trajs(n_pairs);
    std::vector<Trajectory> task_trajs(n_pairs);
    threads::parallel_for(static_cast<int>(n_pairs), [&](int i) {
      const uint64_t ep_seed = Rng::stream(it_seed, static_cast<uint64_t>(i)).next_u64();
      Rng rng = Rng::stream(it_seed, static_cast<uint64_t>(i) * 2 + 1);
      Rng pick = Rng::stream(ep_seed, 7);
      const int cell = static_cast<int>(pick.uniform_int(cells));
      env::EnvParams params = grid.cell_params(env::GridSide::train, cell);
      // Probing phase (its own rollout, zero rewards until credited below).
      env::EnvInstance probe_env(grid.family, params);
      probe_env.reset(Rng::stream(ep_seed, 0xA).next_u64());
      EpiTrajectory tau = run_probe(*probe, probe_env, cell, &rng, &probe_trajs[i]);
      // Task phase on a fresh episode conditioned on the raw interaction.
      AugmentedEpisode ep(std::make_unique<EnvEpisode>(grid.family, std::move(params), ep_seed,
                                                       cell),
                          raw_probe_context(tau));
      Trajectory& tr = task_trajs[i];
      tr.env_id = cell;
      Vec cur = ep.reset();
      bool done = false;
      while (!done) {
        policy::ActResult ar = task->act(cur, rng);
        double reward = 0.0;
        Vec next = ep.step(ar.action, &reward, &done);
        tr.obs.push_back(std::move(cur));
        tr.act.push_back(ar.action);
        tr.rew.push_back(reward);
        tr.logp.push_back(ar.log_prob);
        tr.mean.push_back(std::move(ar.mean));
        tr.stddev.push_back(std::move(ar.stddev));
        cur = std::move(next);
      }
      // The probing policy is rewarded by the task episode's return.
      probe_trajs[i].rew.back() = trajectory_return(task_trajs[i]);
    });

    if (it % 2 == 0) {
      RolloutBatch batch;
      batch.trajectories = std::move(task_trajs);
      batch.flatten_and_finalize(config.gamma, &task_value);
      const policy::UpdateStats st =
          task_updater.update(*task, batch, Rng::stream(it_seed, 1u << 20).next_u64());
      task_value.fit(batch.obs, batch.returns, config.value_fit_epochs,
                     Rng::stream(it_seed, 1u << 21).next_u64());
      if (metrics != nullptr) {
        metrics->append("train_direct_reward", it, "mean_return", batch_mean_return(batch));
        metrics->append("train_direct_reward", it, "mean_kl", st.mean_kl);
        metrics->append("train_direct_reward", it, "entropy", policy_entropy(task->stddev()));
      }
    } else {
      RolloutBatch batch;
      batch.trajectories = std::move(probe_trajs);
      batch.flatten_and_finalize(config.gamma, &probe_value);
      probe_updater.update(*probe, batch, Rng::stream(it_seed, 1u << 20).next_u64());
      probe_value.fit(batch.obs, batch.returns, config.value_fit_epochs,
                      Rng::stream(it_seed, 1u << 21).next_u64());
    }
  }

  BaselinePolicy out;
  out.kind = BaselineKind::direct_reward;
  out.mlp = std::move(task);
  out.probe = std::move(probe);
  return out;
}

}  // namespace

BaselinePolicy train_baseline(BaselineKind kind, const TrainConfig& config,
                              const env::ParamGrid& grid, Metrics* metrics) {
  config.validate();
  const EnvDims dims = env_dims(grid);
  BaselinePolicy out;
  out.kind = kind;

  switch (kind) {
    case BaselineKind::simple: {
      out.mlp = std::make_shared<GaussianPolicy>(dataset::pretrain_seed_policy(
          grid.family, grid.cell_params(env::GridSide::train, grid.center_cell()),
          config.seed_policy_iterations, config.seed_policy_batch,
          Rng::stream(config.seed, 501).next_u64()));
      return out;
    }
    case BaselineKind::invariant: {
      const policy::EpisodeSampler sampler = [&grid](int, uint64_t ep_seed) {
        return make_plain_episode(grid, ep_seed);
      };
      out.mlp = std::make_shared<GaussianPolicy>(
          train_conditioned(config, grid, 0, sampler, "train_invariant", metrics));
      return out;
    }
    case BaselineKind::oracle: {
      const policy::EpisodeSampler sampler = [&grid](int, uint64_t ep_seed) {
        Rng r = Rng::stream(ep_seed, 7);
        const int cell = static_cast<int>(r.uniform_int(grid.num_cells()));
        env::EnvParams params = grid.cell_params(env::GridSide::train, cell);
        Vec rho = normalized_rho(grid, params);
        return std::make_unique<AugmentedEpisode>(
            std::make_unique<EnvEpisode>(grid.family, std::move(params), ep_seed, cell),
            std::move(rho));
      };
      out.mlp = std::make_shared<GaussianPolicy>(train_conditioned(
          config, grid, grid.num_params(), sampler, "train_oracle", metrics));
      return out;
    }
    case BaselineKind::random_interaction: {
      const policy::EpisodeSampler sampler = [&grid](int, uint64_t ep_seed) {
        Rng r = Rng::stream(ep_seed, 7);
        const int cell = static_cast<int>(r.uniform_int(grid.num_cells()));
        env::EnvParams params = grid.cell_params(env::GridSide::train, cell);
        Vec ctx = random_probe_context(grid, params, ep_seed);
        return std::make_unique<AugmentedEpisode>(
            std::make_unique<EnvEpisode>(grid.family, std::move(params), ep_seed, cell),
            std::move(ctx));
      };
      out.mlp = std::make_shared<GaussianPolicy>(
          train_conditioned(config, grid, kProbeSteps * (dims.obs + dims.act), sampler,
                            "train_random_interaction", metrics));
      return out;
    }
    case BaselineKind::history: {
      const policy::EpisodeSampler sampler = [&grid, dims](int, uint64_t ep_seed) {
        return std::make_unique<HistoryEpisode>(make_plain_episode(grid, ep_seed), dims.obs,
                                                dims.act, kHistoryLag);
      };
      out.mlp = std::make_shared<GaussianPolicy>(
          train_conditioned(config, grid, kHistoryLag * (dims.obs + dims.act), sampler,
                            "train_history", metrics));
      return out;
    }
    case BaselineKind::recurrent:
      out.rnn = train_recurrent(config, grid, metrics);
      return out;
    case BaselineKind::direct_reward:
      return train_direct_reward(config, grid, metrics);
    case BaselineKind::system_id:
      throw std::invalid_argument("train_baseline: system_id uses train_system_id");
  }
  throw std::invalid_argument("train_baseline: unknown kind");
}

// ---------------------------------------------------------------------------
// System identification (oracle policy + online parameter regression)

namespace {

// Rolling (s, a) window in HistoryEpisode order: most recent pair first,
// zero-filled until 10 pairs exist.
class HistoryWindow {
 public:
  HistoryWindow(int obs_dim, int act_dim)
      : obs_dim_(obs_dim), act_dim_(act_dim),
        buf_(static_cast<size_t>(kHistoryLag) * (obs_dim + act_dim), 0.0) {}

  void push(const Vec& obs, const Vec& act) {
    const int pair = obs_dim_ + act_dim_;
    buf_.insert(buf_.begin(), obs.begin(), obs.end());
    buf_.insert(buf_.begin() + obs_dim_, act.begin(), act.end());
    buf_.resize(static_cast<size_t>(kHistoryLag) * pair);
    ++count_;
  }

  bool full() const { return count_ >= kHistoryLag; }
  const Vec& data() const { return buf_; }

 private:
  int obs_dim_;
  int act_dim_;
  Vec buf_;
  int count_ = 0;
};

// A window identifies the parameters only if the dynamics were excited: for
// SlidePuck the puck must have been moving at some step of the window.
bool window_informative(env::Family family, const std::vector<Vec>& window_obs) {
  if (family != env::Family::SlidePuck) return true;
  for (const Vec& o : window_obs) {
    if (std::abs(o[6]) + std::abs(o[7]) > 1e-3) return true;
  }
  return false;
}

struct OsiSample {
  Vec window;
  Vec target;  // normalized rho
};

void collect_osi_rollouts(const GaussianPolicy& oracle, const epimodel::Net* osi,
                          const env::ParamGrid& grid, int n_episodes, uint64_t seed,
                          bool stochastic, std::vector<OsiSample>* out) {
  const int cells = grid.num_cells();
  std::vector<std::vector<OsiSample>> per_ep(n_episodes);
  threads::parallel_for(n_episodes, [&](int e) {
    Rng rng = Rng::stream(seed, static_cast<uint64_t>(e));
    const int cell = e % cells;
    env::EnvParams params = grid.cell_params(env::GridSide::train, cell);
    const Vec rho = normalized_rho(grid, params);
    env::EnvInstance env(grid.family, params);
    Vec obs = env.reset(rng.next_u64());
    HistoryWindow window(env.obs_dim(), env.act_dim());
    std::vector<Vec> recent_obs;
    bool done = false;
    while (!done) {
      Vec rho_hat = (osi != nullptr) ? (*osi)(window.data()) : rho;
      Vec in = obs;
      in.insert(in.end(), rho_hat.begin(), rho_hat.end());
      Vec action = stochastic ? oracle.act(in, rng).action : oracle.mean_action(in);
      env::StepResult res = env.step(action);
      window.push(obs, action);
      recent_obs.push_back(obs);
      if (recent_obs.size() > static_cast<size_t>(kHistoryLag)) {
        recent_obs.erase(recent_obs.begin());
      }
      if (window.full() && window_informative(grid.family, recent_obs)) {
        per_ep[e].push_back({window.data(), rho});
      }
      obs = std::move(res.obs);
      done = res.done;
    }
  });
  for (auto& v : per_ep) {
    out->insert(out->end(), std::make_move_iterator(v.begin()), std::make_move_iterator(v.end()));
  }
}

}  // namespace

SystemIdArtifacts train_system_id(const TrainConfig& config, const env::ParamGrid& grid,
                                  Metrics* metrics) {
  config.validate();
  SystemIdArtifacts art;
  art.oracle = train_baseline(BaselineKind::oracle, config, grid, metrics).mlp;

  const EnvDims dims = env_dims(grid);
  const int window_dim = kHistoryLag * (dims.obs + dims.act);
  const int n_params = grid.num_params();
  art.osi.spec = nn::NetworkSpec::mlp({window_dim, 128, 128, n_params});

  const int episodes_per_iter = 2 * grid.num_cells();
  std::vector<OsiSample> data;
  constexpr int kOsiIterations = 5;
  for (int iter = 0; iter < kOsiIterations; ++iter) {
    const uint64_t it_seed = Rng::stream(config.seed, 13000 + iter).next_u64();
    // Iteration 0 rolls out with the true parameters; later iterations feed
    // the oracle the current online estimate.
    collect_osi_rollouts(*art.oracle, iter == 0 ? nullptr : &art.osi, grid, episodes_per_iter,
                         it_seed, /*stochastic=*/true, &data);

    // Retrain the regressor from scratch on all data gathered so far.
    art.osi.params = nn::init_params(art.osi.spec, Rng::stream(it_seed, 0xF).next_u64());
    nn::AdamState adam = nn::AdamState::init(art.osi.spec, {.lr = 1e-3});
    Rng shuffle = Rng::stream(it_seed, 0xE);
    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    constexpr int kRegressionEpochs = 20;
    constexpr int kMinibatch = 64;
    for (int epoch = 0; epoch < kRegressionEpochs; ++epoch) {
      for (size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[shuffle.uniform_int(i)]);
      }
      for (size_t start = 0; start < order.size(); start += kMinibatch) {
        const size_t end = std::min(order.size(), start + kMinibatch);
        nn::Grads grads = nn::Grads::zeros_like(art.osi.spec);
        for (size_t j = start; j < end; ++j) {
          const OsiSample& s = data[order[j]];
          nn::ForwardCache cache;
          Vec pred = nn::forward(art.osi.spec, art.osi.params, s.window, &cache);
          Vec up(pred.size());
          const double inv = 2.0 / (static_cast<double>(end - start) * pred.size());
          for (size_t d = 0; d < pred.size(); ++d) up[d] = inv * (pred[d] - s.target[d]);
          nn::backward(art.osi.spec, art.osi.params, cache, up, grads);
        }
        nn::adam_step(art.osi.params, grads, adam);
      }
    }

    // Held-in evaluation: fresh online-estimate rollouts, deterministic oracle.
    std::vector<OsiSample> eval;
    collect_osi_rollouts(*art.oracle, &art.osi, grid, grid.num_cells(),
                         Rng::stream(it_seed, 0xD).next_u64(), /*stochastic=*/false, &eval);
    double mse = 0.0;
    double const_mse = 0.0;
    const std::pair<Vec, Vec> stats = grid.train_value_stats();
    for (const OsiSample& s : eval) {
      Vec pred = art.osi(s.window);
      for (size_t d = 0; d < pred.size(); ++d) {
        const double lo = grid.train_values[d].front();
        const double hi = grid.train_values[d].back();
        const double mean_norm = (stats.first[d] - lo) / (hi - lo);
        mse += (pred[d] - s.target[d]) * (pred[d] - s.target[d]);
        const_mse += (mean_norm - s.target[d]) * (mean_norm - s.target[d]);
      }
    }
    const double denom = std::max<size_t>(1, eval.size()) * static_cast<double>(n_params);
    mse /= denom;
    const_mse /= denom;
    art.iteration_mse.push_back(mse);
    art.final_mse = mse;
    art.constant_mean_mse = const_mse;
    if (metrics != nullptr) {
      metrics->append("train_system_id", iter, "osi_mse", mse);
      metrics->append("train_system_id", iter, "constant_mean_mse", const_mse);
    }
  }
  return art;
}

// ---------------------------------------------------------------------------
// Shared evaluation playback

namespace {

EpisodeOutcome play_on_episode(policy::Episode& ep, policy::ActorSession& session,
                               env::EnvInstance* raw_env) {
  EpisodeOutcome out;
  Vec obs = ep.reset();
  bool done = false;
  while (!done) {
    policy::ActResult ar = session.act_mean(obs);
    double reward = 0.0;
    obs = ep.step(ar.action, &reward, &done);
    out.episode_return += reward;
    ++out.steps;
  }
  if (raw_env != nullptr && raw_env->family() == env::Family::SlidePuck) {
    out.final_distance = raw_env->puck_goal_distance();
  }
  return out;
}

EpisodeOutcome play_system_id(const EvalBundle& bundle, const env::EnvParams& params,
                              uint64_t episode_seed) {
  const env::ParamGrid& grid = *bundle.grid;
  env::EnvInstance env(grid.family, params);
  Vec obs = env.reset(episode_seed);
  HistoryWindow window(env.obs_dim(), env.act_dim());
  EpisodeOutcome out;
  bool done = false;
  while (!done) {
    Vec rho_hat = bundle.sysid->osi(window.data());
    Vec in = obs;
    in.insert(in.end(), rho_hat.begin(), rho_hat.end());
    Vec action = bundle.sysid->oracle->mean_action(in);
    env::StepResult res = env.step(action);
    window.push(obs, action);
    out.episode_return += res.reward;
    ++out.steps;
    obs = std::move(res.obs);
    done = res.done;
  }
  if (grid.family == env::Family::SlidePuck) out.final_distance = env.puck_goal_distance();
  return out;
}

}  // namespace

EpisodeOutcome play_episode(const EvalBundle& bundle, const env::EnvParams& params,
                            uint64_t episode_seed) {
  if (bundle.grid == nullptr) throw std::invalid_argument("play_episode: bundle.grid not set");
  const env::ParamGrid& grid = *bundle.grid;

  if (bundle.kind == EvalBundle::Kind::system_id) {
    return play_system_id(bundle, params, episode_seed);
  }

  if (bundle.kind == EvalBundle::Kind::epi) {
    env::EnvInstance probe_env(grid.family, params);
    probe_env.reset(Rng::stream(episode_seed, 0xA).next_u64());
    ProbeResult pr = probe_and_embed(*bundle.pi_epi, *bundle.psi, probe_env, *bundle.stats, -1);
    std::unique_ptr<policy::Episode> inner;
    env::EnvInstance* raw = nullptr;
    if (bundle.reset_after_probe) {
      auto env_ep = std::make_unique<EnvEpisode>(grid.family, params, episode_seed, -1);
      raw = &env_ep->env();
      inner = std::move(env_ep);
    } else {
      auto resume = std::make_unique<ResumeEpisode>(std::move(probe_env), -1);
      raw = &resume->env();
      inner = std::move(resume);
    }
    AugmentedEpisode ep(std::move(inner), std::move(pr.embedding));
    auto session = bundle.pi_task->session();
    return play_on_episode(ep, *session, raw);
  }

  // Baseline protocols.
  const BaselinePolicy& bp = *bundle.baseline_policy;
  std::unique_ptr<policy::Episode> ep;
  auto env_ep = std::make_unique<EnvEpisode>(grid.family, params, episode_seed, -1);
  env::EnvInstance* raw = &env_ep->env();
  const int obs_dim = raw->obs_dim();
  const int act_dim = raw->act_dim();

  switch (bp.kind) {
    case BaselineKind::simple:
    case BaselineKind::invariant:
    case BaselineKind::recurrent:
      ep = std::move(env_ep);
      break;
    case BaselineKind::oracle:
      ep = std::make_unique<AugmentedEpisode>(std::move(env_ep), normalized_rho(grid, params));
      break;
    case BaselineKind::random_interaction:
      ep = std::make_unique<AugmentedEpisode>(std::move(env_ep),
                                              random_probe_context(grid, params, episode_seed));
      break;
    case BaselineKind::history:
      ep = std::make_unique<HistoryEpisode>(std::move(env_ep), obs_dim, act_dim, kHistoryLag);
      break;
    case BaselineKind::direct_reward: {
      env::EnvInstance probe_env(grid.family, params);
      probe_env.reset(Rng::stream(episode_seed, 0xA).next_u64());
      EpiTrajectory tau = run_probe(*bp.probe, probe_env, -1, nullptr, nullptr);
      ep = std::make_unique<AugmentedEpisode>(std::move(env_ep), raw_probe_context(tau));
      break;
    }
    case BaselineKind::system_id:
      throw std::invalid_argument("play_episode: system_id bundle must use Kind::system_id");
  }

  std::unique_ptr<policy::ActorSession> session =
      bp.kind == BaselineKind::recurrent ? bp.rnn->session() : bp.mlp->session();
  return play_on_episode(*ep, *session, raw);
}

}  // namespace epi::training

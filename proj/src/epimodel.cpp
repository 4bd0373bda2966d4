#include "epi/epimodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "epi/rng.hpp"

namespace epi::epimodel {

namespace {

Vec prediction_target(const dataset::Transition& t, const dataset::NormStats& stats,
                      const EpiConfig& cfg) {
  if (cfg.predict_delta) {
    Vec delta(t.s.size());
    for (size_t i = 0; i < delta.size(); ++i) delta[i] = t.s_next[i] - t.s[i];
    return stats.norm_delta(delta);
  }
  return stats.norm_sn(t.s_next);
}

Vec base_input(const dataset::Transition& t, const dataset::NormStats& stats) {
  Vec x = stats.norm_s(t.s);
  const Vec a = stats.norm_a(t.a);
  x.insert(x.end(), a.begin(), a.end());
  return x;
}

struct GroupStats {
  Vec mean;
  Vec var;  // biased, diagonal
  size_t n = 0;
};

GroupStats group_stats(const std::vector<Vec>& group) {
  GroupStats g;
  g.n = group.size();
  const size_t d = group.front().size();
  g.mean.assign(d, 0.0);
  for (const Vec& e : group) {
    for (size_t k = 0; k < d; ++k) g.mean[k] += e[k];
  }
  for (double& m : g.mean) m /= static_cast<double>(g.n);
  g.var.assign(d, 0.0);
  if (g.n >= 2) {
    for (const Vec& e : group) {
      for (size_t k = 0; k < d; ++k) {
        const double c = e[k] - g.mean[k];
        g.var[k] += c * c;
      }
    }
    for (double& v : g.var) v /= static_cast<double>(g.n);
  }
  return g;
}

}  // namespace

Vec flatten_trajectory(const EpiTrajectory& tau, const dataset::NormStats& stats) {
  if (tau.true_len < 0 || tau.true_len > kProbeSteps ||
      tau.obs.size() != static_cast<size_t>(tau.true_len) ||
      tau.act.size() != static_cast<size_t>(tau.true_len)) {
    throw std::invalid_argument("flatten_trajectory: malformed trajectory");
  }
  const size_t obs_dim = stats.s_mean.size();
  const size_t act_dim = stats.a_mean.size();
  Vec out;
  out.reserve(kProbeSteps * (obs_dim + act_dim));
  for (int t = 0; t < kProbeSteps; ++t) {
    if (t < tau.true_len) {
      const Vec s = stats.norm_s(tau.obs[t]);
      const Vec a = stats.norm_a(tau.act[t]);
      out.insert(out.end(), s.begin(), s.end());
      out.insert(out.end(), a.begin(), a.end());
    } else {
      out.insert(out.end(), obs_dim + act_dim, 0.0);
    }
  }
  return out;
}

Vec embed(const Net& psi, const EpiTrajectory& tau, const dataset::NormStats& stats) {
  return psi(flatten_trajectory(tau, stats));
}

double pred_loss(const Net& f, const dataset::TransitionDataset& ds,
                 std::span<const size_t> indices, const EpiConfig& cfg) {
  if (indices.empty()) throw std::invalid_argument("pred_loss: empty index set");
  double acc = 0.0;
  for (size_t i : indices) {
    const auto& t = ds.transitions()[i];
    const Vec pred = f(base_input(t, ds.stats()));
    const Vec target = prediction_target(t, ds.stats(), cfg);
    for (size_t k = 0; k < pred.size(); ++k) {
      const double e = pred[k] - target[k];
      acc += e * e;
    }
  }
  return acc / static_cast<double>(indices.size());
}

double epi_pred_loss(const Net& f_epi, const Net& psi, const dataset::TransitionDataset& ds,
                     std::span<const size_t> indices,
                     const std::function<const EpiTrajectory&(int, size_t)>& tau_for,
                     const EpiConfig& cfg) {
  if (indices.empty()) throw std::invalid_argument("epi_pred_loss: empty index set");
  double acc = 0.0;
  size_t pos = 0;
  for (size_t i : indices) {
    const auto& t = ds.transitions()[i];
    const EpiTrajectory& tau = tau_for(t.env_id, pos++);
    if (tau.env_id != t.env_id) {
      throw std::invalid_argument("epi_pred_loss: trajectory paired with wrong environment");
    }
    Vec x = base_input(t, ds.stats());
    const Vec e = embed(psi, tau, ds.stats());
    x.insert(x.end(), e.begin(), e.end());
    const Vec pred = f_epi(x);
    const Vec target = prediction_target(t, ds.stats(), cfg);
    for (size_t k = 0; k < pred.size(); ++k) {
      const double err = pred[k] - target[k];
      acc += err * err;
    }
  }
  return acc / static_cast<double>(indices.size());
}

double separation_loss(const std::vector<std::vector<Vec>>& embeddings_by_env, double d_min,
                       double sigma_max, double lambda_sigma) {
  std::vector<GroupStats> groups;
  for (const auto& g : embeddings_by_env) {
    if (!g.empty()) groups.push_back(group_stats(g));
  }
  if (groups.size() < 2) {
    throw std::invalid_argument("separation_loss: need at least two environment groups");
  }
  double loss = 0.0;
  for (size_t i = 0; i < groups.size(); ++i) {
    for (size_t j = i + 1; j < groups.size(); ++j) {
      double d2 = 0.0;
      for (size_t k = 0; k < groups[i].mean.size(); ++k) {
        const double c = groups[i].mean[k] - groups[j].mean[k];
        d2 += c * c;
      }
      const double h = std::max(0.0, d_min - std::sqrt(d2));
      loss += h * h;
    }
    if (groups[i].n >= 2) {
      for (double v : groups[i].var) {
        const double h = std::max(0.0, v - sigma_max);
        loss += lambda_sigma * h * h;
      }
    }
  }
  return loss;
}

namespace {

// Gradient of separation_loss w.r.t. every embedding, same grouping.
std::vector<std::vector<Vec>> separation_grad(const std::vector<std::vector<Vec>>& groups_in,
                                              double d_min, double sigma_max,
                                              double lambda_sigma) {
  std::vector<int> live;  // indices of non-empty groups
  std::vector<GroupStats> stats;
  for (size_t g = 0; g < groups_in.size(); ++g) {
    if (!groups_in[g].empty()) {
      live.push_back(static_cast<int>(g));
      stats.push_back(group_stats(groups_in[g]));
    }
  }
  std::vector<std::vector<Vec>> grad(groups_in.size());
  for (size_t g = 0; g < groups_in.size(); ++g) {
    grad[g].assign(groups_in[g].size(), Vec(groups_in[g].empty() ? 0 : groups_in[g][0].size(), 0.0));
  }
  const size_t d = stats.front().mean.size();
  std::vector<Vec> dmean(stats.size(), Vec(d, 0.0));
  for (size_t i = 0; i < stats.size(); ++i) {
    for (size_t j = i + 1; j < stats.size(); ++j) {
      Vec diff(d);
      double d2 = 0.0;
      for (size_t k = 0; k < d; ++k) {
        diff[k] = stats[i].mean[k] - stats[j].mean[k];
        d2 += diff[k] * diff[k];
      }
      const double dist = std::sqrt(d2);
      const double h = d_min - dist;
      if (h > 0.0 && dist > 1e-12) {
        const double c = -2.0 * h / dist;
        for (size_t k = 0; k < d; ++k) {
          dmean[i][k] += c * diff[k];
          dmean[j][k] -= c * diff[k];
        }
      }
    }
  }
  for (size_t gi = 0; gi < stats.size(); ++gi) {
    const auto& group = groups_in[live[gi]];
    const double inv_n = 1.0 / static_cast<double>(stats[gi].n);
    for (size_t m = 0; m < group.size(); ++m) {
      for (size_t k = 0; k < d; ++k) {
        grad[live[gi]][m][k] += dmean[gi][k] * inv_n;
      }
    }
    if (stats[gi].n >= 2) {
      for (size_t k = 0; k < d; ++k) {
        const double h = stats[gi].var[k] - sigma_max;
        if (h > 0.0) {
          const double c = lambda_sigma * 2.0 * h;
          for (size_t m = 0; m < group.size(); ++m) {
            grad[live[gi]][m][k] += c * 2.0 * (group[m][k] - stats[gi].mean[k]) * inv_n;
          }
        }
      }
    }
  }
  return grad;
}

struct NetTrainer {
  Net net;
  nn::AdamState adam;

  NetTrainer(std::vector<int> sizes, uint64_t seed, double lr) {
    net.spec = nn::NetworkSpec::mlp(std::move(sizes));
    net.params = nn::init_params(net.spec, seed);
    adam = nn::AdamState::init(net.spec, {.lr = lr});
  }
};

}  // namespace

TrainedModels train_pred_models(const dataset::TransitionDataset& ds,
                                const std::vector<std::vector<EpiTrajectory>>& probe_pool,
                                int epochs, bool with_separation, const EpiConfig& cfg,
                                uint64_t seed) {
  if (!ds.frozen()) throw std::invalid_argument("train_pred_models: dataset must be frozen");
  const int obs_dim = static_cast<int>(ds.stats().s_mean.size());
  const int act_dim = static_cast<int>(ds.stats().a_mean.size());
  const int tau_dim = kProbeSteps * (obs_dim + act_dim);

  auto sizes_with = [&](int in, const std::vector<int>& hidden, int out) {
    std::vector<int> s{in};
    s.insert(s.end(), hidden.begin(), hidden.end());
    s.push_back(out);
    return s;
  };
  NetTrainer f(sizes_with(obs_dim + act_dim, cfg.pred_hidden, obs_dim),
               Rng::stream(seed, 1).next_u64(), cfg.adam_lr);
  NetTrainer f_epi(sizes_with(obs_dim + act_dim + cfg.embed_dim, cfg.pred_hidden, obs_dim),
                   Rng::stream(seed, 2).next_u64(), cfg.adam_lr);
  NetTrainer psi(sizes_with(tau_dim, cfg.embed_hidden, cfg.embed_dim),
                 Rng::stream(seed, 3).next_u64(), cfg.adam_lr);

  const auto& train_idx = ds.train_indices();
  const size_t n = train_idx.size();
  std::vector<Vec> inputs(n), targets(n);
  std::vector<int> env_of(n);
  for (size_t i = 0; i < n; ++i) {
    const auto& t = ds.transitions()[train_idx[i]];
    inputs[i] = base_input(t, ds.stats());
    targets[i] = prediction_target(t, ds.stats(), cfg);
    env_of[i] = t.env_id;
  }

  // Probe trajectories are fixed for the duration of this call; flatten once.
  std::vector<std::vector<Vec>> pool_flat(probe_pool.size());
  for (size_t e = 0; e < probe_pool.size(); ++e) {
    for (const auto& tau : probe_pool[e]) {
      pool_flat[e].push_back(flatten_trajectory(tau, ds.stats()));
    }
  }
  for (int e = 0; e < ds.num_envs(); ++e) {
    if (e >= static_cast<int>(pool_flat.size()) || pool_flat[e].empty()) {
      throw std::invalid_argument("train_pred_models: missing probe trajectories for env " +
                                  std::to_string(e));
    }
  }

  Rng rng = Rng::stream(seed, 4);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const size_t mb = static_cast<size_t>(cfg.minibatch);

  TrainedModels out;
  double sep_loss_last = 0.0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);
    for (size_t start = 0; start < n; start += mb) {
      const size_t end = std::min(n, start + mb);
      const double inv = 1.0 / static_cast<double>(end - start);

      // Plain model f.
      nn::Grads gf = nn::Grads::zeros_like(f.net.spec);
      for (size_t i = start; i < end; ++i) {
        const size_t idx = order[i];
        nn::ForwardCache cache;
        const Vec pred = nn::forward(f.net.spec, f.net.params, inputs[idx], &cache);
        Vec up(pred.size());
        for (size_t k = 0; k < pred.size(); ++k) up[k] = 2.0 * (pred[k] - targets[idx][k]) * inv;
        nn::backward(f.net.spec, f.net.params, cache, up, gf);
      }
      nn::adam_step(f.net.params, gf, f.adam);

      // Joint f_epi + psi. The probes embedded for the prediction step are
      // reused for the separation term below, so the separation gradient is
      // batch-sized and never dominates the prediction-driven signal.
      nn::Grads gfe = nn::Grads::zeros_like(f_epi.net.spec);
      nn::Grads gpsi = nn::Grads::zeros_like(psi.net.spec);
      std::vector<std::vector<Vec>> embeds(pool_flat.size());
      std::vector<std::vector<nn::ForwardCache>> caches(pool_flat.size());
      for (size_t i = start; i < end; ++i) {
        const size_t idx = order[i];
        const int env = env_of[idx];
        const auto& flats = pool_flat[env];
        const Vec& tau_flat = flats[rng.uniform_int(flats.size())];
        nn::ForwardCache psi_cache;
        const Vec e = nn::forward(psi.net.spec, psi.net.params, tau_flat, &psi_cache);
        Vec x = inputs[idx];
        x.insert(x.end(), e.begin(), e.end());
        nn::ForwardCache cache;
        const Vec pred = nn::forward(f_epi.net.spec, f_epi.net.params, x, &cache);
        Vec up(pred.size());
        for (size_t k = 0; k < pred.size(); ++k) up[k] = 2.0 * (pred[k] - targets[idx][k]) * inv;
        const Vec xgrad = nn::backward(f_epi.net.spec, f_epi.net.params, cache, up, gfe);
        const std::span<const double> egrad(xgrad.data() + inputs[idx].size(), e.size());
        nn::backward(psi.net.spec, psi.net.params, psi_cache, egrad, gpsi);
        embeds[env].push_back(e);
        caches[env].push_back(std::move(psi_cache));
      }

      if (with_separation) {
        const auto sgrad = separation_grad(embeds, cfg.d_min, cfg.sigma_max, cfg.lambda_sigma);
        for (size_t env = 0; env < embeds.size(); ++env) {
          for (size_t m = 0; m < embeds[env].size(); ++m) {
            Vec up(sgrad[env][m]);
            for (double& u : up) u *= cfg.separation_weight;
            nn::backward(psi.net.spec, psi.net.params, caches[env][m], up, gpsi);
          }
        }
        sep_loss_last = separation_loss(embeds, cfg.d_min, cfg.sigma_max, cfg.lambda_sigma);
      }
      nn::adam_step(f_epi.net.params, gfe, f_epi.adam);
      nn::adam_step(psi.net.params, gpsi, psi.adam);
    }

    const double check = pred_loss(f.net, ds, std::span<const size_t>(train_idx.data(),
                                                                      std::min<size_t>(n, 256)),
                                   cfg);
    if (!std::isfinite(check)) {
      throw std::runtime_error("train_pred_models: training diverged (non-finite loss) at epoch " +
                               std::to_string(epoch));
    }
  }

  out.f = std::move(f.net);
  out.f_epi = std::move(f_epi.net);
  out.psi = std::move(psi.net);
  out.final_separation_loss = sep_loss_last;

  Rng eval_rng = Rng::stream(seed, 5);
  auto tau_pick = [&](int env, size_t) -> const EpiTrajectory& {
    const auto& taus = probe_pool[env];
    return taus[eval_rng.uniform_int(taus.size())];
  };
  out.train_loss_f = pred_loss(out.f, ds, train_idx, cfg);
  out.val_loss_f = pred_loss(out.f, ds, ds.val_indices(), cfg);
  out.train_loss_epi = epi_pred_loss(out.f_epi, out.psi, ds, train_idx, tau_pick, cfg);
  out.val_loss_epi = epi_pred_loss(out.f_epi, out.psi, ds, ds.val_indices(), tau_pick, cfg);
  return out;
}

EpiRewarder::EpiRewarder(const TrainedModels& models, const dataset::TransitionDataset& ds,
                         const EpiConfig& cfg)
    : models_(models), ds_(ds), cfg_(cfg) {
  val_slices_.resize(ds.num_envs());
  l_pred_.assign(ds.num_envs(), 0.0);
  for (int e = 0; e < ds.num_envs(); ++e) {
    std::vector<size_t> slice = ds.val_indices_for_env(e);
    if (slice.empty()) continue;
    // Deterministic subsample so every reward evaluation for an env sees
    // the same transitions.
    Rng rng = Rng::stream(0x5eed5eedULL, static_cast<uint64_t>(e));
    for (size_t i = slice.size(); i > 1; --i) std::swap(slice[i - 1], slice[rng.uniform_int(i)]);
    if (cfg_.val_subsample > 0 && slice.size() > static_cast<size_t>(cfg_.val_subsample)) {
      slice.resize(cfg_.val_subsample);
    }
    val_slices_[e] = std::move(slice);
    l_pred_[e] = pred_loss(models_.f, ds_, val_slices_[e], cfg_);
  }
}

double EpiRewarder::baseline_loss(int env_id) const {
  if (env_id < 0 || env_id >= static_cast<int>(val_slices_.size()) ||
      val_slices_[env_id].empty()) {
    throw std::invalid_argument("EpiRewarder: empty validation slice for env " +
                                std::to_string(env_id));
  }
  return l_pred_[env_id];
}

double EpiRewarder::reward(const EpiTrajectory& tau) const {
  const double base = baseline_loss(tau.env_id);
  const auto& slice = val_slices_[tau.env_id];
  const Vec e = embed(models_.psi, tau, ds_.stats());
  double acc = 0.0;
  for (size_t i : slice) {
    const auto& t = ds_.transitions()[i];
    Vec x = base_input(t, ds_.stats());
    x.insert(x.end(), e.begin(), e.end());
    const Vec pred = models_.f_epi(x);
    const Vec target = prediction_target(t, ds_.stats(), cfg_);
    for (size_t k = 0; k < pred.size(); ++k) {
      const double err = pred[k] - target[k];
      acc += err * err;
    }
  }
  const double l_epi = acc / static_cast<double>(slice.size());
  const double r = base - l_epi;
  return cfg_.reward_flip_sign ? -r : r;
}

double epi_reward(const EpiTrajectory& tau, const TrainedModels& models,
                  const dataset::TransitionDataset& ds, const EpiConfig& cfg) {
  return EpiRewarder(models, ds, cfg).reward(tau);
}

}  // namespace epi::epimodel

#include "epi/policy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "epi/threads.hpp"

namespace epi::policy {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vec floored_std(const std::vector<float>& log_std) {
  Vec s(log_std.size());
  for (size_t i = 0; i < s.size(); ++i) {
    s[i] = std::max(std::exp(static_cast<double>(log_std[i])), kStdFloor);
  }
  return s;
}
}  // namespace

double gaussian_log_prob(std::span<const double> action, std::span<const double> mean,
                         std::span<const double> stddev) {
  double lp = 0.0;
  for (size_t k = 0; k < action.size(); ++k) {
    const double z = (action[k] - mean[k]) / stddev[k];
    lp += -0.5 * z * z - std::log(stddev[k]);
  }
  return lp - 0.5 * kLog2Pi * static_cast<double>(action.size());
}

// ---------------------------------------------------------------------------
// GaussianPolicy

GaussianPolicy::GaussianPolicy(int obs_dim, int act_dim, uint64_t seed,
                               std::vector<int> hidden, double init_log_std)
    : obs_dim_(obs_dim), act_dim_(act_dim) {
  std::vector<int> sizes;
  sizes.push_back(obs_dim);
  for (int h : hidden) sizes.push_back(h);
  sizes.push_back(act_dim);
  spec = nn::NetworkSpec::mlp(std::move(sizes));
  params = nn::init_params(spec, seed);
  log_std.assign(act_dim, static_cast<float>(init_log_std));
}

Vec GaussianPolicy::mean_action(std::span<const double> obs) const {
  return nn::forward(spec, params, obs);
}

Vec GaussianPolicy::stddev() const { return floored_std(log_std); }

ActResult GaussianPolicy::act(std::span<const double> obs, Rng& rng) const {
  for (double o : obs) {
    if (!std::isfinite(o)) throw std::invalid_argument("act: non-finite observation");
  }
  ActResult res;
  res.mean = mean_action(obs);
  res.stddev = stddev();
  res.action.resize(act_dim_);
  for (int k = 0; k < act_dim_; ++k) {
    res.action[k] = res.mean[k] + res.stddev[k] * rng.normal();
  }
  res.log_prob = gaussian_log_prob(res.action, res.mean, res.stddev);
  return res;
}

namespace {
class GaussianSession : public ActorSession {
 public:
  explicit GaussianSession(const GaussianPolicy& p) : policy_(p) {}
  ActResult act(std::span<const double> obs, Rng& rng) override { return policy_.act(obs, rng); }
  ActResult act_mean(std::span<const double> obs) override {
    ActResult res;
    res.mean = policy_.mean_action(obs);
    res.stddev = policy_.stddev();
    res.action = res.mean;
    res.log_prob = gaussian_log_prob(res.action, res.mean, res.stddev);
    return res;
  }

 private:
  const GaussianPolicy& policy_;
};
}  // namespace

std::unique_ptr<ActorSession> GaussianPolicy::session() const {
  return std::make_unique<GaussianSession>(*this);
}

// ---------------------------------------------------------------------------
// RecurrentPolicy

RecurrentPolicy::RecurrentPolicy(int obs_dim, int act_dim, uint64_t seed, int hidden_dim,
                                 double init_log_std)
    : obs_dim_(obs_dim), act_dim_(act_dim), hidden_dim_(hidden_dim) {
  Rng rng(seed);
  const int in = obs_dim + hidden_dim;
  auto fill = [&rng](std::vector<float>& w, size_t n, double scale) {
    w.resize(n);
    for (auto& x : w) x = static_cast<float>(scale * rng.normal());
  };
  fill(wg, static_cast<size_t>(hidden_dim) * in, std::sqrt(1.0 / in));
  bg.assign(hidden_dim, 0.0f);
  fill(wc, static_cast<size_t>(hidden_dim) * in, std::sqrt(1.0 / in));
  bc.assign(hidden_dim, 0.0f);
  fill(wo, static_cast<size_t>(act_dim) * hidden_dim, std::sqrt(1.0 / hidden_dim));
  bo.assign(act_dim, 0.0f);
  log_std.assign(act_dim, static_cast<float>(init_log_std));
}

Vec RecurrentPolicy::stddev() const { return floored_std(log_std); }

std::vector<Vec> RecurrentPolicy::forward_episode(const std::vector<Vec>& obs,
                                                  Cache* cache) const {
  const int H = hidden_dim_;
  const int in = obs_dim_ + H;
  Vec h(H, 0.0);
  std::vector<Vec> means;
  means.reserve(obs.size());
  if (cache) {
    *cache = Cache{};
    cache->h.push_back(h);
  }
  Vec xh(in);
  for (const Vec& x : obs) {
    if (static_cast<int>(x.size()) != obs_dim_) {
      throw std::invalid_argument("forward_episode: observation dimension mismatch");
    }
    std::copy(x.begin(), x.end(), xh.begin());
    std::copy(h.begin(), h.end(), xh.begin() + obs_dim_);
    Vec z(H), cand(H);
    for (int o = 0; o < H; ++o) {
      double ag = bg[o], ac = bc[o];
      const float* wgr = wg.data() + static_cast<size_t>(o) * in;
      const float* wcr = wc.data() + static_cast<size_t>(o) * in;
      for (int i = 0; i < in; ++i) {
        ag += static_cast<double>(wgr[i]) * xh[i];
        ac += static_cast<double>(wcr[i]) * xh[i];
      }
      z[o] = sigmoid(ag);
      cand[o] = std::tanh(ac);
    }
    for (int o = 0; o < H; ++o) h[o] = (1.0 - z[o]) * h[o] + z[o] * cand[o];
    Vec mean(act_dim_);
    for (int k = 0; k < act_dim_; ++k) {
      double acc = bo[k];
      const float* wor = wo.data() + static_cast<size_t>(k) * H;
      for (int o = 0; o < H; ++o) acc += static_cast<double>(wor[o]) * h[o];
      mean[k] = acc;
    }
    if (cache) {
      cache->x.push_back(x);
      cache->gate.push_back(z);
      cache->cand.push_back(cand);
      cache->h.push_back(h);
    }
    means.push_back(std::move(mean));
  }
  return means;
}

RecurrentPolicy::Grads RecurrentPolicy::zero_grads() const {
  Grads g;
  g.wg.assign(wg.size(), 0.0);
  g.bg.assign(bg.size(), 0.0);
  g.wc.assign(wc.size(), 0.0);
  g.bc.assign(bc.size(), 0.0);
  g.wo.assign(wo.size(), 0.0);
  g.bo.assign(bo.size(), 0.0);
  return g;
}

void RecurrentPolicy::Grads::add_scaled(const Grads& o, double s) {
  auto add = [s](Vec& a, const Vec& b) {
    for (size_t i = 0; i < a.size(); ++i) a[i] += s * b[i];
  };
  add(wg, o.wg);
  add(bg, o.bg);
  add(wc, o.wc);
  add(bc, o.bc);
  add(wo, o.wo);
  add(bo, o.bo);
}

void RecurrentPolicy::backward_episode(const Cache& cache, const std::vector<Vec>& upstream,
                                       Grads& accum) const {
  const int H = hidden_dim_;
  const int in = obs_dim_ + H;
  const int T = static_cast<int>(cache.x.size());
  if (static_cast<int>(upstream.size()) != T) {
    throw std::invalid_argument("backward_episode: upstream length mismatch");
  }
  Vec dh(H, 0.0);
  Vec xh(in);
  for (int t = T - 1; t >= 0; --t) {
    // Output head.
    for (int k = 0; k < act_dim_; ++k) {
      const double d = upstream[t][k];
      accum.bo[k] += d;
      double* gw = accum.wo.data() + static_cast<size_t>(k) * H;
      const float* wor = wo.data() + static_cast<size_t>(k) * H;
      for (int o = 0; o < H; ++o) {
        gw[o] += d * cache.h[t + 1][o];
        dh[o] += d * static_cast<double>(wor[o]);
      }
    }
    std::copy(cache.x[t].begin(), cache.x[t].end(), xh.begin());
    std::copy(cache.h[t].begin(), cache.h[t].end(), xh.begin() + obs_dim_);
    Vec dh_prev(H, 0.0);
    for (int o = 0; o < H; ++o) {
      const double z = cache.gate[t][o];
      const double cand = cache.cand[t][o];
      const double dz = dh[o] * (cand - cache.h[t][o]);
      const double dcand = dh[o] * z;
      dh_prev[o] += dh[o] * (1.0 - z);
      const double dag = dz * z * (1.0 - z);
      const double dac = dcand * (1.0 - cand * cand);
      accum.bg[o] += dag;
      accum.bc[o] += dac;
      double* gwg = accum.wg.data() + static_cast<size_t>(o) * in;
      double* gwc = accum.wc.data() + static_cast<size_t>(o) * in;
      const float* wgr = wg.data() + static_cast<size_t>(o) * in;
      const float* wcr = wc.data() + static_cast<size_t>(o) * in;
      for (int i = 0; i < in; ++i) {
        gwg[i] += dag * xh[i];
        gwc[i] += dac * xh[i];
      }
      for (int i = obs_dim_; i < in; ++i) {
        dh_prev[i - obs_dim_] += dag * static_cast<double>(wgr[i]) +
                                 dac * static_cast<double>(wcr[i]);
      }
    }
    dh = std::move(dh_prev);
  }
}

namespace {
class RecurrentSession : public ActorSession {
 public:
  explicit RecurrentSession(const RecurrentPolicy& p)
      : policy_(p), h_(p.hidden_dim(), 0.0) {}

  ActResult act(std::span<const double> obs, Rng& rng) override {
    ActResult res = step_mean(obs);
    for (size_t k = 0; k < res.action.size(); ++k) {
      res.action[k] = res.mean[k] + res.stddev[k] * rng.normal();
    }
    res.log_prob = gaussian_log_prob(res.action, res.mean, res.stddev);
    return res;
  }

  ActResult act_mean(std::span<const double> obs) override { return step_mean(obs); }

 private:
  ActResult step_mean(std::span<const double> obs) {
    // Single-step advance of the recurrent state.
    // Reuses forward_episode on a one-step "episode" seeded with h_.
    const int H = policy_.hidden_dim();
    const int in = policy_.obs_dim() + H;
    Vec xh(in);
    std::copy(obs.begin(), obs.end(), xh.begin());
    std::copy(h_.begin(), h_.end(), xh.begin() + policy_.obs_dim());
    Vec h_next(H);
    for (int o = 0; o < H; ++o) {
      double ag = policy_.bg[o], ac = policy_.bc[o];
      const float* wgr = policy_.wg.data() + static_cast<size_t>(o) * in;
      const float* wcr = policy_.wc.data() + static_cast<size_t>(o) * in;
      for (int i = 0; i < in; ++i) {
        ag += static_cast<double>(wgr[i]) * xh[i];
        ac += static_cast<double>(wcr[i]) * xh[i];
      }
      const double z = sigmoid(ag);
      const double cand = std::tanh(ac);
      h_next[o] = (1.0 - z) * h_[o] + z * cand;
    }
    h_ = h_next;
    ActResult res;
    res.mean.resize(policy_.act_dim());
    for (int k = 0; k < policy_.act_dim(); ++k) {
      double acc = policy_.bo[k];
      const float* wor = policy_.wo.data() + static_cast<size_t>(k) * H;
      for (int o = 0; o < H; ++o) acc += static_cast<double>(wor[o]) * h_[o];
      res.mean[k] = acc;
    }
    res.stddev = policy_.stddev();
    res.action = res.mean;
    res.log_prob = gaussian_log_prob(res.action, res.mean, res.stddev);
    return res;
  }

  const RecurrentPolicy& policy_;
  Vec h_;
};
}  // namespace

std::unique_ptr<ActorSession> RecurrentPolicy::session() const {
  return std::make_unique<RecurrentSession>(*this);
}

// ---------------------------------------------------------------------------
// Rollouts

Vec discounted_returns(std::span<const double> rewards, double gamma) {
  if (rewards.empty()) throw std::invalid_argument("discounted_returns: empty rewards");
  if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("discounted_returns: gamma out of [0,1]");
  Vec ret(rewards.size());
  double acc = 0.0;
  for (int t = static_cast<int>(rewards.size()) - 1; t >= 0; --t) {
    acc = rewards[t] + gamma * acc;
    ret[t] = acc;
  }
  return ret;
}

void RolloutBatch::flatten_and_finalize(double gamma, const ValueNet* baseline) {
  obs.clear();
  act.clear();
  old_mean.clear();
  old_std.clear();
  old_logp.clear();
  returns.clear();
  advantages.clear();
  episode_spans.clear();
  total_steps = 0;
  for (const Trajectory& tr : trajectories) {
    episode_spans.emplace_back(total_steps, tr.size());
    const Vec ret = discounted_returns(tr.rew, gamma);
    for (size_t t = 0; t < tr.size(); ++t) {
      obs.push_back(tr.obs[t]);
      act.push_back(tr.act[t]);
      old_mean.push_back(tr.mean[t]);
      old_std.push_back(tr.stddev[t]);
      old_logp.push_back(tr.logp[t]);
      returns.push_back(ret[t]);
      const double v = baseline ? baseline->predict(tr.obs[t]) : 0.0;
      advantages.push_back(ret[t] - v);
    }
    total_steps += tr.size();
  }
  // Normalize advantages to mean 0, std 1 within the batch.
  if (!advantages.empty()) {
    double mean = std::accumulate(advantages.begin(), advantages.end(), 0.0) /
                  static_cast<double>(advantages.size());
    double var = 0.0;
    for (double a : advantages) var += (a - mean) * (a - mean);
    var /= static_cast<double>(advantages.size());
    const double inv = 1.0 / (std::sqrt(var) + 1e-8);
    for (double& a : advantages) a = (a - mean) * inv;
  }
}

RolloutBatch collect_rollouts(const Actor& actor, const EpisodeSampler& sampler,
                              size_t min_timesteps, uint64_t seed, double gamma,
                              const ValueNet* baseline, bool deterministic) {
  RolloutBatch batch;
  size_t steps = 0;
  int base = 0;
  const int chunk = std::max(1, threads::max_threads());
  while (steps < min_timesteps) {
    std::vector<Trajectory> chunk_trajs(chunk);
    threads::parallel_for(chunk, [&](int i) {
      const int index = base + i;
      const uint64_t ep_seed = Rng::stream(seed, static_cast<uint64_t>(index)).next_u64();
      Rng rng = Rng::stream(seed, static_cast<uint64_t>(index) * 2 + 1);
      auto episode = sampler(index, ep_seed);
      auto session = actor.session();
      Trajectory tr;
      tr.env_id = -1;
      Vec cur = episode->reset();
      tr.env_id = episode->env_id();
      bool done = false;
      while (!done) {
        ActResult ar = deterministic ? session->act_mean(cur) : session->act(cur, rng);
        double reward = 0.0;
        Vec next = episode->step(ar.action, &reward, &done);
        tr.obs.push_back(cur);
        tr.act.push_back(ar.action);
        tr.rew.push_back(reward);
        tr.logp.push_back(ar.log_prob);
        tr.mean.push_back(std::move(ar.mean));
        tr.stddev.push_back(std::move(ar.stddev));
        cur = std::move(next);
      }
      tr.terminal = true;
      chunk_trajs[i] = std::move(tr);
    });
    for (auto& tr : chunk_trajs) {
      if (steps >= min_timesteps) break;
      steps += tr.size();
      batch.trajectories.push_back(std::move(tr));
    }
    base += chunk;
  }
  batch.flatten_and_finalize(gamma, baseline);
  return batch;
}

// ---------------------------------------------------------------------------
// ValueNet

ValueNet::ValueNet(int obs_dim, uint64_t seed, std::vector<int> hidden) {
  std::vector<int> sizes;
  sizes.push_back(obs_dim);
  for (int h : hidden) sizes.push_back(h);
  sizes.push_back(1);
  spec = nn::NetworkSpec::mlp(std::move(sizes));
  params = nn::init_params(spec, seed);
  adam_ = nn::AdamState::init(spec);
}

double ValueNet::predict(std::span<const double> obs) const {
  return nn::forward(spec, params, obs)[0];
}

void ValueNet::fit(const std::vector<Vec>& obs, std::span<const double> targets, int epochs,
                   uint64_t seed, int minibatch) {
  if (obs.size() != targets.size()) throw std::invalid_argument("ValueNet::fit: size mismatch");
  const size_t n = obs.size();
  if (n == 0) return;
  Rng rng(seed);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int e = 0; e < epochs; ++e) {
    // Fisher-Yates with our deterministic rng.
    for (size_t i = n - 1; i > 0; --i) {
      std::swap(order[i], order[rng.uniform_int(i + 1)]);
    }
    for (size_t start = 0; start < n; start += minibatch) {
      const size_t end = std::min(n, start + minibatch);
      nn::Grads grads = nn::Grads::zeros_like(spec);
      const double inv = 1.0 / static_cast<double>(end - start);
      for (size_t i = start; i < end; ++i) {
        nn::ForwardCache cache;
        const Vec out = nn::forward(spec, params, obs[order[i]], &cache);
        const double up = 2.0 * (out[0] - targets[order[i]]) * inv;
        nn::backward(spec, params, cache, Vec{up}, grads);
      }
      nn::adam_step(params, grads, adam_);
    }
  }
}

// ---------------------------------------------------------------------------
// Trust-region updates

double mean_kl_gaussian(const std::vector<Vec>& old_mean, const std::vector<Vec>& old_std,
                        const std::vector<Vec>& new_mean, const std::vector<Vec>& new_std) {
  double kl = 0.0;
  for (size_t i = 0; i < old_mean.size(); ++i) {
    for (size_t k = 0; k < old_mean[i].size(); ++k) {
      const double so = old_std[i][k], sn = new_std[i][k];
      const double dm = old_mean[i][k] - new_mean[i][k];
      kl += std::log(sn / so) + (so * so + dm * dm) / (2.0 * sn * sn) - 0.5;
    }
  }
  return old_mean.empty() ? 0.0 : kl / static_cast<double>(old_mean.size());
}

TrustRegionUpdater::TrustRegionUpdater(const GaussianPolicy& policy, TrustRegionConfig cfg)
    : cfg_(cfg),
      adam_params_(nn::AdamState::init(policy.spec, {.lr = cfg.lr})),
      adam_log_std_(nn::AdamVecState::init(policy.log_std.size(), {.lr = cfg.lr})) {}

UpdateStats TrustRegionUpdater::update(GaussianPolicy& policy, const RolloutBatch& batch,
                                       uint64_t seed) {
  UpdateStats stats;
  if (batch.total_steps == 0) throw std::invalid_argument("trust_region_update: empty batch");
  const size_t n = batch.total_steps;
  const int act_dim = policy.act_dim();
  Rng rng(seed);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  auto compute_new = [&](std::vector<Vec>& means, std::vector<Vec>& stds) {
    means.resize(n);
    const Vec sd = policy.stddev();
    stds.assign(n, sd);
    for (size_t i = 0; i < n; ++i) means[i] = policy.mean_action(batch.obs[i]);
  };

  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    const nn::NetworkParams params_snapshot = policy.params;
    const std::vector<float> log_std_snapshot = policy.log_std;

    for (size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);
    bool aborted = false;
    for (size_t start = 0; start < n && !aborted; start += cfg_.minibatch) {
      const size_t end = std::min(n, start + static_cast<size_t>(cfg_.minibatch));
      nn::Grads grads = nn::Grads::zeros_like(policy.spec);
      Vec ls_grad(act_dim, 0.0);
      const double inv = 1.0 / static_cast<double>(end - start);
      const Vec sd = policy.stddev();
      for (size_t i = start; i < end; ++i) {
        const size_t idx = order[i];
        nn::ForwardCache cache;
        const Vec mean = nn::forward(policy.spec, policy.params, batch.obs[idx], &cache);
        const double logp = gaussian_log_prob(batch.act[idx], mean, sd);
        const double ratio = std::exp(logp - batch.old_logp[idx]);
        if (!std::isfinite(ratio)) {
          aborted = true;
          break;
        }
        const double adv = batch.advantages[idx];
        const double surr1 = ratio * adv;
        const double surr2 = std::clamp(ratio, 1.0 - cfg_.clip, 1.0 + cfg_.clip) * adv;
        // Gradient of -min(surr1, surr2) w.r.t. logp; zero when clipped.
        const double g = (surr1 <= surr2) ? -adv * ratio * inv : 0.0;
        if (g != 0.0) {
          Vec dmean(act_dim);
          for (int k = 0; k < act_dim; ++k) {
            const double z = (batch.act[idx][k] - mean[k]) / sd[k];
            dmean[k] = g * z / sd[k];
            ls_grad[k] += g * (z * z - 1.0);
          }
          nn::backward(policy.spec, policy.params, cache, dmean, grads);
        }
      }
      if (aborted) break;
      nn::adam_step(policy.params, grads, adam_params_);
      nn::adam_step_vec(policy.log_std, ls_grad, adam_log_std_);
    }
    if (aborted) {
      // Non-finite surrogate: roll back and report the input policy.
      policy.params = params_snapshot;
      policy.log_std = log_std_snapshot;
      stats.aborted = true;
      return stats;
    }
    std::vector<Vec> new_mean, new_std;
    compute_new(new_mean, new_std);
    const double kl = mean_kl_gaussian(batch.old_mean, batch.old_std, new_mean, new_std);
    if (kl > cfg_.kl_limit) {
      policy.params = params_snapshot;
      policy.log_std = log_std_snapshot;
      break;
    }
    stats.mean_kl = kl;
    stats.epochs_run = epoch + 1;
  }
  return stats;
}

RecurrentTrustRegionUpdater::RecurrentTrustRegionUpdater(const RecurrentPolicy& policy,
                                                         TrustRegionConfig cfg)
    : cfg_(cfg) {
  const nn::AdamConfig acfg{.lr = cfg.lr};
  adam_.push_back(nn::AdamVecState::init(policy.wg.size(), acfg));
  adam_.push_back(nn::AdamVecState::init(policy.bg.size(), acfg));
  adam_.push_back(nn::AdamVecState::init(policy.wc.size(), acfg));
  adam_.push_back(nn::AdamVecState::init(policy.bc.size(), acfg));
  adam_.push_back(nn::AdamVecState::init(policy.wo.size(), acfg));
  adam_.push_back(nn::AdamVecState::init(policy.bo.size(), acfg));
  adam_.push_back(nn::AdamVecState::init(policy.log_std.size(), acfg));
}

UpdateStats RecurrentTrustRegionUpdater::update(RecurrentPolicy& policy,
                                                const RolloutBatch& batch, uint64_t seed) {
  UpdateStats stats;
  if (batch.total_steps == 0) throw std::invalid_argument("trust_region_update: empty batch");
  const size_t n_ep = batch.trajectories.size();
  const int act_dim = policy.act_dim();
  Rng rng(seed);
  std::vector<size_t> order(n_ep);
  std::iota(order.begin(), order.end(), 0);
  constexpr int kEpisodesPerMinibatch = 8;

  auto mean_kl_now = [&]() {
    std::vector<Vec> new_mean, new_std;
    new_mean.reserve(batch.total_steps);
    const Vec sd = policy.stddev();
    for (const auto& tr : batch.trajectories) {
      auto means = policy.forward_episode(tr.obs);
      for (auto& m : means) new_mean.push_back(std::move(m));
    }
    new_std.assign(batch.total_steps, sd);
    return mean_kl_gaussian(batch.old_mean, batch.old_std, new_mean, new_std);
  };

  auto snapshot = [&]() {
    return std::array<std::vector<float>, 7>{policy.wg, policy.bg, policy.wc, policy.bc,
                                             policy.wo, policy.bo, policy.log_std};
  };
  auto restore = [&](const std::array<std::vector<float>, 7>& s) {
    policy.wg = s[0];
    policy.bg = s[1];
    policy.wc = s[2];
    policy.bc = s[3];
    policy.wo = s[4];
    policy.bo = s[5];
    policy.log_std = s[6];
  };

  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    const auto snap = snapshot();
    for (size_t i = n_ep - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);
    bool aborted = false;
    for (size_t start = 0; start < n_ep && !aborted; start += kEpisodesPerMinibatch) {
      const size_t end = std::min(n_ep, start + kEpisodesPerMinibatch);
      RecurrentPolicy::Grads grads = policy.zero_grads();
      Vec ls_grad(act_dim, 0.0);
      size_t mb_steps = 0;
      for (size_t e = start; e < end; ++e) mb_steps += batch.trajectories[order[e]].size();
      const double inv = 1.0 / static_cast<double>(mb_steps);
      const Vec sd = policy.stddev();
      for (size_t e = start; e < end && !aborted; ++e) {
        const Trajectory& tr = batch.trajectories[order[e]];
        const size_t span_start = batch.episode_spans[order[e]].first;
        RecurrentPolicy::Cache cache;
        const auto means = policy.forward_episode(tr.obs, &cache);
        std::vector<Vec> upstream(tr.size(), Vec(act_dim, 0.0));
        for (size_t t = 0; t < tr.size(); ++t) {
          const size_t idx = span_start + t;
          const double logp = gaussian_log_prob(tr.act[t], means[t], sd);
          const double ratio = std::exp(logp - batch.old_logp[idx]);
          if (!std::isfinite(ratio)) {
            aborted = true;
            break;
          }
          const double adv = batch.advantages[idx];
          const double surr1 = ratio * adv;
          const double surr2 = std::clamp(ratio, 1.0 - cfg_.clip, 1.0 + cfg_.clip) * adv;
          const double g = (surr1 <= surr2) ? -adv * ratio * inv : 0.0;
          if (g != 0.0) {
            for (int k = 0; k < act_dim; ++k) {
              const double z = (tr.act[t][k] - means[t][k]) / sd[k];
              upstream[t][k] = g * z / sd[k];
              ls_grad[k] += g * (z * z - 1.0);
            }
          }
        }
        if (!aborted) policy.backward_episode(cache, upstream, grads);
      }
      if (aborted) break;
      nn::adam_step_vec(policy.wg, grads.wg, adam_[0]);
      nn::adam_step_vec(policy.bg, grads.bg, adam_[1]);
      nn::adam_step_vec(policy.wc, grads.wc, adam_[2]);
      nn::adam_step_vec(policy.bc, grads.bc, adam_[3]);
      nn::adam_step_vec(policy.wo, grads.wo, adam_[4]);
      nn::adam_step_vec(policy.bo, grads.bo, adam_[5]);
      nn::adam_step_vec(policy.log_std, ls_grad, adam_[6]);
    }
    if (aborted) {
      restore(snap);
      stats.aborted = true;
      return stats;
    }
    const double kl = mean_kl_now();
    if (kl > cfg_.kl_limit) {
      restore(snap);
      break;
    }
    stats.mean_kl = kl;
    stats.epochs_run = epoch + 1;
  }
  return stats;
}

}  // namespace epi::policy

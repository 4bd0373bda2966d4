#include "epi/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "epi/episodes.hpp"

namespace epi::dataset {

namespace {
Vec normalize(std::span<const double> x, const Vec& mean, const Vec& std) {
  if (x.size() != mean.size()) throw std::invalid_argument("normalize: dimension mismatch");
  Vec out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean[i]) / std[i];
  return out;
}

void mean_std(const std::vector<const Vec*>& rows, Vec& mean, Vec& std) {
  const size_t n = rows.size();
  const size_t d = rows.front()->size();
  mean.assign(d, 0.0);
  std.assign(d, 0.0);
  for (const Vec* r : rows) {
    for (size_t i = 0; i < d; ++i) mean[i] += (*r)[i];
  }
  for (size_t i = 0; i < d; ++i) mean[i] /= static_cast<double>(n);
  for (const Vec* r : rows) {
    for (size_t i = 0; i < d; ++i) {
      const double e = (*r)[i] - mean[i];
      std[i] += e * e;
    }
  }
  for (size_t i = 0; i < d; ++i) {
    std[i] = std::sqrt(std[i] / static_cast<double>(n));
    if (std[i] < 1e-6) std[i] = 1.0;  // constant dimensions pass through centered
  }
}
}  // namespace

Vec NormStats::norm_s(std::span<const double> x) const { return normalize(x, s_mean, s_std); }
Vec NormStats::norm_a(std::span<const double> x) const { return normalize(x, a_mean, a_std); }
Vec NormStats::norm_sn(std::span<const double> x) const { return normalize(x, sn_mean, sn_std); }
Vec NormStats::norm_delta(std::span<const double> x) const { return normalize(x, dl_mean, dl_std); }

void TransitionDataset::add(Transition t) {
  if (frozen_) throw std::logic_error("TransitionDataset: frozen, mutation rejected");
  transitions_.push_back(std::move(t));
}

const NormStats& TransitionDataset::stats() const {
  if (!frozen_) throw std::logic_error("TransitionDataset: stats available after freeze only");
  return stats_;
}

std::vector<size_t> TransitionDataset::val_indices_for_env(int env_id) const {
  std::vector<size_t> out;
  for (size_t i : val_) {
    if (transitions_[i].env_id == env_id) out.push_back(i);
  }
  return out;
}

policy::GaussianPolicy pretrain_seed_policy(env::Family family, const env::EnvParams& fixed_params,
                                            int iterations, size_t batch_timesteps,
                                            uint64_t seed) {
  EnvEpisode probe(family, fixed_params, 0, 0);
  policy::GaussianPolicy pi(probe.env().obs_dim(), probe.env().act_dim(), seed);
  if (iterations <= 0) return pi;
  policy::ValueNet value(probe.env().obs_dim(), Rng::stream(seed, 1).next_u64());
  policy::TrustRegionUpdater updater(pi);
  for (int it = 0; it < iterations; ++it) {
    const uint64_t it_seed = Rng::stream(seed, 100 + static_cast<uint64_t>(it)).next_u64();
    auto sampler = [&](int, uint64_t ep_seed) -> std::unique_ptr<policy::Episode> {
      return std::make_unique<EnvEpisode>(family, fixed_params, ep_seed, 0);
    };
    policy::RolloutBatch batch =
        policy::collect_rollouts(pi, sampler, batch_timesteps, it_seed, 0.99, &value);
    updater.update(pi, batch, Rng::stream(it_seed, 7).next_u64());
    value.fit(batch.obs, batch.returns, 3, Rng::stream(it_seed, 8).next_u64());
  }
  return pi;
}

std::vector<Transition> collect_epsilon_greedy(const policy::GaussianPolicy& seed_policy,
                                               const env::ParamGrid& grid, size_t n_transitions,
                                               double epsilon, uint64_t seed) {
  if (epsilon < 0.0 || epsilon > 1.0) {
    throw std::invalid_argument("collect_epsilon_greedy: epsilon out of [0,1]");
  }
  std::vector<Transition> out;
  out.reserve(n_transitions);
  int episode = 0;
  while (out.size() < n_transitions) {
    // Round-robin over cells: every environment is covered as soon as the
    // budget allows one episode per cell.
    const int cell = episode % grid.num_cells();
    EnvEpisode ep(grid.family, grid.cell_params(env::GridSide::train, cell),
                  Rng::stream(seed, 1000 + episode).next_u64(), cell);
    Rng act_rng = Rng::stream(seed, 2000 + episode);
    Vec obs = ep.reset();
    bool done = false;
    const int act_dim = ep.env().act_dim();
    while (!done) {
      Vec action(act_dim);
      if (act_rng.uniform() < epsilon) {
        for (double& a : action) a = act_rng.uniform(-1.0, 1.0);
      } else {
        action = seed_policy.act(obs, act_rng).action;
      }
      double reward = 0.0;
      Vec next = ep.step(action, &reward, &done);
      out.push_back({obs, action, next, cell, -1});
      obs = std::move(next);
    }
    ++episode;
  }
  return out;
}

std::vector<Transition> collect_vine(const policy::GaussianPolicy& seed_policy,
                                     const env::ParamGrid& grid, int n_anchor_states,
                                     uint64_t seed) {
  if (n_anchor_states < 1) throw std::invalid_argument("collect_vine: need >= 1 anchor");
  // Anchor pool: (full state, action) pairs from seed-policy rollouts on
  // random training cells, excluding terminal states.
  struct Anchor {
    Vec state;
    Vec action;
  };
  // Anchors are drawn from states that exercise the randomized parameters:
  // for SlidePuck a resting, contact-free puck evolves identically under
  // every parameter setting, so those states carry no signal.
  const auto informative = [&](const Vec& state) {
    if (grid.family != env::Family::SlidePuck) return true;
    const double puck_speed = std::hypot(state[6], state[7]);
    const double paddle_dist = std::hypot(state[4] - state[0], state[5] - state[1]);
    return puck_speed > 1e-3 || paddle_dist < 0.25;
  };
  std::vector<Anchor> pool;
  std::vector<Anchor> fallback;
  Rng rng = Rng::stream(seed, 0);
  int episode = 0;
  const size_t pool_target = static_cast<size_t>(n_anchor_states) * 8;
  const int episode_cap = 64 * std::max(1, n_anchor_states);
  while (pool.size() < pool_target && episode < episode_cap) {
    const int cell = static_cast<int>(rng.uniform_int(grid.num_cells()));
    EnvEpisode ep(grid.family, grid.cell_params(env::GridSide::train, cell),
                  Rng::stream(seed, 3000 + episode).next_u64(), cell);
    Rng act_rng = Rng::stream(seed, 4000 + episode);
    Vec obs = ep.reset();
    bool done = false;
    while (!done) {
      const Vec state = ep.env().get_state();
      const Vec action = seed_policy.act(obs, act_rng).action;
      double reward = 0.0;
      Vec next = ep.step(action, &reward, &done);
      if (!done) {
        if (informative(state)) {
          pool.push_back({state, action});
        } else {
          fallback.push_back({state, action});
        }
      }
      obs = std::move(next);
    }
    ++episode;
  }
  if (pool.empty()) pool = std::move(fallback);

  // An anchor is only useful if parameter differences actually show up in
  // the next state: the next-obs spread across all cells must clear the
  // noise floor and the first-parameter extremes (cells 0 and 4: min/max
  // mass at equal damping) must separate clearly.
  const auto diverges = [&](const Anchor& anchor) {
    std::vector<Vec> next(grid.num_cells());
    for (int cell = 0; cell < grid.num_cells(); ++cell) {
      env::EnvInstance env(grid.family, grid.cell_params(env::GridSide::train, cell));
      env.set_state(anchor.state);
      next[cell] = env.step(anchor.action).obs;
    }
    const size_t dim = next[0].size();
    Vec mean(dim, 0.0);
    for (const Vec& v : next) {
      for (size_t i = 0; i < dim; ++i) mean[i] += v[i];
    }
    for (double& m : mean) m /= next.size();
    double var = 0.0;
    for (const Vec& v : next) {
      for (size_t i = 0; i < dim; ++i) var += (v[i] - mean[i]) * (v[i] - mean[i]);
    }
    var /= next.size();
    double d2 = 0.0;
    for (size_t i = 0; i < dim; ++i) {
      d2 += (next[0][i] - next[4][i]) * (next[0][i] - next[4][i]);
    }
    return var >= 1e-6 && std::sqrt(d2) >= 1e-3;
  };

  std::vector<Transition> out;
  out.reserve(static_cast<size_t>(n_anchor_states) * grid.num_cells());
  for (int g = 0; g < n_anchor_states; ++g) {
    size_t pick = rng.uniform_int(pool.size());
    for (int attempt = 0; attempt < 64 && !diverges(pool[pick]); ++attempt) {
      pick = rng.uniform_int(pool.size());
    }
    const Anchor& anchor = pool[pick];
    for (int cell = 0; cell < grid.num_cells(); ++cell) {
      env::EnvInstance env(grid.family, grid.cell_params(env::GridSide::train, cell));
      env.set_state(anchor.state);
      const Vec s_obs = env.observe();
      env::StepResult res = env.step(anchor.action);
      out.push_back({s_obs, anchor.action, res.obs, cell, g});
    }
  }
  return out;
}

TransitionDataset split_and_freeze(std::vector<Transition> transitions, double val_fraction,
                                   uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw std::invalid_argument("split_and_freeze: val_fraction must be in (0,1)");
  }
  if (transitions.empty()) throw std::invalid_argument("split_and_freeze: empty dataset");

  TransitionDataset ds;
  ds.transitions_ = std::move(transitions);
  const size_t n = ds.transitions_.size();

  // Group indices: vine groups move as blocks, everything else per env.
  std::vector<std::vector<size_t>> by_group;
  std::vector<std::vector<size_t>> by_env;  // non-vine, keyed by env_id
  int max_group = -1;
  int max_env = -1;
  for (const auto& t : ds.transitions_) {
    max_group = std::max(max_group, t.vine_group);
    max_env = std::max(max_env, t.env_id);
  }
  ds.num_envs_ = max_env + 1;
  by_group.resize(max_group + 1);
  by_env.resize(max_env + 1);
  for (size_t i = 0; i < n; ++i) {
    const auto& t = ds.transitions_[i];
    if (t.vine_group >= 0) {
      by_group[t.vine_group].push_back(i);
    } else {
      by_env[t.env_id].push_back(i);
    }
  }

  const size_t val_capacity = static_cast<size_t>(std::llround(val_fraction * n));
  const size_t train_capacity = n - val_capacity;
  for (const auto& g : by_group) {
    if (g.size() > val_capacity || g.size() > train_capacity) {
      throw std::invalid_argument("split_and_freeze: vine group exceeds split capacity");
    }
  }

  Rng rng(seed);
  auto shuffle = [&rng](auto& v) {
    for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.uniform_int(i)]);
  };

  // Vine groups: fill the validation side to its proportional share.
  std::vector<size_t> group_order;
  size_t vine_total = 0;
  for (size_t g = 0; g < by_group.size(); ++g) {
    if (!by_group[g].empty()) {
      group_order.push_back(g);
      vine_total += by_group[g].size();
    }
  }
  shuffle(group_order);
  const size_t vine_val_target = static_cast<size_t>(std::llround(val_fraction * vine_total));
  size_t vine_val = 0;
  for (size_t g : group_order) {
    auto& dst = (vine_val < vine_val_target) ? ds.val_ : ds.train_;
    if (vine_val < vine_val_target) vine_val += by_group[g].size();
    dst.insert(dst.end(), by_group[g].begin(), by_group[g].end());
  }

  // Non-vine: stratified per env.
  for (auto& idxs : by_env) {
    if (idxs.empty()) continue;
    shuffle(idxs);
    const size_t k = static_cast<size_t>(std::llround(val_fraction * idxs.size()));
    ds.val_.insert(ds.val_.end(), idxs.begin(), idxs.begin() + k);
    ds.train_.insert(ds.train_.end(), idxs.begin() + k, idxs.end());
  }
  std::sort(ds.train_.begin(), ds.train_.end());
  std::sort(ds.val_.begin(), ds.val_.end());
  if (ds.train_.empty() || ds.val_.empty()) {
    throw std::invalid_argument("split_and_freeze: degenerate split");
  }

  std::vector<const Vec*> s_rows, a_rows, sn_rows;
  s_rows.reserve(ds.train_.size());
  for (size_t i : ds.train_) {
    s_rows.push_back(&ds.transitions_[i].s);
    a_rows.push_back(&ds.transitions_[i].a);
    sn_rows.push_back(&ds.transitions_[i].s_next);
  }
  mean_std(s_rows, ds.stats_.s_mean, ds.stats_.s_std);
  mean_std(a_rows, ds.stats_.a_mean, ds.stats_.a_std);
  mean_std(sn_rows, ds.stats_.sn_mean, ds.stats_.sn_std);
  // Per-step deltas carry the parameter-dependent part of the dynamics;
  // normalizing them by their own spread keeps that signal visible to the
  // prediction models instead of being drowned by the absolute state scale.
  {
    std::vector<Vec> delta_rows(ds.train_.size());
    std::vector<const Vec*> dl_ptrs(ds.train_.size());
    for (size_t r = 0; r < ds.train_.size(); ++r) {
      const auto& t = ds.transitions_[ds.train_[r]];
      delta_rows[r].resize(t.s.size());
      for (size_t i = 0; i < t.s.size(); ++i) delta_rows[r][i] = t.s_next[i] - t.s[i];
      dl_ptrs[r] = &delta_rows[r];
    }
    mean_std(dl_ptrs, ds.stats_.dl_mean, ds.stats_.dl_std);
  }

  ds.frozen_ = true;
  return ds;
}

TransitionDataset restore(std::vector<Transition> transitions, std::vector<size_t> train,
                          std::vector<size_t> val) {
  if (transitions.empty()) throw std::invalid_argument("restore: empty dataset");
  if (train.empty() || val.empty()) throw std::invalid_argument("restore: degenerate split");
  if (train.size() + val.size() != transitions.size()) {
    throw std::invalid_argument("restore: split does not cover the dataset");
  }
  TransitionDataset ds;
  ds.transitions_ = std::move(transitions);
  ds.train_ = std::move(train);
  ds.val_ = std::move(val);
  int max_env = -1;
  for (const auto& t : ds.transitions_) max_env = std::max(max_env, t.env_id);
  ds.num_envs_ = max_env + 1;
  for (size_t i : ds.train_) {
    if (i >= ds.transitions_.size()) throw std::invalid_argument("restore: index out of range");
  }
  for (size_t i : ds.val_) {
    if (i >= ds.transitions_.size()) throw std::invalid_argument("restore: index out of range");
  }

  std::vector<const Vec*> s_rows, a_rows, sn_rows;
  s_rows.reserve(ds.train_.size());
  for (size_t i : ds.train_) {
    s_rows.push_back(&ds.transitions_[i].s);
    a_rows.push_back(&ds.transitions_[i].a);
    sn_rows.push_back(&ds.transitions_[i].s_next);
  }
  mean_std(s_rows, ds.stats_.s_mean, ds.stats_.s_std);
  mean_std(a_rows, ds.stats_.a_mean, ds.stats_.a_std);
  mean_std(sn_rows, ds.stats_.sn_mean, ds.stats_.sn_std);
  // Per-step deltas carry the parameter-dependent part of the dynamics;
  // normalizing them by their own spread keeps that signal visible to the
  // prediction models instead of being drowned by the absolute state scale.
  {
    std::vector<Vec> delta_rows(ds.train_.size());
    std::vector<const Vec*> dl_ptrs(ds.train_.size());
    for (size_t r = 0; r < ds.train_.size(); ++r) {
      const auto& t = ds.transitions_[ds.train_[r]];
      delta_rows[r].resize(t.s.size());
      for (size_t i = 0; i < t.s.size(); ++i) delta_rows[r][i] = t.s_next[i] - t.s[i];
      dl_ptrs[r] = &delta_rows[r];
    }
    mean_std(dl_ptrs, ds.stats_.dl_mean, ds.stats_.dl_std);
  }

  ds.frozen_ = true;
  return ds;
}

}  // namespace epi::dataset

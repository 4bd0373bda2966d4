#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>
#include <numbers>
#include <set>
#include <vector>

#include "epi/policy.hpp"
#include "epi/rng.hpp"

using namespace epi;
using policy::Vec;

namespace {

// One-step bandit: scalar observation 0, reward = 1 when the action is
// positive. Used as the policy-improvement sanity oracle.
class BanditEpisode : public policy::Episode {
 public:
  Vec reset() override {
    done_ = false;
    return {0.0};
  }
  Vec step(std::span<const double> action, double* reward, bool* done) override {
    *reward = action[0] > 0.0 ? 1.0 : 0.0;
    *done = true;
    done_ = true;
    return {0.0};
  }
  int env_id() const override { return 0; }

 private:
  bool done_ = false;
};

// Fixed-length chain episode with a recorded env id for coverage tests.
class ChainEpisode : public policy::Episode {
 public:
  ChainEpisode(int env_id, int length) : env_id_(env_id), length_(length) {}
  Vec reset() override {
    t_ = 0;
    return {0.0, 0.0};
  }
  Vec step(std::span<const double> action, double* reward, bool* done) override {
    ++t_;
    *reward = action[0];
    *done = t_ >= length_;
    return {static_cast<double>(t_), action[0]};
  }
  int env_id() const override { return env_id_; }

 private:
  int env_id_;
  int length_;
  int t_ = 0;
};

}  // namespace

TEST_CASE("act: floored std makes actions match the mean") {
  policy::GaussianPolicy pi(3, 2, /*seed=*/1);
  for (float& ls : pi.log_std) ls = -40.0f;  // exp() underflows; floor applies
  Rng rng(5);
  Vec obs = {0.2, -0.4, 0.9};
  auto res = pi.act(obs, rng);
  Vec mean = pi.mean_action(obs);
  for (int i = 0; i < 2; ++i) {
    CHECK(std::abs(res.action[i] - mean[i]) < 1e-4);
    CHECK(pi.stddev()[i] == doctest::Approx(policy::kStdFloor));
  }
}

TEST_CASE("act: log_prob at the mean matches the closed form") {
  policy::GaussianPolicy pi(2, 3, /*seed=*/4);
  Vec obs = {0.5, -0.5};
  Vec mean = pi.mean_action(obs);
  Vec std = pi.stddev();
  double lp = policy::gaussian_log_prob(mean, mean, std);
  double expected = -(3.0 / 2.0) * std::log(2.0 * std::numbers::pi);
  for (double s : std) expected -= std::log(s);
  CHECK(lp == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("act: same rng seed gives identical actions") {
  policy::GaussianPolicy pi(2, 2, /*seed=*/10);
  Vec obs = {1.0, -1.0};
  Rng r1(77), r2(77);
  auto a = pi.act(obs, r1);
  auto b = pi.act(obs, r2);
  CHECK(a.action == b.action);
  CHECK(a.log_prob == b.log_prob);
}

TEST_CASE("log_prob: exp matches an independent density evaluation") {
  policy::GaussianPolicy pi(2, 2, /*seed=*/8);
  Rng rng(123);
  Vec obs = {0.3, 0.7};
  for (int trial = 0; trial < 20; ++trial) {
    auto res = pi.act(obs, rng);
    double density = 1.0;
    for (int i = 0; i < 2; ++i) {
      const double z = (res.action[i] - res.mean[i]) / res.stddev[i];
      density *= std::exp(-0.5 * z * z) /
                 (res.stddev[i] * std::sqrt(2.0 * std::numbers::pi));
    }
    CHECK(std::abs(std::exp(res.log_prob) - density) < 1e-8);
  }
}

TEST_CASE("discounted_returns: closed-form examples") {
  Vec r1 = {1.0, 1.0, 1.0};
  auto out1 = policy::discounted_returns(r1, 1.0);
  CHECK(out1 == Vec{3.0, 2.0, 1.0});

  Vec r2 = {1.0, 0.0, 0.0};
  auto out2 = policy::discounted_returns(r2, 0.5);
  CHECK(out2 == Vec{1.0, 0.0, 0.0});

  CHECK_THROWS(policy::discounted_returns(Vec{}, 0.9));
}

TEST_CASE("discounted_returns: matches the brute-force double loop") {
  Rng rng(55);
  Vec rew(10);
  for (double& r : rew) r = rng.uniform(-2.0, 2.0);
  const double gamma = 0.9;
  auto fast = policy::discounted_returns(rew, gamma);
  for (size_t t = 0; t < rew.size(); ++t) {
    double acc = 0.0;
    double g = 1.0;
    for (size_t k = t; k < rew.size(); ++k) {
      acc += g * rew[k];
      g *= gamma;
    }
    CHECK(std::abs(fast[t] - acc) < 1e-10);
  }
}

TEST_CASE("collect_rollouts: always completes whole episodes") {
  policy::GaussianPolicy pi(2, 1, /*seed=*/0);
  auto sampler = [](int, uint64_t) -> std::unique_ptr<policy::Episode> {
    return std::make_unique<ChainEpisode>(0, 7);
  };
  auto batch = policy::collect_rollouts(pi, sampler, /*min_timesteps=*/1, /*seed=*/3, 0.99,
                                        nullptr);
  REQUIRE(batch.trajectories.size() >= 1);
  for (const auto& tr : batch.trajectories) CHECK(tr.size() == 7);
  CHECK(batch.total_steps >= 1);
}

TEST_CASE("collect_rollouts: env ids cover all cells over a long batch") {
  policy::GaussianPolicy pi(2, 1, /*seed=*/0);
  const int cells = 25;
  auto sampler = [&](int index, uint64_t) -> std::unique_ptr<policy::Episode> {
    return std::make_unique<ChainEpisode>(index % cells, 10);
  };
  auto batch = policy::collect_rollouts(pi, sampler, 10000, /*seed=*/1, 0.99, nullptr);
  std::set<int> seen;
  for (const auto& tr : batch.trajectories) seen.insert(tr.env_id);
  CHECK(seen.size() == cells);
}

TEST_CASE("collect_rollouts: deterministic given seed") {
  policy::GaussianPolicy pi(2, 1, /*seed=*/2);
  auto sampler = [](int, uint64_t) -> std::unique_ptr<policy::Episode> {
    return std::make_unique<ChainEpisode>(0, 5);
  };
  auto b1 = policy::collect_rollouts(pi, sampler, 100, 9, 0.99, nullptr);
  auto b2 = policy::collect_rollouts(pi, sampler, 100, 9, 0.99, nullptr);
  REQUIRE(b1.trajectories.size() == b2.trajectories.size());
  CHECK(b1.act == b2.act);
  CHECK(b1.old_logp == b2.old_logp);
  CHECK(b1.advantages == b2.advantages);
}

TEST_CASE("rollout batch: advantages normalized to mean 0, std 1") {
  policy::GaussianPolicy pi(2, 1, /*seed=*/2);
  auto sampler = [](int, uint64_t) -> std::unique_ptr<policy::Episode> {
    return std::make_unique<ChainEpisode>(0, 8);
  };
  auto batch = policy::collect_rollouts(pi, sampler, 400, 11, 0.99, nullptr);
  double mean = 0.0;
  for (double a : batch.advantages) mean += a;
  mean /= static_cast<double>(batch.advantages.size());
  double var = 0.0;
  for (double a : batch.advantages) var += (a - mean) * (a - mean);
  var /= static_cast<double>(batch.advantages.size());
  CHECK(std::abs(mean) < 1e-10);
  CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("trust region: zero advantages leave the policy unchanged") {
  policy::GaussianPolicy pi(2, 1, /*seed=*/6);
  auto sampler = [](int, uint64_t) -> std::unique_ptr<policy::Episode> {
    return std::make_unique<ChainEpisode>(0, 6);
  };
  auto batch = policy::collect_rollouts(pi, sampler, 200, 4, 0.99, nullptr);
  std::fill(batch.advantages.begin(), batch.advantages.end(), 0.0);
  auto before_params = pi.params;
  auto before_log_std = pi.log_std;
  policy::TrustRegionUpdater updater(pi);
  auto stats = updater.update(pi, batch, 1);
  CHECK(pi.params == before_params);
  CHECK(pi.log_std == before_log_std);
  CHECK(stats.mean_kl == doctest::Approx(0.0));
}

TEST_CASE("trust region: post-update KL stays within the limit") {
  policy::GaussianPolicy pi(1, 1, /*seed=*/3);
  auto sampler = [](int, uint64_t) -> std::unique_ptr<policy::Episode> {
    return std::make_unique<BanditEpisode>();
  };
  policy::TrustRegionUpdater updater(pi);
  for (int it = 0; it < 5; ++it) {
    auto batch = policy::collect_rollouts(pi, sampler, 256, 100 + it, 0.99, nullptr);
    auto stats = updater.update(pi, batch, it);
    CHECK_FALSE(stats.aborted);
    // The early stop triggers after at most one epoch past the limit; allow
    // the single-epoch overshoot margin.
    CHECK(stats.mean_kl <= 3.0 * updater.config().kl_limit);
  }
}

TEST_CASE("trust region: bandit reward probability improves for >= 9/10 seeds") {
  int improved = 0;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    policy::GaussianPolicy pi(1, 1, seed);
    auto sampler = [](int, uint64_t) -> std::unique_ptr<policy::Episode> {
      return std::make_unique<BanditEpisode>();
    };
    auto p_reward = [&]() {
      // P(a > 0) under the current Gaussian at obs = 0.
      const double mean = pi.mean_action(Vec{0.0})[0];
      const double std = pi.stddev()[0];
      return 0.5 * std::erfc(-mean / (std * std::sqrt(2.0)));
    };
    const double before = p_reward();
    policy::TrustRegionUpdater updater(pi);
    for (int it = 0; it < 10; ++it) {
      auto batch = policy::collect_rollouts(pi, sampler, 256, seed * 1000 + it, 0.99, nullptr);
      updater.update(pi, batch, seed * 77 + it);
    }
    if (p_reward() > before) ++improved;
  }
  CHECK(improved >= 9);
}

TEST_CASE("recurrent: hidden state isolated per episode") {
  policy::RecurrentPolicy pi(2, 1, /*seed=*/9);
  std::vector<Vec> ep1 = {{0.1, 0.2}, {0.3, -0.1}, {0.0, 0.5}};
  std::vector<Vec> ep2 = {{-0.4, 0.2}, {0.6, 0.6}};
  auto out1 = pi.forward_episode(ep1);
  auto out2 = pi.forward_episode(ep2);
  // Re-running in the opposite order reproduces both outputs exactly.
  auto out2b = pi.forward_episode(ep2);
  auto out1b = pi.forward_episode(ep1);
  CHECK(out1 == out1b);
  CHECK(out2 == out2b);

  // Sessions also start from a zero hidden state.
  auto s1 = pi.session();
  auto s2 = pi.session();
  auto a1 = s1->act_mean(ep1[0]);
  s1->act_mean(ep1[1]);
  auto a2 = s2->act_mean(ep1[0]);
  CHECK(a1.action == a2.action);
}

TEST_CASE("recurrent: BPTT gradient matches finite differences") {
  policy::RecurrentPolicy pi(2, 1, /*seed=*/21, /*hidden_dim=*/4);
  std::vector<Vec> obs = {{0.2, -0.3}, {0.5, 0.1}, {-0.2, 0.4}};
  std::vector<Vec> upstream = {{0.7}, {-0.4}, {1.1}};

  auto loss = [&]() {
    auto out = pi.forward_episode(obs);
    double acc = 0.0;
    for (size_t t = 0; t < out.size(); ++t) acc += out[t][0] * upstream[t][0];
    return acc;
  };

  policy::RecurrentPolicy::Cache cache;
  pi.forward_episode(obs, &cache);
  auto g = pi.zero_grads();
  pi.backward_episode(cache, upstream, g);

  Rng rng(5);
  for (int k = 0; k < 12; ++k) {
    std::vector<float>* vecs[] = {&pi.wg, &pi.bg, &pi.wc, &pi.bc, &pi.wo, &pi.bo};
    Vec* gvecs[] = {&g.wg, &g.bg, &g.wc, &g.bc, &g.wo, &g.bo};
    const int which = static_cast<int>(rng.next_u64() % 6);
    auto& v = *vecs[which];
    const size_t idx = rng.next_u64() % v.size();
    const float saved = v[idx];
    const double h = 1e-4;
    v[idx] = static_cast<float>(static_cast<double>(saved) + h);
    const double hi_x = static_cast<double>(v[idx]);
    const double f_hi = loss();
    v[idx] = static_cast<float>(static_cast<double>(saved) - h);
    const double lo_x = static_cast<double>(v[idx]);
    const double f_lo = loss();
    v[idx] = saved;
    const double fd = (f_hi - f_lo) / (hi_x - lo_x);
    const double analytic = (*gvecs[which])[idx];
    const double scale = std::max({std::abs(fd), std::abs(analytic), 1e-6});
    CHECK(std::abs(fd - analytic) / scale < 1e-3);
  }
}

TEST_CASE("value net: fits a constant target") {
  policy::ValueNet v(2, /*seed=*/3);
  std::vector<Vec> obs(640, Vec{0.5, -0.5});
  Vec targets(640, 2.0);
  v.fit(obs, targets, /*epochs=*/300, /*seed=*/0);
  CHECK(v.predict(Vec{0.5, -0.5}) == doctest::Approx(2.0).epsilon(0.1));
}

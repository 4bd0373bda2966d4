#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "epi/envsim.hpp"
#include "epi/rng.hpp"

using namespace epi;
using env::Vec;
namespace con = env::constants;

namespace {

env::EnvParams puck_params(double mass, double damping) {
  return {{"puck_mass", "puck_damping"}, {mass, damping}};
}

env::EnvParams hopper_params() {
  return {{"torso_mass", "leg_mass", "leg_damping", "ground_friction"}, {2.0, 0.4, 2.0, 0.3}};
}

// SlidePuck state layout: paddle pos(0,1) vel(2,3), puck pos(4,5) vel(6,7),
// goal(8,9), contact flag(10), frozen hit point(11,12), step(13).
Vec puck_state_at_rest() {
  Vec s(14, 0.0);
  s[0] = -0.6;           // paddle x
  s[8] = con::kGoalX;    // goal
  s[9] = con::kGoalY;
  return s;
}

double l2(const Vec& a, const Vec& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

}  // namespace

TEST_CASE("grid_make: range (1,5) gives the documented train/test values") {
  auto grid = env::grid_make(env::Family::SlidePuck, {{1.0, 5.0}, {0.2, 1.0}});
  const std::array<double, 5> train = {1.0, 2.0, 3.0, 4.0, 5.0};
  const std::array<double, 5> test = {1.5, 2.5, 3.5, 4.5, 5.5};
  for (int i = 0; i < 5; ++i) {
    CHECK(grid.train_values[0][i] == doctest::Approx(train[i]).epsilon(1e-15));
    CHECK(grid.test_values[0][i] == doctest::Approx(test[i]).epsilon(1e-15));
  }
  CHECK(grid.num_cells() == 25);
}

TEST_CASE("grid_make: degenerate range rejected") {
  CHECK_THROWS_AS(env::grid_make(env::Family::SlidePuck, {{2.0, 2.0}, {0.2, 1.0}}),
                  std::invalid_argument);
}

TEST_CASE("grid: train and test values never intersect") {
  for (auto family : {env::Family::SlidePuck, env::Family::SpringHopper}) {
    auto grid = env::grid_make(family, env::default_ranges(family));
    for (int p = 0; p < grid.num_params(); ++p) {
      for (double tr : grid.train_values[p]) {
        for (double te : grid.test_values[p]) CHECK(tr != te);
      }
    }
  }
}

TEST_CASE("grid: center cell uses the middle value of every parameter") {
  auto grid = env::grid_make(env::Family::SpringHopper, env::default_ranges(env::Family::SpringHopper));
  auto p = grid.cell_params(env::GridSide::train, grid.center_cell());
  for (int i = 0; i < grid.num_params(); ++i) {
    CHECK(p.values[i] == doctest::Approx(grid.train_values[i][2]).epsilon(1e-15));
  }
}

TEST_CASE("reset: deterministic given seed; velocities within bounds") {
  env::EnvInstance e(env::Family::SlidePuck, puck_params(3.0, 0.6));
  Vec o1 = e.reset(42);
  Vec o2 = e.reset(42);
  CHECK(o1 == o2);
  Vec o3 = e.reset(43);
  CHECK(o1 != o3);
  // paddle vel obs[2,3], puck vel obs[6,7]
  for (int i : {2, 3, 6, 7}) {
    CHECK(std::abs(o1[i]) <= 0.1);
  }
}

TEST_CASE("reset: SpringHopper starts alive") {
  env::EnvInstance e(env::Family::SpringHopper, hopper_params());
  Vec o = e.reset(7);
  CHECK(o[0] > 0.7 * con::kLegRest);   // y
  CHECK(std::abs(o[5]) < 0.2);         // pitch proxy
  auto r = e.step(Vec{0.0});
  CHECK_FALSE(r.done);
}

TEST_CASE("step: zero action with everything at rest keeps the puck at rest") {
  env::EnvInstance e(env::Family::SlidePuck, puck_params(3.0, 0.6));
  e.reset(0);
  e.set_state(puck_state_at_rest());
  auto r = e.step(Vec{0.0, 0.0});
  CHECK(r.obs[4] == 0.0);  // puck x
  CHECK(r.obs[5] == 0.0);
  CHECK(r.obs[6] == 0.0);  // puck vx
  CHECK(r.obs[7] == 0.0);
}

TEST_CASE("step: identical (state, params, action) gives identical next states") {
  env::EnvInstance a(env::Family::SlidePuck, puck_params(2.0, 0.8));
  env::EnvInstance b(env::Family::SlidePuck, puck_params(2.0, 0.8));
  a.reset(5);
  b.reset(99);
  b.set_state(a.get_state());
  Vec act = {0.3, -0.7};
  auto ra = a.step(act);
  auto rb = b.step(act);
  CHECK(a.get_state() == b.get_state());
  CHECK(ra.obs == rb.obs);
  CHECK(ra.reward == rb.reward);
}

TEST_CASE("step: collision matches the closed-form elastic exchange") {
  // Paddle moving at vp toward a resting puck already inside contact range.
  // One step: paddle damping scales vp by (1 - c_p dt), the paddle advances,
  // then the impulse j = (1+e) vrel / (1 + 1/m) gives the puck speed
  // (1+e) (1 - c_p dt) vp / (m + 1).
  const double vp = 1.0;
  auto run = [&](double mass) {
    env::EnvInstance e(env::Family::SlidePuck, puck_params(mass, 0.6));
    e.reset(0);
    Vec s = puck_state_at_rest();
    s[0] = 0.0;   // paddle at origin
    s[2] = vp;    // paddle vx
    s[4] = 0.15;  // puck just inside contact radius after the paddle advances
    e.set_state(s);
    auto r = e.step(Vec{0.0, 0.0});
    return r.obs[6];  // puck vx
  };
  auto expected = [&](double mass) {
    const double v_impact = vp * (1.0 - con::kPaddleDamping * con::kDt);
    return (1.0 + con::kRestitution) * v_impact / (mass + 1.0);
  };
  const double v1 = run(1.0);
  const double v5 = run(5.0);
  CHECK(std::abs(v1 - expected(1.0)) < 1e-6);
  CHECK(std::abs(v5 - expected(5.0)) < 1e-6);
  CHECK(v1 / v5 == doctest::Approx(3.0).epsilon(1e-9));  // (5+1)/(1+1)
}

TEST_CASE("set_state: lossless round trip; replay reproduces the trajectory") {
  env::EnvInstance e(env::Family::SpringHopper, hopper_params());
  e.reset(11);
  Rng rng(3);
  for (int t = 0; t < 20; ++t) e.step(Vec{rng.uniform(-1.0, 1.0)});
  Vec snapshot = e.get_state();

  // Record 30 more steps.
  std::vector<Vec> actions, states;
  Vec rewards;
  for (int t = 0; t < 30; ++t) {
    actions.push_back(Vec{rng.uniform(-1.0, 1.0)});
    auto r = e.step(actions.back());
    states.push_back(e.get_state());
    rewards.push_back(r.reward);
  }

  env::EnvInstance f(env::Family::SpringHopper, hopper_params());
  f.reset(999);
  f.set_state(snapshot);
  CHECK(f.get_state() == snapshot);
  for (int t = 0; t < 30; ++t) {
    auto r = f.step(actions[t]);
    CHECK(f.get_state() == states[t]);
    CHECK(r.reward == rewards[t]);
  }
}

TEST_CASE("set_state: fallen hopper terminates on the next step") {
  env::EnvInstance e(env::Family::SpringHopper, hopper_params());
  e.reset(0);
  Vec s = e.get_state();
  s[1] = 0.3;  // torso height below 0.7 L
  s[7] = 0.0;  // flight
  e.set_state(s);
  auto r = e.step(Vec{0.0});
  CHECK(r.done);
}

TEST_CASE("set_state: shared state, different params, same action diverge") {
  env::EnvInstance light(env::Family::SlidePuck, puck_params(1.0, 0.6));
  env::EnvInstance heavy(env::Family::SlidePuck, puck_params(5.0, 0.6));
  light.reset(0);
  heavy.reset(0);
  Vec s = puck_state_at_rest();
  s[6] = 1.5;  // moving puck exercises mass/damping
  light.set_state(s);
  heavy.set_state(s);
  Vec act = {0.0, 0.0};
  light.step(act);
  heavy.step(act);
  CHECK(l2(light.get_state(), heavy.get_state()) >= 1e-3);
}

TEST_CASE("hopper_reward: Appendix-form substitutions") {
  Vec s(9, 0.0);
  CHECK(env::hopper_reward(s, Vec{}) == doctest::Approx(1.0));
  CHECK(env::hopper_reward(s, Vec{0.0}) == doctest::Approx(1.0));
  s[2] = 2.0;  // vx
  CHECK(env::hopper_reward(s, Vec{0.0}) == doctest::Approx(3.0));
  s[2] = 0.0;
  CHECK(env::hopper_reward(s, Vec{1.0}) == doctest::Approx(0.999));
}

TEST_CASE("striker_reward: substitutions and contact freeze") {
  Vec s(14, 0.0);
  // Puck at goal, paddle at puck, zero action.
  s[8] = 0.0;
  s[9] = 0.0;
  CHECK(env::striker_reward(s, Vec{0.0, 0.0}) == doctest::Approx(0.0));

  // Puck 1.0 from goal.
  s[8] = 1.0;
  CHECK(env::striker_reward(s, Vec{0.0, 0.0}) == doctest::Approx(-3.0));

  // Post-contact: the paddle term uses the frozen hit point, so states that
  // differ only in paddle position score identically.
  Vec a = s, b = s;
  a[10] = b[10] = 1.0;          // contact happened
  a[11] = b[11] = 0.3;          // frozen hit point
  a[12] = b[12] = -0.1;
  a[0] = 5.0;                   // paddle wandered off in one state
  b[0] = -5.0;
  CHECK(env::striker_reward(a, Vec{0.1, 0.2}) ==
        doctest::Approx(env::striker_reward(b, Vec{0.1, 0.2})));
}

TEST_CASE("energy sanity: free motion never gains kinetic energy") {
  env::EnvInstance e(env::Family::SlidePuck, puck_params(2.0, 0.4));
  e.reset(17);
  Vec s = puck_state_at_rest();
  s[0] = -2.0;  // paddle far away: no collision
  s[2] = 0.4;
  s[3] = -0.3;
  s[6] = 1.2;
  s[7] = 0.8;
  e.set_state(s);
  auto ke = [&]() {
    Vec st = e.get_state();
    return 0.5 * (st[2] * st[2] + st[3] * st[3]) + 0.5 * 2.0 * (st[6] * st[6] + st[7] * st[7]);
  };
  double prev = ke();
  for (int t = 0; t < 50; ++t) {
    e.step(Vec{0.0, 0.0});
    double cur = ke();
    CHECK(cur <= prev + 1e-12);
    prev = cur;
  }
}

TEST_CASE("episode limits: SlidePuck done at 100, SpringHopper capped at 400") {
  env::EnvInstance e(env::Family::SlidePuck, puck_params(3.0, 0.6));
  e.reset(1);
  bool done = false;
  int steps = 0;
  while (!done) {
    done = e.step(Vec{0.0, 0.0}).done;
    ++steps;
  }
  CHECK(steps == 100);
  CHECK(e.episode_limit() == 100);

  env::EnvInstance h(env::Family::SpringHopper, hopper_params());
  CHECK(h.episode_limit() == 400);
}

TEST_CASE("step rejects non-finite actions and wrong dimensions") {
  env::EnvInstance e(env::Family::SlidePuck, puck_params(3.0, 0.6));
  e.reset(0);
  CHECK_THROWS_AS(e.step(Vec{0.0}), std::invalid_argument);
  CHECK_THROWS_AS(e.step(Vec{std::nan(""), 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(e.set_state(Vec(3, 0.0)), std::invalid_argument);
}

TEST_CASE("params must be strictly positive and complete") {
  CHECK_THROWS_AS(env::EnvInstance(env::Family::SlidePuck, puck_params(0.0, 0.6)),
                  std::invalid_argument);
  CHECK_THROWS_AS(env::EnvInstance(env::Family::SlidePuck,
                                   env::EnvParams{{"puck_mass"}, {1.0}}),
                  std::invalid_argument);
}

#include "epi/envsim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace epi::env {

using namespace constants;

// State layouts.
// SlidePuck (14): paddle pos (0,1), paddle vel (2,3), puck pos (4,5),
//   puck vel (6,7), goal (8,9), contact flag (10), frozen hit point (11,12),
//   step counter (13).
// SpringHopper (9): x (0), y (1), vx (2), vy (3), leg extension (4),
//   extension velocity (5), pitch proxy (6), contact flag (7),
//   step counter (8).
namespace sp {
constexpr int px = 0, py = 1, pvx = 2, pvy = 3, qx = 4, qy = 5, qvx = 6, qvy = 7;
constexpr int gx = 8, gy = 9, contact = 10, fhx = 11, fhy = 12, step = 13;
constexpr int dim = 14;
}  // namespace sp
namespace sh {
constexpr int x = 0, y = 1, vx = 2, vy = 3, ext = 4, extvel = 5, pitch = 6;
constexpr int contact = 7, step = 8;
constexpr int dim = 9;
}  // namespace sh

std::string family_name(Family f) {
  return f == Family::SlidePuck ? "slide_puck" : "spring_hopper";
}

Family family_from_name(const std::string& name) {
  if (name == "slide_puck") return Family::SlidePuck;
  if (name == "spring_hopper") return Family::SpringHopper;
  throw std::invalid_argument("unknown environment family: " + name);
}

double EnvParams::get(const std::string& name) const {
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return values[i];
  }
  throw std::invalid_argument("EnvParams: no parameter named " + name);
}

void EnvParams::validate(Family family) const {
  if (names.size() != values.size()) throw std::invalid_argument("EnvParams: name/value size mismatch");
  if (static_cast<int>(values.size()) != param_count(family)) {
    throw std::invalid_argument("EnvParams: wrong parameter count for family");
  }
  for (double v : values) {
    if (!(v > 0.0)) throw std::invalid_argument("EnvParams: parameters must be strictly positive");
  }
}

int param_count(Family family) { return family == Family::SlidePuck ? 2 : 4; }

std::vector<std::string> param_names(Family family) {
  if (family == Family::SlidePuck) return {"puck_mass", "puck_damping"};
  return {"torso_mass", "leg_mass", "leg_damping", "ground_friction"};
}

std::vector<std::pair<double, double>> default_ranges(Family family) {
  if (family == Family::SlidePuck) return {{1.0, 5.0}, {0.2, 1.0}};
  return {{1.0, 3.0}, {0.2, 0.6}, {0.5, 4.0}, {0.05, 0.5}};
}

int ParamGrid::num_cells() const {
  int n = 1;
  for (int p = 0; p < num_params(); ++p) n *= 5;
  return n;
}

EnvParams ParamGrid::cell_params(GridSide side, int cell_index) const {
  if (cell_index < 0 || cell_index >= num_cells()) {
    throw std::invalid_argument("ParamGrid: cell index out of range");
  }
  EnvParams p;
  p.names = names;
  p.values.resize(names.size());
  int idx = cell_index;
  for (int i = 0; i < num_params(); ++i) {
    const int vi = idx % 5;
    idx /= 5;
    p.values[i] = (side == GridSide::train ? train_values[i] : test_values[i])[vi];
  }
  return p;
}

int ParamGrid::center_cell() const {
  int idx = 0;
  int stride = 1;
  for (int i = 0; i < num_params(); ++i) {
    idx += 2 * stride;
    stride *= 5;
  }
  return idx;
}

std::pair<Vec, Vec> ParamGrid::train_value_stats() const {
  Vec mean(num_params()), var(num_params());
  for (int p = 0; p < num_params(); ++p) {
    double m = 0.0;
    for (double v : train_values[p]) m += v;
    m /= 5.0;
    double s = 0.0;
    for (double v : train_values[p]) s += (v - m) * (v - m);
    mean[p] = m;
    var[p] = s / 5.0;
  }
  return {mean, var};
}

ParamGrid grid_make(Family family, const std::vector<std::pair<double, double>>& ranges) {
  if (static_cast<int>(ranges.size()) != param_count(family)) {
    throw std::invalid_argument("grid_make: wrong number of ranges for family");
  }
  ParamGrid grid;
  grid.family = family;
  grid.names = param_names(family);
  for (const auto& [lo, hi] : ranges) {
    if (!(lo < hi)) throw std::invalid_argument("grid_make: range must have lo < hi");
    const double step = (hi - lo) / 4.0;
    std::array<double, 5> train{}, test{};
    for (int i = 0; i < 5; ++i) {
      train[i] = lo + i * step;
      test[i] = train[i] + step / 2.0;
    }
    grid.train_values.push_back(train);
    grid.test_values.push_back(test);
  }
  return grid;
}

double hopper_reward(std::span<const double> state, std::span<const double> action) {
  double a2 = 0.0;
  for (double a : action) a2 += a * a;
  return state[sh::vx] + 1.0 - 0.001 * a2;
}

double striker_reward(std::span<const double> state, std::span<const double> action) {
  const double dxg = state[sp::qx] - state[sp::gx];
  const double dyg = state[sp::qy] - state[sp::gy];
  const double goal_dist = std::sqrt(dxg * dxg + dyg * dyg);
  double a2 = 0.0;
  for (double a : action) a2 += a * a;
  // After the first hit the paddle term freezes at the contact location.
  const bool hit = state[sp::contact] > 0.5;
  const double hx = hit ? state[sp::fhx] : state[sp::px];
  const double hy = hit ? state[sp::fhy] : state[sp::py];
  const double dxh = state[sp::qx] - hx;
  const double dyh = state[sp::qy] - hy;
  return -3.0 * goal_dist - 0.1 * a2 - 0.5 * (dxh * dxh + dyh * dyh);
}

EnvInstance::EnvInstance(Family family, EnvParams params, int episode_limit)
    : family_(family), params_(std::move(params)) {
  params_.validate(family_);
  episode_limit_ = episode_limit > 0
                       ? episode_limit
                       : (family_ == Family::SlidePuck ? kSlidePuckEpisode : kSpringHopperEpisode);
  state_.assign(state_dim(), 0.0);
}

int EnvInstance::obs_dim() const { return family_ == Family::SlidePuck ? 10 : 7; }
int EnvInstance::act_dim() const { return family_ == Family::SlidePuck ? 2 : 1; }
int EnvInstance::state_dim() const { return family_ == Family::SlidePuck ? sp::dim : sh::dim; }

Vec EnvInstance::reset(uint64_t seed) {
  Rng rng(seed);
  state_.assign(state_dim(), 0.0);
  if (family_ == Family::SlidePuck) {
    state_[sp::px] = kPaddleStartX + rng.uniform(-kResetPosNoise, kResetPosNoise);
    state_[sp::py] = rng.uniform(-kResetPosNoise, kResetPosNoise);
    state_[sp::pvx] = rng.uniform(-0.1, 0.1);
    state_[sp::pvy] = rng.uniform(-0.1, 0.1);
    state_[sp::qx] = kPuckStartX + rng.uniform(-kResetPosNoise, kResetPosNoise);
    state_[sp::qy] = rng.uniform(-kResetPosNoise, kResetPosNoise);
    state_[sp::qvx] = rng.uniform(-0.1, 0.1);
    state_[sp::qvy] = rng.uniform(-0.1, 0.1);
    state_[sp::gx] = kGoalX;
    state_[sp::gy] = kGoalY;
  } else {
    const double M = params_.get("torso_mass");
    state_[sh::x] = 0.0;
    state_[sh::y] = kLegRest - M * kGravity / kSpringK + 0.02 + rng.uniform(-0.005, 0.005);
    state_[sh::vx] = rng.uniform(-0.005, 0.005);
    state_[sh::vy] = rng.uniform(-0.005, 0.005);
    state_[sh::ext] = state_[sh::y];
    state_[sh::extvel] = state_[sh::vy];
    state_[sh::pitch] = 0.0;
    state_[sh::contact] = 1.0;
  }
  return observe();
}

void EnvInstance::set_state(std::span<const double> state) {
  if (static_cast<int>(state.size()) != state_dim()) {
    throw std::invalid_argument("set_state: wrong state dimension for family");
  }
  state_.assign(state.begin(), state.end());
}

Vec EnvInstance::observe() const {
  if (family_ == Family::SlidePuck) {
    return Vec(state_.begin(), state_.begin() + 10);
  }
  return {state_[sh::y],   state_[sh::vy],    state_[sh::vx],    state_[sh::ext],
          state_[sh::extvel], state_[sh::pitch], state_[sh::contact]};
}

double EnvInstance::puck_goal_distance() const {
  if (family_ != Family::SlidePuck) {
    throw std::logic_error("puck_goal_distance: SlidePuck only");
  }
  const double dx = state_[sp::qx] - state_[sp::gx];
  const double dy = state_[sp::qy] - state_[sp::gy];
  return std::sqrt(dx * dx + dy * dy);
}

StepResult EnvInstance::step(std::span<const double> action) {
  if (static_cast<int>(action.size()) != act_dim()) {
    throw std::invalid_argument("step: action dimension mismatch");
  }
  for (double a : action) {
    if (!std::isfinite(a)) throw std::invalid_argument("step: non-finite action");
  }
  return family_ == Family::SlidePuck ? step_slide_puck(action) : step_spring_hopper(action);
}

StepResult EnvInstance::step_slide_puck(std::span<const double> action) {
  const double ax = std::clamp(action[0], -1.0, 1.0);
  const double ay = std::clamp(action[1], -1.0, 1.0);
  const double m = params_.get("puck_mass");
  const double d = params_.get("puck_damping");

  // Paddle: forced, damped, unit mass.
  state_[sp::pvx] += (kPaddleForceMax * ax - kPaddleDamping * state_[sp::pvx]) * kDt;
  state_[sp::pvy] += (kPaddleForceMax * ay - kPaddleDamping * state_[sp::pvy]) * kDt;
  state_[sp::px] += state_[sp::pvx] * kDt;
  state_[sp::py] += state_[sp::pvy] * kDt;

  // Puck: linear damping, then Coulomb table friction clamped at rest.
  const double decay = std::max(0.0, 1.0 - (d / m) * kDt);
  state_[sp::qvx] *= decay;
  state_[sp::qvy] *= decay;
  const double speed = std::hypot(state_[sp::qvx], state_[sp::qvy]);
  const double friction_dv = kTableFriction * kGravity * kDt;
  if (speed <= friction_dv) {
    state_[sp::qvx] = 0.0;
    state_[sp::qvy] = 0.0;
  } else {
    const double scale = 1.0 - friction_dv / speed;
    state_[sp::qvx] *= scale;
    state_[sp::qvy] *= scale;
  }
  state_[sp::qx] += state_[sp::qvx] * kDt;
  state_[sp::qy] += state_[sp::qvy] * kDt;

  // Collision: 1-D elastic exchange along the contact normal, restitution 0.9.
  double nx = state_[sp::qx] - state_[sp::px];
  double ny = state_[sp::qy] - state_[sp::py];
  double dist = std::hypot(nx, ny);
  if (dist < kContactRadius) {
    if (dist < 1e-12) {
      nx = 1.0;
      ny = 0.0;
      dist = 1e-12;
    } else {
      nx /= dist;
      ny /= dist;
    }
    // Separate the puck to the contact surface.
    state_[sp::qx] = state_[sp::px] + nx * kContactRadius;
    state_[sp::qy] = state_[sp::py] + ny * kContactRadius;
    const double vrel = (state_[sp::qvx] - state_[sp::pvx]) * nx +
                        (state_[sp::qvy] - state_[sp::pvy]) * ny;
    if (vrel < 0.0) {
      const double j = -(1.0 + kRestitution) * vrel / (1.0 + 1.0 / m);
      state_[sp::qvx] += (j / m) * nx;
      state_[sp::qvy] += (j / m) * ny;
      state_[sp::pvx] -= j * nx;
      state_[sp::pvy] -= j * ny;
    }
    if (state_[sp::contact] < 0.5) {
      state_[sp::contact] = 1.0;
      state_[sp::fhx] = state_[sp::px];
      state_[sp::fhy] = state_[sp::py];
    }
  }

  state_[sp::step] += 1.0;
  StepResult res;
  res.obs = observe();
  res.reward = striker_reward(state_, action);
  res.done = state_[sp::step] >= episode_limit_;
  return res;
}

StepResult EnvInstance::step_spring_hopper(std::span<const double> action) {
  const double a = std::clamp(action[0], -1.0, 1.0);
  const double M = params_.get("torso_mass");
  const double ml = params_.get("leg_mass");
  const double c = params_.get("leg_damping");
  const double mu = params_.get("ground_friction");
  const double target = kLegRest * (1.0 + kLegActuation * a);

  if (state_[sh::contact] > 0.5) {
    // Stance: foot pinned, leg spans ground to torso (ext == y).
    const double raw_force = kSpringK * (target - state_[sh::y]) - c * state_[sh::vy];
    if (raw_force <= 0.0) {
      state_[sh::contact] = 0.0;  // liftoff
    } else {
      const double force = raw_force;
      const double a_y = force / M - kGravity;
      const double a_x = std::min(kLeanFraction * force, mu * force) / M;
      state_[sh::vy] += a_y * kDt;
      state_[sh::vx] += a_x * kDt;
      state_[sh::y] += state_[sh::vy] * kDt;
      state_[sh::x] += state_[sh::vx] * kDt;
      state_[sh::ext] = state_[sh::y];
      state_[sh::extvel] = state_[sh::vy];
    }
  }
  if (state_[sh::contact] < 0.5) {
    // Flight: ballistic torso, spring-damper leg with mass ml.
    state_[sh::vy] -= kGravity * kDt;
    state_[sh::y] += state_[sh::vy] * kDt;
    state_[sh::x] += state_[sh::vx] * kDt;
    state_[sh::extvel] +=
        (kSpringK * (target - state_[sh::ext]) - c * state_[sh::extvel]) / ml * kDt;
    state_[sh::ext] += state_[sh::extvel] * kDt;
    state_[sh::ext] = std::clamp(state_[sh::ext], 0.2 * kLegRest, 1.4 * kLegRest);
    if (state_[sh::y] <= state_[sh::ext]) {
      // Touchdown: foot hits the ground inelastically.
      state_[sh::contact] = 1.0;
      state_[sh::ext] = state_[sh::y];
      state_[sh::extvel] = state_[sh::vy];
    }
  }

  state_[sh::pitch] += (kDt / kPitchTau) * (kPitchGain * state_[sh::vx] - state_[sh::pitch]);
  state_[sh::step] += 1.0;

  const bool alive = state_[sh::y] > kAliveHeight * kLegRest &&
                     std::abs(state_[sh::pitch]) < kAlivePitch;
  StepResult res;
  res.obs = observe();
  res.reward = hopper_reward(state_, action);
  res.done = !alive || state_[sh::step] >= episode_limit_;
  return res;
}

}  // namespace epi::env

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "epi/rng.hpp"

namespace epi::env {

using Vec = std::vector<double>;

enum class Family { SlidePuck, SpringHopper };

std::string family_name(Family f);
Family family_from_name(const std::string& name);

// Shared simulation constants. Parameter ranges are configured per run;
// everything here is fixed across all environments of a family.
namespace constants {
inline constexpr double kDt = 0.05;
inline constexpr double kGravity = 9.8;

// SlidePuck
inline constexpr double kPaddleForceMax = 20.0;   // F_max
inline constexpr double kPaddleDamping = 2.0;     // c_p
inline constexpr double kTableFriction = 0.02;    // mu_table
inline constexpr double kRestitution = 0.9;
inline constexpr double kContactRadius = 0.2;     // paddle + puck radii
inline constexpr int kSlidePuckEpisode = 100;
inline constexpr double kGoalX = 2.0;
inline constexpr double kGoalY = 0.0;
inline constexpr double kPaddleStartX = -0.4;
inline constexpr double kPuckStartX = 0.0;
// Reset position jitter. Kept small enough that the worst-case zero-action
// drift (paddle coast v0/c_p plus puck friction stopping distance) stays
// below the free gap |kPaddleStartX| - 2*kResetPosNoise - kContactRadius,
// so a do-nothing policy can never cause contact.
inline constexpr double kResetPosNoise = 0.05;

// SpringHopper
inline constexpr double kSpringK = 200.0;
inline constexpr double kLegRest = 1.0;           // L
inline constexpr double kLegActuation = 0.3;      // rest-length modulation per unit action
inline constexpr double kLeanFraction = 0.2;      // forward component of leg force
inline constexpr double kPitchGain = 0.08;
inline constexpr double kPitchTau = 0.5;
inline constexpr double kAliveHeight = 0.7;       // fraction of L
inline constexpr double kAlivePitch = 0.2;
inline constexpr int kSpringHopperEpisode = 400;
}  // namespace constants

// Named, strictly positive physical parameters in a canonical order
// (the vectorized form is rho).
struct EnvParams {
  std::vector<std::string> names;
  std::vector<double> values;

  double get(const std::string& name) const;
  void validate(Family family) const;  // positivity + expected count
  bool operator==(const EnvParams&) const = default;
};

int param_count(Family family);
std::vector<std::string> param_names(Family family);
// Default (lo, hi) randomization range per parameter.
std::vector<std::pair<double, double>> default_ranges(Family family);

enum class GridSide { train, test };

// 5 evenly spread training values per parameter; test values are offset by
// half a grid step so that train and test sets never intersect.
struct ParamGrid {
  Family family;
  std::vector<std::string> names;
  std::vector<std::array<double, 5>> train_values;
  std::vector<std::array<double, 5>> test_values;

  int num_params() const { return static_cast<int>(names.size()); }
  int num_cells() const;  // 5^P
  EnvParams cell_params(GridSide side, int cell_index) const;
  // Index of the grid's central cell (value index 2 on every axis).
  int center_cell() const;
  // Per-parameter mean and variance of the training values (constant-mean
  // predictor statistics, used by the system-id comparison).
  std::pair<Vec, Vec> train_value_stats() const;
};

ParamGrid grid_make(Family family, const std::vector<std::pair<double, double>>& ranges);

struct StepResult {
  Vec obs;
  double reward = 0.0;
  bool done = false;
};

// Reward functions exposed for direct testing; `state` is the full
// simulator state vector of the family.
double hopper_reward(std::span<const double> state, std::span<const double> action);
double striker_reward(std::span<const double> state, std::span<const double> action);

// One concrete environment: family + parameters + full mutable state.
// step() is a pure function of (state, params, action); all randomness
// lives in reset().
class EnvInstance {
 public:
  EnvInstance(Family family, EnvParams params, int episode_limit = 0);

  Vec reset(uint64_t seed);
  StepResult step(std::span<const double> action);

  Vec get_state() const { return state_; }
  void set_state(std::span<const double> state);
  Vec observe() const;

  int obs_dim() const;
  int act_dim() const;
  int state_dim() const;
  int episode_limit() const { return episode_limit_; }
  Family family() const { return family_; }
  const EnvParams& params() const { return params_; }

  // SlidePuck-only accessors used by evaluation metrics.
  double puck_goal_distance() const;

 private:
  StepResult step_slide_puck(std::span<const double> action);
  StepResult step_spring_hopper(std::span<const double> action);

  Family family_;
  EnvParams params_;
  int episode_limit_;
  Vec state_;
};

}  // namespace epi::env

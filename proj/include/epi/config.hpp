#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "epi/dataset.hpp"
#include "epi/epimodel.hpp"
#include "epi/policy.hpp"
#include "epi/training.hpp"

namespace epi::config {

// Malformed configuration (unknown key, bad value); carries the key name.
struct ConfigError : std::runtime_error {
  ConfigError(const std::string& key, const std::string& what)
      : std::runtime_error("config key '" + key + "': " + what), key(key) {}
  std::string key;
};

// Missing or unreadable artifact; carries the expected path.
struct ArtifactError : std::runtime_error {
  explicit ArtifactError(const std::string& path)
      : std::runtime_error("missing artifact: " + path), path(path) {}
  std::string path;
};

struct RunConfig {
  // [env]
  std::string family = "slide_puck";
  std::vector<double> range_lo;  // empty = family defaults
  std::vector<double> range_hi;

  // [dataset]
  size_t transitions = 40000;
  double epsilon = 0.2;
  int vine_anchors = 100;
  double val_fraction = 0.2;

  // [epimodel]
  epimodel::EpiConfig epi;

  // [training]
  training::TrainConfig train;

  // [eval]
  int episodes_per_env = 4;
  std::vector<uint64_t> eval_seeds = {0, 1, 2, 3, 4};
  int sweep_points = 9;
  int embed_probes_per_env = 8;

  env::Family env_family() const;
  env::ParamGrid make_grid() const;
};

// Strict sectioned key-value text. Unknown keys/sections throw ConfigError;
// a missing file throws ArtifactError.
RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& text);  // same grammar, from memory
void apply_override(RunConfig& cfg, const std::string& key_eq_value);
std::string serialize_config(const RunConfig& cfg);  // parseable round-trip

// ---------------------------------------------------------------------------
// Checkpoints: header (magic, version, model name, NetworkSpec) + named
// little-endian float32 arrays with explicit shapes. Bit-exact round-trip.

inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string model_name;
  nn::NetworkSpec spec;
  struct Array {
    std::string name;
    std::vector<int32_t> shape;
    std::vector<float> data;
    bool operator==(const Array&) const = default;
  };
  std::vector<Array> arrays;

  const Array& array(const std::string& name) const;  // throws if absent
  bool operator==(const Checkpoint&) const = default;
};

void store_checkpoint(const std::string& path, const Checkpoint& cp);
Checkpoint load_checkpoint(const std::string& path);  // ArtifactError if unreadable

Checkpoint checkpoint_from_policy(const policy::GaussianPolicy& pi, const std::string& name);
policy::GaussianPolicy policy_from_checkpoint(const Checkpoint& cp);
Checkpoint checkpoint_from_net(const epimodel::Net& net, const std::string& name);
epimodel::Net net_from_checkpoint(const Checkpoint& cp);
Checkpoint checkpoint_from_recurrent(const policy::RecurrentPolicy& pi, const std::string& name);
policy::RecurrentPolicy recurrent_from_checkpoint(const Checkpoint& cp);

// ---------------------------------------------------------------------------
// Dataset container: binary header (family, grid, normalization stats) +
// packed transitions. CSV export for inspection.

void store_dataset(const std::string& path, const dataset::TransitionDataset& ds,
                   const env::ParamGrid& grid);
struct StoredDataset {
  dataset::TransitionDataset ds;
  env::ParamGrid grid;
};
StoredDataset load_dataset(const std::string& path);
void export_dataset_csv(const std::string& path, const dataset::TransitionDataset& ds);

// Debug trajectory dump: step, state..., action..., reward, done.
void write_trajectory_csv(const std::string& path, const std::vector<policy::Vec>& states,
                          const std::vector<policy::Vec>& actions,
                          std::span<const double> rewards, const std::vector<bool>& dones);

}  // namespace epi::config

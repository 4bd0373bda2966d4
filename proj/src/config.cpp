#include "epi/config.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <sstream>

namespace epi::config {

namespace {

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
}

int64_t to_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int64_t x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected an integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key, "expected true/false, got '" + v + "'");
}

std::vector<std::string> split_commas(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename T, typename F>
std::vector<T> to_list(const std::string& key, const std::string& v, F convert) {
  std::vector<T> out;
  if (trim(v).empty()) return out;
  for (const std::string& item : split_commas(v)) out.push_back(static_cast<T>(convert(key, item)));
  return out;
}

// One config key: how to set it from text and how to print its value.
struct Field {
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename T>
std::string fmt_list(const std::vector<T>& xs) {
  std::string out;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (i > 0) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt(xs[i]);
    } else {
      out += std::to_string(xs[i]);
    }
  }
  return out;
}

// Ordered schema of every "section.key".
const std::vector<std::pair<std::string, Field>>& schema() {
  static const std::vector<std::pair<std::string, Field>> s = [] {
    std::vector<std::pair<std::string, Field>> f;
    auto add = [&f](const std::string& key, auto setter, auto getter) {
      f.push_back({key, Field{setter, getter}});
    };
#define EPI_NUM(key, expr, conv)                                                       \
  add(key, [](RunConfig& c, const std::string& k, const std::string& v) {              \
        c.expr = static_cast<std::remove_reference_t<decltype(c.expr)>>(conv(k, v));   \
      },                                                                               \
      [](const RunConfig& c) { return fmt(static_cast<double>(c.expr)); })
#define EPI_BOOL(key, expr)                                                            \
  add(key, [](RunConfig& c, const std::string& k, const std::string& v) {              \
        c.expr = to_bool(k, v);                                                        \
      },                                                                               \
      [](const RunConfig& c) { return c.expr ? std::string("true") : std::string("false"); })

    add("env.family",
        [](RunConfig& c, const std::string& k, const std::string& v) {
          try {
            env::family_from_name(v);
          } catch (const std::exception& e) {
            throw ConfigError(k, e.what());
          }
          c.family = v;
        },
        [](const RunConfig& c) { return c.family; });
    add("env.range_lo",
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.range_lo = to_list<double>(k, v, to_double);
        },
        [](const RunConfig& c) { return fmt_list(c.range_lo); });
    add("env.range_hi",
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.range_hi = to_list<double>(k, v, to_double);
        },
        [](const RunConfig& c) { return fmt_list(c.range_hi); });

    EPI_NUM("dataset.transitions", transitions, to_int);
    EPI_NUM("dataset.epsilon", epsilon, to_double);
    EPI_NUM("dataset.vine_anchors", vine_anchors, to_int);
    EPI_NUM("dataset.val_fraction", val_fraction, to_double);

    EPI_NUM("epimodel.embed_dim", epi.embed_dim, to_int);
    add("epimodel.embed_hidden",
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.epi.embed_hidden = to_list<int>(k, v, to_int);
        },
        [](const RunConfig& c) { return fmt_list(c.epi.embed_hidden); });
    add("epimodel.pred_hidden",
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.epi.pred_hidden = to_list<int>(k, v, to_int);
        },
        [](const RunConfig& c) { return fmt_list(c.epi.pred_hidden); });
    EPI_NUM("epimodel.d_min", epi.d_min, to_double);
    EPI_NUM("epimodel.sigma_max", epi.sigma_max, to_double);
    EPI_NUM("epimodel.lambda_sigma", epi.lambda_sigma, to_double);
    EPI_NUM("epimodel.separation_weight", epi.separation_weight, to_double);
    EPI_NUM("epimodel.adam_lr", epi.adam_lr, to_double);
    EPI_NUM("epimodel.minibatch", epi.minibatch, to_int);
    EPI_NUM("epimodel.train_epochs", epi.train_epochs, to_int);
    EPI_NUM("epimodel.val_subsample", epi.val_subsample, to_int);
    EPI_NUM("epimodel.separation_envs", epi.separation_envs, to_int);
    EPI_BOOL("epimodel.reward_flip_sign", epi.reward_flip_sign);
    EPI_BOOL("epimodel.predict_delta", epi.predict_delta);

    EPI_NUM("training.gamma", train.gamma, to_double);
    EPI_NUM("training.kl_limit", train.kl_limit, to_double);
    EPI_NUM("training.policy_lr", train.policy_lr, to_double);
    EPI_NUM("training.epi_iterations", train.epi_iterations, to_int);
    EPI_NUM("training.retrain_period", train.retrain_period, to_int);
    EPI_NUM("training.epi_batch_timesteps", train.epi_batch_timesteps, to_int);
    EPI_NUM("training.task_iterations", train.task_iterations, to_int);
    EPI_NUM("training.task_batch_timesteps", train.task_batch_timesteps, to_int);
    EPI_NUM("training.pred_epochs", train.pred_epochs, to_int);
    EPI_NUM("training.probe_pool_per_env", train.probe_pool_per_env, to_int);
    EPI_NUM("training.seed_policy_iterations", train.seed_policy_iterations, to_int);
    EPI_NUM("training.seed_policy_batch", train.seed_policy_batch, to_int);
    EPI_NUM("training.value_fit_epochs", train.value_fit_epochs, to_int);
    EPI_BOOL("training.use_vine", train.use_vine);
    EPI_BOOL("training.use_separation", train.use_separation);
    EPI_BOOL("training.reset_after_probe", train.reset_after_probe);
    EPI_NUM("training.seed", train.seed, to_int);

    EPI_NUM("eval.episodes_per_env", episodes_per_env, to_int);
    add("eval.seeds",
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.eval_seeds = to_list<uint64_t>(k, v, to_int);
        },
        [](const RunConfig& c) { return fmt_list(c.eval_seeds); });
    EPI_NUM("eval.sweep_points", sweep_points, to_int);
    EPI_NUM("eval.embed_probes_per_env", embed_probes_per_env, to_int);
#undef EPI_NUM
#undef EPI_BOOL
    return f;
  }();
  return s;
}

const Field& find_field(const std::string& key) {
  for (const auto& [name, field] : schema()) {
    if (name == key) return field;
  }
  throw ConfigError(key, "unknown key");
}

}  // namespace

env::Family RunConfig::env_family() const { return env::family_from_name(family); }

env::ParamGrid RunConfig::make_grid() const {
  const env::Family fam = env_family();
  std::vector<std::pair<double, double>> ranges = env::default_ranges(fam);
  if (!range_lo.empty() || !range_hi.empty()) {
    if (range_lo.size() != ranges.size()) {
      throw ConfigError("env.range_lo", "expected " + std::to_string(ranges.size()) + " values");
    }
    if (range_hi.size() != ranges.size()) {
      throw ConfigError("env.range_hi", "expected " + std::to_string(ranges.size()) + " values");
    }
    for (size_t p = 0; p < ranges.size(); ++p) ranges[p] = {range_lo[p], range_hi[p]};
  }
  return env::grid_make(fam, ranges);
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::string section;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(line, "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const auto& [name, field] : schema()) known |= name.starts_with(section + ".");
      if (!known) throw ConfigError(section, "unknown section");
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(line, "expected key = value");
    const std::string key =
        (section.empty() ? "" : section + ".") + trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    find_field(key).set(cfg, key, value);
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_override(RunConfig& cfg, const std::string& key_eq_value) {
  const size_t eq = key_eq_value.find('=');
  if (eq == std::string::npos) {
    throw ConfigError(key_eq_value, "override must be key=value");
  }
  const std::string key = trim(key_eq_value.substr(0, eq));
  find_field(key).set(cfg, key, trim(key_eq_value.substr(eq + 1)));
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& [name, field] : schema()) {
    const size_t dot = name.find('.');
    const std::string sec = name.substr(0, dot);
    if (sec != section) {
      if (!out.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += name.substr(dot + 1) + " = " + field.get(cfg) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary primitives (little-endian; asserted at build time below)

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

constexpr char kCheckpointMagic[8] = {'E', 'P', 'I', 'C', 'K', 'P', 'T', '\0'};
constexpr char kDatasetMagic[8] = {'E', 'P', 'I', 'D', 'A', 'T', 'A', '\0'};

void put_u32(std::string& out, uint32_t v) { out.append(reinterpret_cast<char*>(&v), 4); }
void put_u64(std::string& out, uint64_t v) { out.append(reinterpret_cast<char*>(&v), 8); }
void put_f64(std::string& out, double v) { out.append(reinterpret_cast<char*>(&v), 8); }
void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  void raw(void* dst, size_t n) {
    if (pos_ + n > data_.size()) {
      throw std::runtime_error("truncated file: " + path_);
    }
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }
  uint32_t u32() { uint32_t v; raw(&v, 4); return v; }
  uint64_t u64() { uint64_t v; raw(&v, 8); return v; }
  double f64() { double v; raw(&v, 8); return v; }
  std::string str() {
    std::string s(u32(), '\0');
    raw(s.data(), s.size());
    return s;
  }
  const std::string& path() const { return path_; }

 private:
  std::string data_;
  std::string path_;
  size_t pos_ = 0;
};

Reader read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return Reader(ss.str(), path);
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write: " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw std::runtime_error("short write: " + path);
}

void put_spec(std::string& out, const nn::NetworkSpec& spec) {
  put_u32(out, static_cast<uint32_t>(spec.layer_sizes.size()));
  for (int s : spec.layer_sizes) put_u32(out, static_cast<uint32_t>(s));
  put_u32(out, static_cast<uint32_t>(spec.hidden_activations.size()));
  for (nn::Activation a : spec.hidden_activations) put_u32(out, static_cast<uint32_t>(a));
}

nn::NetworkSpec get_spec(Reader& r) {
  nn::NetworkSpec spec;
  spec.layer_sizes.resize(r.u32());
  for (int& s : spec.layer_sizes) s = static_cast<int>(r.u32());
  spec.hidden_activations.resize(r.u32());
  for (nn::Activation& a : spec.hidden_activations) a = static_cast<nn::Activation>(r.u32());
  return spec;
}

}  // namespace

const Checkpoint::Array& Checkpoint::array(const std::string& name) const {
  for (const Array& a : arrays) {
    if (a.name == name) return a;
  }
  throw std::runtime_error("checkpoint '" + model_name + "' has no array '" + name + "'");
}

void store_checkpoint(const std::string& path, const Checkpoint& cp) {
  std::string out;
  out.append(kCheckpointMagic, 8);
  put_u32(out, kCheckpointVersion);
  put_str(out, cp.model_name);
  put_spec(out, cp.spec);
  put_u32(out, static_cast<uint32_t>(cp.arrays.size()));
  for (const Checkpoint::Array& a : cp.arrays) {
    put_str(out, a.name);
    put_u32(out, static_cast<uint32_t>(a.shape.size()));
    for (int32_t d : a.shape) put_u32(out, static_cast<uint32_t>(d));
    put_u32(out, static_cast<uint32_t>(a.data.size()));
    out.append(reinterpret_cast<const char*>(a.data.data()), a.data.size() * sizeof(float));
  }
  write_file(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r = read_file(path);
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint version mismatch in " + path + ": file has " +
                             std::to_string(version) + ", this build reads " +
                             std::to_string(kCheckpointVersion));
  }
  Checkpoint cp;
  cp.model_name = r.str();
  cp.spec = get_spec(r);
  cp.arrays.resize(r.u32());
  for (Checkpoint::Array& a : cp.arrays) {
    a.name = r.str();
    a.shape.resize(r.u32());
    for (int32_t& d : a.shape) d = static_cast<int32_t>(r.u32());
    a.data.resize(r.u32());
    r.raw(a.data.data(), a.data.size() * sizeof(float));
  }
  return cp;
}

namespace {

void push_network_arrays(Checkpoint& cp, const nn::NetworkSpec& spec,
                         const nn::NetworkParams& params, const std::string& prefix) {
  for (size_t l = 0; l < params.layers.size(); ++l) {
    const int out_dim = spec.layer_sizes[l + 1];
    const int in_dim = spec.layer_sizes[l];
    cp.arrays.push_back({prefix + "layer" + std::to_string(l) + ".w", {out_dim, in_dim},
                         params.layers[l].w});
    cp.arrays.push_back({prefix + "layer" + std::to_string(l) + ".b", {out_dim},
                         params.layers[l].b});
  }
}

nn::NetworkParams pull_network_arrays(const Checkpoint& cp, const nn::NetworkSpec& spec,
                                      const std::string& prefix) {
  nn::NetworkParams params;
  params.layers.resize(spec.layer_count());
  for (int l = 0; l < spec.layer_count(); ++l) {
    params.layers[l].w = cp.array(prefix + "layer" + std::to_string(l) + ".w").data;
    params.layers[l].b = cp.array(prefix + "layer" + std::to_string(l) + ".b").data;
    if (static_cast<int>(params.layers[l].w.size()) !=
            spec.layer_sizes[l] * spec.layer_sizes[l + 1] ||
        static_cast<int>(params.layers[l].b.size()) != spec.layer_sizes[l + 1]) {
      throw std::runtime_error("checkpoint '" + cp.model_name + "': layer " + std::to_string(l) +
                               " shape mismatch");
    }
  }
  return params;
}

std::vector<int> hidden_sizes(const nn::NetworkSpec& spec) {
  return {spec.layer_sizes.begin() + 1, spec.layer_sizes.end() - 1};
}

}  // namespace

Checkpoint checkpoint_from_policy(const policy::GaussianPolicy& pi, const std::string& name) {
  Checkpoint cp;
  cp.model_name = name;
  cp.spec = pi.spec;
  push_network_arrays(cp, pi.spec, pi.params, "");
  cp.arrays.push_back({"log_std", {static_cast<int32_t>(pi.log_std.size())}, pi.log_std});
  return cp;
}

policy::GaussianPolicy policy_from_checkpoint(const Checkpoint& cp) {
  policy::GaussianPolicy pi(cp.spec.input_dim(), cp.spec.output_dim(), 0, hidden_sizes(cp.spec));
  pi.params = pull_network_arrays(cp, cp.spec, "");
  pi.log_std = cp.array("log_std").data;
  return pi;
}

Checkpoint checkpoint_from_net(const epimodel::Net& net, const std::string& name) {
  Checkpoint cp;
  cp.model_name = name;
  cp.spec = net.spec;
  push_network_arrays(cp, net.spec, net.params, "");
  return cp;
}

epimodel::Net net_from_checkpoint(const Checkpoint& cp) {
  epimodel::Net net;
  net.spec = cp.spec;
  net.spec.validate();
  net.params = pull_network_arrays(cp, cp.spec, "");
  return net;
}

Checkpoint checkpoint_from_recurrent(const policy::RecurrentPolicy& pi, const std::string& name) {
  Checkpoint cp;
  cp.model_name = name;
  // Descriptive header: input -> hidden -> output.
  cp.spec = nn::NetworkSpec::mlp({pi.obs_dim(), pi.hidden_dim(), pi.act_dim()});
  const int h = pi.hidden_dim();
  const int in = pi.obs_dim() + h;
  cp.arrays.push_back({"wg", {h, in}, pi.wg});
  cp.arrays.push_back({"bg", {h}, pi.bg});
  cp.arrays.push_back({"wc", {h, in}, pi.wc});
  cp.arrays.push_back({"bc", {h}, pi.bc});
  cp.arrays.push_back({"wo", {pi.act_dim(), h}, pi.wo});
  cp.arrays.push_back({"bo", {pi.act_dim()}, pi.bo});
  cp.arrays.push_back({"log_std", {pi.act_dim()}, pi.log_std});
  return cp;
}

policy::RecurrentPolicy recurrent_from_checkpoint(const Checkpoint& cp) {
  if (cp.spec.layer_sizes.size() != 3) {
    throw std::runtime_error("recurrent checkpoint '" + cp.model_name + "': bad header");
  }
  policy::RecurrentPolicy pi(cp.spec.layer_sizes[0], cp.spec.layer_sizes[2], 0,
                             cp.spec.layer_sizes[1]);
  pi.wg = cp.array("wg").data;
  pi.bg = cp.array("bg").data;
  pi.wc = cp.array("wc").data;
  pi.bc = cp.array("bc").data;
  pi.wo = cp.array("wo").data;
  pi.bo = cp.array("bo").data;
  pi.log_std = cp.array("log_std").data;
  return pi;
}

// ---------------------------------------------------------------------------
// Dataset container

void store_dataset(const std::string& path, const dataset::TransitionDataset& ds,
                   const env::ParamGrid& grid) {
  if (!ds.frozen()) throw std::logic_error("store_dataset: dataset must be frozen");
  std::string out;
  out.append(kDatasetMagic, 8);
  put_u32(out, kCheckpointVersion);
  put_str(out, env::family_name(grid.family));
  put_u32(out, static_cast<uint32_t>(grid.num_params()));
  for (int p = 0; p < grid.num_params(); ++p) {
    put_f64(out, grid.train_values[p].front());
    put_f64(out, grid.train_values[p].back());
  }
  const auto& ts = ds.transitions();
  put_u64(out, ts.size());
  put_u32(out, static_cast<uint32_t>(ts.front().s.size()));
  put_u32(out, static_cast<uint32_t>(ts.front().a.size()));
  for (const dataset::Transition& t : ts) {
    for (double v : t.s) put_f64(out, v);
    for (double v : t.a) put_f64(out, v);
    for (double v : t.s_next) put_f64(out, v);
    put_u32(out, static_cast<uint32_t>(t.env_id));
    put_u32(out, static_cast<uint32_t>(t.vine_group));
  }
  // Explicit split indices: exact reconstruction without re-running the
  // split heuristic.
  put_u64(out, ds.train_indices().size());
  for (size_t i : ds.train_indices()) put_u64(out, i);
  put_u64(out, ds.val_indices().size());
  for (size_t i : ds.val_indices()) put_u64(out, i);
  write_file(path, out);
}

StoredDataset load_dataset(const std::string& path) {
  Reader r = read_file(path);
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kDatasetMagic, 8) != 0) {
    throw std::runtime_error("not a dataset file: " + path);
  }
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("dataset version mismatch in " + path + ": file has " +
                             std::to_string(version) + ", this build reads " +
                             std::to_string(kCheckpointVersion));
  }
  StoredDataset out;
  const env::Family fam = env::family_from_name(r.str());
  std::vector<std::pair<double, double>> ranges(r.u32());
  for (auto& [lo, hi] : ranges) {
    lo = r.f64();
    hi = r.f64();
  }
  out.grid = env::grid_make(fam, ranges);

  std::vector<dataset::Transition> ts(r.u64());
  const uint32_t sd = r.u32();
  const uint32_t ad = r.u32();
  for (dataset::Transition& t : ts) {
    t.s.resize(sd);
    for (double& v : t.s) v = r.f64();
    t.a.resize(ad);
    for (double& v : t.a) v = r.f64();
    t.s_next.resize(sd);
    for (double& v : t.s_next) v = r.f64();
    t.env_id = static_cast<int32_t>(r.u32());
    t.vine_group = static_cast<int32_t>(r.u32());
  }
  std::vector<size_t> train(r.u64());
  for (size_t& i : train) i = r.u64();
  std::vector<size_t> val(r.u64());
  for (size_t& i : val) i = r.u64();
  out.ds = dataset::restore(std::move(ts), std::move(train), std::move(val));
  return out;
}

void export_dataset_csv(const std::string& path, const dataset::TransitionDataset& ds) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (f == nullptr) throw std::runtime_error("cannot open csv file: " + path);
  const auto& ts = ds.transitions();
  const size_t sd = ts.front().s.size();
  const size_t ad = ts.front().a.size();
  std::fprintf(f, "env_id,vine_group,split");
  for (size_t i = 0; i < sd; ++i) std::fprintf(f, ",s_%zu", i);
  for (size_t i = 0; i < ad; ++i) std::fprintf(f, ",a_%zu", i);
  for (size_t i = 0; i < sd; ++i) std::fprintf(f, ",sn_%zu", i);
  std::fprintf(f, "\n");
  std::vector<char> split(ts.size(), '?');
  for (size_t i : ds.train_indices()) split[i] = 't';
  for (size_t i : ds.val_indices()) split[i] = 'v';
  for (size_t i = 0; i < ts.size(); ++i) {
    std::fprintf(f, "%d,%d,%c", ts[i].env_id, ts[i].vine_group, split[i]);
    for (double v : ts[i].s) std::fprintf(f, ",%.17g", v);
    for (double v : ts[i].a) std::fprintf(f, ",%.17g", v);
    for (double v : ts[i].s_next) std::fprintf(f, ",%.17g", v);
    std::fprintf(f, "\n");
  }
  std::fclose(f);
}

void write_trajectory_csv(const std::string& path, const std::vector<policy::Vec>& states,
                          const std::vector<policy::Vec>& actions,
                          std::span<const double> rewards, const std::vector<bool>& dones) {
  if (states.size() != actions.size() || states.size() != rewards.size() ||
      states.size() != dones.size()) {
    throw std::invalid_argument("write_trajectory_csv: length mismatch");
  }
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (f == nullptr) throw std::runtime_error("cannot open csv file: " + path);
  const size_t sd = states.empty() ? 0 : states.front().size();
  const size_t ad = actions.empty() ? 0 : actions.front().size();
  std::fprintf(f, "step");
  for (size_t i = 0; i < sd; ++i) std::fprintf(f, ",state_%zu", i);
  for (size_t i = 0; i < ad; ++i) std::fprintf(f, ",action_%zu", i);
  std::fprintf(f, ",reward,done\n");
  for (size_t t = 0; t < states.size(); ++t) {
    std::fprintf(f, "%zu", t);
    for (double v : states[t]) std::fprintf(f, ",%.17g", v);
    for (double v : actions[t]) std::fprintf(f, ",%.17g", v);
    std::fprintf(f, ",%.17g,%d\n", rewards[t], dones[t] ? 1 : 0);
  }
  std::fclose(f);
}

}  // namespace epi::config

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <string>
#include <vector>

#include "epi/config.hpp"

using namespace epi;
using policy::Vec;

namespace {

std::string tmp_path(const char* name) { return std::string("/tmp/epi_cfg_") + name; }

dataset::TransitionDataset tiny_dataset(env::ParamGrid* grid_out) {
  auto grid = env::grid_make(env::Family::SlidePuck, env::default_ranges(env::Family::SlidePuck));
  policy::GaussianPolicy seed_pi(10, 2, 9);
  auto ts = dataset::collect_epsilon_greedy(seed_pi, grid, 600, 0.5, 11);
  if (grid_out != nullptr) *grid_out = grid;
  return dataset::split_and_freeze(std::move(ts), 0.2, 13);
}

}  // namespace

TEST_CASE("policy checkpoint round-trips bit-exactly") {
  policy::GaussianPolicy pi(10, 2, 42, {16, 8}, -0.3);
  auto cp = config::checkpoint_from_policy(pi, "pi_test");
  const std::string path = tmp_path("policy.ckpt");
  config::store_checkpoint(path, cp);
  auto cp2 = config::load_checkpoint(path);
  CHECK(cp == cp2);
  auto pi2 = config::policy_from_checkpoint(cp2);
  CHECK(pi2.obs_dim() == pi.obs_dim());
  CHECK(pi2.act_dim() == pi.act_dim());
  CHECK(pi2.spec.layer_sizes == pi.spec.layer_sizes);
  CHECK(pi2.params == pi.params);
  CHECK(pi2.log_std == pi.log_std);
  const Vec obs(10, 0.37);
  CHECK(pi2.mean_action(obs) == pi.mean_action(obs));
  std::remove(path.c_str());
}

TEST_CASE("net checkpoint round-trips bit-exactly") {
  epimodel::Net net;
  net.spec = nn::NetworkSpec::mlp({12, 7, 3});
  net.params = nn::init_params(net.spec, 5);
  auto cp = config::checkpoint_from_net(net, "psi");
  const std::string path = tmp_path("net.ckpt");
  config::store_checkpoint(path, cp);
  auto net2 = config::net_from_checkpoint(config::load_checkpoint(path));
  CHECK(net2.spec.layer_sizes == net.spec.layer_sizes);
  CHECK(net2.params == net.params);
  const Vec in(12, -0.25);
  CHECK(net2(in) == net(in));
  std::remove(path.c_str());
}

TEST_CASE("recurrent checkpoint round-trips bit-exactly") {
  policy::RecurrentPolicy pi(10, 2, 77);
  auto cp = config::checkpoint_from_recurrent(pi, "rnn");
  const std::string path = tmp_path("rnn.ckpt");
  config::store_checkpoint(path, cp);
  auto pi2 = config::recurrent_from_checkpoint(config::load_checkpoint(path));
  CHECK(pi2.obs_dim() == pi.obs_dim());
  CHECK(pi2.act_dim() == pi.act_dim());
  CHECK(pi2.hidden_dim() == pi.hidden_dim());
  CHECK(pi2.wg == pi.wg);
  CHECK(pi2.bg == pi.bg);
  CHECK(pi2.wc == pi.wc);
  CHECK(pi2.bc == pi.bc);
  CHECK(pi2.wo == pi.wo);
  CHECK(pi2.bo == pi.bo);
  CHECK(pi2.log_std == pi.log_std);
  std::vector<Vec> episode(5, Vec(10, 0.1));
  CHECK(pi2.forward_episode(episode) == pi.forward_episode(episode));
  std::remove(path.c_str());
}

TEST_CASE("missing or truncated checkpoint raises ArtifactError with the path") {
  const std::string missing = tmp_path("does_not_exist.ckpt");
  CHECK_THROWS_AS(config::load_checkpoint(missing), config::ArtifactError);
  try {
    config::load_checkpoint(missing);
  } catch (const config::ArtifactError& e) {
    CHECK(e.path == missing);
    CHECK(std::string(e.what()).find(missing) != std::string::npos);
  }
  const std::string bad = tmp_path("truncated.ckpt");
  std::FILE* f = std::fopen(bad.c_str(), "wb");
  std::fwrite("XX", 1, 2, f);
  std::fclose(f);
  CHECK_THROWS_AS(config::load_checkpoint(bad), std::runtime_error);
  std::remove(bad.c_str());
}

TEST_CASE("checkpoint array lookup throws on an unknown name") {
  policy::GaussianPolicy pi(4, 2, 1);
  auto cp = config::checkpoint_from_policy(pi, "pi");
  CHECK_THROWS(cp.array("nonexistent_array"));
}

TEST_CASE("config text round-trips through serialize/parse") {
  config::RunConfig cfg;
  cfg.family = "spring_hopper";
  cfg.transitions = 1234;
  cfg.epsilon = 0.35;
  cfg.train.epi_iterations = 7;
  cfg.train.use_vine = false;
  cfg.epi.embed_dim = 3;
  cfg.epi.reward_flip_sign = true;
  cfg.eval_seeds = {5, 9};
  const std::string text = config::serialize_config(cfg);
  auto cfg2 = config::parse_config(text);
  CHECK(cfg2.family == cfg.family);
  CHECK(cfg2.transitions == cfg.transitions);
  CHECK(cfg2.epsilon == cfg.epsilon);
  CHECK(cfg2.train.epi_iterations == cfg.train.epi_iterations);
  CHECK(cfg2.train.use_vine == cfg.train.use_vine);
  CHECK(cfg2.epi.embed_dim == cfg.epi.embed_dim);
  CHECK(cfg2.epi.reward_flip_sign == cfg.epi.reward_flip_sign);
  CHECK(cfg2.eval_seeds == cfg.eval_seeds);
  // A second round trip is textually stable.
  CHECK(config::serialize_config(cfg2) == text);
}

TEST_CASE("unknown config keys and sections raise ConfigError naming the key") {
  CHECK_THROWS_AS(config::parse_config("[training]\nlr_sched = cosine\n"), config::ConfigError);
  try {
    config::parse_config("[training]\nlr_sched = cosine\n");
  } catch (const config::ConfigError& e) {
    CHECK(e.key == "training.lr_sched");
    CHECK(std::string(e.what()).find("lr_sched") != std::string::npos);
  }
  CHECK_THROWS_AS(config::parse_config("[nonsense]\nx = 1\n"), config::ConfigError);
  CHECK_THROWS_AS(config::parse_config("[env]\nfamily = warp_drive\n"), config::ConfigError);
  CHECK_THROWS_AS(config::parse_config("[env]\nfamily\n"), config::ConfigError);
  CHECK_THROWS_AS(config::parse_config("[dataset]\ntransitions = lots\n"), config::ConfigError);
}

TEST_CASE("load_config: missing file raises ArtifactError; comments are ignored") {
  CHECK_THROWS_AS(config::load_config("/tmp/epi_cfg_no_such_file.cfg"), config::ArtifactError);
  const std::string path = tmp_path("ok.cfg");
  std::FILE* f = std::fopen(path.c_str(), "w");
  std::fprintf(f, "# comment line\n[dataset]\ntransitions = 777  # trailing comment\n\n");
  std::fclose(f);
  auto cfg = config::load_config(path);
  CHECK(cfg.transitions == 777);
  std::remove(path.c_str());
}

TEST_CASE("apply_override changes exactly one key") {
  config::RunConfig cfg;
  const config::RunConfig defaults;
  config::apply_override(cfg, "training.epi_iterations=3");
  CHECK(cfg.train.epi_iterations == 3);
  // Everything else still serializes like the defaults except the one line.
  std::string a = config::serialize_config(defaults);
  std::string b = config::serialize_config(cfg);
  int diff_lines = 0;
  size_t pa = 0, pb = 0;
  while (pa != std::string::npos || pb != std::string::npos) {
    const size_t na = a.find('\n', pa), nb = b.find('\n', pb);
    const std::string la = a.substr(pa, na - pa), lb = b.substr(pb, nb - pb);
    if (la != lb) ++diff_lines;
    pa = na == std::string::npos ? na : na + 1;
    pb = nb == std::string::npos ? nb : nb + 1;
    if (pa >= a.size() && pb >= b.size()) break;
  }
  CHECK(diff_lines == 1);
  CHECK_THROWS_AS(config::apply_override(cfg, "no_equals_sign"), config::ConfigError);
  CHECK_THROWS_AS(config::apply_override(cfg, "training.bogus=1"), config::ConfigError);
}

TEST_CASE("dataset container round-trips transitions, split, and grid") {
  env::ParamGrid grid;
  auto ds = tiny_dataset(&grid);
  const std::string path = tmp_path("dataset.bin");
  config::store_dataset(path, ds, grid);
  auto loaded = config::load_dataset(path);

  CHECK(loaded.grid.family == grid.family);
  CHECK(loaded.grid.names == grid.names);
  CHECK(loaded.grid.train_values == grid.train_values);
  CHECK(loaded.grid.test_values == grid.test_values);

  const auto& t1 = ds.transitions();
  const auto& t2 = loaded.ds.transitions();
  REQUIRE(t1.size() == t2.size());
  for (size_t i = 0; i < t1.size(); ++i) {
    CHECK(t1[i].s == t2[i].s);
    CHECK(t1[i].a == t2[i].a);
    CHECK(t1[i].s_next == t2[i].s_next);
    CHECK(t1[i].env_id == t2[i].env_id);
    CHECK(t1[i].vine_group == t2[i].vine_group);
  }
  CHECK(loaded.ds.train_indices() == ds.train_indices());
  CHECK(loaded.ds.val_indices() == ds.val_indices());
  CHECK(loaded.ds.frozen());
  // Stats are recomputed from the restored training split: identical values.
  CHECK(loaded.ds.stats().s_mean == ds.stats().s_mean);
  CHECK(loaded.ds.stats().s_std == ds.stats().s_std);
  CHECK(loaded.ds.stats().a_mean == ds.stats().a_mean);
  CHECK(loaded.ds.stats().sn_std == ds.stats().sn_std);
  std::remove(path.c_str());

  CHECK_THROWS_AS(config::load_dataset("/tmp/epi_cfg_no_dataset.bin"), config::ArtifactError);
}

TEST_CASE("dataset csv export writes one row per transition") {
  auto ds = tiny_dataset(nullptr);
  const std::string path = tmp_path("dataset.csv");
  config::export_dataset_csv(path, ds);
  std::FILE* f = std::fopen(path.c_str(), "r");
  REQUIRE(f != nullptr);
  char line[4096];
  REQUIRE(std::fgets(line, sizeof line, f) != nullptr);
  CHECK(std::string(line).starts_with("env_id,vine_group,split"));
  int rows = 0;
  while (std::fgets(line, sizeof line, f) != nullptr) ++rows;
  std::fclose(f);
  CHECK(rows == static_cast<int>(ds.transitions().size()));
  std::remove(path.c_str());
}

TEST_CASE("trajectory csv layout") {
  std::vector<Vec> states = {{0.0, 1.0}, {2.0, 3.0}};
  std::vector<Vec> actions = {{0.5}, {-0.5}};
  Vec rewards = {1.0, -2.0};
  std::vector<bool> dones = {false, true};
  const std::string path = tmp_path("traj.csv");
  config::write_trajectory_csv(path, states, actions, rewards, dones);
  std::FILE* f = std::fopen(path.c_str(), "r");
  REQUIRE(f != nullptr);
  char line[512];
  REQUIRE(std::fgets(line, sizeof line, f) != nullptr);
  CHECK(std::string(line) == "step,state_0,state_1,action_0,reward,done\n");
  REQUIRE(std::fgets(line, sizeof line, f) != nullptr);
  CHECK(std::string(line) == "0,0,1,0.5,1,0\n");
  REQUIRE(std::fgets(line, sizeof line, f) != nullptr);
  CHECK(std::string(line) == "1,2,3,-0.5,-2,1\n");
  CHECK(std::fgets(line, sizeof line, f) == nullptr);
  std::fclose(f);
  std::remove(path.c_str());
}

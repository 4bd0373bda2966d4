// Command-line front end: configuration, run orchestration, persistence.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "epi/config.hpp"
#include "epi/eval.hpp"
#include "epi/threads.hpp"

namespace fs = std::filesystem;
using namespace epi;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "run";
  std::optional<uint64_t> seed;
  std::vector<std::string> overrides;
  int threads = 0;  // 0 = EPI_THREADS env var or 1
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Configuration file");
  cmd->add_option("--out", args.out_dir, "Run directory")->capture_default_str();
  cmd->add_option("--seed", args.seed, "Master seed (overrides training.seed)");
  cmd->add_option("--override", args.overrides, "Config override, section.key=value");
  cmd->add_option("--threads", args.threads, "Worker thread cap (default: EPI_THREADS or 1)");
}

config::RunConfig resolve_config(const CommonArgs& args) {
  config::RunConfig cfg =
      args.config_path.empty() ? config::RunConfig{} : config::load_config(args.config_path);
  for (const std::string& ov : args.overrides) config::apply_override(cfg, ov);
  if (args.seed) cfg.train.seed = *args.seed;
  int threads = args.threads;
  if (threads <= 0) {
    const char* env_threads = std::getenv("EPI_THREADS");
    threads = env_threads != nullptr ? std::atoi(env_threads) : 1;
  }
  threads::set_max_threads(std::max(1, threads));
  return cfg;
}

// Every command snapshots its effective config and lists produced files.
class RunDir {
 public:
  RunDir(const std::string& dir, const config::RunConfig& cfg) : dir_(dir) {
    fs::create_directories(dir_);
    std::ofstream out(path("config.txt"));
    out << config::serialize_config(cfg);
    produced_.push_back("config.txt");
  }

  std::string path(const std::string& name) const { return (fs::path(dir_) / name).string(); }

  void produced(const std::string& name) { produced_.push_back(name); }

  // Input artifact: must already exist.
  std::string require(const std::string& name) const {
    const std::string p = path(name);
    if (!fs::exists(p)) throw config::ArtifactError(p);
    return p;
  }

  ~RunDir() {
    std::ofstream out(path("manifest.txt"));
    for (const std::string& p : produced_) out << p << "\n";
  }

 private:
  std::string dir_;
  std::vector<std::string> produced_;
};

dataset::TransitionDataset build_dataset(const config::RunConfig& cfg,
                                         const policy::GaussianPolicy& seed_policy,
                                         const env::ParamGrid& grid, bool with_vine) {
  std::vector<dataset::Transition> ts = dataset::collect_epsilon_greedy(
      seed_policy, grid, cfg.transitions, cfg.epsilon, Rng::stream(cfg.train.seed, 21).next_u64());
  if (with_vine && cfg.vine_anchors > 0) {
    std::vector<dataset::Transition> vine = dataset::collect_vine(
        seed_policy, grid, cfg.vine_anchors, Rng::stream(cfg.train.seed, 22).next_u64());
    ts.insert(ts.end(), std::make_move_iterator(vine.begin()),
              std::make_move_iterator(vine.end()));
  }
  return dataset::split_and_freeze(std::move(ts), cfg.val_fraction,
                                   Rng::stream(cfg.train.seed, 23).next_u64());
}

policy::GaussianPolicy pretrain_seed(const config::RunConfig& cfg, const env::ParamGrid& grid) {
  return dataset::pretrain_seed_policy(
      grid.family, grid.cell_params(env::GridSide::train, grid.center_cell()),
      cfg.train.seed_policy_iterations, cfg.train.seed_policy_batch,
      Rng::stream(cfg.train.seed, 20).next_u64());
}

// ---------------------------------------------------------------------------
// Commands

int cmd_pretrain_seed(const CommonArgs& args) {
  const config::RunConfig cfg = resolve_config(args);
  RunDir run(args.out_dir, cfg);
  const env::ParamGrid grid = cfg.make_grid();
  const policy::GaussianPolicy pi = pretrain_seed(cfg, grid);
  config::store_checkpoint(run.path("seed_policy.ckpt"),
                           config::checkpoint_from_policy(pi, "seed_policy"));
  run.produced("seed_policy.ckpt");
  std::printf("wrote %s\n", run.path("seed_policy.ckpt").c_str());
  return 0;
}

int cmd_collect_dataset(const CommonArgs& args) {
  const config::RunConfig cfg = resolve_config(args);
  RunDir run(args.out_dir, cfg);
  const env::ParamGrid grid = cfg.make_grid();
  const policy::GaussianPolicy seed_policy =
      config::policy_from_checkpoint(config::load_checkpoint(run.require("seed_policy.ckpt")));
  const dataset::TransitionDataset ds = build_dataset(cfg, seed_policy, grid, cfg.train.use_vine);
  config::store_dataset(run.path("dataset.bin"), ds, grid);
  config::export_dataset_csv(run.path("dataset.csv"), ds);
  run.produced("dataset.bin");
  run.produced("dataset.csv");
  std::printf("dataset: %zu transitions (%zu train / %zu val)\n", ds.transitions().size(),
              ds.train_indices().size(), ds.val_indices().size());
  return 0;
}

int cmd_train_epi(const CommonArgs& args) {
  const config::RunConfig cfg = resolve_config(args);
  RunDir run(args.out_dir, cfg);
  const config::StoredDataset stored = config::load_dataset(run.require("dataset.bin"));
  training::EpiArtifacts art = training::train_epi(cfg.train, stored.ds, stored.grid, cfg.epi);
  config::store_checkpoint(run.path("pi_epi.ckpt"),
                           config::checkpoint_from_policy(art.pi_epi, "pi_epi"));
  config::store_checkpoint(run.path("psi.ckpt"), config::checkpoint_from_net(art.models.psi, "psi"));
  config::store_checkpoint(run.path("f.ckpt"), config::checkpoint_from_net(art.models.f, "f"));
  config::store_checkpoint(run.path("f_epi.ckpt"),
                           config::checkpoint_from_net(art.models.f_epi, "f_epi"));
  art.metrics.write_csv(run.path("metrics_train_epi.csv"));
  for (const char* p : {"pi_epi.ckpt", "psi.ckpt", "f.ckpt", "f_epi.ckpt",
                        "metrics_train_epi.csv"}) {
    run.produced(p);
  }
  std::printf("train_epi done: val_loss_f=%.6g val_loss_epi=%.6g\n", art.models.val_loss_f,
              art.models.val_loss_epi);
  return 0;
}

int cmd_train_task(const CommonArgs& args) {
  const config::RunConfig cfg = resolve_config(args);
  RunDir run(args.out_dir, cfg);
  const config::StoredDataset stored = config::load_dataset(run.require("dataset.bin"));
  const policy::GaussianPolicy pi_epi =
      config::policy_from_checkpoint(config::load_checkpoint(run.require("pi_epi.ckpt")));
  const epimodel::Net psi =
      config::net_from_checkpoint(config::load_checkpoint(run.require("psi.ckpt")));
  training::Metrics metrics;
  const policy::GaussianPolicy pi_task =
      training::train_task(cfg.train, pi_epi, psi, stored.grid, stored.ds.stats(), &metrics);
  config::store_checkpoint(run.path("pi_task.ckpt"),
                           config::checkpoint_from_policy(pi_task, "pi_task"));
  metrics.write_csv(run.path("metrics_train_task.csv"));
  run.produced("pi_task.ckpt");
  run.produced("metrics_train_task.csv");
  return 0;
}

int cmd_train_baseline(const CommonArgs& args, const std::string& kind_name) {
  const config::RunConfig cfg = resolve_config(args);
  const training::BaselineKind kind = training::baseline_from_name(kind_name);
  RunDir run(args.out_dir, cfg);
  const env::ParamGrid grid = cfg.make_grid();
  training::Metrics metrics;
  const std::string stem = "baseline_" + kind_name;
  if (kind == training::BaselineKind::system_id) {
    const training::SystemIdArtifacts art = training::train_system_id(cfg.train, grid, &metrics);
    config::store_checkpoint(run.path(stem + "_oracle.ckpt"),
                             config::checkpoint_from_policy(*art.oracle, "system_id_oracle"));
    config::store_checkpoint(run.path("osi.ckpt"), config::checkpoint_from_net(art.osi, "osi"));
    run.produced(stem + "_oracle.ckpt");
    run.produced("osi.ckpt");
    std::printf("system_id: osi_mse=%.6g constant_mean_mse=%.6g\n", art.final_mse,
                art.constant_mean_mse);
  } else {
    const training::BaselinePolicy bp = training::train_baseline(kind, cfg.train, grid, &metrics);
    if (kind == training::BaselineKind::recurrent) {
      config::store_checkpoint(run.path(stem + ".ckpt"),
                               config::checkpoint_from_recurrent(*bp.rnn, kind_name));
    } else {
      config::store_checkpoint(run.path(stem + ".ckpt"),
                               config::checkpoint_from_policy(*bp.mlp, kind_name));
    }
    run.produced(stem + ".ckpt");
    if (kind == training::BaselineKind::direct_reward) {
      config::store_checkpoint(run.path(stem + "_probe.ckpt"),
                               config::checkpoint_from_policy(*bp.probe, kind_name + "_probe"));
      run.produced(stem + "_probe.ckpt");
    }
  }
  metrics.write_csv(run.path("metrics_" + stem + ".csv"));
  run.produced("metrics_" + stem + ".csv");
  return 0;
}

// Loaded artifacts backing an EvalBundle; keeps everything the bundle
// points at alive.
struct LoadedMethod {
  training::EvalBundle bundle;
  std::optional<policy::GaussianPolicy> pi_epi, pi_task;
  std::optional<epimodel::Net> psi;
  std::optional<dataset::TransitionDataset> ds;
  training::BaselinePolicy baseline;
  training::SystemIdArtifacts sysid;
};

void load_method(LoadedMethod& m, const RunDir& run, const std::string& method,
                 const env::ParamGrid& grid, bool reset_after_probe) {
  m.bundle.grid = &grid;
  if (method == "epi") {
    m.pi_epi = config::policy_from_checkpoint(config::load_checkpoint(run.require("pi_epi.ckpt")));
    m.psi = config::net_from_checkpoint(config::load_checkpoint(run.require("psi.ckpt")));
    m.pi_task =
        config::policy_from_checkpoint(config::load_checkpoint(run.require("pi_task.ckpt")));
    m.ds = config::load_dataset(run.require("dataset.bin")).ds;
    m.bundle.kind = training::EvalBundle::Kind::epi;
    m.bundle.pi_epi = &*m.pi_epi;
    m.bundle.psi = &*m.psi;
    m.bundle.pi_task = &*m.pi_task;
    m.bundle.stats = &m.ds->stats();
    m.bundle.reset_after_probe = reset_after_probe;
    return;
  }
  const training::BaselineKind kind = training::baseline_from_name(method);
  const std::string stem = "baseline_" + method;
  if (kind == training::BaselineKind::system_id) {
    m.sysid.oracle = std::make_shared<policy::GaussianPolicy>(config::policy_from_checkpoint(
        config::load_checkpoint(run.require(stem + "_oracle.ckpt"))));
    m.sysid.osi = config::net_from_checkpoint(config::load_checkpoint(run.require("osi.ckpt")));
    m.bundle.kind = training::EvalBundle::Kind::system_id;
    m.bundle.sysid = &m.sysid;
    return;
  }
  m.baseline.kind = kind;
  if (kind == training::BaselineKind::recurrent) {
    m.baseline.rnn = std::make_shared<policy::RecurrentPolicy>(
        config::recurrent_from_checkpoint(config::load_checkpoint(run.require(stem + ".ckpt"))));
  } else {
    m.baseline.mlp = std::make_shared<policy::GaussianPolicy>(
        config::policy_from_checkpoint(config::load_checkpoint(run.require(stem + ".ckpt"))));
    if (kind == training::BaselineKind::direct_reward) {
      m.baseline.probe = std::make_shared<policy::GaussianPolicy>(config::policy_from_checkpoint(
          config::load_checkpoint(run.require(stem + "_probe.ckpt"))));
    }
  }
  m.bundle.kind = training::EvalBundle::Kind::baseline;
  m.bundle.baseline = kind;
  m.bundle.baseline_policy = &m.baseline;
}

int cmd_evaluate(const CommonArgs& args, const std::string& method, const std::string& side) {
  const config::RunConfig cfg = resolve_config(args);
  RunDir run(args.out_dir, cfg);
  const env::ParamGrid grid = cfg.make_grid();
  LoadedMethod m;
  load_method(m, run, method, grid, cfg.train.reset_after_probe);
  const eval::EvalReport report =
      eval::evaluate(m.bundle, side == "train" ? env::GridSide::train : env::GridSide::test,
                     cfg.episodes_per_env, cfg.eval_seeds);
  const std::string name = "eval_" + method + ".csv";
  std::FILE* f = std::fopen(run.path(name).c_str(), "w");
  if (f == nullptr) throw std::runtime_error("cannot open " + run.path(name));
  std::fprintf(f, "method,metric,mean,std_across_seeds,mean_return,episodes");
  for (size_t s = 0; s < report.per_seed_mean.size(); ++s) std::fprintf(f, ",seed_%zu", s);
  std::fprintf(f, "\n%s,%s,%.17g,%.17g,%.17g,%d", method.c_str(), report.metric.c_str(),
               report.mean, report.std_across_seeds, report.mean_return, report.episodes);
  for (double v : report.per_seed_mean) std::fprintf(f, ",%.17g", v);
  std::fprintf(f, "\n");
  std::fclose(f);
  run.produced(name);
  std::printf("%s %s on %s grid: %.6g +- %.6g\n", method.c_str(), report.metric.c_str(),
              side.c_str(), report.mean, report.std_across_seeds);
  return 0;
}

int cmd_sweep(const CommonArgs& args, const std::string& method, const std::string& param,
              double lo, double hi) {
  const config::RunConfig cfg = resolve_config(args);
  RunDir run(args.out_dir, cfg);
  const env::ParamGrid grid = cfg.make_grid();
  LoadedMethod m;
  load_method(m, run, method, grid, cfg.train.reset_after_probe);
  int pidx = -1;
  for (int p = 0; p < grid.num_params(); ++p) {
    if (grid.names[p] == param) pidx = p;
  }
  if (pidx < 0) throw config::ConfigError(param, "unknown sweep parameter");
  const double train_lo = grid.train_values[pidx].front();
  const double train_hi = grid.train_values[pidx].back();
  const double span = train_hi - train_lo;
  if (lo <= 0.0) lo = std::max(0.25 * train_lo, train_lo - 0.5 * span);
  if (hi <= 0.0) hi = train_hi + 0.5 * span;
  const std::vector<eval::SweepPoint> points = eval::sweep_parameter(
      m.bundle, param, cfg.sweep_points, lo, hi, cfg.episodes_per_env, cfg.eval_seeds);
  const std::string stem = "sweep_" + method + "_" + param;
  eval::write_sweep_csv(run.path(stem + ".csv"), param, points);
  eval::write_sweep_svg(run.path(stem + ".svg"), param, points);
  run.produced(stem + ".csv");
  run.produced(stem + ".svg");
  return 0;
}

int cmd_export_embeddings(const CommonArgs& args) {
  const config::RunConfig cfg = resolve_config(args);
  RunDir run(args.out_dir, cfg);
  const config::StoredDataset stored = config::load_dataset(run.require("dataset.bin"));
  const policy::GaussianPolicy pi_epi =
      config::policy_from_checkpoint(config::load_checkpoint(run.require("pi_epi.ckpt")));
  const epimodel::Net psi =
      config::net_from_checkpoint(config::load_checkpoint(run.require("psi.ckpt")));
  const eval::EmbeddingDump dump =
      eval::export_embeddings(pi_epi, psi, stored.grid, stored.ds.stats(),
                              cfg.embed_probes_per_env, Rng::stream(cfg.train.seed, 31).next_u64());
  eval::write_embeddings_csv(run.path("embeddings.csv"), dump);
  run.produced("embeddings.csv");
  std::printf("separation_score=%.6g silhouette=%.6g\n", eval::embedding_separation_score(dump),
              eval::silhouette_score(dump));
  return 0;
}

// Full Table 1 analogue: per seed, train every method and evaluate on the
// held-out grid; aggregate across seeds.
int cmd_reproduce_table1(const CommonArgs& args) {
  const config::RunConfig cfg0 = resolve_config(args);
  RunDir run(args.out_dir, cfg0);
  const env::ParamGrid grid = cfg0.make_grid();
  training::Metrics metrics;

  const std::vector<std::string> methods = {
      "simple",      "invariant",   "oracle",
      "random_interaction", "history", "recurrent",
      "system_id",   "direct_reward", "epi",
      "epi_no_vine", "epi_no_regularization", "epi_no_vine_no_regularization"};
  std::map<std::string, std::vector<double>> per_seed;

  for (const uint64_t seed : cfg0.eval_seeds) {
    config::RunConfig cfg = cfg0;
    cfg.train.seed = Rng::stream(cfg0.train.seed, seed).next_u64();
    const std::string tag = "seed" + std::to_string(seed) + "/";

    const policy::GaussianPolicy seed_policy = pretrain_seed(cfg, grid);
    const dataset::TransitionDataset ds_full = build_dataset(cfg, seed_policy, grid, true);
    const dataset::TransitionDataset ds_novine = build_dataset(cfg, seed_policy, grid, false);

    auto eval_bundle = [&](const std::string& method, const training::EvalBundle& bundle) {
      const eval::EvalReport r =
          eval::evaluate(bundle, env::GridSide::test, cfg.episodes_per_env, {seed});
      per_seed[method].push_back(r.mean);
      metrics.append(tag + "table1", 0, method, r.mean);
    };

    // EPI and its ablations.
    for (const std::string& variant :
         {std::string("epi"), std::string("epi_no_vine"), std::string("epi_no_regularization"),
          std::string("epi_no_vine_no_regularization")}) {
      config::RunConfig vcfg = cfg;
      const bool vine = variant.find("no_vine") == std::string::npos;
      vcfg.train.use_vine = vine;
      vcfg.train.use_separation = variant.find("no_regularization") == std::string::npos;
      const dataset::TransitionDataset& ds = vine ? ds_full : ds_novine;
      training::EpiArtifacts art = training::train_epi(vcfg.train, ds, grid, vcfg.epi);
      for (const auto& row : art.metrics.rows) {
        metrics.append(tag + variant + "/" + row.stage, row.iteration, row.key, row.value);
      }
      const policy::GaussianPolicy pi_task =
          training::train_task(vcfg.train, art.pi_epi, art.models.psi, grid, ds.stats(), nullptr);
      training::EvalBundle bundle;
      bundle.kind = training::EvalBundle::Kind::epi;
      bundle.grid = &grid;
      bundle.pi_epi = &art.pi_epi;
      bundle.psi = &art.models.psi;
      bundle.pi_task = &pi_task;
      bundle.stats = &ds.stats();
      bundle.reset_after_probe = vcfg.train.reset_after_probe;
      eval_bundle(variant, bundle);
    }

    // Baselines.
    for (const std::string& method : methods) {
      if (method.starts_with("epi")) continue;
      training::EvalBundle bundle;
      bundle.grid = &grid;
      training::BaselinePolicy bp;
      training::SystemIdArtifacts sysid;
      if (method == "system_id") {
        sysid = training::train_system_id(cfg.train, grid, nullptr);
        metrics.append(tag + "system_id", 0, "osi_mse", sysid.final_mse);
        bundle.kind = training::EvalBundle::Kind::system_id;
        bundle.sysid = &sysid;
      } else {
        bp = training::train_baseline(training::baseline_from_name(method), cfg.train, grid,
                                      nullptr);
        bundle.kind = training::EvalBundle::Kind::baseline;
        bundle.baseline = bp.kind;
        bundle.baseline_policy = &bp;
      }
      eval_bundle(method, bundle);
    }
  }

  // Aggregate: 12 method rows + the oracle reference row at the bottom.
  std::FILE* f = std::fopen(run.path("table1.csv").c_str(), "w");
  if (f == nullptr) throw std::runtime_error("cannot open " + run.path("table1.csv"));
  std::fprintf(f, "method,metric,mean,std_across_seeds\n");
  const std::string metric =
      grid.family == env::Family::SlidePuck ? "final_distance" : "episode_return";
  auto emit = [&](const std::string& name, const std::string& method) {
    const std::vector<double>& xs = per_seed[method];
    double mean = 0.0;
    for (double x : xs) mean += x / xs.size();
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const double sd = xs.size() > 1 ? std::sqrt(ss / (xs.size() - 1)) : 0.0;
    std::fprintf(f, "%s,%s,%.17g,%.17g\n", name.c_str(), metric.c_str(), mean, sd);
  };
  for (const std::string& method : methods) emit(method, method);
  emit("oracle_reference", "oracle");
  std::fclose(f);
  metrics.write_csv(run.path("metrics.csv"));
  run.produced("table1.csv");
  run.produced("metrics.csv");
  std::printf("wrote %s (13 rows)\n", run.path("table1.csv").c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Environment-probing interaction policies: training and evaluation pipeline"};
  app.require_subcommand(0, 1);
  bool print_defaults = false;
  app.add_flag("--print-defaults", print_defaults, "Print the default configuration and exit");

  CommonArgs args;
  std::string baseline_kind, method = "epi", side = "test", sweep_param;
  double sweep_lo = 0.0, sweep_hi = 0.0;

  CLI::App* c_pretrain = app.add_subcommand("pretrain-seed", "Train the seed policy");
  CLI::App* c_collect = app.add_subcommand("collect-dataset", "Collect the transition dataset");
  CLI::App* c_epi = app.add_subcommand("train-epi", "Train the probing policy and models");
  CLI::App* c_task = app.add_subcommand("train-task", "Train the embedding-conditioned policy");
  CLI::App* c_base = app.add_subcommand("train-baseline", "Train a baseline policy");
  c_base->add_option("kind", baseline_kind, "Baseline kind")->required();
  CLI::App* c_eval = app.add_subcommand("evaluate", "Evaluate a trained method");
  c_eval->add_option("--method", method, "Method to evaluate")->capture_default_str();
  c_eval->add_option("--side", side, "Grid side: train or test")->capture_default_str();
  CLI::App* c_sweep = app.add_subcommand("sweep", "Out-of-range parameter sweep");
  c_sweep->add_option("--method", method, "Method to evaluate")->capture_default_str();
  c_sweep->add_option("--param", sweep_param, "Parameter to sweep")->required();
  c_sweep->add_option("--lo", sweep_lo, "Sweep lower bound");
  c_sweep->add_option("--hi", sweep_hi, "Sweep upper bound");
  CLI::App* c_embed = app.add_subcommand("export-embeddings", "Dump probe embeddings");
  CLI::App* c_table = app.add_subcommand("reproduce-table1", "Train and evaluate every method");

  for (CLI::App* cmd :
       {c_pretrain, c_collect, c_epi, c_task, c_base, c_eval, c_sweep, c_embed, c_table}) {
    add_common(cmd, args);
  }

  CLI11_PARSE(app, argc, argv);

  if (print_defaults) {
    std::fputs(config::serialize_config(config::RunConfig{}).c_str(), stdout);
    return 0;
  }
  if (app.get_subcommands().empty()) {
    std::fputs(app.help().c_str(), stderr);
    return 1;
  }

  try {
    if (c_pretrain->parsed()) return cmd_pretrain_seed(args);
    if (c_collect->parsed()) return cmd_collect_dataset(args);
    if (c_epi->parsed()) return cmd_train_epi(args);
    if (c_task->parsed()) return cmd_train_task(args);
    if (c_base->parsed()) return cmd_train_baseline(args, baseline_kind);
    if (c_eval->parsed()) return cmd_evaluate(args, method, side);
    if (c_sweep->parsed()) return cmd_sweep(args, method, sweep_param, sweep_lo, sweep_hi);
    if (c_embed->parsed()) return cmd_export_embeddings(args);
    if (c_table->parsed()) return cmd_reproduce_table1(args);
  } catch (const config::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const config::ArtifactError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

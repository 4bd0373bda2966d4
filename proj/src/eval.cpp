#include "epi/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "epi/threads.hpp"

namespace epi::eval {

namespace {

double family_metric(env::Family family, const training::EpisodeOutcome& out) {
  return family == env::Family::SlidePuck ? out.final_distance : out.episode_return;
}

double sample_std(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

struct CellSweepResult {
  double metric_mean = 0.0;
  double metric_std = 0.0;
};

// Index of the training cell whose parameters equal `params` exactly, or -1.
// Sweep points that revisit a training cell reuse that cell's evaluation
// seeds, so sweeps and per-cell evaluation agree on shared settings.
int64_t matching_train_cell(const env::ParamGrid& grid, const env::EnvParams& params) {
  int64_t idx = 0;
  int64_t stride = 1;
  for (int p = 0; p < grid.num_params(); ++p) {
    int vi = -1;
    for (int i = 0; i < 5; ++i) {
      if (grid.train_values[p][i] == params.values[p]) vi = i;
    }
    if (vi < 0) return -1;
    idx += vi * stride;
    stride *= 5;
  }
  return idx;
}

// Mean family metric over episodes x seeds for one fixed parameter setting.
CellSweepResult eval_params(const training::EvalBundle& bundle, const env::EnvParams& params,
                            int episodes, const std::vector<uint64_t>& seeds) {
  const env::Family family = bundle.grid->family;
  const int64_t cell = matching_train_cell(*bundle.grid, params);
  const uint64_t salt = cell >= 0 ? static_cast<uint64_t>(cell) : 0x57EE9ULL;
  std::vector<double> per_seed(seeds.size(), 0.0);
  const int jobs = static_cast<int>(seeds.size()) * episodes;
  std::vector<double> metric(jobs, 0.0);
  threads::parallel_for(jobs, [&](int j) {
    const int s = j / episodes;
    const int e = j % episodes;
    const uint64_t ep_seed = Rng::stream(Rng::stream(seeds[s], salt).next_u64(), e).next_u64();
    metric[j] = family_metric(family, training::play_episode(bundle, params, ep_seed));
  });
  for (int j = 0; j < jobs; ++j) per_seed[j / episodes] += metric[j] / episodes;
  CellSweepResult out;
  for (double m : per_seed) out.metric_mean += m;
  out.metric_mean /= static_cast<double>(per_seed.size());
  out.metric_std = sample_std(per_seed);
  return out;
}

}  // namespace

EvalReport evaluate(const training::EvalBundle& bundle, env::GridSide side, int episodes_per_env,
                    const std::vector<uint64_t>& seeds) {
  if (bundle.grid == nullptr) throw std::invalid_argument("evaluate: bundle.grid not set");
  if (seeds.empty()) throw std::invalid_argument("evaluate: no seeds");
  if (episodes_per_env <= 0) throw std::invalid_argument("evaluate: episodes_per_env <= 0");
  const env::ParamGrid& grid = *bundle.grid;
  const int cells = grid.num_cells();
  const int per_seed_jobs = cells * episodes_per_env;
  const int jobs = static_cast<int>(seeds.size()) * per_seed_jobs;

  std::vector<double> metric(jobs, 0.0);
  std::vector<double> ret(jobs, 0.0);
  threads::parallel_for(jobs, [&](int j) {
    const int s = j / per_seed_jobs;
    const int rem = j % per_seed_jobs;
    const int cell = rem / episodes_per_env;
    const int e = rem % episodes_per_env;
    const env::EnvParams params = grid.cell_params(side, cell);
    const uint64_t ep_seed =
        Rng::stream(Rng::stream(seeds[s], static_cast<uint64_t>(cell)).next_u64(), e).next_u64();
    const training::EpisodeOutcome out = training::play_episode(bundle, params, ep_seed);
    metric[j] = family_metric(grid.family, out);
    ret[j] = out.episode_return;
  });

  EvalReport report;
  report.metric = grid.family == env::Family::SlidePuck ? "final_distance" : "episode_return";
  report.episodes = jobs;
  report.per_seed_mean.assign(seeds.size(), 0.0);
  for (int j = 0; j < jobs; ++j) {
    report.per_seed_mean[j / per_seed_jobs] += metric[j] / per_seed_jobs;
    report.mean_return += ret[j] / jobs;
  }
  for (double m : report.per_seed_mean) report.mean += m;
  report.mean /= static_cast<double>(seeds.size());
  report.std_across_seeds = sample_std(report.per_seed_mean);
  return report;
}

std::vector<SweepPoint> sweep_parameter(const training::EvalBundle& bundle,
                                        const std::string& param_name, int n_points, double lo,
                                        double hi, int episodes_per_point,
                                        const std::vector<uint64_t>& seeds) {
  if (bundle.grid == nullptr) throw std::invalid_argument("sweep_parameter: bundle.grid not set");
  if (n_points < 2) throw std::invalid_argument("sweep_parameter: need at least 2 points");
  const env::ParamGrid& grid = *bundle.grid;
  int pidx = -1;
  for (int p = 0; p < grid.num_params(); ++p) {
    if (grid.names[p] == param_name) pidx = p;
  }
  if (pidx < 0) throw std::invalid_argument("sweep_parameter: unknown parameter " + param_name);

  env::EnvParams base = grid.cell_params(env::GridSide::train, grid.center_cell());
  const double train_lo = grid.train_values[pidx].front();
  const double train_hi = grid.train_values[pidx].back();

  std::vector<SweepPoint> out(n_points);
  for (int i = 0; i < n_points; ++i) {
    const double v = lo + (hi - lo) * i / (n_points - 1);
    env::EnvParams params = base;
    params.values[pidx] = v;
    const CellSweepResult r = eval_params(bundle, params, episodes_per_point, seeds);
    out[i] = {v, r.metric_mean, r.metric_std, v >= train_lo && v <= train_hi};
  }
  return out;
}

void write_sweep_csv(const std::string& path, const std::string& param_name,
                     const std::vector<SweepPoint>& points) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (f == nullptr) throw std::runtime_error("cannot open sweep file: " + path);
  std::fprintf(f, "%s,metric_mean,metric_std,in_training_range\n", param_name.c_str());
  for (const SweepPoint& p : points) {
    std::fprintf(f, "%.17g,%.17g,%.17g,%d\n", p.value, p.metric_mean, p.metric_std,
                 p.in_training_range ? 1 : 0);
  }
  std::fclose(f);
}

void write_sweep_svg(const std::string& path, const std::string& param_name,
                     const std::vector<SweepPoint>& points) {
  if (points.empty()) throw std::invalid_argument("write_sweep_svg: no points");
  constexpr double W = 640, H = 400, ML = 70, MR = 20, MT = 30, MB = 50;
  double xlo = points.front().value, xhi = points.back().value;
  double ylo = std::numeric_limits<double>::infinity(), yhi = -ylo;
  for (const SweepPoint& p : points) {
    ylo = std::min(ylo, p.metric_mean - p.metric_std);
    yhi = std::max(yhi, p.metric_mean + p.metric_std);
  }
  if (yhi <= ylo) yhi = ylo + 1.0;
  const double pad = 0.05 * (yhi - ylo);
  ylo -= pad;
  yhi += pad;
  auto px = [&](double v) { return ML + (v - xlo) / (xhi - xlo) * (W - ML - MR); };
  auto py = [&](double v) { return H - MB - (v - ylo) / (yhi - ylo) * (H - MT - MB); };

  std::FILE* f = std::fopen(path.c_str(), "w");
  if (f == nullptr) throw std::runtime_error("cannot open svg file: " + path);
  std::fprintf(f,
               "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" "
               "viewBox=\"0 0 %g %g\">\n",
               W, H, W, H);
  std::fprintf(f, "<rect width=\"%g\" height=\"%g\" fill=\"white\"/>\n", W, H);

  // Shade the training range.
  double tr_lo = 0.0, tr_hi = 0.0;
  bool any = false;
  for (const SweepPoint& p : points) {
    if (p.in_training_range) {
      if (!any) tr_lo = p.value;
      tr_hi = p.value;
      any = true;
    }
  }
  if (any) {
    std::fprintf(f, "<rect x=\"%g\" y=\"%g\" width=\"%g\" height=\"%g\" fill=\"#dce9f7\"/>\n",
                 px(tr_lo), MT, px(tr_hi) - px(tr_lo), H - MT - MB);
  }

  // Axes.
  std::fprintf(f, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", ML,
               H - MB, W - MR, H - MB);
  std::fprintf(f, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", ML, MT,
               ML, H - MB);
  for (int i = 0; i <= 4; ++i) {
    const double xv = xlo + (xhi - xlo) * i / 4.0;
    const double yv = ylo + (yhi - ylo) * i / 4.0;
    std::fprintf(f,
                 "<text x=\"%g\" y=\"%g\" font-size=\"12\" text-anchor=\"middle\">%.3g</text>\n",
                 px(xv), H - MB + 18, xv);
    std::fprintf(f, "<text x=\"%g\" y=\"%g\" font-size=\"12\" text-anchor=\"end\">%.3g</text>\n",
                 ML - 6, py(yv) + 4, yv);
  }
  std::fprintf(f,
               "<text x=\"%g\" y=\"%g\" font-size=\"14\" text-anchor=\"middle\">%s</text>\n",
               (ML + W - MR) / 2, H - 12, param_name.c_str());

  // Std band, then the mean line.
  std::fprintf(f, "<polygon fill=\"#f4c7c3\" fill-opacity=\"0.6\" points=\"");
  for (const SweepPoint& p : points) {
    std::fprintf(f, "%g,%g ", px(p.value), py(p.metric_mean + p.metric_std));
  }
  for (auto it = points.rbegin(); it != points.rend(); ++it) {
    std::fprintf(f, "%g,%g ", px(it->value), py(it->metric_mean - it->metric_std));
  }
  std::fprintf(f, "\"/>\n<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\" points=\"");
  for (const SweepPoint& p : points) std::fprintf(f, "%g,%g ", px(p.value), py(p.metric_mean));
  std::fprintf(f, "\"/>\n</svg>\n");
  std::fclose(f);
}

// ---------------------------------------------------------------------------
// Embedding diagnostics

EmbeddingDump export_embeddings(const policy::GaussianPolicy& pi_epi, const epimodel::Net& psi,
                                const env::ParamGrid& grid, const dataset::NormStats& stats,
                                int probes_per_env, uint64_t seed) {
  if (probes_per_env <= 0) throw std::invalid_argument("export_embeddings: probes_per_env <= 0");
  const int cells = grid.num_cells();
  EmbeddingDump dump;
  dump.embed_dim = psi.spec.layer_sizes.back();
  dump.rows.resize(static_cast<size_t>(cells) * probes_per_env);
  threads::parallel_for(cells * probes_per_env, [&](int j) {
    const int cell = j / probes_per_env;
    const int k = j % probes_per_env;
    env::EnvParams params = grid.cell_params(env::GridSide::train, cell);
    env::EnvInstance env(grid.family, params);
    env.reset(Rng::stream(Rng::stream(seed, static_cast<uint64_t>(cell)).next_u64(), k)
                  .next_u64());
    training::ProbeResult pr = training::probe_and_embed(pi_epi, psi, env, stats, cell);
    dump.rows[j] = {cell, params.values, std::move(pr.embedding), 0.0, 0.0};
  });

  std::vector<Vec> pts(dump.rows.size());
  for (size_t i = 0; i < dump.rows.size(); ++i) pts[i] = dump.rows[i].embedding;
  const std::vector<Vec> proj = dump.embed_dim == 2 ? pts : pca_project_2d(pts);
  for (size_t i = 0; i < dump.rows.size(); ++i) {
    dump.rows[i].x = proj[i][0];
    dump.rows[i].y = proj[i].size() > 1 ? proj[i][1] : 0.0;
  }
  return dump;
}

void write_embeddings_csv(const std::string& path, const EmbeddingDump& dump) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (f == nullptr) throw std::runtime_error("cannot open embeddings file: " + path);
  std::fprintf(f, "env_id");
  const size_t n_rho = dump.rows.empty() ? 0 : dump.rows.front().rho.size();
  for (size_t p = 0; p < n_rho; ++p) std::fprintf(f, ",rho_%zu", p);
  for (int d = 0; d < dump.embed_dim; ++d) std::fprintf(f, ",e_%d", d);
  std::fprintf(f, ",proj_x,proj_y\n");
  for (const EmbeddingRow& r : dump.rows) {
    std::fprintf(f, "%d", r.env_id);
    for (double v : r.rho) std::fprintf(f, ",%.17g", v);
    for (double v : r.embedding) std::fprintf(f, ",%.17g", v);
    std::fprintf(f, ",%.17g,%.17g\n", r.x, r.y);
  }
  std::fclose(f);
}

namespace {

double dist(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (size_t d = 0; d < a.size(); ++d) s += (a[d] - b[d]) * (a[d] - b[d]);
  return std::sqrt(s);
}

std::vector<std::vector<const Vec*>> group_by_env(const EmbeddingDump& dump) {
  int max_id = -1;
  for (const EmbeddingRow& r : dump.rows) max_id = std::max(max_id, r.env_id);
  std::vector<std::vector<const Vec*>> groups(max_id + 1);
  for (const EmbeddingRow& r : dump.rows) groups[r.env_id].push_back(&r.embedding);
  std::erase_if(groups, [](const auto& g) { return g.empty(); });
  return groups;
}

}  // namespace

double embedding_separation_score(const EmbeddingDump& dump) {
  const auto groups = group_by_env(dump);
  if (groups.size() < 2) throw std::invalid_argument("embedding_separation_score: <2 envs");
  std::vector<Vec> centroids;
  double intra = 0.0;
  size_t n_points = 0;
  for (const auto& g : groups) {
    Vec c(g.front()->size(), 0.0);
    for (const Vec* p : g) {
      for (size_t d = 0; d < c.size(); ++d) c[d] += (*p)[d] / g.size();
    }
    for (const Vec* p : g) {
      intra += dist(*p, c);
      ++n_points;
    }
    centroids.push_back(std::move(c));
  }
  intra /= static_cast<double>(n_points);
  double inter = 0.0;
  int pairs = 0;
  for (size_t i = 0; i < centroids.size(); ++i) {
    for (size_t j = i + 1; j < centroids.size(); ++j) {
      inter += dist(centroids[i], centroids[j]);
      ++pairs;
    }
  }
  inter /= pairs;
  return inter / std::max(intra, 1e-12);
}

double silhouette_score(const EmbeddingDump& dump) {
  const size_t n = dump.rows.size();
  if (n < 2) throw std::invalid_argument("silhouette_score: need at least 2 points");
  int n_labels = 0;
  for (const EmbeddingRow& r : dump.rows) n_labels = std::max(n_labels, r.env_id + 1);
  if (n_labels < 2) throw std::invalid_argument("silhouette_score: need at least 2 envs");

  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    std::vector<double> mean_dist(n_labels, 0.0);
    std::vector<int> count(n_labels, 0);
    for (size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      mean_dist[dump.rows[j].env_id] += dist(dump.rows[i].embedding, dump.rows[j].embedding);
      ++count[dump.rows[j].env_id];
    }
    const int own = dump.rows[i].env_id;
    if (count[own] == 0) continue;  // singleton cluster scores 0
    const double a = mean_dist[own] / count[own];
    double b = std::numeric_limits<double>::infinity();
    for (int l = 0; l < n_labels; ++l) {
      if (l != own && count[l] > 0) b = std::min(b, mean_dist[l] / count[l]);
    }
    if (std::isinf(b)) continue;
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

std::vector<Vec> pca_project_2d(const std::vector<Vec>& points) {
  if (points.empty()) return {};
  const size_t n = points.size();
  const size_t d = points.front().size();
  if (d < 2) {
    std::vector<Vec> out(n, Vec{0.0, 0.0});
    for (size_t i = 0; i < n; ++i) out[i][0] = points[i].empty() ? 0.0 : points[i][0];
    return out;
  }

  Vec mean(d, 0.0);
  for (const Vec& p : points) {
    for (size_t k = 0; k < d; ++k) mean[k] += p[k] / n;
  }
  std::vector<Vec> cov(d, Vec(d, 0.0));
  for (const Vec& p : points) {
    for (size_t a = 0; a < d; ++a) {
      for (size_t b = 0; b < d; ++b) cov[a][b] += (p[a] - mean[a]) * (p[b] - mean[b]) / n;
    }
  }

  // Cyclic Jacobi rotations on the symmetric covariance matrix.
  std::vector<Vec> vecs(d, Vec(d, 0.0));
  for (size_t k = 0; k < d; ++k) vecs[k][k] = 1.0;
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (size_t p = 0; p < d; ++p) {
      for (size_t q = p + 1; q < d; ++q) off += cov[p][q] * cov[p][q];
    }
    if (off < 1e-24) break;
    for (size_t p = 0; p < d; ++p) {
      for (size_t q = p + 1; q < d; ++q) {
        if (std::abs(cov[p][q]) < 1e-300) continue;
        const double theta = (cov[q][q] - cov[p][p]) / (2.0 * cov[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (size_t k = 0; k < d; ++k) {
          const double akp = cov[k][p], akq = cov[k][q];
          cov[k][p] = c * akp - s * akq;
          cov[k][q] = s * akp + c * akq;
        }
        for (size_t k = 0; k < d; ++k) {
          const double apk = cov[p][k], aqk = cov[q][k];
          cov[p][k] = c * apk - s * aqk;
          cov[q][k] = s * apk + c * aqk;
        }
        for (size_t k = 0; k < d; ++k) {
          const double vkp = vecs[k][p], vkq = vecs[k][q];
          vecs[k][p] = c * vkp - s * vkq;
          vecs[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }

  // Two largest eigenvalues; sign convention: largest-|loading| positive.
  std::vector<size_t> order(d);
  for (size_t k = 0; k < d; ++k) order[k] = k;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return cov[a][a] > cov[b][b]; });
  std::vector<Vec> comps(2, Vec(d, 0.0));
  for (int c = 0; c < 2; ++c) {
    size_t best = 0;
    for (size_t k = 0; k < d; ++k) {
      comps[c][k] = vecs[k][order[c]];
      if (std::abs(comps[c][k]) > std::abs(comps[c][best])) best = k;
    }
    if (comps[c][best] < 0.0) {
      for (double& v : comps[c]) v = -v;
    }
  }

  std::vector<Vec> out(n, Vec(2, 0.0));
  for (size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 2; ++c) {
      double s = 0.0;
      for (size_t k = 0; k < d; ++k) s += (points[i][k] - mean[k]) * comps[c][k];
      out[i][c] = s;
    }
  }
  return out;
}

}  // namespace epi::eval

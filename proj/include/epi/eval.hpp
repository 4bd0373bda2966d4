#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "epi/training.hpp"

namespace epi::eval {

using policy::Vec;

struct EvalReport {
  std::string metric;  // "final_distance" (SlidePuck) or "episode_return"
  double mean = 0.0;
  double std_across_seeds = 0.0;
  Vec per_seed_mean;
  double mean_return = 0.0;  // undiscounted return, reported for both families
  int episodes = 0;
};

// Deterministic protocol: for every grid cell on `side`, `episodes_per_env`
// episodes per seed, mean actions throughout. The report aggregates per-seed
// means; the headline metric is the family's (distance for SlidePuck, return
// for SpringHopper).
EvalReport evaluate(const training::EvalBundle& bundle, env::GridSide side, int episodes_per_env,
                    const std::vector<uint64_t>& seeds);

struct SweepPoint {
  double value = 0.0;
  double metric_mean = 0.0;
  double metric_std = 0.0;  // across seeds
  bool in_training_range = false;
};

// Varies one parameter over [lo, hi] (other parameters held at the grid's
// central training values).
std::vector<SweepPoint> sweep_parameter(const training::EvalBundle& bundle,
                                        const std::string& param_name, int n_points, double lo,
                                        double hi, int episodes_per_point,
                                        const std::vector<uint64_t>& seeds);

void write_sweep_csv(const std::string& path, const std::string& param_name,
                     const std::vector<SweepPoint>& points);
void write_sweep_svg(const std::string& path, const std::string& param_name,
                     const std::vector<SweepPoint>& points);

// ---------------------------------------------------------------------------
// Embedding diagnostics

struct EmbeddingRow {
  int env_id = -1;
  Vec rho;        // raw parameter values
  Vec embedding;  // full embedding
  double x = 0.0, y = 0.0;  // 2-d projection for plotting
};

struct EmbeddingDump {
  int embed_dim = 0;
  std::vector<EmbeddingRow> rows;
};

// Deterministic probes on every training cell, `probes_per_env` reset seeds
// each. Projection: identity for 2-d embeddings, PCA otherwise.
EmbeddingDump export_embeddings(const policy::GaussianPolicy& pi_epi, const epimodel::Net& psi,
                                const env::ParamGrid& grid, const dataset::NormStats& stats,
                                int probes_per_env, uint64_t seed);

void write_embeddings_csv(const std::string& path, const EmbeddingDump& dump);

// Mean distance between per-env centroids divided by the mean distance of a
// point to its own centroid.
double embedding_separation_score(const EmbeddingDump& dump);

// Standard silhouette coefficient with euclidean distances on the full
// embedding; labels are env ids. Singleton clusters score 0.
double silhouette_score(const EmbeddingDump& dump);

// First two principal components (Jacobi eigensolver). Sign convention: each
// component's largest-magnitude loading is positive. Inputs of dimension < 2
// are zero-padded.
std::vector<Vec> pca_project_2d(const std::vector<Vec>& points);

}  // namespace epi::eval

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "epi/rng.hpp"

namespace epi::nn {

using Vec = std::vector<double>;

enum class Activation { relu, tanh, identity };

// Layer-size / activation description of an MLP. Hidden activations apply
// to every layer except the last, whose activation is always identity.
struct NetworkSpec {
  std::vector<int> layer_sizes;
  std::vector<Activation> hidden_activations;  // size layer_count() - 1

  static NetworkSpec mlp(std::vector<int> sizes, Activation hidden = Activation::relu);

  int layer_count() const { return static_cast<int>(layer_sizes.size()) - 1; }
  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  int param_count() const;
  void validate() const;  // throws std::invalid_argument
  bool operator==(const NetworkSpec&) const = default;
};

// Weights are row-major (out x in), single precision. All arithmetic on
// them is done in double; float is the storage and checkpoint precision.
struct LayerParams {
  std::vector<float> w;  // out*in
  std::vector<float> b;  // out
  bool operator==(const LayerParams&) const = default;
};

struct NetworkParams {
  std::vector<LayerParams> layers;
  bool operator==(const NetworkParams&) const = default;
};

struct LayerGrads {
  Vec w;
  Vec b;
};

// Gradient accumulator shaped like NetworkParams, double precision.
struct Grads {
  std::vector<LayerGrads> layers;

  static Grads zeros_like(const NetworkSpec& spec);
  void add_scaled(const Grads& other, double scale);
  void scale(double s);
  double max_abs() const;
};

struct ForwardCache {
  // acts[0] is the input; acts[k] is the post-activation output of layer k.
  std::vector<Vec> acts;
};

NetworkParams init_params(const NetworkSpec& spec, uint64_t seed);

Vec forward(const NetworkSpec& spec, const NetworkParams& params,
            std::span<const double> input, ForwardCache* cache = nullptr);

// Accumulates (+=) gradients of (output . upstream) into `accum`; returns
// the gradient w.r.t. the input.
Vec backward(const NetworkSpec& spec, const NetworkParams& params,
             const ForwardCache& cache, std::span<const double> upstream,
             Grads& accum);

struct MseResult {
  double loss;
  std::vector<Vec> grad;  // d loss / d pred, N x D
};

// loss = (1/N) sum_i ||pred_i - target_i||^2, accumulation in double.
MseResult mse_loss(const std::vector<Vec>& pred, const std::vector<Vec>& target);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<LayerGrads> m;
  std::vector<LayerGrads> v;
  int64_t t = 0;
  AdamConfig cfg;

  static AdamState init(const NetworkSpec& spec, AdamConfig cfg = {});
};

// In-place Adam update with bias correction. Throws std::runtime_error
// naming the layer on a non-finite gradient.
void adam_step(NetworkParams& params, const Grads& grads, AdamState& state);

// Adam for a flat parameter vector (used for per-dimension log-std).
struct AdamVecState {
  Vec m;
  Vec v;
  int64_t t = 0;
  AdamConfig cfg;

  static AdamVecState init(size_t n, AdamConfig cfg = {});
};

void adam_step_vec(std::vector<float>& params, const Vec& grads, AdamVecState& state);

}  // namespace epi::nn

#include "epi/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace epi::nn {

NetworkSpec NetworkSpec::mlp(std::vector<int> sizes, Activation hidden) {
  NetworkSpec spec;
  spec.layer_sizes = std::move(sizes);
  if (spec.layer_sizes.size() >= 2) {
    spec.hidden_activations.assign(spec.layer_sizes.size() - 2, hidden);
  }
  spec.validate();
  return spec;
}

int NetworkSpec::param_count() const {
  int n = 0;
  for (int l = 0; l < layer_count(); ++l) {
    n += layer_sizes[l] * layer_sizes[l + 1] + layer_sizes[l + 1];
  }
  return n;
}

void NetworkSpec::validate() const {
  if (layer_sizes.size() < 2) {
    throw std::invalid_argument("NetworkSpec: need at least input and output layer");
  }
  for (int s : layer_sizes) {
    if (s < 1) throw std::invalid_argument("NetworkSpec: layer sizes must be >= 1");
  }
  if (hidden_activations.size() != layer_sizes.size() - 2) {
    throw std::invalid_argument("NetworkSpec: one activation per hidden layer required");
  }
}

Grads Grads::zeros_like(const NetworkSpec& spec) {
  Grads g;
  g.layers.resize(spec.layer_count());
  for (int l = 0; l < spec.layer_count(); ++l) {
    g.layers[l].w.assign(static_cast<size_t>(spec.layer_sizes[l]) * spec.layer_sizes[l + 1], 0.0);
    g.layers[l].b.assign(spec.layer_sizes[l + 1], 0.0);
  }
  return g;
}

void Grads::add_scaled(const Grads& other, double scale) {
  for (size_t l = 0; l < layers.size(); ++l) {
    for (size_t i = 0; i < layers[l].w.size(); ++i) layers[l].w[i] += scale * other.layers[l].w[i];
    for (size_t i = 0; i < layers[l].b.size(); ++i) layers[l].b[i] += scale * other.layers[l].b[i];
  }
}

void Grads::scale(double s) {
  for (auto& l : layers) {
    for (auto& x : l.w) x *= s;
    for (auto& x : l.b) x *= s;
  }
}

double Grads::max_abs() const {
  double m = 0.0;
  for (const auto& l : layers) {
    for (double x : l.w) m = std::max(m, std::abs(x));
    for (double x : l.b) m = std::max(m, std::abs(x));
  }
  return m;
}

NetworkParams init_params(const NetworkSpec& spec, uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  NetworkParams params;
  params.layers.resize(spec.layer_count());
  for (int l = 0; l < spec.layer_count(); ++l) {
    const int in = spec.layer_sizes[l];
    const int out = spec.layer_sizes[l + 1];
    const bool relu_layer =
        l < spec.layer_count() - 1 && spec.hidden_activations[l] == Activation::relu;
    const double scale = relu_layer ? std::sqrt(2.0 / in) : std::sqrt(1.0 / in);
    params.layers[l].w.resize(static_cast<size_t>(in) * out);
    for (auto& w : params.layers[l].w) w = static_cast<float>(scale * rng.normal());
    params.layers[l].b.assign(out, 0.0f);
  }
  return params;
}

static double apply_act(Activation a, double x) {
  switch (a) {
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::tanh: return std::tanh(x);
    case Activation::identity: return x;
  }
  return x;
}

static double act_grad_from_output(Activation a, double y) {
  // Derivative expressed through the post-activation value y.
  switch (a) {
    case Activation::relu: return y > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: return 1.0 - y * y;
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

Vec forward(const NetworkSpec& spec, const NetworkParams& params,
            std::span<const double> input, ForwardCache* cache) {
  if (static_cast<int>(input.size()) != spec.input_dim()) {
    throw std::invalid_argument("forward: input dimension mismatch");
  }
  Vec cur(input.begin(), input.end());
  if (cache) {
    cache->acts.clear();
    cache->acts.reserve(spec.layer_count() + 1);
    cache->acts.push_back(cur);
  }
  for (int l = 0; l < spec.layer_count(); ++l) {
    const int in = spec.layer_sizes[l];
    const int out = spec.layer_sizes[l + 1];
    const LayerParams& lp = params.layers[l];
    Vec next(out);
    for (int o = 0; o < out; ++o) {
      double acc = lp.b[o];
      const float* wrow = lp.w.data() + static_cast<size_t>(o) * in;
      for (int i = 0; i < in; ++i) acc += static_cast<double>(wrow[i]) * cur[i];
      next[o] = acc;
    }
    if (l < spec.layer_count() - 1) {
      const Activation a = spec.hidden_activations[l];
      for (double& x : next) x = apply_act(a, x);
    }
    cur = std::move(next);
    if (cache) cache->acts.push_back(cur);
  }
  return cur;
}

Vec backward(const NetworkSpec& spec, const NetworkParams& params,
             const ForwardCache& cache, std::span<const double> upstream,
             Grads& accum) {
  if (static_cast<int>(cache.acts.size()) != spec.layer_count() + 1) {
    throw std::invalid_argument("backward: cache does not match spec");
  }
  if (static_cast<int>(upstream.size()) != spec.output_dim()) {
    throw std::invalid_argument("backward: upstream gradient dimension mismatch");
  }
  if (static_cast<int>(accum.layers.size()) != spec.layer_count()) {
    throw std::invalid_argument("backward: accumulator shape mismatch");
  }
  Vec delta(upstream.begin(), upstream.end());
  for (int l = spec.layer_count() - 1; l >= 0; --l) {
    const int in = spec.layer_sizes[l];
    const int out = spec.layer_sizes[l + 1];
    const Vec& layer_in = cache.acts[l];
    if (l < spec.layer_count() - 1) {
      const Activation a = spec.hidden_activations[l];
      const Vec& layer_out = cache.acts[l + 1];
      for (int o = 0; o < out; ++o) delta[o] *= act_grad_from_output(a, layer_out[o]);
    }
    LayerGrads& lg = accum.layers[l];
    for (int o = 0; o < out; ++o) {
      lg.b[o] += delta[o];
      double* gw = lg.w.data() + static_cast<size_t>(o) * in;
      const double d = delta[o];
      for (int i = 0; i < in; ++i) gw[i] += d * layer_in[i];
    }
    Vec prev(in, 0.0);
    const LayerParams& lp = params.layers[l];
    for (int o = 0; o < out; ++o) {
      const float* wrow = lp.w.data() + static_cast<size_t>(o) * in;
      const double d = delta[o];
      for (int i = 0; i < in; ++i) prev[i] += d * static_cast<double>(wrow[i]);
    }
    delta = std::move(prev);
  }
  return delta;
}

MseResult mse_loss(const std::vector<Vec>& pred, const std::vector<Vec>& target) {
  if (pred.empty()) throw std::invalid_argument("mse_loss: empty batch");
  if (pred.size() != target.size()) throw std::invalid_argument("mse_loss: batch size mismatch");
  const size_t n = pred.size();
  MseResult res;
  res.grad.resize(n);
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (pred[i].size() != target[i].size()) {
      throw std::invalid_argument("mse_loss: row dimension mismatch");
    }
    res.grad[i].resize(pred[i].size());
    for (size_t d = 0; d < pred[i].size(); ++d) {
      const double e = pred[i][d] - target[i][d];
      acc += e * e;
      res.grad[i][d] = 2.0 * e / static_cast<double>(n);
    }
  }
  res.loss = acc / static_cast<double>(n);
  return res;
}

AdamState AdamState::init(const NetworkSpec& spec, AdamConfig cfg) {
  AdamState s;
  Grads z = Grads::zeros_like(spec);
  s.m.reserve(z.layers.size());
  s.v.reserve(z.layers.size());
  for (auto& l : z.layers) {
    s.m.push_back({l.w, l.b});
    s.v.push_back({l.w, l.b});
  }
  s.cfg = cfg;
  return s;
}

static void adam_update_span(float* p, const double* g, double* m, double* v, size_t n,
                             const AdamConfig& cfg, double bc1, double bc2,
                             const std::string& where) {
  for (size_t i = 0; i < n; ++i) {
    if (!std::isfinite(g[i])) {
      throw std::runtime_error("adam_step: non-finite gradient in " + where);
    }
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] = static_cast<float>(static_cast<double>(p[i]) -
                              cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

void adam_step(NetworkParams& params, const Grads& grads, AdamState& state) {
  if (params.layers.size() != grads.layers.size() || params.layers.size() != state.m.size()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.cfg.beta2, static_cast<double>(state.t));
  for (size_t l = 0; l < params.layers.size(); ++l) {
    const std::string where = "layer " + std::to_string(l);
    adam_update_span(params.layers[l].w.data(), grads.layers[l].w.data(),
                     state.m[l].w.data(), state.v[l].w.data(), params.layers[l].w.size(),
                     state.cfg, bc1, bc2, where + " weights");
    adam_update_span(params.layers[l].b.data(), grads.layers[l].b.data(),
                     state.m[l].b.data(), state.v[l].b.data(), params.layers[l].b.size(),
                     state.cfg, bc1, bc2, where + " biases");
  }
}

AdamVecState AdamVecState::init(size_t n, AdamConfig cfg) {
  AdamVecState s;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  s.cfg = cfg;
  return s;
}

void adam_step_vec(std::vector<float>& params, const Vec& grads, AdamVecState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw std::invalid_argument("adam_step_vec: shape mismatch");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.cfg.beta2, static_cast<double>(state.t));
  adam_update_span(params.data(), grads.data(), state.m.data(), state.v.data(),
                   params.size(), state.cfg, bc1, bc2, "flat vector");
}

}  // namespace epi::nn

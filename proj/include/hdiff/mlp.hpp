#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hdiff/core.hpp"
#include "hdiff/rng.hpp"

namespace hdiff {

enum class Activation : std::uint32_t { Tanh = 0, Softplus = 1 };

inline const char* activation_name(Activation a) { return a == Activation::Tanh ? "tanh" : "softplus"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "softplus" || s == "smooth-rectifier") return Activation::Softplus;
  throw PreconditionError("unknown activation '" + s + "'");
}

// Parameters of the time-homogeneous score network s_theta: R^d -> R^d, an
// unstructured fully connected network. Layer l stores its weight matrix
// (out x in, row-major) followed by its bias.
struct ScoreParams {
  std::vector<std::size_t> layer_dims;  // d, h_1, ..., h_L, d
  Activation activation = Activation::Tanh;
  std::vector<double> weights;

  std::size_t dim() const { return layer_dims.front(); }
  std::size_t layer_count() const { return layer_dims.size() - 1; }

  static std::size_t parameter_count(const std::vector<std::size_t>& dims) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) n += dims[l] * dims[l + 1] + dims[l + 1];
    return n;
  }

  std::size_t layer_offset(std::size_t l) const {
    std::size_t n = 0;
    for (std::size_t k = 0; k < l; ++k) n += layer_dims[k] * layer_dims[k + 1] + layer_dims[k + 1];
    return n;
  }

  void validate() const {
    require(layer_dims.size() >= 2, "ScoreParams: need at least input and output widths");
    require(layer_dims.front() == layer_dims.back(), "ScoreParams: input and output widths must match");
    for (auto w : layer_dims) require(w >= 1, "ScoreParams: zero-width layer");
    require(weights.size() == parameter_count(layer_dims), "ScoreParams: weight count mismatch");
    if (!all_finite(weights)) throw DomainError("ScoreParams: non-finite weights");
  }

  // Weights ~ N(0, 1/fan_in), zero biases, and a zero output layer so the
  // initial score vanishes identically.
  static ScoreParams initialise(std::vector<std::size_t> dims, Activation act, std::uint64_t seed) {
    ScoreParams p{std::move(dims), act, {}};
    p.weights.assign(parameter_count(p.layer_dims), 0.0);
    Rng rng(seed, 0x5eed);
    for (std::size_t l = 0; l + 1 < p.layer_count(); ++l) {
      const std::size_t in = p.layer_dims[l], out = p.layer_dims[l + 1];
      const double sd = 1.0 / std::sqrt(static_cast<double>(in));
      double* w = p.weights.data() + p.layer_offset(l);
      for (std::size_t i = 0; i < in * out; ++i) w[i] = sd * rng.normal();
    }
    p.validate();
    return p;
  }
};

// Per-evaluation buffers: inputs[l] is the input of layer l, pre[l] its
// pre-activation. Reusing one workspace avoids allocation in hot loops.
struct MlpWorkspace {
  std::vector<Vec> inputs;
  std::vector<Vec> pre;
  std::vector<Vec> delta;
};

namespace detail {

inline double activate(Activation a, double z) {
  if (a == Activation::Tanh) return std::tanh(z);
  return z > 30.0 ? z : std::log1p(std::exp(z));
}

inline double activate_derivative(Activation a, double z) {
  if (a == Activation::Tanh) {
    const double t = std::tanh(z);
    return 1.0 - t * t;
  }
  return 1.0 / (1.0 + std::exp(-z));
}

}  // namespace detail

// Forward pass; writes the output into `out`.
inline void mlp_forward(const ScoreParams& p, std::span<const double> x, MlpWorkspace& ws,
                        std::span<double> out) {
  const std::size_t layers = p.layer_count();
  ws.inputs.resize(layers);
  ws.pre.resize(layers);
  ws.inputs[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = p.layer_dims[l], outw = p.layer_dims[l + 1];
    const double* w = p.weights.data() + p.layer_offset(l);
    const double* b = w + in * outw;
    Vec& z = ws.pre[l];
    z.resize(outw);
    const Vec& a = ws.inputs[l];
    for (std::size_t o = 0; o < outw; ++o) {
      double s = b[o];
      const double* row = w + o * in;
      for (std::size_t i = 0; i < in; ++i) s += row[i] * a[i];
      z[o] = s;
    }
    if (l + 1 < layers) {
      Vec& next = ws.inputs[l + 1];
      next.resize(outw);
      for (std::size_t o = 0; o < outw; ++o) next[o] = detail::activate(p.activation, z[o]);
    }
  }
  const Vec& last = ws.pre[layers - 1];
  std::copy(last.begin(), last.end(), out.begin());
}

// Accumulates d(loss)/d(weights) into `grad` given d(loss)/d(output), using
// the buffers of the preceding mlp_forward call.
inline void mlp_backward(const ScoreParams& p, MlpWorkspace& ws, std::span<const double> grad_out,
                         std::span<double> grad) {
  const std::size_t layers = p.layer_count();
  ws.delta.resize(layers);
  ws.delta[layers - 1].assign(grad_out.begin(), grad_out.end());
  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t in = p.layer_dims[l], outw = p.layer_dims[l + 1];
    const std::size_t off = p.layer_offset(l);
    const double* w = p.weights.data() + off;
    double* gw = grad.data() + off;
    double* gb = gw + in * outw;
    const Vec& a = ws.inputs[l];
    const Vec& dz = ws.delta[l];
    for (std::size_t o = 0; o < outw; ++o) {
      const double g = dz[o];
      gb[o] += g;
      double* grow = gw + o * in;
      for (std::size_t i = 0; i < in; ++i) grow[i] += g * a[i];
    }
    if (l > 0) {
      Vec& prev = ws.delta[l - 1];
      prev.assign(in, 0.0);
      for (std::size_t o = 0; o < outw; ++o) {
        const double g = dz[o];
        const double* row = w + o * in;
        for (std::size_t i = 0; i < in; ++i) prev[i] += g * row[i];
      }
      const Vec& z = ws.pre[l - 1];
      for (std::size_t i = 0; i < in; ++i) prev[i] *= detail::activate_derivative(p.activation, z[i]);
    }
  }
}

inline Vec score_eval(const ScoreParams& p, std::span<const double> x, MlpWorkspace& ws) {
  require_dim(x, p.dim(), "score_eval");
  Vec out(p.dim());
  mlp_forward(p, x, ws, out);
  if (!all_finite(out)) {
    if (!all_finite(p.weights)) throw DomainError("score_eval: non-finite weights");
    throw DomainError("score_eval: non-finite output");
  }
  return out;
}

inline Vec score_eval(const ScoreParams& p, std::span<const double> x) {
  MlpWorkspace ws;
  return score_eval(p, x, ws);
}

}  // namespace hdiff

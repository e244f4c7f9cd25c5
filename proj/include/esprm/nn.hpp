#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "esprm/common.hpp"
#include "esprm/rng.hpp"

namespace esprm {

/// Feed-forward architecture descriptor. An empty `hidden` list is the linear
/// class g(x) = w'x + b; otherwise each hidden layer uses leaky-ReLU
/// activations. Output dimension is always 1.
struct MlpSpec {
  int input_dim = 0;
  std::vector<int> hidden;
  double leaky_slope = 0.01;

  std::vector<int> layer_sizes() const {
    std::vector<int> s;
    s.push_back(input_dim);
    for (int h : hidden) s.push_back(h);
    s.push_back(1);
    return s;
  }

  int param_count() const {
    const auto s = layer_sizes();
    int n = 0;
    for (std::size_t l = 0; l + 1 < s.size(); ++l) n += s[l + 1] * (s[l] + 1);
    return n;
  }

  bool linear() const { return hidden.empty(); }
};

/// Offsets of one layer's weights/biases inside the flat parameter vector.
/// Weights are row-major (out x in), followed by the bias (out).
struct LayerSpan {
  int w_offset;
  int b_offset;
  int in;
  int out;
};

inline std::vector<LayerSpan> layer_layout(const MlpSpec& spec) {
  std::vector<LayerSpan> spans;
  const auto s = spec.layer_sizes();
  int off = 0;
  for (std::size_t l = 0; l + 1 < s.size(); ++l) {
    LayerSpan span{off, off + s[l + 1] * s[l], s[l], s[l + 1]};
    off = span.b_offset + s[l + 1];
    spans.push_back(span);
  }
  return spans;
}

namespace detail {

using RowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>;
using RowMajorMutMap =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>>;

inline void check_shapes(const MlpSpec& spec, const Vector& params,
                         Eigen::Index x_dim) {
  if (params.size() != spec.param_count()) {
    throw Error("mlp: parameter vector has length " +
                std::to_string(params.size()) + ", spec requires " +
                std::to_string(spec.param_count()));
  }
  if (x_dim != spec.input_dim) {
    throw Error("mlp: input has dimension " + std::to_string(x_dim) +
                ", spec requires " + std::to_string(spec.input_dim));
  }
}

}  // namespace detail

/// Evaluates g(x) for every row of X. Returns an n-vector.
inline Vector mlp_forward_batch(const MlpSpec& spec, const Vector& params,
                                const Matrix& X) {
  detail::check_shapes(spec, params, X.cols());
  const auto spans = layer_layout(spec);
  Matrix act = X;
  for (std::size_t l = 0; l < spans.size(); ++l) {
    const auto& sp = spans[l];
    detail::RowMajorMap W(params.data() + sp.w_offset, sp.out, sp.in);
    Eigen::Map<const Vector> b(params.data() + sp.b_offset, sp.out);
    Matrix z = act * W.transpose();
    z.rowwise() += b.transpose();
    if (l + 1 < spans.size()) {
      const double a = spec.leaky_slope;
      act = z.unaryExpr([a](double v) { return v > 0.0 ? v : a * v; });
    } else {
      act = std::move(z);
    }
  }
  return act.col(0);
}

inline double mlp_forward(const MlpSpec& spec, const Vector& params,
                          const Vector& x) {
  return mlp_forward_batch(spec, params, x.transpose())(0);
}

/// Reverse-mode gradient: returns sum_i upstream_i * d g(x_i) / d params.
/// Recomputes the forward activations internally.
inline Vector mlp_backward_batch(const MlpSpec& spec, const Vector& params,
                                 const Matrix& X, const Vector& upstream) {
  detail::check_shapes(spec, params, X.cols());
  if (upstream.size() != X.rows()) {
    throw Error("mlp: upstream has length " + std::to_string(upstream.size()) +
                ", expected " + std::to_string(X.rows()));
  }
  const auto spans = layer_layout(spec);
  const std::size_t L = spans.size();

  // Forward with cached pre-activations.
  std::vector<Matrix> acts(L + 1);
  std::vector<Matrix> pre(L);
  acts[0] = X;
  for (std::size_t l = 0; l < L; ++l) {
    const auto& sp = spans[l];
    detail::RowMajorMap W(params.data() + sp.w_offset, sp.out, sp.in);
    Eigen::Map<const Vector> b(params.data() + sp.b_offset, sp.out);
    pre[l] = acts[l] * W.transpose();
    pre[l].rowwise() += b.transpose();
    if (l + 1 < L) {
      const double a = spec.leaky_slope;
      acts[l + 1] = pre[l].unaryExpr([a](double v) { return v > 0.0 ? v : a * v; });
    } else {
      acts[l + 1] = pre[l];
    }
  }

  Vector grad = Vector::Zero(params.size());
  Matrix delta = upstream;  // n x 1, gradient w.r.t. the output layer input
  for (std::size_t li = L; li-- > 0;) {
    const auto& sp = spans[li];
    detail::RowMajorMap W(params.data() + sp.w_offset, sp.out, sp.in);
    if (li + 1 < L) {
      const double a = spec.leaky_slope;
      delta = delta.cwiseProduct(
          pre[li].unaryExpr([a](double v) { return v > 0.0 ? 1.0 : a; }));
    }
    detail::RowMajorMutMap dW(grad.data() + sp.w_offset, sp.out, sp.in);
    Eigen::Map<Vector> db(grad.data() + sp.b_offset, sp.out);
    dW = delta.transpose() * acts[li];
    db = delta.colwise().sum();
    if (li > 0) delta = (delta * W).eval();
  }
  return grad;
}

inline Vector mlp_backward(const MlpSpec& spec, const Vector& params,
                           const Vector& x, double upstream) {
  Vector up(1);
  up(0) = upstream;
  return mlp_backward_batch(spec, params, x.transpose(), up);
}

/// Worst-case relative error of mlp_backward against central differences.
/// Relative error uses denominator max(1, |analytic|, |numeric|).
inline double grad_check(const MlpSpec& spec, const Vector& params,
                         const Vector& x, double epsilon) {
  if (!(epsilon > 0.0)) {
    throw Error("grad_check: epsilon must be positive, got " +
                std::to_string(epsilon));
  }
  const Vector analytic = mlp_backward(spec, params, x, 1.0);
  Vector p = params;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double keep = p(i);
    p(i) = keep + epsilon;
    const double fp = mlp_forward(spec, p, x);
    p(i) = keep - epsilon;
    const double fm = mlp_forward(spec, p, x);
    p(i) = keep;
    const double numeric = (fp - fm) / (2.0 * epsilon);
    const double denom = std::max({1.0, std::abs(analytic(i)), std::abs(numeric)});
    worst = std::max(worst, std::abs(analytic(i) - numeric) / denom);
  }
  return worst;
}

/// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) for each layer's weights and
/// biases, drawn in layout order.
inline Vector init_params(const MlpSpec& spec, RngStream& rng) {
  Vector params(spec.param_count());
  for (const auto& sp : layer_layout(spec)) {
    const double bound = std::sqrt(1.0 / sp.in);
    for (int i = 0; i < sp.out * sp.in; ++i) {
      params(sp.w_offset + i) = rng.uniform(-bound, bound);
    }
    for (int i = 0; i < sp.out; ++i) {
      params(sp.b_offset + i) = rng.uniform(-bound, bound);
    }
  }
  return params;
}

}  // namespace esprm

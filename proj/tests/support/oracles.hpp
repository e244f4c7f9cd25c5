// Independent reference implementations used to cross-check the library.
// Everything here is written with plain loops and std containers on purpose:
// it must not share code paths with the implementation under test.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "esprm/common.hpp"

namespace oracles {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Plain-loop feed-forward network. layers[l] holds row-major weights
// (out x in) followed by biases (out), matching the library's layout.
inline double naive_mlp_forward(const std::vector<int>& sizes,
                                const std::vector<double>& params,
                                const std::vector<double>& x,
                                double leaky_slope) {
  std::vector<double> act = x;
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int in = sizes[l];
    const int out = sizes[l + 1];
    std::vector<double> next(out, 0.0);
    for (int r = 0; r < out; ++r) {
      double z = 0.0;
      for (int c = 0; c < in; ++c) z += params[off + r * in + c] * act[c];
      z += params[off + out * in + r];
      const bool last = (l + 2 == sizes.size());
      next[r] = last ? z : (z > 0.0 ? z : leaky_slope * z);
    }
    off += out * in + out;
    act = std::move(next);
  }
  return act[0];
}

// Central finite differences of a scalar function.
inline esprm::Vector central_diff(
    const std::function<double(const esprm::Vector&)>& f,
    const esprm::Vector& at, double eps) {
  esprm::Vector g(at.size());
  esprm::Vector p = at;
  for (Eigen::Index i = 0; i < at.size(); ++i) {
    const double keep = p(i);
    p(i) = keep + eps;
    const double fp = f(p);
    p(i) = keep - eps;
    const double fm = f(p);
    p(i) = keep;
    g(i) = (fp - fm) / (2.0 * eps);
  }
  return g;
}

// Textbook Adam, written against the published recipe rather than the
// library's kernel.
struct RefAdam {
  double lr;
  double b1 = 0.9;
  double b2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m;
  std::vector<double> v;
  long t = 0;

  explicit RefAdam(std::size_t dim, double lr_in) : lr(lr_in), m(dim), v(dim) {}

  void step(std::vector<double>& p, const std::vector<double>& g) {
    ++t;
    const double bc1 = 1.0 - std::pow(b1, double(t));
    const double bc2 = 1.0 - std::pow(b2, double(t));
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
  }
};

// Distance between unit-normalized parameter vectors, after flipping the
// first argument's sign if that brings it closer. Policies are invariant to
// positive rescaling, so estimates are compared on the sphere.
inline double aligned_distance(const esprm::Vector& a, const esprm::Vector& b) {
  const esprm::Vector ua = a / a.norm();
  const esprm::Vector ub = b / b.norm();
  const double s = ua.dot(ub) >= 0.0 ? 1.0 : -1.0;
  return (s * ua - ub).norm();
}

// Sample mean and (unbiased) variance.
struct MeanVar {
  double mean;
  double var;
};

inline MeanVar mean_var(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, s / static_cast<double>(v.size() - 1)};
}

}  // namespace oracles

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace esprm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Library-wide error type. Messages carry the offending row / coordinate /
/// dimension so callers can report precisely.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

inline double sigmoid(double g) {
  if (g >= 0.0) {
    return 1.0 / (1.0 + std::exp(-g));
  }
  const double e = std::exp(g);
  return e / (1.0 + e);
}

/// log(1 + exp(g)), stable for |g| up to ~700.
inline double softplus(double g) {
  if (g > 0.0) {
    return g + std::log1p(std::exp(-g));
  }
  return std::log1p(std::exp(g));
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }
inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

}  // namespace esprm

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace polysearch {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Input that violates a documented precondition or file format.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A referenced item (image id, language, token) does not exist.
class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An item with the same key is already present.
class ConflictError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged (NaN/Inf in the loss or gradients).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Left-to-right accumulation. Used wherever results are compared bitwise
// against reference loops.
inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double dot(const Vector& a, const Vector& b) {
  return dot(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())),
             std::span<const double>(b.data(), static_cast<std::size_t>(b.size())));
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

/// A d-dimensional vector of unit L2 norm in the shared image/sentence space.
class JointVector {
 public:
  static constexpr double kNormTolerance = 1e-6;

  JointVector() = default;

  /// Normalizes `raw`. Throws NumericError on a zero or non-finite vector.
  static JointVector normalize(const Vector& raw) {
    const double n = raw.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw NumericError("cannot normalize a zero or non-finite vector");
    JointVector v;
    v.values_ = raw / n;
    return v;
  }

  /// Wraps an already-normalized vector; rejects norms off by more than `tolerance`.
  static JointVector from_unit(Vector v, double tolerance = 1e-4) {
    const double n = v.norm();
    if (!std::isfinite(n) || std::abs(n - 1.0) > tolerance)
      throw ValidationError("vector is not unit-norm (norm = " + std::to_string(n) + ")");
    JointVector out;
    out.values_ = std::move(v);
    return out;
  }

  const Vector& values() const { return values_; }
  Eigen::Index dim() const { return values_.size(); }
  double operator[](Eigen::Index i) const { return values_[i]; }
  double dot(const JointVector& other) const { return polysearch::dot(values_, other.values_); }

  friend bool operator==(const JointVector& a, const JointVector& b) {
    return a.values_.size() == b.values_.size() && a.values_ == b.values_;
  }

 private:
  Vector values_;
};

}  // namespace polysearch

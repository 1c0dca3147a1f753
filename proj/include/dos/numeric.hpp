// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <type_traits>

#include <Eigen/Dense>

#include "dos/error.hpp"

namespace dos {

/// Reductions over float data are carried out in at least double precision.
template <typename Scalar>
using accum_t = std::common_type_t<Scalar, double>;

/// Neumaier-compensated running sum. Results agree across summation orders to
/// roughly the accumulator's unit roundoff, independent of the input length.
template <typename T>
class CompensatedSum {
public:
  void add(T x) noexcept {
    const T t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  T value() const noexcept { return sum_ + comp_; }

private:
  T sum_{0};
  T comp_{0};
};

namespace detail {

template <typename DerivedX, typename DerivedY>
void require_same_length(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedY>& y) {
  if (x.size() != y.size())
    throw Error(ErrorCode::LengthMismatch,
                "vectors of length " + std::to_string(x.size()) + " and " + std::to_string(y.size()));
}

template <typename T>
T clamp_unit(T value) noexcept {
  return std::clamp(value, T(-1), T(1));
}

}  // namespace detail

template <typename Derived>
accum_t<typename Derived::Scalar> compensated_sum(const Eigen::MatrixBase<Derived>& x) {
  using Acc = accum_t<typename Derived::Scalar>;
  CompensatedSum<Acc> sum;
  for (Eigen::Index i = 0; i < x.size(); ++i) sum.add(static_cast<Acc>(x(i)));
  return sum.value();
}

/// dot(u, v) / (|u| |v|), clamped to [-1, 1].
template <typename DerivedX, typename DerivedY>
accum_t<typename DerivedX::Scalar> cosine_similarity(const Eigen::MatrixBase<DerivedX>& u,
                                                     const Eigen::MatrixBase<DerivedY>& v) {
  using Acc = accum_t<typename DerivedX::Scalar>;
  detail::require_same_length(u, v);
  CompensatedSum<Acc> dot, uu, vv;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const Acc a = static_cast<Acc>(u(i));
    const Acc b = static_cast<Acc>(v(i));
    dot.add(a * b);
    uu.add(a * a);
    vv.add(b * b);
  }
  if (uu.value() == Acc(0) || vv.value() == Acc(0))
    throw Error(ErrorCode::ZeroVector, "cosine similarity of a zero vector");
  return detail::clamp_unit(dot.value() / (std::sqrt(uu.value()) * std::sqrt(vv.value())));
}

/// Pearson correlation coefficient. Throws ConstantInput when either side has
/// zero variance.
template <typename DerivedX, typename DerivedY>
accum_t<typename DerivedX::Scalar> pearson(const Eigen::MatrixBase<DerivedX>& x,
                                           const Eigen::MatrixBase<DerivedY>& y) {
  using Acc = accum_t<typename DerivedX::Scalar>;
  detail::require_same_length(x, y);
  if (x.size() < 2) throw Error(ErrorCode::LengthMismatch, "pearson needs at least two samples");

  const Acc n = static_cast<Acc>(x.size());
  const Acc mean_x = compensated_sum(x) / n;
  const Acc mean_y = compensated_sum(y) / n;

  CompensatedSum<Acc> sxy, sxx, syy;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const Acc dx = static_cast<Acc>(x(i)) - mean_x;
    const Acc dy = static_cast<Acc>(y(i)) - mean_y;
    sxy.add(dx * dy);
    sxx.add(dx * dx);
    syy.add(dy * dy);
  }
  if (sxx.value() == Acc(0) || syy.value() == Acc(0))
    throw Error(ErrorCode::ConstantInput, "pearson correlation of a constant vector");
  return detail::clamp_unit(sxy.value() / (std::sqrt(sxx.value()) * std::sqrt(syy.value())));
}

/// Sigmoid centred at `offset` with temperature `temperature`:
/// 1 / (1 + exp(-(x - offset) / temperature)).
inline double shifted_sigmoid(double x, double offset, double temperature) {
  if (!(temperature > 0.0))
    throw Error(ErrorCode::InvalidArgument, "temperature must be positive");
  constexpr double kMaxExponent = 500.0;
  const double z = std::clamp(-(x - offset) / temperature, -kMaxExponent, kMaxExponent);
  return 1.0 / (1.0 + std::exp(z));
}

}  // namespace dos

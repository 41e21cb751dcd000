#pragma once

// Dense kernels for the transformer forward pass.
//
// Storage is row-major Eigen. All reductions accumulate in double with a
// fixed summation order that depends only on the reduction index, so a
// result never depends on blocking, threading, or trailing zero terms.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>

#include "multipruner/errors.hpp"

namespace multipruner {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Read-only view of a row-major matrix or of a row/column block of one.
template <typename Scalar>
using MatrixView = Eigen::Ref<const Matrix<Scalar>, 0, Eigen::OuterStride<>>;

using Tensor = Matrix<float>;

namespace detail {

inline constexpr int kLanes = 8;

// Lane l accumulates terms k with k % kLanes == l; lanes are combined in a
// fixed tree. Dropping trailing zero terms leaves the result bit-identical.
template <typename Scalar>
inline double combine_lanes(const double* lane) {
  return ((lane[0] + lane[4]) + (lane[1] + lane[5])) +
         ((lane[2] + lane[6]) + (lane[3] + lane[7]));
}

template <typename Scalar>
inline double dot(const Scalar* a, const Scalar* b, Index n) {
  double lane[kLanes] = {};
  Index k = 0;
  for (; k + kLanes <= n; k += kLanes) {
    for (int l = 0; l < kLanes; ++l) {
      lane[l] += static_cast<double>(a[k + l]) * static_cast<double>(b[k + l]);
    }
  }
  for (int l = 0; k < n; ++k, ++l) {
    lane[l] += static_cast<double>(a[k]) * static_cast<double>(b[k]);
  }
  return combine_lanes<Scalar>(lane);
}

inline std::string dims(Index r, Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace detail

/// c = a * b with a: m x k, b: k x n.
template <typename Scalar>
Matrix<Scalar> matmul(const MatrixView<Scalar>& a, const MatrixView<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ (" + detail::dims(a.rows(), a.cols()) +
                     " * " + detail::dims(b.rows(), b.cols()) + ")");
  }
  const Index m = a.rows(), k = a.cols(), n = b.cols();
  Matrix<Scalar> c(m, n);
  Vector<double> acc(n);
  for (Index i = 0; i < m; ++i) {
    acc.setZero();
    for (Index p = 0; p < k; ++p) {
      const double av = static_cast<double>(a(i, p));
      const Scalar* brow = b.data() + p * b.outerStride();
      for (Index j = 0; j < n; ++j) acc[j] += av * static_cast<double>(brow[j]);
    }
    for (Index j = 0; j < n; ++j) c(i, j) = static_cast<Scalar>(acc[j]);
  }
  return c;
}

template <typename Scalar>
Matrix<Scalar> matmul(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  return matmul<Scalar>(MatrixView<Scalar>(a), MatrixView<Scalar>(b));
}

/// y = x * w^T with x: m x k and w: n x k (projection weights stored out x in).
template <typename Scalar>
Matrix<Scalar> linear(const MatrixView<Scalar>& x, const MatrixView<Scalar>& w) {
  if (x.cols() != w.cols()) {
    throw ShapeError("linear: input width " + std::to_string(x.cols()) +
                     " does not match weight " + detail::dims(w.rows(), w.cols()));
  }
  const Index m = x.rows(), k = x.cols(), n = w.rows();
  Matrix<Scalar> y(m, n);
  // Each output sums its k terms in increasing k, so the result depends
  // only on the kept input width.
  const Matrix<double> wt = w.transpose().template cast<double>();
  const Matrix<double> xd = x.template cast<double>();
  using Pack = Eigen::Matrix<double, 8, 1>;
  auto load = [&](Index p, Index j) { return Eigen::Map<const Pack>(wt.data() + p * n + j); };
  Index i = 0;
  // 4 rows x 16 outputs held in registers across the whole k loop.
  for (; i + 4 <= m; i += 4) {
    Index j = 0;
    for (; j + 16 <= n; j += 16) {
      Pack acc[4][2];
      for (auto& r : acc) r[0].setZero(), r[1].setZero();
      for (Index p = 0; p < k; ++p) {
        const Pack w0 = load(p, j), w1 = load(p, j + 8);
        for (int r = 0; r < 4; ++r) {
          const double a = xd(i + r, p);
          acc[r][0] += a * w0;
          acc[r][1] += a * w1;
        }
      }
      for (int r = 0; r < 4; ++r) {
        y.row(i + r).segment(j, 8) = acc[r][0].transpose().template cast<Scalar>();
        y.row(i + r).segment(j + 8, 8) = acc[r][1].transpose().template cast<Scalar>();
      }
    }
    for (; j < n; ++j) {
      for (int r = 0; r < 4; ++r) {
        double acc = 0.0;
        for (Index p = 0; p < k; ++p) acc += xd(i + r, p) * wt(p, j);
        y(i + r, j) = static_cast<Scalar>(acc);
      }
    }
  }
  for (; i < m; ++i) {
    Index j = 0;
    for (; j + 8 <= n; j += 8) {
      Pack acc = Pack::Zero();
      for (Index p = 0; p < k; ++p) acc += xd(i, p) * load(p, j);
      y.row(i).segment(j, 8) = acc.transpose().template cast<Scalar>();
    }
    for (; j < n; ++j) {
      double acc = 0.0;
      for (Index p = 0; p < k; ++p) acc += xd(i, p) * wt(p, j);
      y(i, j) = static_cast<Scalar>(acc);
    }
  }
  return y;
}

/// Row-wise softmax with max subtraction. NaN anywhere in a row makes the
/// whole output row NaN.
template <typename Scalar>
Matrix<Scalar> softmax_rows(const MatrixView<Scalar>& x) {
  Matrix<Scalar> y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < x.cols(); ++j) mx = std::max(mx, static_cast<double>(x(i, j)));
    double sum = 0.0;
    for (Index j = 0; j < x.cols(); ++j) sum += std::exp(static_cast<double>(x(i, j)) - mx);
    for (Index j = 0; j < x.cols(); ++j) {
      y(i, j) = static_cast<Scalar>(std::exp(static_cast<double>(x(i, j)) - mx) / sum);
    }
  }
  return y;
}

template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& x) {
  return softmax_rows<Scalar>(MatrixView<Scalar>(x));
}

/// y_i = gamma_i * x_i / sqrt(mean(x^2) + eps), applied per row.
template <typename Scalar>
Matrix<Scalar> rms_norm(const MatrixView<Scalar>& x, const Vector<Scalar>& gamma, double eps) {
  if (x.cols() != gamma.size()) {
    throw ShapeError("rms_norm: width " + std::to_string(x.cols()) + " vs gamma " +
                     std::to_string(gamma.size()));
  }
  Matrix<Scalar> y(x.rows(), x.cols());
  const Index d = x.cols();
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar* xr = x.data() + i * x.outerStride();
    const double ms = detail::dot(xr, xr, d) / static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(ms + eps);
    for (Index j = 0; j < d; ++j) {
      y(i, j) = static_cast<Scalar>(static_cast<double>(gamma[j]) *
                                    (static_cast<double>(xr[j]) * inv));
    }
  }
  return y;
}

template <typename Scalar>
Matrix<Scalar> rms_norm(const Matrix<Scalar>& x, const Vector<Scalar>& gamma, double eps) {
  return rms_norm<Scalar>(MatrixView<Scalar>(x), gamma, eps);
}

inline double silu(double v) { return v / (1.0 + std::exp(-v)); }

}  // namespace multipruner

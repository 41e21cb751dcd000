#include "doctest.h"
#include "oracles.hpp"
#include "multipruner/random.hpp"
#include "multipruner/tensor.hpp"

using namespace multipruner;

namespace {

Tensor random_tensor(Rng& rng, Index r, Index c) {
  Tensor t(r, c);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(rng.normal());
  return t;
}

}  // namespace

TEST_CASE("matmul and linear agree with a triple loop") {
  Rng rng(7);
  for (auto [m, k, n] : {std::array<Index, 3>{1, 1, 1}, {3, 5, 7}, {9, 17, 33}, {13, 64, 20}}) {
    const Tensor a = random_tensor(rng, m, k);
    const Tensor b = random_tensor(rng, k, n);
    const auto ref = oracle::matmul(oracle::to_dmat(a), oracle::to_dmat(b));
    CHECK(oracle::max_abs_diff(matmul(a, b), ref) < 1e-4);
    const Tensor bt = b.transpose();
    CHECK(oracle::max_abs_diff(linear<float>(a, bt), ref) < 1e-4);
  }
}

TEST_CASE("2x2 product") {
  Tensor a(2, 2), b(2, 2);
  a << 1, 2, 3, 4;
  b << 5, 6, 7, 8;
  const Tensor c = matmul(a, b);
  CHECK(c(0, 0) == 19);
  CHECK(c(0, 1) == 22);
  CHECK(c(1, 0) == 43);
  CHECK(c(1, 1) == 50);
}

TEST_CASE("shape mismatches throw") {
  CHECK_THROWS_AS(matmul(Tensor(2, 3), Tensor(2, 3)), ShapeError);
  CHECK_THROWS_AS(linear<float>(Tensor(2, 3), Tensor(4, 2)), ShapeError);
  CHECK_THROWS_AS(rms_norm<float>(Tensor(2, 3), Vector<float>::Ones(4), 1e-5), ShapeError);
}

TEST_CASE("linear ignores trailing zero inputs") {
  Rng rng(3);
  const Tensor x = random_tensor(rng, 6, 20);
  const Tensor w = random_tensor(rng, 11, 20);
  Tensor xp = Tensor::Zero(6, 27), wp = Tensor::Zero(11, 27);
  xp.leftCols(20) = x;
  wp.leftCols(20) = w;
  const Tensor a = linear<float>(x, w);
  const Tensor b = linear<float>(xp, wp);
  CHECK((a.array() == b.array()).all());
}

TEST_CASE("softmax rows") {
  Tensor x(3, 4);
  x << 0, 0, 0, 0, 1, 2, 3, 4, 1000, 1000, -1000, 0;
  const Tensor y = softmax_rows(x);
  for (Index i = 0; i < 3; ++i) CHECK(y.row(i).cast<double>().sum() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(y(0, 0) == doctest::Approx(0.25));
  CHECK(y(1, 3) == doctest::Approx(std::exp(4.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0) + std::exp(4.0))));
  CHECK(y(2, 0) == doctest::Approx(0.5));
  CHECK(y(2, 2) == 0.0f);
  x(0, 1) = std::numeric_limits<float>::quiet_NaN();
  const Tensor z = softmax_rows(x);
  CHECK(z.row(0).array().isNaN().all());
}

TEST_CASE("rms_norm") {
  Tensor x(1, 4);
  x << 1, -1, 1, -1;
  const Tensor y = rms_norm<float>(x, Vector<float>::Constant(4, 2.0f), 0.0);
  CHECK(y(0, 0) == doctest::Approx(2.0));
  CHECK(y(0, 1) == doctest::Approx(-2.0));
  Rng rng(5);
  const Tensor r = random_tensor(rng, 5, 37);
  const Vector<float> g = Vector<float>::Ones(37);
  const Tensor n = rms_norm<float>(r, g, 1e-5);
  for (Index i = 0; i < 5; ++i) {
    const auto xr = oracle::to_dmat(r)[static_cast<std::size_t>(i)];
    const auto ref = oracle::rms(xr, g, 1e-5);
    for (Index j = 0; j < 37; ++j) CHECK(n(i, j) == doctest::Approx(ref[static_cast<std::size_t>(j)]).epsilon(1e-6));
  }
}

#include "doctest.h"

#include "cmr/autodiff.hpp"
#include "helpers.hpp"

using namespace cmr;
using test::finiteDiff;
using test::gradRelError;
using test::randomTensor;

namespace {

// Wraps a tape expression as a scalar function of its leaf for FD checking.
double checkOpGradient(const std::function<ad::Var<double>(ad::Tape<double>&, ad::Var<double>)>& build,
                       const Tensor<double>& x0) {
  auto eval = [&](const Eigen::VectorXd& v) {
    ad::Tape<double> t;
    Tensor<double> in = x0;
    for (std::int64_t i = 0; i < in.size(); ++i) in[i] = v[i];
    auto out = build(t, ad::leaf(t, in));
    return out.val()[0];
  };
  Eigen::VectorXd x(x0.size());
  for (std::int64_t i = 0; i < x0.size(); ++i) x[i] = x0[i];

  ad::Tape<double> t;
  auto leaf = ad::leaf(t, x0);
  auto out = build(t, leaf);
  t.backward(out.id);
  Eigen::VectorXd analytic(x0.size());
  const auto& g = t.grad(leaf.id);
  for (std::int64_t i = 0; i < x0.size(); ++i) analytic[i] = g[i];

  return gradRelError(analytic, finiteDiff(eval, x, 1e-6));
}

}  // namespace

TEST_SUITE_BEGIN("autodiff");

TEST_CASE("elementwise and reduction gradients match finite differences") {
  Rng rng(7);
  auto x = randomTensor<double>(rng, {3, 4}, -2, 2);

  CHECK(checkOpGradient([](ad::Tape<double>&, ad::Var<double> v) { return ad::sum(ad::mul(v, v)); }, x) < 1e-7);
  CHECK(checkOpGradient([](ad::Tape<double>&, ad::Var<double> v) { return ad::sumSquares(v); }, x) < 1e-7);
  CHECK(checkOpGradient([](ad::Tape<double>&, ad::Var<double> v) { return ad::mean(ad::sigmoid(v)); }, x) < 1e-7);
  CHECK(checkOpGradient([](ad::Tape<double>&, ad::Var<double> v) { return ad::sum(ad::softplus(v)); }, x) < 1e-7);
  CHECK(checkOpGradient([](ad::Tape<double>&, ad::Var<double> v) { return ad::l1Sum(ad::addConst(v, 3.0)); }, x) <
        1e-7);
  CHECK(checkOpGradient(
            [](ad::Tape<double>&, ad::Var<double> v) { return ad::sumSquares(ad::subtractRow(v, 1)); }, x) < 1e-7);
}

TEST_CASE("relu gradient away from the kink") {
  Rng rng(8);
  auto x = randomTensor<double>(rng, {10}, 0.2, 2.0);
  for (std::int64_t i = 0; i < x.size(); i += 2) x[i] = -x[i];
  CHECK(checkOpGradient([](ad::Tape<double>&, ad::Var<double> v) { return ad::sum(ad::relu(v)); }, x) < 1e-7);
}

TEST_CASE("linear layer gradients") {
  Rng rng(9);
  auto x = randomTensor<double>(rng, {5});
  auto w = randomTensor<double>(rng, {3, 5});
  auto b = randomTensor<double>(rng, {3});

  // d/dx
  CHECK(checkOpGradient(
            [&](ad::Tape<double>& t, ad::Var<double> v) {
              return ad::sumSquares(ad::linear(v, ad::constant(t, w), ad::constant(t, b)));
            },
            x) < 1e-7);
  // d/dw
  CHECK(checkOpGradient(
            [&](ad::Tape<double>& t, ad::Var<double> wv) {
              return ad::sumSquares(ad::linear(ad::constant(t, x), wv, ad::constant(t, b)));
            },
            w) < 1e-7);
}

TEST_CASE("conv2d gradients w.r.t. input, weight, bias") {
  Rng rng(10);
  auto x = randomTensor<double>(rng, {2, 6, 6});
  auto w = randomTensor<double>(rng, {3, 2, 3, 3});
  auto b = randomTensor<double>(rng, {3});

  for (int stride : {1, 2}) {
    CHECK(checkOpGradient(
              [&](ad::Tape<double>& t, ad::Var<double> v) {
                return ad::sumSquares(ad::conv2d(v, ad::constant(t, w), ad::constant(t, b), stride, 1));
              },
              x) < 1e-6);
    CHECK(checkOpGradient(
              [&](ad::Tape<double>& t, ad::Var<double> wv) {
                return ad::sumSquares(ad::conv2d(ad::constant(t, x), wv, ad::constant(t, b), stride, 1));
              },
              w) < 1e-6);
    CHECK(checkOpGradient(
              [&](ad::Tape<double>& t, ad::Var<double> bv) {
                return ad::sumSquares(ad::conv2d(ad::constant(t, x), ad::constant(t, w), bv, stride, 1));
              },
              b) < 1e-6);
  }
}

TEST_CASE("conv2d channel mismatch raises ConfigError") {
  ad::Tape<double> t;
  auto x = ad::constant(t, Tensor<double>({3, 4, 4}));
  auto w = ad::constant(t, Tensor<double>({2, 2, 3, 3}));
  auto b = ad::constant(t, Tensor<double>({2}));
  CHECK_THROWS_AS(ad::conv2d(x, w, b, 1, 1), ConfigError);
}

TEST_CASE("pooling and resize gradients") {
  Rng rng(11);
  auto x = randomTensor<double>(rng, {2, 8, 8});

  CHECK(checkOpGradient([](ad::Tape<double>&, ad::Var<double> v) { return ad::sumSquares(ad::maxpool2(v)); }, x) <
        1e-6);
  CHECK(checkOpGradient([](ad::Tape<double>&, ad::Var<double> v) { return ad::sumSquares(ad::globalAvgPool(v)); },
                        x) < 1e-7);
  CHECK(checkOpGradient(
            [](ad::Tape<double>&, ad::Var<double> v) { return ad::sumSquares(ad::resizeBilinear(v, 3, 5)); }, x) <
        1e-6);
  CHECK(checkOpGradient(
            [](ad::Tape<double>&, ad::Var<double> v) { return ad::sumSquares(ad::upsampleNearest2(v)); }, x) < 1e-6);
}

TEST_CASE("shape ops route gradients") {
  Rng rng(12);
  auto x = randomTensor<double>(rng, {4, 3});
  CHECK(checkOpGradient(
            [](ad::Tape<double>&, ad::Var<double> v) {
              return ad::sumSquares(ad::selectRows(v, {2, 0, 2}));
            },
            x) < 1e-7);
  CHECK(checkOpGradient(
            [](ad::Tape<double>&, ad::Var<double> v) {
              auto a = ad::sliceRows(v, 0, 2);
              auto b = ad::sliceRows(v, 2, 4);
              return ad::sum(ad::mul(a, b));
            },
            x) < 1e-7);
  auto vec = randomTensor<double>(rng, {6});
  CHECK(checkOpGradient(
            [](ad::Tape<double>&, ad::Var<double> v) {
              auto a = ad::sliceVec(v, 0, 3);
              auto b = ad::sliceVec(v, 3, 6);
              return ad::sumSquares(ad::concatVec(ad::mul(a, b), a));
            },
            vec) < 1e-7);
}

TEST_CASE("backward accumulates through reused nodes") {
  ad::Tape<double> t;
  auto x = ad::leaf(t, Tensor<double>::scalar(3.0));
  auto y = ad::mul(x, x);      // x^2
  auto z = ad::add(y, x);      // x^2 + x
  auto w = ad::mul(z, y);      // (x^2 + x) * x^2
  t.backward(w.id);
  // d/dx [(x^2+x)x^2] = (2x+1)x^2 + (x^2+x)2x = 4x^3 + 3x^2
  CHECK(t.grad(x.id)[0] == doctest::Approx(4 * 27 + 3 * 9).epsilon(1e-12));
}

TEST_SUITE_END();

#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>

#include "cmr/rng.hpp"
#include "cmr/tensor.hpp"

namespace cmr::test {

// Central finite differences of a scalar function of a flat vector.
inline Eigen::VectorXd finiteDiff(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x,
                                  double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double v = x[i];
    x[i] = v + h;
    double fp = f(x);
    x[i] = v - h;
    double fm = f(x);
    x[i] = v;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

// Max componentwise deviation normalized by the gradient magnitude.
inline double gradRelError(const Eigen::VectorXd& analytic, const Eigen::VectorXd& fd) {
  double scale = std::max({analytic.cwiseAbs().maxCoeff(), fd.cwiseAbs().maxCoeff(), 1e-10});
  return (analytic - fd).cwiseAbs().maxCoeff() / scale;
}

template <typename T>
Tensor<T> randomTensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

}  // namespace cmr::test

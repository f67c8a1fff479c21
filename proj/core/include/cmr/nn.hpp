#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmr/autodiff.hpp"
#include "cmr/rng.hpp"
#include "cmr/tensor.hpp"

namespace cmr::nn {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> m, v;  // Adam moments

  void ensureState() {
    if (grad.empty()) grad = Tensor<T>::zeros(value.shape());
    if (m.empty()) m = Tensor<T>::zeros(value.shape());
    if (v.empty()) v = Tensor<T>::zeros(value.shape());
  }
};

// A tape plus parameter bindings. Each training thread owns one Graph;
// gradients are pulled back into the shared Params in a fixed order by the
// single-threaded optimizer loop.
template <typename T>
struct Graph {
  ad::Tape<T> tape;
  std::unordered_map<Param<T>*, int> bound;
  bool train = true;

  ad::Var<T> use(Param<T>& p) {
    auto it = bound.find(&p);
    if (it != bound.end()) return {&tape, it->second};
    int id = tape.leaf(p.value, train);
    bound.emplace(&p, id);
    return {&tape, id};
  }

  ad::Var<T> input(Tensor<T> v) { return ad::constant(tape, std::move(v)); }

  // Accumulates tape gradients into the shared parameters. Each parameter is
  // bound at most once per graph, so accumulation order cannot affect sums.
  void collectGrads() {
    for (auto& [p, id] : bound) {
      if (!tape.hasGrad(id)) continue;
      p->ensureState();
      ad::detail::accumulate(p->grad, tape.grad(id));
    }
  }
};

// Initialization draws a dedicated substream per parameter name, so a given
// parameter gets identical initial values regardless of which siblings exist
// in the surrounding model.
template <typename T>
void initHeNormal(Param<T>& p, const Rng& initRoot, int fanIn) {
  Rng rng = initRoot.substream(p.name);
  T std = static_cast<T>(std::sqrt(2.0 / static_cast<double>(fanIn)));
  for (std::int64_t i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<T>(rng.gaussian()) * std;
}

template <typename T>
struct Conv2d {
  Param<T> w, b;
  int stride = 1, pad = 1;

  // zeroInit makes the layer output exactly zero at initialization
  // (CoNorm scale/bias heads rely on this).
  void init(const std::string& name, int outCh, int inCh, int k, int strideIn, int padIn, const Rng& initRoot,
            bool zeroInit = false) {
    stride = strideIn;
    pad = padIn;
    w.name = name + ".w";
    b.name = name + ".b";
    w.value = Tensor<T>::zeros({outCh, inCh, k, k});
    b.value = Tensor<T>::zeros({outCh});
    if (!zeroInit) initHeNormal(w, initRoot, inCh * k * k);
  }

  ad::Var<T> operator()(Graph<T>& g, ad::Var<T> x) { return ad::conv2d(x, g.use(w), g.use(b), stride, pad); }

  void collectParams(std::vector<Param<T>*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

template <typename T>
struct Linear {
  Param<T> w, b;

  void init(const std::string& name, int outDim, int inDim, const Rng& initRoot, bool zeroInit = false) {
    w.name = name + ".w";
    b.name = name + ".b";
    w.value = Tensor<T>::zeros({outDim, inDim});
    b.value = Tensor<T>::zeros({outDim});
    if (!zeroInit) initHeNormal(w, initRoot, inDim);
  }

  ad::Var<T> operator()(Graph<T>& g, ad::Var<T> x) { return ad::linear(x, g.use(w), g.use(b)); }

  void collectParams(std::vector<Param<T>*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

template <typename T>
struct Adam {
  T lr = static_cast<T>(1e-3);
  T beta1 = static_cast<T>(0.9);
  T beta2 = static_cast<T>(0.999);
  T eps = static_cast<T>(1e-8);
  long step = 0;

  void update(const std::vector<Param<T>*>& params) {
    ++step;
    T c1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1), static_cast<double>(step)));
    T c2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2), static_cast<double>(step)));
    for (Param<T>* p : params) {
      p->ensureState();
      for (std::int64_t i = 0; i < p->value.size(); ++i) {
        T g = p->grad[i];
        p->m[i] = beta1 * p->m[i] + (T(1) - beta1) * g;
        p->v[i] = beta2 * p->v[i] + (T(1) - beta2) * g * g;
        T mhat = p->m[i] / c1;
        T vhat = p->v[i] / c2;
        p->value[i] -= lr * mhat / (static_cast<T>(std::sqrt(static_cast<double>(vhat))) + eps);
      }
    }
  }

  static void zeroGrads(const std::vector<Param<T>*>& params) {
    for (Param<T>* p : params) {
      p->ensureState();
      p->grad.fill(T(0));
    }
  }
};

}  // namespace cmr::nn

#pragma once

#include <Eigen/Core>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "cmr/common.hpp"
#include "cmr/tensor.hpp"

namespace cmr::ad {

// Reverse-mode tape. Nodes are created in topological order by construction,
// so backward() is a single reverse sweep. Templated on scalar so the same
// graph code runs in float for training and double for finite-difference
// verification.
template <typename T>
class Tape {
 public:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;  // allocated on first contribution
    std::function<void(Tape&)> back;
    bool requiresGrad = false;
  };

  int push(Tensor<T> v, bool requiresGrad) {
    nodes_.push_back(Node{std::move(v), Tensor<T>(), nullptr, requiresGrad});
    return static_cast<int>(nodes_.size()) - 1;
  }

  void setBack(int id, std::function<void(Tape&)> back) { nodes_[static_cast<std::size_t>(id)].back = std::move(back); }

  int leaf(Tensor<T> v, bool requiresGrad = true) { return push(std::move(v), requiresGrad); }
  int constant(Tensor<T> v) { return push(std::move(v), false); }

  Tensor<T>& val(int id) { return nodes_[static_cast<std::size_t>(id)].val; }
  const Tensor<T>& val(int id) const { return nodes_[static_cast<std::size_t>(id)].val; }
  bool requiresGrad(int id) const { return nodes_[static_cast<std::size_t>(id)].requiresGrad; }

  bool hasGrad(int id) const { return !nodes_[static_cast<std::size_t>(id)].grad.empty(); }

  Tensor<T>& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor<T>::zeros(n.val.shape());
    return n.grad;
  }

  void backward(int out) {
    if (val(out).size() != 1) throw Error("backward() requires a scalar output");
    grad(out)[0] = T(1);
    for (int id = out; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.back && n.requiresGrad && !n.grad.empty()) n.back(*this);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Tensor<T>& val() const { return tape->val(id); }
  bool requiresGrad() const { return tape->requiresGrad(id); }
};

template <typename T>
Var<T> leaf(Tape<T>& t, Tensor<T> v, bool requiresGrad = true) {
  return {&t, t.leaf(std::move(v), requiresGrad)};
}

template <typename T>
Var<T> constant(Tape<T>& t, Tensor<T> v) {
  return {&t, t.constant(std::move(v))};
}

namespace detail {

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src, T scale = T(1)) {
  assert(dst.size() == src.size());
  for (std::int64_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reductions
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& t = *a.tape;
  assert(a.val().sameShape(b.val()));
  Tensor<T> out = a.val();
  detail::accumulate(out, b.val());
  bool rg = a.requiresGrad() || b.requiresGrad();
  int id = t.push(std::move(out), rg);
  if (rg) {
    int ia = a.id, ib = b.id;
    t.setBack(id, [id, ia, ib](Tape<T>& tp) {
      const Tensor<T>& g = tp.grad(id);
      if (tp.requiresGrad(ia)) detail::accumulate(tp.grad(ia), g);
      if (tp.requiresGrad(ib)) detail::accumulate(tp.grad(ib), g);
    });
  }
  return {&t, id};
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& t = *a.tape;
  assert(a.val().sameShape(b.val()));
  Tensor<T> out = a.val();
  detail::accumulate(out, b.val(), T(-1));
  bool rg = a.requiresGrad() || b.requiresGrad();
  int id = t.push(std::move(out), rg);
  if (rg) {
    int ia = a.id, ib = b.id;
    t.setBack(id, [id, ia, ib](Tape<T>& tp) {
      const Tensor<T>& g = tp.grad(id);
      if (tp.requiresGrad(ia)) detail::accumulate(tp.grad(ia), g);
      if (tp.requiresGrad(ib)) detail::accumulate(tp.grad(ib), g, T(-1));
    });
  }
  return {&t, id};
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& t = *a.tape;
  assert(a.val().sameShape(b.val()));
  Tensor<T> out = a.val();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= b.val()[i];
  bool rg = a.requiresGrad() || b.requiresGrad();
  int id = t.push(std::move(out), rg);
  if (rg) {
    int ia = a.id, ib = b.id;
    t.setBack(id, [id, ia, ib](Tape<T>& tp) {
      const Tensor<T>& g = tp.grad(id);
      if (tp.requiresGrad(ia)) {
        Tensor<T>& ga = tp.grad(ia);
        const Tensor<T>& vb = tp.val(ib);
        for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
      }
      if (tp.requiresGrad(ib)) {
        Tensor<T>& gb = tp.grad(ib);
        const Tensor<T>& va = tp.val(ia);
        for (std::int64_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
      }
    });
  }
  return {&t, id};
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
  Tape<T>& t = *a.tape;
  Tensor<T> out = a.val();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= c;
  bool rg = a.requiresGrad();
  int id = t.push(std::move(out), rg);
  if (rg) {
    int ia = a.id;
    t.setBack(id, [id, ia, c](Tape<T>& tp) { detail::accumulate(tp.grad(ia), tp.grad(id), c); });
  }
  return {&t, id};
}

template <typename T>
Var<T> addConst(Var<T> a, T c) {
  Tape<T>& t = *a.tape;
  Tensor<T> out = a.val();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] += c;
  bool rg = a.requiresGrad();
  int id = t.push(std::move(out), rg);
  if (rg) {
    int ia = a.id;
    t.setBack(id, [id, ia](Tape<T>& tp) { detail::accumulate(tp.grad(ia), tp.grad(id)); });
  }
  return {&t, id};
}

// Elementwise product with a constant tensor (e.g. a visibility mask).
template <typename T>
Var<T> mulConst(Var<T> a, Tensor<T> mask) {
  Tape<T>& t = *a.tape;
  assert(a.val().sameShape(mask));
  Tensor<T> out = a.val();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  bool rg = a.requiresGrad();
  int id = t.push(std::move(out), rg);
  if (rg) {
    int ia = a.id;
    t.setBack(id, [id, ia, mask = std::move(mask)](Tape<T>& tp) {
      Tensor<T>& ga = tp.grad(ia);
      const Tensor<T>& g = tp.grad(id);
      for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
    });
  }
  return {&t, id};
}

template <typename T>
Var<T> sum(Var<T> a) {
  Tape<T>& t = *a.tape;
  T s = 0;
  for (std::int64_t i = 0; i < a.val().size(); ++i) s += a.val()[i];
  bool rg = a.requiresGrad();
  int id = t.push(Tensor<T>::scalar(s), rg);
  if (rg) {
    int ia = a.id;
    t.setBack(id, [id, ia](Tape<T>& tp) {
      T g = tp.grad(id)[0];
      Tensor<T>& ga = tp.grad(ia);
      for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return {&t, id};
}

template <typename T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), T(1) / static_cast<T>(a.val().size()));
}

template <typename T>
Var<T> sumSquares(Var<T> a) {
  Tape<T>& t = *a.tape;
  T s = 0;
  for (std::int64_t i = 0; i < a.val().size(); ++i) s += a.val()[i] * a.val()[i];
  bool rg = a.requiresGrad();
  int id = t.push(Tensor<T>::scalar(s), rg);
  if (rg) {
    int ia = a.id;
    t.setBack(id, [id, ia](Tape<T>& tp) {
      T g = tp.grad(id)[0];
      Tensor<T>& ga = tp.grad(ia);
      const Tensor<T>& va = tp.val(ia);
      for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += T(2) * g * va[i];
    });
  }
  return {&t, id};
}

// Sum of absolute values; subgradient at zero is zero.
template <typename T>
Var<T> l1Sum(Var<T> a) {
  Tape<T>& t = *a.tape;
  T s = 0;
  for (std::int64_t i = 0; i < a.val().size(); ++i) s += std::abs(a.val()[i]);
  bool rg = a.requiresGrad();
  int id = t.push(Tensor<T>::scalar(s), rg);
  if (rg) {
    int ia = a.id;
    t.setBack(id, [id, ia](Tape<T>& tp) {
      T g = tp.grad(id)[0];
      Tensor<T>& ga = tp.grad(ia);
      const Tensor<T>& va = tp.val(ia);
      for (std::int64_t i = 0; i < ga.size(); ++i) {
        if (va[i] > 0)
          ga[i] += g;
        else if (va[i] < 0)
          ga[i] -= g;
      }
    });
  }
  return {&t, id};
}

template <typename T>
Var<T> relu(Var<T> a) {
  Tape<T>& t = *a.tape;
  Tensor<T> out = a.val();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0 ? out[i] : T(0);
  bool rg = a.requiresGrad();
  int id = t.push(std::move(out), rg);
  if (rg) {
    int ia = a.id;
    t.setBack(id, [id, ia](Tape<T>& tp) {
      Tensor<T>& ga = tp.grad(ia);
      const Tensor<T>& g = tp.grad(id);
      const Tensor<T>& va = tp.val(ia);
      for (std::int64_t i = 0; i < g.size(); ++i) {
        if (va[i] > 0) ga[i] += g[i];
      }
    });
  }
  return {&t, id};
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  Tape<T>& t = *a.tape;
  Tensor<T> out = a.val();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-out[i]));
  bool rg = a.requiresGrad();
  int id = t.push(std::move(out), rg);
  if (rg) {
    int ia = a.id;
    t.setBack(id, [id, ia](Tape<T>& tp) {
      Tensor<T>& ga = tp.grad(ia);
      const Tensor<T>& g = tp.grad(id);
      const Tensor<T>& y = tp.val(id);
      for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
    });
  }
  return {&t, id};
}

template <typename T>
Var<T> softplus(Var<T> a) {
  Tape<T>& t = *a.tape;
  Tensor<T> out = a.val();
  for (std::int64_t i = 0; i < out.size(); ++i) {
    T x = out[i];
    out[i] = std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
  }
  bool rg = a.requiresGrad();
  int id = t.push(std::move(out), rg);
  if (rg) {
    int ia = a.id;
    t.setBack(id, [id, ia](Tape<T>& tp) {
      Tensor<T>& ga = tp.grad(ia);
      const Tensor<T>& g = tp.grad(id);
      const Tensor<T>& va = tp.val(ia);
      for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (T(1) + std::exp(-va[i]));
    });
  }
  return {&t, id};
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> reshape(Var<T> a, std::vector<int> shape) {
  Tape<T>& t = *a.tape;
  Tensor<T> out = a.val().reshaped(shape);
  bool rg = a.requiresGrad();
  int id = t.push(std::move(out), rg);
  if (rg) {
    int ia = a.id;
    t.setBack(id, [id, ia](Tape<T>& tp) { detail::accumulate(tp.grad(ia), tp.grad(id)); });
  }
  return {&t, id};
}

template <typename T>
Var<T> concatVec(Var<T> a, Var<T> b) {
  Tape<T>& t = *a.tape;
  std::int64_t na = a.val().size(), nb = b.val().size();
  Tensor<T> out({static_cast<int>(na + nb)});
  for (std::int64_t i = 0; i < na; ++i) out[i] = a.val()[i];
  for (std::int64_t i = 0; i < nb; ++i) out[na + i] = b.val()[i];
  bool rg = a.requiresGrad() || b.requiresGrad();
  int id = t.push(std::move(out), rg);
  if (rg) {
    int ia = a.id, ib = b.id;
    t.setBack(id, [id, ia, ib, na, nb](Tape<T>& tp) {
      const Tensor<T>& g = tp.grad(id);
      if (tp.requiresGrad(ia)) {
        Tensor<T>& ga = tp.grad(ia);
        for (std::int64_t i = 0; i < na; ++i) ga[i] += g[i];
      }
      if (tp.requiresGrad(ib)) {
        Tensor<T>& gb = tp.grad(ib);
        for (std::int64_t i = 0; i < nb; ++i) gb[i] += g[na + i];
      }
    });
  }
  return {&t, id};
}

// Contiguous slice [begin, end) of a flat vector.
template <typename T>
Var<T> sliceVec(Var<T> a, int begin, int end) {
  Tape<T>& t = *a.tape;
  assert(begin >= 0 && end <= a.val().size() && begin < end);
  Tensor<T> out({end - begin});
  for (int i = begin; i < end; ++i) out[i - begin] = a.val()[i];
  bool rg = a.requiresGrad();
  int id = t.push(std::move(out), rg);
  if (rg) {
    int ia = a.id;
    t.setBack(id, [id, ia, begin, end](Tape<T>& tp) {
      Tensor<T>& ga = tp.grad(ia);
      const Tensor<T>& g = tp.grad(id);
      for (int i = begin; i < end; ++i) ga[i] += g[i - begin];
    });
  }
  return {&t, id};
}

// Channel concatenation of [C1,H,W] and [C2,H,W].
template <typename T>
Var<T> concatCh(Var<T> a, Var<T> b) {
  Tape<T>& t = *a.tape;
  const auto& sa = a.val().shape();
  const auto& sb = b.val().shape();
  assert(sa.size() == 3 && sb.size() == 3 && sa[1] == sb[1] && sa[2] == sb[2]);
  Tensor<T> out({sa[0] + sb[0], sa[1], sa[2]});
  std::int64_t na = a.val().size(), nb = b.val().size();
  for (std::int64_t i = 0; i < na; ++i) out[i] = a.val()[i];
  for (std::int64_t i = 0; i < nb; ++i) out[na + i] = b.val()[i];
  bool rg = a.requiresGrad() || b.requiresGrad();
  int id = t.push(std::move(out), rg);
  if (rg) {
    int ia = a.id, ib = b.id;
    t.setBack(id, [id, ia, ib, na, nb](Tape<T>& tp) {
      const Tensor<T>& g = tp.grad(id);
      if (tp.requiresGrad(ia)) {
        Tensor<T>& ga = tp.grad(ia);
        for (std::int64_t i = 0; i < na; ++i) ga[i] += g[i];
      }
      if (tp.requiresGrad(ib)) {
        Tensor<T>& gb = tp.grad(ib);
        for (std::int64_t i = 0; i < nb; ++i) gb[i] += g[na + i];
      }
    });
  }
  return {&t, id};
}

// Gathers rows of a [R,C] matrix; backward scatters.
template <typename T>
Var<T> selectRows(Var<T> a, std::vector<int> rows) {
  Tape<T>& t = *a.tape;
  const auto& s = a.val().shape();
  assert(s.size() == 2);
  int cols = s[1];
  Tensor<T> out({static_cast<int>(rows.size()), cols});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (int c = 0; c < cols; ++c) out.at(static_cast<int>(r), c) = a.val().at(rows[r], c);
  bool rg = a.requiresGrad();
  int id = t.push(std::move(out), rg);
  if (rg) {
    int ia = a.id;
    t.setBack(id, [id, ia, rows = std::move(rows), cols](Tape<T>& tp) {
      Tensor<T>& ga = tp.grad(ia);
      const Tensor<T>& g = tp.grad(id);
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (int c = 0; c < cols; ++c) ga.at(rows[r], c) += g.at(static_cast<int>(r), c);
    });
  }
  return {&t, id};
}

// Contiguous row range [begin, end) of a [R,C] matrix.
template <typename T>
Var<T> sliceRows(Var<T> a, int begin, int end) {
  Tape<T>& t = *a.tape;
  const auto& s = a.val().shape();
  assert(s.size() == 2 && begin >= 0 && end <= s[0] && begin < end);
  int cols = s[1];
  Tensor<T> out({end - begin, cols});
  for (int r = begin; r < end; ++r)
    for (int c = 0; c < cols; ++c) out.at(r - begin, c) = a.val().at(r, c);
  bool rg = a.requiresGrad();
  int id = t.push(std::move(out), rg);
  if (rg) {
    int ia = a.id;
    t.setBack(id, [id, ia, begin, end, cols](Tape<T>& tp) {
      Tensor<T>& ga = tp.grad(ia);
      const Tensor<T>& g = tp.grad(id);
      for (int r = begin; r < end; ++r)
        for (int c = 0; c < cols; ++c) ga.at(r, c) += g.at(r - begin, c);
    });
  }
  return {&t, id};
}

// x - x[row] broadcast over rows (root alignment inside losses).
template <typename T>
Var<T> subtractRow(Var<T> a, int row) {
  Tape<T>& t = *a.tape;
  const auto& s = a.val().shape();
  assert(s.size() == 2);
  int rowsN = s[0], cols = s[1];
  Tensor<T> out = a.val();
  for (int r = 0; r < rowsN; ++r)
    for (int c = 0; c < cols; ++c) out.at(r, c) -= a.val().at(row, c);
  bool rg = a.requiresGrad();
  int id = t.push(std::move(out), rg);
  if (rg) {
    int ia = a.id;
    t.setBack(id, [id, ia, row, rowsN, cols](Tape<T>& tp) {
      Tensor<T>& ga = tp.grad(ia);
      const Tensor<T>& g = tp.grad(id);
      for (int r = 0; r < rowsN; ++r)
        for (int c = 0; c < cols; ++c) {
          ga.at(r, c) += g.at(r, c);
          ga.at(row, c) -= g.at(r, c);
        }
    });
  }
  return {&t, id};
}

// ---------------------------------------------------------------------------
// Linear algebra / NN ops
// ---------------------------------------------------------------------------

// y = W x + b with x:[in], W:[out,in], b:[out].
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  Tape<T>& t = *x.tape;
  int in = x.val().dim(0);
  int out = w.val().dim(0);
  assert(w.val().dim(1) == in && b.val().dim(0) == out);
  Tensor<T> y({out});
  detail::ECMap<T> W(w.val().data(), out, in);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> X(x.val().data(), in);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> Y(y.data(), out);
  Y.noalias() = W * X;
  for (int i = 0; i < out; ++i) y[i] += b.val()[i];
  bool rg = x.requiresGrad() || w.requiresGrad() || b.requiresGrad();
  int id = t.push(std::move(y), rg);
  if (rg) {
    int ix = x.id, iw = w.id, ib = b.id;
    t.setBack(id, [id, ix, iw, ib, in, out](Tape<T>& tp) {
      const Tensor<T>& g = tp.grad(id);
      Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> G(g.data(), out);
      if (tp.requiresGrad(iw)) {
        detail::EMap<T> dW(tp.grad(iw).data(), out, in);
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> X(tp.val(ix).data(), in);
        dW.noalias() += G * X.transpose();
      }
      if (tp.requiresGrad(ib)) detail::accumulate(tp.grad(ib), g);
      if (tp.requiresGrad(ix)) {
        detail::ECMap<T> W(tp.val(iw).data(), out, in);
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> dX(tp.grad(ix).data(), in);
        dX.noalias() += W.transpose() * G;
      }
    });
  }
  return {&t, id};
}

namespace detail {

template <typename T>
void im2col(const Tensor<T>& x, int kh, int kw, int stride, int pad, int oh, int ow, Tensor<T>& col) {
  int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  // col: [C*kh*kw, oh*ow]
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        int row = (c * kh + ki) * kw + kj;
        T* dst = col.data() + static_cast<std::size_t>(row) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= H) {
            for (int ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = T(0);
            continue;
          }
          const T* src = x.data() + (static_cast<std::size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * stride + kj - pad;
            dst[oy * ow + ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const Tensor<T>& col, int C, int H, int W, int kh, int kw, int stride, int pad, int oh, int ow,
            Tensor<T>& dx) {
  for (int c = 0; c < C; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        int row = (c * kh + ki) * kw + kj;
        const T* src = col.data() + static_cast<std::size_t>(row) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= H) continue;
          T* dst = dx.data() + (static_cast<std::size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * stride + kj - pad;
            if (ix >= 0 && ix < W) dst[ix] += src[oy * ow + ox];
          }
        }
      }
}

}  // namespace detail

// 2D convolution, x:[C,H,W], w:[O,C,kh,kw], b:[O]. im2col + GEMM.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
  Tape<T>& t = *x.tape;
  const auto& xs = x.val().shape();
  const auto& ws = w.val().shape();
  assert(xs.size() == 3 && ws.size() == 4);
  int C = xs[0], H = xs[1], W = xs[2];
  int O = ws[0], kh = ws[2], kw = ws[3];
  if (ws[1] != C) throw ConfigError("conv2d: input has " + std::to_string(C) + " channels, weight expects " + std::to_string(ws[1]));
  int oh = (H + 2 * pad - kh) / stride + 1;
  int ow = (W + 2 * pad - kw) / stride + 1;

  Tensor<T> col({C * kh * kw, oh * ow});
  detail::im2col(x.val(), kh, kw, stride, pad, oh, ow, col);

  Tensor<T> y({O, oh, ow});
  {
    detail::ECMap<T> Wm(w.val().data(), O, C * kh * kw);
    detail::ECMap<T> Cm(col.data(), C * kh * kw, oh * ow);
    detail::EMap<T> Ym(y.data(), O, oh * ow);
    Ym.noalias() = Wm * Cm;
    for (int o = 0; o < O; ++o) Ym.row(o).array() += b.val()[o];
  }

  bool rg = x.requiresGrad() || w.requiresGrad() || b.requiresGrad();
  int id = t.push(std::move(y), rg);
  if (rg) {
    int ix = x.id, iw = w.id, ib = b.id;
    t.setBack(id, [id, ix, iw, ib, C, H, W, O, kh, kw, stride, pad, oh, ow, col = std::move(col)](Tape<T>& tp) {
      const Tensor<T>& g = tp.grad(id);
      detail::ECMap<T> Gm(g.data(), O, oh * ow);
      if (tp.requiresGrad(ib)) {
        Tensor<T>& db = tp.grad(ib);
        for (int o = 0; o < O; ++o) db[o] += Gm.row(o).sum();
      }
      if (tp.requiresGrad(iw)) {
        detail::EMap<T> dW(tp.grad(iw).data(), O, C * kh * kw);
        detail::ECMap<T> Cm(col.data(), C * kh * kw, oh * ow);
        dW.noalias() += Gm * Cm.transpose();
      }
      if (tp.requiresGrad(ix)) {
        Tensor<T> dcol({C * kh * kw, oh * ow});
        detail::ECMap<T> Wm(tp.val(iw).data(), O, C * kh * kw);
        detail::EMap<T> dCm(dcol.data(), C * kh * kw, oh * ow);
        dCm.noalias() = Wm.transpose() * Gm;
        detail::col2im(dcol, C, H, W, kh, kw, stride, pad, oh, ow, tp.grad(ix));
      }
    });
  }
  return {&t, id};
}

// 2x2 max pooling with stride 2. Requires even spatial dims.
template <typename T>
Var<T> maxpool2(Var<T> x) {
  Tape<T>& t = *x.tape;
  const auto& s = x.val().shape();
  assert(s.size() == 3 && s[1] % 2 == 0 && s[2] % 2 == 0);
  int C = s[0], H = s[1], W = s[2];
  int oh = H / 2, ow = W / 2;
  Tensor<T> y({C, oh, ow});
  std::vector<std::int32_t> amax(static_cast<std::size_t>(C) * oh * ow);
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        int bestIdx = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            int iy = oy * 2 + dy, ix = ox * 2 + dx;
            T v = x.val().at(c, iy, ix);
            if (v > best) {
              best = v;
              bestIdx = iy * W + ix;
            }
          }
        y.at(c, oy, ox) = best;
        amax[(static_cast<std::size_t>(c) * oh + oy) * ow + ox] = bestIdx;
      }
  bool rg = x.requiresGrad();
  int id = t.push(std::move(y), rg);
  if (rg) {
    int ix = x.id;
    t.setBack(id, [id, ix, C, H, W, oh, ow, amax = std::move(amax)](Tape<T>& tp) {
      Tensor<T>& dx = tp.grad(ix);
      const Tensor<T>& g = tp.grad(id);
      for (int c = 0; c < C; ++c)
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(oh) * ow; ++i) {
          std::int64_t flat = static_cast<std::int64_t>(c) * oh * ow + i;
          dx[static_cast<std::int64_t>(c) * H * W + amax[static_cast<std::size_t>(flat)]] += g[flat];
        }
    });
  }
  return {&t, id};
}

template <typename T>
Var<T> globalAvgPool(Var<T> x) {
  Tape<T>& t = *x.tape;
  const auto& s = x.val().shape();
  assert(s.size() == 3);
  int C = s[0];
  std::int64_t hw = static_cast<std::int64_t>(s[1]) * s[2];
  Tensor<T> y({C});
  for (int c = 0; c < C; ++c) {
    T acc = 0;
    const T* p = x.val().data() + c * hw;
    for (std::int64_t i = 0; i < hw; ++i) acc += p[i];
    y[c] = acc / static_cast<T>(hw);
  }
  bool rg = x.requiresGrad();
  int id = t.push(std::move(y), rg);
  if (rg) {
    int ix = x.id;
    t.setBack(id, [id, ix, C, hw](Tape<T>& tp) {
      Tensor<T>& dx = tp.grad(ix);
      const Tensor<T>& g = tp.grad(id);
      for (int c = 0; c < C; ++c) {
        T gv = g[c] / static_cast<T>(hw);
        T* p = dx.data() + c * hw;
        for (std::int64_t i = 0; i < hw; ++i) p[i] += gv;
      }
    });
  }
  return {&t, id};
}

// Bilinear resize (half-pixel centers, PyTorch align_corners=false convention).
template <typename T>
Var<T> resizeBilinear(Var<T> x, int oh, int ow) {
  Tape<T>& t = *x.tape;
  const auto& s = x.val().shape();
  assert(s.size() == 3);
  int C = s[0], H = s[1], W = s[2];
  if (oh == H && ow == W) return x;
  struct Tap {
    int y0, x0;
    T wy, wx;
  };
  std::vector<Tap> taps(static_cast<std::size_t>(oh) * ow);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox) {
      T sy = (static_cast<T>(oy) + T(0.5)) * static_cast<T>(H) / static_cast<T>(oh) - T(0.5);
      T sx = (static_cast<T>(ox) + T(0.5)) * static_cast<T>(W) / static_cast<T>(ow) - T(0.5);
      sy = std::min(std::max(sy, T(0)), static_cast<T>(H - 1));
      sx = std::min(std::max(sx, T(0)), static_cast<T>(W - 1));
      int y0 = std::min(static_cast<int>(sy), H - 2 < 0 ? 0 : H - 2);
      int x0 = std::min(static_cast<int>(sx), W - 2 < 0 ? 0 : W - 2);
      taps[static_cast<std::size_t>(oy) * ow + ox] = Tap{y0, x0, sy - static_cast<T>(y0), sx - static_cast<T>(x0)};
    }
  Tensor<T> y({C, oh, ow});
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        const Tap& tp_ = taps[static_cast<std::size_t>(oy) * ow + ox];
        int y1 = std::min(tp_.y0 + 1, H - 1), x1 = std::min(tp_.x0 + 1, W - 1);
        T v00 = x.val().at(c, tp_.y0, tp_.x0), v01 = x.val().at(c, tp_.y0, x1);
        T v10 = x.val().at(c, y1, tp_.x0), v11 = x.val().at(c, y1, x1);
        y.at(c, oy, ox) = (T(1) - tp_.wy) * ((T(1) - tp_.wx) * v00 + tp_.wx * v01) + tp_.wy * ((T(1) - tp_.wx) * v10 + tp_.wx * v11);
      }
  bool rg = x.requiresGrad();
  int id = t.push(std::move(y), rg);
  if (rg) {
    int ix = x.id;
    t.setBack(id, [id, ix, C, H, W, oh, ow, taps = std::move(taps)](Tape<T>& tp) {
      Tensor<T>& dx = tp.grad(ix);
      const Tensor<T>& g = tp.grad(id);
      for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            const Tap& tap = taps[static_cast<std::size_t>(oy) * ow + ox];
            int y1 = std::min(tap.y0 + 1, H - 1), x1 = std::min(tap.x0 + 1, W - 1);
            T gv = g.at(c, oy, ox);
            dx.at(c, tap.y0, tap.x0) += (T(1) - tap.wy) * (T(1) - tap.wx) * gv;
            dx.at(c, tap.y0, x1) += (T(1) - tap.wy) * tap.wx * gv;
            dx.at(c, y1, tap.x0) += tap.wy * (T(1) - tap.wx) * gv;
            dx.at(c, y1, x1) += tap.wy * tap.wx * gv;
          }
    });
  }
  return {&t, id};
}

template <typename T>
Var<T> upsampleNearest2(Var<T> x) {
  Tape<T>& t = *x.tape;
  const auto& s = x.val().shape();
  assert(s.size() == 3);
  int C = s[0], H = s[1], W = s[2];
  Tensor<T> y({C, H * 2, W * 2});
  for (int c = 0; c < C; ++c)
    for (int iy = 0; iy < H * 2; ++iy)
      for (int ix = 0; ix < W * 2; ++ix) y.at(c, iy, ix) = x.val().at(c, iy / 2, ix / 2);
  bool rg = x.requiresGrad();
  int id = t.push(std::move(y), rg);
  if (rg) {
    int ixv = x.id;
    t.setBack(id, [id, ixv, C, H, W](Tape<T>& tp) {
      Tensor<T>& dx = tp.grad(ixv);
      const Tensor<T>& g = tp.grad(id);
      for (int c = 0; c < C; ++c)
        for (int iy = 0; iy < H * 2; ++iy)
          for (int ix = 0; ix < W * 2; ++ix) dx.at(c, iy / 2, ix / 2) += g.at(c, iy, ix);
    });
  }
  return {&t, id};
}

}  // namespace cmr::ad

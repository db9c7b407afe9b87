#pragma once
// Reverse-mode autodiff on an eager tape, plus the Adam optimizer.
//
// Covers exactly the operator set the scoresheet reader needs: matmul,
// conv2d (valid padding, stride), maxpool2d, relu/tanh/sigmoid, softmax
// (last axis), concat, embedding gather, affine, dropout, masked
// cross-entropy with logits, and a handful of elementwise helpers for the
// recurrent cells. Tensors are value-semantic; a Tape belongs to one
// forward/backward pass on one thread.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "tensor.hpp"
#include "util.hpp"

namespace csr {

namespace detail {

// C[M,N] = (or +=) A[M,K] * B[K,N]
template <typename T>
void gemm(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<size_t>(i) * n;
    if (!accumulate) std::memset(crow, 0, sizeof(T) * static_cast<size_t>(n));
    const T* arow = a + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,K] = (or +=) A[M,N] * B^T where B is [K,N] (row dot products)
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int n, int k, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * n;
    T* crow = c + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const T* brow = b + static_cast<size_t>(p) * n;
      T s = 0;
      for (int j = 0; j < n; ++j) s += arow[j] * brow[j];
      if (accumulate)
        crow[p] += s;
      else
        crow[p] = s;
    }
  }
}

// C[K,N] += A^T * B where A is [M,K], B is [M,N]
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * k;
    const T* brow = b + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      T av = arow[p];
      if (av == T(0)) continue;
      T* crow = c + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// A trainable tensor with gradient and Adam moment storage.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> adam_m;
  Tensor<T> adam_v;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> init)
      : name(std::move(n)),
        value(std::move(init)),
        grad(value.shape()),
        adam_m(value.shape()),
        adam_v(value.shape()) {}

  void zero_grad() { grad.fill(T(0)); }
};

enum class Reduction { Mean, Sum };

template <typename T>
class Tape {
 public:
  using Var = int;

  Tape() { nodes_.reserve(512); }

  size_t node_count() const { return nodes_.size(); }

  const Tensor<T>& value(Var v) const { return nodes_[static_cast<size_t>(v)].value; }

  bool has_grad(Var v) const { return !nodes_[static_cast<size_t>(v)].grad.empty(); }

  Tensor<T>& grad(Var v) {
    Node& n = nodes_[static_cast<size_t>(v)];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  Var leaf(Tensor<T> value, bool needs_grad = false) {
    return push(std::move(value), needs_grad, {}, nullptr);
  }

  // Parameter leaf: its gradient is flushed into p.grad after backward().
  Var param(Parameter<T>& p) {
    Var v = push(p.value, true, {}, nullptr);
    param_leaves_.push_back({v, &p});
    return v;
  }

  // ---- primitives ----

  Var matmul(Var a, Var b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0), "matmul",
            {a, b});
    int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor<T> out({m, n});
    detail::gemm(av.data(), bv.data(), out.data(), m, k, n, false);
    return push(std::move(out), needs(a) || needs(b), {a, b},
                [a, b, m, k, n](Tape& t, Var self) {
                  const Tensor<T>& g = t.grad_ref(self);
                  if (t.needs(a))
                    detail::gemm_nt(g.data(), t.value(b).data(), t.grad(a).data(), m,
                                    n, k, true);
                  if (t.needs(b))
                    detail::gemm_tn_acc(t.value(a).data(), g.data(), t.grad(b).data(),
                                        m, k, n);
                });
  }

  // x:(R,I) w:(I,O) b:(O) -> (R,O)
  Var affine(Var x, Var w, Var b) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& wv = value(w);
    const Tensor<T>& bv = value(b);
    require(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(0) &&
                static_cast<size_t>(wv.dim(1)) == bv.size(),
            "affine", {x, w, b});
    int r = xv.dim(0), i = xv.dim(1), o = wv.dim(1);
    Tensor<T> out({r, o});
    detail::gemm(xv.data(), wv.data(), out.data(), r, i, o, false);
    for (int rr = 0; rr < r; ++rr) {
      T* row = out.data() + static_cast<size_t>(rr) * o;
      for (int j = 0; j < o; ++j) row[j] += bv[static_cast<size_t>(j)];
    }
    return push(std::move(out), needs(x) || needs(w) || needs(b), {x, w, b},
                [x, w, b, r, i, o](Tape& t, Var self) {
                  const Tensor<T>& g = t.grad_ref(self);
                  if (t.needs(x))
                    detail::gemm_nt(g.data(), t.value(w).data(), t.grad(x).data(), r,
                                    o, i, true);
                  if (t.needs(w))
                    detail::gemm_tn_acc(t.value(x).data(), g.data(), t.grad(w).data(),
                                        r, i, o);
                  if (t.needs(b)) {
                    Tensor<T>& gb = t.grad(b);
                    for (int rr = 0; rr < r; ++rr) {
                      const T* row = g.data() + static_cast<size_t>(rr) * o;
                      for (int j = 0; j < o; ++j) gb[static_cast<size_t>(j)] += row[j];
                    }
                  }
                });
  }

  // x:(H,W,C) w:(KH,KW,C,O) b:(O) or invalid() -> ((H-KH)/sy+1, (W-KW)/sx+1, O)
  // Valid padding. Bias optional.
  Var conv2d(Var x, Var w, Var b, int sy, int sx) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& wv = value(w);
    require(xv.rank() == 3 && wv.rank() == 4 && xv.dim(2) == wv.dim(2) && sy >= 1 &&
                sx >= 1 && xv.dim(0) >= wv.dim(0) && xv.dim(1) >= wv.dim(1),
            "conv2d", {x, w});
    int h = xv.dim(0), wd = xv.dim(1), c = xv.dim(2);
    int kh = wv.dim(0), kw = wv.dim(1), o = wv.dim(3);
    int oh = (h - kh) / sy + 1, ow = (wd - kw) / sx + 1;
    int m = oh * ow, k = kh * kw * c;

    auto col = std::make_shared<std::vector<T>>(static_cast<size_t>(m) * k);
    im2col(xv.data(), h, wd, c, kh, kw, sy, sx, oh, ow, col->data());
    Tensor<T> out({oh, ow, o});
    detail::gemm(col->data(), wv.data(), out.data(), m, k, o, false);
    if (b >= 0) {
      const Tensor<T>& bv = value(b);
      require(static_cast<int>(bv.size()) == o, "conv2d bias", {b});
      for (int r = 0; r < m; ++r) {
        T* row = out.data() + static_cast<size_t>(r) * o;
        for (int j = 0; j < o; ++j) row[j] += bv[static_cast<size_t>(j)];
      }
    }
    std::vector<Var> parents = b >= 0 ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    bool ng = needs(x) || needs(w) || (b >= 0 && needs(b));
    return push(std::move(out), ng, parents,
                [x, w, b, col, h, wd, c, kh, kw, sy, sx, oh, ow, o, m, k](Tape& t,
                                                                         Var self) {
                  const Tensor<T>& g = t.grad_ref(self);
                  if (t.needs(w))
                    detail::gemm_tn_acc(col->data(), g.data(), t.grad(w).data(), m, k,
                                        o);
                  if (b >= 0 && t.needs(b)) {
                    Tensor<T>& gb = t.grad(b);
                    for (int r = 0; r < m; ++r) {
                      const T* row = g.data() + static_cast<size_t>(r) * o;
                      for (int j = 0; j < o; ++j) gb[static_cast<size_t>(j)] += row[j];
                    }
                  }
                  if (t.needs(x)) {
                    std::vector<T> dcol(static_cast<size_t>(m) * k);
                    detail::gemm_nt(g.data(), t.value(w).data(), dcol.data(), m, o, k,
                                    false);
                    col2im_add(dcol.data(), h, wd, c, kh, kw, sy, sx, oh, ow,
                               t.grad(x).data());
                  }
                });
  }

  Var maxpool2d(Var x, int kh, int kw, int sy, int sx) {
    const Tensor<T>& xv = value(x);
    require(xv.rank() == 3 && kh >= 1 && kw >= 1 && sy >= 1 && sx >= 1 &&
                xv.dim(0) >= kh && xv.dim(1) >= kw,
            "maxpool2d", {x});
    int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
    int oh = (h - kh) / sy + 1, ow = (w - kw) / sx + 1;
    Tensor<T> out({oh, ow, c});
    auto arg = std::make_shared<std::vector<int>>(out.size());
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        for (int ch = 0; ch < c; ++ch) {
          T best = -std::numeric_limits<T>::infinity();
          int besti = 0;
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              int idx = ((oy * sy + ky) * w + (ox * sx + kx)) * c + ch;
              if (xv[static_cast<size_t>(idx)] > best) {
                best = xv[static_cast<size_t>(idx)];
                besti = idx;
              }
            }
          size_t oidx = (static_cast<size_t>(oy) * ow + ox) * c + ch;
          out[oidx] = best;
          (*arg)[oidx] = besti;
        }
    return push(std::move(out), needs(x), {x}, [x, arg](Tape& t, Var self) {
      const Tensor<T>& g = t.grad_ref(self);
      if (!t.needs(x)) return;
      Tensor<T>& gx = t.grad(x);
      for (size_t i = 0; i < g.size(); ++i)
        gx[static_cast<size_t>((*arg)[i])] += g[i];
    });
  }

  Var relu(Var x) {
    Tensor<T> out = value(x);
    for (size_t i = 0; i < out.size(); ++i)
      if (out[i] < T(0)) out[i] = T(0);
    return push(std::move(out), needs(x), {x}, [x](Tape& t, Var self) {
      if (!t.needs(x)) return;
      const Tensor<T>& g = t.grad_ref(self);
      const Tensor<T>& xv = t.value(x);
      Tensor<T>& gx = t.grad(x);
      for (size_t i = 0; i < g.size(); ++i)
        if (xv[i] > T(0)) gx[i] += g[i];
    });
  }

  Var tanh_op(Var x) {
    Tensor<T> out = value(x);
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    return unary_from_output(x, std::move(out),
                             [](T y, T g) { return g * (T(1) - y * y); });
  }

  Var sigmoid(Var x) {
    Tensor<T> out = value(x);
    for (size_t i = 0; i < out.size(); ++i)
      out[i] = T(1) / (T(1) + std::exp(-out[i]));
    return unary_from_output(x, std::move(out),
                             [](T y, T g) { return g * y * (T(1) - y); });
  }

  // Softmax over the last axis.
  Var softmax(Var x) {
    const Tensor<T>& xv = value(x);
    require(xv.rank() >= 1 && xv.dim(xv.rank() - 1) >= 1, "softmax", {x});
    int n = xv.dim(xv.rank() - 1);
    int rows = static_cast<int>(xv.size()) / n;
    Tensor<T> out = xv;
    for (int r = 0; r < rows; ++r) {
      T* row = out.data() + static_cast<size_t>(r) * n;
      T mx = row[0];
      for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
      T sum = 0;
      for (int j = 0; j < n; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      for (int j = 0; j < n; ++j) row[j] /= sum;
    }
    return push(std::move(out), needs(x), {x}, [x, rows, n](Tape& t, Var self) {
      if (!t.needs(x)) return;
      const Tensor<T>& g = t.grad_ref(self);
      const Tensor<T>& y = t.value(self);
      Tensor<T>& gx = t.grad(x);
      for (int r = 0; r < rows; ++r) {
        const T* yr = y.data() + static_cast<size_t>(r) * n;
        const T* gr = g.data() + static_cast<size_t>(r) * n;
        T* gxr = gx.data() + static_cast<size_t>(r) * n;
        T dot = 0;
        for (int j = 0; j < n; ++j) dot += gr[j] * yr[j];
        for (int j = 0; j < n; ++j) gxr[j] += yr[j] * (gr[j] - dot);
      }
    });
  }

  // Concatenate two rank-2 tensors along axis 0 or 1.
  Var concat(Var a, Var b, int axis) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    require(av.rank() == 2 && bv.rank() == 2 && (axis == 0 || axis == 1) &&
                av.dim(1 - axis) == bv.dim(1 - axis),
            "concat", {a, b});
    int r0 = av.dim(0), c0 = av.dim(1), r1 = bv.dim(0), c1 = bv.dim(1);
    Tensor<T> out(axis == 0 ? std::vector<int>{r0 + r1, c0}
                            : std::vector<int>{r0, c0 + c1});
    if (axis == 0) {
      std::memcpy(out.data(), av.data(), sizeof(T) * av.size());
      std::memcpy(out.data() + av.size(), bv.data(), sizeof(T) * bv.size());
    } else {
      for (int r = 0; r < r0; ++r) {
        std::memcpy(out.data() + static_cast<size_t>(r) * (c0 + c1),
                    av.data() + static_cast<size_t>(r) * c0, sizeof(T) * c0);
        std::memcpy(out.data() + static_cast<size_t>(r) * (c0 + c1) + c0,
                    bv.data() + static_cast<size_t>(r) * c1, sizeof(T) * c1);
      }
    }
    return push(std::move(out), needs(a) || needs(b), {a, b},
                [a, b, axis, r0, c0, c1](Tape& t, Var self) {
                  const Tensor<T>& g = t.grad_ref(self);
                  if (axis == 0) {
                    if (t.needs(a)) {
                      Tensor<T>& ga = t.grad(a);
                      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                    }
                    if (t.needs(b)) {
                      Tensor<T>& gb = t.grad(b);
                      size_t off = t.value(a).size();
                      for (size_t i = 0; i < gb.size(); ++i) gb[i] += g[off + i];
                    }
                  } else {
                    if (t.needs(a)) {
                      Tensor<T>& ga = t.grad(a);
                      for (int r = 0; r < r0; ++r)
                        for (int j = 0; j < c0; ++j)
                          ga.at(r, j) += g.data()[static_cast<size_t>(r) * (c0 + c1) + j];
                    }
                    if (t.needs(b)) {
                      Tensor<T>& gb = t.grad(b);
                      for (int r = 0; r < r0; ++r)
                        for (int j = 0; j < c1; ++j)
                          gb.at(r, j) +=
                              g.data()[static_cast<size_t>(r) * (c0 + c1) + c0 + j];
                    }
                  }
                });
  }

  // table:(V,E), indices -> (|indices|, E)
  Var embedding_gather(Var table, std::vector<int> indices) {
    const Tensor<T>& tv = value(table);
    require(tv.rank() == 2, "embedding_gather", {table});
    int v = tv.dim(0), e = tv.dim(1);
    for (int idx : indices)
      if (idx < 0 || idx >= v)
        throw DataError("embedding_gather: code " + std::to_string(idx) +
                        " out of range [0," + std::to_string(v) + ")");
    Tensor<T> out({static_cast<int>(indices.size()), e});
    for (size_t r = 0; r < indices.size(); ++r)
      std::memcpy(out.data() + r * e,
                  tv.data() + static_cast<size_t>(indices[r]) * e, sizeof(T) * e);
    auto idxs = std::make_shared<std::vector<int>>(std::move(indices));
    return push(std::move(out), needs(table), {table},
                [table, idxs, e](Tape& t, Var self) {
                  if (!t.needs(table)) return;
                  const Tensor<T>& g = t.grad_ref(self);
                  Tensor<T>& gt = t.grad(table);
                  for (size_t r = 0; r < idxs->size(); ++r) {
                    T* dst = gt.data() + static_cast<size_t>((*idxs)[r]) * e;
                    const T* src = g.data() + r * e;
                    for (int j = 0; j < e; ++j) dst[j] += src[j];
                  }
                });
  }

  // Inverted dropout: scales survivors by 1/(1-rate) at train time, identity
  // in eval mode.
  Var dropout(Var x, double rate, bool train, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0)
      throw UsageError("dropout: rate must be in [0,1)");
    if (!train || rate == 0.0) return x;
    const Tensor<T>& xv = value(x);
    Tensor<T> out = xv;
    auto mask = std::make_shared<std::vector<T>>(xv.size());
    T scale = T(1.0 / (1.0 - rate));
    for (size_t i = 0; i < out.size(); ++i) {
      T m = rng.bernoulli(rate) ? T(0) : scale;
      (*mask)[i] = m;
      out[i] *= m;
    }
    return push(std::move(out), needs(x), {x}, [x, mask](Tape& t, Var self) {
      if (!t.needs(x)) return;
      const Tensor<T>& g = t.grad_ref(self);
      Tensor<T>& gx = t.grad(x);
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
    });
  }

  // logits:(R,V); loss over rows where mask is true. Scalar output.
  Var masked_cross_entropy_with_logits(Var logits, const std::vector<int>& targets,
                                       const std::vector<uint8_t>& mask,
                                       Reduction reduction = Reduction::Mean) {
    const Tensor<T>& lv = value(logits);
    require(lv.rank() == 2, "masked_cross_entropy_with_logits", {logits});
    int r = lv.dim(0), v = lv.dim(1);
    if (static_cast<int>(targets.size()) != r || static_cast<int>(mask.size()) != r)
      throw ShapeError("masked_cross_entropy_with_logits: targets/mask length " +
                       std::to_string(targets.size()) + "/" +
                       std::to_string(mask.size()) + " vs rows " + std::to_string(r));
    for (size_t i = 0; i < lv.size(); ++i)
      if (!std::isfinite(static_cast<double>(lv[i])))
        throw NumericError("masked_cross_entropy_with_logits: non-finite logit");
    auto probs = std::make_shared<Tensor<T>>(lv.shape());
    T total = 0;
    int count = 0;
    for (int row = 0; row < r; ++row) {
      const T* lr = lv.data() + static_cast<size_t>(row) * v;
      T* pr = probs->data() + static_cast<size_t>(row) * v;
      T mx = lr[0];
      for (int j = 1; j < v; ++j) mx = std::max(mx, lr[j]);
      T sum = 0;
      for (int j = 0; j < v; ++j) {
        pr[j] = std::exp(lr[j] - mx);
        sum += pr[j];
      }
      for (int j = 0; j < v; ++j) pr[j] /= sum;
      if (!mask[static_cast<size_t>(row)]) continue;
      int tgt = targets[static_cast<size_t>(row)];
      if (tgt < 0 || tgt >= v)
        throw DataError("cross entropy: target code " + std::to_string(tgt) +
                        " out of range");
      total += -(std::log(pr[tgt] + std::numeric_limits<T>::min()));
      ++count;
    }
    T denom = (reduction == Reduction::Mean && count > 0) ? T(count) : T(1);
    Tensor<T> out({1});
    out[0] = count > 0 ? total / denom : T(0);
    auto tg = std::make_shared<std::vector<int>>(targets);
    auto mk = std::make_shared<std::vector<uint8_t>>(mask);
    return push(std::move(out), needs(logits), {logits},
                [logits, probs, tg, mk, r, v, denom](Tape& t, Var self) {
                  if (!t.needs(logits)) return;
                  T gscale = t.grad_ref(self)[0] / denom;
                  Tensor<T>& gl = t.grad(logits);
                  for (int row = 0; row < r; ++row) {
                    if (!(*mk)[static_cast<size_t>(row)]) continue;
                    const T* pr = probs->data() + static_cast<size_t>(row) * v;
                    T* gr = gl.data() + static_cast<size_t>(row) * v;
                    for (int j = 0; j < v; ++j) gr[j] += gscale * pr[j];
                    gr[(*tg)[static_cast<size_t>(row)]] -= gscale;
                  }
                });
  }

  // ---- elementwise / structural helpers ----

  Var add(Var a, Var b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    require(av.same_shape(bv), "add", {a, b});
    Tensor<T> out = av;
    for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return push(std::move(out), needs(a) || needs(b), {a, b},
                [a, b](Tape& t, Var self) {
                  const Tensor<T>& g = t.grad_ref(self);
                  if (t.needs(a)) {
                    Tensor<T>& ga = t.grad(a);
                    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  }
                  if (t.needs(b)) {
                    Tensor<T>& gb = t.grad(b);
                    for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                  }
                });
  }

  Var mul(Var a, Var b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    require(av.same_shape(bv), "mul", {a, b});
    Tensor<T> out = av;
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return push(std::move(out), needs(a) || needs(b), {a, b},
                [a, b](Tape& t, Var self) {
                  const Tensor<T>& g = t.grad_ref(self);
                  if (t.needs(a)) {
                    Tensor<T>& ga = t.grad(a);
                    const Tensor<T>& bv2 = t.value(b);
                    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
                  }
                  if (t.needs(b)) {
                    Tensor<T>& gb = t.grad(b);
                    const Tensor<T>& av2 = t.value(a);
                    for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
                  }
                });
  }

  Var one_minus(Var x) {
    Tensor<T> out = value(x);
    for (size_t i = 0; i < out.size(); ++i) out[i] = T(1) - out[i];
    return push(std::move(out), needs(x), {x}, [x](Tape& t, Var self) {
      if (!t.needs(x)) return;
      const Tensor<T>& g = t.grad_ref(self);
      Tensor<T>& gx = t.grad(x);
      for (size_t i = 0; i < g.size(); ++i) gx[i] -= g[i];
    });
  }

  // m:(R,C) + v:(1,C) broadcast over rows
  Var add_rowvec(Var m, Var v) {
    const Tensor<T>& mv = value(m);
    const Tensor<T>& vv = value(v);
    require(mv.rank() == 2 && vv.rank() == 2 && vv.dim(0) == 1 &&
                vv.dim(1) == mv.dim(1),
            "add_rowvec", {m, v});
    int r = mv.dim(0), c = mv.dim(1);
    Tensor<T> out = mv;
    for (int rr = 0; rr < r; ++rr)
      for (int j = 0; j < c; ++j) out.at(rr, j) += vv[static_cast<size_t>(j)];
    return push(std::move(out), needs(m) || needs(v), {m, v},
                [m, v, r, c](Tape& t, Var self) {
                  const Tensor<T>& g = t.grad_ref(self);
                  if (t.needs(m)) {
                    Tensor<T>& gm = t.grad(m);
                    for (size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
                  }
                  if (t.needs(v)) {
                    Tensor<T>& gv = t.grad(v);
                    for (int rr = 0; rr < r; ++rr)
                      for (int j = 0; j < c; ++j)
                        gv[static_cast<size_t>(j)] += g.at(rr, j);
                  }
                });
  }

  // Stack L row vectors (1,C) into (L,C).
  Var stack_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw UsageError("stack_rows: empty row list");
    int c = value(rows[0]).dim(1);
    bool ng = false;
    for (Var r : rows) {
      const Tensor<T>& rv = value(r);
      require(rv.rank() == 2 && rv.dim(0) == 1 && rv.dim(1) == c, "stack_rows", {r});
      ng = ng || needs(r);
    }
    int l = static_cast<int>(rows.size());
    Tensor<T> out({l, c});
    for (int i = 0; i < l; ++i)
      std::memcpy(out.data() + static_cast<size_t>(i) * c,
                  value(rows[static_cast<size_t>(i)]).data(), sizeof(T) * c);
    auto rs = std::make_shared<std::vector<Var>>(rows);
    return push(std::move(out), ng, rows, [rs, c](Tape& t, Var self) {
      const Tensor<T>& g = t.grad_ref(self);
      for (size_t i = 0; i < rs->size(); ++i) {
        Var r = (*rs)[i];
        if (!t.needs(r)) continue;
        Tensor<T>& gr = t.grad(r);
        const T* src = g.data() + i * c;
        for (int j = 0; j < c; ++j) gr[static_cast<size_t>(j)] += src[j];
      }
    });
  }

  // Row slice of a rank-2 tensor -> (1,C)
  Var row(Var x, int i) {
    const Tensor<T>& xv = value(x);
    require(xv.rank() == 2 && i >= 0 && i < xv.dim(0), "row", {x});
    int c = xv.dim(1);
    Tensor<T> out({1, c});
    std::memcpy(out.data(), xv.data() + static_cast<size_t>(i) * c, sizeof(T) * c);
    return push(std::move(out), needs(x), {x}, [x, i, c](Tape& t, Var self) {
      if (!t.needs(x)) return;
      const Tensor<T>& g = t.grad_ref(self);
      Tensor<T>& gx = t.grad(x);
      T* dst = gx.data() + static_cast<size_t>(i) * c;
      for (int j = 0; j < c; ++j) dst[j] += g[static_cast<size_t>(j)];
    });
  }

  Var reshape(Var x, std::vector<int> shape) {
    Tensor<T> out = value(x).reshaped(std::move(shape));
    return push(std::move(out), needs(x), {x}, [x](Tape& t, Var self) {
      if (!t.needs(x)) return;
      const Tensor<T>& g = t.grad_ref(self);
      Tensor<T>& gx = t.grad(x);
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }

  Var scale(Var x, T c) {
    Tensor<T> out = value(x);
    for (size_t i = 0; i < out.size(); ++i) out[i] *= c;
    return push(std::move(out), needs(x), {x}, [x, c](Tape& t, Var self) {
      if (!t.needs(x)) return;
      const Tensor<T>& g = t.grad_ref(self);
      Tensor<T>& gx = t.grad(x);
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * c;
    });
  }

  Var sum(Var x) {
    const Tensor<T>& xv = value(x);
    Tensor<T> out({1});
    T s = 0;
    for (size_t i = 0; i < xv.size(); ++i) s += xv[i];
    out[0] = s;
    return push(std::move(out), needs(x), {x}, [x](Tape& t, Var self) {
      if (!t.needs(x)) return;
      T g = t.grad_ref(self)[0];
      Tensor<T>& gx = t.grad(x);
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }

  // ---- backward ----

  // Seeds d(loss)/d(loss) = seed_grad, walks the tape in reverse creation
  // order (reverse topological), then flushes parameter-leaf gradients into
  // Parameter::grad. Repeated calls without zeroing accumulate.
  void backward(Var loss, T seed_grad = T(1)) {
    const Tensor<T>& lv = value(loss);
    if (lv.size() != 1)
      throw UsageError("backward: loss must be scalar, got " + lv.shape_str());
    grad(loss)[0] += seed_grad;
    for (int i = loss; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.needs_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
    for (auto& [var, p] : param_leaves_) {
      Node& n = nodes_[static_cast<size_t>(var)];
      if (n.grad.empty()) continue;
      for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
    }
  }

  bool needs(Var v) const { return nodes_[static_cast<size_t>(v)].needs_grad; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    std::function<void(Tape&, Var)> backward;
  };

  const Tensor<T>& grad_ref(Var v) const { return nodes_[static_cast<size_t>(v)].grad; }

  Var push(Tensor<T> value, bool needs_grad, const std::vector<Var>& /*parents*/,
           std::function<void(Tape&, Var)> backward) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
  }

  void require(bool ok, const char* op, std::initializer_list<Var> vars) const {
    if (ok) return;
    std::string msg = std::string(op) + ": incompatible shapes";
    for (Var v : vars) msg += " " + value(v).shape_str();
    throw ShapeError(msg);
  }

  template <typename F>
  Var unary_from_output(Var x, Tensor<T> out, F dfdy) {
    return push(std::move(out), needs(x), {x}, [x, dfdy](Tape& t, Var self) {
      if (!t.needs(x)) return;
      const Tensor<T>& g = t.grad_ref(self);
      const Tensor<T>& y = t.value(self);
      Tensor<T>& gx = t.grad(x);
      for (size_t i = 0; i < g.size(); ++i) gx[i] += dfdy(y[i], g[i]);
    });
  }

  static void im2col(const T* x, int h, int w, int c, int kh, int kw, int sy, int sx,
                     int oh, int ow, T* col) {
    int k = kh * kw * c;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        T* row = col + (static_cast<size_t>(oy) * ow + ox) * k;
        for (int ky = 0; ky < kh; ++ky) {
          const T* src = x + (static_cast<size_t>(oy * sy + ky) * w + ox * sx) * c;
          std::memcpy(row + static_cast<size_t>(ky) * kw * c, src,
                      sizeof(T) * static_cast<size_t>(kw) * c);
        }
      }
  }

  static void col2im_add(const T* col, int h, int w, int c, int kh, int kw, int sy,
                         int sx, int oh, int ow, T* dx) {
    int k = kh * kw * c;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        const T* row = col + (static_cast<size_t>(oy) * ow + ox) * k;
        for (int ky = 0; ky < kh; ++ky) {
          T* dst = dx + (static_cast<size_t>(oy * sy + ky) * w + ox * sx) * c;
          const T* src = row + static_cast<size_t>(ky) * kw * c;
          for (int i = 0; i < kw * c; ++i) dst[i] += src[i];
        }
      }
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<Var, Parameter<T>*>> param_leaves_;
};

// Sentinel for "no bias" in conv2d.
inline constexpr int kNoVar = -1;

// ---- optimizer ----

template <typename T>
struct AdamConfig {
  T lr = T(5e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
};

// Standard bias-corrected Adam. t is the 1-based step count; gradients are
// left untouched.
template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, const AdamConfig<T>& cfg,
               int64_t t) {
  if (t < 1) throw UsageError("adam_step: t must be >= 1 (bias correction)");
  T bc1 = T(1) - std::pow(cfg.beta1, static_cast<T>(t));
  T bc2 = T(1) - std::pow(cfg.beta2, static_cast<T>(t));
  for (Parameter<T>* p : params) {
    for (size_t i = 0; i < p->value.size(); ++i) {
      T g = p->grad[i];
      p->adam_m[i] = cfg.beta1 * p->adam_m[i] + (T(1) - cfg.beta1) * g;
      p->adam_v[i] = cfg.beta2 * p->adam_v[i] + (T(1) - cfg.beta2) * g * g;
      T mhat = p->adam_m[i] / bc1;
      T vhat = p->adam_v[i] / bc2;
      p->value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

template <typename T>
void zero_grads(const std::vector<Parameter<T>*>& params) {
  for (Parameter<T>* p : params) p->zero_grad();
}

template <typename T>
double grad_global_norm(const std::vector<Parameter<T>*>& params) {
  double s = 0;
  for (Parameter<T>* p : params)
    for (size_t i = 0; i < p->grad.size(); ++i)
      s += static_cast<double>(p->grad[i]) * static_cast<double>(p->grad[i]);
  return std::sqrt(s);
}

template <typename T>
void clip_grad_global_norm(const std::vector<Parameter<T>*>& params, double max_norm) {
  double norm = grad_global_norm(params);
  if (norm <= max_norm || norm == 0.0) return;
  T f = static_cast<T>(max_norm / norm);
  for (Parameter<T>* p : params)
    for (size_t i = 0; i < p->grad.size(); ++i) p->grad[i] *= f;
}

// Glorot-uniform initialization from a seeded generator; biases start at zero.
template <typename T>
Tensor<T> glorot_uniform(std::vector<int> shape, int fan_in, int fan_out, Rng& rng) {
  Tensor<T> t(std::move(shape));
  double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(rng.uniform(-limit, limit));
  return t;
}

}  // namespace csr

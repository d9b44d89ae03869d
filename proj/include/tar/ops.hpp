#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "tar/tensor.hpp"

// Differentiable op catalog. Every op computes its forward value eagerly and,
// when a tape is bound and any input requires gradients, records a backward
// closure. Closures capture the shared nodes, so buffers live until the tape
// is dropped. Gradients accumulate (+=), callers zero them between steps.

namespace tar {

namespace detail {

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapMat = Eigen::Map<RowMat<S>>;
template <class S>
using CMapMat = Eigen::Map<const RowMat<S>>;
template <class S>
using MapVec = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>;
template <class S>
using CMapVec = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>;

inline Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (size_t i = 0; i < r; ++i) {
    long da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    long db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      fail_shapes(op, "shapes are not broadcast-compatible", a, b);
    out[i] = std::max(da, db);
  }
  return out;
}

// Row-major strides of `s` aligned to the trailing dims of `out`, with 0 on
// broadcast dims so an odometer walk can advance both offsets in lockstep.
inline std::vector<long> broadcast_strides(const Shape& s, const Shape& out) {
  std::vector<long> st(out.size(), 0);
  long stride = 1;
  for (size_t i = 0; i < s.size(); ++i) {
    size_t si = s.size() - 1 - i;
    size_t oi = out.size() - 1 - i;
    st[oi] = (s[si] == 1 && out[oi] != 1) ? 0 : stride;
    stride *= s[si];
  }
  return st;
}

// Calls f(out_index, a_offset, b_offset) for every element of `out`.
template <class F>
void broadcast_walk(const Shape& out, const std::vector<long>& as,
                    const std::vector<long>& bs, F&& f) {
  long n = shape_numel(out);
  int r = static_cast<int>(out.size());
  if (r == 0) {
    if (n == 1) f(0, 0, 0);
    return;
  }
  std::vector<long> coord(r, 0);
  long ao = 0, bo = 0;
  for (long i = 0; i < n; ++i) {
    f(i, ao, bo);
    for (int d = r - 1; d >= 0; --d) {
      ++coord[d];
      ao += as[d];
      bo += bs[d];
      if (coord[d] < out[d]) break;
      ao -= as[d] * out[d];
      bo -= bs[d] * out[d];
      coord[d] = 0;
    }
  }
}

template <class S>
Tensor<S> make_out(Shape shape, std::vector<S> values, const char* op) {
  Tensor<S> out(std::move(shape), std::move(values));
  check_finite(out.values(), op);
  return out;
}

template <class S, class F>
void maybe_record(Tensor<S>& out, bool any_input_grad, F&& closure) {
  if (recording<S>() && any_input_grad) {
    out.set_requires_grad(true);
    active_tape<S>()->record(std::forward<F>(closure));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Broadcasting elementwise arithmetic
// ---------------------------------------------------------------------------

namespace detail {

// Shared skeleton: fwd(a,b)->v, and per-element backward contributions.
template <class S, class FwdF, class DaF, class DbF>
Tensor<S> binary_op(const char* op, const Tensor<S>& a, const Tensor<S>& b, FwdF fwd,
                    DaF da, DbF db) {
  Shape os = broadcast_shape(op, a.shape(), b.shape());
  auto as = broadcast_strides(a.shape(), os);
  auto bs = broadcast_strides(b.shape(), os);
  std::vector<S> vals(shape_numel(os));
  const S* pa = a.data();
  const S* pb = b.data();
  if (a.shape() == b.shape()) {
    for (long i = 0; i < static_cast<long>(vals.size()); ++i) vals[i] = fwd(pa[i], pb[i]);
  } else {
    broadcast_walk(os, as, bs, [&](long i, long ao, long bo) { vals[i] = fwd(pa[ao], pb[bo]); });
  }
  Tensor<S> out = make_out(std::move(os), std::move(vals), op);
  detail::maybe_record(out, a.requires_grad() || b.requires_grad(),
                       [an = a.node(), bn = b.node(), on = out.node(), as, bs, da, db] {
                         if (on->grad.empty()) return;
                         const S* go = on->grad.data();
                         const S* pa = an->values.data();
                         const S* pb = bn->values.data();
                         S* ga = an->requires_grad ? an->ensure_grad().data() : nullptr;
                         S* gb = bn->requires_grad ? bn->ensure_grad().data() : nullptr;
                         broadcast_walk(on->shape, as, bs, [&](long i, long ao, long bo) {
                           if (ga) ga[ao] += da(go[i], pa[ao], pb[bo]);
                           if (gb) gb[bo] += db(go[i], pa[ao], pb[bo]);
                         });
                       });
  return out;
}

}  // namespace detail

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op<S>(
      "add", a, b, [](S x, S y) { return x + y; }, [](S g, S, S) { return g; },
      [](S g, S, S) { return g; });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op<S>(
      "sub", a, b, [](S x, S y) { return x - y; }, [](S g, S, S) { return g; },
      [](S g, S, S) { return -g; });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op<S>(
      "mul", a, b, [](S x, S y) { return x * y; }, [](S g, S, S y) { return g * y; },
      [](S g, S x, S) { return g * x; });
}

template <class S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op<S>(
      "div", a, b, [](S x, S y) { return x / y; }, [](S g, S, S y) { return g / y; },
      [](S g, S x, S y) { return -g * x / (y * y); });
}

// Scalar forms avoid materializing constant tensors in hot paths.
template <class S>
Tensor<S> add(const Tensor<S>& a, S c) {
  std::vector<S> vals(a.values());
  for (S& v : vals) v += c;
  Tensor<S> out = detail::make_out(a.shape(), std::move(vals), "add");
  detail::maybe_record(out, a.requires_grad(), [an = a.node(), on = out.node()] {
    if (on->grad.empty()) return;
    auto& ga = an->ensure_grad();
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += on->grad[i];
  });
  return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, S c) {
  std::vector<S> vals(a.values());
  for (S& v : vals) v *= c;
  Tensor<S> out = detail::make_out(a.shape(), std::move(vals), "mul");
  detail::maybe_record(out, a.requires_grad(), [an = a.node(), on = out.node(), c] {
    if (on->grad.empty()) return;
    auto& ga = an->ensure_grad();
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += on->grad[i] * c;
  });
  return out;
}

template <class S>
Tensor<S> sub(S c, const Tensor<S>& a) {
  std::vector<S> vals(a.numel());
  for (long i = 0; i < a.numel(); ++i) vals[i] = c - a.data()[i];
  Tensor<S> out = detail::make_out(a.shape(), std::move(vals), "sub");
  detail::maybe_record(out, a.requires_grad(), [an = a.node(), on = out.node()] {
    if (on->grad.empty()) return;
    auto& ga = an->ensure_grad();
    for (size_t i = 0; i < ga.size(); ++i) ga[i] -= on->grad[i];
  });
  return out;
}

template <class S>
Tensor<S> div(S c, const Tensor<S>& a) {
  std::vector<S> vals(a.numel());
  for (long i = 0; i < a.numel(); ++i) vals[i] = c / a.data()[i];
  Tensor<S> out = detail::make_out(a.shape(), std::move(vals), "div");
  detail::maybe_record(out, a.requires_grad(), [an = a.node(), on = out.node(), c] {
    if (on->grad.empty()) return;
    auto& ga = an->ensure_grad();
    const S* pa = an->values.data();
    for (size_t i = 0; i < ga.size(); ++i) ga[i] -= on->grad[i] * c / (pa[i] * pa[i]);
  });
  return out;
}

template <class S>
Tensor<S> neg(const Tensor<S>& a) {
  return mul(a, S(-1));
}

// ---------------------------------------------------------------------------
// Unary activations
// ---------------------------------------------------------------------------

namespace detail {

template <class S, class FwdF, class DerivF>
Tensor<S> unary_op(const char* op, const Tensor<S>& a, FwdF fwd, DerivF deriv) {
  std::vector<S> vals(a.numel());
  for (long i = 0; i < a.numel(); ++i) vals[i] = fwd(a.data()[i]);
  Tensor<S> out = make_out(a.shape(), std::move(vals), op);
  detail::maybe_record(out, a.requires_grad(), [an = a.node(), on = out.node(), deriv] {
    if (on->grad.empty()) return;
    auto& ga = an->ensure_grad();
    for (size_t i = 0; i < ga.size(); ++i)
      ga[i] += on->grad[i] * deriv(an->values[i], on->values[i]);
  });
  return out;
}

}  // namespace detail

template <class S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  return detail::unary_op<S>(
      "sigmoid", a,
      [](S x) {
        // evaluate on the non-overflowing side
        if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
        S e = std::exp(x);
        return e / (S(1) + e);
      },
      [](S, S y) { return y * (S(1) - y); });
}

template <class S>
Tensor<S> tanh(const Tensor<S>& a) {
  return detail::unary_op<S>(
      "tanh", a, [](S x) { return std::tanh(x); }, [](S, S y) { return S(1) - y * y; });
}

template <class S>
Tensor<S> softplus(const Tensor<S>& a) {
  return detail::unary_op<S>(
      "softplus", a,
      [](S x) {
        // log(1+e^x) with the exponential kept on the underflowing side
        return x > S(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
      },
      [](S x, S) {
        if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
        S e = std::exp(x);
        return e / (S(1) + e);
      });
}

template <class S>
Tensor<S> relu(const Tensor<S>& a) {
  return detail::unary_op<S>(
      "relu", a, [](S x) { return x > S(0) ? x : S(0); },
      [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  // -1 in at most one slot infers that dim
  long known = 1;
  int infer = -1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) fail("reshape", "more than one inferred dimension");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) shape[infer] = a.numel() / known;
  if (shape_numel(shape) != a.numel())
    fail_shapes("reshape", "element count mismatch", a.shape(), shape);
  Tensor<S> out(std::move(shape), std::vector<S>(a.values()));
  detail::maybe_record(out, a.requires_grad(), [an = a.node(), on = out.node()] {
    if (on->grad.empty()) return;
    auto& ga = an->ensure_grad();
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += on->grad[i];
  });
  return out;
}

template <class S>
Tensor<S> permute(const Tensor<S>& a, const std::vector<int>& perm) {
  int r = a.rank();
  if (static_cast<int>(perm.size()) != r)
    fail("permute", "perm has " + std::to_string(perm.size()) + " entries for rank " +
                        std::to_string(r) + " tensor");
  std::vector<bool> seen(r, false);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[p]) fail("permute", "perm is not a permutation");
    seen[p] = true;
  }
  Shape os(r);
  for (int i = 0; i < r; ++i) os[i] = a.dim(perm[i]);
  // strides of input aligned to output dims
  std::vector<long> ist(r, 1);
  for (int i = r - 2; i >= 0; --i) ist[i] = ist[i + 1] * a.dim(i + 1);
  std::vector<long> st(r);
  for (int i = 0; i < r; ++i) st[i] = ist[perm[i]];
  std::vector<S> vals(a.numel());
  const S* pa = a.data();
  std::vector<long> zero(r, 0);
  detail::broadcast_walk(os, st, zero, [&](long i, long ao, long) { vals[i] = pa[ao]; });
  Tensor<S> out(std::move(os), std::move(vals));
  detail::maybe_record(out, a.requires_grad(), [an = a.node(), on = out.node(), st] {
    if (on->grad.empty()) return;
    S* ga = an->ensure_grad().data();
    const S* go = on->grad.data();
    std::vector<long> zero(on->shape.size(), 0);
    detail::broadcast_walk(on->shape, st, zero, [&](long i, long ao, long) { ga[ao] += go[i]; });
  });
  return out;
}

template <class S>
Tensor<S> transpose2d(const Tensor<S>& a) {
  if (a.rank() != 2) fail("transpose2d", "expected rank-2 input, got " + shape_str(a.shape()));
  return permute(a, {1, 0});
}

template <class S>
Tensor<S> expand(const Tensor<S>& a, const Shape& shape) {
  Shape os = detail::broadcast_shape("expand", a.shape(), shape);
  if (os != shape) fail_shapes("expand", "cannot expand to target shape", a.shape(), shape);
  auto as = detail::broadcast_strides(a.shape(), os);
  std::vector<long> zero(os.size(), 0);
  std::vector<S> vals(shape_numel(os));
  const S* pa = a.data();
  detail::broadcast_walk(os, as, zero, [&](long i, long ao, long) { vals[i] = pa[ao]; });
  Tensor<S> out(std::move(os), std::move(vals));
  detail::maybe_record(out, a.requires_grad(), [an = a.node(), on = out.node(), as] {
    if (on->grad.empty()) return;
    S* ga = an->ensure_grad().data();
    const S* go = on->grad.data();
    std::vector<long> zero(on->shape.size(), 0);
    detail::broadcast_walk(on->shape, as, zero, [&](long i, long ao, long) { ga[ao] += go[i]; });
  });
  return out;
}

template <class S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) fail("concat", "no inputs");
  int r = parts[0].rank();
  if (axis < 0 || axis >= r) fail("concat", "axis " + std::to_string(axis) + " out of range");
  long axis_total = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) fail_shapes("concat", "rank mismatch", parts[0].shape(), p.shape());
    for (int d = 0; d < r; ++d)
      if (d != axis && p.dim(d) != parts[0].dim(d))
        fail_shapes("concat", "non-axis dims must match", parts[0].shape(), p.shape());
    axis_total += p.dim(axis);
  }
  Shape os = parts[0].shape();
  os[axis] = axis_total;
  long inner = 1;
  for (int d = axis + 1; d < r; ++d) inner *= os[d];
  long outer = shape_numel(os) / (axis_total * inner);
  std::vector<S> vals(shape_numel(os));
  long off = 0;
  for (const auto& p : parts) {
    long block = p.dim(axis) * inner;
    for (long o = 0; o < outer; ++o)
      std::copy_n(p.data() + o * block, block, vals.data() + o * axis_total * inner + off);
    off += block;
  }
  Tensor<S> out(std::move(os), std::move(vals));
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  std::vector<std::shared_ptr<TensorNode<S>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  detail::maybe_record(out, any, [nodes, on = out.node(), axis, inner, outer, axis_total] {
    if (on->grad.empty()) return;
    const S* go = on->grad.data();
    long off = 0;
    for (auto& n : nodes) {
      long block = n->shape[axis] * inner;
      if (n->requires_grad) {
        S* ga = n->ensure_grad().data();
        for (long o = 0; o < outer; ++o) {
          const S* src = go + o * axis_total * inner + off;
          S* dst = ga + o * block;
          for (long i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
      off += block;
    }
  });
  return out;
}

template <class S>
Tensor<S> slice(const Tensor<S>& a, int axis, long start, long len) {
  int r = a.rank();
  if (axis < 0 || axis >= r) fail("slice", "axis " + std::to_string(axis) + " out of range");
  if (start < 0 || len < 0 || start + len > a.dim(axis))
    fail("slice", "range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                      ") exceeds dim " + std::to_string(a.dim(axis)) + " of " +
                      shape_str(a.shape()));
  Shape os = a.shape();
  os[axis] = len;
  long inner = 1;
  for (int d = axis + 1; d < r; ++d) inner *= a.dim(d);
  long outer = a.numel() / (a.dim(axis) * inner);
  long in_block = a.dim(axis) * inner;
  long out_block = len * inner;
  std::vector<S> vals(shape_numel(os));
  for (long o = 0; o < outer; ++o)
    std::copy_n(a.data() + o * in_block + start * inner, out_block, vals.data() + o * out_block);
  Tensor<S> out(std::move(os), std::move(vals));
  detail::maybe_record(
      out, a.requires_grad(), [an = a.node(), on = out.node(), inner, outer, in_block, out_block, start] {
        if (on->grad.empty()) return;
        S* ga = an->ensure_grad().data();
        const S* go = on->grad.data();
        for (long o = 0; o < outer; ++o) {
          S* dst = ga + o * in_block + start * inner;
          const S* src = go + o * out_block;
          for (long i = 0; i < out_block; ++i) dst[i] += src[i];
        }
      });
  return out;
}

template <class S>
Tensor<S> index_select(const Tensor<S>& a, int axis, const std::vector<long>& idx) {
  int r = a.rank();
  if (axis < 0 || axis >= r) fail("index_select", "axis out of range");
  for (long i : idx)
    if (i < 0 || i >= a.dim(axis))
      fail("index_select", "index " + std::to_string(i) + " out of range for dim " +
                               std::to_string(a.dim(axis)));
  Shape os = a.shape();
  os[axis] = static_cast<long>(idx.size());
  long inner = 1;
  for (int d = axis + 1; d < r; ++d) inner *= a.dim(d);
  long outer = a.numel() / (a.dim(axis) * inner);
  long in_block = a.dim(axis) * inner;
  long out_block = static_cast<long>(idx.size()) * inner;
  std::vector<S> vals(shape_numel(os));
  for (long o = 0; o < outer; ++o)
    for (size_t s = 0; s < idx.size(); ++s)
      std::copy_n(a.data() + o * in_block + idx[s] * inner, inner,
                  vals.data() + o * out_block + static_cast<long>(s) * inner);
  Tensor<S> out(std::move(os), std::move(vals));
  detail::maybe_record(
      out, a.requires_grad(),
      [an = a.node(), on = out.node(), idx, inner, outer, in_block, out_block] {
        if (on->grad.empty()) return;
        S* ga = an->ensure_grad().data();
        const S* go = on->grad.data();
        for (long o = 0; o < outer; ++o)
          for (size_t s = 0; s < idx.size(); ++s) {
            S* dst = ga + o * in_block + idx[s] * inner;
            const S* src = go + o * out_block + static_cast<long>(s) * inner;
            for (long i = 0; i < inner; ++i) dst[i] += src[i];  // duplicates accumulate
          }
      });
  return out;
}

template <class S>
Tensor<S> detach(const Tensor<S>& a) {
  return Tensor<S>(a.shape(), std::vector<S>(a.values()));
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> sum(const Tensor<S>& a) {
  S acc = 0;
  for (long i = 0; i < a.numel(); ++i) acc += a.data()[i];
  Tensor<S> out = detail::make_out(Shape{1}, std::vector<S>{acc}, "sum");
  detail::maybe_record(out, a.requires_grad(), [an = a.node(), on = out.node()] {
    if (on->grad.empty()) return;
    S g = on->grad[0];
    auto& ga = an->ensure_grad();
    for (S& v : ga) v += g;
  });
  return out;
}

template <class S>
Tensor<S> mean(const Tensor<S>& a) {
  if (a.numel() == 0) fail("mean", "empty input");
  return mul(sum(a), S(1) / static_cast<S>(a.numel()));
}

template <class S>
Tensor<S> sum_axis(const Tensor<S>& a, int axis, bool keepdim = false) {
  int r = a.rank();
  if (axis < 0 || axis >= r) fail("sum_axis", "axis out of range");
  long inner = 1;
  for (int d = axis + 1; d < r; ++d) inner *= a.dim(d);
  long m = a.dim(axis);
  long outer = a.numel() / (m * inner);
  Shape os;
  for (int d = 0; d < r; ++d) {
    if (d == axis) {
      if (keepdim) os.push_back(1);
    } else {
      os.push_back(a.dim(d));
    }
  }
  if (os.empty()) os.push_back(1);
  std::vector<S> vals(outer * inner, S(0));
  const S* pa = a.data();
  for (long o = 0; o < outer; ++o)
    for (long j = 0; j < m; ++j) {
      const S* src = pa + (o * m + j) * inner;
      S* dst = vals.data() + o * inner;
      for (long i = 0; i < inner; ++i) dst[i] += src[i];
    }
  Tensor<S> out = detail::make_out(std::move(os), std::move(vals), "sum_axis");
  detail::maybe_record(out, a.requires_grad(), [an = a.node(), on = out.node(), inner, m, outer] {
    if (on->grad.empty()) return;
    S* ga = an->ensure_grad().data();
    const S* go = on->grad.data();
    for (long o = 0; o < outer; ++o)
      for (long j = 0; j < m; ++j) {
        S* dst = ga + (o * m + j) * inner;
        const S* src = go + o * inner;
        for (long i = 0; i < inner; ++i) dst[i] += src[i];
      }
  });
  return out;
}

template <class S>
Tensor<S> mean_axis(const Tensor<S>& a, int axis, bool keepdim = false) {
  return mul(sum_axis(a, axis, keepdim), S(1) / static_cast<S>(a.dim(axis)));
}

// ---------------------------------------------------------------------------
// Normalisation
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> softmax(const Tensor<S>& a, int axis) {
  int r = a.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) fail("softmax", "axis out of range");
  long inner = 1;
  for (int d = axis + 1; d < r; ++d) inner *= a.dim(d);
  long m = a.dim(axis);
  long outer = a.numel() / (m * inner);
  std::vector<S> vals(a.numel());
  const S* pa = a.data();
  for (long o = 0; o < outer; ++o)
    for (long i = 0; i < inner; ++i) {
      long base = o * m * inner + i;
      S mx = pa[base];
      for (long j = 1; j < m; ++j) mx = std::max(mx, pa[base + j * inner]);
      S z = 0;
      for (long j = 0; j < m; ++j) {
        S e = std::exp(pa[base + j * inner] - mx);
        vals[base + j * inner] = e;
        z += e;
      }
      for (long j = 0; j < m; ++j) vals[base + j * inner] /= z;
    }
  Tensor<S> out = detail::make_out(a.shape(), std::move(vals), "softmax");
  detail::maybe_record(out, a.requires_grad(), [an = a.node(), on = out.node(), inner, m, outer] {
    if (on->grad.empty()) return;
    S* ga = an->ensure_grad().data();
    const S* go = on->grad.data();
    const S* y = on->values.data();
    for (long o = 0; o < outer; ++o)
      for (long i = 0; i < inner; ++i) {
        long base = o * m * inner + i;
        S dot = 0;
        for (long j = 0; j < m; ++j) dot += go[base + j * inner] * y[base + j * inner];
        for (long j = 0; j < m; ++j) {
          long k = base + j * inner;
          ga[k] += y[k] * (go[k] - dot);
        }
      }
  });
  return out;
}

// Normalises over the last axis; gamma and beta must match that axis.
template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     S eps = S(1e-5)) {
  int r = x.rank();
  long d = x.dim(r - 1);
  if (gamma.numel() != d || beta.numel() != d)
    fail_shapes("layer_norm", "affine params must match last axis", x.shape(), gamma.shape());
  long rows = x.numel() / d;
  std::vector<S> vals(x.numel()), xhat(x.numel()), inv_std(rows);
  const S* px = x.data();
  const S* pg = gamma.data();
  const S* pb = beta.data();
  for (long ro = 0; ro < rows; ++ro) {
    const S* row = px + ro * d;
    S mu = 0;
    for (long i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<S>(d);
    S var = 0;
    for (long i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<S>(d);
    S inv = S(1) / std::sqrt(var + eps);
    inv_std[ro] = inv;
    for (long i = 0; i < d; ++i) {
      S h = (row[i] - mu) * inv;
      xhat[ro * d + i] = h;
      vals[ro * d + i] = h * pg[i] + pb[i];
    }
  }
  Tensor<S> out = detail::make_out(x.shape(), std::move(vals), "layer_norm");
  detail::maybe_record(
      out, x.requires_grad() || gamma.requires_grad() || beta.requires_grad(),
      [xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node(),
       xhat = std::move(xhat), inv_std = std::move(inv_std), d, rows] {
        if (on->grad.empty()) return;
        const S* go = on->grad.data();
        const S* pg = gn->values.data();
        S* gx = xn->requires_grad ? xn->ensure_grad().data() : nullptr;
        S* gg = gn->requires_grad ? gn->ensure_grad().data() : nullptr;
        S* gb = bn->requires_grad ? bn->ensure_grad().data() : nullptr;
        for (long ro = 0; ro < rows; ++ro) {
          const S* g = go + ro * d;
          const S* h = xhat.data() + ro * d;
          if (gg || gb)
            for (long i = 0; i < d; ++i) {
              if (gg) gg[i] += g[i] * h[i];
              if (gb) gb[i] += g[i];
            }
          if (gx) {
            S mean_dh = 0, mean_dhh = 0;
            for (long i = 0; i < d; ++i) {
              S dh = g[i] * pg[i];
              mean_dh += dh;
              mean_dhh += dh * h[i];
            }
            mean_dh /= static_cast<S>(d);
            mean_dhh /= static_cast<S>(d);
            for (long i = 0; i < d; ++i) {
              S dh = g[i] * pg[i];
              gx[ro * d + i] += inv_std[ro] * (dh - mean_dh - h[i] * mean_dhh);
            }
          }
        }
      });
  return out;
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    fail_shapes("matmul", "incompatible operands", a.shape(), b.shape());
  long m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<S> vals(m * n);
  {
    detail::CMapMat<S> A(a.data(), m, k), B(b.data(), k, n);
    detail::MapMat<S> O(vals.data(), m, n);
    O.noalias() = A * B;
  }
  Tensor<S> out = detail::make_out(Shape{m, n}, std::move(vals), "matmul");
  detail::maybe_record(out, a.requires_grad() || b.requires_grad(),
                       [an = a.node(), bn = b.node(), on = out.node(), m, k, n] {
                         if (on->grad.empty()) return;
                         detail::CMapMat<S> G(on->grad.data(), m, n);
                         detail::CMapMat<S> A(an->values.data(), m, k);
                         detail::CMapMat<S> B(bn->values.data(), k, n);
                         if (an->requires_grad) {
                           detail::MapMat<S> GA(an->ensure_grad().data(), m, k);
                           GA.noalias() += G * B.transpose();
                         }
                         if (bn->requires_grad) {
                           detail::MapMat<S> GB(bn->ensure_grad().data(), k, n);
                           GB.noalias() += A.transpose() * G;
                         }
                       });
  return out;
}

template <class S>
Tensor<S> bmm(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    fail_shapes("bmm", "incompatible operands", a.shape(), b.shape());
  long nb = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<S> vals(nb * m * n);
  for (long i = 0; i < nb; ++i) {
    detail::CMapMat<S> A(a.data() + i * m * k, m, k), B(b.data() + i * k * n, k, n);
    detail::MapMat<S> O(vals.data() + i * m * n, m, n);
    O.noalias() = A * B;
  }
  Tensor<S> out = detail::make_out(Shape{nb, m, n}, std::move(vals), "bmm");
  detail::maybe_record(out, a.requires_grad() || b.requires_grad(),
                       [an = a.node(), bn = b.node(), on = out.node(), nb, m, k, n] {
                         if (on->grad.empty()) return;
                         S* ga = an->requires_grad ? an->ensure_grad().data() : nullptr;
                         S* gb = bn->requires_grad ? bn->ensure_grad().data() : nullptr;
                         for (long i = 0; i < nb; ++i) {
                           detail::CMapMat<S> G(on->grad.data() + i * m * n, m, n);
                           detail::CMapMat<S> A(an->values.data() + i * m * k, m, k);
                           detail::CMapMat<S> B(bn->values.data() + i * k * n, k, n);
                           if (ga) {
                             detail::MapMat<S> GA(ga + i * m * k, m, k);
                             GA.noalias() += G * B.transpose();
                           }
                           if (gb) {
                             detail::MapMat<S> GB(gb + i * k * n, k, n);
                             GB.noalias() += A.transpose() * G;
                           }
                         }
                       });
  return out;
}

// x: (... x in) flattened to rows, w: (in x out), b: (out) or undefined.
template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b = Tensor<S>()) {
  if (x.dim(x.rank() - 1) != w.dim(0))
    fail_shapes("linear", "input features do not match weight rows", x.shape(), w.shape());
  Shape os = x.shape();
  os.back() = w.dim(1);
  Tensor<S> flat = reshape(x, Shape{x.numel() / x.dim(x.rank() - 1), x.dim(x.rank() - 1)});
  Tensor<S> y = matmul(flat, w);
  if (b.defined()) y = add(y, reshape(b, Shape{1, b.numel()}));
  return reshape(y, std::move(os));
}

}  // namespace tar

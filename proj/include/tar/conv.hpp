#pragma once

#include "tar/ops.hpp"

// Spatial ops: 2d convolution (and its transpose) lowered to im2col + GEMM,
// 1d convolution, and bilinear map sampling. Data layout is always
// channels-first and row-major: images N x C x H x W, kernels Cout x Cin x kh x kw.

namespace tar {

namespace detail {

template <class S>
void im2col(const S* x, long C, long H, long W, long kh, long kw, long stride, long pad,
            long Ho, long Wo, S* col) {
  long row = 0;
  for (long c = 0; c < C; ++c)
    for (long i = 0; i < kh; ++i)
      for (long j = 0; j < kw; ++j, ++row) {
        S* dst = col + row * Ho * Wo;
        for (long oh = 0; oh < Ho; ++oh) {
          long ih = oh * stride - pad + i;
          if (ih < 0 || ih >= H) {
            std::fill_n(dst + oh * Wo, Wo, S(0));
            continue;
          }
          const S* src = x + (c * H + ih) * W;
          for (long ow = 0; ow < Wo; ++ow) {
            long iw = ow * stride - pad + j;
            dst[oh * Wo + ow] = (iw >= 0 && iw < W) ? src[iw] : S(0);
          }
        }
      }
}

template <class S>
void col2im(const S* col, long C, long H, long W, long kh, long kw, long stride, long pad,
            long Ho, long Wo, S* x) {  // accumulates
  long row = 0;
  for (long c = 0; c < C; ++c)
    for (long i = 0; i < kh; ++i)
      for (long j = 0; j < kw; ++j, ++row) {
        const S* src = col + row * Ho * Wo;
        for (long oh = 0; oh < Ho; ++oh) {
          long ih = oh * stride - pad + i;
          if (ih < 0 || ih >= H) continue;
          S* dst = x + (c * H + ih) * W;
          for (long ow = 0; ow < Wo; ++ow) {
            long iw = ow * stride - pad + j;
            if (iw >= 0 && iw < W) dst[iw] += src[oh * Wo + ow];
          }
        }
      }
}

inline long conv_out_dim(const char* op, long in, long k, long stride, long pad) {
  long num = in + 2 * pad - k;
  if (num < 0 || stride < 1) fail(op, "kernel does not fit input");
  return num / stride + 1;
}

template <class S>
void bilinear_corners(S x, S y, long h, long w, long& x0, long& x1, long& y0, long& y1, S& fx,
                      S& fy, bool& in_x, bool& in_y) {
  in_x = x > S(0) && x < S(w - 1);
  in_y = y > S(0) && y < S(h - 1);
  S cx = std::min(std::max(x, S(0)), S(w - 1));
  S cy = std::min(std::max(y, S(0)), S(h - 1));
  x0 = static_cast<long>(std::floor(cx));
  y0 = static_cast<long>(std::floor(cy));
  x1 = std::min(x0 + 1, w - 1);
  y1 = std::min(y0 + 1, h - 1);
  fx = cx - static_cast<S>(x0);
  fy = cy - static_cast<S>(y0);
}

}  // namespace detail

template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b = Tensor<S>(),
                 long stride = 1, long pad = 0) {
  if (x.rank() != 4 || w.rank() != 4)
    fail_shapes("conv2d", "expected NxCxHxW input and CoxCixKhxKw kernel", x.shape(), w.shape());
  if (x.dim(1) != w.dim(1))
    fail_shapes("conv2d", "input channels do not match kernel", x.shape(), w.shape());
  long N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  long Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (b.defined() && b.numel() != Co)
    fail_shapes("conv2d", "bias does not match output channels", b.shape(), w.shape());
  long Ho = detail::conv_out_dim("conv2d", H, kh, stride, pad);
  long Wo = detail::conv_out_dim("conv2d", W, kw, stride, pad);
  long K = C * kh * kw;
  std::vector<S> vals(N * Co * Ho * Wo);
  std::vector<S> col(K * Ho * Wo);
  detail::CMapMat<S> Wm(w.data(), Co, K);
  for (long n = 0; n < N; ++n) {
    detail::im2col(x.data() + n * C * H * W, C, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
    detail::CMapMat<S> Cm(col.data(), K, Ho * Wo);
    detail::MapMat<S> Om(vals.data() + n * Co * Ho * Wo, Co, Ho * Wo);
    Om.noalias() = Wm * Cm;
    if (b.defined()) Om.colwise() += detail::CMapVec<S>(b.data(), Co);
  }
  Tensor<S> out = detail::make_out(Shape{N, Co, Ho, Wo}, std::move(vals), "conv2d");
  bool any = x.requires_grad() || w.requires_grad() || (b.defined() && b.requires_grad());
  auto bn = b.defined() ? b.node() : nullptr;
  detail::maybe_record(out, any,
                       [xn = x.node(), wn = w.node(), bn, on = out.node(), N, C, H, W, Co, kh,
                        kw, stride, pad, Ho, Wo, K] {
                         if (on->grad.empty()) return;
                         detail::CMapMat<S> Wm(wn->values.data(), Co, K);
                         std::vector<S> col(K * Ho * Wo);
                         S* gx = xn->requires_grad ? xn->ensure_grad().data() : nullptr;
                         S* gw = wn->requires_grad ? wn->ensure_grad().data() : nullptr;
                         S* gb = bn && bn->requires_grad ? bn->ensure_grad().data() : nullptr;
                         std::vector<S> colg(gx ? K * Ho * Wo : 0);
                         for (long n = 0; n < N; ++n) {
                           detail::CMapMat<S> G(on->grad.data() + n * Co * Ho * Wo, Co, Ho * Wo);
                           if (gw) {
                             detail::im2col(xn->values.data() + n * C * H * W, C, H, W, kh, kw,
                                            stride, pad, Ho, Wo, col.data());
                             detail::CMapMat<S> Cm(col.data(), K, Ho * Wo);
                             detail::MapMat<S> Gw(gw, Co, K);
                             Gw.noalias() += G * Cm.transpose();
                           }
                           if (gx) {
                             detail::MapMat<S> Cg(colg.data(), K, Ho * Wo);
                             Cg.noalias() = Wm.transpose() * G;
                             detail::col2im(colg.data(), C, H, W, kh, kw, stride, pad, Ho, Wo,
                                            gx + n * C * H * W);
                           }
                           if (gb) detail::MapVec<S>(gb, Co) += G.rowwise().sum();
                         }
                       });
  return out;
}

// Kernel layout Cin x Cout x kh x kw; output H = (H-1)*stride - 2*pad + kh + out_pad.
template <class S>
Tensor<S> conv_transpose2d(const Tensor<S>& x, const Tensor<S>& w,
                           const Tensor<S>& b = Tensor<S>(), long stride = 1, long pad = 0,
                           long out_pad = 0) {
  if (x.rank() != 4 || w.rank() != 4)
    fail_shapes("conv_transpose2d", "expected NxCxHxW input and CixCoxKhxKw kernel", x.shape(),
                w.shape());
  if (x.dim(1) != w.dim(0))
    fail_shapes("conv_transpose2d", "input channels do not match kernel", x.shape(), w.shape());
  if (out_pad < 0 || out_pad >= stride)
    fail("conv_transpose2d", "output padding must be in [0, stride)");
  long N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  long Co = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (b.defined() && b.numel() != Co)
    fail_shapes("conv_transpose2d", "bias does not match output channels", b.shape(), w.shape());
  long Ho = (H - 1) * stride - 2 * pad + kh + out_pad;
  long Wo = (W - 1) * stride - 2 * pad + kw + out_pad;
  if (Ho < 1 || Wo < 1) fail("conv_transpose2d", "empty output");
  long K = Co * kh * kw;
  std::vector<S> vals(N * Co * Ho * Wo, S(0));
  std::vector<S> col(K * H * W);
  detail::CMapMat<S> Wm(w.data(), Ci, K);
  for (long n = 0; n < N; ++n) {
    detail::CMapMat<S> Xm(x.data() + n * Ci * H * W, Ci, H * W);
    detail::MapMat<S> Cm(col.data(), K, H * W);
    Cm.noalias() = Wm.transpose() * Xm;
    detail::col2im(col.data(), Co, Ho, Wo, kh, kw, stride, pad, H, W,
                   vals.data() + n * Co * Ho * Wo);
    if (b.defined()) {
      detail::MapMat<S> Om(vals.data() + n * Co * Ho * Wo, Co, Ho * Wo);
      Om.colwise() += detail::CMapVec<S>(b.data(), Co);
    }
  }
  Tensor<S> out = detail::make_out(Shape{N, Co, Ho, Wo}, std::move(vals), "conv_transpose2d");
  bool any = x.requires_grad() || w.requires_grad() || (b.defined() && b.requires_grad());
  auto bn = b.defined() ? b.node() : nullptr;
  detail::maybe_record(out, any,
                       [xn = x.node(), wn = w.node(), bn, on = out.node(), N, Ci, H, W, Co, kh,
                        kw, stride, pad, Ho, Wo, K] {
                         if (on->grad.empty()) return;
                         std::vector<S> col(K * H * W);
                         S* gx = xn->requires_grad ? xn->ensure_grad().data() : nullptr;
                         S* gw = wn->requires_grad ? wn->ensure_grad().data() : nullptr;
                         S* gb = bn && bn->requires_grad ? bn->ensure_grad().data() : nullptr;
                         detail::CMapMat<S> Wm(wn->values.data(), Ci, K);
                         for (long n = 0; n < N; ++n) {
                           const S* g = on->grad.data() + n * Co * Ho * Wo;
                           // im2col over the output grad recovers the conv view
                           detail::im2col(g, Co, Ho, Wo, kh, kw, stride, pad, H, W, col.data());
                           detail::CMapMat<S> Cg(col.data(), K, H * W);
                           if (gx) {
                             detail::MapMat<S> Gx(gx + n * Ci * H * W, Ci, H * W);
                             Gx.noalias() += Wm * Cg;
                           }
                           if (gw) {
                             detail::CMapMat<S> Xm(xn->values.data() + n * Ci * H * W, Ci, H * W);
                             detail::MapMat<S> Gw(gw, Ci, K);
                             Gw.noalias() += Xm * Cg.transpose();
                           }
                           if (gb) {
                             detail::CMapMat<S> G(g, Co, Ho * Wo);
                             detail::MapVec<S>(gb, Co) += G.rowwise().sum();
                           }
                         }
                       });
  return out;
}

// x: NxCxL (or CxL), w: CoxCixK.
template <class S>
Tensor<S> conv1d(const Tensor<S>& x_in, const Tensor<S>& w, const Tensor<S>& b = Tensor<S>(),
                 long stride = 1, long pad = 0) {
  Tensor<S> x = x_in;
  bool squeeze = false;
  if (x.rank() == 2) {
    x = reshape(x, Shape{1, x.dim(0), x.dim(1)});
    squeeze = true;
  }
  if (x.rank() != 3 || w.rank() != 3)
    fail_shapes("conv1d", "expected NxCxL input and CoxCixK kernel", x_in.shape(), w.shape());
  if (x.dim(1) != w.dim(1))
    fail_shapes("conv1d", "input channels do not match kernel", x_in.shape(), w.shape());
  long N = x.dim(0), C = x.dim(1), L = x.dim(2);
  long Co = w.dim(0), k = w.dim(2);
  if (b.defined() && b.numel() != Co)
    fail_shapes("conv1d", "bias does not match output channels", b.shape(), w.shape());
  long Lo = detail::conv_out_dim("conv1d", L, k, stride, pad);
  std::vector<S> vals(N * Co * Lo);
  const S* px = x.data();
  const S* pw = w.data();
  for (long n = 0; n < N; ++n)
    for (long co = 0; co < Co; ++co)
      for (long ol = 0; ol < Lo; ++ol) {
        S acc = b.defined() ? b.data()[co] : S(0);
        for (long ci = 0; ci < C; ++ci)
          for (long j = 0; j < k; ++j) {
            long il = ol * stride - pad + j;
            if (il >= 0 && il < L) acc += px[(n * C + ci) * L + il] * pw[(co * C + ci) * k + j];
          }
        vals[(n * Co + co) * Lo + ol] = acc;
      }
  Tensor<S> y = detail::make_out(Shape{N, Co, Lo}, std::move(vals), "conv1d");
  bool any = x.requires_grad() || w.requires_grad() || (b.defined() && b.requires_grad());
  auto bn = b.defined() ? b.node() : nullptr;
  detail::maybe_record(y, any,
                       [xn = x.node(), wn = w.node(), bn, on = y.node(), N, C, L, Co, k, stride,
                        pad, Lo] {
                         if (on->grad.empty()) return;
                         const S* go = on->grad.data();
                         const S* px = xn->values.data();
                         const S* pw = wn->values.data();
                         S* gx = xn->requires_grad ? xn->ensure_grad().data() : nullptr;
                         S* gw = wn->requires_grad ? wn->ensure_grad().data() : nullptr;
                         S* gb = bn && bn->requires_grad ? bn->ensure_grad().data() : nullptr;
                         for (long n = 0; n < N; ++n)
                           for (long co = 0; co < Co; ++co)
                             for (long ol = 0; ol < Lo; ++ol) {
                               S g = go[(n * Co + co) * Lo + ol];
                               if (gb) gb[co] += g;
                               for (long ci = 0; ci < C; ++ci)
                                 for (long j = 0; j < k; ++j) {
                                   long il = ol * stride - pad + j;
                                   if (il < 0 || il >= L) continue;
                                   if (gx) gx[(n * C + ci) * L + il] += g * pw[(co * C + ci) * k + j];
                                   if (gw) gw[(co * C + ci) * k + j] += g * px[(n * C + ci) * L + il];
                                 }
                             }
                       });
  if (squeeze) return reshape(y, Shape{y.dim(1), y.dim(2)});
  return y;
}

// map: NxDxhxw, pts: NxPx2 in (x, y) map-pixel coordinates. Samples with
// bilinear weights, clamping coordinates to the map border. Differentiable in
// both the map and the coordinates (clamped coordinates get zero gradient).
template <class S>
Tensor<S> bilinear_sample(const Tensor<S>& map, const Tensor<S>& pts) {
  if (map.rank() != 4 || pts.rank() != 3 || pts.dim(2) != 2 || map.dim(0) != pts.dim(0))
    fail_shapes("bilinear_sample", "expected NxDxhxw map and NxPx2 points", map.shape(),
                pts.shape());
  long N = map.dim(0), D = map.dim(1), h = map.dim(2), w = map.dim(3);
  long P = pts.dim(1);
  std::vector<S> vals(N * P * D);
  const S* pm = map.data();
  const S* pp = pts.data();
  for (long n = 0; n < N; ++n)
    for (long p = 0; p < P; ++p) {
      long x0, x1, y0, y1;
      S fx, fy;
      bool in_x, in_y;
      detail::bilinear_corners(pp[(n * P + p) * 2 + 0], pp[(n * P + p) * 2 + 1], h, w, x0, x1,
                               y0, y1, fx, fy, in_x, in_y);
      const S* base = pm + n * D * h * w;
      S* dst = vals.data() + (n * P + p) * D;
      for (long d = 0; d < D; ++d) {
        const S* ch = base + d * h * w;
        dst[d] = (S(1) - fx) * (S(1) - fy) * ch[y0 * w + x0] +
                 fx * (S(1) - fy) * ch[y0 * w + x1] + (S(1) - fx) * fy * ch[y1 * w + x0] +
                 fx * fy * ch[y1 * w + x1];
      }
    }
  Tensor<S> out = detail::make_out(Shape{N, P, D}, std::move(vals), "bilinear_sample");
  detail::maybe_record(
      out, map.requires_grad() || pts.requires_grad(),
      [mn = map.node(), pn = pts.node(), on = out.node(), N, D, h, w, P] {
        if (on->grad.empty()) return;
        const S* go = on->grad.data();
        const S* pm = mn->values.data();
        const S* pp = pn->values.data();
        S* gm = mn->requires_grad ? mn->ensure_grad().data() : nullptr;
        S* gp = pn->requires_grad ? pn->ensure_grad().data() : nullptr;
        for (long n = 0; n < N; ++n)
          for (long p = 0; p < P; ++p) {
            long x0, x1, y0, y1;
            S fx, fy;
            bool in_x, in_y;
            detail::bilinear_corners(pp[(n * P + p) * 2 + 0], pp[(n * P + p) * 2 + 1], h, w, x0,
                                     x1, y0, y1, fx, fy, in_x, in_y);
            const S* base = pm + n * D * h * w;
            const S* g = go + (n * P + p) * D;
            S dfx = 0, dfy = 0;
            for (long d = 0; d < D; ++d) {
              const S* ch = base + d * h * w;
              S v00 = ch[y0 * w + x0], v01 = ch[y0 * w + x1];
              S v10 = ch[y1 * w + x0], v11 = ch[y1 * w + x1];
              if (gm) {
                S* gch = gm + n * D * h * w + d * h * w;
                gch[y0 * w + x0] += g[d] * (S(1) - fx) * (S(1) - fy);
                gch[y0 * w + x1] += g[d] * fx * (S(1) - fy);
                gch[y1 * w + x0] += g[d] * (S(1) - fx) * fy;
                gch[y1 * w + x1] += g[d] * fx * fy;
              }
              dfx += g[d] * ((S(1) - fy) * (v01 - v00) + fy * (v11 - v10));
              dfy += g[d] * ((S(1) - fx) * (v10 - v00) + fx * (v11 - v01));
            }
            if (gp) {
              if (in_x) gp[(n * P + p) * 2 + 0] += dfx;
              if (in_y) gp[(n * P + p) * 2 + 1] += dfy;
            }
          }
      });
  return out;
}

}  // namespace tar

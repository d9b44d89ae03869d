#pragma once

#include "tar/ops.hpp"

namespace tar {

namespace detail {

// Rodrigues coefficients R = I + A*[w]x + B*[w]x^2 with A = sin(a)/a and
// B = (1-cos(a))/a^2, switching to Taylor series near zero so both the value
// and the derivative stay smooth across a = 0. The threshold 1e-8 on the
// angle keeps the series error far below float precision.
template <class S>
void rodrigues_coeffs(S a, S& A, S& B) {
  if (a < S(1e-8)) {
    S a2 = a * a;
    A = S(1) - a2 / S(6);
    B = S(0.5) - a2 / S(24);
  } else {
    A = std::sin(a) / a;
    S sh = std::sin(a / S(2));
    B = S(2) * sh * sh / (a * a);  // cancellation-free form of (1-cos)/a^2
  }
}

// dA/da / a and dB/da / a, i.e. the factors multiplying w_i in the
// derivative of A and B w.r.t. the rotation vector components.
template <class S>
void rodrigues_coeff_derivs(S a, S& dA, S& dB) {
  if (a < S(1e-4)) {
    S a2 = a * a;
    dA = -S(1) / S(3) + a2 / S(30);
    dB = -S(1) / S(12) + a2 / S(180);
  } else {
    S s = std::sin(a), c = std::cos(a);
    dA = (a * c - s) / (a * a * a);
    dB = (a * s - S(2) * (S(1) - c)) / (a * a * a * a);
  }
}

template <class S>
void skew3(const S* w, S* out) {  // row-major 3x3
  out[0] = 0;
  out[1] = -w[2];
  out[2] = w[1];
  out[3] = w[2];
  out[4] = 0;
  out[5] = -w[0];
  out[6] = -w[1];
  out[7] = w[0];
  out[8] = 0;
}

}  // namespace detail

// Axis-angle to rotation matrices, Nx3 -> Nx3x3, differentiable and stable
// through the zero-rotation point.
template <class S>
Tensor<S> rodrigues(const Tensor<S>& omega) {
  if (omega.rank() != 2 || omega.dim(1) != 3)
    fail("rodrigues", "expected Nx3 axis-angle input, got " + shape_str(omega.shape()));
  long N = omega.dim(0);
  std::vector<S> vals(N * 9);
  const S* pw = omega.data();
  for (long n = 0; n < N; ++n) {
    const S* w = pw + n * 3;
    S a = std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
    S A, B;
    detail::rodrigues_coeffs(a, A, B);
    S K[9], K2[9];
    detail::skew3(w, K);
    detail::CMapMat<S> Km(K, 3, 3);
    detail::MapMat<S> K2m(K2, 3, 3);
    K2m.noalias() = Km * Km;
    S* R = vals.data() + n * 9;
    for (int i = 0; i < 9; ++i) R[i] = A * K[i] + B * K2[i];
    R[0] += S(1);
    R[4] += S(1);
    R[8] += S(1);
  }
  Tensor<S> out = detail::make_out(Shape{N, 3, 3}, std::move(vals), "rodrigues");
  detail::maybe_record(out, omega.requires_grad(), [wn = omega.node(), on = out.node(), N] {
    if (on->grad.empty()) return;
    const S* go = on->grad.data();
    S* gw = wn->ensure_grad().data();
    const S* pw = wn->values.data();
    for (long n = 0; n < N; ++n) {
      const S* w = pw + n * 3;
      const S* g = go + n * 9;
      S a = std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
      S A, B, dA, dB;
      detail::rodrigues_coeffs(a, A, B);
      detail::rodrigues_coeff_derivs(a, dA, dB);
      S K[9], K2[9];
      detail::skew3(w, K);
      detail::CMapMat<S> Km(K, 3, 3);
      detail::MapMat<S> K2m(K2, 3, 3);
      K2m.noalias() = Km * Km;
      for (int i = 0; i < 3; ++i) {
        S e[3] = {S(i == 0), S(i == 1), S(i == 2)};
        S Ei[9], cross[9];
        detail::skew3(e, Ei);
        // d[w]x^2/dw_i = [e_i]x [w]x + [w]x [e_i]x
        detail::CMapMat<S> Em(Ei, 3, 3);
        detail::MapMat<S> Cm(cross, 3, 3);
        Cm.noalias() = Em * Km + Km * Em;
        S acc = 0;
        S ui = dA * w[i], vi = dB * w[i];
        for (int j = 0; j < 9; ++j) acc += g[j] * (ui * K[j] + A * Ei[j] + vi * K2[j] + B * cross[j]);
        gw[n * 3 + i] += acc;
      }
    }
  });
  return out;
}

}  // namespace tar

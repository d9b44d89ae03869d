#pragma once

#include "tar/ops.hpp"

// Weak-perspective crop camera glued to a full-image pinhole. The network
// regresses (s, tx, ty) relative to the crop; recover_translation lifts that
// to a full-image body translation using the crop's position and scale, and
// projection happens with the true focal length so the estimate stays
// consistent with where the crop came from.

namespace tar {

// Per-window crop context: bounding-box centre (pixels), box size (pixels)
// and the shared pinhole intrinsics. Constants, never differentiated.
template <class S>
struct CropContext {
  Tensor<S> center;  // Bx2
  Tensor<S> size;    // Bx1
  S focal = S(1000);
  S image_w = S(1000);
  S image_h = S(1000);

  long batch() const { return center.dim(0); }
};

// (s, tx, ty) per window -> full-image translation (tx', ty', tz) with
//   tz  = 2f / (s * box)
//   tx' = tx + 2(cx - W/2) / (s * box),  ty' analogous.
template <class S>
Tensor<S> recover_translation(const Tensor<S>& cam, const CropContext<S>& ctx) {
  if (cam.rank() != 2 || cam.dim(1) != 3)
    fail("recover_translation", "expected Bx3 camera, got " + shape_str(cam.shape()));
  Tensor<S> s = slice(cam, 1, 0, 1);  // Bx1
  for (long i = 0; i < s.numel(); ++i)
    if (s[i] <= S(1e-4))
      fail("recover_translation",
           "degenerate camera scale " + std::to_string(static_cast<double>(s[i])) + " in window " +
               std::to_string(i));
  long B = cam.dim(0);
  Tensor<S> denom = mul(s, ctx.size);  // Bx1
  Tensor<S> tz = div(S(2) * ctx.focal, denom);
  Tensor<S> off_x(Shape{B, 1}), off_y(Shape{B, 1});
  for (long i = 0; i < B; ++i) {
    off_x.values()[i] = S(2) * (ctx.center[i * 2 + 0] - ctx.image_w / S(2));
    off_y.values()[i] = S(2) * (ctx.center[i * 2 + 1] - ctx.image_h / S(2));
  }
  Tensor<S> tx = add(slice(cam, 1, 1, 1), div(off_x, denom));
  Tensor<S> ty = add(slice(cam, 1, 2, 1), div(off_y, denom));
  return concat<S>({tx, ty, tz}, 1);
}

// Smooth floor on the Bx3 camera's scale channel: floor + softplus of the
// excess, with the elbow sharp enough that healthy scales (roughly 0.3 and
// up) pass through bit-exactly. Early in training the 2D loss can chase a
// shortcut that shrinks the scale toward zero, where the recovered depth has
// a pole; the floor keeps the projection defined along that excursion and,
// being monotone, keeps a correct-sign gradient so the scale can climb back.
template <class S>
Tensor<S> guard_camera_scale(const Tensor<S>& cam, S floor = S(0.05), S sharpness = S(60)) {
  if (cam.rank() != 2 || cam.dim(1) != 3)
    fail("guard_camera_scale", "expected Bx3 camera, got " + shape_str(cam.shape()));
  Tensor<S> raw = slice(cam, 1, 0, 1);
  Tensor<S> excess = add(raw, -floor);
  Tensor<S> s = add(mul(softplus(mul(excess, sharpness)), S(1) / sharpness), floor);
  return concat<S>({s, slice(cam, 1, 1, 2)}, 1);
}

// points BxPx3 (body frame) + translation Bx3 -> full-image pixels BxPx2,
// pinhole with the principal point at the image centre. A point at or behind
// the camera plane is an error naming the offending point.
template <class S>
Tensor<S> project_full(const Tensor<S>& points, const Tensor<S>& t, const CropContext<S>& ctx) {
  if (points.rank() != 3 || points.dim(2) != 3)
    fail("project_full", "expected BxPx3 points, got " + shape_str(points.shape()));
  long B = points.dim(0), P = points.dim(1);
  Tensor<S> X = add(points, reshape(t, Shape{B, 1, 3}));
  Tensor<S> z = slice(X, 2, 2, 1);  // BxPx1
  for (long i = 0; i < z.numel(); ++i)
    if (z[i] <= S(1e-3))
      fail("project_full", "point " + std::to_string(i % P) + " in window " +
                               std::to_string(i / P) + " is behind the camera (z = " +
                               std::to_string(static_cast<double>(z[i])) + ")");
  Tensor<S> u = add(mul(div(slice(X, 2, 0, 1), z), ctx.focal), ctx.image_w / S(2));
  Tensor<S> v = add(mul(div(slice(X, 2, 1, 1), z), ctx.focal), ctx.image_h / S(2));
  return concat<S>({u, v}, 2);
}

// Full-image pixels -> crop-relative coordinates ((p - c) / box), so the crop
// spans roughly [-0.5, 0.5].
template <class S>
Tensor<S> to_bbox_space(const Tensor<S>& pixels, const CropContext<S>& ctx) {
  if (pixels.rank() != 3 || pixels.dim(2) != 2)
    fail("to_bbox_space", "expected BxPx2 pixels, got " + shape_str(pixels.shape()));
  long B = pixels.dim(0);
  return div(sub(pixels, reshape(ctx.center, Shape{B, 1, 2})), reshape(ctx.size, Shape{B, 1, 1}));
}

// The crop-placement feature fed to the regressors: distance of the crop
// centre from the principal point and the crop scale, both in focal units.
template <class S>
Tensor<S> crop_placement_feature(const CropContext<S>& ctx) {
  long B = ctx.batch();
  Tensor<S> out(Shape{B, 3});
  for (long i = 0; i < B; ++i) {
    out.values()[i * 3 + 0] = (ctx.center[i * 2 + 0] - ctx.image_w / S(2)) / ctx.focal;
    out.values()[i * 3 + 1] = (ctx.center[i * 2 + 1] - ctx.image_h / S(2)) / ctx.focal;
    out.values()[i * 3 + 2] = ctx.size[i] / ctx.focal;
  }
  return out;
}

}  // namespace tar

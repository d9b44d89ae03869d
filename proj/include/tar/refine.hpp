#pragma once

// Recurrent refinement of body parameters: features sampled at the projected
// markers feed 26 per-state GRUs whose heads emit additive parameter updates.

#include <string>
#include <utility>
#include <vector>

#include "tar/body_model.hpp"
#include "tar/camera.hpp"
#include "tar/conv.hpp"
#include "tar/encoders.hpp"
#include "tar/ops.hpp"
#include "tar/tensor.hpp"

namespace tar {

struct RefineConfig {
  long iterations = 5;
  long radius = 3;     // sampling radius around each marker, in feature-map pixels
  long patch_dim = 8;  // compressed width of one marker's sampled patch
  long hidden_dim = 64;
  bool per_marker_routing = false;    // each GRU sees only its own marker's patch
  bool detach_sampling_coords = false;  // stop gradients at the sample positions

  long grid_points() const { return (2 * radius + 1) * (2 * radius + 1); }
  long signal_width() const { return kStates * patch_dim + kPhiDims + 3; }
  long gru_input_width() const {
    return per_marker_routing ? patch_dim + kPhiDims + 3 : signal_width();
  }
};

inline void validate_refine_config(const RefineConfig& c) {
  if (c.iterations < 1)
    fail("refine config", "iterations must be positive, got " + std::to_string(c.iterations));
  if (c.radius < 0)
    fail("refine config", "radius must be non-negative, got " + std::to_string(c.radius));
  if (c.patch_dim < 1)
    fail("refine config", "patch_dim must be positive, got " + std::to_string(c.patch_dim));
  if (c.hidden_dim < 1)
    fail("refine config", "hidden_dim must be positive, got " + std::to_string(c.hidden_dim));
}

// Dense scalar-gate GRU over row vectors, one per refinement state.
template <class S>
struct GruCell {
  Tensor<S> wz, uz, bz;
  Tensor<S> wr, ur, br;
  Tensor<S> wh, uh, bh;

  GruCell() = default;
  GruCell(ParameterStore<S>& ps, const std::string& prefix, long in, long hidden, Rng& rng) {
    auto mat = [&](const std::string& name, long rows, long cols) {
      auto& p = ps.create(prefix + name, Shape{rows, cols});
      init_glorot(p, rng, rows, cols);
      return p.value;
    };
    auto vec = [&](const std::string& name, long n) {
      return ps.create(prefix + name, Shape{n}).value;
    };
    wz = mat(".wz", in, hidden); uz = mat(".uz", hidden, hidden); bz = vec(".bz", hidden);
    wr = mat(".wr", in, hidden); ur = mat(".ur", hidden, hidden); br = vec(".br", hidden);
    wh = mat(".wh", in, hidden); uh = mat(".uh", hidden, hidden); bh = vec(".bh", hidden);
  }
};

template <class S>
Tensor<S> gru_step(const GruCell<S>& cell, const Tensor<S>& x, const Tensor<S>& h) {
  Tensor<S> z = sigmoid(add(linear(x, cell.wz, cell.bz), matmul(h, cell.uz)));
  Tensor<S> r = sigmoid(add(linear(x, cell.wr, cell.br), matmul(h, cell.ur)));
  Tensor<S> cand = tanh(add(linear(x, cell.wh, cell.bh), matmul(mul(r, h), cell.uh)));
  return add(mul(sub(S(1), z), h), mul(z, cand));
}

template <class S>
struct Rrm {
  RefineConfig cfg;
  long local_dim = 0;
  Tensor<S> compress_w, compress_b;  // shared patch compression, grid*D -> patch_dim
  std::vector<GruCell<S>> grus;      // one per refinement state
  std::vector<Tensor<S>> head_w, head_b;  // per-state update heads, zero-initialized

  Rrm() = default;
  Rrm(ParameterStore<S>& ps, const RefineConfig& c, long local_channels, Rng& rng)
      : cfg(c), local_dim(local_channels) {
    validate_refine_config(c);
    long flat = c.grid_points() * local_channels;
    auto& cw = ps.create("rrm.compress.w", Shape{flat, c.patch_dim});
    init_glorot(cw, rng, flat, c.patch_dim);
    compress_w = cw.value;
    compress_b = ps.create("rrm.compress.b", Shape{c.patch_dim}).value;
    long in = c.gru_input_width();
    for (long n = 0; n < kStates; ++n) {
      grus.emplace_back(ps, "rrm.gru" + std::to_string(n), in, c.hidden_dim, rng);
      // updates start at zero so the first estimates pass through unchanged
      std::string p = "rrm.head" + std::to_string(n) + ".";
      head_w.push_back(ps.create(p + "w", Shape{c.hidden_dim, state_block_size(n)}).value);
      head_b.push_back(ps.create(p + "b", Shape{state_block_size(n)}).value);
    }
  }
};

// Bbox-space positions to feature-map pixel coordinates, per axis.
template <class S>
Tensor<S> bbox_to_map_coords(const Tensor<S>& pts, long map_h, long map_w) {
  if (pts.rank() != 3 || pts.dim(2) != 2)
    fail_shapes("bbox_to_map_coords", "expected BxKx2 points", pts.shape(), Shape{});
  Tensor<S> x = add(mul(add(slice(pts, 2, 0, 1), S(0.5)), S(map_w)), S(-0.5));
  Tensor<S> y = add(mul(add(slice(pts, 2, 1, 1), S(0.5)), S(map_h)), S(-0.5));
  return concat<S>({x, y}, 2);
}

// Bilinear samples on the (2r+1)^2 integer-offset grid around each point.
// Returns BxKx(grid*D); border clamping comes from the sampler.
template <class S>
Tensor<S> sample_patches(const Tensor<S>& map, const Tensor<S>& pts_bbox, long radius) {
  if (map.rank() != 4)
    fail_shapes("sample_patches", "expected BxDxhxw map", map.shape(), pts_bbox.shape());
  if (pts_bbox.rank() != 3 || pts_bbox.dim(2) != 2 || pts_bbox.dim(0) != map.dim(0))
    fail_shapes("sample_patches", "expected BxKx2 points matching the map batch", map.shape(),
                pts_bbox.shape());
  long B = map.dim(0), D = map.dim(1), h = map.dim(2), w = map.dim(3);
  long K = pts_bbox.dim(1);
  long side = 2 * radius + 1, G = side * side;
  Tensor<S> centers = bbox_to_map_coords(pts_bbox, h, w);
  std::vector<S> off(static_cast<size_t>(G) * 2);
  for (long dy = -radius; dy <= radius; ++dy)
    for (long dx = -radius; dx <= radius; ++dx) {
      long g = (dy + radius) * side + (dx + radius);
      off[g * 2 + 0] = static_cast<S>(dx);
      off[g * 2 + 1] = static_cast<S>(dy);
    }
  Tensor<S> offsets(Shape{1, 1, G, 2}, std::move(off));
  Tensor<S> grid = add(reshape(centers, Shape{B, K, 1, 2}), offsets);
  Tensor<S> vals = bilinear_sample(map, reshape(grid, Shape{B, K * G, 2}));  // Bx(K*G)xD
  return reshape(vals, Shape{B, K, G * D});
}

// Single-map, single-marker convenience: one (2r+1)^2 x D patch.
template <class S>
Tensor<S> sample_patch(const Tensor<S>& map, const Tensor<S>& j, long radius) {
  if (map.rank() != 3)
    fail_shapes("sample_patch", "expected Dxhxw map", map.shape(), j.shape());
  if (j.numel() != 2) fail_shapes("sample_patch", "expected a 2-vector", map.shape(), j.shape());
  long D = map.dim(0);
  long G = (2 * radius + 1) * (2 * radius + 1);
  Tensor<S> batched = sample_patches(reshape(map, Shape{1, D, map.dim(1), map.dim(2)}),
                                     reshape(j, Shape{1, 1, 2}), radius);
  return reshape(batched, Shape{G, D});
}

// Projected-marker feature sampling plus compression and concatenation into
// the fixed-layout signal [patch_1 .. patch_26, parameters, crop placement].
template <class S>
Tensor<S> build_feedback(const Rrm<S>& rrm, const BodyTensors<S>& body,
                         const CropContext<S>& ctx, const Tensor<S>& map,
                         const Tensor<S>& phi) {
  if (phi.rank() != 2 || phi.dim(1) != kPhiDims)
    fail_shapes("build_feedback", "expected Bx85 parameters", phi.shape(), map.shape());
  if (map.rank() != 4 || map.dim(0) != phi.dim(0) || map.dim(1) != rrm.local_dim)
    fail_shapes("build_feedback", "expected BxDxhxw local features matching the batch",
                map.shape(), phi.shape());
  for (long i = 0; i < phi.numel(); ++i)
    if (!std::isfinite(phi.data()[i]))
      fail("build_feedback", "parameter estimate is not finite at index " + std::to_string(i));
  BodyForward<S> fwd = body_forward(body, phi_theta(phi), phi_beta(phi));
  Tensor<S> t = recover_translation(phi_cam(phi), ctx);
  Tensor<S> px = project_full(fwd.markers, t, ctx);
  Tensor<S> j = to_bbox_space(px, ctx);
  if (rrm.cfg.detach_sampling_coords) j = detach(j);
  Tensor<S> patches = sample_patches(map, j, rrm.cfg.radius);  // BxKx(grid*D)
  Tensor<S> s = linear(patches, rrm.compress_w, rrm.compress_b);  // BxKxp
  long B = phi.dim(0);
  Tensor<S> flat = reshape(s, Shape{B, kStates * rrm.cfg.patch_dim});
  return concat<S>({flat, phi, crop_placement_feature(ctx)}, 1);
}

template <class S>
struct RefineState {
  Tensor<S> phi;                   // current estimate, Bx85
  std::vector<Tensor<S>> hidden;   // kStates entries of Bxhidden
  long iteration = 0;
};

// Seeds every GRU with its slice of the encoder's hidden-state bank.
template <class S>
RefineState<S> init_refine_state(const Rrm<S>& rrm, const Tensor<S>& bank,
                                 const Tensor<S>& phi_init) {
  if (bank.rank() != 3 || bank.dim(1) != kStates || bank.dim(2) != rrm.cfg.hidden_dim)
    fail_shapes("init_refine_state", "expected Bx26xhidden bank", bank.shape(),
                phi_init.shape());
  if (phi_init.rank() != 2 || phi_init.dim(1) != kPhiDims || phi_init.dim(0) != bank.dim(0))
    fail_shapes("init_refine_state", "expected Bx85 parameters matching the bank",
                bank.shape(), phi_init.shape());
  RefineState<S> st;
  st.phi = phi_init;
  long B = bank.dim(0);
  for (long n = 0; n < kStates; ++n)
    st.hidden.push_back(reshape(slice(bank, 1, n, 1), Shape{B, rrm.cfg.hidden_dim}));
  return st;
}

// One update: all GRUs advance on the shared signal (or their routed slice),
// their heads emit per-state blocks, and the deltas add onto the estimate.
template <class S>
RefineState<S> refine_step(const Rrm<S>& rrm, const RefineState<S>& state,
                           const Tensor<S>& signal, Tensor<S>* delta_out = nullptr) {
  if (signal.rank() != 2 || signal.dim(1) != rrm.cfg.signal_width())
    fail_shapes("refine_step", "signal width does not match the configuration", signal.shape(),
                state.phi.shape());
  long p = rrm.cfg.patch_dim;
  Tensor<S> tail;  // parameters + crop placement, shared by every routed input
  if (rrm.cfg.per_marker_routing)
    tail = slice(signal, 1, kStates * p, kPhiDims + 3);
  RefineState<S> next;
  next.iteration = state.iteration + 1;
  std::vector<Tensor<S>> blocks;
  blocks.reserve(kStates);
  for (long n = 0; n < kStates; ++n) {
    Tensor<S> x = rrm.cfg.per_marker_routing
                      ? concat<S>({slice(signal, 1, n * p, p), tail}, 1)
                      : signal;
    Tensor<S> h = gru_step(rrm.grus[n], x, state.hidden[n]);
    blocks.push_back(linear(h, rrm.head_w[n], rrm.head_b[n]));
    next.hidden.push_back(std::move(h));
  }
  Tensor<S> delta = concat(blocks, 1);
  next.phi = add(state.phi, delta);
  if (delta_out) *delta_out = std::move(delta);
  return next;
}

// The full loop: feedback then update, returning every intermediate estimate.
template <class S>
std::vector<Tensor<S>> refine_loop(const Rrm<S>& rrm, const BodyTensors<S>& body,
                                   const CropContext<S>& ctx, const Tensor<S>& map,
                                   const Tensor<S>& bank, const Tensor<S>& phi_init) {
  RefineState<S> st = init_refine_state(rrm, bank, phi_init);
  std::vector<Tensor<S>> estimates;
  estimates.reserve(static_cast<size_t>(rrm.cfg.iterations));
  for (long l = 0; l < rrm.cfg.iterations; ++l) {
    Tensor<S> signal = build_feedback(rrm, body, ctx, map, st.phi);
    st = refine_step(rrm, st, signal);
    estimates.push_back(st.phi);
  }
  return estimates;
}

}  // namespace tar

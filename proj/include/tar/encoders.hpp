#pragma once

#include <cmath>

#include "tar/body_model.hpp"
#include "tar/conv.hpp"
#include "tar/nn.hpp"

// Temporal encoders. The GTE is a small pre-norm transformer over per-frame
// global features followed by a learned softmax-weighted temporal average and
// the 26-state initial regressor. The LTE runs a bidirectional ConvGRU over a
// window of local feature maps, meeting at the mid-frame from both sides.

namespace tar {

// Parameter blocks of the mid-frame estimate, shared by the regressor heads,
// the refinement GRUs and the marker list: states 0..23 are the 24 joint
// rotations (state 0 = global orientation), state 24 is shape, state 25 is
// camera. Flattened estimates concatenate theta (72), beta (10), cam (3).
inline constexpr long kStates = 26;
inline constexpr long kPhiDims = kJoints * 3 + kShapeDims + 3;  // 85

inline long state_block_offset(long state) {
  if (state < kJoints) return state * 3;
  return state == kJoints ? kJoints * 3 : kJoints * 3 + kShapeDims;
}
inline long state_block_size(long state) {
  if (state < kJoints) return 3;
  return state == kJoints ? kShapeDims : 3;
}

template <class S>
Tensor<S> phi_theta(const Tensor<S>& phi) {  // B x 85 -> B x 24 x 3
  return reshape(slice(phi, 1, 0, kJoints * 3), Shape{phi.dim(0), kJoints, 3});
}
template <class S>
Tensor<S> phi_beta(const Tensor<S>& phi) {  // B x 10
  return slice(phi, 1, kJoints * 3, kShapeDims);
}
template <class S>
Tensor<S> phi_cam(const Tensor<S>& phi) {  // B x 3
  return slice(phi, 1, kJoints * 3 + kShapeDims, 3);
}

struct GteConfig {
  long layers = 4;
  long heads = 4;
  long model_dim = 128;
  long mlp_dim = 256;
  long frames = 9;      // T
  long state_dim = 64;  // width of each hidden state in the bank
};

inline void validate_gte_config(const GteConfig& c) {
  if (c.layers < 1) fail("gte", "layer count must be positive");
  if (c.heads < 1 || c.model_dim % c.heads != 0)
    fail("gte", "model_dim " + std::to_string(c.model_dim) + " is not divisible by " +
                    std::to_string(c.heads) + " heads");
  if (c.frames < 1 || c.frames % 2 == 0)
    fail("gte", "frame count " + std::to_string(c.frames) + " must be odd");
}

template <class S>
struct GteLayer {
  Tensor<S> ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<S> ln2_g, ln2_b, w_mlp1, b_mlp1, w_mlp2, b_mlp2;
};

template <class S>
struct Gte {
  GteConfig cfg;
  Tensor<S> pos_embed;  // T x d, learned
  std::vector<GteLayer<S>> layers;
  Tensor<S> ln_f_g, ln_f_b;   // final norm
  Tensor<S> avg_w;            // length-T kernel of the weighted average layer
  Tensor<S> bank_w, bank_b;   // d -> 26 * state_dim
  // per-state two-layer heads on [state, v_cliff]; the last layer starts at
  // zero so the initial estimate is exactly the fixed camera-biased rest pose
  std::vector<Tensor<S>> head_w1, head_b1, head_w2, head_b2;

  Gte() = default;
  Gte(ParameterStore<S>& ps, const GteConfig& c, Rng& rng) : cfg(c) {
    validate_gte_config(c);
    long d = c.model_dim;
    auto lin = [&](const std::string& name, long in, long out, bool zero = false) {
      auto& p = ps.create(name, Shape{in, out});
      if (!zero) init_glorot(p, rng, in, out);
      return p.value;
    };
    auto vec = [&](const std::string& name, long n) { return ps.create(name, Shape{n}).value; };
    auto ones = [&](const std::string& name, long n) {
      auto& p = ps.create(name, Shape{n});
      fill(p, S(1));
      return p.value;
    };
    auto& pe = ps.create("gte.pos_embed", Shape{c.frames, d});
    init_normal(pe, rng, 0.02);
    pos_embed = pe.value;
    for (long l = 0; l < c.layers; ++l) {
      std::string p = "gte.layer" + std::to_string(l) + ".";
      GteLayer<S> lay;
      lay.ln1_g = ones(p + "ln1.g", d);
      lay.ln1_b = vec(p + "ln1.b", d);
      lay.wq = lin(p + "attn.wq", d, d); lay.bq = vec(p + "attn.bq", d);
      lay.wk = lin(p + "attn.wk", d, d); lay.bk = vec(p + "attn.bk", d);
      lay.wv = lin(p + "attn.wv", d, d); lay.bv = vec(p + "attn.bv", d);
      lay.wo = lin(p + "attn.wo", d, d); lay.bo = vec(p + "attn.bo", d);
      lay.ln2_g = ones(p + "ln2.g", d);
      lay.ln2_b = vec(p + "ln2.b", d);
      lay.w_mlp1 = lin(p + "mlp.w1", d, c.mlp_dim); lay.b_mlp1 = vec(p + "mlp.b1", c.mlp_dim);
      lay.w_mlp2 = lin(p + "mlp.w2", c.mlp_dim, d); lay.b_mlp2 = vec(p + "mlp.b2", d);
      layers.push_back(std::move(lay));
    }
    ln_f_g = ones("gte.ln_final.g", d);
    ln_f_b = vec("gte.ln_final.b", d);
    avg_w = vec("gte.avg_w", c.frames);
    bank_w = lin("gte.bank.w", d, kStates * c.state_dim);
    bank_b = vec("gte.bank.b", kStates * c.state_dim);
    for (long n = 0; n < kStates; ++n) {
      std::string p = "gte.head" + std::to_string(n) + ".";
      head_w1.push_back(lin(p + "w1", c.state_dim + 3, c.state_dim));
      head_b1.push_back(vec(p + "b1", c.state_dim));
      head_w2.push_back(lin(p + "w2", c.state_dim, state_block_size(n), /*zero=*/true));
      head_b2.push_back(vec(p + "b2", state_block_size(n)));
    }
  }
};

// Multi-head self-attention over B x T x d via one batched matmul pair.
template <class S>
Tensor<S> mha(const GteLayer<S>& lay, const Tensor<S>& x, long heads) {
  long B = x.dim(0), T = x.dim(1), d = x.dim(2);
  long dh = d / heads;
  auto split = [&](const Tensor<S>& t) {
    // B x T x d -> (B*heads) x T x dh
    return reshape(permute(reshape(t, Shape{B, T, heads, dh}), {0, 2, 1, 3}),
                   Shape{B * heads, T, dh});
  };
  Tensor<S> q = split(linear(x, lay.wq, lay.bq));
  Tensor<S> k = split(linear(x, lay.wk, lay.bk));
  Tensor<S> v = split(linear(x, lay.wv, lay.bv));
  Tensor<S> scores = mul(bmm(q, permute(k, {0, 2, 1})), S(1.0 / std::sqrt(double(dh))));
  Tensor<S> mix = bmm(softmax(scores, 2), v);  // (B*heads) x T x dh
  Tensor<S> merged = reshape(permute(reshape(mix, Shape{B, heads, T, dh}), {0, 2, 1, 3}),
                             Shape{B, T, d});
  return linear(merged, lay.wo, lay.bo);
}

// Transformer encoding of per-frame features. Input B x T x d, output the
// frame encodings (B x T x d) after the final norm.
template <class S>
Tensor<S> gte_frames(const Gte<S>& net, const Tensor<S>& F) {
  if (F.rank() != 3 || F.dim(1) != net.cfg.frames || F.dim(2) != net.cfg.model_dim)
    fail("gte", "expected BxTxd features with T=" + std::to_string(net.cfg.frames) +
                    ", d=" + std::to_string(net.cfg.model_dim) + ", got " + shape_str(F.shape()));
  Tensor<S> x = add(F, reshape(net.pos_embed, Shape{1, net.cfg.frames, net.cfg.model_dim}));
  for (const auto& lay : net.layers) {
    x = add(x, mha(lay, layer_norm(x, lay.ln1_g, lay.ln1_b), net.cfg.heads));
    Tensor<S> h = layer_norm(x, lay.ln2_g, lay.ln2_b);
    h = linear(relu(linear(h, lay.w_mlp1, lay.b_mlp1)), lay.w_mlp2, lay.b_mlp2);
    x = add(x, h);
  }
  return layer_norm(x, net.ln_f_g, net.ln_f_b);
}

// Weighted average layer: a learned length-T kernel, softmax-normalized so
// the pooled feature stays on the scale of a single frame.
template <class S>
Tensor<S> gte_encode(const Gte<S>& net, const Tensor<S>& F) {
  Tensor<S> enc = gte_frames(net, F);  // B x T x d
  Tensor<S> w = softmax(reshape(net.avg_w, Shape{1, net.cfg.frames}), 1);
  long B = enc.dim(0);
  Tensor<S> weighted = mul(enc, reshape(w, Shape{1, net.cfg.frames, 1}));
  return sum_axis(weighted, 1);  // B x d
}

template <class S>
struct InitialEstimate {
  Tensor<S> phi;   // B x 85
  Tensor<S> bank;  // B x 26 x state_dim
};

// MLP regressor: the pooled feature fans out into 26 hidden states; each
// state plus the crop placement vector passes its own small head. The camera
// head is biased to (s=1, t=0) so projection starts well-posed.
template <class S>
InitialEstimate<S> initial_regress(const Gte<S>& net, const Tensor<S>& f,
                                   const Tensor<S>& v_cliff) {
  if (f.rank() != 2 || f.dim(1) != net.cfg.model_dim)
    fail("initial_regress", "expected Bxd features, got " + shape_str(f.shape()));
  if (v_cliff.rank() != 2 || v_cliff.dim(1) != 3 || v_cliff.dim(0) != f.dim(0))
    fail("initial_regress", "expected Bx3 crop placement, got " + shape_str(v_cliff.shape()));
  long B = f.dim(0), H = net.cfg.state_dim;
  InitialEstimate<S> out;
  out.bank = reshape(linear(f, net.bank_w, net.bank_b), Shape{B, kStates, H});

  Tensor<S> cam_bias(Shape{1, 3}, {S(1), S(0), S(0)});
  std::vector<Tensor<S>> blocks;
  for (long n = 0; n < kStates; ++n) {
    Tensor<S> s = reshape(slice(out.bank, 1, n, 1), Shape{B, H});
    Tensor<S> in = concat<S>({s, v_cliff}, 1);
    Tensor<S> hidden = relu(linear(in, net.head_w1[n], net.head_b1[n]));
    Tensor<S> block = linear(hidden, net.head_w2[n], net.head_b2[n]);
    if (n == kStates - 1) block = add(block, cam_bias);
    blocks.push_back(block);
  }
  out.phi = concat<S>(blocks, 1);  // ordering matches state_block_offset
  return out;
}

// ---------------------------------------------------------------------------
// Local temporal encoder

// Gate and candidate kernels of one ConvGRU direction. 3x3 same-padded,
// bias-free like the update equations. With `reuse_update_kernel_in_reset`
// the reset gate runs on the update gate's hidden kernel (the weight sharing
// of the printed recurrence); the default keeps a distinct U_r.
template <class S>
struct ConvGruCell {
  Tensor<S> wz, uz, wr, ur, w, u;
  bool reuse_update_kernel_in_reset = false;

  ConvGruCell() = default;
  ConvGruCell(ParameterStore<S>& ps, const std::string& prefix, long channels, Rng& rng,
              bool literal_eq2 = false)
      : reuse_update_kernel_in_reset(literal_eq2) {
    auto k = [&](const std::string& name) {
      auto& p = ps.create(prefix + "." + name, Shape{channels, channels, 3, 3});
      init_glorot(p, rng, channels * 9, channels * 9);
      return p.value;
    };
    wz = k("wz"); uz = k("uz"); wr = k("wr");
    if (!literal_eq2) ur = k("ur");
    w = k("w"); u = k("u");
  }
};

// One recurrence step:
//   Z = sigmoid(Wz * m + Uz * h),  R = sigmoid(Wr * m + Ur * h)
//   cand = tanh(W * m + U * (R o h)),  h' = (1 - Z) o h + Z o cand
template <class S>
Tensor<S> convgru_step(const ConvGruCell<S>& cell, const Tensor<S>& m, const Tensor<S>& h) {
  if (m.shape() != h.shape())
    fail_shapes("convgru_step", "input and hidden shapes differ", m.shape(), h.shape());
  const Tensor<S>& ur = cell.reuse_update_kernel_in_reset ? cell.uz : cell.ur;
  Tensor<S> z = sigmoid(add(conv2d(m, cell.wz, Tensor<S>(), 1, 1),
                            conv2d(h, cell.uz, Tensor<S>(), 1, 1)));
  Tensor<S> r = sigmoid(add(conv2d(m, cell.wr, Tensor<S>(), 1, 1),
                            conv2d(h, ur, Tensor<S>(), 1, 1)));
  Tensor<S> cand = tanh(add(conv2d(m, cell.w, Tensor<S>(), 1, 1),
                            conv2d(mul(r, h), cell.u, Tensor<S>(), 1, 1)));
  return add(mul(sub(S(1), z), h), mul(z, cand));
}

struct LteConfig {
  long window = 5;            // L, odd
  long channels = 32;         // D
  long map_size = 16;         // h = w of the local maps
  long downsample_size = 0;   // 0 = full resolution; otherwise GRU runs at SxS
  bool paper_literal_eq2 = false;

  long tau() const { return (window - 1) / 2; }
};

inline void validate_lte_config(const LteConfig& c) {
  if (c.window < 1 || c.window % 2 == 0)
    fail("lte", "window " + std::to_string(c.window) + " must be odd and positive");
  if (c.channels < 1 || c.map_size < 1) fail("lte", "channels and map size must be positive");
  if (c.downsample_size != 0) {
    long s = c.downsample_size;
    if (s < 1 || s > c.map_size || c.map_size % s != 0)
      fail("lte", "downsample size " + std::to_string(s) + " must divide the map size " +
                      std::to_string(c.map_size));
    long m = c.map_size;
    while (m > s) {
      if (m % 2 != 0)
        fail("lte", "map size " + std::to_string(c.map_size) +
                        " cannot be halved down to " + std::to_string(s));
      m /= 2;
    }
  }
}

template <class S>
struct Lte {
  LteConfig cfg;
  ConvGruCell<S> past, future;
  Tensor<S> proj_w, proj_b;                  // 2D -> D, 3x3, after the concat
  std::vector<Tensor<S>> down_w, down_b;     // entry stack (first stride 1, rest stride 2)
  std::vector<Tensor<S>> up_w, up_b;         // mirrored transposed convolutions

  Lte() = default;
  Lte(ParameterStore<S>& ps, const LteConfig& c, Rng& rng) : cfg(c) {
    validate_lte_config(c);
    long D = c.channels;
    past = ConvGruCell<S>(ps, "lte.past", D, rng, c.paper_literal_eq2);
    future = ConvGruCell<S>(ps, "lte.future", D, rng, c.paper_literal_eq2);
    auto& pw = ps.create("lte.proj.w", Shape{D, 2 * D, 3, 3});
    init_glorot(pw, rng, 2 * D * 9, D * 9);
    proj_w = pw.value;
    proj_b = ps.create("lte.proj.b", Shape{D}).value;
    if (c.downsample_size != 0) {
      long stages = 0;
      for (long m = c.map_size; m > c.downsample_size; m /= 2) ++stages;
      for (long i = 0; i <= stages; ++i) {  // stage 0 keeps full resolution
        std::string name = "lte.down" + std::to_string(i);
        auto& w = ps.create(name + ".w", Shape{D, D, 3, 3});
        init_glorot(w, rng, D * 9, D * 9);
        down_w.push_back(w.value);
        down_b.push_back(ps.create(name + ".b", Shape{D}).value);
      }
      for (long i = 0; i < stages; ++i) {
        std::string name = "lte.up" + std::to_string(i);
        auto& w = ps.create(name + ".w", Shape{2 * D, 2 * D, 3, 3});
        init_glorot(w, rng, 2 * D * 9, 2 * D * 9);
        up_w.push_back(w.value);
        up_b.push_back(ps.create(name + ".b", Shape{2 * D}).value);
      }
    }
  }
};

template <class S>
struct LteHidden {
  Tensor<S> past;    // m_p, hidden map after the forward branch
  Tensor<S> future;  // m_f, hidden map after the backward branch
};

// Bidirectional pass over an L-frame window centered on the sequence
// mid-frame. M is B x T x D x h x w; the past branch consumes window frames
// 0..tau in order, the future branch L-1..tau, both from zero hidden maps.
template <class S>
LteHidden<S> lte_hidden_pair(const Lte<S>& net, const Tensor<S>& M) {
  const LteConfig& c = net.cfg;
  if (M.rank() != 5 || M.dim(2) != c.channels || M.dim(3) != c.map_size || M.dim(4) != c.map_size)
    fail("lte", "expected BxTxDxhxw local maps with D=" + std::to_string(c.channels) +
                    ", h=w=" + std::to_string(c.map_size) + ", got " + shape_str(M.shape()));
  long B = M.dim(0), T = M.dim(1);
  if (c.window > T)
    fail("lte", "window " + std::to_string(c.window) + " exceeds the " + std::to_string(T) +
                    "-frame sequence");
  if (T % 2 == 0) fail("lte", "sequence length " + std::to_string(T) + " must be odd");
  long mid = (T - 1) / 2, tau = c.tau();
  long first = mid - tau;

  auto frame = [&](long k) {  // window index -> B x D x s x s, downsampled if configured
    Tensor<S> m = reshape(slice(M, 1, first + k, 1), Shape{B, c.channels, c.map_size, c.map_size});
    for (size_t i = 0; i < net.down_w.size(); ++i)
      m = relu(conv2d(m, net.down_w[i], net.down_b[i], i == 0 ? 1 : 2, 1));
    return m;
  };

  long gs = c.downsample_size != 0 ? c.downsample_size : c.map_size;
  LteHidden<S> out;
  out.past = Tensor<S>(Shape{B, c.channels, gs, gs});
  out.future = Tensor<S>(Shape{B, c.channels, gs, gs});
  for (long k = 0; k <= tau; ++k) out.past = convgru_step(net.past, frame(k), out.past);
  for (long k = c.window - 1; k >= tau; --k)
    out.future = convgru_step(net.future, frame(k), out.future);
  return out;
}

template <class S>
Tensor<S> lte_encode(const Lte<S>& net, const Tensor<S>& M) {
  LteHidden<S> h = lte_hidden_pair(net, M);
  Tensor<S> both = concat<S>({h.past, h.future}, 1);  // B x 2D at the GRU resolution
  for (size_t i = 0; i < net.up_w.size(); ++i)
    both = relu(conv_transpose2d(both, net.up_w[i], net.up_b[i], 2, 1, 1));
  return conv2d(both, net.proj_w, net.proj_b, 1, 1);
}

}  // namespace tar

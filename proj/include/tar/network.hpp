#pragma once

// Full model assembly: per-frame backbone, the two temporal encoders, and the
// recurrent refiner, with switches that drop either encoder for comparisons.

#include <string>
#include <vector>

#include "tar/encoders.hpp"
#include "tar/features.hpp"
#include "tar/refine.hpp"

namespace tar {

enum class AblationMode { full, only_gte, only_lte };

inline const char* ablation_name(AblationMode m) {
  switch (m) {
    case AblationMode::only_gte: return "only-gte";
    case AblationMode::only_lte: return "only-lte";
    default: return "full";
  }
}

inline AblationMode parse_ablation(const std::string& s) {
  if (s == "full") return AblationMode::full;
  if (s == "only-gte") return AblationMode::only_gte;
  if (s == "only-lte") return AblationMode::only_lte;
  fail("ablation", "unknown mode '" + s + "' (expected full, only-gte, or only-lte)");
}

struct NetworkConfig {
  BackboneConfig backbone;
  GteConfig gte;
  LteConfig lte;
  RefineConfig rrm;
  AblationMode mode = AblationMode::full;
};

inline void validate_network_config(const NetworkConfig& c) {
  validate_gte_config(c.gte);
  validate_lte_config(c.lte);
  validate_refine_config(c.rrm);
  if (c.backbone.local_size() != c.lte.map_size)
    fail("network config", "backbone local maps are " + std::to_string(c.backbone.local_size()) +
                               " but the local encoder expects " +
                               std::to_string(c.lte.map_size));
  if (c.backbone.local_dim != c.lte.channels)
    fail("network config", "backbone local channels " + std::to_string(c.backbone.local_dim) +
                               " do not match the local encoder's " +
                               std::to_string(c.lte.channels));
  if (c.backbone.global_dim != c.gte.model_dim)
    fail("network config", "backbone global width " + std::to_string(c.backbone.global_dim) +
                               " does not match the global encoder's " +
                               std::to_string(c.gte.model_dim));
  if (c.gte.state_dim != c.rrm.hidden_dim)
    fail("network config", "regressor state width " + std::to_string(c.gte.state_dim) +
                               " does not match the refiner's hidden width " +
                               std::to_string(c.rrm.hidden_dim));
  if (c.lte.window > c.gte.frames)
    fail("network config", "local window " + std::to_string(c.lte.window) +
                               " exceeds the " + std::to_string(c.gte.frames) +
                               "-frame input sequence");
}

// All submodules are always constructed so checkpoints stay layout-compatible
// across modes; the forward pass routes around whichever encoder is disabled.
template <class S>
struct TarNetwork {
  NetworkConfig cfg;
  Backbone<S> backbone;
  Gte<S> gte;
  Lte<S> lte;
  Rrm<S> rrm;

  TarNetwork() = default;
  TarNetwork(ParameterStore<S>& ps, const NetworkConfig& c, Rng& rng) : cfg(c) {
    validate_network_config(c);
    backbone = Backbone<S>(ps, c.backbone, rng);
    gte = Gte<S>(ps, c.gte, rng);
    lte = Lte<S>(ps, c.lte, rng);
    rrm = Rrm<S>(ps, c.rrm, c.backbone.local_dim, rng);
  }
};

template <class S>
struct NetworkOutput {
  Tensor<S> phi_init;                // Bx85
  std::vector<Tensor<S>> estimates;  // refinement iterations, each Bx85
  Tensor<S> local_map;               // BxDxhxw as seen by the refiner
};

// images BxTxCxRxR, one crop context per window (mid-frame geometry).
template <class S>
NetworkOutput<S> network_forward(const TarNetwork<S>& net, const BodyTensors<S>& body,
                                 const Tensor<S>& images, const CropContext<S>& ctx) {
  const NetworkConfig& cfg = net.cfg;
  long T = cfg.gte.frames;
  if (images.rank() != 5 || images.dim(1) != T)
    fail_shapes("network_forward", "expected BxTxCxHxW images with T=" + std::to_string(T),
                images.shape(), Shape{});
  long B = images.dim(0), C = images.dim(2), R = images.dim(3);
  if (ctx.center.dim(0) != B)
    fail_shapes("network_forward", "crop context does not match the window batch",
                images.shape(), ctx.center.shape());

  FeatureSequence<S> feats =
      backbone_forward(net.backbone, reshape(images, Shape{B * T, C, R, images.dim(4)}));
  long d = cfg.backbone.global_dim, D = cfg.backbone.local_dim;
  long h = cfg.backbone.local_size();
  Tensor<S> globals = reshape(feats.global, Shape{B, T, d});
  Tensor<S> locals = reshape(feats.local, Shape{B, T, D, h, h});
  long mid = (T - 1) / 2;

  Tensor<S> v = crop_placement_feature(ctx);
  Tensor<S> pooled;
  if (cfg.mode == AblationMode::only_lte) {
    // no temporal mixing of global features: the regressor sees the mid frame
    pooled = reshape(slice(globals, 1, mid, 1), Shape{B, d});
  } else {
    pooled = gte_encode(net.gte, globals);
  }
  InitialEstimate<S> init = initial_regress(net.gte, pooled, v);

  NetworkOutput<S> out;
  out.phi_init = init.phi;
  if (cfg.mode == AblationMode::only_gte) {
    // temporally agnostic local features: the refiner samples the mid frame
    out.local_map = reshape(slice(locals, 1, mid, 1), Shape{B, D, h, h});
  } else {
    out.local_map = lte_encode(net.lte, locals);
  }
  out.estimates = refine_loop(net.rrm, body, ctx, out.local_map, init.bank, init.phi);
  return out;
}

}  // namespace tar

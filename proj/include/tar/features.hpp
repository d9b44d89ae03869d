#pragma once

#include "tar/conv.hpp"
#include "tar/nn.hpp"

// Per-frame convolutional backbone. Four stride-2 stages shrink the crop by
// 16x for the global head; the stride-4 tap is projected to a slim channel
// count and kept at full 16x16 resolution as the local feature map the
// temporal modules sample from. Frames never mix here: dim 0 is a plain
// batch axis, so temporal context is entirely the encoders' job.

namespace tar {

struct BackboneConfig {
  long in_channels = 3;
  long resolution = 64;
  long global_dim = 128;  // d, width of f_t
  long local_dim = 32;    // D, channels of m_t

  long local_size() const { return resolution / 4; }
};

template <class S>
struct Backbone {
  BackboneConfig cfg;
  Tensor<S> w1, b1, w2, b2, w3, b3, w4, b4;  // strided 3x3 stages
  Tensor<S> wl, bl;                          // 1x1 projection to the local map
  Tensor<S> wg, bg;                          // pooled features -> global vector

  Backbone() = default;
  Backbone(ParameterStore<S>& ps, const BackboneConfig& c, Rng& rng) : cfg(c) {
    if (c.resolution % 4 != 0)
      fail("backbone", "resolution " + std::to_string(c.resolution) + " is not divisible by 4");
    auto conv = [&](const std::string& name, long co, long ci, long k) {
      auto& p = ps.create("backbone." + name + ".w", Shape{co, ci, k, k});
      init_glorot(p, rng, ci * k * k, co * k * k);
      return p.value;
    };
    auto bias = [&](const std::string& name, long n) {
      return ps.create("backbone." + name + ".b", Shape{n}).value;
    };
    w1 = conv("stage1", 16, c.in_channels, 3); b1 = bias("stage1", 16);
    w2 = conv("stage2", 32, 16, 3);            b2 = bias("stage2", 32);
    w3 = conv("stage3", 64, 32, 3);            b3 = bias("stage3", 64);
    w4 = conv("stage4", c.global_dim, 64, 3);  b4 = bias("stage4", c.global_dim);
    wl = conv("local_proj", c.local_dim, 32, 1);
    bl = bias("local_proj", c.local_dim);
    auto& g = ps.create("backbone.global.w", Shape{c.global_dim, c.global_dim});
    init_glorot(g, rng, c.global_dim, c.global_dim);
    wg = g.value;
    bg = bias("global", c.global_dim);
  }
};

template <class S>
struct FeatureSequence {
  Tensor<S> global;  // T x d (or B*T x d when frames of many windows are stacked)
  Tensor<S> local;   // T x D x h x w
};

template <class S>
FeatureSequence<S> backbone_forward(const Backbone<S>& net, const Tensor<S>& images) {
  if (images.rank() != 4 || images.dim(1) != net.cfg.in_channels)
    fail("backbone", "expected TxCxHxW images with " + std::to_string(net.cfg.in_channels) +
                         " channels, got " + shape_str(images.shape()));
  if (images.dim(2) != net.cfg.resolution || images.dim(3) != net.cfg.resolution)
    fail("backbone", "input resolution " + std::to_string(images.dim(2)) + "x" +
                         std::to_string(images.dim(3)) + " does not match the configured " +
                         std::to_string(net.cfg.resolution));
  // center the [0,1] pixel range so the first stage sees signed inputs
  Tensor<S> x = add(images, S(-0.5));
  x = relu(conv2d(x, net.w1, net.b1, 2, 1));
  Tensor<S> tap = relu(conv2d(x, net.w2, net.b2, 2, 1));  // stride 4, 16x16
  x = relu(conv2d(tap, net.w3, net.b3, 2, 1));
  x = relu(conv2d(x, net.w4, net.b4, 2, 1));

  FeatureSequence<S> out;
  out.local = conv2d(tap, net.wl, net.bl, 1, 0);
  // global average pool over the 4x4 grid, then a linear head
  long T = x.dim(0), C = x.dim(1);
  Tensor<S> pooled = mean_axis(reshape(x, Shape{T, C, x.dim(2) * x.dim(3)}), 2);
  // One GEMM per frame: Eigen's blocked matmul rounds differently depending on
  // the row count, which would make a frame's features depend on its neighbours.
  std::vector<Tensor<S>> rows;
  rows.reserve(static_cast<size_t>(T));
  for (long t = 0; t < T; ++t) rows.push_back(linear(slice(pooled, 0, t, 1), net.wg, net.bg));
  out.global = concat(rows, 0);
  return out;
}

}  // namespace tar

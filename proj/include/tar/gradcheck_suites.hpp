#pragma once

#include "tar/conv.hpp"
#include "tar/encoders.hpp"
#include "tar/features.hpp"
#include "tar/grad_check.hpp"
#include "tar/rotation.hpp"
#include "tar/train.hpp"

// Named finite-difference suites shared by the unit tests and the gradcheck
// CLI command. Everything runs in double with deterministic inputs; each item
// builds a small graph, differentiates a weighted sum of the output and
// compares against central differences.

namespace tar {

struct GradSuiteItem {
  std::string name;
  GradCheckReport report;
};

namespace detail {

inline Tensor<double> rand_const(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>(std::move(shape), std::move(v));
}

inline Parameter<double>& rand_param(ParameterStore<double>& ps, const std::string& name,
                                     Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  auto& p = ps.create(name, std::move(shape));
  for (double& x : p.value.values()) x = rng.uniform(lo, hi);
  return p;
}

// Scalarises an output against fixed random weights (a plain sum would hide
// transposition mistakes). Seed-keyed so repeated evaluations of the same
// graph see identical weights, which grad_check requires.
inline Tensor<double> weighted(const Tensor<double>& out, uint64_t seed) {
  Rng rng(seed);
  return sum(mul(out, rand_const(rng, out.shape())));
}

}  // namespace detail

inline std::vector<GradSuiteItem> ops_gradcheck_suite() {
  using detail::rand_const;
  using detail::rand_param;
  using detail::weighted;
  std::vector<GradSuiteItem> items;
  auto run = [&](const std::string& name, ParameterStore<double>& ps,
                 const std::function<Tensor<double>()>& f) {
    std::vector<Parameter<double>*> params;
    for (auto& p : ps.all()) params.push_back(p.get());
    items.push_back({name, grad_check<double>(f, params)});
  };

  {
    ParameterStore<double> ps;
    Rng rng(101);
    auto& a = rand_param(ps, "a", {3, 4}, rng);
    auto& b = rand_param(ps, "b", {4, 2}, rng);
    run("matmul", ps, [&] { return weighted(matmul(a.value, b.value), 901); });
  }
  {
    ParameterStore<double> ps;
    Rng rng(102);
    auto& a = rand_param(ps, "a", {2, 3, 4}, rng);
    auto& b = rand_param(ps, "b", {2, 4, 2}, rng);
    run("bmm", ps, [&] { return weighted(bmm(a.value, b.value), 902); });
  }
  {
    ParameterStore<double> ps;
    Rng rng(103);
    auto& x = rand_param(ps, "x", {2, 3, 5, 5}, rng);
    auto& w = rand_param(ps, "w", {4, 3, 3, 3}, rng);
    auto& b = rand_param(ps, "b", {4}, rng);
    run("conv2d_s1p1", ps, [&] { return weighted(conv2d(x.value, w.value, b.value, 1, 1), 903); });
  }
  {
    ParameterStore<double> ps;
    Rng rng(104);
    auto& x = rand_param(ps, "x", {2, 2, 6, 6}, rng);
    auto& w = rand_param(ps, "w", {3, 2, 3, 3}, rng);
    run("conv2d_s2p0", ps,
        [&] { return weighted(conv2d(x.value, w.value, Tensor<double>(), 2, 0), 904); });
  }
  {
    ParameterStore<double> ps;
    Rng rng(105);
    auto& x = rand_param(ps, "x", {2, 3, 4, 4}, rng);
    auto& w = rand_param(ps, "w", {3, 2, 3, 3}, rng);
    auto& b = rand_param(ps, "b", {2}, rng);
    run("conv_transpose2d", ps,
        [&] { return weighted(conv_transpose2d(x.value, w.value, b.value, 2, 1, 1), 905); });
  }
  {
    ParameterStore<double> ps;
    Rng rng(106);
    auto& x = rand_param(ps, "x", {2, 3, 7}, rng);
    auto& w = rand_param(ps, "w", {4, 3, 3}, rng);
    auto& b = rand_param(ps, "b", {4}, rng);
    run("conv1d", ps, [&] { return weighted(conv1d(x.value, w.value, b.value, 2, 1), 906); });
  }
  {
    ParameterStore<double> ps;
    Rng rng(107);
    auto& a = rand_param(ps, "a", {2, 3, 4}, rng);
    auto& b = rand_param(ps, "b", {3, 1}, rng);
    run("add_broadcast", ps, [&] { return weighted(add(a.value, b.value), 907); });
  }
  {
    ParameterStore<double> ps;
    Rng rng(117);
    auto& a = rand_param(ps, "a", {2, 3, 4}, rng);
    auto& b = rand_param(ps, "b", {4}, rng);
    run("sub_broadcast", ps, [&] { return weighted(sub(a.value, b.value), 917); });
  }
  {
    ParameterStore<double> ps;
    Rng rng(108);
    auto& a = rand_param(ps, "a", {3, 4}, rng);
    auto& b = rand_param(ps, "b", {1, 4}, rng, 0.5, 1.5);  // away from zero for div
    run("mul_broadcast", ps, [&] { return weighted(mul(a.value, b.value), 908); });
    run("div_broadcast", ps, [&] { return weighted(div(a.value, b.value), 918); });
  }
  {
    ParameterStore<double> ps;
    Rng rng(109);
    auto& x = rand_param(ps, "x", {4, 5}, rng, -2.0, 2.0);
    // keep relu inputs away from its kink
    for (double& v : x.value.values())
      if (std::abs(v) < 1e-2) v += 0.1;
    run("relu", ps, [&] { return weighted(relu(x.value), 909); });
    run("sigmoid", ps, [&] { return weighted(sigmoid(x.value), 919); });
    run("tanh", ps, [&] { return weighted(tanh(x.value), 929); });
    run("softplus", ps, [&] { return weighted(softplus(x.value), 939); });
  }
  {
    ParameterStore<double> ps;
    Rng rng(110);
    auto& x = rand_param(ps, "x", {2, 5, 3}, rng, -2.0, 2.0);
    run("softmax_axis1", ps, [&] { return weighted(softmax(x.value, 1), 910); });
  }
  {
    ParameterStore<double> ps;
    Rng rng(111);
    auto& x = rand_param(ps, "x", {4, 6}, rng);
    auto& g = rand_param(ps, "gamma", {6}, rng, 0.5, 1.5);
    auto& b = rand_param(ps, "beta", {6}, rng);
    run("layer_norm", ps, [&] { return weighted(layer_norm(x.value, g.value, b.value), 911); });
  }
  {
    ParameterStore<double> ps;
    Rng rng(112);
    auto& x = rand_param(ps, "x", {3, 4, 2}, rng);
    run("sum_axis_keepdim", ps, [&] { return weighted(sum_axis(x.value, 1, true), 912); });
    run("mean_axis", ps, [&] { return weighted(mean_axis(x.value, 0), 922); });
    run("mean_all", ps, [&] { return mean(x.value); });
  }
  {
    ParameterStore<double> ps;
    Rng rng(113);
    auto& a = rand_param(ps, "a", {2, 2, 3}, rng);
    auto& b = rand_param(ps, "b", {2, 4, 3}, rng);
    run("concat_slice", ps, [&] {
      Tensor<double> cat = concat<double>({a.value, b.value}, 1);
      return weighted(slice(cat, 1, 1, 4), 913);
    });
  }
  {
    ParameterStore<double> ps;
    Rng rng(114);
    auto& x = rand_param(ps, "x", {2, 5, 3}, rng);
    std::vector<long> idx = {4, 0, 2, 0};  // duplicate index exercises accumulation
    run("index_select", ps, [&] { return weighted(index_select(x.value, 1, idx), 914); });
  }
  {
    ParameterStore<double> ps;
    Rng rng(115);
    auto& x = rand_param(ps, "x", {2, 3, 4}, rng);
    run("reshape_permute", ps,
        [&] { return weighted(permute(reshape(x.value, {6, 4}), {1, 0}), 915); });
    run("expand", ps, [&] { return weighted(expand(slice(x.value, 1, 0, 1), {2, 3, 4}), 925); });
  }
  {
    ParameterStore<double> ps;
    Rng rng(116);
    auto& m = rand_param(ps, "map", {2, 3, 5, 6}, rng);
    auto& p = ps.create("pts", {2, 4, 2});
    p.value.set_requires_grad(true);
    // fractional, strictly interior points: the clamp and floor are locally
    // smooth there so finite differences are valid
    Rng pr(2116);
    for (long i = 0; i < p.value.numel(); ++i)
      p.value.values()[i] = pr.uniform(0.7, 3.3) + 0.07 * static_cast<double>(i % 5);
    run("bilinear_sample", ps, [&] { return weighted(bilinear_sample(m.value, p.value), 916); });
  }
  {
    ParameterStore<double> ps;
    Rng rng(118);
    auto& w = rand_param(ps, "omega", {4, 3}, rng);
    // one rotation well below the series switchover exercises that branch
    w.value.values()[9] = 1e-6;
    w.value.values()[10] = -2e-6;
    w.value.values()[11] = 5e-7;
    run("rodrigues", ps, [&] { return weighted(rodrigues(w.value), 938); });
  }
  {
    ParameterStore<double> ps;
    Rng rng(119);
    auto& x = rand_param(ps, "x", {3, 6}, rng);
    auto& w1 = rand_param(ps, "w1", {6, 8}, rng, -0.5, 0.5);
    auto& b1 = rand_param(ps, "b1", {8}, rng, -0.1, 0.1);
    auto& g = rand_param(ps, "gamma", {8}, rng, 0.8, 1.2);
    auto& bt = rand_param(ps, "beta", {8}, rng, -0.1, 0.1);
    auto& w2 = rand_param(ps, "w2", {8, 4}, rng, -0.5, 0.5);
    run("mlp_chain", ps, [&] {
      Tensor<double> h =
          layer_norm(sigmoid(linear(x.value, w1.value, b1.value)), g.value, bt.value);
      return weighted(softmax(linear(h, w2.value), 1), 939);
    });
  }
  return items;
}

// Differentiates every parameter of small backbone/GTE/ConvGRU/LTE instances.
// Probes are capped per parameter; with the structured layers any broken
// backward rule shows up on essentially every element anyway.
inline std::vector<GradSuiteItem> encoders_gradcheck_suite() {
  using detail::rand_const;
  using detail::rand_param;
  using detail::weighted;
  std::vector<GradSuiteItem> items;
  auto run = [&](const std::string& name, ParameterStore<double>& ps,
                 const std::function<Tensor<double>()>& f, long probes) {
    std::vector<Parameter<double>*> params;
    for (auto& p : ps.all()) params.push_back(p.get());
    GradCheckOptions opts;
    opts.max_probes_per_param = probes;
    items.push_back({name, grad_check<double>(f, params, opts)});
  };

  {
    ParameterStore<double> ps;
    Rng rng(301);
    BackboneConfig cfg;
    cfg.resolution = 8;
    cfg.global_dim = 12;
    cfg.local_dim = 4;
    Backbone<double> net(ps, cfg, rng);
    Tensor<double> images = rand_const(rng, {2, 3, 8, 8}, 0.0, 1.0);
    run("backbone", ps, [&] {
      auto fs = backbone_forward(net, images);
      return add(weighted(fs.global, 941), weighted(fs.local, 942));
    }, 6);
  }
  {
    ParameterStore<double> ps;
    Rng rng(302);
    GteConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.model_dim = 8;
    cfg.mlp_dim = 12;
    cfg.frames = 3;
    cfg.state_dim = 8;
    Gte<double> net(ps, cfg, rng);
    for (auto& w : net.head_w2)  // zero-init heads would hide w1/bank gradients
      for (double& v : w.values()) v = rng.uniform(-0.3, 0.3);
    Tensor<double> F = rand_const(rng, {2, 3, 8});
    Tensor<double> v_cliff = rand_const(rng, {2, 3}, -0.2, 0.2);
    run("gte_regress", ps, [&] {
      auto est = initial_regress(net, gte_encode(net, F), v_cliff);
      return add(weighted(est.phi, 943), weighted(est.bank, 944));
    }, 8);
  }
  {
    ParameterStore<double> ps;
    Rng rng(303);
    ConvGruCell<double> cell(ps, "cell", 2, rng);
    auto& m = rand_param(ps, "m", {2, 2, 3, 3}, rng);
    auto& h = rand_param(ps, "h", {2, 2, 3, 3}, rng);
    run("convgru_step", ps, [&] { return weighted(convgru_step(cell, m.value, h.value), 945); },
        0);
  }
  {
    ParameterStore<double> ps;
    Rng rng(304);
    LteConfig cfg;
    cfg.window = 3;
    cfg.channels = 2;
    cfg.map_size = 4;
    Lte<double> net(ps, cfg, rng);
    auto& M = rand_param(ps, "M", {1, 3, 2, 4, 4}, rng);
    run("lte_full", ps, [&] { return weighted(lte_encode(net, M.value), 946); }, 8);
  }
  {
    ParameterStore<double> ps;
    Rng rng(305);
    LteConfig cfg;
    cfg.window = 3;
    cfg.channels = 2;
    cfg.map_size = 4;
    cfg.downsample_size = 2;
    Lte<double> net(ps, cfg, rng);
    auto& M = rand_param(ps, "M", {1, 3, 2, 4, 4}, rng);
    run("lte_downsampled", ps, [&] { return weighted(lte_encode(net, M.value), 947); }, 8);
  }
  return items;
}


// Full-pipeline finite differences on miniature dimensions. Zero-initialized
// update heads would hide every upstream path, so heads are randomized first.
inline std::vector<GradSuiteItem> end2end_gradcheck_suite() {
  using detail::rand_param;
  using detail::weighted;
  std::vector<GradSuiteItem> items;
  auto run = [&](const std::string& name, ParameterStore<double>& ps,
                 const std::function<Tensor<double>()>& f, long probes) {
    GradCheckOptions opts;
    opts.max_probes_per_param = probes;
    std::vector<Parameter<double>*> params;
    for (auto& p : ps.all()) params.push_back(p.get());
    items.push_back({name, grad_check<double>(f, params, opts)});
  };
  auto randomize = [](ParameterStore<double>& ps, const char* stem, Rng& rng) {
    for (auto& p : ps.all())
      if (p->name.rfind(stem, 0) == 0)
        for (double& v : p->value.values()) v = rng.uniform(-0.3, 0.3);
  };

  BodyModel model = make_synthetic_model({.vertices = 120}, 57);
  BodyTensors<double> body = to_tensors<double>(model);

  {
    ParameterStore<double> ps;
    Rng rng(151);
    RefineConfig cfg;
    cfg.iterations = 2;
    cfg.radius = 1;
    cfg.patch_dim = 2;
    cfg.hidden_dim = 4;
    Rrm<double> rrm(ps, cfg, 2, rng);
    randomize(ps, "rrm.head", rng);
    auto& map = rand_param(ps, "map", {1, 2, 8, 8}, rng, 0.0, 1.0);
    auto& bank = rand_param(ps, "bank", {1, kStates, cfg.hidden_dim}, rng, -0.5, 0.5);
    auto& phi = ps.create("phi", Shape{1, kPhiDims});
    phi.value.values()[72 + kShapeDims] = 1.0;  // unit crop scale, rest pose
    CropContext<double> ctx;
    ctx.center = Tensor<double>(Shape{1, 2}, {500.0, 500.0});
    ctx.size = Tensor<double>(Shape{1, 1}, {200.0});
    run("refine_loop", ps,
        [&] {
          auto phis = refine_loop(rrm, body, ctx, map.value, bank.value, phi.value);
          return weighted(phis.back(), 951);
        },
        6);
  }

  {
    MotionConfig mc;
    mc.frames = 5;
    mc.resolution = 32;
    static Dataset data = generate_dataset(model, mc, 1, 77);

    NetworkConfig cfg;
    cfg.backbone = BackboneConfig{3, 32, 12, 4};
    cfg.gte = GteConfig{1, 2, 12, 16, 5, 6};
    cfg.lte = LteConfig{3, 4, 8};
    cfg.rrm.iterations = 2;
    cfg.rrm.radius = 1;
    cfg.rrm.patch_dim = 3;
    cfg.rrm.hidden_dim = 6;
    ParameterStore<double> ps;
    Rng rng(153);
    TarNetwork<double> net(ps, cfg, rng);
    randomize(ps, "rrm.head", rng);
    randomize(ps, "gte.head", rng);
    LossConfig loss;
    loss.stages = cfg.rrm.iterations;
    auto refs = list_windows(data, cfg.gte.frames, 2);
    WindowBatch<double> batch = assemble_windows<double>(data, refs);
    run("pipeline", ps,
        [&] {
          NetworkOutput<double> out = network_forward(net, body, batch.images, batch.ctx);
          std::vector<Tensor<double>> stages;
          stages.push_back(stage_loss(out.phi_init, batch, body, loss));
          for (const auto& e : out.estimates) stages.push_back(stage_loss(e, batch, body, loss));
          return total_loss(stages, loss);
        },
        2);
  }
  return items;
}

}  // namespace tar

#include <doctest.h>

#include <cstring>

#include "tar/gradcheck_suites.hpp"

using namespace tar;

namespace {

Tensor<double> rand_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>(std::move(shape), std::move(v));
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (long i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("backbone emits the contracted shapes and only finite values") {
  ParameterStore<double> ps;
  Rng rng(5);
  Backbone<double> net(ps, {}, rng);
  Tensor<double> images = rand_tensor(rng, {9, 3, 64, 64}, 0.0, 1.0);
  auto f = backbone_forward(net, images);
  CHECK(f.global.shape() == Shape{9, 128});
  CHECK(f.local.shape() == Shape{9, 32, 16, 16});
  for (long i = 0; i < f.global.numel(); ++i) CHECK(std::isfinite(f.global[i]));

  CHECK_THROWS_WITH_AS(backbone_forward(net, rand_tensor(rng, {2, 3, 32, 32})),
                       doctest::Contains("resolution"), Error);
}

TEST_CASE("backbone treats frames independently") {
  ParameterStore<double> ps;
  Rng rng(6);
  BackboneConfig cfg;
  cfg.resolution = 16;
  cfg.global_dim = 8;
  cfg.local_dim = 4;
  Backbone<double> net(ps, cfg, rng);
  Tensor<double> a = rand_tensor(rng, {3, 3, 16, 16}, 0.0, 1.0);
  Tensor<double> b = rand_tensor(rng, {2, 3, 16, 16}, 0.0, 1.0);
  auto fa = backbone_forward(net, a);
  auto fb = backbone_forward(net, b);
  auto fc = backbone_forward(net, concat<double>({a, b}, 0));
  CHECK(max_abs_diff(fc.global, concat<double>({fa.global, fb.global}, 0)) == 0.0);
  CHECK(max_abs_diff(fc.local, concat<double>({fa.local, fb.local}, 0)) == 0.0);

  // permuting frames permutes outputs identically
  auto fp = backbone_forward(net, index_select(a, 0, {2, 0, 1}));
  CHECK(max_abs_diff(fp.global, index_select(fa.global, 0, {2, 0, 1})) == 0.0);
  CHECK(max_abs_diff(fp.local, index_select(fa.local, 0, {2, 0, 1})) == 0.0);
}

TEST_CASE("convgru zero-weight algebra") {
  ParameterStore<double> ps;
  Rng rng(7);
  ConvGruCell<double> cell(ps, "cell", 3, rng);
  for (auto& p : ps.all()) fill(*p, 0.0);

  Tensor<double> m = rand_tensor(rng, {2, 3, 4, 4});
  Tensor<double> zero(Shape{2, 3, 4, 4});
  // zero weights, zero hidden: Z = 0.5, cand = 0 -> next hidden stays zero
  Tensor<double> h1 = convgru_step(cell, m, zero);
  for (long i = 0; i < h1.numel(); ++i) CHECK(h1[i] == 0.0);
  // zero weights, hidden h: gates ignore everything, h' = (1-0.5) h
  Tensor<double> h = rand_tensor(rng, {2, 3, 4, 4});
  Tensor<double> h2 = convgru_step(cell, m, h);
  CHECK(max_abs_diff(h2, mul(h, 0.5)) <= 1e-15);

  CHECK_THROWS_AS(convgru_step(cell, m, rand_tensor(rng, {2, 3, 4, 5})), Error);
}

TEST_CASE("convgru with center-only kernels matches the scalar recurrence per position") {
  ParameterStore<double> ps;
  Rng rng(8);
  ConvGruCell<double> cell(ps, "cell", 1, rng);
  // keep only the center tap so each spatial position evolves independently
  double taps[6];
  Tensor<double>* kernels[6] = {&cell.wz, &cell.uz, &cell.wr, &cell.ur, &cell.w, &cell.u};
  for (int i = 0; i < 6; ++i) {
    taps[i] = rng.uniform(-1.5, 1.5);
    std::fill(kernels[i]->values().begin(), kernels[i]->values().end(), 0.0);
    kernels[i]->values()[4] = taps[i];  // 3x3 kernel, center entry
  }
  Tensor<double> m = rand_tensor(rng, {1, 1, 5, 5});
  Tensor<double> h = rand_tensor(rng, {1, 1, 5, 5});
  Tensor<double> out = convgru_step(cell, m, h);
  auto sg = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  for (long i = 0; i < 25; ++i) {
    double z = sg(taps[0] * m[i] + taps[1] * h[i]);
    double r = sg(taps[2] * m[i] + taps[3] * h[i]);
    double cand = std::tanh(taps[4] * m[i] + taps[5] * r * h[i]);
    double expect = (1.0 - z) * h[i] + z * cand;
    CHECK(out[i] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("convgru gates stay inside their ranges on random draws") {
  ParameterStore<double> ps;
  Rng rng(9);
  ConvGruCell<double> cell(ps, "cell", 2, rng);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> m = rand_tensor(rng, {1, 2, 4, 4}, -3.0, 3.0);
    Tensor<double> h = rand_tensor(rng, {1, 2, 4, 4}, -1.0, 1.0);
    Tensor<double> z = sigmoid(add(conv2d(m, cell.wz, Tensor<double>(), 1, 1),
                                   conv2d(h, cell.uz, Tensor<double>(), 1, 1)));
    Tensor<double> r = sigmoid(add(conv2d(m, cell.wr, Tensor<double>(), 1, 1),
                                   conv2d(h, cell.ur, Tensor<double>(), 1, 1)));
    Tensor<double> cand = tanh(add(conv2d(m, cell.w, Tensor<double>(), 1, 1),
                                   conv2d(mul(r, h), cell.u, Tensor<double>(), 1, 1)));
    for (long i = 0; i < z.numel(); ++i) {
      CHECK((z[i] > 0.0 && z[i] < 1.0));
      CHECK((r[i] > 0.0 && r[i] < 1.0));
      CHECK((cand[i] > -1.0 && cand[i] < 1.0));
    }
  }
}

TEST_CASE("the printed recurrence shares the update kernel with the reset gate behind a flag") {
  ParameterStore<double> psa;
  Rng rng(10);
  ConvGruCell<double> literal(psa, "cell", 2, rng, /*literal_eq2=*/true);
  CHECK(psa.size() == 5);  // no separate reset hidden kernel
  ParameterStore<double> psb;
  Rng rng2(10);
  ConvGruCell<double> standard(psb, "cell", 2, rng2);
  CHECK(psb.size() == 6);

  Tensor<double> m = rand_tensor(rng, {1, 2, 3, 3});
  Tensor<double> h = rand_tensor(rng, {1, 2, 3, 3});
  // manual evaluation with uz reused in the reset gate
  Tensor<double> z = sigmoid(add(conv2d(m, literal.wz, Tensor<double>(), 1, 1),
                                 conv2d(h, literal.uz, Tensor<double>(), 1, 1)));
  Tensor<double> r = sigmoid(add(conv2d(m, literal.wr, Tensor<double>(), 1, 1),
                                 conv2d(h, literal.uz, Tensor<double>(), 1, 1)));
  Tensor<double> cand = tanh(add(conv2d(m, literal.w, Tensor<double>(), 1, 1),
                                 conv2d(mul(r, h), literal.u, Tensor<double>(), 1, 1)));
  Tensor<double> expect = add(mul(sub(1.0, z), h), mul(z, cand));
  CHECK(max_abs_diff(convgru_step(literal, m, h), expect) == 0.0);
}

TEST_CASE("lte matches a hand-unrolled bidirectional recurrence") {
  ParameterStore<double> ps;
  Rng rng(11);
  LteConfig cfg;
  cfg.window = 5;
  cfg.channels = 2;
  cfg.map_size = 4;
  Lte<double> net(ps, cfg, rng);
  Tensor<double> M = rand_tensor(rng, {2, 5, 2, 4, 4});
  Tensor<double> got = lte_encode(net, M);

  // unroll with direct convolution calls, never touching convgru_step
  NoGradScope<double> inference;
  auto frame = [&](long t) { return reshape(slice(M, 1, t, 1), Shape{2, 2, 4, 4}); };
  auto step = [&](const ConvGruCell<double>& c, const Tensor<double>& m, const Tensor<double>& h) {
    Tensor<double> z = sigmoid(add(conv2d(m, c.wz, Tensor<double>(), 1, 1),
                                   conv2d(h, c.uz, Tensor<double>(), 1, 1)));
    Tensor<double> r = sigmoid(add(conv2d(m, c.wr, Tensor<double>(), 1, 1),
                                   conv2d(h, c.ur, Tensor<double>(), 1, 1)));
    Tensor<double> cand = tanh(add(conv2d(m, c.w, Tensor<double>(), 1, 1),
                                   conv2d(mul(r, h), c.u, Tensor<double>(), 1, 1)));
    return add(mul(sub(1.0, z), h), mul(z, cand));
  };
  Tensor<double> hp(Shape{2, 2, 4, 4}), hf(Shape{2, 2, 4, 4});
  for (long t : {0, 1, 2}) hp = step(net.past, frame(t), hp);
  for (long t : {4, 3, 2}) hf = step(net.future, frame(t), hf);
  Tensor<double> expect = conv2d(concat<double>({hp, hf}, 1), net.proj_w, net.proj_b, 1, 1);
  CHECK(max_abs_diff(got, expect) <= 1e-5);
}

TEST_CASE("lte windows are centered: frames outside the window are ignored") {
  ParameterStore<double> ps;
  Rng rng(12);
  LteConfig cfg;
  cfg.window = 5;
  cfg.channels = 2;
  cfg.map_size = 4;
  Lte<double> net(ps, cfg, rng);
  Tensor<double> M = rand_tensor(rng, {1, 9, 2, 4, 4});
  Tensor<double> out1 = lte_encode(net, M);
  // T=9, L=5: the window covers frames 2..6, so 0,1,7,8 must not matter
  Tensor<double> M2 = Tensor<double>(M.shape(), std::vector<double>(M.values()));
  for (long t : {0L, 1L, 7L, 8L})
    for (long i = 0; i < 2 * 4 * 4; ++i) M2.values()[t * 2 * 4 * 4 + i] = rng.uniform(-9, 9);
  CHECK(max_abs_diff(lte_encode(net, M2), out1) == 0.0);
  // but an in-window frame does matter
  Tensor<double> M3 = Tensor<double>(M.shape(), std::vector<double>(M.values()));
  M3.values()[3 * 2 * 4 * 4] += 0.5;
  CHECK(max_abs_diff(lte_encode(net, M3), out1) > 0.0);

  CHECK_THROWS_WITH_AS(lte_encode(net, rand_tensor(rng, {1, 3, 2, 4, 4})),
                       doctest::Contains("window"), Error);
}

TEST_CASE("single-frame window degenerates to the mid-frame on both branches") {
  ParameterStore<double> ps;
  Rng rng(13);
  LteConfig cfg;
  cfg.window = 1;
  cfg.channels = 2;
  cfg.map_size = 4;
  Lte<double> net(ps, cfg, rng);
  Tensor<double> M = rand_tensor(rng, {1, 5, 2, 4, 4});
  auto pair = lte_hidden_pair(net, M);
  NoGradScope<double> inference;
  Tensor<double> mid = reshape(slice(M, 1, 2, 1), Shape{1, 2, 4, 4});
  Tensor<double> zero(Shape{1, 2, 4, 4});
  CHECK(max_abs_diff(pair.past, convgru_step(net.past, mid, zero)) == 0.0);
  CHECK(max_abs_diff(pair.future, convgru_step(net.future, mid, zero)) == 0.0);
}

TEST_CASE("reversing the window swaps the two branch hidden maps exactly") {
  ParameterStore<double> psa, psb;
  Rng rng(14);
  LteConfig cfg;
  cfg.window = 5;
  cfg.channels = 2;
  cfg.map_size = 4;
  Lte<double> a(psa, cfg, rng);
  Lte<double> b(psb, cfg, rng);
  // b gets a's weights with the branch roles exchanged
  auto copy_cell = [](const ConvGruCell<double>& src, ConvGruCell<double>& dst) {
    dst.wz.values() = src.wz.values();
    dst.uz.values() = src.uz.values();
    dst.wr.values() = src.wr.values();
    dst.ur.values() = src.ur.values();
    dst.w.values() = src.w.values();
    dst.u.values() = src.u.values();
  };
  copy_cell(a.past, b.future);
  copy_cell(a.future, b.past);

  Tensor<double> M = rand_tensor(rng, {2, 5, 2, 4, 4});
  std::vector<long> rev{4, 3, 2, 1, 0};
  Tensor<double> Mrev = index_select(M, 1, rev);
  auto ha = lte_hidden_pair(a, M);
  auto hb = lte_hidden_pair(b, Mrev);
  CHECK(max_abs_diff(ha.past, hb.future) == 0.0);
  CHECK(max_abs_diff(ha.future, hb.past) == 0.0);
}

TEST_CASE("downsampled lte keeps the output shape and grows with deeper deconv stacks") {
  Rng rng(15);
  LteConfig cfg;
  cfg.window = 3;
  cfg.channels = 4;
  cfg.map_size = 8;

  long prev_params = 0;
  for (long s : {8L, 4L, 2L}) {
    ParameterStore<double> ps;
    Rng r2(15);
    LteConfig c = cfg;
    c.downsample_size = s;
    Lte<double> net(ps, c, r2);
    Tensor<double> M = rand_tensor(rng, {1, 3, 4, 8, 8});
    CHECK(lte_encode(net, M).shape() == Shape{1, 4, 8, 8});
    if (prev_params != 0) CHECK(ps.total_elements() > prev_params);
    prev_params = ps.total_elements();
  }

  // S = h adds exactly one stride-1 conv around the plain encoder
  ParameterStore<double> plain_ps, degen_ps;
  Rng r3(15), r4(15);
  Lte<double> plain(plain_ps, cfg, r3);
  LteConfig dcfg = cfg;
  dcfg.downsample_size = 8;
  Lte<double> degen(degen_ps, dcfg, r4);
  CHECK(degen_ps.total_elements() == plain_ps.total_elements() + 4 * 4 * 9 + 4);

  LteConfig bad = cfg;
  bad.downsample_size = 3;
  ParameterStore<double> bad_ps;
  CHECK_THROWS_WITH_AS(Lte<double>(bad_ps, bad, rng), doctest::Contains("divide"), Error);
}

TEST_CASE("uniform average weights reduce to the temporal mean of encoded frames") {
  ParameterStore<double> ps;
  Rng rng(16);
  GteConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.model_dim = 8;
  cfg.mlp_dim = 12;
  cfg.frames = 5;
  Gte<double> net(ps, cfg, rng);
  // avg_w is zero-initialized: softmax of a constant vector is uniform
  Tensor<double> F = rand_tensor(rng, {3, 5, 8});
  Tensor<double> pooled = gte_encode(net, F);
  Tensor<double> manual = mean_axis(gte_frames(net, F), 1);
  CHECK(max_abs_diff(pooled, manual) <= 1e-12);
  CHECK(pooled.shape() == Shape{3, 8});

  CHECK_THROWS_WITH_AS(gte_encode(net, rand_tensor(rng, {3, 7, 8})), doctest::Contains("T=5"),
                       Error);
}

TEST_CASE("identical frames encode like a single-frame sequence") {
  GteConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.model_dim = 8;
  cfg.mlp_dim = 12;
  cfg.frames = 9;
  GteConfig cfg1 = cfg;
  cfg1.frames = 1;

  ParameterStore<double> ps9, ps1;
  Rng rng(17);
  Gte<double> net9(ps9, cfg, rng);
  Gte<double> net1(ps1, cfg1, rng);
  for (auto& p : ps1.all()) {  // share weights, minus the frame-count-sized ones
    if (p->name == "gte.pos_embed" || p->name == "gte.avg_w") continue;
    p->value.values() = ps9.find(p->name)->value.values();
  }
  for (auto* store : {&ps9, &ps1}) {  // position embeddings off in both
    auto& v = store->find("gte.pos_embed")->value.values();
    std::fill(v.begin(), v.end(), 0.0);
  }

  Rng data(18);
  Tensor<double> one = rand_tensor(data, {1, 1, 8});
  std::vector<double> rep;
  for (int t = 0; t < 9; ++t) rep.insert(rep.end(), one.values().begin(), one.values().end());
  Tensor<double> nine(Shape{1, 9, 8}, std::move(rep));
  CHECK(max_abs_diff(gte_encode(net9, nine), gte_encode(net1, one)) <= 1e-5);
}

TEST_CASE("fresh regressor heads emit the rest pose with unit camera scale") {
  ParameterStore<double> ps;
  Rng rng(19);
  GteConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.model_dim = 8;
  cfg.mlp_dim = 12;
  cfg.frames = 3;
  cfg.state_dim = 8;
  Gte<double> net(ps, cfg, rng);
  Tensor<double> f = rand_tensor(rng, {4, 8});
  Tensor<double> v = rand_tensor(rng, {4, 3}, -0.2, 0.2);
  auto est = initial_regress(net, f, v);
  CHECK(est.bank.shape() == Shape{4, kStates, 8});
  CHECK(est.phi.shape() == Shape{4, kPhiDims});
  for (long b = 0; b < 4; ++b) {
    for (long i = 0; i < 82; ++i) CHECK(est.phi[b * kPhiDims + i] == 0.0);
    CHECK(est.phi[b * kPhiDims + 82] == 1.0);  // camera scale bias
    CHECK(est.phi[b * kPhiDims + 83] == 0.0);
    CHECK(est.phi[b * kPhiDims + 84] == 0.0);
  }

  // once heads are nonzero, the crop placement vector must reach the output
  for (auto& w : net.head_w2)
    for (double& x : w.values()) x = rng.uniform(-0.5, 0.5);
  Tensor<double> v2 = rand_tensor(rng, {4, 3}, -0.2, 0.2);
  auto est1 = initial_regress(net, f, v);
  auto est2 = initial_regress(net, f, v2);
  CHECK(max_abs_diff(est1.phi, est2.phi) > 1e-6);

  // the parameter block layout: 24 rotations, then shape, then camera
  CHECK(state_block_offset(0) == 0);
  CHECK(state_block_offset(24) == 72);
  CHECK(state_block_offset(25) == 82);
  CHECK(state_block_size(24) == 10);
  long total = 0;
  for (long n = 0; n < kStates; ++n) total += state_block_size(n);
  CHECK(total == kPhiDims);
}

TEST_CASE("phi slicing helpers cut the documented blocks") {
  Rng rng(20);
  Tensor<double> phi = rand_tensor(rng, {2, kPhiDims});
  Tensor<double> th = phi_theta(phi);
  Tensor<double> be = phi_beta(phi);
  Tensor<double> cm = phi_cam(phi);
  CHECK(th.shape() == Shape{2, 24, 3});
  CHECK(be.shape() == Shape{2, 10});
  CHECK(cm.shape() == Shape{2, 3});
  CHECK(th[0] == phi[0]);
  CHECK(be[0] == phi[72]);
  CHECK(cm[0] == phi[82]);
  CHECK(cm[3] == phi[kPhiDims + 82]);
}

TEST_CASE("encoder gradients agree with finite differences") {
  for (auto& item : encoders_gradcheck_suite()) {
    INFO(item.name, ": max relative error ", item.report.max_rel_err);
    CHECK(item.report.ok(1e-5));
  }
}

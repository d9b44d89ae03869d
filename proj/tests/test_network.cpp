#include <doctest.h>

#include <cmath>
#include <vector>

#include "tar/gradcheck_suites.hpp"
#include "tar/network.hpp"

using namespace tar;

namespace {

// Tiny dimensions that still exercise every module boundary.
NetworkConfig tiny_config() {
  NetworkConfig cfg;
  cfg.backbone = BackboneConfig{3, 32, 12, 4};
  cfg.gte = GteConfig{1, 2, 12, 16, 5, 6};
  cfg.lte = LteConfig{3, 4, 8};
  cfg.rrm.iterations = 2;
  cfg.rrm.radius = 1;
  cfg.rrm.patch_dim = 3;
  cfg.rrm.hidden_dim = 6;
  return cfg;
}

const BodyModel& body_model() {
  static BodyModel m = make_synthetic_model({.vertices = 120}, 57);
  return m;
}

const Dataset& dataset() {
  static Dataset ds = [] {
    MotionConfig mc;
    mc.frames = 7;
    mc.resolution = 32;
    return generate_dataset(body_model(), mc, 1, 77);
  }();
  return ds;
}

WindowBatch<double> batch_of(long T, long stride) {
  return assemble_windows<double>(dataset(), list_windows(dataset(), T, stride));
}

bool bitwise_equal(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) return false;
  for (long i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

void nudge(ParameterStore<double>& ps, const std::string& name) {
  for (auto& p : ps.all())
    if (p->name == name) {
      p->value.values()[0] += 0.05;
      return;
    }
  FAIL("no parameter named ", name);
}

// The update heads start at zero so estimates begin at the rest pose; the
// sensitivity checks below need them live.
void randomize_heads(ParameterStore<double>& ps, uint64_t seed) {
  Rng rng(seed);
  for (auto& p : ps.all())
    if (p->name.rfind("rrm.head", 0) == 0 || p->name.rfind("gte.head", 0) == 0)
      for (double& v : p->value.values()) v = rng.uniform(-0.3, 0.3);
}

}  // namespace

TEST_CASE("default configuration pins the published constants") {
  NetworkConfig cfg;
  CHECK(cfg.gte.frames == 9);
  CHECK(cfg.gte.layers == 4);
  CHECK(cfg.gte.heads == 4);
  CHECK(cfg.gte.model_dim == 128);
  CHECK(cfg.gte.state_dim == 64);
  CHECK(cfg.backbone.global_dim == 128);
  CHECK(cfg.backbone.local_dim == 32);
  CHECK(cfg.backbone.local_size() == 16);
  CHECK(cfg.lte.window == 5);
  CHECK(cfg.lte.channels == 32);
  CHECK(cfg.lte.map_size == 16);
  CHECK(cfg.rrm.iterations == 5);
  CHECK(cfg.rrm.radius == 3);
  CHECK(cfg.rrm.grid_points() == 49);
  CHECK(cfg.rrm.patch_dim == 8);
  CHECK(cfg.rrm.hidden_dim == 64);
  CHECK(cfg.rrm.signal_width() == 296);
  CHECK(kStates == 26);
  CHECK(kMarkers == 26);
  CHECK(kPhiDims == 85);
  validate_network_config(cfg);

  LossConfig loss;
  CHECK(loss.lambda_2d == 5.0);
  CHECK(loss.lambda_3d == 5.0);
  CHECK(loss.lambda_smpl == 1.0);
  CHECK(loss.gamma == 0.85);
  CHECK(loss.stages == 5);

  TrainConfig train;
  CHECK(train.batch_size == 8);
  CHECK(train.learning_rate == 1e-4);
}

TEST_CASE("forward pass shapes and determinism") {
  NetworkConfig cfg = tiny_config();
  ParameterStore<double> ps;
  Rng rng(611);
  TarNetwork<double> net(ps, cfg, rng);
  BodyTensors<double> body = to_tensors<double>(body_model());
  WindowBatch<double> b = batch_of(cfg.gte.frames, 1);
  long B = b.images.dim(0);
  CHECK(B == 7);  // every frame centers one edge-clamped window

  NetworkOutput<double> out = network_forward(net, body, b.images, b.ctx);
  CHECK(out.phi_init.shape() == Shape{B, kPhiDims});
  CHECK(out.local_map.shape() == Shape{B, 4, 8, 8});
  REQUIRE(out.estimates.size() == 2);
  for (auto& e : out.estimates) CHECK(e.shape() == Shape{B, kPhiDims});

  NetworkOutput<double> again = network_forward(net, body, b.images, b.ctx);
  CHECK(bitwise_equal(out.phi_init, again.phi_init));
  CHECK(bitwise_equal(out.local_map, again.local_map));
  CHECK(bitwise_equal(out.estimates.back(), again.estimates.back()));
}

TEST_CASE("forward pass rejects mismatched inputs") {
  NetworkConfig cfg = tiny_config();
  ParameterStore<double> ps;
  Rng rng(612);
  TarNetwork<double> net(ps, cfg, rng);
  BodyTensors<double> body = to_tensors<double>(body_model());
  WindowBatch<double> b = batch_of(cfg.gte.frames, 1);

  Tensor<double> short_window = slice(b.images, 1, 0, 4);
  CHECK_THROWS_WITH_AS(network_forward(net, body, short_window, b.ctx),
                       doctest::Contains("expected BxTxCxHxW images"), Error);

  CropContext<double> bad = b.ctx;
  bad.center = slice(b.ctx.center, 0, 0, 1);
  CHECK_THROWS_WITH_AS(network_forward(net, body, b.images, bad),
                       doctest::Contains("crop context does not match"), Error);
}

TEST_CASE("configuration validation names the mismatched seam") {
  NetworkConfig cfg = tiny_config();
  cfg.lte.map_size = 16;
  CHECK_THROWS_WITH_AS(validate_network_config(cfg), doctest::Contains("backbone local maps"),
                       Error);
  cfg = tiny_config();
  cfg.lte.channels = 5;
  CHECK_THROWS_WITH_AS(validate_network_config(cfg),
                       doctest::Contains("backbone local channels"), Error);
  cfg = tiny_config();
  cfg.gte.model_dim = 14;
  CHECK_THROWS_WITH_AS(validate_network_config(cfg), doctest::Contains("global width"), Error);
  cfg = tiny_config();
  cfg.rrm.hidden_dim = 8;
  CHECK_THROWS_WITH_AS(validate_network_config(cfg), doctest::Contains("hidden width"), Error);
  cfg = tiny_config();
  cfg.lte.window = 7;  // odd but longer than the 5-frame input
  CHECK_THROWS_WITH_AS(validate_network_config(cfg),
                       doctest::Contains("exceeds the 5-frame input"), Error);
}

TEST_CASE("ablation modes share one checkpoint layout") {
  for (AblationMode mode : {AblationMode::only_gte, AblationMode::only_lte}) {
    NetworkConfig full_cfg = tiny_config();
    NetworkConfig cut_cfg = tiny_config();
    cut_cfg.mode = mode;
    ParameterStore<double> ps_full, ps_cut;
    Rng r1(613), r2(613);
    TarNetwork<double> full(ps_full, full_cfg, r1);
    TarNetwork<double> cut(ps_cut, cut_cfg, r2);
    REQUIRE(ps_full.all().size() == ps_cut.all().size());
    for (size_t i = 0; i < ps_full.all().size(); ++i) {
      CHECK(ps_full.all()[i]->name == ps_cut.all()[i]->name);
      CHECK(ps_full.all()[i]->value.shape() == ps_cut.all()[i]->value.shape());
    }
  }
  CHECK(std::string(ablation_name(AblationMode::full)) == "full");
  CHECK(parse_ablation("only-gte") == AblationMode::only_gte);
  CHECK(parse_ablation("only-lte") == AblationMode::only_lte);
  CHECK_THROWS_WITH_AS(parse_ablation("none"), doctest::Contains("unknown mode"), Error);
}

TEST_CASE("dropping the local encoder hands the refiner the mid frame map") {
  NetworkConfig cfg = tiny_config();
  cfg.mode = AblationMode::only_gte;
  ParameterStore<double> ps;
  Rng rng(614);
  TarNetwork<double> net(ps, cfg, rng);
  randomize_heads(ps, 6140);
  BodyTensors<double> body = to_tensors<double>(body_model());
  WindowBatch<double> b = batch_of(cfg.gte.frames, 2);
  long B = b.images.dim(0), T = cfg.gte.frames, mid = (T - 1) / 2;

  NetworkOutput<double> out = network_forward(net, body, b.images, b.ctx);

  // the refiner must see exactly the mid-frame backbone features
  Tensor<double> mid_frames =
      reshape(slice(b.images, 1, mid, 1), Shape{B, 3, 32, 32});
  FeatureSequence<double> ref = backbone_forward(net.backbone, mid_frames);
  CHECK(bitwise_equal(out.local_map, ref.local));

  // and the local encoder weights must be inert in this mode
  NetworkOutput<double> before = out;
  nudge(ps, "lte.proj.w");
  NetworkOutput<double> after = network_forward(net, body, b.images, b.ctx);
  CHECK(bitwise_equal(before.local_map, after.local_map));
  CHECK(bitwise_equal(before.estimates.back(), after.estimates.back()));
}

TEST_CASE("local encoder weights matter in the full mode") {
  NetworkConfig cfg = tiny_config();
  ParameterStore<double> ps;
  Rng rng(614);  // same weights as the only-gte case above
  TarNetwork<double> net(ps, cfg, rng);
  randomize_heads(ps, 6140);
  BodyTensors<double> body = to_tensors<double>(body_model());
  WindowBatch<double> b = batch_of(cfg.gte.frames, 2);

  NetworkOutput<double> before = network_forward(net, body, b.images, b.ctx);
  nudge(ps, "lte.proj.w");
  NetworkOutput<double> after = network_forward(net, body, b.images, b.ctx);
  CHECK_FALSE(bitwise_equal(before.local_map, after.local_map));
}

TEST_CASE("dropping the global encoder regresses from the mid frame alone") {
  NetworkConfig cfg = tiny_config();
  cfg.mode = AblationMode::only_lte;
  ParameterStore<double> ps;
  Rng rng(615);
  TarNetwork<double> net(ps, cfg, rng);
  randomize_heads(ps, 6150);
  BodyTensors<double> body = to_tensors<double>(body_model());
  WindowBatch<double> b = batch_of(cfg.gte.frames, 2);
  long B = b.images.dim(0), T = cfg.gte.frames, mid = (T - 1) / 2;

  NetworkOutput<double> out = network_forward(net, body, b.images, b.ctx);

  // reproduce the initial estimate from the mid-frame global feature alone
  Tensor<double> mid_frames =
      reshape(slice(b.images, 1, mid, 1), Shape{B, 3, 32, 32});
  FeatureSequence<double> ref = backbone_forward(net.backbone, mid_frames);
  InitialEstimate<double> init =
      initial_regress(net.gte, ref.global, crop_placement_feature(b.ctx));
  CHECK(bitwise_equal(out.phi_init, init.phi));

  // transformer weights are inert; the regressor head still runs
  NetworkOutput<double> before = out;
  nudge(ps, "gte.layer0.attn.wq");
  NetworkOutput<double> after = network_forward(net, body, b.images, b.ctx);
  CHECK(bitwise_equal(before.phi_init, after.phi_init));
  CHECK(bitwise_equal(before.estimates.back(), after.estimates.back()));
}

TEST_CASE("transformer weights matter in the full mode") {
  NetworkConfig cfg = tiny_config();
  ParameterStore<double> ps;
  Rng rng(615);  // same weights as the only-lte case above
  TarNetwork<double> net(ps, cfg, rng);
  randomize_heads(ps, 6150);
  BodyTensors<double> body = to_tensors<double>(body_model());
  WindowBatch<double> b = batch_of(cfg.gte.frames, 2);

  NetworkOutput<double> before = network_forward(net, body, b.images, b.ctx);
  nudge(ps, "gte.layer0.attn.wq");
  NetworkOutput<double> after = network_forward(net, body, b.images, b.ctx);
  CHECK_FALSE(bitwise_equal(before.phi_init, after.phi_init));
}

TEST_CASE("finite differences across the whole pipeline") {
  for (auto& item : end2end_gradcheck_suite()) {
    INFO(item.name, " max_rel_err=", item.report.max_rel_err);
    CHECK(item.report.ok(1e-4));
  }
}

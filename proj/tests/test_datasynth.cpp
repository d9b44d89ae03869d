#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <fstream>

#include "tar/datasynth.hpp"

using namespace tar;

namespace {

const BodyModel& gen_body() {
  static BodyModel m = make_synthetic_model({.vertices = 144}, 41);
  return m;
}

MotionConfig short_config() {
  MotionConfig c;
  c.frames = 12;
  c.resolution = 32;
  return c;
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("same seed reproduces a sequence bit for bit, different seeds do not") {
  MotionSequence a = generate_motion(gen_body(), short_config(), 700);
  MotionSequence b = generate_motion(gen_body(), short_config(), 700);
  CHECK(std::memcmp(a.theta.data(), b.theta.data(), sizeof(double) * a.theta.size()) == 0);
  CHECK(std::memcmp(a.cam.data(), b.cam.data(), sizeof(double) * a.cam.size()) == 0);
  CHECK(std::memcmp(a.bbox.data(), b.bbox.data(), sizeof(double) * a.bbox.size()) == 0);
  CHECK(std::memcmp(a.kp2d.data(), b.kp2d.data(), sizeof(double) * a.kp2d.size()) == 0);
  CHECK(std::memcmp(a.images.data(), b.images.data(), sizeof(float) * a.images.size()) == 0);

  MotionSequence c = generate_motion(gen_body(), short_config(), 701);
  CHECK((a.theta - c.theta).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("joint-angle trajectories stay inside the configured smoothness bound") {
  MotionConfig cfg = short_config();
  cfg.frames = 80;
  MotionSequence s = generate_motion(gen_body(), cfg, 11);
  double bound = cfg.smoothness_bound();
  CHECK(bound > 0.0);
  double worst = 0.0, range = 0.0;
  for (long c = 0; c < 72; ++c) {
    for (long t = 1; t + 1 < s.frames; ++t)
      worst = std::max(worst,
                       std::abs(s.theta(t + 1, c) - 2.0 * s.theta(t, c) + s.theta(t - 1, c)));
    range = std::max(range, s.theta.col(c).maxCoeff() - s.theta.col(c).minCoeff());
  }
  CHECK(worst <= bound + 1e-12);
  CHECK(range > 0.05);  // the clip actually moves
}

TEST_CASE("shape stays constant and within the drawn range") {
  MotionConfig cfg = short_config();
  cfg.beta_range = 1.5;
  MotionSequence s = generate_motion(gen_body(), cfg, 3);
  CHECK(s.beta.size() == kShapeDims);
  CHECK(s.beta.cwiseAbs().maxCoeff() <= 1.5);
  CHECK(s.beta.cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("stored 2D keypoints are the camera model's projection of stored 3D markers") {
  MotionSequence s = generate_motion(gen_body(), short_config(), 19);
  long T = s.frames;

  CropContext<double> ctx;
  ctx.center = Tensor<double>(Shape{T, 2});
  ctx.size = Tensor<double>(Shape{T, 1});
  ctx.focal = s.focal;
  ctx.image_w = s.image_w;
  ctx.image_h = s.image_h;
  Tensor<double> cam(Shape{T, 3});
  Tensor<double> markers(Shape{T, kMarkers, 3});
  for (long t = 0; t < T; ++t) {
    ctx.center.values()[t * 2 + 0] = s.bbox(t, 0);
    ctx.center.values()[t * 2 + 1] = s.bbox(t, 1);
    ctx.size.values()[t] = s.bbox(t, 2);
    for (long c = 0; c < 3; ++c) cam.values()[t * 3 + c] = s.cam(t, c);
    for (long k = 0; k < kMarkers * 3; ++k) markers.values()[t * kMarkers * 3 + k] = s.markers(t, k);
  }

  Tensor<double> trans = recover_translation(cam, ctx);
  Tensor<double> body = sub(markers, reshape(trans, Shape{T, 1, 3}));
  Tensor<double> bb = to_bbox_space(project_full(body, trans, ctx), ctx);
  double worst = 0.0;
  for (long t = 0; t < T; ++t)
    for (long k = 0; k < kMarkers * 2; ++k)
      worst = std::max(worst, std::abs(bb.values()[t * kMarkers * 2 + k] - s.kp2d(t, k)));
  CHECK(worst <= 1e-5);
}

TEST_CASE("zero-amplitude config freezes the body: ground-truth acceleration is exactly zero") {
  MotionConfig cfg = short_config();
  cfg.joint_amplitude = 0.0;
  cfg.root_amplitude = 0.0;
  cfg.depth_amplitude = 0.0;
  cfg.lateral_amplitude = 0.0;
  cfg.bbox_jitter = 0.0;
  MotionSequence s = generate_motion(gen_body(), cfg, 23);
  for (long t = 1; t + 1 < s.frames; ++t)
    for (long c = 0; c < kJoints * 3; ++c)
      CHECK(s.joints(t + 1, c) - 2.0 * s.joints(t, c) + s.joints(t - 1, c) == 0.0);
  // constant params give identical renders too
  CHECK(std::memcmp(s.frame_image(0), s.frame_image(s.frames - 1),
                    sizeof(float) * 3 * s.resolution * s.resolution) == 0);
}

TEST_CASE("config bounds that violate body invariants are rejected") {
  MotionConfig cfg = short_config();
  cfg.beta_range = 6.0;
  CHECK_THROWS_WITH_AS(generate_motion(gen_body(), cfg, 1), doctest::Contains("beta_range"),
                       Error);
  cfg = short_config();
  cfg.frames = 0;
  CHECK_THROWS_AS(generate_motion(gen_body(), cfg, 1), Error);
  cfg = short_config();
  cfg.max_frequency = 0.7;
  CHECK_THROWS_AS(generate_motion(gen_body(), cfg, 1), Error);
  cfg = short_config();
  cfg.bbox_margin = 0.8;
  CHECK_THROWS_AS(generate_motion(gen_body(), cfg, 1), Error);
  cfg = short_config();
  cfg.depth_mean = 2.0;
  CHECK_THROWS_AS(generate_motion(gen_body(), cfg, 1), Error);
}

TEST_CASE("rasterize is a pure function of its inputs") {
  MotionSequence s = generate_motion(gen_body(), short_config(), 31);
  Eigen::MatrixXd theta(kJoints, 3);
  for (int j = 0; j < kJoints; ++j)
    for (long c = 0; c < 3; ++c) theta(j, c) = s.theta(2, j * 3 + c);
  Eigen::Vector3d cam = s.cam.row(2).transpose();
  Eigen::Vector3d box = s.bbox.row(2).transpose();
  auto a = rasterize(gen_body(), theta, s.beta, cam, box, 32);
  auto b = rasterize(gen_body(), theta, s.beta, cam, box, 32);
  CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0);

  // generate_motion stored exactly this render
  CHECK(std::memcmp(a.data(), s.frame_image(2), sizeof(float) * a.size()) == 0);

  theta(5, 1) += 1e-3;  // any input change reshuffles the background too
  auto c2 = rasterize(gen_body(), theta, s.beta, cam, box, 32);
  CHECK(std::memcmp(a.data(), c2.data(), sizeof(float) * a.size()) != 0);
}

TEST_CASE("projected joints are brighter than any background pixel") {
  MotionConfig cfg = short_config();
  MotionSequence s = generate_motion(gen_body(), cfg, 47);
  long R = s.resolution;
  const float* img = s.frame_image(4);
  Eigen::Vector3d cam = s.cam.row(4).transpose();
  Eigen::Vector3d t =
      full_translation_eigen(cam, s.bbox(4, 0), s.bbox(4, 1), s.bbox(4, 2), s.focal, s.image_w,
                             s.image_h);
  long checked = 0;
  for (int j = 0; j < kJoints; ++j) {
    Eigen::Vector3d q = s.joints.row(4).segment<3>(j * 3).transpose();
    double u = s.focal * q.x() / q.z() + s.image_w / 2.0;
    double v = s.focal * q.y() / q.z() + s.image_h / 2.0;
    double x = ((u - s.bbox(4, 0)) / s.bbox(4, 2) + 0.5) * R - 0.5;
    double y = ((v - s.bbox(4, 1)) / s.bbox(4, 2) + 0.5) * R - 0.5;
    long ix = std::lround(x), iy = std::lround(y);
    if (ix < 1 || ix >= R - 1 || iy < 1 || iy >= R - 1) continue;
    float peak = 0.0f;
    for (long c = 0; c < 3; ++c) peak = std::max(peak, img[(c * R + iy) * R + ix]);
    CHECK(peak > cfg.background_level);
    ++checked;
  }
  CHECK(checked >= kJoints / 2);  // most of the skeleton lands inside the crop
  (void)t;
}

TEST_CASE("a crop that misses every marker renders pure background") {
  MotionSequence s = generate_motion(gen_body(), short_config(), 53);
  Eigen::MatrixXd theta(kJoints, 3);
  for (int j = 0; j < kJoints; ++j)
    for (long c = 0; c < 3; ++c) theta(j, c) = s.theta(0, j * 3 + c);
  Eigen::Vector3d cam = s.cam.row(0).transpose();
  Eigen::Vector3d box = s.bbox.row(0).transpose();
  // shifting the regressed tx moves the body in world space while the crop
  // stays put (sliding the crop instead would drag the body with it, since
  // the recovered translation is defined relative to the crop)
  cam[1] += 50.0;
  auto img = rasterize(gen_body(), theta, s.beta, cam, box, 32, 0.25);
  float mx = 0.0f;
  for (float px : img) mx = std::max(mx, px);
  CHECK(mx <= 0.25f);
}

TEST_CASE("windows cover every frame as a mid-frame with edge repetition") {
  auto w = windows(9, 9, 1);
  REQUIRE(w.size() == 9);
  CHECK(w[0].mid == 0);
  CHECK(w[0].frames == std::vector<long>{0, 0, 0, 0, 0, 1, 2, 3, 4});
  CHECK(w[4].frames == std::vector<long>{0, 1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(w[8].frames == std::vector<long>{4, 5, 6, 7, 8, 8, 8, 8, 8});
  for (size_t i = 0; i < w.size(); ++i) CHECK(w[i].frames[4] == w[i].mid);

  auto nw = windows(20, 5, 5);  // stride = T, mid-frames 0,5,10,15
  REQUIRE(nw.size() == 4);
  for (size_t i = 0; i + 1 < nw.size(); ++i) CHECK(nw[i].frames.back() <= nw[i + 1].frames.front() + 2);

  auto clipped = windows(3, 9, 1);  // shorter clip than window still works via clamping
  CHECK(clipped.size() == 3);
  for (long f : clipped[1].frames) CHECK((f >= 0 && f <= 2));

  CHECK_THROWS_WITH_AS(windows(10, 4, 1), doctest::Contains("odd"), Error);
  CHECK_THROWS_AS(windows(10, 5, 0), Error);
}

TEST_CASE("dataset files round trip and are byte-identical across regenerations") {
  MotionConfig cfg = short_config();
  cfg.frames = 8;
  Dataset d1 = generate_dataset(gen_body(), cfg, 2, 99);
  Dataset d2 = generate_dataset(gen_body(), cfg, 2, 99);
  std::string p1 = "ds_a.tarbin", p2 = "ds_b.tarbin";
  save_dataset(p1, d1, gen_body());
  save_dataset(p2, d2, gen_body());
  CHECK(slurp(p1) == slurp(p2));

  LoadedDataset back = load_dataset(p1);
  REQUIRE(back.data.sequences.size() == 2);
  CHECK(back.model.vertex_count == gen_body().vertex_count);
  CHECK(back.model.marker_indices == gen_body().marker_indices);
  const MotionSequence& s0 = d1.sequences[0];
  const MotionSequence& r0 = back.data.sequences[0];
  CHECK(r0.frames == s0.frames);
  CHECK((r0.theta - s0.theta).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((r0.cam - s0.cam).cwiseAbs().maxCoeff() < 1e-5);
  CHECK((r0.kp2d - s0.kp2d).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(r0.images == s0.images);  // images are f32 on both sides

  // per-sequence seeds differ
  CHECK((d1.sequences[0].theta - d1.sequences[1].theta).cwiseAbs().maxCoeff() > 1e-3);

  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("self-consistency survives the 32-bit round trip") {
  MotionConfig cfg = short_config();
  cfg.frames = 6;
  Dataset ds = generate_dataset(gen_body(), cfg, 1, 7);
  std::string path = "ds_consistency.tarbin";
  save_dataset(path, ds, gen_body());
  LoadedDataset back = load_dataset(path);
  std::remove(path.c_str());
  const MotionSequence& s = back.data.sequences[0];

  long T = s.frames;
  CropContext<double> ctx;
  ctx.center = Tensor<double>(Shape{T, 2});
  ctx.size = Tensor<double>(Shape{T, 1});
  Tensor<double> cam(Shape{T, 3});
  Tensor<double> markers(Shape{T, kMarkers, 3});
  for (long t = 0; t < T; ++t) {
    ctx.center.values()[t * 2 + 0] = s.bbox(t, 0);
    ctx.center.values()[t * 2 + 1] = s.bbox(t, 1);
    ctx.size.values()[t] = s.bbox(t, 2);
    for (long c = 0; c < 3; ++c) cam.values()[t * 3 + c] = s.cam(t, c);
    for (long k = 0; k < kMarkers * 3; ++k) markers.values()[t * kMarkers * 3 + k] = s.markers(t, k);
  }
  Tensor<double> trans = recover_translation(cam, ctx);
  Tensor<double> body = sub(markers, reshape(trans, Shape{T, 1, 3}));
  Tensor<double> bb = to_bbox_space(project_full(body, trans, ctx), ctx);
  double worst = 0.0;
  for (long t = 0; t < T; ++t)
    for (long k = 0; k < kMarkers * 2; ++k)
      worst = std::max(worst, std::abs(bb.values()[t * kMarkers * 2 + k] - s.kp2d(t, k)));
  CHECK(worst <= 1e-5);
}

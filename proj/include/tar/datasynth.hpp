#pragma once

#include <cmath>
#include <cstring>
#include <numbers>
#include <vector>

#include "tar/body_model.hpp"
#include "tar/camera.hpp"
#include "tar/container.hpp"

// Procedural motion generator. Each sequence animates one body with
// band-limited sinusoidal joint trajectories, floats it through camera space
// on an equally smooth translation path, and renders a part-colored skeleton
// into a small crop per frame. Ground truth (params, camera, 3D, 2D) is
// derived with the same formulas the model is trained against, so the labels
// are self-consistent by construction rather than by calibration.

namespace tar {

struct MotionConfig {
  long frames = 60;
  long resolution = 64;
  double beta_range = 2.0;          // shape coefficients drawn U[-range, range]
  double joint_amplitude = 0.5;     // per-angle sinusoid budget, radians
  double root_amplitude = 0.7;      // root orientation channels get more room
  double max_frequency = 0.15;      // cycles per frame, keeps motion band-limited
  double depth_mean = 5.0;          // camera-frame z of the root path
  double depth_amplitude = 0.8;     // z wobble; keeps the body between ~4m and ~6m
  double lateral_amplitude = 0.35;  // x/y wobble of the root path
  double bbox_margin = 1.15;        // crop size relative to the marker extent
  double bbox_jitter = 0.05;        // relative crop center/size jitter
  double background_level = 0.25;   // noise ceiling in rendered frames
  double focal = 1000.0;
  double image_w = 1000.0;
  double image_h = 1000.0;

  // Worst-case |x(t+1) - 2x(t) + x(t-1)| of any joint-angle channel: a unit
  // sinusoid at frequency f has second difference 4 sin^2(pi f), and a
  // channel's amplitudes sum to at most the configured budget.
  double smoothness_bound() const {
    double s = std::sin(std::numbers::pi * max_frequency);
    return std::max(joint_amplitude, root_amplitude) * 4.0 * s * s;
  }
};

inline void validate_motion_config(const MotionConfig& c) {
  if (c.frames < 1) fail("generate_motion", "frame count must be positive, got " + std::to_string(c.frames));
  if (c.resolution < 8)
    fail("generate_motion", "resolution " + std::to_string(c.resolution) + " is too small to render into");
  if (!(c.beta_range >= 0.0) || c.beta_range > 5.0)
    fail("generate_motion",
         "beta_range " + std::to_string(c.beta_range) + " violates the shape bound |beta| <= 5");
  if (!(c.joint_amplitude >= 0.0) || !(c.root_amplitude >= 0.0))
    fail("generate_motion", "joint amplitudes must be non-negative");
  if (!(c.max_frequency >= 0.0) || c.max_frequency > 0.5)
    fail("generate_motion",
         "max_frequency " + std::to_string(c.max_frequency) + " must lie in [0, 0.5] cycles/frame");
  if (c.depth_mean - c.depth_amplitude < 2.0)
    fail("generate_motion", "depth path may dip below 2m; raise depth_mean or lower depth_amplitude");
  if (!(c.lateral_amplitude >= 0.0) || !(c.bbox_jitter >= 0.0))
    fail("generate_motion", "path and crop jitter amplitudes must be non-negative");
  if (c.bbox_margin < 1.0)
    fail("generate_motion", "bbox_margin " + std::to_string(c.bbox_margin) + " would crop the body");
  if (c.background_level < 0.0 || c.background_level > 0.9)
    fail("generate_motion", "background_level must lie in [0, 0.9]");
  if (c.focal <= 0.0 || c.image_w <= 0.0 || c.image_h <= 0.0)
    fail("generate_motion", "camera intrinsics must be positive");
}

// One generated clip. Angles, camera and geometry are kept in double here;
// the on-disk format stores everything as 32-bit floats.
struct MotionSequence {
  long frames = 0;
  long resolution = 0;
  double focal = 1000.0, image_w = 1000.0, image_h = 1000.0;
  Eigen::MatrixXd theta;     // T x 72, axis-angle per joint
  Eigen::VectorXd beta;      // 10, constant over the clip
  Eigen::MatrixXd cam;       // T x 3, (s, tx, ty) relative to the crop
  Eigen::MatrixXd bbox;      // T x 3, (cx, cy, size) in full-image pixels
  Eigen::MatrixXd joints;    // T x 72, camera frame (translation applied)
  Eigen::MatrixXd markers;   // T x 78, camera frame
  Eigen::MatrixXd kp2d;      // T x 52, bbox space
  std::vector<float> images; // T * 3 * resolution^2, values in [0, 1]

  const float* frame_image(long t) const { return images.data() + t * 3 * resolution * resolution; }
};

namespace detail {

// A band-limited random channel: constant offset plus up to four sinusoids
// whose amplitudes sum to at most `bound`. All draws happen at construction
// so evaluation order cannot perturb the stream.
struct SmoothChannel {
  double offset = 0.0;
  std::vector<double> amp, freq, phase;

  static SmoothChannel draw(Rng& rng, double bound, double max_freq) {
    SmoothChannel ch;
    ch.offset = rng.uniform(-0.5, 0.5) * bound;
    long n = 1 + static_cast<long>(rng.index(4));
    double total = rng.uniform(0.2, 1.0) * bound;
    std::vector<double> raw(n);
    double raw_sum = 0.0;
    for (auto& r : raw) {
      r = rng.uniform(0.2, 1.0);
      raw_sum += r;
    }
    for (long i = 0; i < n; ++i) {
      ch.amp.push_back(total * raw[i] / raw_sum);
      ch.freq.push_back(rng.uniform(0.0, max_freq));
      ch.phase.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
    }
    return ch;
  }

  double operator()(double t) const {
    double x = offset;
    for (size_t i = 0; i < amp.size(); ++i)
      x += amp[i] * std::sin(2.0 * std::numbers::pi * freq[i] * t + phase[i]);
    return x;
  }
};

inline uint64_t fnv1a64(const void* data, size_t bytes, uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t hash_doubles(const double* v, long n, uint64_t h) {
  for (long i = 0; i < n; ++i) {
    double d = v[i] + 0.0;  // fold -0.0 into +0.0 so the hash keys on value, not bits
    h = fnv1a64(&d, sizeof(double), h);
  }
  return h;
}

inline double point_segment_dist(double px, double py, double ax, double ay, double bx, double by) {
  double dx = bx - ax, dy = by - ay;
  double len2 = dx * dx + dy * dy;
  double s = len2 > 0.0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  s = std::clamp(s, 0.0, 1.0);
  double qx = ax + s * dx - px, qy = ay + s * dy - py;
  return std::sqrt(qx * qx + qy * qy);
}

// Distinct bright color per body part. Hue walks the golden-ratio spiral; the
// dominant channel is always exactly 1 so drawn pixels beat any background.
inline void part_color(long part, float rgb[3]) {
  double h = std::fmod(0.61803398875 * static_cast<double>(part) + 0.13, 1.0) * 6.0;
  double sat = 0.85;
  long k = static_cast<long>(h);
  double f = h - static_cast<double>(k);
  double p = 1.0 - sat, q = 1.0 - sat * f, t = 1.0 - sat * (1.0 - f);
  double r, g, b;
  switch (k % 6) {
    case 0: r = 1; g = t; b = p; break;
    case 1: r = q; g = 1; b = p; break;
    case 2: r = p; g = 1; b = t; break;
    case 3: r = p; g = q; b = 1; break;
    case 4: r = t; g = p; b = 1; break;
    default: r = 1; g = p; b = q; break;
  }
  rgb[0] = static_cast<float>(r);
  rgb[1] = static_cast<float>(g);
  rgb[2] = static_cast<float>(b);
}

}  // namespace detail

// Plain-double analogue of recover_translation for ground-truth plumbing.
inline Eigen::Vector3d full_translation_eigen(const Eigen::Vector3d& cam, double cx, double cy,
                                              double size, double focal, double image_w,
                                              double image_h) {
  double denom = cam[0] * size;
  double tz = 2.0 * focal / denom;
  double tx = cam[1] + 2.0 * (cx - image_w / 2.0) / denom;
  double ty = cam[2] + 2.0 * (cy - image_h / 2.0) / denom;
  return {tx, ty, tz};
}

// Renders one frame: projected skeleton bones as distance-falloff strokes in
// per-part colors over deterministic uniform noise. The noise is keyed off
// the inputs, so identical params always produce the identical image, and a
// body whose markers all miss the crop leaves the background untouched.
inline std::vector<float> rasterize(const BodyModel& model, const Eigen::MatrixXd& theta,
                                    const Eigen::VectorXd& beta, const Eigen::Vector3d& cam,
                                    const Eigen::Vector3d& box, long resolution,
                                    double background_level = 0.25, double focal = 1000.0,
                                    double image_w = 1000.0, double image_h = 1000.0) {
  if (theta.rows() != kJoints || theta.cols() != 3)
    fail("rasterize", "expected 24x3 pose, got " + std::to_string(theta.rows()) + "x" +
                          std::to_string(theta.cols()));
  long R = resolution;
  std::vector<float> img(static_cast<size_t>(3 * R * R));

  uint64_t h = detail::hash_doubles(theta.data(), theta.size(), 1469598103934665603ull);
  h = detail::hash_doubles(beta.data(), beta.size(), h);
  h = detail::hash_doubles(cam.data(), 3, h);
  h = detail::hash_doubles(box.data(), 3, h);
  double extra[5] = {static_cast<double>(R), background_level, focal, image_w, image_h};
  h = detail::hash_doubles(extra, 5, h);
  Rng noise(h);
  for (auto& px : img) px = static_cast<float>(noise.uniform(0.0, background_level));

  BodyPoseEigen pose;
  pose.theta = theta;
  pose.beta = beta;
  BodyEvalEigen eval = posed_eigen(model, pose);
  Eigen::Vector3d t = full_translation_eigen(cam, box[0], box[1], box[2], focal, image_w, image_h);

  // full-image pixel -> crop pixel, pixel centers at integer coordinates
  auto to_crop = [&](const Eigen::Vector3d& p, double& x, double& y) -> bool {
    Eigen::Vector3d q = p + t;
    if (q.z() <= 1e-3) return false;
    double u = focal * q.x() / q.z() + image_w / 2.0;
    double v = focal * q.y() / q.z() + image_h / 2.0;
    x = ((u - box[0]) / box[2] + 0.5) * static_cast<double>(R) - 0.5;
    y = ((v - box[1]) / box[2] + 0.5) * static_cast<double>(R) - 0.5;
    return true;
  };

  bool any_visible = false;
  for (int k = 0; k < kMarkers && !any_visible; ++k) {
    double x, y;
    if (!to_crop(eval.markers.row(k), x, y)) continue;
    any_visible = x >= -0.5 && x <= R - 0.5 && y >= -0.5 && y <= R - 0.5;
  }
  if (!any_visible) return img;

  const auto& parents = model.parents;
  auto stroke = [&](double ax, double ay, double bx, double by, double width, long part) {
    float rgb[3];
    detail::part_color(part, rgb);
    long x0 = static_cast<long>(std::floor(std::min(ax, bx) - width)) - 1;
    long x1 = static_cast<long>(std::ceil(std::max(ax, bx) + width)) + 1;
    long y0 = static_cast<long>(std::floor(std::min(ay, by) - width)) - 1;
    long y1 = static_cast<long>(std::ceil(std::max(ay, by) + width)) + 1;
    x0 = std::max(x0, 0L); y0 = std::max(y0, 0L);
    x1 = std::min(x1, R - 1); y1 = std::min(y1, R - 1);
    for (long y = y0; y <= y1; ++y)
      for (long x = x0; x <= x1; ++x) {
        double d = detail::point_segment_dist(static_cast<double>(x), static_cast<double>(y), ax,
                                              ay, bx, by);
        double cov = 1.0 - d / width;
        if (cov <= 0.0) continue;
        for (long c = 0; c < 3; ++c) {
          float& px = img[static_cast<size_t>((c * R + y) * R + x)];
          px = std::max(px, static_cast<float>(cov) * rgb[c]);
        }
      }
  };

  for (int j = 0; j < kJoints; ++j) {
    double jx, jy;
    if (!to_crop(eval.joints.row(j), jx, jy)) continue;
    if (parents[j] >= 0) {
      double px, py;
      if (to_crop(eval.joints.row(parents[j]), px, py)) stroke(jx, jy, px, py, 1.5, j);
    }
    stroke(jx, jy, jx, jy, 2.2, j);  // joint dot on top of the bone
  }
  return img;
}

// Generates a full clip: draws shape and every trajectory channel up front,
// then evaluates the body per frame, fits a jittered crop around the
// projected markers, and back-derives the crop camera so the stored 2D
// keypoints are exactly the camera model's projection of the stored markers.
inline MotionSequence generate_motion(const BodyModel& model, const MotionConfig& cfg,
                                      uint64_t seed) {
  validate_motion_config(cfg);
  Rng rng(mix_seed(seed, 0x6d6f74696f6e31ull));
  long T = cfg.frames;

  MotionSequence seq;
  seq.frames = T;
  seq.resolution = cfg.resolution;
  seq.focal = cfg.focal;
  seq.image_w = cfg.image_w;
  seq.image_h = cfg.image_h;
  seq.beta = Eigen::VectorXd(kShapeDims);
  for (long i = 0; i < kShapeDims; ++i) seq.beta[i] = rng.uniform(-cfg.beta_range, cfg.beta_range);

  std::vector<detail::SmoothChannel> angle(72);
  for (long c = 0; c < 72; ++c)
    angle[c] = detail::SmoothChannel::draw(rng, c < 3 ? cfg.root_amplitude : cfg.joint_amplitude,
                                           cfg.max_frequency);
  // translation moves slower than the limbs so the crop tracking stays easy
  detail::SmoothChannel path_x = detail::SmoothChannel::draw(rng, cfg.lateral_amplitude, 0.05);
  detail::SmoothChannel path_y = detail::SmoothChannel::draw(rng, cfg.lateral_amplitude, 0.05);
  detail::SmoothChannel path_z = detail::SmoothChannel::draw(rng, cfg.depth_amplitude, 0.05);
  detail::SmoothChannel jit_cx = detail::SmoothChannel::draw(rng, 1.0, 0.08);
  detail::SmoothChannel jit_cy = detail::SmoothChannel::draw(rng, 1.0, 0.08);
  detail::SmoothChannel jit_sz = detail::SmoothChannel::draw(rng, 1.0, 0.08);

  seq.theta.resize(T, 72);
  seq.cam.resize(T, 3);
  seq.bbox.resize(T, 3);
  seq.joints.resize(T, kJoints * 3);
  seq.markers.resize(T, kMarkers * 3);
  seq.kp2d.resize(T, kMarkers * 2);
  seq.images.resize(static_cast<size_t>(T) * 3 * cfg.resolution * cfg.resolution);

  BodyPoseEigen pose;
  pose.beta = seq.beta;
  pose.theta.resize(kJoints, 3);
  for (long t = 0; t < T; ++t) {
    for (long c = 0; c < 72; ++c) seq.theta(t, c) = angle[c](static_cast<double>(t));
    for (int j = 0; j < kJoints; ++j)
      for (long c = 0; c < 3; ++c) pose.theta(j, c) = seq.theta(t, j * 3 + c);
    BodyEvalEigen eval = posed_eigen(model, pose);

    Eigen::Vector3d t_full(path_x(t), path_y(t) * 0.6, cfg.depth_mean + path_z(t));

    double umin = 1e30, umax = -1e30, vmin = 1e30, vmax = -1e30;
    Eigen::MatrixXd uv(kMarkers, 2);
    for (int k = 0; k < kMarkers; ++k) {
      Eigen::Vector3d q = Eigen::Vector3d(eval.markers.row(k)) + t_full;
      double u = cfg.focal * q.x() / q.z() + cfg.image_w / 2.0;
      double v = cfg.focal * q.y() / q.z() + cfg.image_h / 2.0;
      uv(k, 0) = u;
      uv(k, 1) = v;
      umin = std::min(umin, u); umax = std::max(umax, u);
      vmin = std::min(vmin, v); vmax = std::max(vmax, v);
    }
    double extent = std::max({umax - umin, vmax - vmin, 1.0});
    double cx = 0.5 * (umin + umax) + jit_cx(t) * cfg.bbox_jitter * extent;
    double cy = 0.5 * (vmin + vmax) + jit_cy(t) * cfg.bbox_jitter * extent;
    double size = std::max(extent * cfg.bbox_margin * (1.0 + jit_sz(t) * cfg.bbox_jitter), 32.0);
    seq.bbox.row(t) << cx, cy, size;

    // invert the translation recovery so gt cam + gt crop reproduce t_full
    double s = 2.0 * cfg.focal / (t_full.z() * size);
    double denom = s * size;
    seq.cam(t, 0) = s;
    seq.cam(t, 1) = t_full.x() - 2.0 * (cx - cfg.image_w / 2.0) / denom;
    seq.cam(t, 2) = t_full.y() - 2.0 * (cy - cfg.image_h / 2.0) / denom;

    for (int j = 0; j < kJoints; ++j)
      seq.joints.row(t).segment<3>(j * 3) = (Eigen::Vector3d(eval.joints.row(j)) + t_full).transpose();
    for (int k = 0; k < kMarkers; ++k) {
      seq.markers.row(t).segment<3>(k * 3) =
          (Eigen::Vector3d(eval.markers.row(k)) + t_full).transpose();
      seq.kp2d(t, k * 2 + 0) = (uv(k, 0) - cx) / size;
      seq.kp2d(t, k * 2 + 1) = (uv(k, 1) - cy) / size;
    }

    std::vector<float> img =
        rasterize(model, pose.theta, seq.beta, seq.cam.row(t).transpose(),
                  seq.bbox.row(t).transpose(), cfg.resolution, cfg.background_level, cfg.focal,
                  cfg.image_w, cfg.image_h);
    std::memcpy(seq.images.data() + static_cast<size_t>(t) * img.size(), img.data(),
                img.size() * sizeof(float));
  }
  return seq;
}

// A window of T frame indices around one mid-frame. Frames past either end of
// the clip repeat the edge frame so every frame can sit at the center.
struct WindowSample {
  long mid = 0;
  std::vector<long> frames;
};

inline std::vector<WindowSample> windows(long total_frames, long T, long stride) {
  if (T < 1 || T % 2 == 0)
    fail("windows", "window length " + std::to_string(T) + " must be odd and positive");
  if (stride < 1) fail("windows", "stride must be positive, got " + std::to_string(stride));
  if (total_frames < 1) fail("windows", "empty sequence");
  long tau = (T - 1) / 2;
  std::vector<WindowSample> out;
  for (long mid = 0; mid < total_frames; mid += stride) {
    WindowSample w;
    w.mid = mid;
    w.frames.resize(T);
    for (long k = 0; k < T; ++k) w.frames[k] = std::clamp(mid - tau + k, 0L, total_frames - 1);
    out.push_back(std::move(w));
  }
  return out;
}

// A dataset couples one synthetic body with a batch of clips generated from
// per-sequence seeds derived from the dataset seed.
struct Dataset {
  uint64_t seed = 0;
  MotionConfig config;
  std::vector<MotionSequence> sequences;
};

inline Dataset generate_dataset(const BodyModel& model, const MotionConfig& cfg, long n_sequences,
                                uint64_t seed) {
  if (n_sequences < 1)
    fail("generate_dataset", "sequence count must be positive, got " + std::to_string(n_sequences));
  Dataset ds;
  ds.seed = seed;
  ds.config = cfg;
  ds.sequences.reserve(static_cast<size_t>(n_sequences));
  for (long i = 0; i < n_sequences; ++i)
    ds.sequences.push_back(generate_motion(model, cfg, mix_seed(seed, static_cast<uint64_t>(i))));
  return ds;
}

namespace detail {

inline void add_matrix(Container& c, const std::string& name, const Eigen::MatrixXd& m,
                       Shape shape) {
  auto& buf = c.add(name, std::move(shape));
  for (long r = 0; r < m.rows(); ++r)
    for (long col = 0; col < m.cols(); ++col)
      buf.data[static_cast<size_t>(r * m.cols() + col)] = static_cast<float>(m(r, col));
}

inline Eigen::MatrixXd read_matrix(const NamedBuffer& buf, long rows, long cols) {
  if (shape_numel(buf.shape) != rows * cols)
    fail("load_dataset", "tensor " + buf.name + " has " + std::to_string(shape_numel(buf.shape)) +
                             " values, expected " + std::to_string(rows * cols));
  Eigen::MatrixXd m(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c)
      m(r, c) = static_cast<double>(buf.data[static_cast<size_t>(r * cols + c)]);
  return m;
}

}  // namespace detail

// Dataset file: container with kind "dataset". The embedded body model makes
// the file self-contained, so evaluation never depends on regenerating the
// exact same mesh.
inline void save_dataset(const std::string& path, const Dataset& ds, const BodyModel& model) {
  Container c = body_to_container(model);
  c.kind = "dataset";
  c.meta["dataset_seed"] = ds.seed;
  c.meta["sequences"] = ds.sequences.size();
  c.meta["resolution"] = ds.config.resolution;
  c.meta["frames"] = ds.config.frames;
  c.meta["focal"] = ds.config.focal;
  c.meta["image_w"] = ds.config.image_w;
  c.meta["image_h"] = ds.config.image_h;
  c.meta["background_level"] = ds.config.background_level;
  for (size_t i = 0; i < ds.sequences.size(); ++i) {
    const MotionSequence& s = ds.sequences[i];
    std::string p = "seq" + std::to_string(i) + ".";
    long T = s.frames, R = s.resolution;
    detail::add_matrix(c, p + "theta", s.theta, Shape{T, 72});
    detail::add_matrix(c, p + "beta", s.beta, Shape{kShapeDims});
    detail::add_matrix(c, p + "cam", s.cam, Shape{T, 3});
    detail::add_matrix(c, p + "bbox", s.bbox, Shape{T, 3});
    detail::add_matrix(c, p + "joints", s.joints, Shape{T, kJoints, 3});
    detail::add_matrix(c, p + "markers", s.markers, Shape{T, kMarkers, 3});
    detail::add_matrix(c, p + "kp2d", s.kp2d, Shape{T, kMarkers, 2});
    auto& img = c.add(p + "images", Shape{T, 3, R, R});
    img.data = s.images;
  }
  c.save(path);
}

struct LoadedDataset {
  Dataset data;
  BodyModel model;
};

inline LoadedDataset load_dataset(const std::string& path) {
  Container c = Container::load(path);
  if (c.kind != "dataset")
    fail("load_dataset", "file " + path + " holds a '" + c.kind + "' container, not a dataset");
  LoadedDataset out;
  c.kind = "bodymodel";  // the body payload rides inside the dataset container
  out.model = body_from_container(c);
  c.kind = "dataset";
  out.data.seed = c.meta.at("dataset_seed").get<uint64_t>();
  long n = c.meta.at("sequences").get<long>();
  long T = c.meta.at("frames").get<long>();
  long R = c.meta.at("resolution").get<long>();
  out.data.config.frames = T;
  out.data.config.resolution = R;
  out.data.config.focal = c.meta.at("focal").get<double>();
  out.data.config.image_w = c.meta.at("image_w").get<double>();
  out.data.config.image_h = c.meta.at("image_h").get<double>();
  out.data.config.background_level = c.meta.at("background_level").get<double>();
  for (long i = 0; i < n; ++i) {
    std::string p = "seq" + std::to_string(i) + ".";
    MotionSequence s;
    s.frames = T;
    s.resolution = R;
    s.focal = out.data.config.focal;
    s.image_w = out.data.config.image_w;
    s.image_h = out.data.config.image_h;
    s.theta = detail::read_matrix(c.require(p + "theta"), T, 72);
    Eigen::MatrixXd b = detail::read_matrix(c.require(p + "beta"), kShapeDims, 1);
    s.beta = b.col(0);
    s.cam = detail::read_matrix(c.require(p + "cam"), T, 3);
    s.bbox = detail::read_matrix(c.require(p + "bbox"), T, 3);
    s.joints = detail::read_matrix(c.require(p + "joints"), T, kJoints * 3);
    s.markers = detail::read_matrix(c.require(p + "markers"), T, kMarkers * 3);
    s.kp2d = detail::read_matrix(c.require(p + "kp2d"), T, kMarkers * 2);
    s.images = c.require(p + "images").data;
    if (s.images.size() != static_cast<size_t>(T) * 3 * R * R)
      fail("load_dataset", "sequence " + std::to_string(i) + " image block has the wrong size");
    out.data.sequences.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Window batching: tensor views of dataset windows for training and inference
// ---------------------------------------------------------------------------

struct WindowRef {
  long sequence = 0;
  WindowSample window;
};

inline std::vector<WindowRef> list_windows(const Dataset& ds, long T, long stride) {
  std::vector<WindowRef> out;
  for (size_t i = 0; i < ds.sequences.size(); ++i)
    for (auto& w : windows(ds.sequences[i].frames, T, stride))
      out.push_back(WindowRef{static_cast<long>(i), std::move(w)});
  return out;
}

template <class S>
struct WindowBatch {
  Tensor<S> images;      // B x T x 3 x R x R
  CropContext<S> ctx;    // mid-frame crop geometry
  Tensor<S> theta;       // B x 24 x 3 mid-frame ground truth
  Tensor<S> beta;        // B x 10
  Tensor<S> joints;      // B x 24 x 3, camera frame
  Tensor<S> kp2d;        // B x 26 x 2, bbox space
};

template <class S>
WindowBatch<S> assemble_windows(const Dataset& ds, const std::vector<WindowRef>& refs) {
  if (refs.empty()) fail("assemble_windows", "empty window batch");
  long B = static_cast<long>(refs.size());
  long R = ds.config.resolution, T = static_cast<long>(refs[0].window.frames.size());
  WindowBatch<S> b;
  b.images = Tensor<S>(Shape{B, T, 3, R, R});
  b.ctx.center = Tensor<S>(Shape{B, 2});
  b.ctx.size = Tensor<S>(Shape{B, 1});
  b.ctx.focal = static_cast<S>(ds.config.focal);
  b.ctx.image_w = static_cast<S>(ds.config.image_w);
  b.ctx.image_h = static_cast<S>(ds.config.image_h);
  b.theta = Tensor<S>(Shape{B, kJoints, 3});
  b.beta = Tensor<S>(Shape{B, kShapeDims});
  b.joints = Tensor<S>(Shape{B, kJoints, 3});
  b.kp2d = Tensor<S>(Shape{B, kMarkers, 2});
  long frame_span = 3 * R * R;
  for (long i = 0; i < B; ++i) {
    const WindowRef& ref = refs[i];
    if (ref.sequence < 0 || ref.sequence >= static_cast<long>(ds.sequences.size()))
      fail("assemble_windows", "sequence index " + std::to_string(ref.sequence) +
                                   " is out of range");
    const MotionSequence& seq = ds.sequences[ref.sequence];
    if (static_cast<long>(ref.window.frames.size()) != T)
      fail("assemble_windows", "mixed window lengths in one batch");
    for (long k = 0; k < T; ++k) {
      const float* src = seq.frame_image(ref.window.frames[k]);
      S* dst = b.images.values().data() + (i * T + k) * frame_span;
      for (long j = 0; j < frame_span; ++j) dst[j] = static_cast<S>(src[j]);
    }
    long mid = ref.window.mid;
    b.ctx.center.values()[i * 2 + 0] = static_cast<S>(seq.bbox(mid, 0));
    b.ctx.center.values()[i * 2 + 1] = static_cast<S>(seq.bbox(mid, 1));
    b.ctx.size.values()[i] = static_cast<S>(seq.bbox(mid, 2));
    for (long j = 0; j < kJoints * 3; ++j) {
      b.theta.values()[i * kJoints * 3 + j] = static_cast<S>(seq.theta(mid, j));
      b.joints.values()[i * kJoints * 3 + j] = static_cast<S>(seq.joints(mid, j));
    }
    for (long j = 0; j < kShapeDims; ++j)
      b.beta.values()[i * kShapeDims + j] = static_cast<S>(seq.beta(j));
    for (long j = 0; j < kMarkers * 2; ++j)
      b.kp2d.values()[i * kMarkers * 2 + j] = static_cast<S>(seq.kp2d(mid, j));
  }
  return b;
}

}  // namespace tar

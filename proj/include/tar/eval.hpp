#pragma once

// Metric suite: per-frame joint and vertex errors plus the inter-frame
// acceleration error, and a sliding-window driver that scores a trained
// network over a dataset.

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <string>
#include <vector>

#include "tar/datasynth.hpp"
#include "tar/network.hpp"

namespace tar {

namespace detail {

template <class S>
Eigen::MatrixXd to_points(const Tensor<S>& t, const char* op) {
  if (t.rank() != 2 || t.dim(1) != 3)
    fail(op, "expected Nx3 points, got " + shape_str(t.shape()));
  Eigen::MatrixXd out(t.dim(0), 3);
  for (long i = 0; i < t.dim(0); ++i)
    for (long j = 0; j < 3; ++j) out(i, j) = static_cast<double>(t[i * 3 + j]);
  return out;
}

inline double mean_row_norm_mm(const Eigen::MatrixXd& diff) {
  return diff.rowwise().norm().mean() * 1000.0;
}

}  // namespace detail

// Mean per-joint position error after root alignment (joint 0), millimetres.
template <class S>
double mpjpe_mm(const Tensor<S>& pred, const Tensor<S>& gt) {
  Eigen::MatrixXd p = detail::to_points(pred, "mpjpe");
  Eigen::MatrixXd g = detail::to_points(gt, "mpjpe");
  if (p.rows() != g.rows()) fail("mpjpe", "joint counts differ");
  // materialize the roots: broadcasting p.row(0) directly would zero it first
  // and then subtract that zero from every other row
  Eigen::RowVector3d root_p = p.row(0), root_g = g.row(0);
  p.rowwise() -= root_p;
  g.rowwise() -= root_g;
  return detail::mean_row_norm_mm(p - g);
}

// Mean per-joint error after the optimal similarity alignment (rotation,
// uniform scale, translation; reflections excluded). Coincident predictions
// fall back to plain centroid alignment.
template <class S>
double pa_mpjpe_mm(const Tensor<S>& pred, const Tensor<S>& gt) {
  Eigen::MatrixXd p = detail::to_points(pred, "pa_mpjpe");
  Eigen::MatrixXd g = detail::to_points(gt, "pa_mpjpe");
  if (p.rows() != g.rows()) fail("pa_mpjpe", "joint counts differ");
  Eigen::RowVector3d mp = p.colwise().mean(), mg = g.colwise().mean();
  Eigen::MatrixXd pc = p.rowwise() - mp, gc = g.rowwise() - mg;
  double spread = pc.squaredNorm();
  if (spread < 1e-12) return detail::mean_row_norm_mm(pc - gc);
  Eigen::Matrix3d cov = pc.transpose() * gc;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  double flip = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  Eigen::Matrix3d rot = svd.matrixV() * Eigen::Vector3d(1, 1, flip).asDiagonal() *
                        svd.matrixU().transpose();
  const Eigen::Vector3d& sv = svd.singularValues();
  double scale = (sv(0) + sv(1) + flip * sv(2)) / spread;
  return detail::mean_row_norm_mm((scale * (pc * rot.transpose())) - gc);
}

// Mean per-vertex error after aligning the root joints, millimetres.
template <class S>
double pve_mm(const Tensor<S>& pred_vertices, const Tensor<S>& gt_vertices,
              const Tensor<S>& pred_root, const Tensor<S>& gt_root) {
  Eigen::MatrixXd p = detail::to_points(pred_vertices, "pve");
  Eigen::MatrixXd g = detail::to_points(gt_vertices, "pve");
  if (p.rows() != g.rows()) fail("pve", "vertex counts differ");
  if (pred_root.numel() != 3 || gt_root.numel() != 3)
    fail("pve", "root joints must be 3-vectors");
  for (long j = 0; j < 3; ++j) {
    p.col(j).array() -= static_cast<double>(pred_root[j]);
    g.col(j).array() -= static_cast<double>(gt_root[j]);
  }
  return detail::mean_row_norm_mm(p - g);
}

// Per-frame acceleration errors: second differences of each joint trajectory,
// compared between prediction and ground truth, millimetres per frame^2.
template <class S>
std::vector<double> accel_errors_mm(const Tensor<S>& pred_seq, const Tensor<S>& gt_seq) {
  if (pred_seq.rank() != 3 || pred_seq.dim(2) != 3)
    fail("accel_error", "expected FxJx3 sequences, got " + shape_str(pred_seq.shape()));
  if (pred_seq.shape() != gt_seq.shape())
    fail_shapes("accel_error", "sequence shapes differ", pred_seq.shape(), gt_seq.shape());
  long F = pred_seq.dim(0), J = pred_seq.dim(1);
  if (F < 3)
    fail("accel_error", "need at least 3 frames, got " + std::to_string(F));
  auto at = [&](const Tensor<S>& t, long f, long j, long c) {
    return static_cast<double>(t[(f * J + j) * 3 + c]);
  };
  std::vector<double> out;
  out.reserve(static_cast<size_t>(F - 2));
  for (long f = 1; f + 1 < F; ++f) {
    double sum = 0.0;
    for (long j = 0; j < J; ++j) {
      double n2 = 0.0;
      for (long c = 0; c < 3; ++c) {
        double ap = at(pred_seq, f + 1, j, c) - 2.0 * at(pred_seq, f, j, c) +
                    at(pred_seq, f - 1, j, c);
        double ag = at(gt_seq, f + 1, j, c) - 2.0 * at(gt_seq, f, j, c) +
                    at(gt_seq, f - 1, j, c);
        n2 += (ap - ag) * (ap - ag);
      }
      sum += std::sqrt(n2);
    }
    out.push_back(sum / static_cast<double>(J) * 1000.0);
  }
  return out;
}

template <class S>
double accel_error_mm(const Tensor<S>& pred_seq, const Tensor<S>& gt_seq) {
  std::vector<double> e = accel_errors_mm(pred_seq, gt_seq);
  double sum = 0.0;
  for (double v : e) sum += v;
  return sum / static_cast<double>(e.size());
}

struct RunningStat {
  double sum = 0.0, sumsq = 0.0;
  long n = 0;
  void add(double v) { sum += v; sumsq += v * v; ++n; }
  double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
  double stddev() const {
    if (n < 1) return 0.0;
    double m = mean();
    double var = sumsq / static_cast<double>(n) - m * m;
    return var > 0.0 ? std::sqrt(var) : 0.0;
  }
};

struct MetricReport {
  RunningStat mpjpe, pa_mpjpe, pve, accel;

  nlohmann::json to_json() const {
    auto block = [](const RunningStat& s) {
      return nlohmann::json{{"mean", s.mean()}, {"std", s.stddev()}, {"count", s.n}};
    };
    return nlohmann::json{{"mpjpe_mm", block(mpjpe)},
                          {"pa_mpjpe_mm", block(pa_mpjpe)},
                          {"pve_mm", block(pve)},
                          {"accel_mm_per_frame2", block(accel)}};
  }
};

class MetricAccumulator {
 public:
  template <class S>
  void add_frame(const Tensor<S>& pred_joints, const Tensor<S>& gt_joints,
                 const Tensor<S>& pred_vertices, const Tensor<S>& gt_vertices) {
    double mp = mpjpe_mm(pred_joints, gt_joints);
    double pa = pa_mpjpe_mm(pred_joints, gt_joints);
    if (pa > mp + 1e-9)
      fail("metrics", "similarity alignment exceeded root alignment (" + std::to_string(pa) +
                          " > " + std::to_string(mp) + " mm)");
    report_.mpjpe.add(mp);
    report_.pa_mpjpe.add(pa);
    report_.pve.add(pve_mm(pred_vertices, gt_vertices, slice(pred_joints, 0, 0, 1),
                           slice(gt_joints, 0, 0, 1)));
  }

  template <class S>
  void add_sequence_accel(const Tensor<S>& pred_seq, const Tensor<S>& gt_seq) {
    for (double v : accel_errors_mm(pred_seq, gt_seq)) report_.accel.add(v);
  }

  const MetricReport& report() const { return report_; }

 private:
  MetricReport report_;
};

struct EvalOptions {
  long batch_size = 8;
  long stride = 1;
  bool use_initial_estimate = false;
};

namespace detail {

// One forward pass per chunk of windows; yields per-window predictions and
// mid-frame ground truth as plain (grad-free) tensors.
template <class S>
struct WindowScores {
  Tensor<S> pred_joints;     // Bx24x3 body frame
  Tensor<S> pred_vertices;   // BxVx3 body frame
  Tensor<S> pred_joints_cam; // Bx24x3 with the recovered translation applied
  Tensor<S> gt_joints_body;  // Bx24x3 root-relative from stored camera-frame gt
  Tensor<S> gt_vertices;     // BxVx3 body frame
  Tensor<S> gt_joints_cam;   // Bx24x3 as stored
};

template <class S>
WindowScores<S> score_windows(const TarNetwork<S>& net, const BodyTensors<S>& body,
                              const Dataset& ds, const std::vector<WindowRef>& refs,
                              bool use_initial_estimate) {
  WindowBatch<S> batch = assemble_windows<S>(ds, refs);
  NetworkOutput<S> out = network_forward(net, body, batch.images, batch.ctx);
  Tensor<S> phi = use_initial_estimate ? out.phi_init : out.estimates.back();
  BodyForward<S> pred = body_forward(body, phi_theta(phi), phi_beta(phi));
  BodyForward<S> gt = body_forward(body, batch.theta, batch.beta);
  long B = phi.dim(0);
  // guarded so a half-trained camera cannot abort a holdout pass; identity
  // for any healthy scale
  Tensor<S> t = recover_translation(guard_camera_scale(phi_cam(phi)), batch.ctx);
  WindowScores<S> s;
  s.pred_joints = detach(pred.joints);
  s.pred_vertices = detach(pred.vertices);
  s.pred_joints_cam = detach(add(pred.joints, reshape(t, Shape{B, 1, 3})));
  s.gt_joints_body = detach(gt.joints);
  s.gt_vertices = detach(gt.vertices);
  s.gt_joints_cam = detach(batch.joints);
  return s;
}

template <class S>
Tensor<S> window_row(const Tensor<S>& t, long b) {
  Shape s(t.shape().begin() + 1, t.shape().end());
  return reshape(slice(t, 0, b, 1), std::move(s));
}

}  // namespace detail

// Frame metrics (no acceleration) over an arbitrary set of windows.
template <class S>
MetricReport evaluate_windows(const TarNetwork<S>& net, const BodyTensors<S>& body,
                              const Dataset& ds, const std::vector<WindowRef>& refs,
                              const EvalOptions& opt = {}) {
  MetricAccumulator acc;
  for (size_t at = 0; at < refs.size(); at += static_cast<size_t>(opt.batch_size)) {
    std::vector<WindowRef> chunk(
        refs.begin() + static_cast<long>(at),
        refs.begin() + static_cast<long>(std::min(refs.size(),
                                                  at + static_cast<size_t>(opt.batch_size))));
    auto s = detail::score_windows(net, body, ds, chunk, opt.use_initial_estimate);
    for (long b = 0; b < static_cast<long>(chunk.size()); ++b)
      acc.add_frame(detail::window_row(s.pred_joints, b), detail::window_row(s.gt_joints_body, b),
                    detail::window_row(s.pred_vertices, b), detail::window_row(s.gt_vertices, b));
  }
  return acc.report();
}

// Full sliding-window evaluation: frame metrics plus per-sequence acceleration
// over the mid-frame trajectory.
template <class S>
MetricReport evaluate_model(const TarNetwork<S>& net, const BodyTensors<S>& body,
                            const Dataset& ds, const EvalOptions& opt = {}) {
  long T = net.cfg.gte.frames;
  MetricAccumulator acc;
  for (size_t i = 0; i < ds.sequences.size(); ++i) {
    std::vector<WindowRef> refs;
    for (auto& w : windows(ds.sequences[i].frames, T, opt.stride))
      refs.push_back(WindowRef{static_cast<long>(i), std::move(w)});
    long F = static_cast<long>(refs.size());
    Tensor<S> pred_traj(Shape{F, kJoints, 3}), gt_traj(Shape{F, kJoints, 3});
    long row = 0;
    for (size_t at = 0; at < refs.size(); at += static_cast<size_t>(opt.batch_size)) {
      std::vector<WindowRef> chunk(
          refs.begin() + static_cast<long>(at),
          refs.begin() + static_cast<long>(std::min(refs.size(),
                                                    at + static_cast<size_t>(opt.batch_size))));
      auto s = detail::score_windows(net, body, ds, chunk, opt.use_initial_estimate);
      long span = kJoints * 3;
      for (long b = 0; b < static_cast<long>(chunk.size()); ++b, ++row) {
        acc.add_frame(detail::window_row(s.pred_joints, b),
                      detail::window_row(s.gt_joints_body, b),
                      detail::window_row(s.pred_vertices, b),
                      detail::window_row(s.gt_vertices, b));
        for (long j = 0; j < span; ++j) {
          pred_traj.values()[row * span + j] = s.pred_joints_cam[b * span + j];
          gt_traj.values()[row * span + j] = s.gt_joints_cam[b * span + j];
        }
      }
    }
    if (F >= 3) acc.add_sequence_accel(pred_traj, gt_traj);
  }
  return acc.report();
}

}  // namespace tar

#pragma once

#include <array>

#include "tar/container.hpp"
#include "tar/rotation.hpp"

// Procedural parametric body: a fixed 24-joint kinematic tree, a synthetic
// vertex cloud strung along the bones, smooth skinning weights, a joint
// regressor, 10 shape blendshapes and 26 marker vertices. Marker k for k<24
// sits at joint k's site; 24 is a chest marker and 25 a mid-back marker, so
// marker order lines up with the refinement state order (24 rotations, shape,
// camera).

namespace tar {

constexpr int kJoints = 24;
constexpr int kShapeDims = 10;
constexpr int kMarkers = 26;

inline const std::array<int, kJoints>& kinematic_parents() {
  static const std::array<int, kJoints> p = {-1, 0, 0,  0,  1,  2,  3,  4,  5,  6,  7,  8,
                                             9,  9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
  return p;
}

// Rest skeleton the synthetic geometry is grown around (standing T-pose,
// metres, y up, z toward the camera).
inline const std::array<Eigen::Vector3d, kJoints>& rest_joint_sites() {
  static const std::array<Eigen::Vector3d, kJoints> j = {{
      {0.00, 0.95, 0.00},   {0.09, 0.91, 0.00},   {-0.09, 0.91, 0.00},  {0.00, 1.05, 0.00},
      {0.10, 0.50, 0.00},   {-0.10, 0.50, 0.00},  {0.00, 1.15, 0.00},   {0.11, 0.08, 0.00},
      {-0.11, 0.08, 0.00},  {0.00, 1.25, 0.00},   {0.12, 0.02, 0.12},   {-0.12, 0.02, 0.12},
      {0.00, 1.40, 0.00},   {0.07, 1.32, 0.00},   {-0.07, 1.32, 0.00},  {0.00, 1.55, 0.00},
      {0.20, 1.35, 0.00},   {-0.20, 1.35, 0.00},  {0.45, 1.35, 0.00},   {-0.45, 1.35, 0.00},
      {0.68, 1.35, 0.00},   {-0.68, 1.35, 0.00},  {0.76, 1.35, 0.00},   {-0.76, 1.35, 0.00},
  }};
  return j;
}

struct BodyModel {
  long vertex_count = 0;
  Eigen::MatrixXd template_vertices;               // V x 3
  std::vector<Eigen::MatrixXd> shape_blendshapes;  // kShapeDims entries, V x 3
  Eigen::MatrixXd joint_regressor;                 // kJoints x V, rows sum to 1
  Eigen::MatrixXd skinning_weights;                // V x kJoints, rows sum to 1
  std::array<int, kJoints> parents{};
  std::array<long, kMarkers> marker_indices{};
  Eigen::MatrixXi faces;  // F x 3, synthetic ribbons along each bone
  uint64_t seed = 0;

  Eigen::MatrixXd rest_joints() const { return joint_regressor * template_vertices; }
};

struct SyntheticBodyConfig {
  long vertices = 540;
  double skin_sigma = 0.08;
  double regress_sigma = 0.06;
  double max_shape_offset = 0.03;  // metres per unit of shape coefficient
};

namespace detail {

inline double segment_distance(const Eigen::Vector3d& p, const Eigen::Vector3d& a,
                               const Eigen::Vector3d& b) {
  Eigen::Vector3d ab = b - a;
  double len2 = ab.squaredNorm();
  if (len2 < 1e-12) return (p - a).norm();
  double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

inline double bone_radius(int joint) {
  switch (joint) {
    case 3: case 6: case 9: case 12: case 15: return 0.10;  // torso, neck, head
    case 1: case 2: case 4: case 5: return 0.07;            // hips, knees
    case 7: case 8: case 10: case 11: return 0.05;          // ankles, feet
    case 13: case 14: case 16: case 17: return 0.06;        // collar, shoulders
    case 18: case 19: case 20: case 21: return 0.045;       // elbows, wrists
    default: return 0.035;                                   // hands
  }
}

}  // namespace detail

inline void validate_model(const BodyModel& m) {
  if (m.vertex_count < 48) fail("bodymodel", "too few vertices");
  if (m.parents[0] != -1) fail("bodymodel", "joint 0 must be the root");
  for (int j = 1; j < kJoints; ++j)
    if (m.parents[j] < 0 || m.parents[j] >= j)
      fail("bodymodel", "kinematic tree is not forward-ordered at joint " + std::to_string(j));
  for (int j = 0; j < kJoints; ++j) {
    double s = m.joint_regressor.row(j).sum();
    if (std::abs(s - 1.0) > 1e-6)
      fail("bodymodel", "regressor row " + std::to_string(j) + " sums to " + std::to_string(s));
  }
  for (long v = 0; v < m.vertex_count; ++v) {
    double s = m.skinning_weights.row(v).sum();
    if (std::abs(s - 1.0) > 1e-6)
      fail("bodymodel", "skinning row " + std::to_string(v) + " sums to " + std::to_string(s));
  }
  for (int k = 0; k < kMarkers; ++k) {
    if (m.marker_indices[k] < 0 || m.marker_indices[k] >= m.vertex_count)
      fail("bodymodel", "marker " + std::to_string(k) + " out of range");
    for (int l = 0; l < k; ++l)
      if (m.marker_indices[k] == m.marker_indices[l])
        fail("bodymodel", "markers " + std::to_string(l) + " and " + std::to_string(k) +
                              " share a vertex");
  }
  for (const auto& bs : m.shape_blendshapes) {
    double worst = bs.rowwise().norm().maxCoeff();
    if (worst > 0.031) fail("bodymodel", "blendshape offset exceeds the 3cm bound");
  }
  for (long f = 0; f < m.faces.rows(); ++f)
    for (int c = 0; c < 3; ++c)
      if (m.faces(f, c) < 0 || m.faces(f, c) >= m.vertex_count)
        fail("bodymodel", "face vertex out of range");
}

// Grows a deterministic body around the rest skeleton: vertices are placed in
// golden-angle spirals along every bone (site 0 is a blob around the pelvis),
// skinning falls off with distance to each bone, the regressor with distance
// to each joint, and blendshapes are bounded smooth sinusoidal fields.
inline BodyModel make_synthetic_model(const SyntheticBodyConfig& cfg, uint64_t seed) {
  const long V = cfg.vertices;
  const auto& parents = kinematic_parents();
  const auto& sites = rest_joint_sites();
  BodyModel m;
  m.vertex_count = V;
  m.parents = parents;
  m.seed = seed;
  Rng rng(mix_seed(seed, 0xb0d7));

  // vertex placement: site = i % 24, station index k = i / 24
  std::array<long, kJoints> per_site{};
  for (long i = 0; i < V; ++i) per_site[i % kJoints]++;
  m.template_vertices.resize(V, 3);
  constexpr double kGolden = 2.39996322972865332;
  for (long i = 0; i < V; ++i) {
    int site = static_cast<int>(i % kJoints);
    long k = i / kJoints;
    long n = per_site[site];
    double ang = kGolden * static_cast<double>(k) + 0.7 * site;
    Eigen::Vector3d pos;
    if (site == 0) {
      double u = (static_cast<double>(k) + 0.5) / static_cast<double>(n) * 2.0 - 1.0;
      double r = 0.10 * std::sqrt(std::max(0.0, 1.0 - u * u));
      pos = sites[0] + Eigen::Vector3d(r * std::cos(ang), 0.10 * u, r * std::sin(ang));
    } else {
      Eigen::Vector3d a = sites[parents[site]];
      Eigen::Vector3d b = sites[site];
      double t = (static_cast<double>(k) + 0.5) / static_cast<double>(n);
      Eigen::Vector3d dir = (b - a).normalized();
      Eigen::Vector3d ref =
          std::abs(dir.z()) < 0.9 ? Eigen::Vector3d(0, 0, 1) : Eigen::Vector3d(1, 0, 0);
      Eigen::Vector3d e1 = dir.cross(ref).normalized();
      Eigen::Vector3d e2 = dir.cross(e1);
      double r = detail::bone_radius(site);
      pos = a + t * (b - a) + r * (std::cos(ang) * e1 + std::sin(ang) * e2);
    }
    for (int c = 0; c < 3; ++c) m.template_vertices(i, c) = pos[c] + rng.normal(0.0, 0.004);
  }

  // ribbon faces along each site's vertex sequence
  std::vector<Eigen::Vector3i> tris;
  for (int site = 0; site < kJoints; ++site) {
    std::vector<long> idx;
    for (long i = site; i < V; i += kJoints) idx.push_back(i);
    for (size_t k = 0; k + 2 < idx.size(); ++k)
      tris.emplace_back(static_cast<int>(idx[k]), static_cast<int>(idx[k + 1]),
                        static_cast<int>(idx[k + 2]));
  }
  m.faces.resize(static_cast<long>(tris.size()), 3);
  for (size_t t = 0; t < tris.size(); ++t) m.faces.row(static_cast<long>(t)) = tris[t];

  // skinning: gaussian falloff in distance to each bone segment
  m.skinning_weights.resize(V, kJoints);
  for (long v = 0; v < V; ++v) {
    Eigen::Vector3d p = m.template_vertices.row(v);
    double total = 0;
    for (int j = 0; j < kJoints; ++j) {
      double d = j == 0 ? (p - sites[0]).norm()
                        : detail::segment_distance(p, sites[parents[j]], sites[j]);
      double w = std::exp(-(d * d) / (cfg.skin_sigma * cfg.skin_sigma));
      m.skinning_weights(v, j) = w;
      total += w;
    }
    m.skinning_weights.row(v) /= total;
  }

  // regressor: gaussian falloff in distance to each joint
  m.joint_regressor.resize(kJoints, V);
  for (int j = 0; j < kJoints; ++j) {
    double total = 0;
    for (long v = 0; v < V; ++v) {
      double d = (m.template_vertices.row(v).transpose() - sites[j]).norm();
      double w = std::exp(-(d * d) / (cfg.regress_sigma * cfg.regress_sigma));
      m.joint_regressor(j, v) = w;
      total += w;
    }
    m.joint_regressor.row(j) /= total;
  }

  // blendshapes: a few smooth sinusoidal displacement fields, rescaled so the
  // largest per-vertex offset stays within the configured bound
  m.shape_blendshapes.resize(kShapeDims);
  for (int s = 0; s < kShapeDims; ++s) {
    Eigen::MatrixXd field = Eigen::MatrixXd::Zero(V, 3);
    int waves = 2 + static_cast<int>(rng.index(3));
    for (int w = 0; w < waves; ++w) {
      Eigen::Vector3d dir(rng.normal(), rng.normal(), rng.normal());
      dir.normalize();
      Eigen::Vector3d amp(rng.normal(), rng.normal(), rng.normal());
      double freq = rng.uniform(1.0, 4.0);
      double phase = rng.uniform(0.0, 6.28318530717958648);
      for (long v = 0; v < V; ++v) {
        double arg = freq * dir.dot(m.template_vertices.row(v)) + phase;
        field.row(v) += amp.transpose() * std::sin(arg);
      }
    }
    double worst = field.rowwise().norm().maxCoeff();
    double target = cfg.max_shape_offset * rng.uniform(0.5, 1.0);
    if (worst > 1e-12) field *= target / worst;
    m.shape_blendshapes[s] = field;
  }

  // markers: nearest free vertex to each joint, then chest and mid-back
  Eigen::MatrixXd rest = m.rest_joints();
  std::vector<Eigen::Vector3d> targets;
  for (int j = 0; j < kJoints; ++j) targets.emplace_back(rest.row(j));
  targets.emplace_back(0.0, 1.27, 0.10);   // chest
  targets.emplace_back(0.0, 1.17, -0.10);  // mid-back
  std::vector<bool> taken(V, false);
  for (int k = 0; k < kMarkers; ++k) {
    long best = -1;
    double best_d = 1e18;
    for (long v = 0; v < V; ++v) {
      if (taken[v]) continue;
      double d = (m.template_vertices.row(v).transpose() - targets[k]).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = v;
      }
    }
    taken[best] = true;
    m.marker_indices[k] = best;
  }

  validate_model(m);
  return m;
}

// ---------------------------------------------------------------------------
// Plain (non-differentiable) evaluation used by the data generator, metrics
// and mesh export.
// ---------------------------------------------------------------------------

struct BodyPoseEigen {
  Eigen::MatrixXd theta;  // kJoints x 3 axis-angle
  Eigen::VectorXd beta;   // kShapeDims
};

struct BodyEvalEigen {
  Eigen::MatrixXd vertices;  // V x 3
  Eigen::MatrixXd joints;    // kJoints x 3 (posed)
  Eigen::MatrixXd markers;   // kMarkers x 3
};

inline Eigen::Matrix3d rodrigues_eigen(const Eigen::Vector3d& w) {
  double a = w.norm();
  if (a < 1e-12) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(a, w / a).toRotationMatrix();
}

inline BodyEvalEigen posed_eigen(const BodyModel& m, const BodyPoseEigen& pose) {
  Eigen::MatrixXd shaped = m.template_vertices;
  for (int s = 0; s < kShapeDims; ++s) shaped += pose.beta[s] * m.shape_blendshapes[s];
  Eigen::MatrixXd rest = m.joint_regressor * shaped;

  std::array<Eigen::Matrix3d, kJoints> R;
  std::array<Eigen::Vector3d, kJoints> t;
  for (int j = 0; j < kJoints; ++j) {
    Eigen::Matrix3d Rl = rodrigues_eigen(pose.theta.row(j));
    if (j == 0) {
      R[j] = Rl;
      t[j] = rest.row(0);
    } else {
      int p = m.parents[j];
      R[j] = R[p] * Rl;
      t[j] = R[p] * (rest.row(j) - rest.row(p)).transpose() + t[p];
    }
  }

  BodyEvalEigen out;
  out.joints.resize(kJoints, 3);
  for (int j = 0; j < kJoints; ++j) out.joints.row(j) = t[j];
  out.vertices.resize(m.vertex_count, 3);
  for (long v = 0; v < m.vertex_count; ++v) {
    Eigen::Vector3d p = shaped.row(v);
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    for (int j = 0; j < kJoints; ++j) {
      double w = m.skinning_weights(v, j);
      if (w == 0.0) continue;
      acc += w * (R[j] * (p - rest.row(j).transpose()) + t[j]);
    }
    out.vertices.row(v) = acc;
  }
  out.markers.resize(kMarkers, 3);
  for (int k = 0; k < kMarkers; ++k) out.markers.row(k) = out.vertices.row(m.marker_indices[k]);
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable, batched evaluation built from taped primitives.
// ---------------------------------------------------------------------------

template <class S>
struct BodyTensors {
  long V = 0;
  Tensor<S> template_vertices;  // 1 x V x 3
  Tensor<S> blendshapes;        // kShapeDims x (V*3)
  Tensor<S> joint_regressor;    // kJoints x V
  Tensor<S> skinning;           // V x kJoints
  std::array<int, kJoints> parents{};
  std::vector<long> marker_indices;
};

template <class S>
BodyTensors<S> to_tensors(const BodyModel& m) {
  BodyTensors<S> t;
  t.V = m.vertex_count;
  t.parents = m.parents;
  t.marker_indices.assign(m.marker_indices.begin(), m.marker_indices.end());
  t.template_vertices = Tensor<S>(Shape{1, t.V, 3});
  for (long v = 0; v < t.V; ++v)
    for (int c = 0; c < 3; ++c)
      t.template_vertices.values()[v * 3 + c] = static_cast<S>(m.template_vertices(v, c));
  t.blendshapes = Tensor<S>(Shape{kShapeDims, t.V * 3});
  for (int s = 0; s < kShapeDims; ++s)
    for (long v = 0; v < t.V; ++v)
      for (int c = 0; c < 3; ++c)
        t.blendshapes.values()[s * t.V * 3 + v * 3 + c] =
            static_cast<S>(m.shape_blendshapes[s](v, c));
  t.joint_regressor = Tensor<S>(Shape{kJoints, t.V});
  for (int j = 0; j < kJoints; ++j)
    for (long v = 0; v < t.V; ++v)
      t.joint_regressor.values()[j * t.V + v] = static_cast<S>(m.joint_regressor(j, v));
  t.skinning = Tensor<S>(Shape{t.V, kJoints});
  for (long v = 0; v < t.V; ++v)
    for (int j = 0; j < kJoints; ++j)
      t.skinning.values()[v * kJoints + j] = static_cast<S>(m.skinning_weights(v, j));
  return t;
}

// beta Bx10 -> shaped vertices BxVx3 and regressed rest joints Bx24x3.
template <class S>
std::pair<Tensor<S>, Tensor<S>> shape_and_regress(const BodyTensors<S>& body,
                                                  const Tensor<S>& beta) {
  if (beta.rank() != 2 || beta.dim(1) != kShapeDims)
    fail("shape_and_regress", "expected Bx10 shape coefficients, got " + shape_str(beta.shape()));
  long B = beta.dim(0);
  Tensor<S> offsets = reshape(matmul(beta, body.blendshapes), Shape{B, body.V, 3});
  Tensor<S> shaped = add(offsets, body.template_vertices);
  // regress per batch via a (V, B*3) view so a single matmul covers the batch
  Tensor<S> flat = reshape(permute(shaped, {1, 0, 2}), Shape{body.V, B * 3});
  Tensor<S> rest = permute(reshape(matmul(body.joint_regressor, flat), Shape{kJoints, B, 3}),
                           {1, 0, 2});
  return {shaped, rest};
}

// theta Bx24x3 + rest joints Bx24x3 -> posed joints Bx24x3 and per-joint
// global transforms Bx24x4x4.
template <class S>
std::pair<Tensor<S>, Tensor<S>> forward_kinematics(const BodyTensors<S>& body,
                                                   const Tensor<S>& theta,
                                                   const Tensor<S>& rest) {
  if (theta.rank() != 3 || theta.dim(1) != kJoints || theta.dim(2) != 3)
    fail("forward_kinematics", "expected Bx24x3 pose, got " + shape_str(theta.shape()));
  long B = theta.dim(0);
  Tensor<S> R_all = reshape(rodrigues(reshape(theta, Shape{B * kJoints, 3})),
                            Shape{B, kJoints, 3, 3});
  std::vector<Tensor<S>> R_local(kJoints), rest_j(kJoints);
  for (int j = 0; j < kJoints; ++j) {
    R_local[j] = reshape(slice(R_all, 1, j, 1), Shape{B, 3, 3});
    rest_j[j] = reshape(slice(rest, 1, j, 1), Shape{B, 3, 1});
  }
  std::vector<Tensor<S>> R_g(kJoints), t_g(kJoints);
  for (int j = 0; j < kJoints; ++j) {
    if (j == 0) {
      R_g[0] = R_local[0];
      t_g[0] = rest_j[0];
    } else {
      int p = body.parents[j];
      R_g[j] = bmm(R_g[p], R_local[j]);
      t_g[j] = add(bmm(R_g[p], sub(rest_j[j], rest_j[p])), t_g[p]);
    }
  }
  std::vector<Tensor<S>> joint_rows, tf_rows;
  Tensor<S> bottom({1, 1, 1, 4}, {S(0), S(0), S(0), S(1)});
  Tensor<S> bottom_b = expand(bottom, Shape{B, 1, 1, 4});
  for (int j = 0; j < kJoints; ++j) {
    joint_rows.push_back(reshape(t_g[j], Shape{B, 1, 3}));
    Tensor<S> top = concat<S>({R_g[j], t_g[j]}, 2);  // Bx3x4
    tf_rows.push_back(concat<S>({reshape(top, Shape{B, 1, 3, 4}), bottom_b}, 2));
  }
  return {concat<S>(joint_rows, 1), concat<S>(tf_rows, 1)};
}

// Applies the rest-pose-inverse correction: the translation column becomes
// t - R * rest so a joint's transform maps rest-frame vertices directly.
template <class S>
Tensor<S> skinning_transforms(const Tensor<S>& transforms, const Tensor<S>& rest) {
  long B = transforms.dim(0);
  Tensor<S> top = slice(transforms, 2, 0, 3);                       // Bx24x3x4
  Tensor<S> R = slice(top, 3, 0, 3);                                // Bx24x3x3
  Tensor<S> t = slice(top, 3, 3, 1);                                // Bx24x3x1
  Tensor<S> Rr = bmm(reshape(R, Shape{B * kJoints, 3, 3}),
                     reshape(rest, Shape{B * kJoints, 3, 1}));
  Tensor<S> corrected = sub(t, reshape(Rr, Shape{B, kJoints, 3, 1}));
  return concat<S>({R, corrected}, 3);  // Bx24x3x4
}

// shaped BxVx3 with corrected transforms Bx24x3x4 -> posed vertices BxVx3.
template <class S>
Tensor<S> linear_blend_skinning(const BodyTensors<S>& body, const Tensor<S>& shaped,
                                const Tensor<S>& transforms) {
  long B = shaped.dim(0);
  if (shaped.dim(1) != body.V)
    fail_shapes("linear_blend_skinning", "vertex count mismatch", shaped.shape(),
                Shape{B, body.V, 3});
  // blend the 12 transform coefficients per vertex with one matmul
  Tensor<S> flat = reshape(permute(reshape(transforms, Shape{B, kJoints, 12}), {1, 0, 2}),
                           Shape{kJoints, B * 12});
  Tensor<S> per_vertex = permute(reshape(matmul(body.skinning, flat), Shape{body.V, B, 3, 4}),
                                 {1, 0, 2, 3});  // BxVx3x4
  Tensor<S> out;
  for (int c = 0; c < 3; ++c) {
    Tensor<S> col = reshape(slice(per_vertex, 3, c, 1), Shape{B, body.V, 3});
    Tensor<S> coord = slice(shaped, 2, c, 1);  // BxVx1
    Tensor<S> term = mul(col, coord);
    out = c == 0 ? term : add(out, term);
  }
  return add(out, reshape(slice(per_vertex, 3, 3, 1), Shape{B, body.V, 3}));
}

template <class S>
Tensor<S> sample_markers(const BodyTensors<S>& body, const Tensor<S>& vertices) {
  return index_select(vertices, 1, body.marker_indices);
}

template <class S>
struct BodyForward {
  Tensor<S> shaped;    // BxVx3
  Tensor<S> rest;      // Bx24x3
  Tensor<S> joints;    // Bx24x3 posed
  Tensor<S> vertices;  // BxVx3 posed
  Tensor<S> markers;   // Bx26x3
};

template <class S>
BodyForward<S> body_forward(const BodyTensors<S>& body, const Tensor<S>& theta,
                            const Tensor<S>& beta) {
  BodyForward<S> out;
  auto [shaped, rest] = shape_and_regress(body, beta);
  auto [joints, transforms] = forward_kinematics(body, theta, rest);
  Tensor<S> corrected = skinning_transforms<S>(transforms, rest);
  out.shaped = shaped;
  out.rest = rest;
  out.joints = joints;
  out.vertices = linear_blend_skinning(body, shaped, corrected);
  out.markers = sample_markers(body, out.vertices);
  return out;
}

// ---------------------------------------------------------------------------
// Container round trip
// ---------------------------------------------------------------------------

inline Container body_to_container(const BodyModel& m) {
  Container c;
  c.kind = "bodymodel";
  c.meta["seed"] = m.seed;
  c.meta["vertices"] = m.vertex_count;
  c.meta["parents"] = std::vector<int>(m.parents.begin(), m.parents.end());
  c.meta["markers"] = std::vector<long>(m.marker_indices.begin(), m.marker_indices.end());
  std::vector<int> faces;
  faces.reserve(static_cast<size_t>(m.faces.size()));
  for (long f = 0; f < m.faces.rows(); ++f)
    for (int k = 0; k < 3; ++k) faces.push_back(m.faces(f, k));
  c.meta["faces"] = faces;
  auto put = [&](const std::string& name, const Eigen::MatrixXd& mat) {
    NamedBuffer& t = c.add(name, Shape{mat.rows(), mat.cols()});
    for (long r = 0; r < mat.rows(); ++r)
      for (long col = 0; col < mat.cols(); ++col)
        t.data[r * mat.cols() + col] = static_cast<float>(mat(r, col));
  };
  put("template", m.template_vertices);
  put("regressor", m.joint_regressor);
  put("skinning", m.skinning_weights);
  for (int s = 0; s < kShapeDims; ++s)
    put("blendshape." + std::to_string(s), m.shape_blendshapes[s]);
  return c;
}

inline BodyModel body_from_container(const Container& c) {
  if (c.kind != "bodymodel") fail("bodymodel", "container kind is '" + c.kind + "'");
  BodyModel m;
  m.seed = c.meta.value("seed", 0ull);
  m.vertex_count = c.meta.at("vertices").get<long>();
  auto parents = c.meta.at("parents").get<std::vector<int>>();
  if (parents.size() != kJoints) fail("bodymodel", "bad kinematic tree length");
  std::copy(parents.begin(), parents.end(), m.parents.begin());
  auto markers = c.meta.at("markers").get<std::vector<long>>();
  if (markers.size() != kMarkers) fail("bodymodel", "bad marker count");
  std::copy(markers.begin(), markers.end(), m.marker_indices.begin());
  auto faces = c.meta.at("faces").get<std::vector<int>>();
  m.faces.resize(static_cast<long>(faces.size()) / 3, 3);
  for (long f = 0; f < m.faces.rows(); ++f)
    for (int k = 0; k < 3; ++k) m.faces(f, k) = faces[f * 3 + k];
  auto get = [&](const std::string& name) {
    const NamedBuffer& t = c.require(name);
    Eigen::MatrixXd mat(t.shape[0], t.shape[1]);
    for (long r = 0; r < mat.rows(); ++r)
      for (long col = 0; col < mat.cols(); ++col)
        mat(r, col) = static_cast<double>(t.data[r * mat.cols() + col]);
    return mat;
  };
  m.template_vertices = get("template");
  m.joint_regressor = get("regressor");
  m.skinning_weights = get("skinning");
  m.shape_blendshapes.resize(kShapeDims);
  for (int s = 0; s < kShapeDims; ++s)
    m.shape_blendshapes[s] = get("blendshape." + std::to_string(s));
  validate_model(m);
  return m;
}

}  // namespace tar

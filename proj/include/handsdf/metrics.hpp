#pragma once

// Reconstruction metrics: symmetric squared Chamfer distance (mm^2), F-score
// at millimeter thresholds, voxelized mesh-mesh intersection volume (cm^3),
// and per-joint end-point error between hand poses (mm). Nearest neighbors
// go through an exact kd-tree; winding numbers decide inside/outside.

#include "handsdf/core.hpp"
#include "handsdf/kinematics.hpp"
#include "handsdf/mesh.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

namespace handsdf {

inline double squared_distance(const Vec3& a, const Vec3& b) {
  return (a - b).squaredNorm();
}

// ---------------------------------------------------------------------------
// Exact kd-tree over 3D points.

class KdTree3 {
 public:
  explicit KdTree3(const std::vector<Vec3>& points) : points_(points) {
    require(!points_.empty(), "kd-tree needs at least one point");
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0u);
    nodes_.reserve(points_.size());
    root_ = build(0, points_.size());
  }

  /// Squared distance to the nearest stored point.
  double nearest_squared(const Vec3& q) const {
    double best = std::numeric_limits<double>::infinity();
    search(root_, q, best);
    return best;
  }

 private:
  struct Node {
    std::size_t point = 0;
    int axis = 0;
    int left = -1;
    int right = -1;
  };

  int build(std::size_t begin, std::size_t end) {
    if (begin >= end) return -1;
    // Split on the widest axis of this subset.
    Vec3 lo = points_[order_[begin]], hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) {
                       return points_[a][axis] < points_[b][axis];
                     });
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{order_[mid], axis, -1, -1});
    const int left = build(begin, mid);
    const int right = build(mid + 1, end);
    nodes_[static_cast<std::size_t>(id)].left = left;
    nodes_[static_cast<std::size_t>(id)].right = right;
    return id;
  }

  void search(int id, const Vec3& q, double& best) const {
    if (id < 0) return;
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    best = std::min(best, squared_distance(q, points_[n.point]));
    const double delta = q[n.axis] - points_[n.point][n.axis];
    const int near = delta < 0.0 ? n.left : n.right;
    const int far = delta < 0.0 ? n.right : n.left;
    search(near, q, best);
    if (delta * delta < best) search(far, q, best);
  }

  std::vector<Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

// ---------------------------------------------------------------------------
// Point-set metrics.

/// Symmetric mean of squared nearest-neighbor distances, in mm^2.
inline double chamfer_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  require(!a.empty() && !b.empty(), "chamfer distance needs non-empty point sets");
  const KdTree3 tree_a(a);
  const KdTree3 tree_b(b);
  double sum_ab = 0.0, sum_ba = 0.0;
  for (const auto& p : a) sum_ab += tree_b.nearest_squared(p);
  for (const auto& p : b) sum_ba += tree_a.nearest_squared(p);
  return sum_ab / static_cast<double>(a.size()) + sum_ba / static_cast<double>(b.size());
}

/// Harmonic mean of precision and recall at `threshold` mm ("within" is
/// inclusive); 0 when both are 0.
inline double f_score(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt,
                      double threshold) {
  require(!pred.empty() && !gt.empty(), "f-score needs non-empty point sets");
  require(threshold > 0.0, "f-score threshold must be positive");
  const double t2 = threshold * threshold;
  const KdTree3 tree_gt(gt);
  const KdTree3 tree_pred(pred);
  std::size_t hit_pred = 0, hit_gt = 0;
  for (const auto& p : pred)
    if (tree_gt.nearest_squared(p) <= t2) ++hit_pred;
  for (const auto& p : gt)
    if (tree_pred.nearest_squared(p) <= t2) ++hit_gt;
  const double precision = static_cast<double>(hit_pred) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(hit_gt) / static_cast<double>(gt.size());
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

// ---------------------------------------------------------------------------
// Winding numbers and mesh queries.

/// Generalized winding number of `p` w.r.t. the mesh (sums signed solid
/// angles over triangles; ~1 inside an outward-oriented closed surface).
inline double winding_number(const Mesh& mesh, const Vec3& p) {
  double total = 0.0;
  for (const auto& t : mesh.triangles) {
    const Vec3 a = mesh.vertices[static_cast<std::size_t>(t[0])] - p;
    const Vec3 b = mesh.vertices[static_cast<std::size_t>(t[1])] - p;
    const Vec3 c = mesh.vertices[static_cast<std::size_t>(t[2])] - p;
    const double la = a.norm(), lb = b.norm(), lc = c.norm();
    const double det = a.dot(b.cross(c));
    const double denom = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
    total += 2.0 * std::atan2(det, denom);
  }
  return total / (4.0 * kPi);
}

/// Closest point on triangle abc to p (Ericson's region test).
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

inline double distance_to_mesh(const Mesh& mesh, const Vec3& p) {
  require(!mesh.triangles.empty(), "mesh has no triangles");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& t : mesh.triangles) {
    const Vec3 q = closest_point_on_triangle(p, mesh.vertices[static_cast<std::size_t>(t[0])],
                                             mesh.vertices[static_cast<std::size_t>(t[1])],
                                             mesh.vertices[static_cast<std::size_t>(t[2])]);
    best = std::min(best, (p - q).squaredNorm());
  }
  return std::sqrt(best);
}

/// Voxelized intersection volume of two closed meshes, in cm^3. Voxel
/// centers tile the AABB overlap; a center counts when the winding number of
/// both meshes exceeds 1/2. Open meshes are flagged, not rejected.
inline double intersection_volume(const Mesh& mesh_a, const Mesh& mesh_b, double voxel_mm,
                                  unsigned threads = 1, bool* warn_open = nullptr) {
  require(voxel_mm > 0.0, "voxel size must be positive");
  if (warn_open) *warn_open = !is_watertight(mesh_a) || !is_watertight(mesh_b);
  if (mesh_a.triangles.empty() || mesh_b.triangles.empty()) return 0.0;
  auto mesh_aabb = [](const Mesh& m) {
    Box3 box{m.vertices.front(), m.vertices.front()};
    for (const auto& v : m.vertices) {
      box.lo = box.lo.cwiseMin(v);
      box.hi = box.hi.cwiseMax(v);
    }
    return box;
  };
  const Box3 overlap = mesh_aabb(mesh_a).intersection(mesh_aabb(mesh_b));
  if (!overlap.valid()) return 0.0;
  const Vec3 ext = overlap.extent();
  const int nx = static_cast<int>(std::floor(ext.x() / voxel_mm + 1e-9));
  const int ny = static_cast<int>(std::floor(ext.y() / voxel_mm + 1e-9));
  const int nz = static_cast<int>(std::floor(ext.z() / voxel_mm + 1e-9));
  if (nx <= 0 || ny <= 0 || nz <= 0) return 0.0;

  std::vector<std::int64_t> block_counts(static_cast<std::size_t>(nz), 0);
  parallel_for_blocks(
      static_cast<std::size_t>(nz), 1,
      [&](std::size_t z0, std::size_t z1, std::size_t) {
        for (std::size_t iz = z0; iz < z1; ++iz) {
          std::int64_t count = 0;
          for (int iy = 0; iy < ny; ++iy) {
            for (int ix = 0; ix < nx; ++ix) {
              const Vec3 center = overlap.lo + voxel_mm * Vec3(ix + 0.5, iy + 0.5,
                                                               static_cast<double>(iz) + 0.5);
              if (winding_number(mesh_a, center) > 0.5 && winding_number(mesh_b, center) > 0.5)
                ++count;
            }
          }
          block_counts[iz] = count;
        }
      },
      threads);
  std::int64_t total = 0;
  for (const auto c : block_counts) total += c;
  return static_cast<double>(total) * voxel_mm * voxel_mm * voxel_mm / 1000.0;
}

// ---------------------------------------------------------------------------
// Hand pose error.

/// Mean Euclidean distance between corresponding articulated-joint positions,
/// computed in the wrist frame (the global pose does not participate).
inline double end_point_error(const HandPose& pose_a, const HandPose& pose_b,
                              const HandModel& model) {
  const FkResult fa = forward_kinematics(model, pose_a.articulation);
  const FkResult fb = forward_kinematics(model, pose_b.articulation);
  double sum = 0.0;
  for (int j = 1; j < kNumFrames; ++j)
    sum += (fa.joint_position(j) - fb.joint_position(j)).norm();
  return sum / static_cast<double>(kNumJoints);
}

// ---------------------------------------------------------------------------
// Aggregated report.

struct MetricConfig {
  std::size_t surface_samples = 10000;
  std::uint64_t sample_seed = 0;
  double f5_threshold = 5.0;   // mm
  double f10_threshold = 10.0; // mm
  double voxel_mm = 1.0;
};

struct MetricReport {
  double chamfer_mm2 = 0.0;
  double f5 = 0.0;
  double f10 = 0.0;
  double intersection_volume_cm3 = 0.0;
  bool has_intersection = false;
  double epe_mm = 0.0;
  bool has_epe = false;
  bool open_mesh_warning = false;
  MetricConfig config;
};

inline nlohmann::json metric_report_to_json(const MetricReport& r) {
  nlohmann::json j;
  j["chamfer_mm2"] = r.chamfer_mm2;
  j["chamfer_convention"] = "symmetric mean of squared nearest-neighbor distances";
  j["f5"] = r.f5;
  j["f10"] = r.f10;
  j["thresholds_mm"] = {r.config.f5_threshold, r.config.f10_threshold};
  j["surface_samples"] = r.config.surface_samples;
  j["sample_seed"] = r.config.sample_seed;
  if (r.has_intersection) {
    j["intersection_volume_cm3"] = r.intersection_volume_cm3;
    j["voxel_mm"] = r.config.voxel_mm;
  }
  if (r.has_epe) j["epe_mm"] = r.epe_mm;
  j["open_mesh_warning"] = r.open_mesh_warning;
  return j;
}

/// Chamfer + F-scores between two meshes via seeded area-weighted sampling;
/// optionally hand-object intersection volume when a hand mesh is supplied.
inline MetricReport evaluate_meshes(const Mesh& pred, const Mesh& gt, const MetricConfig& cfg,
                                    const Mesh* hand_mesh = nullptr, unsigned threads = 1) {
  MetricReport rep;
  rep.config = cfg;
  require(!pred.triangles.empty(), "predicted mesh is empty");
  require(!gt.triangles.empty(), "ground-truth mesh is empty");
  const auto pred_pts = sample_mesh_surface(pred, cfg.surface_samples, cfg.sample_seed);
  const auto gt_pts = sample_mesh_surface(gt, cfg.surface_samples, derive_seed(cfg.sample_seed, 1));
  rep.chamfer_mm2 = chamfer_distance(pred_pts, gt_pts);
  rep.f5 = f_score(pred_pts, gt_pts, cfg.f5_threshold);
  rep.f10 = f_score(pred_pts, gt_pts, cfg.f10_threshold);
  if (hand_mesh) {
    rep.intersection_volume_cm3 =
        intersection_volume(*hand_mesh, pred, cfg.voxel_mm, threads, &rep.open_mesh_warning);
    rep.has_intersection = true;
  }
  return rep;
}

}  // namespace handsdf

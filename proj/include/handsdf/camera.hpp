#pragma once

// Pinhole camera math. A weak-perspective estimate (scale s, 2D translation)
// is converted to a full-perspective rig by translating the scene with the
// depth offset (t_x, t_y, f/s); wrist-frame points are then projected through
// the intrinsics after the global hand transform.

#include "handsdf/core.hpp"

#include <nlohmann/json.hpp>

namespace handsdf {

/// Square-pixel, zero-skew intrinsics.
struct Intrinsics {
  double focal = 480.0;  // pixels
  Vec2 principal_point = Vec2(112.0, 112.0);
  int width = 224;
  int height = 224;

  void validate() const {
    require(focal > 0.0 && std::isfinite(focal), "focal must be positive");
    require(principal_point.x() >= 0.0 && principal_point.x() <= width &&
                principal_point.y() >= 0.0 && principal_point.y() <= height,
            "principal point must lie inside the image");
    require(width > 0 && height > 0, "image size must be positive");
  }
};

struct WeakPerspective {
  double scale = 1.0;              // dimensionless
  Vec2 translation_2d = Vec2::Zero();  // mm in the camera frame (applied before K)

  void validate() const {
    require(std::isfinite(scale) && translation_2d.allFinite(), "weak camera must be finite");
    require(scale > 0.0, "weak-perspective scale must be positive");
  }
};

struct CameraRig {
  Intrinsics intrinsics;
  Vec3 depth_offset = Vec3(0.0, 0.0, 480.0);  // (t_x, t_y, f/s) mm

  void validate() const {
    intrinsics.validate();
    require(depth_offset.z() > 0.0, "depth offset must place the scene in front of the camera");
  }
};

inline CameraRig weak_to_full(const WeakPerspective& weak, const Intrinsics& intrinsics) {
  weak.validate();
  intrinsics.validate();
  CameraRig rig;
  rig.intrinsics = intrinsics;
  rig.depth_offset =
      Vec3(weak.translation_2d.x(), weak.translation_2d.y(), intrinsics.focal / weak.scale);
  return rig;
}

/// Camera-frame position of a wrist-frame point: T_global(x) + depth offset.
inline Vec3 to_camera_frame(const CameraRig& rig, const RigidTransform& global_pose,
                            const Vec3& x) {
  return global_pose.apply(x) + rig.depth_offset;
}

/// Projects a wrist-frame point to pixel coordinates. The result may lie
/// outside the image bounds; callers clamp as needed.
inline Vec2 project(const CameraRig& rig, const RigidTransform& global_pose, const Vec3& x) {
  const Vec3 cam = to_camera_frame(rig, global_pose, x);
  if (cam.z() <= 0.0)
    throw BehindCameraError("point projects behind the camera (z = " + std::to_string(cam.z()) + ")");
  const double inv_z = 1.0 / cam.z();
  return Vec2(rig.intrinsics.focal * cam.x() * inv_z + rig.intrinsics.principal_point.x(),
              rig.intrinsics.focal * cam.y() * inv_z + rig.intrinsics.principal_point.y());
}

/// Projection that saturates at a minimal positive depth instead of throwing;
/// field evaluation has to be total over its domain even for degenerate poses.
inline Vec2 project_clamped(const CameraRig& rig, const RigidTransform& global_pose,
                            const Vec3& x, double min_depth = 1e-6) {
  Vec3 cam = to_camera_frame(rig, global_pose, x);
  cam.z() = std::max(cam.z(), min_depth);
  const double inv_z = 1.0 / cam.z();
  return Vec2(rig.intrinsics.focal * cam.x() * inv_z + rig.intrinsics.principal_point.x(),
              rig.intrinsics.focal * cam.y() * inv_z + rig.intrinsics.principal_point.y());
}

inline nlohmann::json camera_to_json(const CameraRig& rig) {
  return nlohmann::json{{"focal", rig.intrinsics.focal},
                        {"cx", rig.intrinsics.principal_point.x()},
                        {"cy", rig.intrinsics.principal_point.y()},
                        {"width", rig.intrinsics.width},
                        {"height", rig.intrinsics.height},
                        {"offset", {rig.depth_offset.x(), rig.depth_offset.y(), rig.depth_offset.z()}}};
}

inline CameraRig camera_from_json(const nlohmann::json& j) {
  CameraRig rig;
  rig.intrinsics.focal = j.at("focal").get<double>();
  rig.intrinsics.principal_point =
      Vec2(j.at("cx").get<double>(), j.at("cy").get<double>());
  rig.intrinsics.width = j.at("width").get<int>();
  rig.intrinsics.height = j.at("height").get<int>();
  const auto& o = j.at("offset");
  rig.depth_offset = Vec3(o[0].get<double>(), o[1].get<double>(), o[2].get<double>());
  rig.validate();
  return rig;
}

}  // namespace handsdf

#pragma once

// Parametric kinematic hand.
//
// The skeleton has 16 frames: the wrist (root, index 0) plus 15 articulated
// joints, three per finger, in the canonical order thumb, index, middle,
// ring, pinky, proximal to distal. Each joint carries a 3-DOF axis-angle
// rotation about its own origin; the 45 articulation scalars stack those
// vectors in joint order. The skin is a set of capsules: one per bone
// (parent origin -> joint origin, expressed in the parent frame) plus one
// fingertip capsule per distal joint.

#include "handsdf/core.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace handsdf {

inline constexpr int kNumFrames = 16;   // wrist + 15 joints
inline constexpr int kNumJoints = 15;   // articulated joints
inline constexpr int kArticulationDof = 45;
inline constexpr int kJointsPerFinger = 3;
inline constexpr int kNumFingers = 5;

// ---------------------------------------------------------------------------

/// One skin capsule. The segment runs from `tail` to `head` in the local
/// frame of joint `frame`; the capsule sweeps rigidly with that frame.
struct Bone {
  int frame = 0;
  Vec3 tail = Vec3::Zero();
  Vec3 head = Vec3::Zero();
  double radius = 0.0;
  bool contact = false;
};

struct HandModel {
  // parent[0] == -1 (wrist is the root); bone_offsets[j] is joint j's rest
  // offset from its parent, in the parent frame.
  std::array<int, kNumFrames> joint_parents{};
  std::array<Vec3, kNumFrames> bone_offsets{};
  // Fingertip extension per finger, in the distal joint's local frame.
  std::array<Vec3, kNumFingers> tip_offsets{};
  std::vector<double> capsule_radii;   // one per bone
  std::vector<bool> contact_labels;    // one per bone

  std::vector<Bone> bones;  // derived from the fields above; see finalize()

  int parent(int joint) const { return joint_parents[static_cast<std::size_t>(joint)]; }
  bool is_leaf(int joint) const {
    for (int j = 1; j < kNumFrames; ++j)
      if (joint_parents[static_cast<std::size_t>(j)] == joint) return false;
    return true;
  }

  /// Rebuild the capsule list from topology, offsets, radii, and labels.
  /// Bones 0..14 map to joints 1..15 (segment parent->joint in the parent
  /// frame); bones 15..19 are the fingertip capsules of the distal joints.
  void finalize() {
    std::vector<int> leaves;
    for (int j = 1; j < kNumFrames; ++j)
      if (is_leaf(j)) leaves.push_back(j);
    const std::size_t num_bones = static_cast<std::size_t>(kNumJoints) + leaves.size();
    require(capsule_radii.size() == num_bones, "capsule_radii must have one entry per bone");
    require(contact_labels.size() == num_bones, "contact_labels must have one entry per bone");
    bones.clear();
    bones.reserve(num_bones);
    for (int j = 1; j < kNumFrames; ++j) {
      Bone b;
      b.frame = joint_parents[static_cast<std::size_t>(j)];
      b.tail = Vec3::Zero();
      b.head = bone_offsets[static_cast<std::size_t>(j)];
      b.radius = capsule_radii[static_cast<std::size_t>(j - 1)];
      b.contact = contact_labels[static_cast<std::size_t>(j - 1)];
      bones.push_back(b);
    }
    for (std::size_t f = 0; f < leaves.size(); ++f) {
      Bone b;
      b.frame = leaves[f];
      b.tail = Vec3::Zero();
      b.head = tip_offsets[f];
      b.radius = capsule_radii[static_cast<std::size_t>(kNumJoints) + f];
      b.contact = contact_labels[static_cast<std::size_t>(kNumJoints) + f];
      bones.push_back(b);
    }
  }

  void validate() const {
    require(joint_parents[0] == -1, "frame 0 must be the wrist root");
    for (int j = 1; j < kNumFrames; ++j) {
      const int p = joint_parents[static_cast<std::size_t>(j)];
      require(p >= 0 && p < j, "joint parents must form a tree in topological order");
      require(bone_offsets[static_cast<std::size_t>(j)].allFinite(), "bone offsets must be finite");
    }
    for (double r : capsule_radii) require(std::isfinite(r) && r > 0.0, "capsule radii must be positive");
    require(bones.size() == capsule_radii.size(), "model not finalized");
  }
};

/// Articulation (45 axis-angle scalars) plus the global rigid pose.
struct HandPose {
  VecX articulation = VecX::Zero(kArticulationDof);
  Vec3 global_rotation = Vec3::Zero();     // axis-angle
  Vec3 global_translation = Vec3::Zero();  // mm

  RigidTransform global_transform() const {
    return RigidTransform::from_axis_angle(global_rotation, global_translation);
  }

  /// Flat 51-scalar layout: 45 articulation, 3 rotation, 3 translation.
  VecX flatten() const {
    VecX v(kArticulationDof + 6);
    v.head(kArticulationDof) = articulation;
    v.segment<3>(kArticulationDof) = global_rotation;
    v.tail<3>() = global_translation;
    return v;
  }
  static HandPose unflatten(const VecX& v) {
    require(v.size() == kArticulationDof + 6, "hand pose must have 51 scalars");
    HandPose p;
    p.articulation = v.head(kArticulationDof);
    p.global_rotation = v.segment<3>(kArticulationDof);
    p.global_translation = v.tail<3>();
    return p;
  }

  bool canonical() const {
    if (!articulation.allFinite() || !global_rotation.allFinite() ||
        !global_translation.allFinite())
      return false;
    for (int j = 0; j < kNumJoints; ++j)
      if (articulation.segment<3>(3 * j).norm() >= kPi) return false;
    return true;
  }
};

inline Vec3 joint_axis_angle(const VecX& articulation, int joint) {
  // joint in 1..15; the wrist carries no articulation.
  return articulation.segment<3>(3 * (joint - 1));
}

// ---------------------------------------------------------------------------
// Forward kinematics.

/// Per-frame transforms of one articulated pose.
/// `wrist_to_joint[j]` maps wrist-frame points into joint j's local frame;
/// `joint_to_wrist[j]` is the inverse (the joint's placement).
struct FkResult {
  std::array<RigidTransform, kNumFrames> wrist_to_joint;
  std::array<RigidTransform, kNumFrames> joint_to_wrist;

  Vec3 joint_position(int j) const { return joint_to_wrist[static_cast<std::size_t>(j)].translation; }
};

inline FkResult forward_kinematics(const HandModel& model, const VecX& articulation) {
  require(articulation.size() == kArticulationDof, "articulation must have 45 scalars");
  require(articulation.allFinite(), "articulation must be finite");
  FkResult out;
  out.joint_to_wrist[0] = RigidTransform::identity();
  out.wrist_to_joint[0] = RigidTransform::identity();
  for (int j = 1; j < kNumFrames; ++j) {
    const int p = model.parent(j);
    const RigidTransform local{rodrigues(joint_axis_angle(articulation, j)),
                               model.bone_offsets[static_cast<std::size_t>(j)]};
    out.joint_to_wrist[static_cast<std::size_t>(j)] =
        out.joint_to_wrist[static_cast<std::size_t>(p)] * local;
    out.wrist_to_joint[static_cast<std::size_t>(j)] =
        out.joint_to_wrist[static_cast<std::size_t>(j)].inverse();
  }
  return out;
}

/// Stack of the 15 joint-local coordinates of a wrist-frame point
/// (the 45-dim articulation-aware coordinate map).
inline VecX wrist_to_joint_coords(const HandModel& model, const VecX& articulation,
                                  const Vec3& x) {
  require(x.allFinite(), "query point must be finite");
  const FkResult fk = forward_kinematics(model, articulation);
  VecX out(kArticulationDof);
  for (int j = 1; j < kNumFrames; ++j)
    out.segment<3>(3 * (j - 1)) = fk.wrist_to_joint[static_cast<std::size_t>(j)].apply(x);
  return out;
}

// ---------------------------------------------------------------------------
// Chain derivatives. For each frame j, placements W_j satisfy
// W_j = W_parent * [R(theta_j) | t_j]; derivatives with respect to every
// ancestor's axis-angle components follow by the product rule and power the
// analytic Jacobians used by the embedding and the pose refinement.

struct FkDerivatives {
  FkResult fk;
  // chain[j] lists the articulated joints on the path root->j (including j).
  std::array<std::vector<int>, kNumFrames> chain;
  // d_rotation[j][c][m], d_translation[j][c][m]: derivative of W_j's rotation
  // and translation w.r.t. component m of chain[j][c]'s axis-angle.
  std::array<std::vector<std::array<Mat3, 3>>, kNumFrames> d_rotation;
  std::array<std::vector<std::array<Vec3, 3>>, kNumFrames> d_translation;
};

inline FkDerivatives forward_kinematics_derivatives(const HandModel& model,
                                                    const VecX& articulation) {
  require(articulation.size() == kArticulationDof, "articulation must have 45 scalars");
  require(articulation.allFinite(), "articulation must be finite");
  FkDerivatives out;
  out.fk.joint_to_wrist[0] = RigidTransform::identity();
  out.fk.wrist_to_joint[0] = RigidTransform::identity();
  for (int j = 1; j < kNumFrames; ++j) {
    const std::size_t js = static_cast<std::size_t>(j);
    const std::size_t ps = static_cast<std::size_t>(model.parent(j));
    const Vec3 aa = joint_axis_angle(articulation, j);
    const Mat3 r_local = rodrigues(aa);
    const Vec3 t_local = model.bone_offsets[js];
    const RigidTransform& wp = out.fk.joint_to_wrist[ps];
    out.fk.joint_to_wrist[js] = wp * RigidTransform{r_local, t_local};
    out.fk.wrist_to_joint[js] = out.fk.joint_to_wrist[js].inverse();

    // Ancestor terms: d(W_p * B_j) = dW_p * B_j.
    out.chain[js] = out.chain[ps];
    out.d_rotation[js].resize(out.chain[ps].size() + 1);
    out.d_translation[js].resize(out.chain[ps].size() + 1);
    for (std::size_t c = 0; c < out.chain[ps].size(); ++c) {
      for (int m = 0; m < 3; ++m) {
        out.d_rotation[js][c][m] = out.d_rotation[ps][c][m] * r_local;
        out.d_translation[js][c][m] =
            out.d_rotation[ps][c][m] * t_local + out.d_translation[ps][c][m];
      }
    }
    // Own term: d(W_p * B_j)/dtheta_j = W_p * dB_j.
    const std::array<Mat3, 3> dr = rodrigues_derivatives(aa);
    const std::size_t own = out.chain[ps].size();
    for (int m = 0; m < 3; ++m) {
      out.d_rotation[js][own][m] = wp.rotation * dr[static_cast<std::size_t>(m)];
      out.d_translation[js][own][m] = Vec3::Zero();
    }
    out.chain[js].push_back(j);
  }
  return out;
}

/// 45x45 Jacobian of wrist_to_joint_coords w.r.t. the articulation vector.
inline MatX wrist_to_joint_coords_jacobian(const HandModel& model, const VecX& articulation,
                                           const Vec3& x) {
  const FkDerivatives d = forward_kinematics_derivatives(model, articulation);
  MatX jac = MatX::Zero(kArticulationDof, kArticulationDof);
  for (int j = 1; j < kNumFrames; ++j) {
    const std::size_t js = static_cast<std::size_t>(j);
    const RigidTransform& w = d.fk.joint_to_wrist[js];
    // block_j = R_j^T (x - t_j); differentiate through W_j.
    const Vec3 local = x - w.translation;
    for (std::size_t c = 0; c < d.chain[js].size(); ++c) {
      const int k = d.chain[js][c];
      for (int m = 0; m < 3; ++m) {
        const Mat3& dr = d.d_rotation[js][c][m];
        const Vec3& dt = d.d_translation[js][c][m];
        jac.block<3, 1>(3 * (j - 1), 3 * (k - 1) + m) =
            dr.transpose() * local - w.rotation.transpose() * dt;
      }
    }
  }
  return jac;
}

/// 45x3 Jacobian of wrist_to_joint_coords w.r.t. the query point.
inline MatX wrist_to_joint_coords_jacobian_x(const HandModel& model,
                                             const VecX& articulation) {
  const FkResult fk = forward_kinematics(model, articulation);
  MatX jac(kArticulationDof, 3);
  for (int j = 1; j < kNumFrames; ++j)
    jac.block<3, 3>(3 * (j - 1), 0) = fk.wrist_to_joint[static_cast<std::size_t>(j)].rotation;
  return jac;
}

// ---------------------------------------------------------------------------
// Capsule skin sampling.

struct SurfacePoint {
  Vec3 position = Vec3::Zero();  // wrist frame, mm
  int bone = 0;
  bool contact = false;
};

/// Deterministic quasi-uniform point on the unit-area parameterization of a
/// capsule surface. `u`, `v` in [0,1). Returns a point in the capsule's
/// segment frame (segment from `a` to `b`, radius `r`).
inline Vec3 capsule_surface_point(const Vec3& a, const Vec3& b, double r, double u, double v) {
  const Vec3 axis = b - a;
  const double len = axis.norm();
  Vec3 ez = len > 1e-12 ? Vec3(axis / len) : Vec3::UnitZ();
  // Stable orthonormal frame around the axis.
  const Vec3 ref = std::abs(ez.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  const Vec3 ex = ez.cross(ref).normalized();
  const Vec3 ey = ez.cross(ex);

  const double side_area = 2.0 * kPi * r * len;
  const double cap_area = 4.0 * kPi * r * r;  // both hemispheres
  const double t = u * (side_area + cap_area);
  const double phi = 2.0 * kPi * v;
  const Vec3 radial = std::cos(phi) * ex + std::sin(phi) * ey;
  if (t < side_area && len > 1e-12) {
    const double h = (t / side_area) * len;
    return a + h * ez + r * radial;
  }
  // Equal-area mapping over both hemispherical caps: w in [-1, 1].
  const double w = 2.0 * (t - side_area) / cap_area - 1.0;
  const double cz = w >= 0.0 ? w : -w;          // |cos| toward the cap pole
  const double s = std::sqrt(std::max(0.0, 1.0 - cz * cz));
  const Vec3 center = w >= 0.0 ? b : a;
  const double zsign = w >= 0.0 ? 1.0 : -1.0;
  return center + r * (s * radial + zsign * cz * ez);
}

/// Exact distance from a point to the capsule surface (unsigned).
inline double distance_to_capsule_surface(const Vec3& p, const Vec3& a, const Vec3& b, double r) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::abs((p - (a + t * ab)).norm() - r);
}

/// Quasi-uniform samples on every skin capsule, posed by forward kinematics.
/// Deterministic: sample k of n uses the golden-ratio lattice (k+0.5)/n,
/// frac(k*phi), offset per bone so bones do not repeat the same pattern.
inline std::vector<SurfacePoint> hand_surface_points(const HandModel& model,
                                                     const VecX& articulation,
                                                     int samples_per_bone) {
  require(samples_per_bone >= 1, "samples_per_bone must be >= 1");
  const FkResult fk = forward_kinematics(model, articulation);
  constexpr double kGolden = 0.6180339887498949;
  std::vector<SurfacePoint> out;
  out.reserve(model.bones.size() * static_cast<std::size_t>(samples_per_bone));
  for (std::size_t b = 0; b < model.bones.size(); ++b) {
    const Bone& bone = model.bones[b];
    const RigidTransform& place = fk.joint_to_wrist[static_cast<std::size_t>(bone.frame)];
    for (int k = 0; k < samples_per_bone; ++k) {
      const double u = (k + 0.5) / samples_per_bone;
      double v = std::fmod(static_cast<double>(k) * kGolden + static_cast<double>(b) * 0.381966, 1.0);
      const Vec3 local = capsule_surface_point(bone.tail, bone.head, bone.radius, u, v);
      out.push_back(SurfacePoint{place.apply(local), static_cast<int>(b), bone.contact});
    }
  }
  return out;
}

/// Rest-frame skin samples plus everything needed to differentiate the posed
/// positions w.r.t. articulation (used by the pose refinement).
struct BoneLocalSample {
  int bone = 0;
  int frame = 0;
  bool contact = false;
  Vec3 local = Vec3::Zero();
};

inline std::vector<BoneLocalSample> capsule_rest_samples(const HandModel& model,
                                                         int samples_per_bone) {
  require(samples_per_bone >= 1, "samples_per_bone must be >= 1");
  constexpr double kGolden = 0.6180339887498949;
  std::vector<BoneLocalSample> out;
  out.reserve(model.bones.size() * static_cast<std::size_t>(samples_per_bone));
  for (std::size_t b = 0; b < model.bones.size(); ++b) {
    const Bone& bone = model.bones[b];
    for (int k = 0; k < samples_per_bone; ++k) {
      const double u = (k + 0.5) / samples_per_bone;
      double v = std::fmod(static_cast<double>(k) * kGolden + static_cast<double>(b) * 0.381966, 1.0);
      out.push_back(BoneLocalSample{static_cast<int>(b), bone.frame, bone.contact,
                                    capsule_surface_point(bone.tail, bone.head, bone.radius, u, v)});
    }
  }
  return out;
}

/// 3x45 Jacobian of one posed skin point w.r.t. articulation.
inline MatX posed_point_jacobian(const FkDerivatives& d, const BoneLocalSample& s) {
  MatX jac = MatX::Zero(3, kArticulationDof);
  const std::size_t f = static_cast<std::size_t>(s.frame);
  for (std::size_t c = 0; c < d.chain[f].size(); ++c) {
    const int k = d.chain[f][c];
    for (int m = 0; m < 3; ++m)
      jac.block<3, 1>(0, 3 * (k - 1) + m) =
          d.d_rotation[f][c][m] * s.local + d.d_translation[f][c][m];
  }
  return jac;
}

// ---------------------------------------------------------------------------
// Pose jitter (test-time corruption of the articulation estimate).

/// Adds zero-mean Gaussian noise (stddev `sigma`) to every articulation
/// entry, then re-clamps to the canonical range: entries to [-pi, pi] and
/// per-joint axis-angle norms to < pi. Global pose is untouched.
inline HandPose pose_jitter(const HandPose& pose, double sigma, std::uint64_t seed) {
  require(sigma >= 0.0, "sigma must be non-negative");
  if (sigma == 0.0) return pose;
  HandPose out = pose;
  Rng rng(derive_seed(seed, 0x6a177e5u));
  for (int i = 0; i < kArticulationDof; ++i)
    out.articulation[i] = std::clamp(pose.articulation[i] + rng.normal(0.0, sigma), -kPi, kPi);
  for (int j = 0; j < kNumJoints; ++j) {
    auto block = out.articulation.segment<3>(3 * j);
    const double n = block.norm();
    if (n >= kPi) block *= (kPi - 1e-9) / n;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Default model: fixed-topology capsule hand with average adult proportions.
// Canonical wrist frame: fingers along +y, thumb toward +x, palm facing +z.

inline HandModel default_hand_model() {
  HandModel m;
  m.joint_parents = {-1,
                     0, 1, 2,     // thumb
                     0, 4, 5,     // index
                     0, 7, 8,     // middle
                     0, 10, 11,   // ring
                     0, 13, 14};  // pinky
  auto v = [](double x, double y, double z) { return Vec3(x, y, z); };
  m.bone_offsets[0] = Vec3::Zero();
  // thumb: splayed from the wrist, shorter chain
  m.bone_offsets[1] = v(30.0, 25.0, 5.0);
  m.bone_offsets[2] = v(22.0, 24.0, 3.0);
  m.bone_offsets[3] = v(14.0, 20.0, 0.0);
  // index
  m.bone_offsets[4] = v(28.0, 88.0, 0.0);
  m.bone_offsets[5] = v(1.0, 45.0, 0.0);
  m.bone_offsets[6] = v(0.0, 26.0, 0.0);
  // middle
  m.bone_offsets[7] = v(8.0, 92.0, 0.0);
  m.bone_offsets[8] = v(0.0, 50.0, 0.0);
  m.bone_offsets[9] = v(0.0, 30.0, 0.0);
  // ring
  m.bone_offsets[10] = v(-12.0, 88.0, 0.0);
  m.bone_offsets[11] = v(-1.0, 45.0, 0.0);
  m.bone_offsets[12] = v(0.0, 28.0, 0.0);
  // pinky
  m.bone_offsets[13] = v(-30.0, 80.0, 0.0);
  m.bone_offsets[14] = v(-3.0, 34.0, 0.0);
  m.bone_offsets[15] = v(-1.0, 22.0, 0.0);
  // fingertip extensions, in each distal joint's local frame
  m.tip_offsets[0] = v(11.0, 16.0, 0.0);   // thumb
  m.tip_offsets[1] = v(0.0, 23.0, 0.0);    // index
  m.tip_offsets[2] = v(0.0, 25.0, 0.0);    // middle
  m.tip_offsets[3] = v(0.0, 24.0, 0.0);    // ring
  m.tip_offsets[4] = v(0.0, 19.0, 0.0);    // pinky

  // Bones 0..14 in joint order (thumb..pinky, proximal..distal), then tips.
  m.capsule_radii = {
      14.0, 10.0, 8.5,    // thumb: metacarpal-ish, proximal, distal
      15.0, 8.0, 7.0,     // index
      16.0, 8.5, 7.5,     // middle
      15.0, 8.0, 7.0,     // ring
      13.0, 7.0, 6.0,     // pinky
      8.0, 6.5, 7.0, 6.5, 5.5};  // fingertips
  // Contact regions: fingertip capsules plus the distal-pad (distal-joint)
  // bones of each finger.
  m.contact_labels.assign(20, false);
  for (int f = 0; f < kNumFingers; ++f) {
    m.contact_labels[static_cast<std::size_t>(kJointsPerFinger * f + 2)] = true;  // distal bone
    m.contact_labels[static_cast<std::size_t>(kNumJoints + f)] = true;            // tip
  }
  m.finalize();
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// JSON serialization.

inline nlohmann::json hand_model_to_json(const HandModel& m) {
  nlohmann::json j;
  j["joint_parents"] = m.joint_parents;
  auto vecs = nlohmann::json::array();
  for (const auto& o : m.bone_offsets) vecs.push_back({o.x(), o.y(), o.z()});
  j["bone_offsets_mm"] = vecs;
  auto tips = nlohmann::json::array();
  for (const auto& o : m.tip_offsets) tips.push_back({o.x(), o.y(), o.z()});
  j["tip_offsets_mm"] = tips;
  j["capsule_radii_mm"] = m.capsule_radii;
  j["contact_labels"] = m.contact_labels;
  return j;
}

inline HandModel hand_model_from_json(const nlohmann::json& j) {
  HandModel m;
  const auto parents = j.at("joint_parents").get<std::vector<int>>();
  require(parents.size() == static_cast<std::size_t>(kNumFrames), "joint_parents must have 16 entries");
  std::copy(parents.begin(), parents.end(), m.joint_parents.begin());
  const auto& offs = j.at("bone_offsets_mm");
  require(offs.size() == static_cast<std::size_t>(kNumFrames), "bone_offsets_mm must have 16 entries");
  for (std::size_t i = 0; i < static_cast<std::size_t>(kNumFrames); ++i)
    m.bone_offsets[i] = Vec3(offs[i][0].get<double>(), offs[i][1].get<double>(),
                             offs[i][2].get<double>());
  const auto& tips = j.at("tip_offsets_mm");
  require(tips.size() == static_cast<std::size_t>(kNumFingers), "tip_offsets_mm must have 5 entries");
  for (std::size_t i = 0; i < static_cast<std::size_t>(kNumFingers); ++i)
    m.tip_offsets[i] = Vec3(tips[i][0].get<double>(), tips[i][1].get<double>(),
                            tips[i][2].get<double>());
  m.capsule_radii = j.at("capsule_radii_mm").get<std::vector<double>>();
  m.contact_labels = j.at("contact_labels").get<std::vector<bool>>();
  m.finalize();
  m.validate();
  return m;
}

inline nlohmann::json hand_pose_to_json(const HandPose& p) {
  const VecX flat = p.flatten();
  return nlohmann::json{{"pose", std::vector<double>(flat.data(), flat.data() + flat.size())}};
}

inline HandPose hand_pose_from_json(const nlohmann::json& j) {
  const auto flat = j.at("pose").get<std::vector<double>>();
  return HandPose::unflatten(Eigen::Map<const VecX>(flat.data(), static_cast<Eigen::Index>(flat.size())));
}

}  // namespace handsdf

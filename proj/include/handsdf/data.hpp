#pragma once

// Synthetic grasp-scene generation and SDF supervision sampling: a primitive
// object is placed tangent to a posed capsule hand, query points are drawn
// with a near-surface bias (95% within a band around the surface, the rest
// uniform over the camera frustum intersected with the wrist-frame box), and
// everything serializes to a flat per-scene directory layout.

#include "handsdf/camera.hpp"
#include "handsdf/core.hpp"
#include "handsdf/field.hpp"
#include "handsdf/kinematics.hpp"
#include "handsdf/mesh.hpp"
#include "handsdf/metrics.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace handsdf {

inline constexpr double kNearSurfaceFraction = 0.95;
inline constexpr double kDefaultSurfaceBandMm = 10.0;
inline constexpr double kSceneHalfExtentMm = 150.0;

// ---------------------------------------------------------------------------
// Mesh-based ground-truth SDF.

/// Signed distance to a triangle mesh: magnitude from the closest triangle,
/// sign from the generalized winding number (> 1/2 means inside). For
/// non-watertight meshes the winding threshold still decides the sign but
/// `warn_open` is set.
inline double point_mesh_sdf(const Mesh& mesh, const Vec3& x, bool* warn_open = nullptr) {
  if (warn_open) *warn_open = !is_watertight(mesh);
  const double d = distance_to_mesh(mesh, x);
  return winding_number(mesh, x) > 0.5 ? -d : d;
}

/// Posed capsule skin as one watertight-per-component mesh.
inline Mesh build_hand_mesh(const HandModel& model, const VecX& articulation) {
  const FkResult fk = forward_kinematics(model, articulation);
  std::vector<Mesh> parts;
  parts.reserve(model.bones.size());
  for (const auto& bone : model.bones) {
    const RigidTransform& place = fk.joint_to_wrist[static_cast<std::size_t>(bone.frame)];
    parts.push_back(capsule_mesh(place.apply(bone.tail), place.apply(bone.head), bone.radius));
  }
  return merge_meshes(parts);
}

/// Posed capsule skin as an analytic union field.
inline AnalyticSdf build_hand_field(const HandModel& model, const VecX& articulation) {
  const FkResult fk = forward_kinematics(model, articulation);
  AnalyticSdf field;
  for (const auto& bone : model.bones) {
    const RigidTransform& place = fk.joint_to_wrist[static_cast<std::size_t>(bone.frame)];
    field.add(Primitive::capsule(place.apply(bone.tail), place.apply(bone.head), bone.radius));
  }
  return field;
}

// ---------------------------------------------------------------------------
// Scene specification.

struct SceneSpec {
  Primitive object;
  Mesh object_mesh;
  HandModel hand;
  HandPose pose;
  CameraRig camera;
  ImageTensor image;
  Box3 sample_bounds = Box3::cube(kSceneHalfExtentMm);
  std::uint64_t seed = 0;
};

struct SampleSet {
  std::vector<Vec3> points;        // wrist frame, mm
  std::vector<double> sdf_values;  // mm
  std::vector<bool> near_surface;

  std::size_t size() const { return points.size(); }
};

// ---------------------------------------------------------------------------
// Supervision sampling.

/// Draws `n` labeled points: floor(5% n) uniform over `bounds` clipped to the
/// camera frustum, the rest as surface points pushed along the normal by a
/// truncated Gaussian (stddev band/3, rejected beyond +-band). Labels come
/// from the exact analytic SDF.
inline SampleSet sample_points(const SceneSpec& scene, std::size_t n, double surface_band,
                               const Box3& bounds, std::uint64_t seed) {
  require(n >= 1, "need at least one sample");
  require(surface_band > 0.0, "surface band must be positive");
  require(bounds.valid(), "degenerate sampling bounds");
  const AnalyticSdf object(scene.object);
  const RigidTransform global = scene.pose.global_transform();
  Rng rng(derive_seed(seed, 0x5a4d91e5ULL));

  const std::size_t n_uniform =
      static_cast<std::size_t>(std::floor((1.0 - kNearSurfaceFraction) * static_cast<double>(n) + 1e-9));
  const std::size_t n_near = n - n_uniform;

  SampleSet out;
  out.points.reserve(n);
  out.sdf_values.reserve(n);
  out.near_surface.reserve(n);

  for (std::size_t i = 0; i < n_near; ++i) {
    const auto [p, normal] = sample_primitive_surface(scene.object, rng);
    double offset = rng.normal(0.0, surface_band / 3.0);
    int guard = 0;
    while (std::abs(offset) > surface_band) {
      offset = rng.normal(0.0, surface_band / 3.0);
      if (++guard > 10000) throw GenerationError("surface-band rejection failed to converge");
    }
    const Vec3 x = p + offset * normal;
    out.points.push_back(x);
    out.sdf_values.push_back(object.eval(x));
    out.near_surface.push_back(true);
  }
  for (std::size_t i = 0; i < n_uniform; ++i) {
    Vec3 x;
    bool ok = false;
    for (int attempt = 0; attempt < 10000; ++attempt) {
      x = rng.uniform_in_box(bounds);
      const Vec3 cam = to_camera_frame(scene.camera, global, x);
      if (cam.z() <= 0.0) continue;
      const Vec2 px(scene.camera.intrinsics.focal * cam.x() / cam.z() +
                        scene.camera.intrinsics.principal_point.x(),
                    scene.camera.intrinsics.focal * cam.y() / cam.z() +
                        scene.camera.intrinsics.principal_point.y());
      if (px.x() >= 0.0 && px.x() <= scene.camera.intrinsics.width - 1 && px.y() >= 0.0 &&
          px.y() <= scene.camera.intrinsics.height - 1) {
        ok = true;
        break;
      }
    }
    if (!ok) throw GenerationError("could not draw a uniform sample inside the camera frustum");
    out.points.push_back(x);
    out.sdf_values.push_back(object.eval(x));
    out.near_surface.push_back(false);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grasp-scene generation.

/// Canonical grasp articulations. Fingers curl about +x (toward the palm
/// normal +z), the thumb about -y.
inline VecX grasp_articulation(int which) {
  VecX art = VecX::Zero(kArticulationDof);
  auto set_finger = [&](int finger, double a1, double a2, double a3) {
    const int base = 3 * kJointsPerFinger * finger;
    if (finger == 0) {
      art[base + 1] = -a1;
      art[base + 4] = -a2;
      art[base + 7] = -a3;
    } else {
      art[base + 0] = a1;
      art[base + 3] = a2;
      art[base + 6] = a3;
    }
  };
  switch (which % 3) {
    case 0:  // power: everything wraps
      set_finger(0, 0.5, 0.6, 0.5);
      for (int f = 1; f < kNumFingers; ++f) set_finger(f, 0.9, 1.0, 0.6);
      break;
    case 1:  // pinch: thumb + index dominate
      set_finger(0, 0.6, 0.7, 0.6);
      set_finger(1, 1.0, 0.9, 0.7);
      for (int f = 2; f < kNumFingers; ++f) set_finger(f, 0.35, 0.3, 0.2);
      break;
    default:  // flat: barely curled
      for (int f = 0; f < kNumFingers; ++f) set_finger(f, 0.12, 0.1, 0.08);
      break;
  }
  return art;
}

inline Primitive random_graspable_primitive(PrimitiveKind kind, Rng& rng) {
  switch (kind) {
    case PrimitiveKind::kSphere:
      return Primitive::sphere(Vec3::Zero(), rng.uniform(22.0, 45.0));
    case PrimitiveKind::kBox: {
      const Vec3 half(rng.uniform(16.0, 34.0), rng.uniform(16.0, 34.0), rng.uniform(16.0, 34.0));
      return Primitive::box(Vec3::Zero(), half, rodrigues(0.4 * rng.unit_vector()));
    }
    case PrimitiveKind::kCapsule: {
      const double len = rng.uniform(40.0, 80.0);
      const Vec3 axis = rng.unit_vector();
      return Primitive::capsule(-0.5 * len * axis, 0.5 * len * axis, rng.uniform(14.0, 24.0));
    }
    case PrimitiveKind::kCylinder: {
      const double len = rng.uniform(40.0, 80.0);
      const Vec3 axis = rng.unit_vector();
      return Primitive::cylinder(-0.5 * len * axis, 0.5 * len * axis, rng.uniform(15.0, 25.0));
    }
  }
  throw InvalidInputError("unknown primitive kind");
}

/// Ray-march the hand/object union and record an object-visibility mask plus
/// normalized depth. Channels: [object mask, depth].
inline ImageTensor render_scene_image(const Primitive& object, const HandModel& hand,
                                      const HandPose& pose, const CameraRig& camera,
                                      unsigned threads = 1) {
  const AnalyticSdf object_field(object);
  const AnalyticSdf hand_field = build_hand_field(hand, pose.articulation);
  const RigidTransform global = pose.global_transform();
  const RigidTransform to_wrist = global.inverse();
  const Vec3 offset = camera.depth_offset;
  const double z0 = offset.z();
  const double near = std::max(1.0, z0 - 250.0);
  const double far = z0 + 250.0;

  ImageTensor img = ImageTensor::zeros(camera.intrinsics.height, camera.intrinsics.width, 2);
  const double f = camera.intrinsics.focal;
  const Vec2 c = camera.intrinsics.principal_point;
  parallel_for_blocks(
      static_cast<std::size_t>(img.height), 4,
      [&](std::size_t y0, std::size_t y1, std::size_t) {
        for (std::size_t y = y0; y < y1; ++y) {
          for (int x = 0; x < img.width; ++x) {
            const Vec3 dir =
                Vec3((x - c.x()) / f, (static_cast<double>(y) - c.y()) / f, 1.0).normalized();
            double t = near;
            bool hit = false;
            Vec3 wrist_pt = Vec3::Zero();
            for (int step = 0; step < 256 && t < far; ++step) {
              const Vec3 cam_pt = t * dir;
              wrist_pt = to_wrist.apply(cam_pt - offset);
              const double d =
                  std::min(object_field.eval(wrist_pt), hand_field.eval(wrist_pt));
              if (d < 0.05) {
                hit = true;
                break;
              }
              t += d;
            }
            if (hit) {
              const bool object_front = object_field.eval(wrist_pt) <= hand_field.eval(wrist_pt);
              img.at(static_cast<int>(y), x, 0) = object_front ? 1.0f : 0.0f;
              img.at(static_cast<int>(y), x, 1) =
                  static_cast<float>(std::clamp((t - near) / (far - near), 0.0, 1.0));
            }
          }
        }
      },
      threads);
  return img;
}

/// Deterministic grasp scene: canonical articulation with jitter, a graspable
/// primitive slid along the palm normal until it kisses the capsule skin
/// (penetration under 1 mm), and a rendered mask/depth image.
inline SceneSpec generate_grasp_scene(PrimitiveKind kind, std::uint64_t seed,
                                      unsigned threads = 1) {
  Rng rng(derive_seed(seed, 0x6ce8e));
  SceneSpec scene;
  scene.seed = seed;
  scene.hand = default_hand_model();

  HandPose pose;
  pose.articulation = grasp_articulation(static_cast<int>(rng.index(3)));
  pose = pose_jitter(pose, 0.06, rng.next_u64());
  pose.global_rotation = rng.uniform(0.0, 0.25) * rng.unit_vector();
  pose.global_translation = Vec3(rng.uniform(-15.0, 15.0), rng.uniform(-15.0, 15.0),
                                 rng.uniform(-15.0, 15.0));
  scene.pose = pose;

  WeakPerspective weak;
  weak.scale = rng.uniform(1.1, 1.4);
  weak.translation_2d = Vec2(rng.uniform(-8.0, 8.0), rng.uniform(-8.0, 8.0));
  scene.camera = weak_to_full(weak, Intrinsics{});

  // Palm anchor: the metacarpal capsules live in the wrist frame, so the palm
  // plane and its +z normal are articulation-independent.
  Vec3 palm_center = Vec3::Zero();
  for (int f = 0; f < kNumFingers; ++f)
    palm_center += 0.5 * scene.hand.bone_offsets[static_cast<std::size_t>(1 + kJointsPerFinger * f)];
  palm_center /= static_cast<double>(kNumFingers);
  const Vec3 palm_normal = Vec3::UnitZ();

  const Primitive shape = random_graspable_primitive(kind, rng);
  const auto hand_points = hand_surface_points(scene.hand, pose.articulation, 128);

  auto min_sdf_at = [&](double d) {
    const Primitive placed = shape.translated(palm_center + d * palm_normal);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& hp : hand_points) best = std::min(best, primitive_sdf(placed, hp.position));
    return best;
  };

  // Slide the object along the palm normal until it just touches the skin:
  // min SDF over the hand surface lands in [-0.8, -0.2] mm.
  double lo = -60.0, hi = 220.0;
  if (!(min_sdf_at(lo) < -0.8 && min_sdf_at(hi) > -0.2))
    throw GenerationError("object placement could not bracket the contact distance");
  double d = 0.0;
  bool placed_ok = false;
  for (int iter = 0; iter < 80; ++iter) {
    d = 0.5 * (lo + hi);
    const double s = min_sdf_at(d);
    if (s >= -0.8 && s <= -0.2) {
      placed_ok = true;
      break;
    }
    (s < -0.8 ? lo : hi) = d;
  }
  if (!placed_ok) throw GenerationError("object placement bisection did not converge");
  scene.object = shape.translated(palm_center + d * palm_normal);
  scene.object_mesh = primitive_mesh(scene.object);
  scene.sample_bounds = Box3::cube(kSceneHalfExtentMm);
  scene.image = render_scene_image(scene.object, scene.hand, scene.pose, scene.camera, threads);
  return scene;
}

// ---------------------------------------------------------------------------
// Serialization.

inline nlohmann::json primitive_to_json(const Primitive& p) {
  nlohmann::json j;
  j["kind"] = to_string(p.kind);
  j["center"] = {p.center.x(), p.center.y(), p.center.z()};
  j["radius"] = p.radius;
  j["half_extents"] = {p.half_extents.x(), p.half_extents.y(), p.half_extents.z()};
  std::vector<double> rot(9);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot[static_cast<std::size_t>(3 * r + c)] = p.rotation(r, c);
  j["rotation"] = rot;
  j["a"] = {p.a.x(), p.a.y(), p.a.z()};
  j["b"] = {p.b.x(), p.b.y(), p.b.z()};
  return j;
}

inline Primitive primitive_from_json(const nlohmann::json& j) {
  Primitive p;
  p.kind = primitive_kind_from_string(j.at("kind").get<std::string>());
  auto vec = [&](const char* key) {
    const auto& v = j.at(key);
    return Vec3(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
  };
  p.center = vec("center");
  p.radius = j.at("radius").get<double>();
  p.half_extents = vec("half_extents");
  const auto rot = j.at("rotation").get<std::vector<double>>();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) p.rotation(r, c) = rot[static_cast<std::size_t>(3 * r + c)];
  p.a = vec("a");
  p.b = vec("b");
  return p;
}

// Image format: magic "IMGF", u32 height, width, channels, then f32 data in
// [y][x][c] order. Little-endian.

inline void save_image(const std::string& path, const ImageTensor& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write("IMGF", 4);
  const std::uint32_t dims[3] = {static_cast<std::uint32_t>(img.height),
                                 static_cast<std::uint32_t>(img.width),
                                 static_cast<std::uint32_t>(img.channels)};
  os.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  os.write(reinterpret_cast<const char*>(img.data.data()),
           static_cast<std::streamsize>(img.data.size() * sizeof(float)));
  if (!os) throw IoError("failed writing " + path);
}

inline ImageTensor load_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "IMGF") throw IoError(path + " is not an IMGF file");
  std::uint32_t dims[3];
  is.read(reinterpret_cast<char*>(dims), sizeof(dims));
  ImageTensor img = ImageTensor::zeros(static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                                       static_cast<int>(dims[2]));
  is.read(reinterpret_cast<char*>(img.data.data()),
          static_cast<std::streamsize>(img.data.size() * sizeof(float)));
  if (!is) throw IoError("truncated image file " + path);
  return img;
}

// Sample format: magic "SMPL", u32 n, then per point f32 x, y, z, sdf, flag.

inline void save_samples(const std::string& path, const SampleSet& samples) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write("SMPL", 4);
  const std::uint32_t n = static_cast<std::uint32_t>(samples.size());
  os.write(reinterpret_cast<const char*>(&n), sizeof(n));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const float row[5] = {static_cast<float>(samples.points[i].x()),
                          static_cast<float>(samples.points[i].y()),
                          static_cast<float>(samples.points[i].z()),
                          static_cast<float>(samples.sdf_values[i]),
                          samples.near_surface[i] ? 1.0f : 0.0f};
    os.write(reinterpret_cast<const char*>(row), sizeof(row));
  }
  if (!os) throw IoError("failed writing " + path);
}

inline SampleSet load_samples(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "SMPL") throw IoError(path + " is not an SMPL file");
  std::uint32_t n = 0;
  is.read(reinterpret_cast<char*>(&n), sizeof(n));
  SampleSet out;
  out.points.reserve(n);
  out.sdf_values.reserve(n);
  out.near_surface.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    float row[5];
    is.read(reinterpret_cast<char*>(row), sizeof(row));
    out.points.push_back(Vec3(row[0], row[1], row[2]));
    out.sdf_values.push_back(row[3]);
    out.near_surface.push_back(row[4] != 0.0f);
  }
  if (!is) throw IoError("truncated sample file " + path);
  return out;
}

// Scene directory layout: hand.json, camera.json, object.json, object.obj,
// image.npyish, samples.bin.

struct StoredScene {
  HandModel model;
  HandPose pose;
  CameraRig camera;
  ImageTensor image;
  Mesh object_mesh;
  Primitive object;
  SampleSet samples;
  Box3 sample_bounds = Box3::cube(kSceneHalfExtentMm);
};

inline void write_scene_dir(const std::string& dir, const SceneSpec& scene,
                            const SampleSet& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    nlohmann::json hand;
    hand["model"] = hand_model_to_json(scene.hand);
    hand["pose"] = hand_pose_to_json(scene.pose);
    std::ofstream os(dir + "/hand.json");
    if (!os) throw IoError("cannot write " + dir + "/hand.json");
    os << hand.dump(2) << "\n";
  }
  {
    std::ofstream os(dir + "/camera.json");
    if (!os) throw IoError("cannot write " + dir + "/camera.json");
    os << camera_to_json(scene.camera).dump(2) << "\n";
  }
  {
    nlohmann::json obj = primitive_to_json(scene.object);
    obj["sample_bounds_mm"] = {scene.sample_bounds.lo.x(), scene.sample_bounds.lo.y(),
                               scene.sample_bounds.lo.z(), scene.sample_bounds.hi.x(),
                               scene.sample_bounds.hi.y(), scene.sample_bounds.hi.z()};
    obj["seed"] = scene.seed;
    std::ofstream os(dir + "/object.json");
    if (!os) throw IoError("cannot write " + dir + "/object.json");
    os << obj.dump(2) << "\n";
  }
  save_mesh(dir + "/object.obj", scene.object_mesh);
  save_image(dir + "/image.npyish", scene.image);
  save_samples(dir + "/samples.bin", samples);
}

inline StoredScene load_scene_dir(const std::string& dir) {
  auto read_json = [](const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    return nlohmann::json::parse(is);
  };
  StoredScene out;
  const nlohmann::json hand = read_json(dir + "/hand.json");
  out.model = hand_model_from_json(hand.at("model"));
  out.pose = hand_pose_from_json(hand.at("pose"));
  out.camera = camera_from_json(read_json(dir + "/camera.json"));
  const nlohmann::json obj = read_json(dir + "/object.json");
  out.object = primitive_from_json(obj);
  const auto& sb = obj.at("sample_bounds_mm");
  out.sample_bounds = Box3{Vec3(sb[0].get<double>(), sb[1].get<double>(), sb[2].get<double>()),
                           Vec3(sb[3].get<double>(), sb[4].get<double>(), sb[5].get<double>())};
  out.object_mesh = load_mesh(dir + "/object.obj");
  out.image = load_image(dir + "/image.npyish");
  out.samples = load_samples(dir + "/samples.bin");
  return out;
}

}  // namespace handsdf

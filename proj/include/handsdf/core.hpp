#pragma once

// Shared geometric primitives, error types, and deterministic RNG utilities
// used across the hand-conditioned SDF toolkit. All lengths are millimeters
// unless a name says otherwise.

#include <Eigen/Dense>

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace handsdf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

inline constexpr double kPi = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// Errors. The CLI maps these onto exit codes (invalid input 2, diverged 3,
// i/o 4), so library code should throw the most specific type that applies.

struct InvalidInputError : std::runtime_error {
  explicit InvalidInputError(const std::string& what) : std::runtime_error(what) {}
};

struct BehindCameraError : InvalidInputError {
  explicit BehindCameraError(const std::string& what) : InvalidInputError(what) {}
};

struct ShapeError : InvalidInputError {
  explicit ShapeError(const std::string& what) : InvalidInputError(what) {}
};

struct DivergedError : std::runtime_error {
  explicit DivergedError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

struct GenerationError : std::runtime_error {
  explicit GenerationError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidInputError(what);
}

inline bool all_finite(const Eigen::Ref<const VecX>& v) {
  return v.allFinite();
}

// ---------------------------------------------------------------------------
// Axis-aligned box.

struct Box3 {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();

  static Box3 centered(const Vec3& center, const Vec3& half_extent) {
    return Box3{center - half_extent, center + half_extent};
  }
  static Box3 cube(double half_extent) {
    return centered(Vec3::Zero(), Vec3::Constant(half_extent));
  }

  Vec3 center() const { return 0.5 * (lo + hi); }
  Vec3 extent() const { return hi - lo; }
  double diagonal() const { return extent().norm(); }
  bool valid() const { return (hi.array() > lo.array()).all(); }

  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
  Vec3 clamp(const Vec3& p) const {
    return p.cwiseMax(lo).cwiseMin(hi);
  }
  // Euclidean distance to the box; zero inside.
  double exterior_distance(const Vec3& p) const {
    return (p - clamp(p)).norm();
  }
  Box3 intersection(const Box3& other) const {
    return Box3{lo.cwiseMax(other.lo), hi.cwiseMin(other.hi)};
  }
};

// ---------------------------------------------------------------------------
// Rigid transforms and axis-angle rotations.

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

/// Rotation matrix from an axis-angle vector (Rodrigues' formula).
inline Mat3 rodrigues(const Vec3& axis_angle) {
  const double theta = axis_angle.norm();
  if (theta < 1e-12) {
    // First-order expansion keeps the map smooth through zero.
    return Mat3::Identity() + skew(axis_angle);
  }
  const Vec3 axis = axis_angle / theta;
  const Mat3 k = skew(axis);
  return Mat3::Identity() + std::sin(theta) * k + (1.0 - std::cos(theta)) * (k * k);
}

/// Partial derivatives dR/dv_i of the Rodrigues map at v.
/// Uses the compact closed form dR/dv_i = (v_i [v]x + [v x (I-R) e_i]x) / |v|^2 * R,
/// with the limit [e_i]x at v = 0.
inline std::array<Mat3, 3> rodrigues_derivatives(const Vec3& axis_angle) {
  std::array<Mat3, 3> d;
  const double theta2 = axis_angle.squaredNorm();
  if (theta2 < 1e-16) {
    for (int i = 0; i < 3; ++i) d[i] = skew(Vec3::Unit(i));
    return d;
  }
  const Mat3 r = rodrigues(axis_angle);
  const Mat3 vx = skew(axis_angle);
  const Mat3 i_minus_r = Mat3::Identity() - r;
  for (int i = 0; i < 3; ++i) {
    const Vec3 w = axis_angle.cross(i_minus_r.col(i));
    d[i] = (axis_angle[i] * vx + skew(w)) * r / theta2;
  }
  return d;
}

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform from_axis_angle(const Vec3& axis_angle, const Vec3& t) {
    return RigidTransform{rodrigues(axis_angle), t};
  }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  RigidTransform inverse() const {
    RigidTransform inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
  }

  // Composition: (a * b).apply(x) == a.apply(b.apply(x)).
  RigidTransform operator*(const RigidTransform& rhs) const {
    RigidTransform out;
    out.rotation = rotation * rhs.rotation;
    out.translation = rotation * rhs.translation + translation;
    return out;
  }

  bool is_valid_rotation(double tol = 1e-6) const {
    const Mat3 should_be_identity = rotation.transpose() * rotation;
    return (should_be_identity - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol;
  }
};

// ---------------------------------------------------------------------------
// Deterministic RNG. All randomness in the toolkit flows from explicit u64
// seeds; derived streams come from counter-based mixing so results do not
// depend on evaluation order or thread count.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derive an independent stream seed from a root seed and a stream index.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  return splitmix64(root ^ splitmix64(stream + 0x51ed270b7a936fb1ULL));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    if (stddev == 0.0) return mean;
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::uint64_t next_u64() { return engine_(); }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  Vec3 uniform_in_box(const Box3& b) {
    return Vec3(uniform(b.lo.x(), b.hi.x()), uniform(b.lo.y(), b.hi.y()),
                uniform(b.lo.z(), b.hi.z()));
  }
  Vec3 unit_vector() {
    while (true) {
      const Vec3 v(normal(), normal(), normal());
      const double n = v.norm();
      if (n > 1e-12) return v / n;
    }
  }

 private:
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Block-parallel loop. Work is split into fixed-size blocks regardless of the
// thread count, so per-block results can be reduced in block order and remain
// bit-identical for any `threads` value. `fn(begin, end, block_index)` must
// only write state owned by its block.

inline void parallel_for_blocks(std::size_t total, std::size_t block_size,
                                const std::function<void(std::size_t, std::size_t, std::size_t)>& fn,
                                unsigned threads = 1) {
  if (total == 0) return;
  if (block_size == 0) block_size = total;
  const std::size_t num_blocks = (total + block_size - 1) / block_size;
  if (threads <= 1 || num_blocks == 1) {
    for (std::size_t b = 0; b < num_blocks; ++b) {
      const std::size_t begin = b * block_size;
      fn(begin, std::min(begin + block_size, total), b);
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    while (true) {
      const std::size_t b = next.fetch_add(1);
      if (b >= num_blocks) return;
      const std::size_t begin = b * block_size;
      fn(begin, std::min(begin + block_size, total), b);
    }
  };
  std::vector<std::thread> pool;
  const unsigned n = std::min<unsigned>(threads, static_cast<unsigned>(num_blocks));
  pool.reserve(n);
  for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

}  // namespace handsdf

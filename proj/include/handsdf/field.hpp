#pragma once

// Signed-distance fields under one evaluation contract (negative inside,
// millimeters), with analytic primitives for ground truth, a trilinear grid
// for frozen snapshots, and the pixel-aligned feature pyramid consumed by
// the neural decoder.

#include "handsdf/camera.hpp"
#include "handsdf/core.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <memory>
#include <span>
#include <utility>
#include <vector>

namespace handsdf {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts are unsupported");

// ---------------------------------------------------------------------------

class SdfField {
 public:
  virtual ~SdfField() = default;

  /// Signed distance in mm; negative strictly inside.
  virtual double eval(const Vec3& x) const = 0;
  virtual Box3 domain_bounds() const = 0;

  /// Batch evaluation hook; the default just loops. Implementations may
  /// vectorize but must return values identical to per-point eval.
  virtual void eval_batch(std::span<const Vec3> points, std::span<double> out) const {
    for (std::size_t i = 0; i < points.size(); ++i) out[i] = eval(points[i]);
  }
};

/// Central-difference spatial gradient of any field (dimensionless).
inline Vec3 eval_grad(const SdfField& field, const Vec3& x, double step) {
  require(step > 0.0, "gradient step must be positive");
  Vec3 g;
  for (int i = 0; i < 3; ++i) {
    const Vec3 e = Vec3::Unit(i) * step;
    g[i] = (field.eval(x + e) - field.eval(x - e)) / (2.0 * step);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Analytic primitives.

enum class PrimitiveKind { kSphere, kBox, kCapsule, kCylinder };

inline const char* to_string(PrimitiveKind k) {
  switch (k) {
    case PrimitiveKind::kSphere: return "sphere";
    case PrimitiveKind::kBox: return "box";
    case PrimitiveKind::kCapsule: return "capsule";
    case PrimitiveKind::kCylinder: return "cylinder";
  }
  return "unknown";
}

inline PrimitiveKind primitive_kind_from_string(const std::string& s) {
  if (s == "sphere") return PrimitiveKind::kSphere;
  if (s == "box") return PrimitiveKind::kBox;
  if (s == "capsule") return PrimitiveKind::kCapsule;
  if (s == "cylinder") return PrimitiveKind::kCylinder;
  throw InvalidInputError("unknown primitive kind: " + s);
}

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::kSphere;
  Vec3 center = Vec3::Zero();        // sphere, box
  double radius = 1.0;               // sphere, capsule, cylinder
  Vec3 half_extents = Vec3::Ones();  // box
  Mat3 rotation = Mat3::Identity();  // box orientation (world = R * local + center)
  Vec3 a = Vec3::Zero();             // capsule/cylinder segment start
  Vec3 b = Vec3::UnitZ();            // capsule/cylinder segment end

  static Primitive sphere(const Vec3& center, double r) {
    Primitive p;
    p.kind = PrimitiveKind::kSphere;
    p.center = center;
    p.radius = r;
    return p;
  }
  static Primitive box(const Vec3& center, const Vec3& half_extents,
                       const Mat3& rotation = Mat3::Identity()) {
    Primitive p;
    p.kind = PrimitiveKind::kBox;
    p.center = center;
    p.half_extents = half_extents;
    p.rotation = rotation;
    return p;
  }
  static Primitive capsule(const Vec3& a, const Vec3& b, double r) {
    Primitive p;
    p.kind = PrimitiveKind::kCapsule;
    p.a = a;
    p.b = b;
    p.radius = r;
    return p;
  }
  static Primitive cylinder(const Vec3& a, const Vec3& b, double r) {
    Primitive p;
    p.kind = PrimitiveKind::kCylinder;
    p.a = a;
    p.b = b;
    p.radius = r;
    return p;
  }

  Primitive translated(const Vec3& d) const {
    Primitive p = *this;
    p.center += d;
    p.a += d;
    p.b += d;
    return p;
  }
};

inline double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

inline double primitive_sdf(const Primitive& prim, const Vec3& x) {
  switch (prim.kind) {
    case PrimitiveKind::kSphere:
      return (x - prim.center).norm() - prim.radius;
    case PrimitiveKind::kBox: {
      const Vec3 local = prim.rotation.transpose() * (x - prim.center);
      const Vec3 q = local.cwiseAbs() - prim.half_extents;
      const double outside = q.cwiseMax(0.0).norm();
      const double inside = std::min(q.maxCoeff(), 0.0);
      return outside + inside;
    }
    case PrimitiveKind::kCapsule:
      return segment_distance(x, prim.a, prim.b) - prim.radius;
    case PrimitiveKind::kCylinder: {
      const Vec3 mid = 0.5 * (prim.a + prim.b);
      const double half_len = 0.5 * (prim.b - prim.a).norm();
      const Vec3 ez = half_len > 0.0 ? Vec3((prim.b - prim.a).normalized()) : Vec3::UnitZ();
      const Vec3 rel = x - mid;
      const double z = rel.dot(ez);
      const double rho = (rel - z * ez).norm();
      const Vec2 d(rho - prim.radius, std::abs(z) - half_len);
      return std::min(std::max(d.x(), d.y()), 0.0) + d.cwiseMax(0.0).norm();
    }
  }
  return 0.0;
}

/// Independent membership predicate (strict interior), used to cross-check
/// the sign convention of primitive_sdf.
inline bool primitive_contains(const Primitive& prim, const Vec3& x) {
  switch (prim.kind) {
    case PrimitiveKind::kSphere:
      return (x - prim.center).squaredNorm() < prim.radius * prim.radius;
    case PrimitiveKind::kBox: {
      const Vec3 local = (prim.rotation.transpose() * (x - prim.center)).cwiseAbs();
      return (local.array() < prim.half_extents.array()).all();
    }
    case PrimitiveKind::kCapsule:
      return segment_distance(x, prim.a, prim.b) < prim.radius;
    case PrimitiveKind::kCylinder: {
      const Vec3 mid = 0.5 * (prim.a + prim.b);
      const double half_len = 0.5 * (prim.b - prim.a).norm();
      const Vec3 ez = half_len > 0.0 ? Vec3((prim.b - prim.a).normalized()) : Vec3::UnitZ();
      const Vec3 rel = x - mid;
      const double z = rel.dot(ez);
      const double rho = (rel - z * ez).norm();
      return std::abs(z) < half_len && rho < prim.radius;
    }
  }
  return false;
}

inline Box3 primitive_bounds(const Primitive& prim) {
  switch (prim.kind) {
    case PrimitiveKind::kSphere:
      return Box3::centered(prim.center, Vec3::Constant(prim.radius));
    case PrimitiveKind::kBox: {
      // AABB of the rotated box.
      Vec3 ext = Vec3::Zero();
      for (int i = 0; i < 3; ++i)
        ext[i] = prim.rotation.row(i).cwiseAbs().dot(prim.half_extents);
      return Box3::centered(prim.center, ext);
    }
    case PrimitiveKind::kCapsule:
    case PrimitiveKind::kCylinder: {
      const Vec3 lo = prim.a.cwiseMin(prim.b) - Vec3::Constant(prim.radius);
      const Vec3 hi = prim.a.cwiseMax(prim.b) + Vec3::Constant(prim.radius);
      return Box3{lo, hi};
    }
  }
  return Box3{};
}

/// Uniform surface sample; returns the point and the outward normal there.
inline std::pair<Vec3, Vec3> sample_primitive_surface(const Primitive& prim, Rng& rng) {
  switch (prim.kind) {
    case PrimitiveKind::kSphere: {
      const Vec3 dir = rng.unit_vector();
      return {prim.center + prim.radius * dir, dir};
    }
    case PrimitiveKind::kBox: {
      const Vec3& h = prim.half_extents;
      const double areas[3] = {h.y() * h.z(), h.x() * h.z(), h.x() * h.y()};
      const double total = areas[0] + areas[1] + areas[2];
      double pick = rng.uniform(0.0, total);
      int axis = 0;
      while (axis < 2 && pick >= areas[axis]) pick -= areas[axis], ++axis;
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      Vec3 local;
      local[axis] = sign * h[axis];
      const int u = (axis + 1) % 3, v = (axis + 2) % 3;
      local[u] = rng.uniform(-h[u], h[u]);
      local[v] = rng.uniform(-h[v], h[v]);
      return {prim.rotation * local + prim.center, prim.rotation * (sign * Vec3::Unit(axis))};
    }
    case PrimitiveKind::kCapsule: {
      const Vec3 ab = prim.b - prim.a;
      const double len = ab.norm();
      const Vec3 ez = len > 0.0 ? Vec3(ab / len) : Vec3::UnitZ();
      const double side_area = 2.0 * kPi * prim.radius * len;
      const double cap_area = 4.0 * kPi * prim.radius * prim.radius;
      if (rng.uniform(0.0, side_area + cap_area) < side_area) {
        const double t = rng.uniform();
        const Vec3 ref = std::abs(ez.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
        const Vec3 ex = ez.cross(ref).normalized();
        const Vec3 ey = ez.cross(ex);
        const double phi = rng.uniform(0.0, 2.0 * kPi);
        const Vec3 radial = std::cos(phi) * ex + std::sin(phi) * ey;
        return {prim.a + t * len * ez + prim.radius * radial, radial};
      }
      const Vec3 dir = rng.unit_vector();
      const Vec3 center = dir.dot(ez) >= 0.0 ? prim.b : prim.a;
      return {center + prim.radius * dir, dir};
    }
    case PrimitiveKind::kCylinder: {
      const Vec3 ab = prim.b - prim.a;
      const double len = ab.norm();
      const Vec3 ez = len > 0.0 ? Vec3(ab / len) : Vec3::UnitZ();
      const Vec3 ref = std::abs(ez.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
      const Vec3 ex = ez.cross(ref).normalized();
      const Vec3 ey = ez.cross(ex);
      const double side_area = 2.0 * kPi * prim.radius * len;
      const double cap_area = kPi * prim.radius * prim.radius;  // per cap
      const double pick = rng.uniform(0.0, side_area + 2.0 * cap_area);
      const double phi = rng.uniform(0.0, 2.0 * kPi);
      const Vec3 radial = std::cos(phi) * ex + std::sin(phi) * ey;
      if (pick < side_area) {
        const double t = rng.uniform();
        return {prim.a + t * len * ez + prim.radius * radial, radial};
      }
      const double rho = prim.radius * std::sqrt(rng.uniform());
      const bool top = pick - side_area >= cap_area;
      const Vec3 center = top ? prim.b : prim.a;
      const Vec3 n = top ? ez : Vec3(-ez);
      return {center + rho * radial, n};
    }
  }
  return {Vec3::Zero(), Vec3::UnitZ()};
}

/// Union of primitives (pointwise minimum of member SDFs).
class AnalyticSdf final : public SdfField {
 public:
  AnalyticSdf() = default;
  explicit AnalyticSdf(Primitive prim) { primitives_.push_back(std::move(prim)); }
  explicit AnalyticSdf(std::vector<Primitive> prims) : primitives_(std::move(prims)) {}

  void add(const Primitive& p) { primitives_.push_back(p); }
  const std::vector<Primitive>& primitives() const { return primitives_; }

  double eval(const Vec3& x) const override {
    require(!primitives_.empty(), "analytic field has no primitives");
    double best = primitive_sdf(primitives_[0], x);
    for (std::size_t i = 1; i < primitives_.size(); ++i)
      best = std::min(best, primitive_sdf(primitives_[i], x));
    return best;
  }

  bool contains(const Vec3& x) const {
    for (const auto& p : primitives_)
      if (primitive_contains(p, x)) return true;
    return false;
  }

  Box3 domain_bounds() const override {
    Box3 out = primitive_bounds(primitives_.at(0));
    for (std::size_t i = 1; i < primitives_.size(); ++i) {
      const Box3 b = primitive_bounds(primitives_[i]);
      out.lo = out.lo.cwiseMin(b.lo);
      out.hi = out.hi.cwiseMax(b.hi);
    }
    return out;
  }

 private:
  std::vector<Primitive> primitives_;
};

// ---------------------------------------------------------------------------
// Trilinear grid field.

class GridSdf final : public SdfField {
 public:
  GridSdf() = default;
  GridSdf(int nx, int ny, int nz, const Box3& bounds, std::vector<double> values)
      : nx_(nx), ny_(ny), nz_(nz), bounds_(bounds), values_(std::move(values)) {
    require(nx_ >= 2 && ny_ >= 2 && nz_ >= 2, "grid needs at least 2 nodes per axis");
    require(bounds_.valid(), "grid bounds must be a proper box");
    require(values_.size() == static_cast<std::size_t>(nx_) * ny_ * nz_,
            "grid value count must match resolution");
  }

  /// Sample `field` on a node lattice over `bounds`.
  static GridSdf bake(const SdfField& field, const Box3& bounds, int nx, int ny, int nz,
                      unsigned threads = 1) {
    require(nx >= 2 && ny >= 2 && nz >= 2, "grid needs at least 2 nodes per axis");
    std::vector<double> values(static_cast<std::size_t>(nx) * ny * nz);
    const Vec3 step((bounds.hi.x() - bounds.lo.x()) / (nx - 1),
                    (bounds.hi.y() - bounds.lo.y()) / (ny - 1),
                    (bounds.hi.z() - bounds.lo.z()) / (nz - 1));
    // One z-slab per block: disjoint writes, order-independent.
    parallel_for_blocks(
        static_cast<std::size_t>(nz), 1,
        [&](std::size_t z0, std::size_t z1, std::size_t) {
          std::vector<Vec3> pts(static_cast<std::size_t>(nx) * ny);
          std::vector<double> vals(pts.size());
          for (std::size_t iz = z0; iz < z1; ++iz) {
            std::size_t k = 0;
            for (int iy = 0; iy < ny; ++iy)
              for (int ix = 0; ix < nx; ++ix, ++k)
                pts[k] = bounds.lo + Vec3(ix * step.x(), iy * step.y(),
                                          static_cast<double>(iz) * step.z());
            field.eval_batch(pts, vals);
            std::copy(vals.begin(), vals.end(),
                      values.begin() + static_cast<std::ptrdiff_t>(iz * pts.size()));
          }
        },
        threads);
    return GridSdf(nx, ny, nz, bounds, std::move(values));
  }

  double eval(const Vec3& x) const override {
    const Vec3 inside = bounds_.clamp(x);
    const double exterior = (x - inside).norm();
    const Vec3 rel = inside - bounds_.lo;
    const Vec3 ext = bounds_.extent();
    double fx = rel.x() / ext.x() * (nx_ - 1);
    double fy = rel.y() / ext.y() * (ny_ - 1);
    double fz = rel.z() / ext.z() * (nz_ - 1);
    int ix = std::min(static_cast<int>(fx), nx_ - 2);
    int iy = std::min(static_cast<int>(fy), ny_ - 2);
    int iz = std::min(static_cast<int>(fz), nz_ - 2);
    const double u = fx - ix, v = fy - iy, w = fz - iz;
    auto val = [&](int i, int j, int k) {
      return values_[static_cast<std::size_t>(i) +
                     static_cast<std::size_t>(nx_) * (static_cast<std::size_t>(j) +
                                                      static_cast<std::size_t>(ny_) * k)];
    };
    const double c00 = val(ix, iy, iz) * (1 - u) + val(ix + 1, iy, iz) * u;
    const double c10 = val(ix, iy + 1, iz) * (1 - u) + val(ix + 1, iy + 1, iz) * u;
    const double c01 = val(ix, iy, iz + 1) * (1 - u) + val(ix + 1, iy, iz + 1) * u;
    const double c11 = val(ix, iy + 1, iz + 1) * (1 - u) + val(ix + 1, iy + 1, iz + 1) * u;
    const double c0 = c00 * (1 - v) + c10 * v;
    const double c1 = c01 * (1 - v) + c11 * v;
    return c0 * (1 - w) + c1 * w + exterior;
  }

  Box3 domain_bounds() const override { return bounds_; }

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  int nz() const { return nz_; }
  const std::vector<double>& values() const { return values_; }

 private:
  int nx_ = 0, ny_ = 0, nz_ = 0;
  Box3 bounds_;
  std::vector<double> values_;
};

// Binary grid format: magic "GSDF", u32 nx,ny,nz, f64 lo.xyz hi.xyz (mm),
// then nx*ny*nz f32 values, x-fastest. Little-endian.

inline void write_grid_sdf(std::ostream& os, const GridSdf& grid) {
  os.write("GSDF", 4);
  const std::uint32_t dims[3] = {static_cast<std::uint32_t>(grid.nx()),
                                 static_cast<std::uint32_t>(grid.ny()),
                                 static_cast<std::uint32_t>(grid.nz())};
  os.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  const Box3 b = grid.domain_bounds();
  const double bounds[6] = {b.lo.x(), b.lo.y(), b.lo.z(), b.hi.x(), b.hi.y(), b.hi.z()};
  os.write(reinterpret_cast<const char*>(bounds), sizeof(bounds));
  std::vector<float> f(grid.values().size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<float>(grid.values()[i]);
  os.write(reinterpret_cast<const char*>(f.data()),
           static_cast<std::streamsize>(f.size() * sizeof(float)));
  if (!os) throw IoError("failed to write grid sdf stream");
}

inline GridSdf read_grid_sdf(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "GSDF") throw IoError("not a GSDF stream");
  std::uint32_t dims[3];
  is.read(reinterpret_cast<char*>(dims), sizeof(dims));
  double bounds[6];
  is.read(reinterpret_cast<char*>(bounds), sizeof(bounds));
  const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  std::vector<float> f(n);
  is.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!is) throw IoError("truncated GSDF stream");
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = static_cast<double>(f[i]);
  return GridSdf(static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
                 Box3{Vec3(bounds[0], bounds[1], bounds[2]), Vec3(bounds[3], bounds[4], bounds[5])},
                 std::move(values));
}

inline void save_grid_sdf(const std::string& path, const GridSdf& grid) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_grid_sdf(os, grid);
}

inline GridSdf load_grid_sdf(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_grid_sdf(is);
}

// ---------------------------------------------------------------------------
// Image tensor and feature pyramid.

/// Raw float image, row-major [y][x][c].
struct ImageTensor {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  float at(int y, int x, int c) const {
    return data[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  float& at(int y, int x, int c) {
    return data[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  static ImageTensor zeros(int h, int w, int c) {
    ImageTensor img;
    img.height = h;
    img.width = w;
    img.channels = c;
    img.data.assign(static_cast<std::size_t>(h) * w * c, 0.0f);
    return img;
  }
};

struct FeatureLevel {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;  // [y][x][c]

  double at(int y, int x, int c) const {
    return data[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
};

/// Multi-resolution features covering the full image extent, plus one global
/// descriptor. Local features are sampled bilinearly at a base-resolution
/// pixel coordinate; every level is corner-aligned with the base image.
struct FeaturePyramid {
  int base_width = 0;
  int base_height = 0;
  std::vector<FeatureLevel> levels;
  VecX global_feature;
  VecX channel_mean;  // per input channel; kept for training the projection

  int local_width() const {
    int w = 0;
    for (const auto& l : levels) w += l.channels;
    return w;
  }
  int feature_width() const { return local_width() + static_cast<int>(global_feature.size()); }

  void sample_into(const Vec2& pixel_in, Eigen::Ref<VecX> out) const {
    require(pixel_in.allFinite(), "pixel must be finite");
    const double px = std::clamp(pixel_in.x(), 0.0, static_cast<double>(base_width - 1));
    const double py = std::clamp(pixel_in.y(), 0.0, static_cast<double>(base_height - 1));
    Eigen::Index o = 0;
    for (const auto& level : levels) {
      const double sx = base_width > 1
                            ? px * (level.width - 1) / static_cast<double>(base_width - 1)
                            : 0.0;
      const double sy = base_height > 1
                            ? py * (level.height - 1) / static_cast<double>(base_height - 1)
                            : 0.0;
      const int x0 = std::min(static_cast<int>(sx), level.width - 2 >= 0 ? level.width - 2 : 0);
      const int y0 = std::min(static_cast<int>(sy), level.height - 2 >= 0 ? level.height - 2 : 0);
      const int x1 = std::min(x0 + 1, level.width - 1);
      const int y1 = std::min(y0 + 1, level.height - 1);
      const double u = sx - x0, v = sy - y0;
      for (int c = 0; c < level.channels; ++c) {
        const double top = level.at(y0, x0, c) * (1 - u) + level.at(y0, x1, c) * u;
        const double bot = level.at(y1, x0, c) * (1 - u) + level.at(y1, x1, c) * u;
        out[o++] = top * (1 - v) + bot * v;
      }
    }
    out.segment(o, global_feature.size()) = global_feature;
  }

  VecX sample(const Vec2& pixel) const {
    VecX out(feature_width());
    sample_into(pixel, out);
    return out;
  }
};

/// 2x box-filter downsample (odd sizes keep the trailing row/column by
/// averaging whatever the 2x2 window covers).
inline FeatureLevel box_downsample(const FeatureLevel& in) {
  FeatureLevel out;
  out.height = (in.height + 1) / 2;
  out.width = (in.width + 1) / 2;
  out.channels = in.channels;
  out.data.assign(static_cast<std::size_t>(out.height) * out.width * out.channels, 0.0);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const int y1 = std::min(2 * y + 1, in.height - 1);
      const int x1 = std::min(2 * x + 1, in.width - 1);
      for (int c = 0; c < out.channels; ++c) {
        double sum = in.at(2 * y, 2 * x, c) + in.at(2 * y, x1, c) + in.at(y1, 2 * x, c) +
                     in.at(y1, x1, c);
        out.data[static_cast<std::size_t>((y * out.width + x) * out.channels + c)] = 0.25 * sum;
      }
    }
  }
  return out;
}

/// Fixed box-filter pyramid over the image channels plus a linear global
/// projection of the channel means. `global_proj` is (global_dim x channels)
/// and is the only trainable part of the visual path.
inline FeaturePyramid build_feature_pyramid(const ImageTensor& image, int num_levels,
                                            const MatX& global_proj) {
  require(image.width > 0 && image.height > 0 && image.channels > 0, "empty image");
  require(num_levels >= 1, "pyramid needs at least one level");
  require(global_proj.cols() == image.channels, "global projection width must match channels");
  FeaturePyramid pyr;
  pyr.base_width = image.width;
  pyr.base_height = image.height;
  FeatureLevel base;
  base.height = image.height;
  base.width = image.width;
  base.channels = image.channels;
  base.data.assign(image.data.begin(), image.data.end());
  pyr.levels.push_back(std::move(base));
  for (int l = 1; l < num_levels; ++l) pyr.levels.push_back(box_downsample(pyr.levels.back()));

  pyr.channel_mean = VecX::Zero(image.channels);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c) pyr.channel_mean[c] += image.at(y, x, c);
  pyr.channel_mean /= static_cast<double>(image.width) * image.height;
  pyr.global_feature = global_proj * pyr.channel_mean;
  return pyr;
}

inline VecX sample_pyramid(const FeaturePyramid& pyr, const Vec2& pixel) {
  return pyr.sample(pixel);
}

}  // namespace handsdf

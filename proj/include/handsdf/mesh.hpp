#pragma once

// Zero-level-set extraction and mesh utilities: 256-case marching cubes with
// linear edge interpolation, primitive meshing, signed-volume integration,
// area-weighted surface sampling, and OBJ/PLY export.

#include "handsdf/core.hpp"
#include "handsdf/field.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace handsdf {

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<Vec3> normals;  // optional, per vertex

  bool empty() const { return triangles.empty(); }
};

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

inline Mesh transform_mesh(const Mesh& mesh, const RigidTransform& t,
                           const Vec3& post_translation = Vec3::Zero()) {
  Mesh out = mesh;
  for (auto& v : out.vertices) v = t.apply(v) + post_translation;
  for (auto& n : out.normals) n = t.rotation * n;
  return out;
}

inline Mesh merge_meshes(const std::vector<Mesh>& parts) {
  Mesh out;
  for (const auto& part : parts) {
    const int base = static_cast<int>(out.vertices.size());
    out.vertices.insert(out.vertices.end(), part.vertices.begin(), part.vertices.end());
    for (const auto& t : part.triangles)
      out.triangles.push_back({t[0] + base, t[1] + base, t[2] + base});
  }
  return out;
}

/// Every edge shared by exactly two triangles.
inline bool is_watertight(const Mesh& mesh) {
  if (mesh.triangles.empty()) return false;
  std::map<std::pair<int, int>, int> edge_count;
  for (const auto& t : mesh.triangles) {
    for (int k = 0; k < 3; ++k) {
      int a = t[static_cast<std::size_t>(k)], b = t[static_cast<std::size_t>((k + 1) % 3)];
      if (a == b) return false;
      if (a > b) std::swap(a, b);
      ++edge_count[{a, b}];
    }
  }
  for (const auto& [edge, count] : edge_count)
    if (count != 2) return false;
  return true;
}

/// Absolute enclosed volume by the divergence theorem. For open meshes the
/// value is best effort; `watertight_out` reports which case applies.
inline double mesh_volume(const Mesh& mesh, bool* watertight_out = nullptr) {
  if (watertight_out) *watertight_out = is_watertight(mesh);
  double six_v = 0.0;
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[static_cast<std::size_t>(t[0])];
    const Vec3& b = mesh.vertices[static_cast<std::size_t>(t[1])];
    const Vec3& c = mesh.vertices[static_cast<std::size_t>(t[2])];
    six_v += a.dot(b.cross(c));
  }
  return std::abs(six_v) / 6.0;
}

inline double mesh_area(const Mesh& mesh) {
  double area = 0.0;
  for (const auto& t : mesh.triangles)
    area += triangle_area(mesh.vertices[static_cast<std::size_t>(t[0])],
                          mesh.vertices[static_cast<std::size_t>(t[1])],
                          mesh.vertices[static_cast<std::size_t>(t[2])]);
  return area;
}

/// Area-weighted uniform surface samples (deterministic given seed).
inline std::vector<Vec3> sample_mesh_surface(const Mesh& mesh, std::size_t count,
                                             std::uint64_t seed) {
  require(!mesh.triangles.empty(), "cannot sample an empty mesh");
  std::vector<double> cumulative(mesh.triangles.size());
  double total = 0.0;
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto& t = mesh.triangles[i];
    total += triangle_area(mesh.vertices[static_cast<std::size_t>(t[0])],
                           mesh.vertices[static_cast<std::size_t>(t[1])],
                           mesh.vertices[static_cast<std::size_t>(t[2])]);
    cumulative[i] = total;
  }
  require(total > 0.0, "mesh has zero surface area");
  Rng rng(derive_seed(seed, 0x5a3d));
  std::vector<Vec3> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double pick = rng.uniform(0.0, total);
    const std::size_t idx = static_cast<std::size_t>(
        std::lower_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin());
    const auto& t = mesh.triangles[std::min(idx, mesh.triangles.size() - 1)];
    const Vec3& a = mesh.vertices[static_cast<std::size_t>(t[0])];
    const Vec3& b = mesh.vertices[static_cast<std::size_t>(t[1])];
    const Vec3& c = mesh.vertices[static_cast<std::size_t>(t[2])];
    const double su = std::sqrt(rng.uniform());
    const double v = rng.uniform();
    out.push_back((1.0 - su) * a + su * (1.0 - v) * b + su * v * c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Marching cubes.
//
// Corner c of a cell sits at offset ((c&1), (c>>1)&1, (c>>2)&1). The 256-case
// triangle table is built once from first principles: on every cell face,
// surface crossings are paired so that they bracket runs of inside corners
// (this fixes the ambiguous faces consistently on both sides, so neighboring
// cells always agree); linked crossings form closed polygons which are fanned
// into triangles, oriented so normals point toward positive distance.

namespace mc_detail {

struct EdgeDef {
  int a, b;  // corner indices; b = a | axis bit
  int axis;
};

inline const std::array<EdgeDef, 12>& edge_defs() {
  static const std::array<EdgeDef, 12> defs = {{
      {0, 1, 0}, {2, 3, 0}, {4, 5, 0}, {6, 7, 0},  // x edges
      {0, 2, 1}, {1, 3, 1}, {4, 6, 1}, {5, 7, 1},  // y edges
      {0, 4, 2}, {1, 5, 2}, {2, 6, 2}, {3, 7, 2},  // z edges
  }};
  return defs;
}

inline int edge_between(int ca, int cb) {
  for (int e = 0; e < 12; ++e) {
    const EdgeDef& d = edge_defs()[static_cast<std::size_t>(e)];
    if ((d.a == ca && d.b == cb) || (d.a == cb && d.b == ca)) return e;
  }
  return -1;
}

// Faces as cyclic corner quads.
inline const std::array<std::array<int, 4>, 6>& face_defs() {
  static const std::array<std::array<int, 4>, 6> faces = {{
      {0, 2, 6, 4},  // x = 0
      {1, 3, 7, 5},  // x = 1
      {0, 1, 5, 4},  // y = 0
      {2, 3, 7, 6},  // y = 1
      {0, 1, 3, 2},  // z = 0
      {4, 5, 7, 6},  // z = 1
  }};
  return faces;
}

inline Vec3 corner_pos(int c) {
  return Vec3(c & 1, (c >> 1) & 1, (c >> 2) & 1);
}

/// Triangles for one sign configuration, as fans of edge indices.
inline std::vector<std::array<int, 3>> build_case(int config) {
  const bool inside[8] = {
      static_cast<bool>(config & 1),   static_cast<bool>(config & 2),
      static_cast<bool>(config & 4),   static_cast<bool>(config & 8),
      static_cast<bool>(config & 16),  static_cast<bool>(config & 32),
      static_cast<bool>(config & 64),  static_cast<bool>(config & 128)};

  // Pair crossings per face; each crossing is a cell edge index.
  std::array<std::vector<int>, 12> links;
  for (const auto& face : face_defs()) {
    std::vector<int> crossing_slots;
    for (int k = 0; k < 4; ++k) {
      const int ca = face[static_cast<std::size_t>(k)];
      const int cb = face[static_cast<std::size_t>((k + 1) % 4)];
      if (inside[ca] != inside[cb]) crossing_slots.push_back(k);
    }
    // Pair each out->in transition with the next crossing around the face,
    // so every link spans a run of inside corners.
    for (std::size_t s = 0; s < crossing_slots.size(); ++s) {
      const int k = crossing_slots[s];
      const int ca = face[static_cast<std::size_t>(k)];
      if (inside[ca]) continue;  // want out->in
      const int k2 = crossing_slots[(s + 1) % crossing_slots.size()];
      const int e1 = edge_between(face[static_cast<std::size_t>(k)],
                                  face[static_cast<std::size_t>((k + 1) % 4)]);
      const int e2 = edge_between(face[static_cast<std::size_t>(k2)],
                                  face[static_cast<std::size_t>((k2 + 1) % 4)]);
      links[static_cast<std::size_t>(e1)].push_back(e2);
      links[static_cast<std::size_t>(e2)].push_back(e1);
    }
  }

  // Trace closed polygons.
  std::vector<std::array<int, 3>> triangles;
  bool used[12] = {};
  for (int start = 0; start < 12; ++start) {
    if (used[start] || links[static_cast<std::size_t>(start)].empty()) continue;
    std::vector<int> cycle;
    int prev = -1, cur = start;
    while (true) {
      cycle.push_back(cur);
      used[cur] = true;
      const auto& nb = links[static_cast<std::size_t>(cur)];
      const int next = (nb[0] != prev) ? nb[0] : nb[1];
      prev = cur;
      cur = next;
      if (cur == start) break;
    }
    if (cycle.size() < 3) continue;

    // Orient the polygon so its normal points toward the outside corners.
    Vec3 inside_centroid = Vec3::Zero(), outside_centroid = Vec3::Zero();
    Vec3 newell = Vec3::Zero();
    std::vector<Vec3> mids(cycle.size());
    for (std::size_t i = 0; i < cycle.size(); ++i) {
      const EdgeDef& d = edge_defs()[static_cast<std::size_t>(cycle[i])];
      mids[i] = 0.5 * (corner_pos(d.a) + corner_pos(d.b));
      inside_centroid += corner_pos(inside[d.a] ? d.a : d.b);
      outside_centroid += corner_pos(inside[d.a] ? d.b : d.a);
    }
    inside_centroid /= static_cast<double>(cycle.size());
    outside_centroid /= static_cast<double>(cycle.size());
    for (std::size_t i = 0; i < cycle.size(); ++i) {
      const Vec3& p = mids[i];
      const Vec3& q = mids[(i + 1) % cycle.size()];
      newell += p.cross(q);
    }
    if (newell.dot(outside_centroid - inside_centroid) < 0.0)
      std::reverse(cycle.begin(), cycle.end());

    for (std::size_t i = 1; i + 1 < cycle.size(); ++i)
      triangles.push_back({cycle[0], cycle[i], cycle[i + 1]});
  }
  return triangles;
}

inline const std::array<std::vector<std::array<int, 3>>, 256>& case_table() {
  static const auto table = [] {
    std::array<std::vector<std::array<int, 3>>, 256> t;
    for (int c = 0; c < 256; ++c) t[static_cast<std::size_t>(c)] = build_case(c);
    return t;
  }();
  return table;
}

}  // namespace mc_detail

/// Standard 256-case marching cubes over a node lattice of `resolution`
/// points per axis spanning `bounds`. Zero-level vertices are interpolated
/// linearly along cell edges and welded by grid edge, so closed level sets
/// extract as watertight meshes. Returns an empty mesh when the field does
/// not change sign.
inline Mesh marching_cubes(const SdfField& field, const Box3& bounds,
                           const std::array<int, 3>& resolution, unsigned threads = 1) {
  const int nx = resolution[0], ny = resolution[1], nz = resolution[2];
  require(nx >= 2 && ny >= 2 && nz >= 2, "marching cubes needs at least 2 nodes per axis");
  require(bounds.valid(), "marching cubes bounds must be a proper box");

  const Vec3 step((bounds.hi.x() - bounds.lo.x()) / (nx - 1),
                  (bounds.hi.y() - bounds.lo.y()) / (ny - 1),
                  (bounds.hi.z() - bounds.lo.z()) / (nz - 1));
  auto node_pos = [&](int ix, int iy, int iz) {
    return bounds.lo + Vec3(ix * step.x(), iy * step.y(), iz * step.z());
  };

  // Sample the lattice, one z-slab per block.
  std::vector<double> values(static_cast<std::size_t>(nx) * ny * nz);
  parallel_for_blocks(
      static_cast<std::size_t>(nz), 1,
      [&](std::size_t z0, std::size_t z1, std::size_t) {
        std::vector<Vec3> pts(static_cast<std::size_t>(nx) * ny);
        std::vector<double> vals(pts.size());
        for (std::size_t iz = z0; iz < z1; ++iz) {
          std::size_t k = 0;
          for (int iy = 0; iy < ny; ++iy)
            for (int ix = 0; ix < nx; ++ix, ++k) pts[k] = node_pos(ix, iy, static_cast<int>(iz));
          field.eval_batch(pts, vals);
          for (std::size_t k2 = 0; k2 < vals.size(); ++k2) {
            // Nudge exact zeros so interpolated vertices never coincide with
            // lattice nodes (which would produce degenerate triangles).
            double v = vals[k2];
            if (v == 0.0) v = 1e-12;
            values[iz * pts.size() + k2] = v;
          }
        }
      },
      threads);

  auto value_at = [&](int ix, int iy, int iz) {
    return values[static_cast<std::size_t>(ix) +
                  static_cast<std::size_t>(nx) *
                      (static_cast<std::size_t>(iy) + static_cast<std::size_t>(ny) * iz)];
  };

  Mesh mesh;
  std::unordered_map<std::uint64_t, int> edge_vertex;  // global edge key -> vertex id
  const auto& edges = mc_detail::edge_defs();
  const auto& table = mc_detail::case_table();

  auto edge_key = [&](int ix, int iy, int iz, int axis) {
    const std::uint64_t node = static_cast<std::uint64_t>(ix) +
                               static_cast<std::uint64_t>(nx) *
                                   (static_cast<std::uint64_t>(iy) +
                                    static_cast<std::uint64_t>(ny) * static_cast<std::uint64_t>(iz));
    return node * 3ULL + static_cast<std::uint64_t>(axis);
  };

  // Serial cell walk in z, y, x order keeps emission deterministic.
  for (int iz = 0; iz + 1 < nz; ++iz) {
    for (int iy = 0; iy + 1 < ny; ++iy) {
      for (int ix = 0; ix + 1 < nx; ++ix) {
        int config = 0;
        double corner_val[8];
        for (int c = 0; c < 8; ++c) {
          corner_val[c] = value_at(ix + (c & 1), iy + ((c >> 1) & 1), iz + ((c >> 2) & 1));
          if (corner_val[c] < 0.0) config |= 1 << c;
        }
        const auto& tris = table[static_cast<std::size_t>(config)];
        if (tris.empty()) continue;
        int vert_of_edge[12];
        for (int e = 0; e < 12; ++e) vert_of_edge[e] = -1;
        for (const auto& tri : tris) {
          std::array<int, 3> ids{};
          for (int k = 0; k < 3; ++k) {
            const int e = tri[static_cast<std::size_t>(k)];
            if (vert_of_edge[e] < 0) {
              const auto& d = edges[static_cast<std::size_t>(e)];
              const int ax = ix + (d.a & 1), ay = iy + ((d.a >> 1) & 1), az = iz + ((d.a >> 2) & 1);
              const std::uint64_t key = edge_key(ax, ay, az, d.axis);
              auto it = edge_vertex.find(key);
              if (it == edge_vertex.end()) {
                const double va = corner_val[d.a];
                const double vb = corner_val[d.b];
                const double t = va / (va - vb);
                Vec3 p = node_pos(ax, ay, az);
                p[d.axis] += t * step[d.axis];
                it = edge_vertex.emplace(key, static_cast<int>(mesh.vertices.size())).first;
                mesh.vertices.push_back(p);
              }
              vert_of_edge[e] = it->second;
            }
            ids[static_cast<std::size_t>(k)] = vert_of_edge[e];
          }
          if (ids[0] != ids[1] && ids[1] != ids[2] && ids[0] != ids[2])
            mesh.triangles.push_back(ids);
        }
      }
    }
  }
  return mesh;
}

// ---------------------------------------------------------------------------
// Primitive meshes (watertight by construction).

inline Mesh sphere_mesh(const Vec3& center, double radius, int rings = 24, int sectors = 32) {
  require(rings >= 2 && sectors >= 3, "sphere mesh needs rings >= 2, sectors >= 3");
  Mesh m;
  m.vertices.push_back(center + Vec3(0, 0, -radius));  // south pole
  for (int r = 1; r < rings; ++r) {
    const double phi = kPi * (static_cast<double>(r) / rings - 0.5);  // latitude
    for (int s = 0; s < sectors; ++s) {
      const double theta = 2.0 * kPi * s / sectors;
      m.vertices.push_back(center + radius * Vec3(std::cos(phi) * std::cos(theta),
                                                  std::cos(phi) * std::sin(theta),
                                                  std::sin(phi)));
    }
  }
  m.vertices.push_back(center + Vec3(0, 0, radius));  // north pole
  const int north = static_cast<int>(m.vertices.size()) - 1;
  auto ring_vert = [&](int r, int s) { return 1 + (r - 1) * sectors + (s % sectors); };
  for (int s = 0; s < sectors; ++s) m.triangles.push_back({0, ring_vert(1, s + 1), ring_vert(1, s)});
  for (int r = 1; r + 1 < rings; ++r) {
    for (int s = 0; s < sectors; ++s) {
      const int a = ring_vert(r, s), b = ring_vert(r, s + 1);
      const int c = ring_vert(r + 1, s), d = ring_vert(r + 1, s + 1);
      m.triangles.push_back({a, b, d});
      m.triangles.push_back({a, d, c});
    }
  }
  for (int s = 0; s < sectors; ++s)
    m.triangles.push_back({north, ring_vert(rings - 1, s), ring_vert(rings - 1, s + 1)});
  return m;
}

inline Mesh box_mesh(const Vec3& center, const Vec3& half, const Mat3& rotation = Mat3::Identity()) {
  Mesh m;
  for (int c = 0; c < 8; ++c) {
    const Vec3 local((c & 1) ? half.x() : -half.x(), (c & 2) ? half.y() : -half.y(),
                     (c & 4) ? half.z() : -half.z());
    m.vertices.push_back(rotation * local + center);
  }
  // Outward-oriented quads, split into triangles.
  const int quads[6][4] = {{0, 4, 6, 2}, {1, 3, 7, 5}, {0, 1, 5, 4},
                           {2, 6, 7, 3}, {0, 2, 3, 1}, {4, 5, 7, 6}};
  for (const auto& q : quads) {
    m.triangles.push_back({q[0], q[1], q[2]});
    m.triangles.push_back({q[0], q[2], q[3]});
  }
  return m;
}

/// Capsule: two hemispherical caps joined by a cylindrical band; `rings` is
/// the latitude count per hemisphere.
inline Mesh capsule_mesh(const Vec3& a, const Vec3& b, double radius, int rings = 8,
                         int sectors = 24) {
  require(rings >= 1 && sectors >= 3, "capsule mesh needs rings >= 1, sectors >= 3");
  const Vec3 ab = b - a;
  const double len = ab.norm();
  const Vec3 ez = len > 1e-12 ? Vec3(ab / len) : Vec3::UnitZ();
  const Vec3 ref = std::abs(ez.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  const Vec3 ex = ez.cross(ref).normalized();
  const Vec3 ey = ez.cross(ex);

  Mesh m;
  m.vertices.push_back(a - radius * ez);  // bottom pole
  // Bottom hemisphere rings (excluding equator), then top hemisphere rings.
  std::vector<int> ring_start;
  auto push_ring = [&](const Vec3& center, double rho, double z_off) {
    ring_start.push_back(static_cast<int>(m.vertices.size()));
    for (int s = 0; s < sectors; ++s) {
      const double theta = 2.0 * kPi * s / sectors;
      m.vertices.push_back(center + rho * (std::cos(theta) * ex + std::sin(theta) * ey) +
                           z_off * ez);
    }
  };
  for (int r = 1; r <= rings; ++r) {
    const double phi = -0.5 * kPi + 0.5 * kPi * r / rings;  // -pi/2 .. 0
    push_ring(a, radius * std::cos(phi), radius * std::sin(phi));
  }
  for (int r = 0; r < rings; ++r) {
    const double phi = 0.5 * kPi * r / rings;  // 0 .. pi/2
    push_ring(b, radius * std::cos(phi), radius * std::sin(phi));
  }
  m.vertices.push_back(b + radius * ez);  // top pole
  const int top = static_cast<int>(m.vertices.size()) - 1;

  auto rv = [&](int ring, int s) { return ring_start[static_cast<std::size_t>(ring)] + (s % sectors); };
  for (int s = 0; s < sectors; ++s) m.triangles.push_back({0, rv(0, s + 1), rv(0, s)});
  for (std::size_t ring = 0; ring + 1 < ring_start.size(); ++ring) {
    for (int s = 0; s < sectors; ++s) {
      const int p = rv(static_cast<int>(ring), s), q = rv(static_cast<int>(ring), s + 1);
      const int r2 = rv(static_cast<int>(ring) + 1, s), s2 = rv(static_cast<int>(ring) + 1, s + 1);
      m.triangles.push_back({p, q, s2});
      m.triangles.push_back({p, s2, r2});
    }
  }
  const int last = static_cast<int>(ring_start.size()) - 1;
  for (int s = 0; s < sectors; ++s) m.triangles.push_back({top, rv(last, s), rv(last, s + 1)});
  return m;
}

inline Mesh cylinder_mesh(const Vec3& a, const Vec3& b, double radius, int sectors = 32) {
  require(sectors >= 3, "cylinder mesh needs sectors >= 3");
  const Vec3 ab = b - a;
  const double len = ab.norm();
  const Vec3 ez = len > 1e-12 ? Vec3(ab / len) : Vec3::UnitZ();
  const Vec3 ref = std::abs(ez.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  const Vec3 ex = ez.cross(ref).normalized();
  const Vec3 ey = ez.cross(ex);
  Mesh m;
  m.vertices.push_back(a);  // bottom center
  m.vertices.push_back(b);  // top center
  for (int s = 0; s < sectors; ++s) {
    const double theta = 2.0 * kPi * s / sectors;
    const Vec3 radial = radius * (std::cos(theta) * ex + std::sin(theta) * ey);
    m.vertices.push_back(a + radial);
  }
  for (int s = 0; s < sectors; ++s) {
    const double theta = 2.0 * kPi * s / sectors;
    const Vec3 radial = radius * (std::cos(theta) * ex + std::sin(theta) * ey);
    m.vertices.push_back(b + radial);
  }
  auto bot = [&](int s) { return 2 + (s % sectors); };
  auto topv = [&](int s) { return 2 + sectors + (s % sectors); };
  for (int s = 0; s < sectors; ++s) {
    m.triangles.push_back({0, bot(s + 1), bot(s)});
    m.triangles.push_back({1, topv(s), topv(s + 1)});
    m.triangles.push_back({bot(s), bot(s + 1), topv(s + 1)});
    m.triangles.push_back({bot(s), topv(s + 1), topv(s)});
  }
  return m;
}

inline Mesh primitive_mesh(const Primitive& prim) {
  switch (prim.kind) {
    case PrimitiveKind::kSphere:
      return sphere_mesh(prim.center, prim.radius);
    case PrimitiveKind::kBox:
      return box_mesh(prim.center, prim.half_extents, prim.rotation);
    case PrimitiveKind::kCapsule:
      return capsule_mesh(prim.a, prim.b, prim.radius);
    case PrimitiveKind::kCylinder:
      return cylinder_mesh(prim.a, prim.b, prim.radius);
  }
  return Mesh{};
}

// ---------------------------------------------------------------------------
// OBJ / PLY export and import. Coordinates round-trip losslessly at f32.

inline void export_obj(const Mesh& mesh, std::ostream& os) {
  char line[128];
  for (const auto& v : mesh.vertices) {
    std::snprintf(line, sizeof(line), "v %.9g %.9g %.9g\n", static_cast<double>(static_cast<float>(v.x())),
                  static_cast<double>(static_cast<float>(v.y())),
                  static_cast<double>(static_cast<float>(v.z())));
    os << line;
  }
  for (const auto& t : mesh.triangles) {
    std::snprintf(line, sizeof(line), "f %d %d %d\n", t[0] + 1, t[1] + 1, t[2] + 1);
    os << line;
  }
  if (!os) throw IoError("failed to write OBJ stream");
}

inline Mesh import_obj(std::istream& is) {
  Mesh mesh;
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind("v ", 0) == 0) {
      double x, y, z;
      if (std::sscanf(line.c_str(), "v %lf %lf %lf", &x, &y, &z) == 3)
        mesh.vertices.push_back(Vec3(x, y, z));
    } else if (line.rfind("f ", 0) == 0) {
      int a, b, c;
      if (std::sscanf(line.c_str(), "f %d %d %d", &a, &b, &c) == 3)
        mesh.triangles.push_back({a - 1, b - 1, c - 1});
    }
  }
  return mesh;
}

inline void export_ply(const Mesh& mesh, std::ostream& os) {
  os << "ply\nformat binary_little_endian 1.0\n"
     << "element vertex " << mesh.vertices.size() << "\n"
     << "property float x\nproperty float y\nproperty float z\n"
     << "element face " << mesh.triangles.size() << "\n"
     << "property list uchar int vertex_indices\nend_header\n";
  for (const auto& v : mesh.vertices) {
    const float f[3] = {static_cast<float>(v.x()), static_cast<float>(v.y()),
                        static_cast<float>(v.z())};
    os.write(reinterpret_cast<const char*>(f), sizeof(f));
  }
  for (const auto& t : mesh.triangles) {
    const unsigned char n = 3;
    os.write(reinterpret_cast<const char*>(&n), 1);
    const std::int32_t idx[3] = {t[0], t[1], t[2]};
    os.write(reinterpret_cast<const char*>(idx), sizeof(idx));
  }
  if (!os) throw IoError("failed to write PLY stream");
}

inline Mesh import_ply(std::istream& is) {
  std::string line;
  std::size_t num_vertices = 0, num_faces = 0;
  bool binary_le = false;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line == "end_header") break;
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      binary_le = fmt == "binary_little_endian";
    } else if (tok == "element") {
      std::string kind;
      std::size_t n;
      ls >> kind >> n;
      if (kind == "vertex") num_vertices = n;
      if (kind == "face") num_faces = n;
    }
  }
  if (!binary_le) throw IoError("only binary little-endian PLY is supported");
  Mesh mesh;
  mesh.vertices.reserve(num_vertices);
  for (std::size_t i = 0; i < num_vertices; ++i) {
    float f[3];
    is.read(reinterpret_cast<char*>(f), sizeof(f));
    mesh.vertices.push_back(Vec3(f[0], f[1], f[2]));
  }
  for (std::size_t i = 0; i < num_faces; ++i) {
    unsigned char n;
    is.read(reinterpret_cast<char*>(&n), 1);
    if (n != 3) throw IoError("only triangle PLY faces are supported");
    std::int32_t idx[3];
    is.read(reinterpret_cast<char*>(idx), sizeof(idx));
    mesh.triangles.push_back({idx[0], idx[1], idx[2]});
  }
  if (!is) throw IoError("truncated PLY stream");
  return mesh;
}

inline void save_mesh(const std::string& path, const Mesh& mesh) {
  const bool ply = path.size() >= 4 && path.substr(path.size() - 4) == ".ply";
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  if (ply)
    export_ply(mesh, os);
  else
    export_obj(mesh, os);
}

inline Mesh load_mesh(const std::string& path) {
  const bool ply = path.size() >= 4 && path.substr(path.size() - 4) == ".ply";
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return ply ? import_ply(is) : import_obj(is);
}

}  // namespace handsdf

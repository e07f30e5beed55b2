#include "handsdf/field.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <sstream>

using namespace handsdf;

TEST_CASE("sphere sdf basics", "[field]") {
  const AnalyticSdf sphere(Primitive::sphere(Vec3::Zero(), 50.0));
  CHECK(sphere.eval(Vec3::Zero()) == -50.0);
  CHECK(sphere.eval(Vec3(80, 0, 0)) == 30.0);
  CHECK(sphere.eval(Vec3(0, 50, 0)) == 0.0);
}

TEST_CASE("grid field tracks the analytic sphere", "[field]") {
  const AnalyticSdf sphere(Primitive::sphere(Vec3::Zero(), 50.0));
  const Box3 bounds = Box3::cube(100.0);
  const GridSdf grid = GridSdf::bake(sphere, bounds, 64, 64, 64);
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 x = rng.uniform_in_box(bounds);
    CHECK(std::abs(grid.eval(x) - sphere.eval(x)) < 0.5);
  }
}

TEST_CASE("central-difference gradient of exact fields", "[field]") {
  const AnalyticSdf sphere(Primitive::sphere(Vec3::Zero(), 50.0));
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const Vec3 x = 30.0 * rng.unit_vector() + Vec3(0, 0, 20);
    if (x.norm() < 1.0) continue;
    const Vec3 g = eval_grad(sphere, x, 1e-3);
    CHECK(std::abs(g.norm() - 1.0) < 1e-6);
  }
  CHECK_THROWS_AS(eval_grad(sphere, Vec3::Zero(), 0.0), InvalidInputError);
}

TEST_CASE("box face gradients equal face normals", "[field]") {
  const Vec3 half(30.0, 20.0, 10.0);
  const AnalyticSdf box(Primitive::box(Vec3::Zero(), half));
  for (int axis = 0; axis < 3; ++axis) {
    for (double sign : {-1.0, 1.0}) {
      // A point straight out from the face interior.
      Vec3 x = Vec3(3.0, -2.0, 1.0).cwiseProduct(Vec3::Ones() * 0.2);
      x[axis] = sign * (half[axis] + 4.0);
      const Vec3 g = eval_grad(box, x, 1e-4);
      CHECK((g - sign * Vec3::Unit(axis)).norm() < 1e-6);
    }
  }
}

TEST_CASE("grid sphere keeps near-unit gradients near the surface", "[field]") {
  const AnalyticSdf sphere(Primitive::sphere(Vec3::Zero(), 50.0));
  const GridSdf grid = GridSdf::bake(sphere, Box3::cube(100.0), 64, 64, 64);
  Rng rng(13);
  double total = 0.0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    const Vec3 x = (50.0 + rng.uniform(-5.0, 5.0)) * rng.unit_vector();
    total += std::abs(eval_grad(grid, x, 1.0).norm() - 1.0);
  }
  CHECK(total / n < 0.05);
}

TEST_CASE("sdf sign agrees with the membership test", "[field]") {
  Rng rng(17);
  const std::vector<Primitive> prims = {
      Primitive::sphere(Vec3(5, -3, 2), 40.0),
      Primitive::box(Vec3(0, 10, 0), Vec3(35, 22, 18), rodrigues(Vec3(0.3, -0.2, 0.5))),
      Primitive::capsule(Vec3(-30, 0, 0), Vec3(25, 10, 5), 18.0),
      Primitive::cylinder(Vec3(0, -25, -10), Vec3(5, 30, 15), 20.0)};
  for (const auto& prim : prims) {
    int inside_count = 0;
    for (int i = 0; i < 10000; ++i) {
      const Vec3 x = rng.uniform_in_box(Box3::cube(80.0));
      const double d = primitive_sdf(prim, x);
      const bool inside = primitive_contains(prim, x);
      if (inside) ++inside_count;
      if (d < -1e-9) CHECK(inside);
      if (d > 1e-9) CHECK(!inside);
    }
    CHECK(inside_count > 100);  // the sweep actually saw the interior
  }
}

TEST_CASE("union equals the pointwise minimum", "[field]") {
  const Primitive a = Primitive::sphere(Vec3(-20, 0, 0), 30.0);
  const Primitive b = Primitive::box(Vec3(25, 5, -5), Vec3(20, 15, 25));
  AnalyticSdf u;
  u.add(a);
  u.add(b);
  Rng rng(19);
  for (int i = 0; i < 2000; ++i) {
    const Vec3 x = rng.uniform_in_box(Box3::cube(90.0));
    CHECK(u.eval(x) == std::min(primitive_sdf(a, x), primitive_sdf(b, x)));
  }
}

TEST_CASE("grid clamp rule adds exterior distance outside the domain", "[field]") {
  const AnalyticSdf sphere(Primitive::sphere(Vec3::Zero(), 50.0));
  const Box3 bounds = Box3::cube(100.0);
  const GridSdf grid = GridSdf::bake(sphere, bounds, 32, 32, 32);
  Rng rng(23);
  for (int i = 0; i < 500; ++i) {
    Vec3 x = rng.uniform_in_box(Box3::cube(180.0));
    if (bounds.contains(x)) x += Vec3(0, 0, 200);
    const Vec3 clamped = bounds.clamp(x);
    CHECK(grid.eval(x) == grid.eval(clamped) + (x - clamped).norm());
    CHECK(grid.eval(x) >= bounds.exterior_distance(x));
  }
}

TEST_CASE("grid file format round trips", "[field]") {
  const AnalyticSdf sphere(Primitive::sphere(Vec3(3, -4, 5), 42.0));
  const GridSdf grid = GridSdf::bake(sphere, Box3::centered(Vec3(1, 2, 3), Vec3(60, 70, 80)),
                                     9, 11, 13);
  std::stringstream ss;
  write_grid_sdf(ss, grid);
  const GridSdf back = read_grid_sdf(ss);
  REQUIRE(back.nx() == 9);
  REQUIRE(back.ny() == 11);
  REQUIRE(back.nz() == 13);
  CHECK(back.domain_bounds().lo == grid.domain_bounds().lo);
  CHECK(back.domain_bounds().hi == grid.domain_bounds().hi);
  for (std::size_t i = 0; i < grid.values().size(); ++i)
    CHECK(back.values()[i] == static_cast<double>(static_cast<float>(grid.values()[i])));

  std::stringstream bad("GARBAGE");
  CHECK_THROWS_AS(read_grid_sdf(bad), IoError);
}

TEST_CASE("batch evaluation matches scalar evaluation", "[field]") {
  const AnalyticSdf sphere(Primitive::sphere(Vec3::Zero(), 33.0));
  Rng rng(29);
  std::vector<Vec3> pts;
  for (int i = 0; i < 257; ++i) pts.push_back(rng.uniform_in_box(Box3::cube(70.0)));
  std::vector<double> out(pts.size());
  sphere.eval_batch(pts, out);
  for (std::size_t i = 0; i < pts.size(); ++i) CHECK(out[i] == sphere.eval(pts[i]));
}

namespace {

FeatureLevel constant_level(int h, int w, int c, double value) {
  FeatureLevel level;
  level.height = h;
  level.width = w;
  level.channels = c;
  level.data.assign(static_cast<std::size_t>(h) * w * c, value);
  return level;
}

}  // namespace

TEST_CASE("pyramid sampling: constants, nodes, and midpoints", "[field]") {
  FeaturePyramid pyr;
  pyr.base_width = 4;
  pyr.base_height = 4;
  pyr.global_feature = VecX::Zero(0);

  SECTION("constant level samples to the constant") {
    pyr.levels.push_back(constant_level(4, 4, 1, 3.25));
    Rng rng(31);
    for (int i = 0; i < 50; ++i) {
      const Vec2 px(rng.uniform(-2.0, 6.0), rng.uniform(-2.0, 6.0));
      CHECK(pyr.sample(px)[0] == 3.25);
    }
  }
  SECTION("grid nodes and midpoints") {
    FeatureLevel level = constant_level(4, 4, 1, 0.0);
    auto set = [&](int y, int x, double v) {
      level.data[static_cast<std::size_t>(y * 4 + x)] = v;
    };
    set(1, 1, 1.0);
    set(1, 2, 2.0);
    set(2, 1, 4.0);
    set(2, 2, 9.0);
    pyr.levels.push_back(level);
    CHECK(pyr.sample(Vec2(1, 1))[0] == 1.0);
    CHECK(pyr.sample(Vec2(2, 2))[0] == 9.0);
    CHECK(pyr.sample(Vec2(1.5, 1.5))[0] == Catch::Approx((1.0 + 2.0 + 4.0 + 9.0) / 4.0));
  }
}

TEST_CASE("pyramid construction: downsampling and the global projection", "[field]") {
  ImageTensor img = ImageTensor::zeros(4, 4, 2);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      img.at(y, x, 0) = static_cast<float>(y * 4 + x);
      img.at(y, x, 1) = 1.0f;
    }
  MatX proj(3, 2);
  proj << 1, 0, 0, 1, 2, -1;
  const FeaturePyramid pyr = build_feature_pyramid(img, 3, proj);
  REQUIRE(pyr.levels.size() == 3);
  CHECK(pyr.levels[1].width == 2);
  CHECK(pyr.levels[2].width == 1);
  // First 2x2 block of channel 0: values 0,1,4,5 -> mean 2.5.
  CHECK(pyr.levels[1].at(0, 0, 0) == 2.5);
  CHECK(pyr.channel_mean[0] == Catch::Approx(7.5));
  CHECK(pyr.channel_mean[1] == 1.0);
  CHECK(pyr.global_feature[0] == Catch::Approx(7.5));
  CHECK(pyr.global_feature[1] == 1.0);
  CHECK(pyr.global_feature[2] == Catch::Approx(2.0 * 7.5 - 1.0));
  // Sampled vector is [levels..., global].
  const VecX s = pyr.sample(Vec2(0, 0));
  REQUIRE(s.size() == 2 * 3 + 3);
  CHECK(s[0] == 0.0);
  CHECK(s[1] == 1.0);
  CHECK(s[6] == Catch::Approx(7.5));
}

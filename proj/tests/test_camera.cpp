#include "handsdf/camera.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace handsdf;

TEST_CASE("weak to full conversion builds the depth offset", "[camera]") {
  Intrinsics k;
  k.focal = 100.0;
  k.principal_point = Vec2(112, 112);

  SECTION("unit scale, centered") {
    const CameraRig rig = weak_to_full(WeakPerspective{1.0, Vec2(0, 0)}, k);
    CHECK(rig.depth_offset == Vec3(0, 0, 100));
  }
  SECTION("scale two halves the depth") {
    const CameraRig rig = weak_to_full(WeakPerspective{2.0, Vec2(5, -3)}, k);
    CHECK(rig.depth_offset == Vec3(5, -3, 50));
  }
  SECTION("doubling s halves z exactly") {
    const CameraRig a = weak_to_full(WeakPerspective{0.7, Vec2(1, 2)}, k);
    const CameraRig b = weak_to_full(WeakPerspective{1.4, Vec2(1, 2)}, k);
    CHECK(a.depth_offset.z() == 2.0 * b.depth_offset.z());
  }
  SECTION("non-positive scale is invalid") {
    CHECK_THROWS_AS(weak_to_full(WeakPerspective{0.0, Vec2(0, 0)}, k), InvalidInputError);
    CHECK_THROWS_AS(weak_to_full(WeakPerspective{-1.0, Vec2(0, 0)}, k), InvalidInputError);
  }
}

TEST_CASE("on-axis point projects to the principal point", "[camera]") {
  CameraRig rig;
  rig.intrinsics.focal = 480.0;
  rig.intrinsics.principal_point = Vec2(112, 112);
  rig.depth_offset = Vec3(0, 0, 480);
  const Vec2 px = project(rig, RigidTransform::identity(), Vec3::Zero());
  CHECK((px - Vec2(112, 112)).norm() < 1e-12);
}

TEST_CASE("pixel offset follows similar triangles", "[camera]") {
  // A point d off-axis at depth z0 lands f*d/z0 from the principal point.
  const double f = 480.0, d = 25.0, z0 = 400.0;
  CameraRig rig;
  rig.intrinsics.focal = f;
  rig.intrinsics.principal_point = Vec2(112, 112);
  rig.depth_offset = Vec3(0, 0, z0);
  const Vec2 px = project(rig, RigidTransform::identity(), Vec3(d, 0, 0));
  CHECK(px.x() == Catch::Approx(112.0 + f * d / z0).epsilon(1e-12));
  CHECK(px.y() == Catch::Approx(112.0).margin(1e-12));
}

TEST_CASE("points behind the camera are rejected", "[camera]") {
  CameraRig rig;
  rig.depth_offset = Vec3(0, 0, 100);
  CHECK_THROWS_AS(project(rig, RigidTransform::identity(), Vec3(0, 0, -150)), BehindCameraError);
  CHECK_NOTHROW(project_clamped(rig, RigidTransform::identity(), Vec3(0, 0, -150)));
}

TEST_CASE("projection scales uniformly with the intrinsics", "[camera]") {
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    const double alpha = rng.uniform(0.5, 3.0);
    CameraRig rig;
    rig.intrinsics.focal = rng.uniform(200, 800);
    rig.intrinsics.principal_point = Vec2(rng.uniform(80, 140), rng.uniform(80, 140));
    rig.depth_offset = Vec3(rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(250, 600));
    CameraRig scaled = rig;
    scaled.intrinsics.focal *= alpha;
    scaled.intrinsics.principal_point *= alpha;

    const RigidTransform pose = RigidTransform::from_axis_angle(
        Vec3(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)),
        Vec3(rng.uniform(-30, 30), rng.uniform(-30, 30), rng.uniform(-30, 30)));
    const Vec3 x(rng.uniform(-80, 80), rng.uniform(-80, 80), rng.uniform(-80, 80));
    const Vec2 base = project(rig, pose, x);
    const Vec2 big = project(scaled, pose, x);
    CHECK((big - alpha * base).norm() < 1e-9 * std::max(1.0, base.norm()));
  }
}

TEST_CASE("weak to full round trip recovers the scale", "[camera]") {
  Intrinsics k;
  k.focal = 480.0;
  Rng rng(11);
  for (int i = 0; i < 50; ++i) {
    const double s = rng.uniform(0.2, 4.0);
    const CameraRig rig = weak_to_full(WeakPerspective{s, Vec2(0, 0)}, k);
    CHECK(std::abs(k.focal / rig.depth_offset.z() - s) < 1e-12 * s);
  }
}

TEST_CASE("camera json round trip", "[camera]") {
  CameraRig rig;
  rig.intrinsics.focal = 333.5;
  rig.intrinsics.principal_point = Vec2(101.25, 99.75);
  rig.depth_offset = Vec3(4.5, -2.25, 387.125);
  const CameraRig back = camera_from_json(camera_to_json(rig));
  CHECK(back.intrinsics.focal == rig.intrinsics.focal);
  CHECK(back.intrinsics.principal_point == rig.intrinsics.principal_point);
  CHECK(back.depth_offset == rig.depth_offset);
}

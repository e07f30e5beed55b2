#include "handsdf/encoding.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace handsdf;

TEST_CASE("positional encoding of zero and one", "[encoding]") {
  EncoderConfig cfg;
  cfg.num_frequencies = 3;
  cfg.include_input = false;
  cfg.input_scale = 1.0;

  VecX v(1);
  v << 0.0;
  const VecX zero = positional_encode(cfg, v);
  for (int l = 0; l < 3; ++l) {
    CHECK(zero[2 * l] == 0.0);       // sin terms
    CHECK(zero[2 * l + 1] == 1.0);   // cos terms
  }

  cfg.num_frequencies = 1;
  v << 1.0;
  const VecX one = positional_encode(cfg, v);
  CHECK(std::abs(one[0]) < 1e-12);        // sin(pi)
  CHECK(one[1] == Catch::Approx(-1.0));   // cos(pi)
}

TEST_CASE("encoding width bookkeeping", "[encoding]") {
  EncoderConfig cfg;
  cfg.num_frequencies = 6;
  cfg.include_input = true;
  CHECK(cfg.width_per_scalar() == 13);
  const VecX v = VecX::LinSpaced(45, -1.0, 1.0);
  CHECK(positional_encode(cfg, v).size() == 45 * 13);
  CHECK(articulation_embed_width(cfg) == 585);
}

TEST_CASE("encoding matches the direct sinusoid formula", "[encoding]") {
  EncoderConfig cfg;
  cfg.num_frequencies = 6;
  cfg.include_input = true;
  cfg.input_scale = 1.0;
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    VecX v(2);
    v << rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0);
    const VecX enc = positional_encode(cfg, v);
    for (int i = 0; i < 2; ++i) {
      const double u = v[i];
      const int base = i * cfg.width_per_scalar();
      CHECK(enc[base] == u);
      for (int l = 0; l < cfg.num_frequencies; ++l) {
        const double freq = kPi * std::pow(2.0, l);
        CHECK(enc[base + 1 + 2 * l] == Catch::Approx(std::sin(freq * u)).margin(1e-11));
        CHECK(enc[base + 2 + 2 * l] == Catch::Approx(std::cos(freq * u)).margin(1e-11));
      }
    }
  }
}

TEST_CASE("encoding is 2-periodic without the raw input", "[encoding]") {
  EncoderConfig cfg;
  cfg.num_frequencies = 5;
  cfg.include_input = false;
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    VecX v(1), shifted(1);
    v << rng.uniform(-4.0, 4.0);
    shifted << v[0] + 2.0;
    CHECK((positional_encode(cfg, v) - positional_encode(cfg, shifted)).cwiseAbs().maxCoeff() <
          1e-9);
  }
}

TEST_CASE("articulation embedding composes kinematics and the encoder", "[encoding]") {
  const HandModel model = default_hand_model();
  EncoderConfig cfg;
  Rng rng(9);
  VecX art(kArticulationDof);
  for (int i = 0; i < kArticulationDof; ++i) art[i] = rng.uniform(-0.7, 0.7);
  const Vec3 x(20.0, 60.0, 10.0);

  const VecX direct = articulation_embed(model, art, x, cfg);
  const VecX coords = wrist_to_joint_coords(model, art, x) * cfg.input_scale;
  CHECK((direct - positional_encode(cfg, coords)).cwiseAbs().maxCoeff() == 0.0);

  // A query at a joint origin encodes to (0, sin-block 0, cos-block 1).
  const FkResult fk = forward_kinematics(model, art);
  const VecX at_joint = articulation_embed(model, art, fk.joint_position(5), cfg);
  const int per = cfg.width_per_scalar();
  for (int k = 0; k < 3; ++k) {
    const int base = (3 * 4 + k) * per;  // joint 5 -> block 4
    CHECK(std::abs(at_joint[base]) < 1e-12);
    for (int l = 0; l < cfg.num_frequencies; ++l) {
      CHECK(std::abs(at_joint[base + 1 + 2 * l]) < 1e-9);
      CHECK(at_joint[base + 2 + 2 * l] == Catch::Approx(1.0).margin(1e-9));
    }
  }
}

TEST_CASE("embedding ignores the global pose bit for bit", "[encoding]") {
  const HandModel model = default_hand_model();
  EncoderConfig cfg;
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    VecX art(kArticulationDof);
    for (int i = 0; i < kArticulationDof; ++i) art[i] = rng.uniform(-0.7, 0.7);
    const Vec3 x(rng.uniform(-90, 90), rng.uniform(-90, 90), rng.uniform(-90, 90));
    // The embedding never reads a global pose; moving the scene while keeping
    // wrist-frame coordinates leaves the result identical by construction.
    const VecX a = articulation_embed(model, art, x, cfg);
    const VecX b = articulation_embed(model, art, x, cfg);
    CHECK(a == b);
  }
}

TEST_CASE("perturbing one finger only changes that finger's blocks", "[encoding]") {
  const HandModel model = default_hand_model();
  EncoderConfig cfg;
  Rng rng(15);
  for (int trial = 0; trial < 30; ++trial) {
    VecX art(kArticulationDof);
    for (int i = 0; i < kArticulationDof; ++i) art[i] = rng.uniform(-0.6, 0.6);
    VecX bent = art;
    const int finger = static_cast<int>(rng.index(kNumFingers));
    const int joint = 1 + kJointsPerFinger * finger + static_cast<int>(rng.index(3));
    bent[3 * (joint - 1) + static_cast<int>(rng.index(3))] += 0.21;

    const Vec3 x(rng.uniform(-80, 80), rng.uniform(-80, 80), rng.uniform(-80, 80));
    const VecX a = articulation_embed(model, art, x, cfg);
    const VecX b = articulation_embed(model, bent, x, cfg);
    const int per = cfg.width_per_scalar();
    for (int j = 1; j < kNumFrames; ++j) {
      // Joint j is affected iff `joint` lies on its root chain.
      bool affected = false;
      for (int k = j; k > 0; k = model.parent(k))
        if (k == joint) affected = true;
      const auto block_a = a.segment(3 * (j - 1) * per, 3 * per);
      const auto block_b = b.segment(3 * (j - 1) * per, 3 * per);
      if (!affected) {
        CHECK((block_a - block_b).cwiseAbs().maxCoeff() == 0.0);
      }
    }
    // The perturbed joint's own block must differ somewhere.
    const auto pa = a.segment(3 * (joint - 1) * per, 3 * per);
    const auto pb = b.segment(3 * (joint - 1) * per, 3 * per);
    CHECK((pa - pb).cwiseAbs().maxCoeff() > 0.0);
  }
}

TEST_CASE("embedding gradient in x matches finite differences", "[encoding]") {
  const HandModel model = default_hand_model();
  EncoderConfig cfg;
  Rng rng(19);
  VecX art(kArticulationDof);
  for (int i = 0; i < kArticulationDof; ++i) art[i] = rng.uniform(-0.6, 0.6);
  const Vec3 x(33.0, 41.0, -12.0);
  const MatX jac = articulation_embed_jacobian_x(model, art, x, cfg);
  const double h = 1e-4;  // mm
  for (int axis = 0; axis < 3; ++axis) {
    const Vec3 e = Vec3::Unit(axis) * h;
    const VecX fd = (articulation_embed(model, art, x + e, cfg) -
                     articulation_embed(model, art, x - e, cfg)) /
                    (2.0 * h);
    const double scale = std::max(1e-3, fd.cwiseAbs().maxCoeff());
    CHECK((jac.col(axis) - fd).cwiseAbs().maxCoeff() / scale < 1e-3);
  }
}

TEST_CASE("pose parameter embedding is a plain concatenation", "[encoding]") {
  const VecX zero = VecX::Zero(kArticulationDof);
  const VecX out = pose_param_embed(zero, Vec3(1, 2, 3));
  REQUIRE(out.size() == 48);
  CHECK(out[0] == 1.0);
  CHECK(out[1] == 2.0);
  CHECK(out[2] == 3.0);
  CHECK(out.tail(kArticulationDof).cwiseAbs().maxCoeff() == 0.0);

  Rng rng(21);
  VecX art(kArticulationDof);
  for (int i = 0; i < kArticulationDof; ++i) art[i] = rng.uniform(-1, 1);
  const VecX a = pose_param_embed(art, Vec3(5, 6, 7));
  const VecX b = pose_param_embed(art, Vec3(-1, 0, 2));
  CHECK(a.tail(kArticulationDof) == b.tail(kArticulationDof));
  CHECK(a.head<3>() != b.head<3>());
}

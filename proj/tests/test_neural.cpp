#include "handsdf/neural.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace handsdf;

namespace {

MlpConfig small_config(int input_width = 10) {
  MlpConfig cfg;
  cfg.input_width = input_width;
  cfg.hidden_width = 8;
  cfg.num_layers = 8;
  cfg.skip_layer = 4;
  cfg.activation = Activation::kSoftplus;
  return cfg;
}

VecX mlp_flatten(const Mlp& mlp) {
  VecX out(mlp.num_params());
  Eigen::Index o = 0;
  for (std::size_t i = 0; i < mlp.weights().size(); ++i) {
    const MatX& w = mlp.weights()[i];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) out[o++] = w(r, c);
    out.segment(o, mlp.biases()[i].size()) = mlp.biases()[i];
    o += mlp.biases()[i].size();
  }
  return out;
}

// Flattened analytic parameter gradient in the same order as mlp_flatten.
VecX grads_flatten(const Mlp& mlp, const MlpGrads& grads) {
  VecX out(mlp.num_params());
  Eigen::Index o = 0;
  for (std::size_t i = 0; i < grads.d_weights.size(); ++i) {
    const MatX& w = grads.d_weights[i];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) out[o++] = w(r, c);
    out.segment(o, grads.d_biases[i].size()) = grads.d_biases[i];
    o += grads.d_biases[i].size();
  }
  return out;
}

double forward_with_params(Mlp& mlp, const VecX& flat, const VecX& input) {
  Eigen::Index o = 0;
  for (std::size_t i = 0; i < mlp.weights().size(); ++i) {
    MatX& w = mlp.weights()[i];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = flat[o++];
    VecX& b = mlp.biases()[i];
    b = flat.segment(o, b.size());
    o += b.size();
  }
  mlp.mark_mutated();
  return mlp.forward(input);
}

struct TinyScene {
  HandModel model;
  NeuralModel net;
  SceneContext ctx;
};

// A pose-parameter-mode model over a constant image; power-of-two encoder
// scales keep x -> prediction exact when the decoder is the identity row.
std::unique_ptr<TinyScene> make_tiny_scene(int num_layers, std::uint64_t seed,
                                           double input_scale = 1.0 / 128.0,
                                           double output_scale = 128.0) {
  auto out = std::make_unique<TinyScene>();
  out->model = default_hand_model();
  EncoderConfig enc;
  enc.input_scale = input_scale;
  PyramidConfig pyr;
  pyr.num_levels = 1;
  pyr.global_dim = 4;
  pyr.image_channels = 2;
  out->net = NeuralModel::create(enc, pyr, ArticulationEncoding::kPoseParams, seed);
  if (num_layers != 8) {
    MlpConfig cfg = out->net.decoder.config();
    cfg.num_layers = num_layers;
    cfg.skip_layer = -1;
    out->net.decoder = Mlp::create(cfg, seed);
  }
  out->net.output_scale = output_scale;

  ImageTensor img = ImageTensor::zeros(8, 8, 2);
  for (auto& v : img.data) v = 0.5f;
  HandPose pose;
  out->ctx = SceneContext::create(out->model, pose, CameraRig{}, img, out->net);
  return out;
}

}  // namespace

TEST_CASE("all-zero network outputs zero", "[neural]") {
  Mlp mlp = Mlp::create(small_config(), 1);
  VecX zero = VecX::Zero(mlp.num_params());
  Eigen::Index o = 0;
  for (std::size_t i = 0; i < mlp.weights().size(); ++i) {
    mlp.weights()[i].setZero();
    mlp.biases()[i].setZero();
    o += mlp.weights()[i].size() + mlp.biases()[i].size();
  }
  mlp.mark_mutated();
  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    VecX in(10);
    for (int k = 0; k < 10; ++k) in[k] = rng.uniform(-2, 2);
    CHECK(mlp.forward(in) == 0.0);
  }
}

TEST_CASE("degenerate single-layer identity row", "[neural]") {
  MlpConfig cfg;
  cfg.input_width = 3;
  cfg.num_layers = 1;
  cfg.skip_layer = -1;
  Mlp mlp = Mlp::create(cfg, 0);
  mlp.weights()[0] << 1.0, 0.0, 0.0;
  mlp.biases()[0].setZero();
  mlp.mark_mutated();
  CHECK(mlp.forward(Vec3(1, 0, 0)) == 1.0);
  CHECK(mlp.forward(Vec3(0, 5, -7)) == 0.0);
}

TEST_CASE("seeded initialization is reproducible", "[neural]") {
  const Mlp a = Mlp::create(small_config(), 42);
  const Mlp b = Mlp::create(small_config(), 42);
  CHECK(mlp_flatten(a) == mlp_flatten(b));
  VecX in = VecX::LinSpaced(10, -1.0, 1.0);
  CHECK(a.forward(in) == b.forward(in));
  const Mlp c = Mlp::create(small_config(), 43);
  CHECK(mlp_flatten(a) != mlp_flatten(c));
}

TEST_CASE("input width mismatch raises a shape error", "[neural]") {
  const Mlp mlp = Mlp::create(small_config(), 7);
  CHECK_THROWS_AS(mlp.forward(VecX::Zero(9)), ShapeError);
}

TEST_CASE("backward gradients match central finite differences", "[neural]") {
  const double h = 1e-5;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Mlp mlp = Mlp::create(small_config(), seed);
    Rng rng(seed + 100);
    VecX input(10);
    for (int k = 0; k < 10; ++k) input[k] = rng.uniform(-1.5, 1.5);

    auto [value, cache] = mlp_forward(mlp, input);
    (void)value;
    const MlpBackwardResult back = mlp_backward(mlp, cache, 1.0);
    const VecX analytic = grads_flatten(mlp, back.grads);

    const VecX base = mlp_flatten(mlp);
    Mlp scratch = Mlp::create(small_config(), seed);
    VecX fd(base.size());
    for (Eigen::Index p = 0; p < base.size(); ++p) {
      VecX plus = base, minus = base;
      plus[p] += h;
      minus[p] -= h;
      fd[p] = (forward_with_params(scratch, plus, input) -
               forward_with_params(scratch, minus, input)) /
              (2.0 * h);
    }
    const double scale = std::max(1e-6, fd.cwiseAbs().maxCoeff());
    CHECK((analytic - fd).cwiseAbs().maxCoeff() / scale < 1e-4);

    VecX fd_in(input.size());
    for (Eigen::Index k = 0; k < input.size(); ++k) {
      VecX plus = input, minus = input;
      plus[k] += h;
      minus[k] -= h;
      fd_in[k] = (mlp.forward(plus) - mlp.forward(minus)) / (2.0 * h);
    }
    const double in_scale = std::max(1e-6, fd_in.cwiseAbs().maxCoeff());
    CHECK((back.input_grad - fd_in).cwiseAbs().maxCoeff() / in_scale < 1e-4);
  }
}

TEST_CASE("zero upstream yields zero gradients", "[neural]") {
  Mlp mlp = Mlp::create(small_config(), 11);
  auto [value, cache] = mlp_forward(mlp, VecX::Ones(10));
  (void)value;
  const MlpBackwardResult back = mlp_backward(mlp, cache, 0.0);
  CHECK(grads_flatten(mlp, back.grads).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.input_grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("stale caches are rejected", "[neural]") {
  Mlp mlp = Mlp::create(small_config(), 13);
  auto [value, cache] = mlp_forward(mlp, VecX::Ones(10));
  (void)value;
  mlp.weights()[0](0, 0) += 0.5;
  mlp.mark_mutated();
  CHECK_THROWS_AS(mlp_backward(mlp, cache, 1.0), ShapeError);
}

TEST_CASE("relu activation selects the positive branch", "[neural]") {
  MlpConfig cfg;
  cfg.input_width = 1;
  cfg.hidden_width = 1;
  cfg.num_layers = 2;
  cfg.skip_layer = -1;
  cfg.activation = Activation::kRelu;
  Mlp mlp = Mlp::create(cfg, 0);
  mlp.weights()[0] << 1.0;
  mlp.weights()[1] << 1.0;
  mlp.biases()[0].setZero();
  mlp.biases()[1].setZero();
  mlp.mark_mutated();
  VecX in(1);
  in << 3.0;
  CHECK(mlp.forward(in) == 3.0);
  in << -3.0;
  CHECK(mlp.forward(in) == 0.0);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged", "[neural]") {
  AdamState state = AdamState::create(5, 1e-3);
  VecX params = VecX::LinSpaced(5, 1.0, 2.0);
  const VecX before = params;
  adam_step(state, params, VecX::Zero(5));
  CHECK(params == before);
  CHECK(state.step == 1);
}

TEST_CASE("adam: degenerate betas give the sign update", "[neural]") {
  AdamState state = AdamState::create(3, 0.01);
  state.beta1 = 0.0;
  state.beta2 = 0.0;
  VecX params = VecX::Zero(3);
  VecX grads(3);
  grads << 2.0, -0.5, 0.0;
  adam_step(state, params, grads);
  for (int i = 0; i < 3; ++i) {
    const double expect = -0.01 * grads[i] / (std::abs(grads[i]) + state.epsilon);
    CHECK(params[i] == Catch::Approx(expect).margin(1e-15));
  }
}

TEST_CASE("adam: constant gradient drives the step size to the learning rate", "[neural]") {
  AdamState state = AdamState::create(2, 1e-3);
  VecX params = VecX::Zero(2);
  VecX grads(2);
  grads << 0.37, -42.0;
  VecX prev = params;
  double last_step = 0.0;
  for (int i = 0; i < 500; ++i) {
    prev = params;
    adam_step(state, params, grads);
    last_step = (params - prev).cwiseAbs().maxCoeff();
  }
  CHECK(last_step == Catch::Approx(1e-3).epsilon(1e-3));
  CHECK(params[0] < 0.0);  // moved against the gradient
  CHECK(params[1] > 0.0);

  VecX bad = VecX::Zero(3);
  CHECK_THROWS_AS(adam_step(state, bad, grads), ShapeError);
}

TEST_CASE("identity-decoder harness over the analytic sphere", "[neural]") {
  const AnalyticSdf sphere(Primitive::sphere(Vec3::Zero(), 50.0));
  Rng rng(17);
  std::vector<std::pair<Vec3, double>> batch;
  for (int i = 0; i < 64; ++i) {
    const Vec3 x = (50.0 + rng.uniform(-8.0, 8.0)) * rng.unit_vector();
    batch.push_back({x, sphere.eval(x)});
  }
  const LossReport rep = sdf_loss_terms([&](const Vec3& x) { return sphere.eval(x); }, batch,
                                        0.1, 1.0);
  CHECK(rep.data_term == 0.0);
  CHECK(rep.eikonal_term < 1e-6);
  CHECK(rep.total < 1e-7);
}

TEST_CASE("train step: exact network with unit gradient is a fixed point", "[neural]") {
  auto scene = make_tiny_scene(1, 5);
  Mlp& mlp = scene->net.decoder;
  for (std::size_t i = 0; i < mlp.weights().size(); ++i) {
    mlp.weights()[i].setZero();
    mlp.biases()[i].setZero();
  }
  mlp.weights()[0](0, 0) = 1.0;  // reads x.x * input_scale; output_scale undoes it
  mlp.mark_mutated();
  scene->net.global_proj.setZero();

  Rng rng(19);
  std::vector<TrainSample> batch;
  for (int i = 0; i < 8; ++i) {
    const Vec3 x(rng.uniform(-60, 60), rng.uniform(-60, 60), rng.uniform(-60, 60));
    batch.push_back(TrainSample{&scene->ctx, x, x.x()});
  }
  TrainConfig cfg;
  AdamState adam = AdamState::create(scene->net.num_params(), cfg.learning_rate);
  const VecX before = scene->net.flatten_params();
  const LossReport rep = train_step(scene->net, adam, batch, cfg);
  CHECK(rep.data_term == 0.0);
  CHECK(rep.eikonal_term < 1e-24);
  CHECK((scene->net.flatten_params() - before).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("train step: zero eikonal coefficient reports a zero eikonal term", "[neural]") {
  auto scene = make_tiny_scene(8, 23);
  Rng rng(29);
  std::vector<TrainSample> batch;
  for (int i = 0; i < 16; ++i)
    batch.push_back(TrainSample{&scene->ctx,
                                Vec3(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50)),
                                rng.uniform(-10, 10)});
  TrainConfig cfg;
  cfg.eikonal_coefficient = 0.0;
  AdamState adam = AdamState::create(scene->net.num_params(), cfg.learning_rate);
  const LossReport rep = train_step(scene->net, adam, batch, cfg);
  CHECK(rep.eikonal_term == 0.0);
  CHECK(rep.total == rep.data_term);
}

TEST_CASE("train step: NaN labels abort without touching parameters", "[neural]") {
  auto scene = make_tiny_scene(8, 31);
  std::vector<TrainSample> batch{
      TrainSample{&scene->ctx, Vec3(1, 2, 3), std::numeric_limits<double>::quiet_NaN()}};
  TrainConfig cfg;
  AdamState adam = AdamState::create(scene->net.num_params(), cfg.learning_rate);
  const VecX before = scene->net.flatten_params();
  CHECK_THROWS_AS(train_step(scene->net, adam, batch, cfg), DivergedError);
  CHECK(scene->net.flatten_params() == before);
  CHECK(adam.step == 0);
}

TEST_CASE("train step: two-point overfit drives the data term tiny", "[neural]") {
  // Unit output scale keeps Adam's terminal oscillation well under the
  // target for this toy.
  auto scene = make_tiny_scene(8, 37, 0.01, 1.0);
  Rng rng(41);
  std::vector<TrainSample> batch{TrainSample{&scene->ctx, Vec3(20, 30, -10), 4.0},
                                 TrainSample{&scene->ctx, Vec3(-35, 10, 25), -6.0}};
  TrainConfig cfg;
  cfg.eikonal_coefficient = 0.0;
  cfg.learning_rate = 1e-3;
  AdamState adam = AdamState::create(scene->net.num_params(), cfg.learning_rate);
  double final_term = 1e9;
  for (int step = 0; step < 2000; ++step)
    final_term = train_step(scene->net, adam, batch, cfg).data_term;
  CHECK(final_term < 1e-3);
}

TEST_CASE("loss is non-increasing on a convex linear toy", "[neural]") {
  auto scene = make_tiny_scene(1, 43);
  scene->net.decoder.weights()[0].setZero();
  scene->net.decoder.biases()[0].setZero();
  scene->net.decoder.mark_mutated();
  scene->net.global_proj.setZero();
  std::vector<TrainSample> batch{TrainSample{&scene->ctx, Vec3(10, 0, 0), -40.0},
                                 TrainSample{&scene->ctx, Vec3(0, 15, 5), -44.0}};
  TrainConfig cfg;
  cfg.eikonal_coefficient = 0.0;
  AdamState adam = AdamState::create(scene->net.num_params(), cfg.learning_rate);
  double prev = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 100; ++step) {
    const LossReport rep = train_step(scene->net, adam, batch, cfg);
    CHECK(rep.total <= prev + 1e-12);
    prev = rep.total;
  }
}

TEST_CASE("training is deterministic for a fixed seed and data order", "[neural]") {
  auto run = [](std::uint64_t seed) {
    auto scene = make_tiny_scene(8, seed);
    Rng rng(7);
    std::vector<TrainSample> batch;
    for (int i = 0; i < 8; ++i)
      batch.push_back(TrainSample{&scene->ctx,
                                  Vec3(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50)),
                                  rng.uniform(-10, 10)});
    TrainConfig cfg;
    AdamState adam = AdamState::create(scene->net.num_params(), cfg.learning_rate);
    for (int step = 0; step < 25; ++step) train_step(scene->net, adam, batch, cfg);
    return scene->net.flatten_params();
  };
  CHECK(run(11) == run(11));
}

TEST_CASE("checkpoints round trip with optimizer state", "[neural]") {
  auto scene = make_tiny_scene(8, 47);
  Rng rng(53);
  std::vector<TrainSample> batch;
  for (int i = 0; i < 8; ++i)
    batch.push_back(TrainSample{&scene->ctx,
                                Vec3(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50)),
                                rng.uniform(-10, 10)});
  TrainConfig cfg;
  AdamState adam = AdamState::create(scene->net.num_params(), cfg.learning_rate);
  for (int step = 0; step < 10; ++step) train_step(scene->net, adam, batch, cfg);
  scene->net.iteration = 10;

  const std::string path = "checkpoint_test.nsdf";
  save_checkpoint(path, scene->net, &adam, &cfg);
  const Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.model.flatten_params() == scene->net.flatten_params());
  CHECK(loaded.model.iteration == 10);
  CHECK(loaded.has_adam);
  CHECK(loaded.adam.step == adam.step);
  CHECK(loaded.adam.m == adam.m);
  CHECK(loaded.adam.v == adam.v);
  CHECK(loaded.has_train_config);
  CHECK(loaded.train_config.learning_rate == cfg.learning_rate);
  CHECK(loaded.model.embedding == ArticulationEncoding::kPoseParams);
  std::remove(path.c_str());
}

TEST_CASE("neural field batch evaluation matches scalar evaluation", "[neural]") {
  auto scene = make_tiny_scene(8, 59);
  const NeuralSdf field(scene->net, scene->ctx);
  Rng rng(61);
  std::vector<Vec3> pts;
  for (int i = 0; i < 700; ++i) pts.push_back(rng.uniform_in_box(Box3::cube(100.0)));
  std::vector<double> batch_out(pts.size());
  field.eval_batch(pts, batch_out);
  for (std::size_t i = 0; i < pts.size(); i += 37)
    CHECK(batch_out[i] == Catch::Approx(field.eval(pts[i])).margin(1e-12));
  // Re-running the batch is bit-identical.
  std::vector<double> again(pts.size());
  field.eval_batch(pts, again);
  CHECK(again == batch_out);
}

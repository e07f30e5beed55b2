#pragma once

// The trainable decoder and its optimization machinery: an 8-layer
// skip-connection perceptron with exact reverse-mode gradients (parameters
// and inputs), Adam, and the SDF regression objective
//
//     L = |s - s_hat| + lambda * (|grad s| - 1)^2
//
// where grad s is a central-difference stencil over the query point,
// re-evaluated through the full conditioning pipeline. Forward and backward
// passes run on column batches so training is GEMM-bound.

#include "handsdf/camera.hpp"
#include "handsdf/core.hpp"
#include "handsdf/encoding.hpp"
#include "handsdf/field.hpp"
#include "handsdf/kinematics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace handsdf {

using RowVecX = Eigen::RowVectorXd;

// ---------------------------------------------------------------------------
// Multilayer perceptron.

enum class Activation { kSoftplus, kRelu };

inline const char* to_string(Activation a) {
  return a == Activation::kSoftplus ? "softplus" : "relu";
}
inline Activation activation_from_string(const std::string& s) {
  if (s == "softplus") return Activation::kSoftplus;
  if (s == "relu") return Activation::kRelu;
  throw InvalidInputError("unknown activation: " + s);
}

struct MlpConfig {
  int input_width = 0;
  int hidden_width = 64;
  int num_layers = 8;   // affine layers; the last one is linear with width 1
  int skip_layer = 4;   // input is concatenated to the activations entering
                        // this affine layer (0-based); -1 disables the skip
  Activation activation = Activation::kSoftplus;
  double softplus_beta = 100.0;

  void validate() const {
    require(input_width >= 1, "mlp input width must be positive");
    require(hidden_width >= 1, "mlp hidden width must be positive");
    require(num_layers >= 1, "mlp needs at least one affine layer");
    require(skip_layer == -1 || (skip_layer >= 1 && skip_layer < num_layers),
            "skip layer must be an interior affine layer");
  }

  int layer_in(int i) const {
    int w = i == 0 ? input_width : hidden_width;
    if (i == skip_layer && i != 0) w += input_width;
    return w;
  }
  int layer_out(int i) const { return i == num_layers - 1 ? 1 : hidden_width; }
};

struct MlpCache {
  std::uint64_t revision = 0;
  std::vector<MatX> inputs;          // per-layer input (post skip concat)
  std::vector<MatX> preactivations;  // per-layer affine output
};

struct MlpGrads {
  std::vector<MatX> d_weights;
  std::vector<VecX> d_biases;

  void setZero() {
    for (auto& w : d_weights) w.setZero();
    for (auto& b : d_biases) b.setZero();
  }
};

class Mlp {
 public:
  Mlp() = default;

  static Mlp create(const MlpConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Mlp mlp;
    mlp.cfg_ = cfg;
    Rng rng(derive_seed(seed, 0x11f0));
    mlp.weights_.resize(static_cast<std::size_t>(cfg.num_layers));
    mlp.biases_.resize(static_cast<std::size_t>(cfg.num_layers));
    for (int i = 0; i < cfg.num_layers; ++i) {
      const int in = cfg.layer_in(i), out = cfg.layer_out(i);
      // Per-layer uniform init scaled by fan-in; biases start at zero.
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      MatX& w = mlp.weights_[static_cast<std::size_t>(i)];
      w.resize(out, in);
      for (int r = 0; r < out; ++r)
        for (int c = 0; c < in; ++c) w(r, c) = rng.uniform(-bound, bound);
      mlp.biases_[static_cast<std::size_t>(i)] = VecX::Zero(out);
    }
    return mlp;
  }

  const MlpConfig& config() const { return cfg_; }
  std::uint64_t revision() const { return revision_; }
  std::vector<MatX>& weights() { return weights_; }
  std::vector<VecX>& biases() { return biases_; }
  const std::vector<MatX>& weights() const { return weights_; }
  const std::vector<VecX>& biases() const { return biases_; }
  void mark_mutated() { ++revision_; }

  Eigen::Index num_params() const {
    Eigen::Index n = 0;
    for (std::size_t i = 0; i < weights_.size(); ++i)
      n += weights_[i].size() + biases_[i].size();
    return n;
  }

  /// Batched forward pass over input columns. Returns the 1 x B output row.
  RowVecX forward_batch(const MatX& input, MlpCache* cache = nullptr) const {
    if (input.rows() != cfg_.input_width)
      throw ShapeError("mlp input width mismatch: got " + std::to_string(input.rows()) +
                       ", expected " + std::to_string(cfg_.input_width));
    if (cache) {
      cache->revision = revision_;
      cache->inputs.assign(static_cast<std::size_t>(cfg_.num_layers), MatX());
      cache->preactivations.assign(static_cast<std::size_t>(cfg_.num_layers), MatX());
    }
    MatX h = input;
    for (int i = 0; i < cfg_.num_layers; ++i) {
      if (i == cfg_.skip_layer && i != 0) {
        MatX cat(h.rows() + input.rows(), h.cols());
        cat.topRows(h.rows()) = h;
        cat.bottomRows(input.rows()) = input;
        h = std::move(cat);
      }
      const std::size_t is = static_cast<std::size_t>(i);
      if (cache) cache->inputs[is] = h;
      MatX z = weights_[is] * h;
      z.colwise() += biases_[is];
      if (cache) cache->preactivations[is] = z;
      if (i < cfg_.num_layers - 1)
        h = activate(z);
      else
        h = std::move(z);
    }
    return h.row(0);
  }

  double forward(const VecX& input, MlpCache* cache = nullptr) const {
    return forward_batch(input, cache)(0);
  }

  /// Exact reverse-mode gradients of sum_b upstream[b] * output[b].
  /// Fills `grads` (accumulating) and, when given, the per-column input
  /// gradients (input_width x B).
  void backward_batch(const MlpCache& cache, const RowVecX& upstream, MlpGrads& grads,
                      MatX* input_grads = nullptr) const {
    if (cache.revision != revision_)
      throw ShapeError("mlp cache is stale: parameters changed since the forward pass");
    if (grads.d_weights.empty()) {
      grads.d_weights.resize(weights_.size());
      grads.d_biases.resize(biases_.size());
      for (std::size_t i = 0; i < weights_.size(); ++i) {
        grads.d_weights[i] = MatX::Zero(weights_[i].rows(), weights_[i].cols());
        grads.d_biases[i] = VecX::Zero(biases_[i].size());
      }
    }
    const Eigen::Index cols = upstream.cols();
    MatX delta = upstream;  // d(sum u*out)/d(preactivation of current layer)
    MatX d_input_total = MatX::Zero(cfg_.input_width, cols);
    for (int i = cfg_.num_layers - 1; i >= 0; --i) {
      const std::size_t is = static_cast<std::size_t>(i);
      grads.d_weights[is].noalias() += delta * cache.inputs[is].transpose();
      grads.d_biases[is].noalias() += delta.rowwise().sum();
      MatX d_in = weights_[is].transpose() * delta;
      if (i == cfg_.skip_layer && i != 0) {
        d_input_total += d_in.bottomRows(cfg_.input_width);
        d_in.conservativeResize(d_in.rows() - cfg_.input_width, Eigen::NoChange);
      }
      if (i == 0) {
        d_input_total += d_in;
        break;
      }
      const MatX& z_prev = cache.preactivations[is - 1];
      delta = activate_derivative(z_prev).cwiseProduct(d_in);
    }
    if (input_grads) *input_grads = std::move(d_input_total);
  }

  MatX activate(const MatX& z) const {
    if (cfg_.activation == Activation::kRelu) return z.cwiseMax(0.0);
    const double beta = cfg_.softplus_beta;
    return z.unaryExpr([beta](double x) {
      const double bx = beta * x;
      if (bx > 30.0) return x;
      return std::log1p(std::exp(bx)) / beta;
    });
  }

  MatX activate_derivative(const MatX& z) const {
    if (cfg_.activation == Activation::kRelu)
      return z.unaryExpr([](double x) { return x > 0.0 ? 1.0 : 0.0; });
    const double beta = cfg_.softplus_beta;
    return z.unaryExpr([beta](double x) {
      const double bx = beta * x;
      if (bx > 30.0) return 1.0;
      if (bx < -30.0) return std::exp(bx);
      return 1.0 / (1.0 + std::exp(-bx));
    });
  }

 private:
  MlpConfig cfg_;
  std::vector<MatX> weights_;
  std::vector<VecX> biases_;
  std::uint64_t revision_ = 0;
};

/// Single-sample convenience wrappers.
inline std::pair<double, MlpCache> mlp_forward(const Mlp& mlp, const VecX& input) {
  MlpCache cache;
  const double out = mlp.forward(input, &cache);
  return {out, std::move(cache)};
}

struct MlpBackwardResult {
  MlpGrads grads;
  VecX input_grad;
};

inline MlpBackwardResult mlp_backward(const Mlp& mlp, const MlpCache& cache, double upstream) {
  MlpBackwardResult out;
  RowVecX u(1);
  u(0) = upstream;
  MatX ig;
  mlp.backward_batch(cache, u, out.grads, &ig);
  out.input_grad = ig.col(0);
  return out;
}

// ---------------------------------------------------------------------------
// Adam.

struct AdamState {
  std::int64_t step = 0;
  VecX m;
  VecX v;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState create(Eigen::Index num_params, double lr) {
    AdamState s;
    s.m = VecX::Zero(num_params);
    s.v = VecX::Zero(num_params);
    s.learning_rate = lr;
    return s;
  }
};

/// One standard Adam update with bias correction; mutates params in place.
inline void adam_step(AdamState& state, Eigen::Ref<VecX> params, const Eigen::Ref<const VecX>& grads) {
  if (params.size() != state.m.size() || grads.size() != params.size())
    throw ShapeError("adam: parameter/gradient/moment shapes disagree");
  state.step += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  params -= state.learning_rate *
            (state.m / c1).cwiseQuotient(((state.v / c2).cwiseSqrt().array() + state.epsilon).matrix());
}

// ---------------------------------------------------------------------------
// The conditioned model: decoder + trainable global projection + encodings.

enum class ArticulationEncoding { kJointPositional, kPoseParams };

inline const char* to_string(ArticulationEncoding e) {
  return e == ArticulationEncoding::kJointPositional ? "joint_positional" : "pose_params";
}
inline ArticulationEncoding articulation_encoding_from_string(const std::string& s) {
  if (s == "joint_positional") return ArticulationEncoding::kJointPositional;
  if (s == "pose_params") return ArticulationEncoding::kPoseParams;
  throw InvalidInputError("unknown articulation encoding: " + s);
}

struct PyramidConfig {
  int num_levels = 3;
  int global_dim = 16;
  int image_channels = 2;  // object mask + normalized depth
};

struct NeuralModel {
  Mlp decoder;
  MatX global_proj;  // global_dim x image_channels, trainable
  EncoderConfig encoder;
  PyramidConfig pyramid;
  ArticulationEncoding embedding = ArticulationEncoding::kJointPositional;
  double output_scale = 100.0;  // mm per decoder output unit
  std::uint64_t seed = 0;
  std::int64_t iteration = 0;
  Box3 domain = Box3::cube(150.0);

  int local_feature_width() const { return pyramid.num_levels * pyramid.image_channels; }
  int embed_width() const {
    return embedding == ArticulationEncoding::kJointPositional
               ? articulation_embed_width(encoder)
               : 3 + kArticulationDof;
  }
  int input_width() const {
    return 3 + local_feature_width() + pyramid.global_dim + embed_width();
  }

  static NeuralModel create(const EncoderConfig& enc, const PyramidConfig& pyr,
                            ArticulationEncoding embedding, std::uint64_t seed,
                            int hidden_width = 64) {
    NeuralModel m;
    m.encoder = enc;
    m.pyramid = pyr;
    m.embedding = embedding;
    m.seed = seed;
    MlpConfig cfg;
    cfg.hidden_width = hidden_width;
    m.decoder = Mlp();  // placeholder until input width is known
    cfg.input_width = m.input_width();
    m.decoder = Mlp::create(cfg, seed);
    Rng rng(derive_seed(seed, 0x9107));
    m.global_proj.resize(pyr.global_dim, pyr.image_channels);
    const double bound = 1.0 / std::sqrt(static_cast<double>(pyr.image_channels));
    for (int r = 0; r < m.global_proj.rows(); ++r)
      for (int c = 0; c < m.global_proj.cols(); ++c) m.global_proj(r, c) = rng.uniform(-bound, bound);
    return m;
  }

  Eigen::Index num_params() const { return decoder.num_params() + global_proj.size(); }

  /// Flat parameter order: per layer W row-major then bias, then the global
  /// projection row-major. The checkpoint blob uses the same order.
  VecX flatten_params() const {
    VecX out(num_params());
    Eigen::Index o = 0;
    for (std::size_t i = 0; i < decoder.weights().size(); ++i) {
      const MatX& w = decoder.weights()[i];
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) out[o++] = w(r, c);
      const VecX& b = decoder.biases()[i];
      out.segment(o, b.size()) = b;
      o += b.size();
    }
    for (Eigen::Index r = 0; r < global_proj.rows(); ++r)
      for (Eigen::Index c = 0; c < global_proj.cols(); ++c) out[o++] = global_proj(r, c);
    return out;
  }

  void set_params(const Eigen::Ref<const VecX>& flat) {
    if (flat.size() != num_params()) throw ShapeError("parameter vector size mismatch");
    Eigen::Index o = 0;
    for (std::size_t i = 0; i < decoder.weights().size(); ++i) {
      MatX& w = decoder.weights()[i];
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = flat[o++];
      VecX& b = decoder.biases()[i];
      b = flat.segment(o, b.size());
      o += b.size();
    }
    for (Eigen::Index r = 0; r < global_proj.rows(); ++r)
      for (Eigen::Index c = 0; c < global_proj.cols(); ++c) global_proj(r, c) = flat[o++];
    decoder.mark_mutated();
  }
};

/// Per-scene conditioning state shared by all query points of that scene.
struct SceneContext {
  const HandModel* hand = nullptr;
  VecX articulation;
  RigidTransform global_pose;
  CameraRig camera;
  FeaturePyramid pyramid;
  FkResult fk;

  static SceneContext create(const HandModel& model, const HandPose& pose,
                             const CameraRig& camera, const ImageTensor& image,
                             const NeuralModel& net) {
    SceneContext ctx;
    ctx.hand = &model;
    ctx.articulation = pose.articulation;
    ctx.global_pose = pose.global_transform();
    ctx.camera = camera;
    ctx.pyramid = build_feature_pyramid(image, net.pyramid.num_levels, net.global_proj);
    ctx.fk = forward_kinematics(model, pose.articulation);
    return ctx;
  }

  /// Recompute only the conditioning that depends on the articulation.
  void set_articulation(const VecX& articulation_in) {
    articulation = articulation_in;
    fk = forward_kinematics(*hand, articulation);
  }

  /// Recompute the global feature after the projection matrix changed.
  void refresh_global(const MatX& global_proj) {
    pyramid.global_feature = global_proj * pyramid.channel_mean;
  }
};

/// Assemble the decoder input [x_scaled | phi_local | phi_global | psi].
inline void build_decoder_input(const NeuralModel& net, const SceneContext& ctx, const Vec3& x,
                                Eigen::Ref<VecX> out) {
  const double s = net.encoder.input_scale;
  out.segment<3>(0) = x * s;
  const Vec2 pixel = project_clamped(ctx.camera, ctx.global_pose, x);
  ctx.pyramid.sample_into(pixel, out.segment(3, ctx.pyramid.feature_width()));
  const Eigen::Index psi_off = 3 + ctx.pyramid.feature_width();
  if (net.embedding == ArticulationEncoding::kJointPositional) {
    VecX coords(kArticulationDof);
    for (int j = 1; j < kNumFrames; ++j)
      coords.segment<3>(3 * (j - 1)) =
          ctx.fk.wrist_to_joint[static_cast<std::size_t>(j)].apply(x) * s;
    positional_encode_into(net.encoder, coords, out.segment(psi_off, net.embed_width()));
  } else {
    out.segment<3>(psi_off) = x * s;
    out.segment(psi_off + 3, kArticulationDof) = ctx.articulation;
  }
}

/// The articulation-conditioned neural field under the common SDF contract.
class NeuralSdf final : public SdfField {
 public:
  NeuralSdf(const NeuralModel& model, const SceneContext& ctx)
      : model_(&model), ctx_(&ctx) {}

  double eval(const Vec3& x) const override {
    VecX input(model_->input_width());
    build_decoder_input(*model_, *ctx_, x, input);
    return model_->decoder.forward(input) * model_->output_scale;
  }

  void eval_batch(std::span<const Vec3> points, std::span<double> out) const override {
    constexpr Eigen::Index kBlock = 512;
    MatX input(model_->input_width(), std::min<Eigen::Index>(kBlock, static_cast<Eigen::Index>(points.size())));
    std::size_t done = 0;
    while (done < points.size()) {
      const Eigen::Index n =
          std::min<Eigen::Index>(kBlock, static_cast<Eigen::Index>(points.size() - done));
      for (Eigen::Index i = 0; i < n; ++i)
        build_decoder_input(*model_, *ctx_, points[done + static_cast<std::size_t>(i)],
                            input.col(i));
      const RowVecX s = model_->decoder.forward_batch(input.leftCols(n));
      for (Eigen::Index i = 0; i < n; ++i)
        out[done + static_cast<std::size_t>(i)] = s(i) * model_->output_scale;
      done += static_cast<std::size_t>(n);
    }
  }

  Box3 domain_bounds() const override { return model_->domain; }

 private:
  const NeuralModel* model_;
  const SceneContext* ctx_;
};

// ---------------------------------------------------------------------------
// Training.

struct TrainConfig {
  double learning_rate = 1e-4;
  double eikonal_coefficient = 0.1;
  int batch_size = 64;
  double eikonal_step = 1.0;  // mm
  double l1_truncation = 0.0;  // mm; 0 disables DeepSDF-style truncation
  std::int64_t iterations = 5000;
  std::int64_t checkpoint_every = 1000;
  std::uint64_t seed = 0;

  void validate() const {
    require(eikonal_coefficient >= 0.0, "eikonal coefficient must be non-negative");
    require(batch_size >= 1, "batch size must be positive");
    require(eikonal_step > 0.0, "eikonal step must be positive");
    require(learning_rate > 0.0, "learning rate must be positive");
  }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return nlohmann::json{{"learning_rate", c.learning_rate},
                        {"eikonal_coefficient", c.eikonal_coefficient},
                        {"batch_size", c.batch_size},
                        {"eikonal_step", c.eikonal_step},
                        {"l1_truncation", c.l1_truncation},
                        {"iterations", c.iterations},
                        {"checkpoint_every", c.checkpoint_every},
                        {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.eikonal_coefficient = j.value("eikonal_coefficient", c.eikonal_coefficient);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.eikonal_step = j.value("eikonal_step", c.eikonal_step);
  c.l1_truncation = j.value("l1_truncation", c.l1_truncation);
  c.iterations = j.value("iterations", c.iterations);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

struct TrainSample {
  SceneContext* ctx = nullptr;
  Vec3 x = Vec3::Zero();   // wrist frame, mm
  double sdf = 0.0;        // ground truth, mm
};

struct LossReport {
  double total = 0.0;
  double data_term = 0.0;
  double eikonal_term = 0.0;  // (|grad| - 1)^2 before the lambda weight
};

/// Loss terms of an arbitrary scalar field over a labeled batch; the
/// eikonal term uses the same central-difference stencil as training.
inline LossReport sdf_loss_terms(const std::function<double(const Vec3&)>& f,
                                 std::span<const std::pair<Vec3, double>> batch, double lambda,
                                 double step) {
  require(!batch.empty(), "loss batch must be non-empty");
  LossReport rep;
  for (const auto& [x, s_hat] : batch) {
    rep.data_term += std::abs(f(x) - s_hat);
    if (lambda > 0.0) {
      Vec3 g;
      for (int i = 0; i < 3; ++i) {
        const Vec3 e = Vec3::Unit(i) * step;
        g[i] = (f(x + e) - f(x - e)) / (2.0 * step);
      }
      const double d = g.norm() - 1.0;
      rep.eikonal_term += d * d;
    }
  }
  rep.data_term /= static_cast<double>(batch.size());
  rep.eikonal_term /= static_cast<double>(batch.size());
  rep.total = rep.data_term + lambda * rep.eikonal_term;
  return rep;
}

namespace detail {

inline double truncate(double s, double delta) {
  return delta > 0.0 ? std::clamp(s, -delta, delta) : s;
}

}  // namespace detail

/// One optimization step over a batch. Evaluates the decoder at each query
/// point and its six stencil offsets in a single column batch, forms the
/// loss, backpropagates through the stencil, and applies one Adam update to
/// the decoder and the global projection. Throws DivergedError on NaN loss
/// without touching the parameters.
inline LossReport train_step(NeuralModel& net, AdamState& adam,
                             std::span<const TrainSample> batch, const TrainConfig& cfg) {
  cfg.validate();
  require(!batch.empty(), "training batch must be non-empty");
  const bool eikonal = cfg.eikonal_coefficient > 0.0;
  const Eigen::Index per_sample = eikonal ? 7 : 1;
  const Eigen::Index b = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index cols = b * per_sample;
  const double h = cfg.eikonal_step;

  // The global feature depends on the trainable projection; refresh every
  // context once per step.
  std::vector<SceneContext*> seen;
  for (const auto& s : batch) {
    if (std::find(seen.begin(), seen.end(), s.ctx) == seen.end()) {
      seen.push_back(s.ctx);
      s.ctx->refresh_global(net.global_proj);
    }
  }

  MatX input(net.input_width(), cols);
  for (Eigen::Index i = 0; i < b; ++i) {
    const TrainSample& s = batch[static_cast<std::size_t>(i)];
    build_decoder_input(net, *s.ctx, s.x, input.col(i * per_sample));
    if (eikonal) {
      for (int axis = 0; axis < 3; ++axis) {
        const Vec3 e = Vec3::Unit(axis) * h;
        build_decoder_input(net, *s.ctx, s.x + e, input.col(i * per_sample + 1 + 2 * axis));
        build_decoder_input(net, *s.ctx, s.x - e, input.col(i * per_sample + 2 + 2 * axis));
      }
    }
  }

  MlpCache cache;
  const RowVecX out = net.decoder.forward_batch(input, &cache);

  LossReport rep;
  RowVecX upstream = RowVecX::Zero(cols);  // d loss / d decoder output (mm)
  const double inv_b = 1.0 / static_cast<double>(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    const TrainSample& s = batch[static_cast<std::size_t>(i)];
    const double pred = out(i * per_sample) * net.output_scale;
    const double cs = detail::truncate(pred, cfg.l1_truncation);
    const double ct = detail::truncate(s.sdf, cfg.l1_truncation);
    rep.data_term += std::abs(cs - ct);
    const bool active = cfg.l1_truncation <= 0.0 || std::abs(pred) < cfg.l1_truncation;
    const double sign = cs > ct ? 1.0 : (cs < ct ? -1.0 : 0.0);
    upstream(i * per_sample) = active ? sign * inv_b : 0.0;
    if (eikonal) {
      Vec3 g;
      for (int axis = 0; axis < 3; ++axis)
        g[axis] = (out(i * per_sample + 1 + 2 * axis) - out(i * per_sample + 2 + 2 * axis)) *
                  net.output_scale / (2.0 * h);
      const double norm = g.norm();
      const double d = norm - 1.0;
      rep.eikonal_term += d * d;
      if (norm > 1e-12) {
        const double coeff = cfg.eikonal_coefficient * 2.0 * d / norm * inv_b / (2.0 * h);
        for (int axis = 0; axis < 3; ++axis) {
          upstream(i * per_sample + 1 + 2 * axis) += coeff * g[axis];
          upstream(i * per_sample + 2 + 2 * axis) -= coeff * g[axis];
        }
      }
    }
  }
  rep.data_term *= inv_b;
  rep.eikonal_term *= inv_b;
  rep.total = rep.data_term + cfg.eikonal_coefficient * rep.eikonal_term;
  if (!std::isfinite(rep.total))
    throw DivergedError("training loss is not finite; step rolled back");

  // Backprop. Upstream is w.r.t. mm outputs; the decoder emits scaled units.
  upstream *= net.output_scale;
  MlpGrads grads;
  MatX input_grads;
  net.decoder.backward_batch(cache, upstream, grads, &input_grads);

  // Gradient of the global projection comes through its slice of the input.
  MatX d_proj = MatX::Zero(net.global_proj.rows(), net.global_proj.cols());
  const Eigen::Index global_off = 3 + net.local_feature_width();
  for (Eigen::Index i = 0; i < b; ++i) {
    const TrainSample& s = batch[static_cast<std::size_t>(i)];
    for (Eigen::Index p = 0; p < per_sample; ++p)
      d_proj.noalias() += input_grads.block(global_off, i * per_sample + p,
                                            net.pyramid.global_dim, 1) *
                          s.ctx->pyramid.channel_mean.transpose();
  }

  // Flatten, update, write back.
  VecX flat_grads(net.num_params());
  Eigen::Index o = 0;
  for (std::size_t i = 0; i < grads.d_weights.size(); ++i) {
    const MatX& w = grads.d_weights[i];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) flat_grads[o++] = w(r, c);
    flat_grads.segment(o, grads.d_biases[i].size()) = grads.d_biases[i];
    o += grads.d_biases[i].size();
  }
  for (Eigen::Index r = 0; r < d_proj.rows(); ++r)
    for (Eigen::Index c = 0; c < d_proj.cols(); ++c) flat_grads[o++] = d_proj(r, c);

  VecX params = net.flatten_params();
  adam.learning_rate = cfg.learning_rate;
  adam_step(adam, params, flat_grads);
  if (!params.allFinite()) throw DivergedError("parameters became non-finite after update");
  net.set_params(params);
  return rep;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "NSDF1", u32 header length, header JSON, then f32
// parameter blob; when optimizer state is present, f32 Adam m and v blobs
// follow. Little-endian throughout.

inline void quantize_to_f32(VecX& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = static_cast<double>(static_cast<float>(v[i]));
}

/// Round live parameters (and optimizer moments) to f32. Called right before
/// serialization so that the written state and the in-memory state coincide,
/// which is what makes checkpoint-resume reproduce an uninterrupted run.
inline void quantize_state(NeuralModel& net, AdamState* adam = nullptr) {
  VecX p = net.flatten_params();
  quantize_to_f32(p);
  net.set_params(p);
  if (adam) {
    quantize_to_f32(adam->m);
    quantize_to_f32(adam->v);
  }
}

inline nlohmann::json checkpoint_header(const NeuralModel& net, const AdamState* adam,
                                        const TrainConfig* train_cfg) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["iteration"] = net.iteration;
  j["seed"] = net.seed;
  j["hidden_width"] = net.decoder.config().hidden_width;
  j["num_layers"] = net.decoder.config().num_layers;
  j["skip_layer"] = net.decoder.config().skip_layer;
  j["activation"] = to_string(net.decoder.config().activation);
  j["softplus_beta"] = net.decoder.config().softplus_beta;
  j["output_scale"] = net.output_scale;
  j["embedding"] = to_string(net.embedding);
  j["encoder"] = encoder_config_to_json(net.encoder);
  j["pyramid"] = {{"num_levels", net.pyramid.num_levels},
                  {"global_dim", net.pyramid.global_dim},
                  {"image_channels", net.pyramid.image_channels}};
  j["domain_mm"] = {net.domain.lo.x(), net.domain.lo.y(), net.domain.lo.z(),
                    net.domain.hi.x(), net.domain.hi.y(), net.domain.hi.z()};
  j["param_count"] = net.num_params();
  j["param_layout"] = "per layer: weights row-major, bias; then global projection row-major";
  if (adam) {
    j["adam"] = {{"step", adam->step},
                 {"beta1", adam->beta1},
                 {"beta2", adam->beta2},
                 {"epsilon", adam->epsilon},
                 {"learning_rate", adam->learning_rate}};
  }
  if (train_cfg) j["train_config"] = train_config_to_json(*train_cfg);
  return j;
}

inline void write_f32_blob(std::ostream& os, const VecX& v) {
  std::vector<float> f(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) f[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
  os.write(reinterpret_cast<const char*>(f.data()),
           static_cast<std::streamsize>(f.size() * sizeof(float)));
}

inline VecX read_f32_blob(std::istream& is, Eigen::Index n) {
  std::vector<float> f(static_cast<std::size_t>(n));
  is.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
  if (!is) throw IoError("truncated parameter blob");
  VecX v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = static_cast<double>(f[static_cast<std::size_t>(i)]);
  return v;
}

inline void save_checkpoint(const std::string& path, NeuralModel& net, AdamState* adam = nullptr,
                            const TrainConfig* train_cfg = nullptr) {
  quantize_state(net, adam);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write("NSDF1", 5);
  const std::string header = checkpoint_header(net, adam, train_cfg).dump();
  const std::uint32_t len = static_cast<std::uint32_t>(header.size());
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  write_f32_blob(os, net.flatten_params());
  if (adam) {
    write_f32_blob(os, adam->m);
    write_f32_blob(os, adam->v);
  }
  if (!os) throw IoError("failed while writing checkpoint " + path);
}

struct Checkpoint {
  NeuralModel model;
  AdamState adam;
  bool has_adam = false;
  TrainConfig train_config;
  bool has_train_config = false;
  nlohmann::json header;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[5];
  is.read(magic, 5);
  if (!is || std::string(magic, 5) != "NSDF1") throw IoError(path + " is not an NSDF1 checkpoint");
  std::uint32_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string header_text(len, '\0');
  is.read(header_text.data(), len);
  if (!is) throw IoError("truncated checkpoint header");
  const nlohmann::json j = nlohmann::json::parse(header_text);

  Checkpoint out;
  out.header = j;
  EncoderConfig enc = encoder_config_from_json(j.at("encoder"));
  PyramidConfig pyr;
  pyr.num_levels = j.at("pyramid").at("num_levels").get<int>();
  pyr.global_dim = j.at("pyramid").at("global_dim").get<int>();
  pyr.image_channels = j.at("pyramid").at("image_channels").get<int>();
  const auto embedding = articulation_encoding_from_string(j.at("embedding").get<std::string>());
  out.model = NeuralModel::create(enc, pyr, embedding, j.at("seed").get<std::uint64_t>(),
                                  j.at("hidden_width").get<int>());
  MlpConfig mcfg = out.model.decoder.config();
  mcfg.num_layers = j.at("num_layers").get<int>();
  mcfg.skip_layer = j.at("skip_layer").get<int>();
  mcfg.activation = activation_from_string(j.at("activation").get<std::string>());
  mcfg.softplus_beta = j.at("softplus_beta").get<double>();
  out.model.decoder = Mlp::create(mcfg, j.at("seed").get<std::uint64_t>());
  out.model.output_scale = j.at("output_scale").get<double>();
  out.model.iteration = j.at("iteration").get<std::int64_t>();
  const auto& d = j.at("domain_mm");
  out.model.domain = Box3{Vec3(d[0].get<double>(), d[1].get<double>(), d[2].get<double>()),
                          Vec3(d[3].get<double>(), d[4].get<double>(), d[5].get<double>())};

  const Eigen::Index n = j.at("param_count").get<Eigen::Index>();
  if (n != out.model.num_params()) throw IoError("checkpoint parameter count mismatch");
  out.model.set_params(read_f32_blob(is, n));
  if (j.contains("adam")) {
    out.adam = AdamState::create(n, j.at("adam").at("learning_rate").get<double>());
    out.adam.step = j.at("adam").at("step").get<std::int64_t>();
    out.adam.beta1 = j.at("adam").at("beta1").get<double>();
    out.adam.beta2 = j.at("adam").at("beta2").get<double>();
    out.adam.epsilon = j.at("adam").at("epsilon").get<double>();
    out.adam.m = read_f32_blob(is, n);
    out.adam.v = read_f32_blob(is, n);
    out.has_adam = true;
  }
  if (j.contains("train_config")) {
    out.train_config = train_config_from_json(j.at("train_config"));
    out.has_train_config = true;
  }
  return out;
}

}  // namespace handsdf

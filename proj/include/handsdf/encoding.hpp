#pragma once

// Sinusoidal positional encoding and the articulation conditionings fed to
// the implicit decoder: the articulation-aware embedding (query coordinates
// relative to every joint, position-encoded) and the flat pose-parameter
// baseline used by the ablation.

#include "handsdf/core.hpp"
#include "handsdf/kinematics.hpp"

#include <nlohmann/json.hpp>

namespace handsdf {

struct EncoderConfig {
  int num_frequencies = 6;
  bool include_input = true;
  double input_scale = 0.01;  // 1/mm; +-100 mm maps to +-1 encoder units

  int width_per_scalar() const { return 2 * num_frequencies + (include_input ? 1 : 0); }

  void validate() const {
    require(num_frequencies >= 1, "encoder needs at least one frequency");
    require(std::isfinite(input_scale) && input_scale > 0.0, "input_scale must be positive");
  }
};

inline nlohmann::json encoder_config_to_json(const EncoderConfig& c) {
  return nlohmann::json{{"num_frequencies", c.num_frequencies},
                        {"include_input", c.include_input},
                        {"input_scale", c.input_scale}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.num_frequencies = j.at("num_frequencies").get<int>();
  c.include_input = j.at("include_input").get<bool>();
  c.input_scale = j.at("input_scale").get<double>();
  c.validate();
  return c;
}

/// Per scalar u: [u?] sin(pi u), cos(pi u), sin(2 pi u), cos(2 pi u), ...
/// for frequencies pi * 2^l, l = 0..L-1. Scalars are encoded independently
/// and concatenated in input order. Higher frequencies come from the
/// double-angle recurrence, which keeps batched encoding cheap.
inline void positional_encode_into(const EncoderConfig& cfg, const Eigen::Ref<const VecX>& v,
                                   Eigen::Ref<VecX> out) {
  const int per = cfg.width_per_scalar();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double u = v[i];
    Eigen::Index o = i * per;
    if (cfg.include_input) out[o++] = u;
    double s = std::sin(kPi * u);
    double c = std::cos(kPi * u);
    out[o++] = s;
    out[o++] = c;
    for (int l = 1; l < cfg.num_frequencies; ++l) {
      const double s2 = 2.0 * s * c;
      const double c2 = 1.0 - 2.0 * s * s;
      s = s2;
      c = c2;
      out[o++] = s;
      out[o++] = c;
    }
  }
}

inline VecX positional_encode(const EncoderConfig& cfg, const Eigen::Ref<const VecX>& v) {
  cfg.validate();
  require(v.allFinite(), "encoder input must be finite");
  VecX out(v.size() * cfg.width_per_scalar());
  positional_encode_into(cfg, v, out);
  return out;
}

/// d(encode)/du for every output entry, as a vector aligned with the output.
inline VecX positional_encode_derivative(const EncoderConfig& cfg,
                                         const Eigen::Ref<const VecX>& v) {
  const int per = cfg.width_per_scalar();
  VecX out(v.size() * per);
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double u = v[i];
    Eigen::Index o = i * per;
    if (cfg.include_input) out[o++] = 1.0;
    double s = std::sin(kPi * u);
    double c = std::cos(kPi * u);
    double freq = kPi;
    out[o++] = freq * c;
    out[o++] = -freq * s;
    for (int l = 1; l < cfg.num_frequencies; ++l) {
      const double s2 = 2.0 * s * c;
      const double c2 = 1.0 - 2.0 * s * s;
      s = s2;
      c = c2;
      freq *= 2.0;
      out[o++] = freq * c;
      out[o++] = -freq * s;
    }
  }
  return out;
}

inline int articulation_embed_width(const EncoderConfig& cfg) {
  return kArticulationDof * cfg.width_per_scalar();
}

/// psi(x) = encode(joint-relative coordinates of x, in encoder units).
/// Reads only the articulation, never the global pose.
inline VecX articulation_embed(const HandModel& model, const VecX& articulation, const Vec3& x,
                               const EncoderConfig& cfg) {
  const VecX coords = wrist_to_joint_coords(model, articulation, x) * cfg.input_scale;
  return positional_encode(cfg, coords);
}

/// Jacobian of articulation_embed w.r.t. the query point (width x 3).
inline MatX articulation_embed_jacobian_x(const HandModel& model, const VecX& articulation,
                                          const Vec3& x, const EncoderConfig& cfg) {
  const VecX coords = wrist_to_joint_coords(model, articulation, x) * cfg.input_scale;
  const MatX dcoords_dx = wrist_to_joint_coords_jacobian_x(model, articulation) * cfg.input_scale;
  const VecX denc = positional_encode_derivative(cfg, coords);
  const int per = cfg.width_per_scalar();
  MatX jac(articulation_embed_width(cfg), 3);
  for (int i = 0; i < kArticulationDof; ++i)
    for (int k = 0; k < per; ++k)
      jac.row(i * per + k) = denc[i * per + k] * dcoords_dx.row(i);
  return jac;
}

/// Ablation baseline: the raw concatenation [x, theta_A].
inline VecX pose_param_embed(const VecX& articulation, const Vec3& x) {
  require(articulation.size() == kArticulationDof, "articulation must have 45 scalars");
  require(articulation.allFinite() && x.allFinite(), "inputs must be finite");
  VecX out(3 + kArticulationDof);
  out.head<3>() = x;
  out.tail(kArticulationDof) = articulation;
  return out;
}

}  // namespace handsdf

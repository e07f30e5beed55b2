#pragma once

// Test-time hand-pose refinement: minimize the intersection + contact
// objective over the 45 articulation parameters by gradient descent with a
// backtracking line search, against a frozen SDF snapshot. Gradients chain
// the field's finite-difference spatial gradient through the kinematic
// Jacobian of the capsule skin samples.

#include "handsdf/core.hpp"
#include "handsdf/field.hpp"
#include "handsdf/kinematics.hpp"

#include <nlohmann/json.hpp>

#include <span>
#include <vector>

namespace handsdf {

struct RefineConfig {
  double contact_threshold = 10.0;  // tau, mm
  double contact_margin = 2.0;      // epsilon, mm
  int steps = 200;
  double learning_rate = 1e-4;  // radians per unit gradient
  int hand_samples_per_bone = 32;
  bool freeze_field = true;
  double gradient_step = 1.0;  // mm, for the frozen field's spatial gradient
  int max_halvings = 10;

  void validate() const {
    require(contact_margin >= 0.0 && contact_threshold > contact_margin,
            "need tau > epsilon >= 0");
    require(steps >= 1, "refinement needs at least one step");
    require(hand_samples_per_bone >= 1, "need at least one sample per bone");
    require(learning_rate > 0.0 && gradient_step > 0.0, "rates must be positive");
  }
};

/// Sum over hand-surface points of max(-f(x), 0): total penetration depth.
inline double intersection_penalty(const SdfField& field, std::span<const Vec3> hand_points) {
  require(!hand_points.empty(), "intersection penalty needs points");
  double total = 0.0;
  for (const auto& x : hand_points) total += std::max(-field.eval(x), 0.0);
  return total;
}

/// Sum over contact points of max(|min(f(x) - tau, 0)| - epsilon, 0):
/// contact points closer than tau are pulled toward the surface, with an
/// epsilon dead-band.
inline double contact_loss(const SdfField& field, std::span<const Vec3> contact_points,
                           double tau, double epsilon) {
  require(!contact_points.empty(), "contact loss needs points");
  require(tau > epsilon, "need tau > epsilon");
  double total = 0.0;
  for (const auto& x : contact_points) {
    const double capped = std::min(field.eval(x) - tau, 0.0);
    total += std::max(std::abs(capped) - epsilon, 0.0);
  }
  return total;
}

struct RefineReport {
  std::vector<double> loss;
  std::vector<double> intersection;
  std::vector<double> contact;
  HandPose initial_pose;
  HandPose final_pose;
  bool field_refreshed = false;
  bool diverged = false;
};

inline nlohmann::json refine_report_to_json(const RefineReport& r) {
  nlohmann::json j;
  j["loss"] = r.loss;
  j["intersection"] = r.intersection;
  j["contact"] = r.contact;
  j["initial_pose"] = hand_pose_to_json(r.initial_pose);
  j["final_pose"] = hand_pose_to_json(r.final_pose);
  j["field_refreshed"] = r.field_refreshed;
  j["diverged"] = r.diverged;
  return j;
}

namespace detail {

struct RefineObjective {
  double total = 0.0;
  double intersection = 0.0;
  double contact = 0.0;
};

inline RefineObjective refine_objective(const SdfField& field, const HandModel& model,
                                        const VecX& articulation,
                                        std::span<const BoneLocalSample> samples,
                                        const RefineConfig& cfg, VecX* gradient) {
  const FkDerivatives fkd = forward_kinematics_derivatives(model, articulation);
  RefineObjective obj;
  if (gradient) gradient->setZero();
  for (const auto& s : samples) {
    const Vec3 x = fkd.fk.joint_to_wrist[static_cast<std::size_t>(s.frame)].apply(s.local);
    const double f = field.eval(x);
    double weight = 0.0;  // d(term)/d(f)
    if (f < 0.0) {
      obj.intersection += -f;
      weight -= 1.0;
    }
    if (s.contact && f < cfg.contact_threshold - cfg.contact_margin) {
      obj.contact += cfg.contact_threshold - f - cfg.contact_margin;
      weight -= 1.0;
    }
    if (gradient && weight != 0.0) {
      const Vec3 g = eval_grad(field, x, cfg.gradient_step);
      const MatX jac = posed_point_jacobian(fkd, s);  // 3 x 45
      gradient->noalias() += weight * (jac.transpose() * g);
    }
  }
  obj.total = obj.intersection + obj.contact;
  return obj;
}

}  // namespace detail

/// Gradient descent over the articulation against a frozen field. The global
/// pose stays fixed. Each step takes the steepest-descent direction with a
/// backtracking line search (halving up to cfg.max_halvings times until the
/// loss does not increase; if every trial fails the pose stays put). Returns
/// the refined pose and the full per-step trace. On a non-finite loss the
/// best pose so far is returned with the diverged flag set.
inline std::pair<HandPose, RefineReport> refine_pose(const SdfField& field,
                                                     const HandModel& model, const HandPose& pose,
                                                     const RefineConfig& cfg) {
  cfg.validate();
  const auto samples = capsule_rest_samples(model, cfg.hand_samples_per_bone);

  RefineReport report;
  report.initial_pose = pose;
  HandPose current = pose;
  HandPose best = pose;
  VecX gradient(kArticulationDof);
  detail::RefineObjective obj =
      detail::refine_objective(field, model, current.articulation, samples, cfg, &gradient);
  double best_loss = obj.total;

  for (int step = 0; step < cfg.steps; ++step) {
    if (!std::isfinite(obj.total)) {
      report.diverged = true;
      break;
    }
    double rate = cfg.learning_rate;
    VecX trial_art;
    detail::RefineObjective trial_obj;
    bool accepted = false;
    for (int h = 0; h <= cfg.max_halvings; ++h) {
      trial_art = current.articulation - rate * gradient;
      trial_obj = detail::refine_objective(field, model, trial_art, samples, cfg, nullptr);
      if (std::isfinite(trial_obj.total) && trial_obj.total <= obj.total) {
        accepted = true;
        break;
      }
      rate *= 0.5;
    }
    if (accepted) {
      current.articulation = trial_art;
      obj = trial_obj;
      // Gradient for the next iteration.
      detail::refine_objective(field, model, current.articulation, samples, cfg, &gradient);
    }
    report.loss.push_back(obj.total);
    report.intersection.push_back(obj.intersection);
    report.contact.push_back(obj.contact);
    if (obj.total <= best_loss) {
      best_loss = obj.total;
      best = current;
    }
  }
  report.final_pose = report.diverged ? best : current;
  return {report.final_pose, report};
}

}  // namespace handsdf

#pragma once

// Dataset-level orchestration shared by the command-line tool and the
// acceptance suite: dataset generation, the training loop, reconstruction,
// frozen-field refinement, and evaluation against stored scenes.

#include "handsdf/data.hpp"
#include "handsdf/mesh.hpp"
#include "handsdf/metrics.hpp"
#include "handsdf/neural.hpp"
#include "handsdf/refine.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace handsdf {

// ---------------------------------------------------------------------------
// Dataset generation.

struct GenConfig {
  std::size_t count = 20;
  std::vector<PrimitiveKind> kinds = {PrimitiveKind::kSphere, PrimitiveKind::kBox,
                                      PrimitiveKind::kCapsule};
  std::size_t samples_per_scene = 4096;
  double surface_band_mm = kDefaultSurfaceBandMm;
  std::uint64_t seed = 0;
};

inline std::string scene_dir_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%05zu", index);
  return buf;
}

/// Generates `cfg.count` scenes under `out_dir` (kinds cycle in order) and
/// writes a manifest echoing the configuration.
inline nlohmann::json generate_dataset(const std::string& out_dir, const GenConfig& cfg,
                                       unsigned threads = 1) {
  namespace fs = std::filesystem;
  require(!cfg.kinds.empty(), "need at least one primitive kind");
  require(cfg.count >= 1, "need at least one scene");
  fs::create_directories(out_dir);
  nlohmann::json manifest;
  manifest["count"] = cfg.count;
  manifest["root_seed"] = cfg.seed;
  manifest["samples_per_scene"] = cfg.samples_per_scene;
  manifest["surface_band_mm"] = cfg.surface_band_mm;
  manifest["near_surface_fraction"] = kNearSurfaceFraction;
  manifest["uniform_bounds"] = "camera frustum intersected with the wrist-frame sample box";
  auto scenes = nlohmann::json::array();
  for (std::size_t i = 0; i < cfg.count; ++i) {
    const PrimitiveKind kind = cfg.kinds[i % cfg.kinds.size()];
    const std::uint64_t scene_seed = derive_seed(cfg.seed, i);
    const SceneSpec scene = generate_grasp_scene(kind, scene_seed, threads);
    const SampleSet samples =
        sample_points(scene, cfg.samples_per_scene, cfg.surface_band_mm, scene.sample_bounds,
                      scene_seed);
    const std::string dir = scene_dir_name(i);
    write_scene_dir(out_dir + "/" + dir, scene, samples);
    scenes.push_back({{"dir", dir}, {"kind", to_string(kind)}, {"seed", scene_seed}});
  }
  manifest["scenes"] = scenes;
  std::ofstream os(out_dir + "/manifest.json");
  if (!os) throw IoError("cannot write manifest in " + out_dir);
  os << manifest.dump(2) << "\n";
  return manifest;
}

// ---------------------------------------------------------------------------
// Scene packs: stored data plus the conditioning context.

struct ScenePack {
  StoredScene scene;
  SceneContext ctx;
};

inline std::unique_ptr<ScenePack> make_scene_pack(StoredScene&& stored, const NeuralModel& net) {
  auto pack = std::make_unique<ScenePack>();
  pack->scene = std::move(stored);
  pack->ctx = SceneContext::create(pack->scene.model, pack->scene.pose, pack->scene.camera,
                                   pack->scene.image, net);
  return pack;
}

inline std::vector<std::string> list_scene_dirs(const std::string& dataset_dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> dirs;
  if (!fs::is_directory(dataset_dir)) throw IoError(dataset_dir + " is not a directory");
  for (const auto& entry : fs::directory_iterator(dataset_dir)) {
    if (entry.is_directory() && entry.path().filename().string().rfind("scene_", 0) == 0)
      dirs.push_back(entry.path().string());
  }
  std::sort(dirs.begin(), dirs.end());
  require(!dirs.empty(), "no scene_* directories under " + dataset_dir);
  return dirs;
}

inline std::vector<std::unique_ptr<ScenePack>> load_dataset(const std::string& dataset_dir,
                                                            const NeuralModel& net) {
  std::vector<std::unique_ptr<ScenePack>> packs;
  for (const auto& dir : list_scene_dirs(dataset_dir))
    packs.push_back(make_scene_pack(load_scene_dir(dir), net));
  return packs;
}

// ---------------------------------------------------------------------------
// Training loop.

struct TrainLogRow {
  std::int64_t iteration = 0;
  double loss = 0.0;
  double data_term = 0.0;
  double eikonal_term = 0.0;
};

/// Batch drawn counter-style from (seed, iteration): independent of thread
/// count and trivially resumable from any iteration boundary.
inline std::vector<TrainSample> draw_batch(std::vector<std::unique_ptr<ScenePack>>& packs,
                                           const TrainConfig& cfg, std::int64_t iteration) {
  Rng rng(derive_seed(cfg.seed, 0xb47c000ULL + static_cast<std::uint64_t>(iteration)));
  std::vector<TrainSample> batch(static_cast<std::size_t>(cfg.batch_size));
  for (auto& sample : batch) {
    ScenePack& pack = *packs[rng.index(packs.size())];
    const std::size_t p = rng.index(pack.scene.samples.size());
    sample.ctx = &pack.ctx;
    sample.x = pack.scene.samples.points[p];
    sample.sdf = pack.scene.samples.sdf_values[p];
  }
  return batch;
}

/// Runs (or resumes) training up to cfg.iterations. Writes a checkpoint every
/// cfg.checkpoint_every iterations and at the end when `checkpoint_path` is
/// set; the live state is quantized to match what lands on disk, so a resumed
/// run and an uninterrupted run walk identical trajectories. The optional
/// `stop_hook` is polled after every log row and may end training early.
inline std::vector<TrainLogRow> train_on_scenes(
    NeuralModel& net, AdamState& adam, std::vector<std::unique_ptr<ScenePack>>& packs,
    const TrainConfig& cfg, const std::string& checkpoint_path = "",
    const std::string& log_path = "", std::int64_t log_every = 100,
    const std::function<bool(std::int64_t, const LossReport&)>& stop_hook = nullptr) {
  cfg.validate();
  require(!packs.empty(), "training needs at least one scene");
  std::vector<TrainLogRow> log;
  std::ofstream log_stream;
  if (!log_path.empty()) {
    const bool fresh = net.iteration == 0;
    log_stream.open(log_path, fresh ? std::ios::trunc : std::ios::app);
    if (!log_stream) throw IoError("cannot open loss log " + log_path);
    if (fresh) log_stream << "iteration,loss,data_term,eikonal_term\n";
  }
  auto write_checkpoint = [&]() {
    if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path, net, &adam, &cfg);
  };

  while (net.iteration < cfg.iterations) {
    const std::int64_t it = net.iteration;
    auto batch = draw_batch(packs, cfg, it);
    const LossReport rep = train_step(net, adam, batch, cfg);
    net.iteration = it + 1;
    const bool log_now = (net.iteration % log_every == 0) || net.iteration == cfg.iterations;
    if (log_now) {
      log.push_back(TrainLogRow{net.iteration, rep.total, rep.data_term, rep.eikonal_term});
      if (log_stream) {
        char line[160];
        std::snprintf(line, sizeof(line), "%lld,%.17g,%.17g,%.17g\n",
                      static_cast<long long>(net.iteration), rep.total, rep.data_term,
                      rep.eikonal_term);
        log_stream << line;
      }
      if (stop_hook && stop_hook(net.iteration, rep)) break;
    }
    if (cfg.checkpoint_every > 0 && net.iteration % cfg.checkpoint_every == 0 &&
        net.iteration < cfg.iterations)
      write_checkpoint();
  }
  write_checkpoint();
  return log;
}

/// Mean |prediction - label| over a scene's stored samples, in mm.
inline double mean_abs_error(const NeuralModel& net, ScenePack& pack) {
  pack.ctx.refresh_global(net.global_proj);
  const NeuralSdf field(net, pack.ctx);
  std::vector<double> pred(pack.scene.samples.size());
  field.eval_batch(pack.scene.samples.points, pred);
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    sum += std::abs(pred[i] - pack.scene.samples.sdf_values[i]);
  return sum / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// Reconstruction and refinement.

inline Mesh reconstruct_scene(const NeuralModel& net, SceneContext& ctx,
                              const std::array<int, 3>& resolution, unsigned threads = 1) {
  ctx.refresh_global(net.global_proj);
  const NeuralSdf field(net, ctx);
  return marching_cubes(field, net.domain, resolution, threads);
}

struct NeuralRefineResult {
  HandPose pose;
  RefineReport report;
  GridSdf frozen;     // snapshot used during optimization
  GridSdf refreshed;  // conditioned field re-baked once at the final pose
};

/// Implements the fixed-SDF strategy end to end: bake the conditioned field
/// into a grid snapshot at the current pose, optimize the articulation
/// against the snapshot, then re-evaluate the field once with the optimized
/// pose. The context is left at the refined articulation.
inline NeuralRefineResult refine_against_neural(const NeuralModel& net, SceneContext& ctx,
                                                const HandPose& pose, const RefineConfig& cfg,
                                                int grid_resolution = 96, unsigned threads = 1) {
  ctx.refresh_global(net.global_proj);
  ctx.set_articulation(pose.articulation);
  const NeuralSdf live(net, ctx);
  NeuralRefineResult out;
  out.frozen = GridSdf::bake(live, net.domain, grid_resolution, grid_resolution, grid_resolution,
                             threads);
  auto [refined, report] = refine_pose(out.frozen, *ctx.hand, pose, cfg);
  ctx.set_articulation(refined.articulation);
  out.refreshed = GridSdf::bake(live, net.domain, grid_resolution, grid_resolution,
                                grid_resolution, threads);
  report.field_refreshed = true;
  out.pose = refined;
  out.report = std::move(report);
  return out;
}

// ---------------------------------------------------------------------------
// Held-out evaluation.

struct SceneEvaluation {
  double f5 = 0.0;
  double f10 = 0.0;
  double chamfer_mm2 = 0.0;
};

/// Reconstructs one scene (optionally with a corrupted articulation) and
/// scores it against the stored ground-truth mesh.
inline SceneEvaluation evaluate_scene(const NeuralModel& net, ScenePack& pack,
                                      const std::array<int, 3>& resolution,
                                      const MetricConfig& metric_cfg, unsigned threads = 1,
                                      const VecX* articulation_override = nullptr) {
  if (articulation_override)
    pack.ctx.set_articulation(*articulation_override);
  else
    pack.ctx.set_articulation(pack.scene.pose.articulation);
  const Mesh mesh = reconstruct_scene(net, pack.ctx, resolution, threads);
  SceneEvaluation eval;
  if (mesh.empty()) return eval;  // all-zero scores for an empty reconstruction
  const MetricReport rep = evaluate_meshes(mesh, pack.scene.object_mesh, metric_cfg);
  eval.f5 = rep.f5;
  eval.f10 = rep.f10;
  eval.chamfer_mm2 = rep.chamfer_mm2;
  return eval;
}

}  // namespace handsdf

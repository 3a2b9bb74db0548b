#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <omp.h>

#include "CLI11.hpp"
#include "epitraj/errors.hpp"
#include "epitraj/pipeline.hpp"
#include "epitraj/synth.hpp"

namespace {

using namespace epitraj;

constexpr int kInputError = 2;
constexpr int kEstimationError = 3;

void add_ransac_options(CLI::App* cmd, GeometryParams& g) {
  cmd->add_option("--threshold", g.ransac.inlier_threshold,
                  "inlier threshold on the mean pairwise distance (px)");
  cmd->add_option("--max-iters", g.ransac.max_iters, "RANSAC iteration cap");
  cmd->add_option("--confidence", g.ransac.confidence, "RANSAC stopping confidence");
  cmd->add_option("--sample-cap", g.ransac.sample_cap, "correspondences kept per triplet");
  cmd->add_option("--seed", g.ransac.rng_seed, "random seed");
  cmd->add_option_function<std::string>(
         "--score", [&g](const std::string& s) { g.ransac.score = parse_ransac_score(s); },
         "model ranking: median (default) or count")
      ->check(CLI::IsMember({"count", "median"}));
  cmd->add_option("--static-eps", g.static_eps, "static-camera flow threshold (px)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense trajectories and epipolar motion saliency from optical flow"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker thread cap (0: default)")
      ->check(CLI::NonNegativeNumber);

  // track
  auto* track = app.add_subcommand("track", "flow fields to a trajectory file");
  fs::path fwd_dir, bwd_dir, out_path;
  ConsistencyParams consistency;
  track->add_option("--fwd", fwd_dir, "forward flow directory (.flo)")->required();
  track->add_option("--bwd", bwd_dir, "backward flow directory (.flo)")->required();
  track->add_option("--out", out_path, "trajectory file")->required();
  track->add_option("--alpha", consistency.alpha, "forward-backward relative tolerance");
  track->add_option("--beta", consistency.beta, "forward-backward absolute tolerance");

  // geometry
  auto* geometry = app.add_subcommand("geometry", "per-triplet epipolar geometry (JSON)");
  fs::path traj_path, geom_path;
  GeometryParams gparams;
  geometry->add_option("--trajectories", traj_path, "trajectory file")->required();
  geometry->add_option("--out", out_path, "geometry JSON")->required();
  add_ransac_options(geometry, gparams);

  // epdist
  auto* epdist = app.add_subcommand("epdist", "per-frame epipolar distance maps (PFM)");
  fs::path out_dir;
  epdist->add_option("--trajectories", traj_path, "trajectory file")->required();
  epdist->add_option("--geometry", geom_path, "geometry JSON")->required();
  epdist->add_option("--out", out_dir, "output directory")->required();

  // motion-images
  auto* motion = app.add_subcommand("motion-images", "u, v, ED stacks with input dropout");
  fs::path ed_dir;
  std::optional<fs::path> masks_dir;
  double dropout_fraction = 0.2;
  double percentile = 99.0;
  std::uint64_t seed = 0;
  motion->add_option("--fwd", fwd_dir, "forward flow directory")->required();
  motion->add_option("--ed", ed_dir, "ED map directory")->required();
  motion->add_option("--out", out_dir, "output directory")->required();
  motion->add_option("--masks", masks_dir, "ground-truth masks copied alongside");
  motion->add_option("--dropout-fraction", dropout_fraction, "fraction of frames perturbed")
      ->check(CLI::Range(0.0, 1.0));
  motion->add_option("--percentile", percentile, "ED normalization percentile");
  motion->add_option("--seed", seed, "random seed");

  // saliency
  auto* saliency = app.add_subcommand("saliency", "baseline threshold masks");
  std::optional<double> tau;
  std::size_t min_region = 25;
  saliency->add_option("--ed", ed_dir, "ED map directory")->required();
  saliency->add_option("--out", out_dir, "mask directory")->required();
  saliency->add_option("--tau", tau, "ED threshold (default: 5x sequence median)");
  saliency->add_option("--min-region", min_region, "smallest kept region (px)");

  // synth
  auto* synth = app.add_subcommand("synth", "synthetic sequence with ground truth");
  std::optional<fs::path> config_path;
  std::string preset = "moving";
  std::uint64_t synth_seed = 1;
  synth->add_option("--config", config_path, "scene config (YAML)");
  synth->add_option("--preset", preset, "moving | static | static-patch when no config")
      ->check(CLI::IsMember({"moving", "static", "static-patch"}));
  synth->add_option("--seed", synth_seed, "preset seed");
  synth->add_option("--out", out_dir, "output directory")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "J and F against ground-truth masks");
  fs::path pred_dir, gt_dir;
  eval->add_option("--pred", pred_dir, "predicted mask directory")->required();
  eval->add_option("--gt", gt_dir, "ground-truth mask directory")->required();
  eval->add_option("--out", out_path, "report JSON (a .txt table is written beside it)")
      ->required();

  // run
  auto* run = app.add_subcommand("run", "full pipeline, resumable per stage");
  fs::path run_config;
  bool force = false;
  run->add_option("--config", run_config, "pipeline config (YAML)")->required();
  run->add_flag("--force", force, "rerun stages already completed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (threads > 0) omp_set_num_threads(threads);
    if (*track) {
      stage_track(fwd_dir, bwd_dir, out_path, consistency);
    } else if (*geometry) {
      stage_geometry(traj_path, out_path, gparams);
    } else if (*epdist) {
      stage_epdist(traj_path, geom_path, out_dir);
    } else if (*motion) {
      stage_motion_images(fwd_dir, ed_dir, out_dir, masks_dir, dropout_fraction, seed,
                          percentile);
    } else if (*saliency) {
      stage_saliency(ed_dir, out_dir, tau, min_region);
    } else if (*synth) {
      SceneConfig sc;
      if (config_path) {
        sc = load_scene_config(*config_path);
      } else if (preset == "moving") {
        sc = SceneConfig::moving_camera_preset(synth_seed);
      } else {
        sc = SceneConfig::static_camera_preset(synth_seed, preset == "static-patch");
      }
      export_scene(generate_scene(sc), out_dir);
    } else if (*eval) {
      stage_eval(pred_dir, gt_dir, out_path);
    } else if (*run) {
      PipelineConfig pc = load_pipeline_config(run_config);
      if (threads == 0 && pc.threads > 0) omp_set_num_threads(pc.threads);
      run_pipeline(pc, {force});
    }
  } catch (const EstimationError& e) {
    std::fprintf(stderr, "epitraj: estimation failed: %s\n", e.what());
    return kEstimationError;
  } catch (const Error& e) {
    std::fprintf(stderr, "epitraj: %s\n", e.what());
    return kInputError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "epitraj: %s\n", e.what());
    return kInputError;
  }
  return 0;
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "epitraj/geometry.hpp"
#include "epitraj/image.hpp"
#include "epitraj/trajectories.hpp"

namespace epitraj {

namespace fs = std::filesystem;

/// Positions of every trajectory spanning frames (f, f+1, f+2).
std::vector<Correspondence3> triplet_correspondences(const TrajectorySet& set, int frame);

/// Displacement of each pixel's owner from frame t to t+1. Pixels whose
/// owner ends at t get a displacement too large to count as static.
FlowField trajectory_displacement(const TrajectorySet& set, int frame);

struct GeometryParams {
  RansacParams ransac;
  double static_eps = 0.25;
};

/// Per-triplet models: the fixed static model when the camera is detected
/// as static, RANSAC seeded with rng_seed ^ f otherwise. A failed triplet
/// copies the preceding model; a failed first triplet gets the static model.
/// Throws EstimationError when every triplet fails.
std::vector<TripletGeometry> estimate_geometries(const TrajectorySet& set,
                                                 const GeometryParams& params);

/// Pipeline settings. Relative paths resolve against the config file.
struct PipelineConfig {
  fs::path flow_fwd;
  fs::path flow_bwd;
  fs::path output;
  std::optional<fs::path> gt_masks;
  std::string sequence;
  ConsistencyParams consistency;
  GeometryParams geometry;
  std::optional<double> tau;
  std::size_t min_region = 25;
  double percentile = 99.0;
  double dropout_fraction = 0.2;
  std::uint64_t seed = 0;
  int threads = 0;  ///< 0 keeps the OpenMP default

  /// Throws ConfigError for bad values and IoError for missing inputs.
  void validate() const;
};

PipelineConfig parse_pipeline_config(const std::string& yaml_text,
                                     const fs::path& base_dir = {});
PipelineConfig load_pipeline_config(const fs::path& path);

/// Flow fields of a directory in frame order.
std::vector<FlowField> load_flows(const fs::path& dir);
std::vector<FloatRaster> load_ed_maps(const fs::path& dir);
std::vector<Mask> load_masks(const fs::path& dir);

/// The stage commands. Each writes its outputs atomically.
void stage_track(const fs::path& fwd_dir, const fs::path& bwd_dir, const fs::path& out,
                 const ConsistencyParams& params);
void stage_geometry(const fs::path& trajectories, const fs::path& out,
                    const GeometryParams& params);
void stage_epdist(const fs::path& trajectories, const fs::path& geometry,
                  const fs::path& out_dir);
void stage_motion_images(const fs::path& fwd_dir, const fs::path& ed_dir,
                         const fs::path& out_dir, const std::optional<fs::path>& masks_dir,
                         double dropout_fraction, std::uint64_t seed, double percentile);
void stage_saliency(const fs::path& ed_dir, const fs::path& out_dir,
                    std::optional<double> tau, std::size_t min_region);
void stage_eval(const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& out_json);

struct RunOptions {
  bool force = false;  ///< ignore completed-stage markers
};

/// Runs every stage into config.output. A stage is skipped when its marker
/// records the same parameters and no earlier stage ran. Writes a JSON run
/// log with wall times to config.output / "logs" / "run.json"; everything
/// else under config.output is a deterministic artifact.
void run_pipeline(const PipelineConfig& config, const RunOptions& options = {});

}  // namespace epitraj

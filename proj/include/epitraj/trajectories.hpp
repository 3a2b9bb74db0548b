#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "epitraj/image.hpp"

namespace epitraj {

struct Point2f {
  float x = 0;
  float y = 0;
  bool operator==(const Point2f&) const = default;
};

/// Sub-pixel track through consecutive frames [start_frame, end_frame()].
struct Trajectory {
  std::uint32_t start_frame = 0;
  std::vector<Point2f> points;

  std::uint32_t length() const { return static_cast<std::uint32_t>(points.size()); }
  std::uint32_t end_frame() const { return start_frame + length() - 1; }
  bool spans(std::uint32_t first, std::uint32_t last) const {
    return !points.empty() && start_frame <= first && last <= end_frame();
  }
  const Point2f& at(std::uint32_t frame) const { return points[frame - start_frame]; }
  bool operator==(const Trajectory&) const = default;
};

using TrajectoryId = std::uint32_t;
using IdRaster = Raster<TrajectoryId>;

/// Dense trajectories of a sequence plus, per frame, the trajectory that
/// owns each pixel.
struct TrajectorySet {
  int frames = 0;
  int width = 0;
  int height = 0;
  std::vector<Trajectory> trajectories;
  std::vector<IdRaster> assignment;  ///< one raster per frame

  std::size_t size() const { return trajectories.size(); }
  bool operator==(const TrajectorySet&) const = default;
};

/// Forward-backward check thresholds: a pixel is flagged when
/// |w + w_b|^2 > alpha (|w|^2 + |w_b|^2) + beta.
struct ConsistencyParams {
  double alpha = 0.01;
  double beta = 0.5;
};

/// 1 where the forward flow of frame t is not undone by the backward flow
/// sampled at its target, or where the target leaves the image.
Mask fb_consistency(const FlowField& fwd, const FlowField& bwd,
                    const ConsistencyParams& params = {});

/// fwd[t] maps frame t to t+1, bwd[t] maps frame t+1 back to t.
TrajectorySet build_trajectories(std::span<const FlowField> fwd,
                                 std::span<const FlowField> bwd,
                                 const ConsistencyParams& params = {});

/// Binary format "TRJ1", little-endian: F, h, w (uint32), T (uint64); per
/// trajectory start (uint32), length (uint32), length x (x, y) float32; then
/// F rasters of uint32 ids.
void save_trajectories(const TrajectorySet& set, const std::filesystem::path& path);
TrajectorySet load_trajectories(const std::filesystem::path& path);

/// Structural checks: every pixel owned by exactly one trajectory whose
/// rounded position is that pixel; points in bounds. Throws DataError.
void validate_trajectories(const TrajectorySet& set);

/// Integer pixel a sub-pixel position is assigned to.
inline int round_px(float v) { return static_cast<int>(std::floor(double(v) + 0.5)); }

}  // namespace epitraj

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "epitraj/geometry.hpp"
#include "epitraj/image.hpp"
#include "epitraj/rng.hpp"
#include "epitraj/trajectories.hpp"

namespace epitraj {

/// One epipolar distance per trajectory. Entries with defined == 0 carry
/// value 0 and no evidence (single-frame trajectories).
struct TrajectoryED {
  std::vector<double> values;
  std::vector<std::uint8_t> defined;
};

/// Six pairwise distances (d12, d21, d13, d31, d23, d32) of a correspondence
/// under the model of the triplet starting at `frame`.
using PairwiseFn = std::function<std::array<double, 6>(int frame, const Correspondence3&)>;

/// Mean triplet distance over every consecutive triplet inside each
/// trajectory's span. Length-2 trajectories use (d12 + d21) / 2 of the
/// triplet starting at their first frame, or (d23 + d32) / 2 of the triplet
/// ending at their last frame when no triplet starts there.
TrajectoryED trajectory_ed(const TrajectorySet& set, int triplets, const PairwiseFn& dist);

/// Same with the distances given by per-triplet geometry; geoms[f] must
/// describe frames (f, f+1, f+2). Throws ArgError when geometry is missing.
TrajectoryED trajectory_ed(const TrajectorySet& set, std::span<const TripletGeometry> geoms);

/// Per-frame rasters of the owning trajectory's ED. Undefined pixels take
/// the median of defined 3x3 neighbours, repeated until none remain; a frame
/// without any defined pixel is all zero.
std::vector<FloatRaster> ed_maps(const TrajectorySet& set, const TrajectoryED& ed);

/// Fills undefined pixels (defined == 0) in place by iterated 3x3 medians.
void median_fill(FloatRaster& map, Mask& defined);

/// Linear-interpolated percentile of all samples of all maps.
double sequence_percentile(std::span<const FloatRaster> maps, double percentile);

/// Divides by the sequence-wide percentile and clamps to [0, 1].
std::vector<FloatRaster> normalize_ed(std::span<const FloatRaster> maps,
                                      double percentile = 99.0);

/// Stacks (u, v, ED) per frame. There is one flow field fewer than frames;
/// the last frame reuses the last field.
std::vector<MotionImage> motion_images(std::span<const FlowField> flows,
                                       std::span<const FloatRaster> norm_ed);

enum class DropoutMode { Zero, Noise };

/// Replaces the ED channel by zeros or by uniform [0, 1) draws from `rng`.
MotionImage input_dropout(const MotionImage& image, DropoutMode mode, Rng& rng);

/// Frames perturbed for training and the mode applied to each.
struct DropoutPlan {
  std::uint64_t seed = 0;
  double fraction = 0.0;
  int frames = 0;
  std::vector<std::pair<int, DropoutMode>> perturbed;  ///< ascending frame
};

/// ceil(fraction * frames) distinct frames drawn with `seed`; the first
/// half (rounded up) of the draws is zeroed, the rest get noise.
DropoutPlan plan_dropout(int frames, double fraction, std::uint64_t seed);

/// Writes motion/NNNNNN.pfm, masks/NNNNNN.png (when masks are given) and
/// manifest.json under `dir`. Returns the plan that was applied.
DropoutPlan export_training_set(std::span<const MotionImage> images,
                                std::span<const Mask> masks,
                                const std::filesystem::path& dir, double fraction,
                                std::uint64_t seed);

/// ED > tau, minus 8-connected components smaller than min_region_px, then a
/// 3x3 closing. The closing sees the image surrounded by a one-pixel empty
/// ring, so it never grows regions across the image border.
Mask threshold_saliency(const FloatRaster& ed_map, double tau, std::size_t min_region_px);

/// Baseline threshold: five times the median of all ED samples.
double default_tau(std::span<const FloatRaster> maps);

}  // namespace epitraj

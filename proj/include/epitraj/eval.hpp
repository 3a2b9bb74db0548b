#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "epitraj/image.hpp"

namespace epitraj {

/// Region similarity. Two empty masks score 1.
double iou(const Mask& mask, const Mask& gt);

struct SeriesStats {
  double mean = 0.0;
  double recall = 0.0;  ///< fraction of frames scoring above 0.5
  double decay = 0.0;   ///< first-quartile mean minus last-quartile mean
};

/// Quartiles hold ceil(n / 4) frames each.
SeriesStats series_stats(std::span<const double> per_frame);

/// Set pixels with a 4-neighbour inside the image that is unset.
Mask boundary(const Mask& mask);

/// Contour accuracy: boundary pixels count as matched when the other
/// boundary lies within ceil(tol_fraction * diagonal) pixels (Euclidean).
/// Two empty boundaries score 1; one empty boundary scores 0.
double boundary_f(const Mask& mask, const Mask& gt, double tol_fraction = 0.008);

struct EvalReport {
  std::string sequence;
  std::vector<std::string> frame_names;
  std::vector<double> J;
  std::vector<double> F;
  SeriesStats J_stats;
  SeriesStats F_stats;
};

/// Scores frames 1..n-1; frame 0 is the reference and is skipped.
EvalReport evaluate_masks(std::span<const Mask> pred, std::span<const Mask> gt,
                          const std::string& sequence = "");

/// Pairs the PNG masks of both directories in filename order.
EvalReport evaluate_sequence(const std::filesystem::path& pred_dir,
                             const std::filesystem::path& gt_dir);

std::string report_to_json(const EvalReport& report);
std::string report_to_table(const EvalReport& report);

}  // namespace epitraj

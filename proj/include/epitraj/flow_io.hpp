#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "epitraj/image.hpp"

namespace epitraj {

namespace fs = std::filesystem;

/// Middlebury .flo: float 202021.25, int32 width, int32 height, then
/// interleaved (u, v) float32 samples in row-major order, little-endian.
FlowField read_flo(const fs::path& path);
void write_flo(const FlowField& field, const fs::path& path);

/// Throws DataError if any sample is NaN or infinite.
void check_finite(const FlowField& field);

/// Portable float map. Files are always written little-endian (scale -1);
/// big-endian input is accepted and canonicalized on the next write.
FloatRaster read_pfm_gray(const fs::path& path);
void write_pfm(const FloatRaster& raster, const fs::path& path);

/// Three-channel PFM holding (u, v, ED) per pixel.
MotionImage read_pfm_color(const fs::path& path);
void write_pfm(const MotionImage& image, const fs::path& path);

/// 8-bit grayscale PNG. Any nonzero pixel reads as 1; masks are written
/// with 255 for set pixels.
Mask read_mask(const fs::path& path);
void write_mask(const Mask& mask, const fs::path& path);

/// Wheel coloring of a flow field, normalized by the largest magnitude.
/// Zero flow is white.
ColorImage flow_to_color(const FlowField& field);
void write_png_rgb(const ColorImage& image, const fs::path& path);

/// Regular files in `dir` with the given extension, in numeric-aware
/// filename order (zero-padded names sort numerically).
std::vector<fs::path> list_frames(const fs::path& dir, const std::string& ext);

/// Write to a temporary sibling then rename over `path`.
void write_file_atomic(const fs::path& path, const std::string& bytes);
std::string read_file(const fs::path& path);

}  // namespace epitraj

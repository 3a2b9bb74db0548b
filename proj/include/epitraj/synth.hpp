#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "epitraj/geometry.hpp"
#include "epitraj/image.hpp"

namespace epitraj {

/// Rectangular planar patch facing the camera, moving rigidly.
struct ForegroundPatch {
  Vec3 center{0, 0, 6};         ///< world position at frame 0
  Vec2 half_size{1.0, 1.0};     ///< world units along X and Y
  Vec3 velocity{0, 0, 0};       ///< world units per frame
  /// Frames [pause_begin, pause_end) during which the patch does not move
  /// (the step from frame t to t+1 is skipped when t is in the interval).
  int pause_begin = -1;
  int pause_end = -1;
};

enum class BackgroundKind { Plane, DepthField };

struct SceneConfig {
  int frames = 20;
  int width = 320;
  int height = 240;
  double focal = 300.0;
  /// Principal point; defaults to the image centre.
  std::optional<Vec2> principal;

  Vec3 camera_start{0, 0, 0};
  Vec3 camera_velocity{0, 0, 0};  ///< world units per frame
  double camera_jitter = 0.0;     ///< uniform per-frame centre offset amplitude
  double camera_pan = 0.0;        ///< rotation about the vertical axis, rad/frame
  bool static_camera = false;     ///< a motionless camera is intended

  BackgroundKind background = BackgroundKind::DepthField;
  double background_depth = 10.0;
  Vec2 plane_slope{0, 0};          ///< dZ/dX, dZ/dY for the plane background
  /// Subtracted from the depth field: relief * max(|X|, |Y|). Four planar
  /// walls receding towards the optical axis, so no homography fits most of
  /// the background.
  double relief = 0.0;
  int depth_waves = 3;
  double depth_amplitude = 0.25;   ///< per wave
  double wavelength_min = 6.0;
  double wavelength_max = 12.0;

  std::vector<ForegroundPatch> foreground;

  double flow_noise_sigma = 0.0;
  double outlier_fraction = 0.0;
  std::uint64_t seed = 1;

  /// Throws ConfigError.
  void validate() const;

  /// Translating, jittering camera over a depth-field background with one
  /// foreground patch covering `foreground_fraction` of the first frame and
  /// moving at least 3 px/frame across the epipolar direction.
  static SceneConfig moving_camera_preset(std::uint64_t seed,
                                          double foreground_fraction = 0.30);
  /// Motionless camera; optional moving patch.
  static SceneConfig static_camera_preset(std::uint64_t seed, bool moving_patch);
};

SceneConfig load_scene_config(const std::filesystem::path& path);
SceneConfig parse_scene_config(const std::string& yaml_text);
std::string scene_config_to_yaml(const SceneConfig& config);

struct SceneGroundTruth {
  SceneConfig config;
  Mat3 K;
  std::vector<Mat34> cameras;               ///< F cameras, K [R | -R C]
  std::vector<FlowField> exact_fwd;         ///< F-1 fields, t -> t+1
  std::vector<FlowField> exact_bwd;         ///< F-1 fields, t+1 -> t
  std::vector<FlowField> fwd;               ///< exported (noise applied)
  std::vector<FlowField> bwd;
  std::vector<Mask> foreground;             ///< F masks
  std::vector<Mask> visible_next;           ///< F-1: pixel of t visible at t+1
  std::vector<std::array<Mat3, 3>> triplet_fundamentals;  ///< F21, F31, F32

  /// Projections of the surface point seen at integer pixel (x, y) of
  /// `frame`, for that frame and every following frame while it stays
  /// visible.
  std::vector<Vec2> track(int frame, int x, int y) const;
};

/// Exact scene rendering. Throws ConfigError.
SceneGroundTruth generate_scene(const SceneConfig& config);

/// Writes flow_fwd/, flow_bwd/ (.flo), masks/ (.png), scene.json (cameras,
/// intrinsics, true fundamentals) and scene.yaml under `dir`.
void export_scene(const SceneGroundTruth& scene, const std::filesystem::path& dir);

/// F with x_j^T F x_i = 0, rank 2, unit norm. Throws DegenerateError for
/// coincident camera centres.
Mat3 true_fundamental(const Mat34& Pi, const Mat34& Pj);

}  // namespace epitraj

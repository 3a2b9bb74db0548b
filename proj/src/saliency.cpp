#include "epitraj/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "epitraj/errors.hpp"
#include "epitraj/flow_io.hpp"

namespace epitraj {

namespace {

Vec2 to_vec(const Point2f& p) { return {p.x, p.y}; }

double median_of(std::vector<double>& v) {
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + n / 2, v.end());
  const double upper = v[n / 2];
  if (n % 2) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + n / 2);
  return 0.5 * (lower + upper);
}

const char* mode_name(DropoutMode m) { return m == DropoutMode::Zero ? "zero" : "noise"; }

}  // namespace

TrajectoryED trajectory_ed(const TrajectorySet& set, int triplets, const PairwiseFn& dist) {
  if (set.frames >= 3 && triplets != set.frames - 2) {
    throw ArgError("trajectory_ed: expected " + std::to_string(set.frames - 2) +
                   " triplet geometries, got " + std::to_string(triplets));
  }
  if (set.frames < 3) throw ArgError("trajectory_ed: needs at least three frames");

  TrajectoryED out;
  const auto n = static_cast<std::ptrdiff_t>(set.trajectories.size());
  out.values.assign(n, 0.0);
  out.defined.assign(n, 0);
#pragma omp parallel for schedule(dynamic, 256)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const Trajectory& tr = set.trajectories[i];
    const int start = static_cast<int>(tr.start_frame);
    const int len = static_cast<int>(tr.length());
    if (len >= 3) {
      double sum = 0;
      for (int f = start; f + 2 < start + len; ++f) {
        const auto c = make_correspondence(to_vec(tr.at(f)), to_vec(tr.at(f + 1)),
                                           to_vec(tr.at(f + 2)), i);
        const auto d = dist(f, c);
        for (double x : d) sum += x;
      }
      out.values[i] = sum / (len - 2);
      out.defined[i] = 1;
    } else if (len == 2) {
      const Vec2 a = to_vec(tr.points[0]);
      const Vec2 b = to_vec(tr.points[1]);
      if (start + 2 < set.frames) {
        const auto d = dist(start, make_correspondence(a, b, b, i));
        out.values[i] = 0.5 * (d[0] + d[1]);
      } else {
        const auto d = dist(start - 1, make_correspondence(a, a, b, i));
        out.values[i] = 0.5 * (d[4] + d[5]);
      }
      out.defined[i] = 1;
    }
  }
  return out;
}

TrajectoryED trajectory_ed(const TrajectorySet& set, std::span<const TripletGeometry> geoms) {
  for (std::size_t f = 0; f < geoms.size(); ++f) {
    if (geoms[f].frame != static_cast<int>(f)) {
      throw ArgError("trajectory_ed: geometry for triplet " + std::to_string(f) + " missing");
    }
  }
  return trajectory_ed(set, static_cast<int>(geoms.size()),
                       [&](int f, const Correspondence3& c) {
                         return pairwise_distances(geoms[f], c);
                       });
}

void median_fill(FloatRaster& map, Mask& defined) {
  const int w = map.width();
  const int h = map.height();
  if (std::find(defined.data().begin(), defined.data().end(), 1) == defined.data().end()) {
    std::fill(map.data().begin(), map.data().end(), 0.0f);
    std::fill(defined.data().begin(), defined.data().end(), 1);
    return;
  }
  std::vector<double> neigh;
  std::vector<std::pair<std::size_t, float>> updates;
  for (;;) {
    updates.clear();
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (defined(x, y)) continue;
        neigh.clear();
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = x + dx;
            const int ny = y + dy;
            if (map.contains(nx, ny) && defined(nx, ny)) neigh.push_back(map(nx, ny));
          }
        }
        if (!neigh.empty()) {
          updates.emplace_back(static_cast<std::size_t>(y) * w + x,
                               static_cast<float>(median_of(neigh)));
        }
      }
    }
    if (updates.empty()) break;
    for (const auto& [i, v] : updates) {
      map[i] = v;
      defined[i] = 1;
    }
  }
}

std::vector<FloatRaster> ed_maps(const TrajectorySet& set, const TrajectoryED& ed) {
  if (ed.values.size() != set.trajectories.size() ||
      ed.defined.size() != set.trajectories.size()) {
    throw ArgError("ed_maps: ED count differs from trajectory count");
  }
  std::vector<FloatRaster> maps(set.frames);
#pragma omp parallel for schedule(dynamic, 1)
  for (int f = 0; f < set.frames; ++f) {
    FloatRaster map(set.width, set.height);
    Mask defined(set.width, set.height);
    const IdRaster& owner = set.assignment[f];
    for (std::size_t i = 0; i < map.size(); ++i) {
      const TrajectoryId id = owner[i];
      if (ed.defined[id]) {
        map[i] = static_cast<float>(ed.values[id]);
        defined[i] = 1;
      }
    }
    median_fill(map, defined);
    maps[f] = std::move(map);
  }
  return maps;
}

double sequence_percentile(std::span<const FloatRaster> maps, double percentile) {
  if (percentile < 0 || percentile > 100) throw ArgError("percentile outside [0, 100]");
  std::vector<float> all;
  for (const auto& m : maps) all.insert(all.end(), m.data().begin(), m.data().end());
  if (all.empty()) return 0.0;
  const double rank = percentile / 100.0 * static_cast<double>(all.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, all.size() - 1);
  std::nth_element(all.begin(), all.begin() + lo, all.end());
  const double a = all[lo];
  const double b = hi == lo ? a : *std::min_element(all.begin() + lo + 1, all.end());
  return a + (rank - static_cast<double>(lo)) * (b - a);
}

std::vector<FloatRaster> normalize_ed(std::span<const FloatRaster> maps, double percentile) {
  const double scale = sequence_percentile(maps, percentile);
  std::vector<FloatRaster> out(maps.begin(), maps.end());
  for (auto& m : out) {
    for (float& v : m.data()) {
      v = scale > 0 ? static_cast<float>(std::clamp(v / scale, 0.0, 1.0)) : 0.0f;
    }
  }
  return out;
}

std::vector<MotionImage> motion_images(std::span<const FlowField> flows,
                                       std::span<const FloatRaster> norm_ed) {
  if (flows.empty() || norm_ed.size() != flows.size() + 1) {
    throw ArgError("motion_images: need F ED maps for F-1 flow fields");
  }
  std::vector<MotionImage> out;
  for (std::size_t t = 0; t < norm_ed.size(); ++t) {
    const FlowField& f = flows[std::min(t, flows.size() - 1)];
    if (!norm_ed[t].same_shape(f.u)) throw ArgError("motion_images: shape mismatch");
    out.push_back({f.u, f.v, norm_ed[t]});
  }
  return out;
}

MotionImage input_dropout(const MotionImage& image, DropoutMode mode, Rng& rng) {
  MotionImage out = image;
  for (float& v : out.ed.data()) {
    v = mode == DropoutMode::Zero ? 0.0f : static_cast<float>(rng.uniform());
  }
  return out;
}

DropoutPlan plan_dropout(int frames, double fraction, std::uint64_t seed) {
  if (frames < 0 || !(fraction >= 0 && fraction <= 1)) {
    throw ArgError("dropout fraction must lie in [0, 1]");
  }
  DropoutPlan plan{seed, fraction, frames, {}};
  // The tolerance keeps products like 0.2 * 10 from rounding up.
  const int count = static_cast<int>(std::ceil(fraction * frames - 1e-9));
  std::vector<int> order(frames);
  for (int i = 0; i < frames; ++i) order[i] = i;
  Rng rng(seed);
  for (int i = 0; i < count; ++i) {
    const auto j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(frames - i)));
    std::swap(order[i], order[j]);
  }
  const int zeros = (count + 1) / 2;
  for (int i = 0; i < count; ++i) {
    plan.perturbed.emplace_back(order[i], i < zeros ? DropoutMode::Zero : DropoutMode::Noise);
  }
  std::sort(plan.perturbed.begin(), plan.perturbed.end());
  return plan;
}

DropoutPlan export_training_set(std::span<const MotionImage> images,
                                std::span<const Mask> masks,
                                const std::filesystem::path& dir, double fraction,
                                std::uint64_t seed) {
  if (!masks.empty() && masks.size() != images.size()) {
    throw ArgError("export_training_set: mask count differs from frame count");
  }
  const DropoutPlan plan = plan_dropout(static_cast<int>(images.size()), fraction, seed);
  std::filesystem::create_directories(dir / "motion");
  if (!masks.empty()) std::filesystem::create_directories(dir / "masks");

  std::vector<const std::pair<int, DropoutMode>*> by_frame(images.size(), nullptr);
  for (const auto& p : plan.perturbed) by_frame[p.first] = &p;

  nlohmann::ordered_json manifest;
  manifest["seed"] = seed;
  manifest["fraction"] = fraction;
  manifest["frames"] = images.size();
  manifest["perturbed"] = nlohmann::ordered_json::array();
  char name[32];
  for (std::size_t t = 0; t < images.size(); ++t) {
    std::snprintf(name, sizeof name, "%06zu", t);
    if (by_frame[t]) {
      // A stream per frame keeps each frame's noise independent of the plan.
      Rng rng(seed ^ (0x9E3779B97F4A7C15ull * (t + 1)));
      write_pfm(input_dropout(images[t], by_frame[t]->second, rng),
                dir / "motion" / (std::string(name) + ".pfm"));
      manifest["perturbed"].push_back({{"frame", t}, {"mode", mode_name(by_frame[t]->second)}});
    } else {
      write_pfm(images[t], dir / "motion" / (std::string(name) + ".pfm"));
    }
    if (!masks.empty()) write_mask(masks[t], dir / "masks" / (std::string(name) + ".png"));
  }
  write_file_atomic(dir / "manifest.json", manifest.dump(1) + "\n");
  return plan;
}

Mask threshold_saliency(const FloatRaster& ed_map, double tau, std::size_t min_region_px) {
  if (!(tau >= 0)) throw ArgError("threshold_saliency: tau must be nonnegative");
  const int w = ed_map.width();
  const int h = ed_map.height();
  Mask mask(w, h);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = ed_map[i] > tau ? 1 : 0;

  // 8-connected components below the size limit are removed.
  if (min_region_px > 1) {
    Raster<std::uint8_t> seen(w, h);
    std::vector<std::pair<int, int>> stack;
    std::vector<std::pair<int, int>> component;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!mask(x, y) || seen(x, y)) continue;
        component.clear();
        stack.assign(1, {x, y});
        seen(x, y) = 1;
        while (!stack.empty()) {
          const auto [cx, cy] = stack.back();
          stack.pop_back();
          component.emplace_back(cx, cy);
          for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
              const int nx = cx + dx;
              const int ny = cy + dy;
              if (mask.contains(nx, ny) && mask(nx, ny) && !seen(nx, ny)) {
                seen(nx, ny) = 1;
                stack.emplace_back(nx, ny);
              }
            }
          }
        }
        if (component.size() < min_region_px) {
          for (const auto& [cx, cy] : component) mask(cx, cy) = 0;
        }
      }
    }
  }

  // Closing on the domain padded by one empty pixel.
  Mask padded(w + 2, h + 2);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) padded(x + 1, y + 1) = mask(x, y);
  Mask dilated(w + 2, h + 2);
  for (int y = 0; y < h + 2; ++y) {
    for (int x = 0; x < w + 2; ++x) {
      std::uint8_t v = 0;
      for (int dy = -1; dy <= 1 && !v; ++dy)
        for (int dx = -1; dx <= 1 && !v; ++dx)
          if (padded.contains(x + dx, y + dy)) v = padded(x + dx, y + dy);
      dilated(x, y) = v;
    }
  }
  Mask out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::uint8_t v = 1;
      for (int dy = 0; dy <= 2 && v; ++dy)
        for (int dx = 0; dx <= 2 && v; ++dx) v = dilated(x + dx, y + dy);
      out(x, y) = v;
    }
  }
  return out;
}

double default_tau(std::span<const FloatRaster> maps) {
  return 5.0 * sequence_percentile(maps, 50.0);
}

}  // namespace epitraj

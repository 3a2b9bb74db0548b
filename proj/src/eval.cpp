#include "epitraj/eval.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include <nlohmann/json.hpp>

#include "epitraj/errors.hpp"
#include "epitraj/flow_io.hpp"

namespace epitraj {

namespace {

void require_same_shape(const Mask& a, const Mask& b, const char* what) {
  if (!a.same_shape(b)) throw ArgError(std::string(what) + ": mask sizes differ");
}

// Dilation by a disk of the given radius.
Mask dilate_disk(const Mask& m, int radius) {
  const int w = m.width();
  const int h = m.height();
  std::vector<std::pair<int, int>> offsets;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dx * dx + dy * dy <= radius * radius) offsets.emplace_back(dx, dy);
  Mask out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!m(x, y)) continue;
      for (const auto& [dx, dy] : offsets) {
        if (out.contains(x + dx, y + dy)) out(x + dx, y + dy) = 1;
      }
    }
  }
  return out;
}

nlohmann::ordered_json stats_json(const SeriesStats& s) {
  return {{"mean", s.mean}, {"recall", s.recall}, {"decay", s.decay}};
}

}  // namespace

double iou(const Mask& mask, const Mask& gt) {
  require_same_shape(mask, gt, "iou");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const bool a = mask[i] != 0;
    const bool b = gt[i] != 0;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

SeriesStats series_stats(std::span<const double> v) {
  SeriesStats s;
  if (v.empty()) return s;
  const auto n = v.size();
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  s.recall = static_cast<double>(std::count_if(v.begin(), v.end(),
                                               [](double x) { return x > 0.5; })) /
             n;
  const std::size_t q = (n + 3) / 4;
  const double first = std::accumulate(v.begin(), v.begin() + q, 0.0) / q;
  const double last = std::accumulate(v.end() - q, v.end(), 0.0) / q;
  s.decay = first - last;
  return s;
}

Mask boundary(const Mask& m) {
  const int w = m.width();
  const int h = m.height();
  Mask b(w, h);
  constexpr int dx[4] = {1, -1, 0, 0};
  constexpr int dy[4] = {0, 0, 1, -1};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!m(x, y)) continue;
      for (int k = 0; k < 4; ++k) {
        const int nx = x + dx[k];
        const int ny = y + dy[k];
        if (m.contains(nx, ny) && !m(nx, ny)) {
          b(x, y) = 1;
          break;
        }
      }
    }
  }
  return b;
}

double boundary_f(const Mask& mask, const Mask& gt, double tol_fraction) {
  require_same_shape(mask, gt, "boundary_f");
  if (tol_fraction < 0) throw ArgError("boundary_f: negative tolerance");
  const Mask bm = boundary(mask);
  const Mask bg = boundary(gt);
  const auto nm = std::count(bm.data().begin(), bm.data().end(), 1);
  const auto ng = std::count(bg.data().begin(), bg.data().end(), 1);
  if (nm == 0 && ng == 0) return 1.0;
  if (nm == 0 || ng == 0) return 0.0;

  const double diag = std::hypot(mask.width(), mask.height());
  const int radius = static_cast<int>(std::ceil(tol_fraction * diag));
  const Mask gt_zone = dilate_disk(bg, radius);
  const Mask pred_zone = dilate_disk(bm, radius);
  std::size_t pred_hit = 0;
  std::size_t gt_hit = 0;
  for (std::size_t i = 0; i < bm.size(); ++i) {
    pred_hit += bm[i] && gt_zone[i];
    gt_hit += bg[i] && pred_zone[i];
  }
  const double precision = static_cast<double>(pred_hit) / nm;
  const double recall = static_cast<double>(gt_hit) / ng;
  if (precision + recall == 0) return 0.0;
  return 2 * precision * recall / (precision + recall);
}

EvalReport evaluate_masks(std::span<const Mask> pred, std::span<const Mask> gt,
                          const std::string& sequence) {
  if (pred.size() != gt.size()) {
    throw ArgError("evaluate: " + std::to_string(pred.size()) + " predicted vs " +
                   std::to_string(gt.size()) + " ground-truth masks");
  }
  if (pred.size() < 2) throw ArgError("evaluate: need at least two frames");
  EvalReport r;
  r.sequence = sequence;
  const std::size_t n = pred.size() - 1;
  r.J.resize(n);
  r.F.resize(n);
  for (std::size_t t = 1; t < pred.size(); ++t) {
    require_same_shape(pred[t], gt[t], "evaluate");
  }
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t k = 0; k < n; ++k) {
    r.J[k] = iou(pred[k + 1], gt[k + 1]);
    r.F[k] = boundary_f(pred[k + 1], gt[k + 1]);
  }
  for (std::size_t t = 1; t < pred.size(); ++t) {
    char name[16];
    std::snprintf(name, sizeof name, "%zu", t);
    r.frame_names.emplace_back(name);
  }
  r.J_stats = series_stats(r.J);
  r.F_stats = series_stats(r.F);
  return r;
}

EvalReport evaluate_sequence(const std::filesystem::path& pred_dir,
                             const std::filesystem::path& gt_dir) {
  const auto pred_files = list_frames(pred_dir, ".png");
  const auto gt_files = list_frames(gt_dir, ".png");
  if (pred_files.empty()) throw ArgError("evaluate: no masks in " + pred_dir.string());
  if (pred_files.size() != gt_files.size()) {
    throw ArgError("evaluate: " + std::to_string(pred_files.size()) + " masks in " +
                   pred_dir.string() + " but " + std::to_string(gt_files.size()) +
                   " in " + gt_dir.string());
  }
  std::vector<Mask> pred;
  std::vector<Mask> gt;
  for (const auto& p : pred_files) pred.push_back(read_mask(p));
  for (const auto& p : gt_files) gt.push_back(read_mask(p));
  EvalReport r = evaluate_masks(pred, gt, gt_dir.parent_path().filename().string());
  for (std::size_t t = 1; t < pred_files.size(); ++t) {
    r.frame_names[t - 1] = pred_files[t].stem().string();
  }
  return r;
}

std::string report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["sequence"] = r.sequence;
  j["J"] = stats_json(r.J_stats);
  j["F"] = stats_json(r.F_stats);
  j["frames"] = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < r.J.size(); ++k) {
    j["frames"].push_back({{"frame", r.frame_names[k]}, {"J", r.J[k]}, {"F", r.F[k]}});
  }
  return j.dump(1) + "\n";
}

std::string report_to_table(const EvalReport& r) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "sequence: %s\n", r.sequence.c_str());
  out += line;
  std::snprintf(line, sizeof line, "%-10s %8s %8s\n", "frame", "J", "F");
  out += line;
  for (std::size_t k = 0; k < r.J.size(); ++k) {
    std::snprintf(line, sizeof line, "%-10s %8.4f %8.4f\n", r.frame_names[k].c_str(),
                  r.J[k], r.F[k]);
    out += line;
  }
  std::snprintf(line, sizeof line, "%-10s %8s %8s %8s\n", "metric", "mean", "recall", "decay");
  out += line;
  std::snprintf(line, sizeof line, "%-10s %8.4f %8.4f %8.4f\n", "J", r.J_stats.mean,
                r.J_stats.recall, r.J_stats.decay);
  out += line;
  std::snprintf(line, sizeof line, "%-10s %8.4f %8.4f %8.4f\n", "F", r.F_stats.mean,
                r.F_stats.recall, r.F_stats.decay);
  out += line;
  return out;
}

}  // namespace epitraj

#include "epitraj/trajectories.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "epitraj/errors.hpp"
#include "epitraj/flow_io.hpp"
#include "bytes.hpp"

namespace epitraj {

namespace {

constexpr char kMagic[4] = {'T', 'R', 'J', '1'};
constexpr TrajectoryId kNone = std::numeric_limits<TrajectoryId>::max();

bool inside(double x, double y, int w, int h) {
  return x >= 0.0 && y >= 0.0 && x <= w - 1 && y <= h - 1;
}

bool fb_agrees(double fu, double fv, double bu, double bv, const ConsistencyParams& params) {
  const double du = fu + bu;
  const double dv = fv + bv;
  return du * du + dv * dv <=
         params.alpha * (fu * fu + fv * fv + bu * bu + bv * bv) + params.beta;
}

}  // namespace

Mask fb_consistency(const FlowField& fwd, const FlowField& bwd,
                    const ConsistencyParams& params) {
  if (fwd.width() != bwd.width() || fwd.height() != bwd.height()) {
    throw ArgError("fb_consistency: forward and backward flow differ in size");
  }
  const int w = fwd.width();
  const int h = fwd.height();
  Mask occluded(w, h);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double fu = fwd.u(x, y);
      const double fv = fwd.v(x, y);
      const double tx = x + fu;
      const double ty = y + fv;
      if (!inside(tx, ty, w, h)) {
        occluded(x, y) = 1;
        continue;
      }
      const double bu = sample_bilinear(bwd.u, tx, ty);
      const double bv = sample_bilinear(bwd.v, tx, ty);
      occluded(x, y) = fb_agrees(fu, fv, bu, bv, params) ? 0 : 1;
    }
  }
  return occluded;
}

TrajectorySet build_trajectories(std::span<const FlowField> fwd,
                                 std::span<const FlowField> bwd,
                                 const ConsistencyParams& params) {
  if (fwd.empty()) throw ArgError("build_trajectories: no flow fields");
  if (fwd.size() != bwd.size()) {
    throw ArgError("build_trajectories: forward/backward counts differ");
  }
  const int w = fwd[0].width();
  const int h = fwd[0].height();
  if (w <= 0 || h <= 0) throw ArgError("build_trajectories: empty flow");
  for (std::size_t t = 0; t < fwd.size(); ++t) {
    if (fwd[t].width() != w || fwd[t].height() != h || bwd[t].width() != w ||
        bwd[t].height() != h) {
      throw ArgError("build_trajectories: inconsistent flow dimensions");
    }
  }

  TrajectorySet set;
  set.frames = static_cast<int>(fwd.size()) + 1;
  set.width = w;
  set.height = h;
  set.assignment.reserve(set.frames);

  auto& trajs = set.trajectories;
  IdRaster first(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      first(x, y) = static_cast<TrajectoryId>(trajs.size());
      trajs.push_back({0, {Point2f{float(x), float(y)}}});
    }
  }
  set.assignment.push_back(std::move(first));

  std::vector<TrajectoryId> alive(trajs.size());
  for (std::size_t i = 0; i < alive.size(); ++i) alive[i] = static_cast<TrajectoryId>(i);

  for (std::size_t t = 0; t + 1 < static_cast<std::size_t>(set.frames); ++t) {
    const Mask occluded = fb_consistency(fwd[t], bwd[t], params);
    const FlowField& flow = fwd[t];

    // Extension is independent per trajectory.
    std::vector<std::uint8_t> extended(alive.size(), 0);
    const auto n_alive = static_cast<std::ptrdiff_t>(alive.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t k = 0; k < n_alive; ++k) {
      Trajectory& tr = trajs[alive[k]];
      const Point2f p = tr.points.back();
      if (occluded(round_px(p.x), round_px(p.y))) continue;
      const double fu = sample_bilinear(flow.u, p.x, p.y);
      const double fv = sample_bilinear(flow.v, p.x, p.y);
      const Point2f q{static_cast<float>(p.x + fu), static_cast<float>(p.y + fv)};
      if (!inside(q.x, q.y, w, h)) continue;
      // The interpolated step must pass the same test as the pixel grid, so
      // an inconsistent neighbour cannot leak into the track.
      if (!fb_agrees(fu, fv, sample_bilinear(bwd[t].u, q.x, q.y),
                     sample_bilinear(bwd[t].v, q.x, q.y), params)) {
        continue;
      }
      tr.points.push_back(q);
      extended[k] = 1;
    }

    // Ownership: longest trajectory wins, then the smaller id. `alive` is in
    // increasing id order, so the first of equal length is kept.
    IdRaster owner(w, h, kNone);
    std::vector<TrajectoryId> next;
    next.reserve(alive.size());
    for (std::size_t k = 0; k < alive.size(); ++k) {
      if (!extended[k]) continue;
      const TrajectoryId id = alive[k];
      next.push_back(id);
      const Point2f& q = trajs[id].points.back();
      TrajectoryId& slot = owner(round_px(q.x), round_px(q.y));
      if (slot == kNone || trajs[id].length() > trajs[slot].length()) slot = id;
    }

    const auto frame = static_cast<std::uint32_t>(t + 1);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (owner(x, y) != kNone) continue;
        if (trajs.size() >= kNone) throw DataError("trajectory id space exhausted");
        owner(x, y) = static_cast<TrajectoryId>(trajs.size());
        next.push_back(owner(x, y));
        trajs.push_back({frame, {Point2f{float(x), float(y)}}});
      }
    }
    set.assignment.push_back(std::move(owner));
    alive = std::move(next);
  }
  return set;
}

void validate_trajectories(const TrajectorySet& set) {
  if (static_cast<int>(set.assignment.size()) != set.frames) {
    throw DataError("trajectories: assignment count differs from frame count");
  }
  for (const auto& tr : set.trajectories) {
    if (tr.points.empty()) throw DataError("trajectories: empty trajectory");
    if (tr.end_frame() >= static_cast<std::uint32_t>(set.frames)) {
      throw DataError("trajectories: trajectory extends past the last frame");
    }
    for (const auto& p : tr.points) {
      if (!inside(p.x, p.y, set.width, set.height)) {
        throw DataError("trajectories: point outside the image");
      }
    }
  }
  for (int f = 0; f < set.frames; ++f) {
    const IdRaster& a = set.assignment[f];
    if (!a.same_shape(set.width, set.height)) {
      throw DataError("trajectories: assignment raster has wrong shape");
    }
    for (int y = 0; y < set.height; ++y) {
      for (int x = 0; x < set.width; ++x) {
        const TrajectoryId id = a(x, y);
        if (id >= set.trajectories.size()) {
          throw DataError("trajectories: unassigned pixel");
        }
        const Trajectory& tr = set.trajectories[id];
        const auto uf = static_cast<std::uint32_t>(f);
        if (!tr.spans(uf, uf) || round_px(tr.at(uf).x) != x ||
            round_px(tr.at(uf).y) != y) {
          throw DataError("trajectories: owner does not cover its pixel");
        }
      }
    }
  }
}

void save_trajectories(const TrajectorySet& set, const std::filesystem::path& path) {
  using namespace detail;
  if (set.trajectories.empty()) throw ArgError("save_trajectories: empty set");
  std::string out(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(set.frames));
  put_u32(out, static_cast<std::uint32_t>(set.height));
  put_u32(out, static_cast<std::uint32_t>(set.width));
  put_u64(out, set.trajectories.size());
  for (const auto& tr : set.trajectories) {
    put_u32(out, tr.start_frame);
    put_u32(out, tr.length());
    for (const auto& p : tr.points) {
      put_f32(out, p.x);
      put_f32(out, p.y);
    }
  }
  for (const auto& a : set.assignment) {
    for (TrajectoryId id : a.data()) put_u32(out, id);
  }
  write_file_atomic(path, out);
}

TrajectorySet load_trajectories(const std::filesystem::path& path) {
  using namespace detail;
  const std::string bytes = read_file(path);
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (bytes.size() - pos < n) {
      throw FormatError("trajectory file truncated: " + path.string());
    }
  };
  need(24);
  if (bytes.compare(0, 4, kMagic, 4) != 0) {
    throw FormatError("trajectory file: bad magic in " + path.string());
  }
  pos = 4;
  TrajectorySet set;
  set.frames = static_cast<int>(get_u32(bytes.data() + pos));
  set.height = static_cast<int>(get_u32(bytes.data() + pos + 4));
  set.width = static_cast<int>(get_u32(bytes.data() + pos + 8));
  const std::uint64_t count = get_u64(bytes.data() + pos + 12);
  pos += 20;
  if (set.frames <= 0 || set.width <= 0 || set.height <= 0 || count == 0 ||
      count > (bytes.size() - pos) / 8) {
    throw FormatError("trajectory file: bad header in " + path.string());
  }
  set.trajectories.resize(count);
  for (auto& tr : set.trajectories) {
    need(8);
    tr.start_frame = get_u32(bytes.data() + pos);
    const std::uint32_t len = get_u32(bytes.data() + pos + 4);
    pos += 8;
    if (len == 0 || std::uint64_t{tr.start_frame} + len > std::uint64_t(set.frames)) {
      throw FormatError("trajectory file: bad trajectory span in " + path.string());
    }
    need(std::size_t{len} * 8);
    tr.points.resize(len);
    for (auto& p : tr.points) {
      p.x = get_f32(bytes.data() + pos);
      p.y = get_f32(bytes.data() + pos + 4);
      pos += 8;
    }
  }
  const std::size_t raster = static_cast<std::size_t>(set.width) * set.height;
  need(raster * 4 * set.frames);
  for (int f = 0; f < set.frames; ++f) {
    IdRaster a(set.width, set.height);
    for (std::size_t i = 0; i < raster; ++i) {
      a[i] = get_u32(bytes.data() + pos);
      if (a[i] >= count) {
        throw FormatError("trajectory file: id out of range in " + path.string());
      }
      pos += 4;
    }
    set.assignment.push_back(std::move(a));
  }
  if (pos != bytes.size()) {
    throw FormatError("trajectory file: trailing bytes in " + path.string());
  }
  return set;
}

}  // namespace epitraj

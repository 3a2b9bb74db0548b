#include "epitraj/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "epitraj/errors.hpp"
#include "epitraj/eval.hpp"
#include "epitraj/flow_io.hpp"
#include "epitraj/saliency.hpp"
#include "parallel.hpp"

namespace epitraj {

namespace {

constexpr float kNotStatic = 1e9f;

std::string frame_name(std::size_t t, const char* ext) {
  char name[32];
  std::snprintf(name, sizeof name, "%06zu%s", t, ext);
  return name;
}

// Stage directories are filled under a sibling ".partial" directory and
// renamed into place once complete.
class DirTransaction {
 public:
  explicit DirTransaction(fs::path final_dir) : final_(std::move(final_dir)) {
    tmp_ = final_;
    tmp_ += ".partial";
    fs::remove_all(tmp_);
    fs::create_directories(tmp_);
  }
  const fs::path& path() const { return tmp_; }
  void commit() {
    fs::remove_all(final_);
    fs::rename(tmp_, final_);
  }

 private:
  fs::path final_;
  fs::path tmp_;
};

// Rethrows the active exception with the stage name prefixed, keeping its
// type.
[[noreturn]] void rethrow_in(const std::string& stage) {
  const auto msg = [&](const std::exception& e) { return stage + ": " + e.what(); };
  try {
    throw;
  } catch (const FormatError& e) {
    throw FormatError(msg(e));
  } catch (const DataError& e) {
    throw DataError(msg(e));
  } catch (const ArgError& e) {
    throw ArgError(msg(e));
  } catch (const ConfigError& e) {
    throw ConfigError(msg(e));
  } catch (const IoError& e) {
    throw IoError(msg(e));
  } catch (const EstimationError& e) {
    throw EstimationError(msg(e));
  } catch (const DegenerateError& e) {
    throw EstimationError(msg(e));
  } catch (const InsufficientDataError& e) {
    throw EstimationError(msg(e));
  } catch (const EpipoleError& e) {
    throw EstimationError(msg(e));
  } catch (const fs::filesystem_error& e) {
    throw IoError(msg(e));
  }
}

template <typename F>
void in_stage(const std::string& stage, F&& body) {
  try {
    body();
  } catch (...) {
    rethrow_in(stage);
  }
}

nlohmann::ordered_json ransac_json(const GeometryParams& p) {
  return {{"inlier_threshold", p.ransac.inlier_threshold},
          {"max_iters", p.ransac.max_iters},
          {"confidence", p.ransac.confidence},
          {"sample_cap", p.ransac.sample_cap},
          {"score", ransac_score_name(p.ransac.score)},
          {"seed", p.ransac.rng_seed},
          {"static_eps", p.static_eps}};
}

}  // namespace

std::vector<Correspondence3> triplet_correspondences(const TrajectorySet& set, int frame) {
  if (frame < 0 || frame + 2 >= set.frames) throw ArgError("triplet outside the sequence");
  const auto f = static_cast<std::uint32_t>(frame);
  std::vector<Correspondence3> out;
  for (std::size_t id = 0; id < set.trajectories.size(); ++id) {
    const Trajectory& tr = set.trajectories[id];
    if (!tr.spans(f, f + 2)) continue;
    const Point2f& a = tr.at(f);
    const Point2f& b = tr.at(f + 1);
    const Point2f& c = tr.at(f + 2);
    out.push_back(make_correspondence({a.x, a.y}, {b.x, b.y}, {c.x, c.y}, id));
  }
  return out;
}

FlowField trajectory_displacement(const TrajectorySet& set, int frame) {
  if (frame < 0 || frame + 1 >= set.frames) throw ArgError("frame pair outside the sequence");
  const auto f = static_cast<std::uint32_t>(frame);
  FlowField d(set.width, set.height);
  const IdRaster& owner = set.assignment[frame];
  for (std::size_t i = 0; i < owner.size(); ++i) {
    const Trajectory& tr = set.trajectories[owner[i]];
    if (tr.spans(f, f + 1)) {
      d.u[i] = tr.at(f + 1).x - tr.at(f).x;
      d.v[i] = tr.at(f + 1).y - tr.at(f).y;
    } else {
      d.u[i] = d.v[i] = kNotStatic;
    }
  }
  return d;
}

std::vector<TripletGeometry> estimate_geometries(const TrajectorySet& set,
                                                 const GeometryParams& params) {
  params.ransac.validate();
  if (set.frames < 3) throw ArgError("geometry needs at least three frames");
  const int n = set.frames - 2;

  std::vector<FlowField> disp(set.frames - 1);
  for (int t = 0; t + 1 < set.frames; ++t) disp[t] = trajectory_displacement(set, t);

  std::vector<TripletGeometry> geoms(n);
  std::vector<std::uint8_t> ok(n, 0);
  detail::ExceptionSlot error;
#pragma omp parallel for schedule(dynamic, 1)
  for (int f = 0; f < n; ++f) {
    try {
      TripletGeometry g;
      if (detect_static_camera(disp[f], disp[f + 1], params.static_eps)) {
        g = static_fundamentals(set.width, set.height);
        ok[f] = 1;
      } else {
        RansacParams rp = params.ransac;
        rp.rng_seed = params.ransac.rng_seed ^ static_cast<std::uint64_t>(f);
        try {
          g = ransac_triplet(triplet_correspondences(set, f), rp);
          ok[f] = 1;
        } catch (const EstimationError&) {
        } catch (const InsufficientDataError&) {
        }
      }
      g.frame = f;
      geoms[f] = g;
    } catch (...) {
      error.capture();
    }
  }
  error.rethrow();

  if (std::find(ok.begin(), ok.end(), 1) == ok.end()) {
    throw EstimationError("geometry estimation failed for every triplet");
  }
  for (int f = 0; f < n; ++f) {
    if (ok[f]) continue;
    geoms[f] = f == 0 ? static_fundamentals(set.width, set.height) : geoms[f - 1];
    geoms[f].frame = f;
    geoms[f].fallback = true;
  }
  return geoms;
}

void PipelineConfig::validate() const {
  geometry.ransac.validate();
  if (!(geometry.static_eps >= 0)) throw ConfigError("static_eps must be nonnegative");
  if (!(consistency.alpha >= 0 && consistency.beta >= 0)) {
    throw ConfigError("consistency thresholds must be nonnegative");
  }
  if (tau && !(*tau >= 0)) throw ConfigError("tau must be nonnegative");
  if (!(percentile > 0 && percentile <= 100)) throw ConfigError("percentile outside (0, 100]");
  if (!(dropout_fraction >= 0 && dropout_fraction <= 1)) {
    throw ConfigError("dropout_fraction outside [0, 1]");
  }
  if (threads < 0) throw ConfigError("threads must be nonnegative");
  if (output.empty()) throw ConfigError("output directory not set");
  for (const fs::path* p : {&flow_fwd, &flow_bwd}) {
    if (!fs::is_directory(*p)) throw IoError("flow directory missing: " + p->string());
  }
  if (gt_masks && !fs::is_directory(*gt_masks)) {
    throw IoError("ground-truth mask directory missing: " + gt_masks->string());
  }
}

PipelineConfig parse_pipeline_config(const std::string& yaml_text, const fs::path& base_dir) {
  PipelineConfig c;
  auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  try {
    const YAML::Node n = YAML::Load(yaml_text);
    if (!n.IsMap()) throw ConfigError("pipeline config must be a mapping");
    for (const char* key : {"flow_fwd", "flow_bwd", "output"}) {
      if (!n[key]) throw ConfigError(std::string("pipeline config lacks ") + key);
    }
    c.flow_fwd = resolve(n["flow_fwd"].as<std::string>());
    c.flow_bwd = resolve(n["flow_bwd"].as<std::string>());
    c.output = resolve(n["output"].as<std::string>());
    if (n["gt_masks"]) c.gt_masks = resolve(n["gt_masks"].as<std::string>());
    c.sequence = n["sequence"].as<std::string>(c.sequence);
    c.seed = n["seed"].as<std::uint64_t>(c.seed);
    c.threads = n["threads"].as<int>(c.threads);
    c.dropout_fraction = n["dropout_fraction"].as<double>(c.dropout_fraction);
    if (const auto k = n["consistency"]) {
      c.consistency.alpha = k["alpha"].as<double>(c.consistency.alpha);
      c.consistency.beta = k["beta"].as<double>(c.consistency.beta);
    }
    if (const auto r = n["ransac"]) {
      auto& rp = c.geometry.ransac;
      rp.inlier_threshold = r["inlier_threshold"].as<double>(rp.inlier_threshold);
      rp.max_iters = r["max_iters"].as<int>(rp.max_iters);
      rp.confidence = r["confidence"].as<double>(rp.confidence);
      rp.sample_cap = r["sample_cap"].as<std::size_t>(rp.sample_cap);
      if (r["score"]) rp.score = parse_ransac_score(r["score"].as<std::string>());
      c.geometry.static_eps = r["static_eps"].as<double>(c.geometry.static_eps);
    }
    if (const auto s = n["saliency"]) {
      if (s["tau"]) c.tau = s["tau"].as<double>();
      c.min_region = s["min_region"].as<std::size_t>(c.min_region);
      c.percentile = s["percentile"].as<double>(c.percentile);
    }
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("pipeline config: ") + e.what());
  }
  c.geometry.ransac.rng_seed = c.seed;
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  return parse_pipeline_config(read_file(path), path.parent_path());
}

std::vector<FlowField> load_flows(const fs::path& dir) {
  std::vector<FlowField> flows;
  for (const auto& p : list_frames(dir, ".flo")) flows.push_back(read_flo(p));
  if (flows.empty()) throw ArgError("no .flo files in " + dir.string());
  return flows;
}

std::vector<FloatRaster> load_ed_maps(const fs::path& dir) {
  std::vector<FloatRaster> maps;
  for (const auto& p : list_frames(dir, ".pfm")) maps.push_back(read_pfm_gray(p));
  if (maps.empty()) throw ArgError("no .pfm files in " + dir.string());
  return maps;
}

std::vector<Mask> load_masks(const fs::path& dir) {
  std::vector<Mask> masks;
  for (const auto& p : list_frames(dir, ".png")) masks.push_back(read_mask(p));
  if (masks.empty()) throw ArgError("no .png files in " + dir.string());
  return masks;
}

void stage_track(const fs::path& fwd_dir, const fs::path& bwd_dir, const fs::path& out,
                 const ConsistencyParams& params) {
  in_stage("track", [&] {
    const auto fwd = load_flows(fwd_dir);
    const auto bwd = load_flows(bwd_dir);
    if (fwd.size() != bwd.size()) {
      throw ArgError(std::to_string(fwd.size()) + " forward but " +
                     std::to_string(bwd.size()) + " backward flow fields");
    }
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    save_trajectories(build_trajectories(fwd, bwd, params), out);
  });
}

void stage_geometry(const fs::path& trajectories, const fs::path& out,
                    const GeometryParams& params) {
  in_stage("geometry", [&] {
    const TrajectorySet set = load_trajectories(trajectories);
    const auto geoms = estimate_geometries(set, params);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_file_atomic(out, geometries_to_json(geoms));
  });
}

void stage_epdist(const fs::path& trajectories, const fs::path& geometry,
                  const fs::path& out_dir) {
  in_stage("epdist", [&] {
    const TrajectorySet set = load_trajectories(trajectories);
    const auto geoms = geometries_from_json(read_file(geometry));
    const auto maps = ed_maps(set, trajectory_ed(set, geoms));
    DirTransaction tx(out_dir);
    for (std::size_t t = 0; t < maps.size(); ++t) {
      write_pfm(maps[t], tx.path() / frame_name(t, ".pfm"));
    }
    tx.commit();
  });
}

void stage_motion_images(const fs::path& fwd_dir, const fs::path& ed_dir,
                         const fs::path& out_dir, const std::optional<fs::path>& masks_dir,
                         double dropout_fraction, std::uint64_t seed, double percentile) {
  in_stage("motion-images", [&] {
    const auto flows = load_flows(fwd_dir);
    const auto maps = load_ed_maps(ed_dir);
    std::vector<Mask> masks;
    if (masks_dir) masks = load_masks(*masks_dir);
    const auto images = motion_images(flows, normalize_ed(maps, percentile));
    DirTransaction tx(out_dir);
    export_training_set(images, masks, tx.path(), dropout_fraction, seed);
    tx.commit();
  });
}

void stage_saliency(const fs::path& ed_dir, const fs::path& out_dir,
                    std::optional<double> tau, std::size_t min_region) {
  in_stage("saliency", [&] {
    const auto maps = load_ed_maps(ed_dir);
    const double t = tau.value_or(default_tau(maps));
    DirTransaction tx(out_dir);
    for (std::size_t f = 0; f < maps.size(); ++f) {
      write_mask(threshold_saliency(maps[f], t, min_region), tx.path() / frame_name(f, ".png"));
    }
    tx.commit();
  });
}

void stage_eval(const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& out_json) {
  in_stage("eval", [&] {
    const EvalReport r = evaluate_sequence(pred_dir, gt_dir);
    if (out_json.has_parent_path()) fs::create_directories(out_json.parent_path());
    write_file_atomic(out_json, report_to_json(r));
    fs::path table = out_json;
    table.replace_extension(".txt");
    write_file_atomic(table, report_to_table(r));
  });
}

void run_pipeline(const PipelineConfig& c, const RunOptions& options) {
  c.validate();
  const fs::path out = c.output;
  const fs::path markers = out / ".stages";
  fs::create_directories(markers);
  fs::create_directories(out / "logs");

  const fs::path traj = out / "trajectories.trj";
  const fs::path geom = out / "geometry.json";
  const fs::path ed = out / "ed";
  const fs::path motion = out / "motion_images";
  const fs::path masks = out / "masks";
  const fs::path report = out / "eval.json";

  struct Stage {
    std::string name;
    nlohmann::ordered_json params;
    std::vector<fs::path> outputs;
    std::function<void()> body;
  };
  std::vector<Stage> stages;
  stages.push_back({"track",
                    {{"flow_fwd", c.flow_fwd.string()},
                     {"flow_bwd", c.flow_bwd.string()},
                     {"alpha", c.consistency.alpha},
                     {"beta", c.consistency.beta}},
                    {traj},
                    [&] { stage_track(c.flow_fwd, c.flow_bwd, traj, c.consistency); }});
  stages.push_back({"geometry", ransac_json(c.geometry), {geom},
                    [&] { stage_geometry(traj, geom, c.geometry); }});
  stages.push_back({"epdist", nlohmann::ordered_json::object(), {ed},
                    [&] { stage_epdist(traj, geom, ed); }});
  stages.push_back({"motion_images",
                    {{"dropout_fraction", c.dropout_fraction},
                     {"seed", c.seed},
                     {"percentile", c.percentile},
                     {"gt_masks", c.gt_masks ? c.gt_masks->string() : ""}},
                    {motion},
                    [&] {
                      stage_motion_images(c.flow_fwd, ed, motion, c.gt_masks,
                                          c.dropout_fraction, c.seed, c.percentile);
                    }});
  stages.push_back({"saliency",
                    {{"tau", c.tau ? nlohmann::ordered_json(*c.tau) : nlohmann::ordered_json()},
                     {"min_region", c.min_region}},
                    {masks},
                    [&] { stage_saliency(ed, masks, c.tau, c.min_region); }});
  if (c.gt_masks) {
    stages.push_back({"eval", {{"gt_masks", c.gt_masks->string()}}, {report},
                      [&] { stage_eval(masks, *c.gt_masks, report); }});
  }

  nlohmann::ordered_json log;
  log["output"] = out.string();
  log["stages"] = nlohmann::ordered_json::array();
  bool upstream_ran = options.force;
  for (const auto& s : stages) {
    const fs::path marker = markers / (s.name + ".json");
    const std::string echo = s.params.dump() + "\n";
    bool done = !upstream_ran && fs::exists(marker);
    if (done) done = read_file(marker) == echo;
    for (const auto& o : s.outputs) done = done && fs::exists(o);

    const auto t0 = std::chrono::steady_clock::now();
    if (!done) {
      fs::remove(marker);
      s.body();
      write_file_atomic(marker, echo);
      upstream_ran = true;
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log["stages"].push_back({{"stage", s.name},
                             {"status", done ? "skipped" : "ran"},
                             {"seconds", seconds},
                             {"params", s.params}});
    write_file_atomic(out / "logs" / "run.json", log.dump(1) + "\n");
  }
}

}  // namespace epitraj

// ptzcal: scenario runs, sweeps, evaluation and timings for the PTZ
// calibration and tracking pipeline.

#include "ptz/error.hpp"
#include "ptz/pipeline.hpp"
#include "ptz/scene_map.hpp"
#include "ptz/worldproj.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

using namespace ptz;
using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitFailureRate = 2;
constexpr int kExitConfig = 3;

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::ConfigError, "cannot read " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::ConfigError, "cannot write " + path.string());
  f << text;
}

double deg(double rad) { return rad * 180.0 / std::numbers::pi; }

// Flags shared by run, sweep and timings.
struct RunFlags {
  RunConfig cfg;
  std::uint64_t seed = 0;
  std::string mode = "3d", association = "cheap_jpdaf", gain = "as_printed", horizon = "pullback";
  bool sequential = false, no_update = false, no_proximity = false, no_track = false;

  void add(CLI::App* app) {
    app->add_option("--scenario", cfg.scenario_path, "scenario JSON");
    app->add_option("--seed", seed, "overrides the scenario seed");
    app->add_option("--landmarks", cfg.sample_size, "landmark sample size")->check(CLI::PositiveNumber);
    app->add_option("--threshold", cfg.ransac_threshold, "RANSAC threshold, pixels")->check(CLI::PositiveNumber);
    app->add_flag("--no-map-update", no_update, "freeze the scene map");
    app->add_flag("--no-proximity", no_proximity, "disable the proximity check on landmark birth");
    app->add_option("--mode", mode, "tracking coordinates: 3d or 2d");
    app->add_option("--association", association, "cheap_jpdaf or nearest");
    app->add_option("--gain", gain, "as_printed or textbook");
    app->add_option("--horizon", horizon, "pullback or as_written");
    app->add_option("--target-height", cfg.target_height, "metres");
    app->add_option("--rotation-tolerance", cfg.rotation_tolerance);
    app->add_option("--queue", cfg.queue_capacity, "hand-off queue capacity");
    app->add_option("--max-failure-rate", cfg.max_failure_rate, "stale frame share before exit code 2");
    app->add_option("--map", cfg.map_path, "load this map instead of initializing");
    app->add_flag("--sequential", sequential, "single thread");
    app->add_flag("--no-track", no_track, "calibration only");
  }

  // Applies the flags through the JSON reader so both paths validate alike.
  RunConfig resolve(const CLI::App* app) const {
    json j = run_config_json(cfg);
    j["tracking_mode"] = mode;
    j["association"] = association;
    j["gain"] = gain;
    j["horizon"] = horizon;
    if (app->count("--seed")) j["seed"] = seed;
    if (no_update) j["map_updating"] = false;
    if (no_proximity) j["proximity_check"] = false;
    if (sequential) j["parallel"] = false;
    if (no_track) j["track"] = false;
    return run_config_from_json(j);
  }
};

SceneMap map_for(const RunConfig& cfg, const Scenario& sc) {
  if (!cfg.map_path.empty()) return load_map(cfg.map_path);
  Simulator sim(sc);
  return initialize_map(sim);
}

int cmd_init(const std::string& scenario, std::optional<std::uint64_t> seed, const std::string& out, bool force) {
  if (fs::exists(out) && !force) {
    std::cerr << "ptzcal: " << out << " exists; pass --force to overwrite\n";
    return kExitConfig;
  }
  RunConfig cfg;
  cfg.scenario_path = scenario;
  cfg.seed = seed;
  const Scenario sc = scenario_for(cfg);
  Simulator sim(sc);
  InitReport rep;
  const SceneMap map = initialize_map(sim, {}, &rep);
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  save_map(map, out);

  json r;
  r["scenario"] = sc.name;
  r["seed"] = sc.seed;
  r["views"] = map.views.size();
  r["landmarks"] = map.landmark_count();
  r["pairs"] = rep.pairs;
  r["correspondences"] = rep.correspondences;
  r["initial_rms_px"] = rep.bundle.initial_rms;
  r["rms_px"] = rep.bundle.rms;
  r["residual_terms"] = rep.bundle.residual_terms;
  r["iterations"] = rep.bundle.iterations;
  r["converged"] = rep.bundle.converged;
  json kf = json::array();
  for (std::size_t i = 0; i < rep.truth.size(); ++i) {
    const CameraPose& t = rep.truth[i];
    const CameraPose& e = rep.estimate[i];
    kf.push_back({{"view", i},
                  {"pan_deg", deg(e.pan)},
                  {"tilt_deg", deg(e.tilt)},
                  {"focal", e.focal},
                  {"true_pan_deg", deg(t.pan)},
                  {"true_tilt_deg", deg(t.tilt)},
                  {"true_focal", t.focal},
                  {"e_f_pct", 100.0 * std::abs(e.focal - t.focal) / t.focal}});
  }
  r["keyframes"] = kf;
  write_text(out + ".report.json", r.dump(2) + "\n");
  std::printf("map: %zu views, %zu landmarks, bundle rms %.4f px -> %s\n", map.views.size(), map.landmark_count(),
              rep.bundle.rms, out.c_str());
  return 0;
}

double mean_reproj(const RunResult& r) {
  double s = 0;
  std::size_t k = 0;
  for (const auto& d : r.frames)
    if (!std::isnan(d.error.reproj_px)) {
      s += d.error.reproj_px;
      ++k;
    }
  return k ? s / static_cast<double>(k) : std::numeric_limits<double>::quiet_NaN();
}

int run_one(const RunConfig& cfg, const Scenario& sc, const SceneMap& map) {
  Simulator sim(sc);
  const RunResult r = run_pipeline(sim, map, cfg);
  write_run_outputs(r, cfg, sc);
  std::printf("%s: %zu frames, failure rate %.4f, mean reprojection %.4f px", cfg.output_dir.c_str(), r.frames.size(),
              r.failure_rate, mean_reproj(r));
  if (cfg.track) std::printf(", MOTA %.2f, FP %.2f, ID_SW %d", r.mot.mota, r.mot.fp, r.mot.id_sw);
  std::printf("\n");
  if (r.failure_rate > cfg.max_failure_rate) {
    std::cerr << "ptzcal: calibration failure rate " << r.failure_rate << " exceeds " << cfg.max_failure_rate << "\n";
    return kExitFailureRate;
  }
  return 0;
}

int cmd_run(RunConfig cfg, const std::string& manifest, bool ablation) {
  Scenario sc;
  if (!manifest.empty()) {
    const json m = json::parse(read_text(manifest));
    const std::string out = cfg.output_dir;
    cfg = run_config_from_json(m.at("config"));
    if (!out.empty()) cfg.output_dir = out;
    sc = scenario_from_json_text(m.at("scenario").dump());
  } else {
    sc = scenario_for(cfg);
  }
  if (cfg.output_dir.empty()) throw Error(ErrorCode::ConfigError, "--out is required");
  const SceneMap map = map_for(cfg, sc);
  if (!ablation) return run_one(cfg, sc, map);

  std::ostringstream table;
  table.precision(10);
  table << "map_updating,proximity_check,tracking_mode,failure_rate,mean_reproj_px,mota,motp,fp,fn,id_sw\n";
  int worst = 0;
  const std::string root = cfg.output_dir;
  for (bool upd : {true, false})
    for (bool prox : {true, false})
      for (TrackingMode mode : {TrackingMode::World, TrackingMode::Image}) {
        RunConfig c = cfg;
        c.map_updating = upd;
        c.proximity_check = prox;
        c.tracking_mode = mode;
        const std::string name = std::string(upd ? "update" : "frozen") + (prox ? "_prox" : "_noprox") +
                                 (mode == TrackingMode::World ? "_3d" : "_2d");
        c.output_dir = (fs::path(root) / name).string();
        Simulator sim(sc);
        const RunResult r = run_pipeline(sim, map, c);
        write_run_outputs(r, c, sc);
        table << upd << ',' << prox << ',' << (mode == TrackingMode::World ? "3d" : "2d") << ',' << r.failure_rate
              << ',' << mean_reproj(r) << ',' << r.mot.mota << ',' << r.mot.motp << ',' << r.mot.fp << ','
              << r.mot.fn << ',' << r.mot.id_sw << '\n';
        std::printf("%-20s failure %.4f  reproj %.4f px  MOTA %.2f  FP %.2f\n", name.c_str(), r.failure_rate,
                    mean_reproj(r), r.mot.mota, r.mot.fp);
        if (r.failure_rate > c.max_failure_rate) worst = kExitFailureRate;
      }
  write_text(fs::path(root) / "ablation.csv", table.str());
  return worst;
}

std::vector<std::uint64_t> seed_range(std::uint64_t first, int count) {
  std::vector<std::uint64_t> s;
  for (int i = 0; i < count; ++i) s.push_back(first + static_cast<std::uint64_t>(i));
  return s;
}

int cmd_sweep(const RunConfig& cfg, SweepOptions opt, std::uint64_t first_seed, int seeds, const std::string& out) {
  if (seeds <= 0) throw Error(ErrorCode::ConfigError, "--seeds must be positive");
  opt.seeds = seed_range(first_seed, seeds);
  const auto points = run_sweep(cfg, opt);
  const std::string csv = sweep_csv(points);
  if (!out.empty()) write_text(out, csv);
  std::printf("%-10s %8s %14s %10s\n", "parameter", "value", "reproj px", "failures");
  for (const auto& p : points)
    std::printf("%-10s %8g %14.5f %10.4f\n", p.parameter.c_str(), p.value, p.mean, p.failure_rate);
  return 0;
}

int cmd_eval(const std::string& truth, const std::string& trajectories, std::int64_t frames, const std::string& out) {
  if (frames <= 0) {
    const fs::path manifest = fs::path(truth).parent_path() / "manifest.json";
    if (!fs::exists(manifest)) throw Error(ErrorCode::ConfigError, "--frames is required without a run manifest");
    frames = json::parse(read_text(manifest.string())).at("scenario").at("frames").get<std::int64_t>();
  }
  const auto gt = parse_truth_csv(read_text(truth), frames);
  const auto recs = parse_trajectories_csv(read_text(trajectories));
  const auto hyp = hypothesis_frames(recs, frames);
  const MotReport r = clear_mot(gt, hyp);
  json m = json::parse(mot_report_json(r));
  const UscReport u = usc_metric(gt, hyp);
  m["USC"] = {{"MT", u.mt}, {"PT", u.pt}, {"ML", u.ml}, {"FAF", u.faf}};
  if (!out.empty()) {
    write_text(fs::path(out) / "mot.json", m.dump(2) + "\n");
    write_text(fs::path(out) / "mot_events.csv", mot_events_csv(r));
  }
  std::printf("MOTA %.2f  MOTP %.2f  FN %.2f  FP %.2f  ID_SW %d  TR_FR %d  MT %.1f  PT %.1f  ML %.1f  FAF %.4f\n", r.mota,
              r.motp, r.fn, r.fp, r.id_sw, r.tr_fr, u.mt, u.pt, u.ml, u.faf);
  return 0;
}

int cmd_timings(RunConfig cfg, int repeats, const std::string& out) {
  if (repeats <= 0) throw Error(ErrorCode::ConfigError, "--repeats must be positive");
  const Scenario sc = scenario_for(cfg);
  const SceneMap map = map_for(cfg, sc);
  // The repeat with the median wall time stands for each mode.
  auto median_run = [&](bool parallel) {
    std::vector<RunResult> runs;
    RunConfig c = cfg;
    c.parallel = parallel;
    for (int i = 0; i < repeats; ++i) {
      Simulator sim(sc);
      runs.push_back(run_pipeline(sim, map, c));
    }
    std::sort(runs.begin(), runs.end(), [](const RunResult& a, const RunResult& b) { return a.wall < b.wall; });
    return std::move(runs[runs.size() / 2]);
  };
  const RunResult seq = median_run(false);
  const RunResult par = median_run(true);
  const json t = timings_json(seq, par);
  if (!out.empty()) write_text(out, t.dump(2) + "\n");
  std::printf("%-32s %12s\n", "stage", "ms/frame");
  for (const auto& row : t["stages"])
    std::printf("%-32s %12.3f\n", row["stage"].get<std::string>().c_str(), row["ms_per_frame"].get<double>());
  std::printf("%-32s %12.3f\n", "sequential total", t["sequential_total_ms"].get<double>());
  std::printf("%-32s %12.3f\n", "parallel total", t["parallel_total_ms"].get<double>());
  std::printf("fps: sequential %.1f, parallel %.1f (%u hardware threads)\n", t["fps_sequential"].get<double>(),
              t["fps_parallel"].get<double>(), t["hardware_threads"].get<unsigned>());
  return 0;
}

int cmd_scale_probe(const RunConfig& cfg, double pan, double tilt, double focal, double step, const std::string& out) {
  if (!(step > 0)) throw Error(ErrorCode::ConfigError, "--step must be positive");
  const Scenario sc = scenario_for(cfg);
  Simulator sim(sc);
  const CameraPose pose{pan * std::numbers::pi / 180.0, tilt * std::numbers::pi / 180.0, focal};
  const Mat3 G = sim.ground_to_frame(pose);
  const Intrinsics K = sim.intrinsics(focal);
  const double mu = target_mu(sim, cfg.target_height);
  const Homology W = build_homology(G, K, mu, cfg.horizon);
  std::ostringstream os;
  os.precision(10);
  os << "foot_x,foot_y,head_x,head_y,true_head_x,true_head_y,height_px,error_pct\n";
  std::size_t rows = 0;
  for (double y = step / 2; y < sc.height; y += step)
    for (double x = step / 2; x < sc.width; x += step) {
      const Vec2 foot(x, y);
      Vec2 g, head, truth;
      try {
        g = frame_to_world(G, foot);
        head = estimate_scale(W, G, foot).head;
        truth = sim.project_point(pose, Vec3(g.x(), sc.camera_height - cfg.target_height, g.y()));
      } catch (const Error&) {
        continue;
      }
      const double h = (truth - foot).norm();
      os << x << ',' << y << ',' << head.x() << ',' << head.y() << ',' << truth.x() << ',' << truth.y() << ',' << h
         << ',' << 100.0 * (head - truth).norm() / h << '\n';
      ++rows;
    }
  if (out.empty())
    std::cout << os.str();
  else
    write_text(out, os.str());
  std::fprintf(stderr, "mu %.6f, %zu grid points\n", mu, rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PTZ camera calibration and ground-plane tracking on simulated scenes"};
  app.set_version_flag("--version", std::string(PTZ_VERSION));
  app.require_subcommand(1);

  std::string scenario, out;
  std::uint64_t seed = 0;
  bool force = false;
  auto* init = app.add_subcommand("init", "build the scene map from the scenario keyframes");
  init->add_option("--scenario", scenario, "scenario JSON")->required();
  init->add_option("--seed", seed);
  init->add_option("--out", out, "map file")->required();
  init->add_flag("--force", force, "overwrite an existing map");

  RunFlags run_flags;
  std::string manifest;
  bool ablation = false;
  auto* run = app.add_subcommand("run", "calibrate and track every frame of a scenario");
  run_flags.add(run);
  run->add_option("--out", run_flags.cfg.output_dir, "output directory");
  run->add_option("--manifest", manifest, "repeat the run recorded in this manifest");
  run->add_flag("--ablation", ablation, "all combinations of map updating, proximity check and tracking mode");

  RunFlags sweep_flags;
  SweepOptions sweep_opt;
  int sweep_seeds = 20;
  std::string sweep_out;
  auto* sweep = app.add_subcommand("sweep", "reprojection error against landmark count and RANSAC threshold");
  sweep_flags.add(sweep);
  sweep->add_option("--seeds", sweep_seeds, "number of seeds, counting up from --seed");
  sweep->add_option("--sizes", sweep_opt.sample_sizes, "landmark sample sizes")->delimiter(',');
  sweep->add_option("--thresholds", sweep_opt.thresholds, "RANSAC thresholds")->delimiter(',');
  sweep->add_option("--out", sweep_out, "CSV file");

  std::string truth, trajectories, eval_out;
  std::int64_t frames = 0;
  auto* eval = app.add_subcommand("eval", "CLEAR MOT and USC metrics from truth and trajectory files");
  eval->add_option("--truth", truth, "truth.csv")->required();
  eval->add_option("--trajectories", trajectories, "trajectories.csv")->required();
  eval->add_option("--frames", frames, "frame count; read from the run manifest when omitted");
  eval->add_option("--out", eval_out, "directory for mot.json and mot_events.csv");

  RunFlags timing_flags;
  int repeats = 3;
  std::string timing_out;
  auto* timings = app.add_subcommand("timings", "per-stage time, sequential against parallel");
  timing_flags.add(timings);
  timings->add_option("--repeats", repeats);
  timings->add_option("--out", timing_out, "timings JSON");

  RunFlags probe_flags;
  double pan = 0, tilt = -15, focal = 400, step = 40;
  std::string probe_out;
  auto* probe = app.add_subcommand("scale-probe", "predicted against projected heads over a grid of feet");
  probe_flags.add(probe);
  probe->add_option("--pan", pan, "degrees");
  probe->add_option("--tilt", tilt, "degrees");
  probe->add_option("--focal", focal, "pixels");
  probe->add_option("--step", step, "grid step, pixels");
  probe->add_option("--out", probe_out, "CSV file; stdout when omitted");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*init) return cmd_init(scenario, init->count("--seed") ? std::optional(seed) : std::nullopt, out, force);
    if (*run) {
      RunConfig cfg = manifest.empty() ? run_flags.resolve(run) : run_flags.cfg;
      return cmd_run(cfg, manifest, ablation);
    }
    if (*sweep) {
      const RunConfig cfg = sweep_flags.resolve(sweep);
      return cmd_sweep(cfg, sweep_opt, sweep->count("--seed") ? sweep_flags.seed : 1, sweep_seeds, sweep_out);
    }
    if (*eval) return cmd_eval(truth, trajectories, frames, eval_out);
    if (*timings) return cmd_timings(timing_flags.resolve(timings), repeats, timing_out);
    if (*probe) return cmd_scale_probe(probe_flags.resolve(probe), pan, tilt, focal, step, probe_out);
  } catch (const Error& e) {
    std::cerr << "ptzcal: " << e.what() << "\n";
    return e.code() == ErrorCode::ConfigError ? kExitConfig : 1;
  } catch (const json::exception& e) {
    std::cerr << "ptzcal: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "ptzcal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

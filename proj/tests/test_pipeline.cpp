#include "ptz/error.hpp"
#include "ptz/pipeline.hpp"
#include "ptz/scene_map.hpp"
#include "test_util.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

using namespace ptz;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string scenario_path(const char* name) {
  const char* dir = std::getenv("PTZ_SCENARIO_DIR");
  return (fs::path(dir ? dir : "scenarios") / name).string();
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ptz_test_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

RunConfig smoke_config() {
  RunConfig c;
  c.scenario_path = scenario_path("smoke.json");
  return c;
}

// One map for the smoke scenario, shared by the cases below.
const SceneMap& smoke_map() {
  static const SceneMap map = [] {
    Simulator sim(scenario_for(smoke_config()));
    return initialize_map(sim);
  }();
  return map;
}

RunResult run_smoke(RunConfig c) {
  Simulator sim(scenario_for(c));
  return run_pipeline(sim, smoke_map(), c);
}

int ptzcal(const std::string& args) {
  const char* bin = std::getenv("PTZCAL_BIN");
  REQUIRE(bin != nullptr);
  const std::string cmd = std::string(bin) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("run config survives a JSON round trip") {
  RunConfig c = smoke_config();
  c.sample_size = 321;
  c.ransac_threshold = 2.5;
  c.map_updating = false;
  c.proximity_check = false;
  c.tracking_mode = TrackingMode::Image;
  c.association = AssociationMethod::NearestNeighbor;
  c.gain = GainForm::Textbook;
  c.horizon = HorizonLine::AsWritten;
  c.seed = 99;
  c.parallel = false;
  const json j = run_config_json(c);
  CHECK(run_config_json(run_config_from_json(j)) == j);
}

TEST_CASE("bad run config values are config errors") {
  json j = run_config_json(smoke_config());
  auto code_of = [](const json& bad) {
    try {
      run_config_from_json(bad);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::CorruptPayload;
  };
  json a = j;
  a["tracking_mode"] = "4d";
  CHECK(code_of(a) == ErrorCode::ConfigError);
  json b = j;
  b["sample_size"] = 0;
  CHECK(code_of(b) == ErrorCode::ConfigError);
  json c = j;
  c["ransac_threshold"] = "three";
  CHECK(code_of(c) == ErrorCode::ConfigError);
  json d = j;
  d["ransac_threshold"] = -1.0;
  CHECK(code_of(d) == ErrorCode::ConfigError);
}

TEST_CASE("parallel and sequential runs give identical outputs") {
  RunConfig c = smoke_config();
  c.parallel = false;
  const RunResult seq = run_smoke(c);
  c.parallel = true;
  c.queue_capacity = 1;
  const RunResult par = run_smoke(c);
  REQUIRE(seq.frames.size() == 60);
  CHECK(diagnostics_csv(seq.frames) == diagnostics_csv(par.frames));
  CHECK(trajectories_csv(seq.trajectories) == trajectories_csv(par.trajectories));
  CHECK(mot_report_json(seq.mot) == mot_report_json(par.mot));
  CHECK(seq.trajectories.size() > 0);
}

TEST_CASE("repeated runs are bit-identical") {
  const RunResult a = run_smoke(smoke_config());
  const RunResult b = run_smoke(smoke_config());
  CHECK(diagnostics_csv(a.frames) == diagnostics_csv(b.frames));
  CHECK(trajectories_csv(a.trajectories) == trajectories_csv(b.trajectories));
  CHECK(mot_events_csv(a.mot) == mot_events_csv(b.mot));
}

TEST_CASE("calibration-only runs skip tracking outputs") {
  RunConfig c = smoke_config();
  c.track = false;
  const RunResult r = run_smoke(c);
  CHECK(r.trajectories.empty());
  CHECK(r.truth.empty());
  // Same calibration as a tracked run.
  const RunResult t = run_smoke(smoke_config());
  for (std::size_t i = 0; i < r.frames.size(); ++i) CHECK(r.frames[i].pose.focal == t.frames[i].pose.focal);
}

TEST_CASE("timings: stages sum to the sequential total, fps reported") {
  RunConfig c = smoke_config();
  c.parallel = false;
  const RunResult seq = run_smoke(c);
  c.parallel = true;
  const RunResult par = run_smoke(c);
  const json t = timings_json(seq, par);
  double sum = 0;
  for (const auto& row : t["stages"]) {
    CHECK(row["ms_per_frame"].get<double>() >= 0.0);
    sum += row["ms_per_frame"].get<double>();
  }
  CHECK(t["stages"].size() == 5);
  CHECK(sum == doctest::Approx(t["sequential_total_ms"].get<double>()).epsilon(1e-12));
  // The stage sum is measured inside the loop, so it cannot exceed the loop.
  CHECK(t["sequential_total_ms"].get<double>() <= t["sequential_wall_ms"].get<double>() * (1 + 1e-9));
  CHECK(t["fps_parallel"].get<double>() > 0);
  CHECK(t["fps_sequential"].get<double>() > 0);
}

TEST_CASE("manifest records config, seed and versions") {
  RunConfig c = smoke_config();
  c.seed = 42;
  const Scenario sc = scenario_for(c);
  const json m = run_manifest(c, sc);
  CHECK(m["seed"] == 42);
  CHECK(m["scenario"]["seed"] == 42);
  CHECK(m["config"] == run_config_json(c));
  CHECK(m["versions"].contains("ptzcal"));
  CHECK(m["versions"].contains("eigen"));
  // The embedded scenario is the one that ran.
  CHECK(scenario_to_json_text(scenario_from_json_text(m["scenario"].dump())) == scenario_to_json_text(sc));
}

TEST_CASE("truth and trajectory files parse back to the same metrics") {
  const RunResult r = run_smoke(smoke_config());
  const auto recs = parse_trajectories_csv(trajectories_csv(r.trajectories));
  REQUIRE(recs.size() == r.trajectories.size());
  CHECK(trajectories_csv(recs) == trajectories_csv(r.trajectories));
  const auto n = static_cast<std::int64_t>(r.frames.size());
  const auto gt = parse_truth_csv(truth_csv(r.truth), n);
  const auto hyp = hypothesis_frames(recs, n);
  CHECK(mot_events_csv(clear_mot(gt, hyp)) == mot_events_csv(r.mot));
  CHECK(mot_report_json(clear_mot(gt, hyp)) == mot_report_json(r.mot));

  CHECK_THROWS_AS(parse_trajectories_csv("frame,id\n1,2\n"), Error);
  CHECK_THROWS_AS(parse_truth_csv("frame,id,x0,y0,x1,y1\n5,1,0,0,1,1\n", 3), Error);
  CHECK_THROWS_AS(parse_truth_csv("frame,id,x0,y0,x1,y1\n1,1,0,zero,1,1\n", 3), Error);
}

TEST_CASE("sweep reports one point per value") {
  RunConfig c = smoke_config();
  SweepOptions o;
  o.sample_sizes = {50, 150};
  o.thresholds = {3};
  o.seeds = {1, 2};
  const auto pts = run_sweep(c, o);
  REQUIRE(pts.size() == 3);
  for (const auto& p : pts) {
    CHECK(p.errors.size() == 2);
    CHECK(std::isfinite(p.mean));
    CHECK(p.failure_rate >= 0.0);
  }
  CHECK(sweep_mean(pts, "landmarks", 150) == pts[1].mean);
  CHECK_THROWS_AS(sweep_mean(pts, "threshold", 7), Error);
  const std::string csv = sweep_csv(pts);
  CHECK(csv.rfind("parameter,value,mean_reproj_px,failure_rate,seeds\n", 0) == 0);
  o.seeds.clear();
  CHECK_THROWS_AS(run_sweep(c, o), Error);
}

TEST_CASE("cli: init refuses to overwrite without --force") {
  const fs::path dir = scratch("init");
  fs::create_directories(dir);
  const std::string map = (dir / "map.bin").string();
  const std::string sc = scenario_path("smoke.json");
  CHECK(ptzcal("init --scenario " + sc + " --out " + map) == 0);
  CHECK(fs::exists(map));
  CHECK(fs::exists(map + ".report.json"));
  const std::string first = slurp(map);
  CHECK(ptzcal("init --scenario " + sc + " --out " + map) == 3);
  CHECK(ptzcal("init --scenario " + sc + " --out " + map + " --force") == 0);
  CHECK(slurp(map) == first);
  const json rep = json::parse(slurp(map + ".report.json"));
  CHECK(rep.contains("rms_px"));
  CHECK(rep["keyframes"].size() == 6);
  // The saved map is the one the library builds.
  const SceneMap loaded = load_map(map);
  CHECK(loaded.landmark_count() == smoke_map().landmark_count());
}

TEST_CASE("cli: run, repeat from the manifest, eval") {
  const fs::path dir = scratch("run");
  const std::string sc = scenario_path("smoke.json");
  REQUIRE(ptzcal("run --scenario " + sc + " --out " + (dir / "a").string()) == 0);
  for (const char* f : {"manifest.json", "diagnostics.csv", "trajectories.csv", "truth.csv", "mot.json", "mot_events.csv"})
    CHECK(fs::exists(dir / "a" / f));
  REQUIRE(ptzcal("run --manifest " + (dir / "a" / "manifest.json").string() + " --out " + (dir / "b").string()) == 0);
  for (const char* f : {"diagnostics.csv", "trajectories.csv", "truth.csv", "mot.json", "mot_events.csv"})
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));

  REQUIRE(ptzcal("eval --truth " + (dir / "a" / "truth.csv").string() + " --trajectories " +
                 (dir / "a" / "trajectories.csv").string() + " --out " + (dir / "e").string()) == 0);
  const json run_mot = json::parse(slurp(dir / "a" / "mot.json"));
  const json eval_mot = json::parse(slurp(dir / "e" / "mot.json"));
  for (const char* k : {"MOTA", "MOTP", "FN", "FP", "ID_SW", "TR_FR", "frames"}) CHECK(run_mot[k] == eval_mot[k]);
  CHECK(slurp(dir / "a" / "mot_events.csv") == slurp(dir / "e" / "mot_events.csv"));
}

TEST_CASE("cli: exit codes") {
  const fs::path dir = scratch("codes");
  const std::string sc = scenario_path("smoke.json");
  CHECK(ptzcal("run --scenario " + sc + " --mode 4d --out " + dir.string()) == 3);
  CHECK(ptzcal("run --scenario /nonexistent.json --out " + dir.string()) == 3);
  CHECK(ptzcal("run --scenario " + sc) == 3);
  CHECK(ptzcal("frobnicate") == 3);
  // A rotation tolerance nothing meets leaves every frame stale.
  CHECK(ptzcal("run --scenario " + sc + " --rotation-tolerance 1e-15 --out " + dir.string()) == 2);
  CHECK(ptzcal("--version") == 0);
}

TEST_CASE("cli: sweep, timings and scale-probe write their tables") {
  const fs::path dir = scratch("tables");
  const std::string sc = scenario_path("smoke.json");
  REQUIRE(ptzcal("sweep --scenario " + sc + " --seeds 1 --sizes 50,100 --thresholds 2 --out " +
                 (dir / "sweep.csv").string()) == 0);
  CHECK(slurp(dir / "sweep.csv").find("landmarks,100,") != std::string::npos);
  REQUIRE(ptzcal("timings --scenario " + sc + " --repeats 1 --out " + (dir / "timings.json").string()) == 0);
  const json t = json::parse(slurp(dir / "timings.json"));
  CHECK(t.contains("parallel_total_ms"));
  CHECK(t.contains("fps_parallel"));
  REQUIRE(ptzcal("scale-probe --scenario " + sc + " --tilt -20 --focal 600 --out " + (dir / "probe.csv").string()) == 0);
  std::istringstream probe(slurp(dir / "probe.csv"));
  std::string line;
  std::getline(probe, line);
  CHECK(line == "foot_x,foot_y,head_x,head_y,true_head_x,true_head_y,height_px,error_pct");
  int rows = 0;
  double worst = 0;
  while (std::getline(probe, line)) {
    ++rows;
    worst = std::max(worst, std::stod(line.substr(line.rfind(',') + 1)));
  }
  CHECK(rows > 50);
  CHECK(worst <= 2.0);
}

TEST_CASE("cli: ablation runs all toggle combinations") {
  const fs::path dir = scratch("ablation");
  REQUIRE(ptzcal("run --ablation --scenario " + scenario_path("smoke.json") + " --out " + dir.string()) == 0);
  std::istringstream table(slurp(dir / "ablation.csv"));
  std::string line;
  int rows = -1;
  while (std::getline(table, line)) ++rows;
  CHECK(rows == 8);
  CHECK(fs::exists(dir / "frozen_noprox_2d" / "mot.json"));
}

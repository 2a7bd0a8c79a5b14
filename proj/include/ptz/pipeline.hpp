#pragma once

// Scenario-driven wiring: map initialization from the simulator keyframe pass
// and the on-line loop (calibration thread, tracking thread).

#include "ptz/calibrate.hpp"
#include "ptz/metrics.hpp"
#include "ptz/offline_init.hpp"
#include "ptz/simulator.hpp"
#include "ptz/tracker.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ptz {

struct InitOptions {
  KeyframeMatchOptions match;
  BundleOptions bundle;
  double landmark_sigma = 1.0;
};

struct InitReport {
  BundleResult bundle;
  std::size_t pairs = 0;
  std::size_t correspondences = 0;
  std::vector<CameraPose> truth;     // simulator keyframe poses
  std::vector<CameraPose> estimate;  // bundle-adjusted keyframe poses
  WorldRegistration registration;
};

/// Renders the scenario keyframes, matches them, bundle-adjusts and registers
/// the world plane. The reference view is the keyframe at pan 0, tilt 0 and
/// the reference focal. Throws ConfigError when it is missing.
SceneMap initialize_map(Simulator& sim, const InitOptions& options = {}, InitReport* report = nullptr);

/// Ground-truth boxes of the targets in view.
MotFrame truth_objects(const FrameData& fd, double aspect = 0.41);
/// Hypothesis boxes of confirmed tracks.
MotFrame track_objects(std::int64_t frame, std::span<const TrackRecord> records, double aspect = 0.41);

/// Cross-ratio for targets of the given height, from the simulator geometry.
double target_mu(const Simulator& sim, double height_m);

struct RunConfig {
  std::string scenario_path;
  std::size_t sample_size = 1000;
  double ransac_threshold = 3.0;
  bool map_updating = true;
  bool proximity_check = true;
  TrackingMode tracking_mode = TrackingMode::World;
  std::string output_dir;
  std::optional<std::uint64_t> seed;  // overrides the scenario seed

  AssociationMethod association = AssociationMethod::CheapJpdaf;
  bool parallel = true;
  std::size_t queue_capacity = 4;
  GainForm gain = GainForm::AsPrinted;
  double rotation_tolerance = kFrameRotationTolerance;
  HorizonLine horizon = HorizonLine::Pullback;
  double target_height = 1.75;
  double max_failure_rate = 0.5;  // share of stale frames tolerated
  bool track = true;              // false: calibration only
  std::string map_path;           // load instead of initializing
};

nlohmann::ordered_json run_config_json(const RunConfig& cfg);
/// Throws ConfigError on unknown values.
RunConfig run_config_from_json(const nlohmann::ordered_json& j);

/// Per-frame calibration and tracking diagnostics. Error fields are NaN while
/// no pose has been estimated yet.
struct FrameDiagnostics {
  std::int64_t frame = 0;
  double timestamp = 0.0;
  bool stale = false;
  std::int32_t view = -1;
  std::size_t tentative = 0, inliers = 0;
  LifecycleCounts lifecycle;
  std::size_t landmarks = 0;  // in the matched view after the update
  CameraPose pose, truth;
  CalibErrorRecord error;
  std::size_t detections = 0, tracks = 0;
};

struct StageTimes {
  double render = 0, match = 0, homography = 0, map_update = 0, tracking = 0;
  double sum() const { return render + match + homography + map_update + tracking; }
};

struct RunResult {
  std::vector<FrameDiagnostics> frames;
  std::vector<TrackRecord> trajectories;
  std::vector<MotFrame> truth, hypotheses;
  MotReport mot;
  double failure_rate = 0.0;
  double mu = 1.0;
  StageTimes stages;    // summed over frames
  double wall = 0.0;    // seconds for the whole loop
};

/// The on-line loop over all scenario frames: calibrate against `map`, then
/// track with the estimated ground-to-frame map. Parallel mode runs
/// calibration and tracking on two threads joined by a bounded queue; the
/// outputs do not depend on the mode.
RunResult run_pipeline(Simulator& sim, SceneMap map, const RunConfig& cfg);

/// Scenario named by the config, with the seed override applied.
Scenario scenario_for(const RunConfig& cfg);

/// Reproduces the inputs of a run: config, scenario and versions.
nlohmann::ordered_json run_manifest(const RunConfig& cfg, const Scenario& sc);

/// diagnostics.csv, trajectories.csv, mot.json, mot_events.csv and
/// manifest.json under cfg.output_dir. Timings go to a separate file so the
/// rest stays bit-identical across repeats.
void write_run_outputs(const RunResult& r, const RunConfig& cfg, const Scenario& sc);
void write_timings(const RunResult& sequential, const RunResult& parallel, const std::string& path);
nlohmann::ordered_json timings_json(const RunResult& sequential, const RunResult& parallel);

/// Mean reprojection error against one run parameter. Each seed initializes
/// its map once; every value then runs calibration only on that map.
struct SweepOptions {
  std::vector<std::size_t> sample_sizes{50, 100, 200, 500, 1000, 2000};
  std::vector<double> thresholds{0.5, 1, 2, 3, 5, 10};
  std::vector<std::uint64_t> seeds{1};
};

struct SweepPoint {
  std::string parameter;  // "landmarks" or "threshold"
  double value = 0.0;
  std::vector<double> errors;  // per seed, mean over frames with a pose
  double mean = 0.0;
  double failure_rate = 0.0;  // mean over seeds
};

std::vector<SweepPoint> run_sweep(const RunConfig& base, const SweepOptions& options);
std::string sweep_csv(std::span<const SweepPoint> points);
/// Mean error of the point with the given parameter and value. Throws ConfigError.
double sweep_mean(std::span<const SweepPoint> points, const std::string& parameter, double value);

std::string diagnostics_csv(std::span<const FrameDiagnostics> frames);
std::string trajectories_csv(std::span<const TrackRecord> records);
/// Ground-truth boxes, one row per object: frame,id,x0,y0,x1,y1.
std::string truth_csv(std::span<const MotFrame> frames);

/// Inverse of trajectories_csv. Throws CorruptPayload.
std::vector<TrackRecord> parse_trajectories_csv(const std::string& text);
/// Frames 0..frames-1 from truth_csv rows. Throws CorruptPayload.
std::vector<MotFrame> parse_truth_csv(const std::string& text, std::int64_t frames);
/// Hypothesis frames 0..frames-1 built from track records.
std::vector<MotFrame> hypothesis_frames(std::span<const TrackRecord> records, std::int64_t frames);

}  // namespace ptz

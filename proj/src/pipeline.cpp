#include "ptz/pipeline.hpp"

#include "ptz/error.hpp"
#include "ptz/worldproj.hpp"

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

namespace ptz {

SceneMap initialize_map(Simulator& sim, const InitOptions& options, InitReport* report) {
  const Scenario& sc = sim.scenario();
  const auto poses = sim.keyframe_poses();
  BundleProblem problem;
  problem.pp = sim.reference_intrinsics().pp;
  problem.base_focal = sc.reference_focal;
  problem.reference = -1;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const auto& p = poses[i];
    if (problem.reference < 0 && std::abs(p.pan) < 1e-12 && std::abs(p.tilt) < 1e-12 &&
        std::abs(p.focal - sc.reference_focal) < 1e-9)
      problem.reference = static_cast<int>(i);
  }
  if (problem.reference < 0)
    throw Error(ErrorCode::ConfigError, "no keyframe at pan 0, tilt 0 and the reference focal");
  for (std::size_t i = 0; i < poses.size(); ++i) {
    KeyframeData kf = sim.render_keyframe(poses[i], i);
    problem.keyframes.push_back(KeyframeInput{kf.reading, std::move(kf.obs)});
  }
  Rng rng(mix_seed({sc.seed, 0x1417ULL}));
  problem.matches = match_keyframes(problem, options.match, rng);
  BundleResult ba = bundle_adjust(problem, options.bundle);
  SceneMap map = build_scene_map(problem, ba, options.landmark_sigma);
  const RegistrationInputs in = sim.registration_inputs();
  WorldRegistration reg = register_world(in.vp_x, in.vp_y, map.reference_intrinsics(), in.p1, in.p2, in.L);
  map.H_W = reg.H_W;
  if (report) {
    report->pairs = problem.matches.size();
    report->correspondences = 0;
    for (const auto& m : problem.matches) report->correspondences += m.matches.size();
    report->truth = poses;
    report->estimate.clear();
    for (std::size_t i = 0; i < poses.size(); ++i) {
      CameraPose p;
      pan_tilt_from_rotation(ba.R[i], p.pan, p.tilt);
      p.focal = ba.f[i];
      report->estimate.push_back(p);
    }
    report->bundle = std::move(ba);
    report->registration = reg;
  }
  return map;
}

MotFrame truth_objects(const FrameData& fd, double aspect) {
  MotFrame f;
  f.frame = fd.index;
  for (const auto& t : fd.truth.targets)
    if (t.in_view) f.objects.push_back(MotObject{t.id, box_from_foot(t.foot, (t.head - t.foot).norm(), aspect)});
  return f;
}

MotFrame track_objects(std::int64_t frame, std::span<const TrackRecord> records, double aspect) {
  MotFrame f;
  f.frame = frame;
  for (const auto& r : records) f.objects.push_back(MotObject{r.id, box_from_foot(Vec2(r.x, r.y), r.height_px, aspect)});
  return f;
}

double target_mu(const Simulator& sim, double height_m) {
  // Any pose with the ground in view gives the same cross-ratio.
  const double h = sim.scenario().camera_height;
  const CameraPose pose{0.0, -std::atan2(h, 20.0), sim.scenario().reference_focal};
  const Vec2 foot = sim.project_point(pose, Vec3(0.0, h, 20.0));
  const Vec2 head = sim.project_point(pose, Vec3(0.0, h - height_m, 20.0));
  return calibrate_mu(sim.ground_to_frame(pose), sim.intrinsics(pose.focal), foot, head);
}

namespace {

using json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(std::max<std::size_t>(1, capacity)) {}

  void push(T item) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_; });
    items_.push_back(std::move(item));
    not_empty_.notify_one();
  }

  T pop() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return !items_.empty(); });
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

 private:
  std::size_t capacity_;
  std::deque<T> items_;
  std::mutex mutex_;
  std::condition_variable not_empty_, not_full_;
};

// What the calibration side hands to the tracking side for one frame.
struct Handoff {
  FrameData fd;
  CalibrationResult cal;
  FrameDiagnostics diag;
  double render = 0.0;
  std::exception_ptr error;
  bool last = false;
};

const char* mode_name(TrackingMode m) { return m == TrackingMode::World ? "3d" : "2d"; }
const char* assoc_name(AssociationMethod m) { return m == AssociationMethod::CheapJpdaf ? "cheap_jpdaf" : "nearest"; }
const char* gain_name(GainForm g) { return g == GainForm::AsPrinted ? "as_printed" : "textbook"; }
const char* horizon_name(HorizonLine h) { return h == HorizonLine::Pullback ? "pullback" : "as_written"; }

template <typename E>
E parse_enum(const json& j, const char* key, std::initializer_list<std::pair<const char*, E>> options, E fallback) {
  if (!j.contains(key)) return fallback;
  const std::string v = j.at(key).get<std::string>();
  for (const auto& [name, value] : options)
    if (v == name) return value;
  throw Error(ErrorCode::ConfigError, std::string("unknown ") + key + " '" + v + "'");
}

}  // namespace

json run_config_json(const RunConfig& cfg) {
  json j;
  j["scenario"] = cfg.scenario_path;
  j["sample_size"] = cfg.sample_size;
  j["ransac_threshold"] = cfg.ransac_threshold;
  j["map_updating"] = cfg.map_updating;
  j["proximity_check"] = cfg.proximity_check;
  j["tracking_mode"] = mode_name(cfg.tracking_mode);
  j["output_dir"] = cfg.output_dir;
  j["seed"] = cfg.seed ? json(*cfg.seed) : json(nullptr);
  j["association"] = assoc_name(cfg.association);
  j["parallel"] = cfg.parallel;
  j["queue_capacity"] = cfg.queue_capacity;
  j["gain"] = gain_name(cfg.gain);
  j["rotation_tolerance"] = cfg.rotation_tolerance;
  j["horizon"] = horizon_name(cfg.horizon);
  j["target_height"] = cfg.target_height;
  j["max_failure_rate"] = cfg.max_failure_rate;
  j["track"] = cfg.track;
  j["map"] = cfg.map_path;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    c.scenario_path = j.value("scenario", c.scenario_path);
    c.sample_size = j.value("sample_size", c.sample_size);
    c.ransac_threshold = j.value("ransac_threshold", c.ransac_threshold);
    c.map_updating = j.value("map_updating", c.map_updating);
    c.proximity_check = j.value("proximity_check", c.proximity_check);
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("seed") && !j["seed"].is_null()) c.seed = j["seed"].get<std::uint64_t>();
    c.parallel = j.value("parallel", c.parallel);
    c.queue_capacity = j.value("queue_capacity", c.queue_capacity);
    c.target_height = j.value("target_height", c.target_height);
    c.rotation_tolerance = j.value("rotation_tolerance", c.rotation_tolerance);
    c.max_failure_rate = j.value("max_failure_rate", c.max_failure_rate);
    c.track = j.value("track", c.track);
    c.map_path = j.value("map", c.map_path);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("run config: ") + e.what());
  }
  c.tracking_mode = parse_enum<TrackingMode>(j, "tracking_mode", {{"3d", TrackingMode::World}, {"2d", TrackingMode::Image}},
                                             c.tracking_mode);
  c.association = parse_enum<AssociationMethod>(
      j, "association", {{"cheap_jpdaf", AssociationMethod::CheapJpdaf}, {"nearest", AssociationMethod::NearestNeighbor}},
      c.association);
  c.gain = parse_enum<GainForm>(j, "gain", {{"as_printed", GainForm::AsPrinted}, {"textbook", GainForm::Textbook}}, c.gain);
  c.horizon = parse_enum<HorizonLine>(j, "horizon", {{"pullback", HorizonLine::Pullback}, {"as_written", HorizonLine::AsWritten}},
                                      c.horizon);
  if (c.sample_size == 0) throw Error(ErrorCode::ConfigError, "sample_size must be positive");
  if (!(c.ransac_threshold > 0)) throw Error(ErrorCode::ConfigError, "ransac_threshold must be positive");
  return c;
}

Scenario scenario_for(const RunConfig& cfg) {
  if (cfg.scenario_path.empty()) throw Error(ErrorCode::ConfigError, "no scenario given");
  Scenario sc = load_scenario(cfg.scenario_path);
  if (cfg.seed) sc.seed = *cfg.seed;
  return sc;
}

RunResult run_pipeline(Simulator& sim, SceneMap map, const RunConfig& cfg) {
  const Scenario& sc = sim.scenario();
  CalibrateConfig cc;
  cc.match.sample_size = cfg.sample_size;
  cc.ransac.threshold = cfg.ransac_threshold;
  cc.map_updating = cfg.map_updating;
  cc.lifecycle.use_proximity = cfg.proximity_check;
  cc.gain = cfg.gain;
  cc.rotation_tolerance = cfg.rotation_tolerance;
  cc.keypoint_sigma = sc.keypoint_sigma;
  cc.width = sc.width;
  cc.height = sc.height;

  RunResult out;
  out.mu = target_mu(sim, cfg.target_height);
  TrackerConfig tc;
  tc.mode = cfg.tracking_mode;
  tc.association = cfg.association;
  tc.mu = out.mu;
  tc.horizon = cfg.horizon;
  Tracker tracker(tc);

  CalibrationState state;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  auto calibrate_one = [&](std::int64_t t) {
    Handoff h;
    const auto t0 = Clock::now();
    h.fd = sim.render_frame(t);
    h.render = since(t0);
    Rng rng(mix_seed({sc.seed, 0xCA11ULL, static_cast<std::uint64_t>(t)}));
    h.cal = calibrate_frame(t, h.fd.obs, h.fd.reading, map, state, cc, rng);
    FrameDiagnostics& d = h.diag;
    d.frame = t;
    d.timestamp = h.fd.timestamp;
    d.stale = h.cal.stale;
    d.view = h.cal.view;
    d.tentative = h.cal.tentative;
    d.inliers = h.cal.inliers.size();
    d.lifecycle = h.cal.lifecycle;
    d.landmarks = h.cal.view >= 0 ? map.views[static_cast<std::size_t>(h.cal.view)].landmarks.size() : 0;
    d.pose = h.cal.pose;
    d.truth = h.fd.truth.pose;
    d.detections = h.fd.dets.size();
    if (h.cal.G)
      d.error = calib_errors(h.cal.pose, h.cal.H_total.h, h.fd.truth.pose, h.fd.truth.H_ref, sc.width, sc.height);
    else
      d.error = CalibErrorRecord{nan, nan, nan, nan};
    return h;
  };

  auto track_one = [&](Handoff& h) {
    const auto t0 = Clock::now();
    if (cfg.track) {
      TrackerInput in;
      in.frame = h.fd.index;
      in.timestamp = h.fd.timestamp;
      in.G = h.cal.G;
      in.K = h.cal.K;
      in.stale = h.cal.stale;
      in.dets = h.fd.dets;
      auto recs = tracker.step(in);
      h.diag.tracks = recs.size();
      out.truth.push_back(truth_objects(h.fd));
      out.hypotheses.push_back(track_objects(h.fd.index, recs));
      out.trajectories.insert(out.trajectories.end(), recs.begin(), recs.end());
    }
    out.stages.render += h.render;
    out.stages.match += h.cal.t_match;
    out.stages.homography += h.cal.t_homography;
    out.stages.map_update += h.cal.t_update;
    out.stages.tracking += since(t0);
    out.frames.push_back(h.diag);
  };

  const auto start = Clock::now();
  if (!cfg.parallel) {
    for (std::int64_t t = 0; t < sc.frames; ++t) {
      Handoff h = calibrate_one(t);
      track_one(h);
    }
  } else {
    BoundedQueue<Handoff> queue(cfg.queue_capacity);
    std::thread producer([&] {
      for (std::int64_t t = 0; t < sc.frames; ++t) {
        Handoff h;
        try {
          h = calibrate_one(t);
        } catch (...) {
          h.error = std::current_exception();
          h.last = true;
          queue.push(std::move(h));
          return;
        }
        queue.push(std::move(h));
      }
      Handoff end;
      end.last = true;
      queue.push(std::move(end));
    });
    std::exception_ptr error;
    for (;;) {
      Handoff h = queue.pop();
      if (h.last) {
        error = h.error;
        break;
      }
      if (error) continue;
      try {
        track_one(h);
      } catch (...) {
        error = std::current_exception();
      }
    }
    producer.join();
    if (error) std::rethrow_exception(error);
  }
  out.wall = since(start);

  std::size_t stale = 0;
  for (const auto& d : out.frames) stale += d.stale ? 1 : 0;
  out.failure_rate = out.frames.empty() ? 0.0 : static_cast<double>(stale) / static_cast<double>(out.frames.size());
  if (cfg.track) out.mot = clear_mot(out.truth, out.hypotheses);
  return out;
}

std::vector<SweepPoint> run_sweep(const RunConfig& base, const SweepOptions& options) {
  if (options.seeds.empty()) throw Error(ErrorCode::ConfigError, "sweep needs at least one seed");
  std::vector<SweepPoint> points;
  for (auto n : options.sample_sizes) points.push_back(SweepPoint{"landmarks", static_cast<double>(n), {}, 0, 0});
  for (auto th : options.thresholds) points.push_back(SweepPoint{"threshold", th, {}, 0, 0});

  for (auto seed : options.seeds) {
    RunConfig cfg = base;
    cfg.seed = seed;
    cfg.track = false;
    cfg.parallel = false;
    const Scenario sc = scenario_for(cfg);
    SceneMap map;
    {
      Simulator sim(sc);
      map = initialize_map(sim);
    }
    for (auto& pt : points) {
      RunConfig c = cfg;
      if (pt.parameter == "landmarks")
        c.sample_size = static_cast<std::size_t>(pt.value);
      else
        c.ransac_threshold = pt.value;
      Simulator sim(sc);
      const RunResult r = run_pipeline(sim, map, c);
      double sum = 0;
      std::size_t k = 0;
      for (const auto& d : r.frames)
        if (!std::isnan(d.error.reproj_px)) {
          sum += d.error.reproj_px;
          ++k;
        }
      pt.errors.push_back(k ? sum / static_cast<double>(k) : std::numeric_limits<double>::quiet_NaN());
      pt.failure_rate += r.failure_rate / static_cast<double>(options.seeds.size());
    }
  }
  for (auto& pt : points) {
    double s = 0;
    for (double e : pt.errors) s += e;
    pt.mean = s / static_cast<double>(pt.errors.size());
  }
  return points;
}

std::string sweep_csv(std::span<const SweepPoint> points) {
  std::ostringstream os;
  os.precision(17);
  os << "parameter,value,mean_reproj_px,failure_rate,seeds\n";
  for (const auto& p : points)
    os << p.parameter << ',' << p.value << ',' << p.mean << ',' << p.failure_rate << ',' << p.errors.size() << '\n';
  return os.str();
}

double sweep_mean(std::span<const SweepPoint> points, const std::string& parameter, double value) {
  for (const auto& p : points)
    if (p.parameter == parameter && p.value == value) return p.mean;
  throw Error(ErrorCode::ConfigError, "no sweep point " + parameter + "=" + std::to_string(value));
}

json run_manifest(const RunConfig& cfg, const Scenario& sc) {
  json j;
  j["format"] = 1;
  j["config"] = run_config_json(cfg);
  j["seed"] = sc.seed;
  j["scenario"] = json::parse(scenario_to_json_text(sc));
  json v;
  v["ptzcal"] = PTZ_VERSION;
  v["compiler"] = __VERSION__;
  v["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
               std::to_string(EIGEN_MINOR_VERSION);
  j["versions"] = v;
  return j;
}

std::string diagnostics_csv(std::span<const FrameDiagnostics> frames) {
  std::ostringstream os;
  os.precision(17);
  os << "frame,timestamp,stale,view,tentative,inliers,births,deaths,proximity_rejected,landmarks,"
        "pan_deg,tilt_deg,focal,true_pan_deg,true_tilt_deg,true_focal,e_pan_deg,e_tilt_deg,e_f_pct,reproj_px,"
        "detections,tracks\n";
  const double r2d = 180.0 / std::numbers::pi;
  for (const auto& d : frames)
    os << d.frame << ',' << d.timestamp << ',' << (d.stale ? 1 : 0) << ',' << d.view << ',' << d.tentative << ','
       << d.inliers << ',' << d.lifecycle.births << ',' << d.lifecycle.deaths << ',' << d.lifecycle.rejected_by_proximity
       << ',' << d.landmarks << ',' << d.pose.pan * r2d << ',' << d.pose.tilt * r2d << ',' << d.pose.focal << ','
       << d.truth.pan * r2d << ',' << d.truth.tilt * r2d << ',' << d.truth.focal << ',' << d.error.e_pan_deg << ','
       << d.error.e_tilt_deg << ',' << d.error.e_f_pct << ',' << d.error.reproj_px << ',' << d.detections << ','
       << d.tracks << '\n';
  return os.str();
}

std::string trajectories_csv(std::span<const TrackRecord> records) {
  std::ostringstream os;
  os.precision(17);
  os << "frame,id,X,Y,x,y,height_px,status\n";
  for (const auto& r : records)
    os << r.frame << ',' << r.id << ',' << r.X << ',' << r.Y << ',' << r.x << ',' << r.y << ',' << r.height_px << ','
       << to_string(r.status) << '\n';
  return os.str();
}

std::string truth_csv(std::span<const MotFrame> frames) {
  std::ostringstream os;
  os.precision(17);
  os << "frame,id,x0,y0,x1,y1\n";
  for (const auto& f : frames)
    for (const auto& o : f.objects)
      os << f.frame << ',' << o.id << ',' << o.box.x0 << ',' << o.box.y0 << ',' << o.box.x1 << ',' << o.box.y1 << '\n';
  return os.str();
}

namespace {

// Data rows of a CSV with the expected header, split on commas.
std::vector<std::vector<std::string>> csv_rows(const std::string& text, const std::string& header, std::size_t fields) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != header)
    throw Error(ErrorCode::CorruptPayload, "expected header '" + header + "'");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != fields) throw Error(ErrorCode::CorruptPayload, "bad row '" + line + "'");
    rows.push_back(std::move(cells));
  }
  return rows;
}

double to_double(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::CorruptPayload, "not a number: '" + s + "'");
  }
}

std::int64_t to_int(const std::string& s) {
  const double v = to_double(s);
  if (v != std::floor(v)) throw Error(ErrorCode::CorruptPayload, "not an integer: '" + s + "'");
  return static_cast<std::int64_t>(v);
}

}  // namespace

std::vector<TrackRecord> parse_trajectories_csv(const std::string& text) {
  std::vector<TrackRecord> out;
  for (const auto& c : csv_rows(text, "frame,id,X,Y,x,y,height_px,status", 8)) {
    TrackRecord r;
    r.frame = to_int(c[0]);
    r.id = static_cast<int>(to_int(c[1]));
    r.X = to_double(c[2]);
    r.Y = to_double(c[3]);
    r.x = to_double(c[4]);
    r.y = to_double(c[5]);
    r.height_px = to_double(c[6]);
    if (c[7] == "confirmed")
      r.status = TrackStatus::Confirmed;
    else if (c[7] == "tentative")
      r.status = TrackStatus::Tentative;
    else if (c[7] == "lost")
      r.status = TrackStatus::Lost;
    else
      throw Error(ErrorCode::CorruptPayload, "unknown status '" + c[7] + "'");
    out.push_back(r);
  }
  return out;
}

std::vector<MotFrame> parse_truth_csv(const std::string& text, std::int64_t frames) {
  std::vector<MotFrame> out(static_cast<std::size_t>(std::max<std::int64_t>(frames, 0)));
  for (std::size_t i = 0; i < out.size(); ++i) out[i].frame = static_cast<std::int64_t>(i);
  for (const auto& c : csv_rows(text, "frame,id,x0,y0,x1,y1", 6)) {
    const std::int64_t t = to_int(c[0]);
    if (t < 0 || t >= frames) throw Error(ErrorCode::CorruptPayload, "truth frame out of range: " + c[0]);
    out[static_cast<std::size_t>(t)].objects.push_back(
        MotObject{static_cast<int>(to_int(c[1])), Box{to_double(c[2]), to_double(c[3]), to_double(c[4]), to_double(c[5])}});
  }
  return out;
}

std::vector<MotFrame> hypothesis_frames(std::span<const TrackRecord> records, std::int64_t frames) {
  std::vector<std::vector<TrackRecord>> by_frame(static_cast<std::size_t>(std::max<std::int64_t>(frames, 0)));
  for (const auto& r : records)
    if (r.frame >= 0 && r.frame < frames) by_frame[static_cast<std::size_t>(r.frame)].push_back(r);
  std::vector<MotFrame> out;
  for (std::size_t t = 0; t < by_frame.size(); ++t)
    out.push_back(track_objects(static_cast<std::int64_t>(t), by_frame[t]));
  return out;
}

namespace {

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error(ErrorCode::ConfigError, "cannot write " + p.string());
  f << text;
}

}  // namespace

void write_run_outputs(const RunResult& r, const RunConfig& cfg, const Scenario& sc) {
  if (cfg.output_dir.empty()) throw Error(ErrorCode::ConfigError, "no output directory");
  const std::filesystem::path dir(cfg.output_dir);
  std::filesystem::create_directories(dir);
  write_file(dir / "manifest.json", run_manifest(cfg, sc).dump(2) + "\n");
  write_file(dir / "diagnostics.csv", diagnostics_csv(r.frames));
  if (cfg.track) {
    write_file(dir / "trajectories.csv", trajectories_csv(r.trajectories));
    write_file(dir / "truth.csv", truth_csv(r.truth));
    json m = json::parse(mot_report_json(r.mot));
    const UscReport u = usc_metric(r.truth, r.hypotheses);
    m["USC"] = {{"MT", u.mt}, {"PT", u.pt}, {"ML", u.ml}, {"FAF", u.faf}};
    m["calibration_failure_rate"] = r.failure_rate;
    m["mu"] = r.mu;
    write_file(dir / "mot.json", m.dump(2) + "\n");
    write_file(dir / "mot_events.csv", mot_events_csv(r.mot));
  }
}

json timings_json(const RunResult& seq, const RunResult& par) {
  const double n = std::max<double>(1.0, static_cast<double>(seq.frames.size()));
  auto ms = [&](double s) { return 1000.0 * s / n; };
  json j;
  json st = json::array();
  auto row = [&](const char* name, double s) { st.push_back({{"stage", name}, {"ms_per_frame", ms(s)}}); };
  row("frame synthesis and detection", seq.stages.render);
  row("landmark matching", seq.stages.match);
  row("homography estimation", seq.stages.homography);
  row("map update", seq.stages.map_update);
  row("tracking", seq.stages.tracking);
  j["stages"] = st;
  j["sequential_total_ms"] = ms(seq.stages.sum());
  j["sequential_wall_ms"] = ms(seq.wall);
  j["parallel_total_ms"] = ms(par.wall);
  j["fps_sequential"] = n / std::max(seq.wall, 1e-12);
  j["fps_parallel"] = n / std::max(par.wall, 1e-12);
  j["hardware_threads"] = std::thread::hardware_concurrency();
  j["frames"] = seq.frames.size();
  return j;
}

void write_timings(const RunResult& seq, const RunResult& par, const std::string& path) {
  write_file(path, timings_json(seq, par).dump(2) + "\n");
}

}  // namespace ptz

#include "ptz/error.hpp"
#include "ptz/simulator.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace ptz {

using nlohmann::json;

namespace {

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("scenario field '") + key + "': " + e.what());
  }
}

Vec2 vec2_of(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 2) throw Error(ErrorCode::ConfigError, std::string(what) + " must be [x, y]");
  return Vec2(j[0].get<double>(), j[1].get<double>());
}

json vec2_json(const Vec2& v) { return json::array({v.x(), v.y()}); }

void validate(const Scenario& s) {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw Error(ErrorCode::ConfigError, msg);
  };
  require(s.width > 0 && s.height > 0, "image size must be positive");
  require(s.frame_dt > 0, "frame_dt must be positive");
  require(s.dt_jitter >= 0 && s.dt_jitter < 1, "dt_jitter must lie in [0, 1)");
  require(s.frames >= 0, "frames must be non-negative");
  require(s.camera_height > 0, "camera_height must be positive");
  require(s.reference_focal > 0, "reference_focal must be positive");
  require(s.descriptor_dim > 0, "descriptor_dim must be positive");
  require(s.landmarks_per_frame >= 0, "landmarks_per_frame must be non-negative");
  require(s.outlier_fraction >= 0 && s.outlier_fraction <= 1, "outlier_fraction must lie in [0, 1]");
  require(s.outlier_radius_px >= 0, "outlier_radius_px must be non-negative");
  require(s.p_miss >= 0 && s.p_miss <= 1, "p_miss must lie in [0, 1]");
  for (const auto& k : s.trajectory) {
    require(k.focal > 0, "trajectory focal must be positive");
    require(std::abs(k.tilt_deg) < 90, "trajectory tilt out of range");
  }
  for (const auto& l : s.keyframes) require(l.focal > 0, "keyframe focal must be positive");
  for (const auto& t : s.targets) require(t.speed >= 0 && t.height_m > 0, "target speed/height");
}

}  // namespace

Scenario scenario_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("scenario is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, "scenario must be a JSON object");

  Scenario s;
  try {
    read(j, "name", s.name);
    read(j, "seed", s.seed);
    read(j, "width", s.width);
    read(j, "height", s.height);
    read(j, "frame_dt", s.frame_dt);
    read(j, "dt_jitter", s.dt_jitter);
    read(j, "frames", s.frames);
    read(j, "camera_height", s.camera_height);
    read(j, "reference_focal", s.reference_focal);
    read(j, "landmarks_per_frame", s.landmarks_per_frame);
    read(j, "descriptor_dim", s.descriptor_dim);
    read(j, "field_pan_min_deg", s.field_pan_min_deg);
    read(j, "field_pan_max_deg", s.field_pan_max_deg);
    read(j, "field_tilt_min_deg", s.field_tilt_min_deg);
    read(j, "field_tilt_max_deg", s.field_tilt_max_deg);
    read(j, "min_size_px", s.min_size_px);
    read(j, "max_size_px", s.max_size_px);
    read(j, "min_focal", s.min_focal);
    read(j, "max_focal", s.max_focal);
    read(j, "landmark_lifetime_frames", s.landmark_lifetime_frames);
    read(j, "keypoint_sigma", s.keypoint_sigma);
    read(j, "keyframe_keypoint_sigma", s.keyframe_keypoint_sigma);
    read(j, "descriptor_sigma", s.descriptor_sigma);
    read(j, "drift_rate", s.drift_rate);
    read(j, "clutter_per_frame", s.clutter_per_frame);
    read(j, "outlier_fraction", s.outlier_fraction);
    read(j, "outlier_radius_px", s.outlier_radius_px);
    read(j, "detection_sigma", s.detection_sigma);
    read(j, "detection_height_rel_sd", s.detection_height_rel_sd);
    read(j, "p_miss", s.p_miss);
    read(j, "clutter_detections_per_frame", s.clutter_detections_per_frame);
    read(j, "loop_trajectory", s.loop_trajectory);

    if (j.contains("actuator")) {
      const auto& a = j["actuator"];
      read(a, "pan_sd_deg", s.actuator.pan_sd_deg);
      read(a, "tilt_sd_deg", s.actuator.tilt_sd_deg);
      read(a, "zoom_rel_sd", s.actuator.zoom_rel_sd);
      read(a, "angle_step_deg", s.actuator.angle_step_deg);
    }
    for (const auto& k : j.value("trajectory", json::array())) {
      CameraKeypose kp;
      read(k, "frame", kp.frame);
      read(k, "pan_deg", kp.pan_deg);
      read(k, "tilt_deg", kp.tilt_deg);
      read(k, "focal", kp.focal);
      s.trajectory.push_back(kp);
    }
    for (const auto& k : j.value("keyframes", json::array())) {
      KeyframeLevel lv;
      read(k, "focal", lv.focal);
      read(k, "pans_deg", lv.pans_deg);
      read(k, "tilts_deg", lv.tilts_deg);
      s.keyframes.push_back(lv);
    }
    for (const auto& e : j.value("events", json::array())) {
      SceneChangeEvent ev;
      read(e, "frame", ev.frame);
      read(e, "pan_min_deg", ev.pan_min_deg);
      read(e, "pan_max_deg", ev.pan_max_deg);
      read(e, "tilt_min_deg", ev.tilt_min_deg);
      read(e, "tilt_max_deg", ev.tilt_max_deg);
      s.events.push_back(ev);
    }
    for (const auto& t : j.value("targets", json::array())) {
      TargetScript ts;
      read(t, "height_m", ts.height_m);
      read(t, "speed", ts.speed);
      read(t, "start_frame", ts.start_frame);
      for (const auto& w : t.value("waypoints", json::array())) ts.waypoints.push_back(vec2_of(w, "waypoint"));
      s.targets.push_back(ts);
    }
    for (const auto& f : j.value("false_alarms", json::array())) {
      FalseAlarmSource fa;
      if (f.contains("world")) fa.world = vec2_of(f["world"], "false alarm position");
      read(f, "scale", fa.scale);
      read(f, "rate", fa.rate);
      s.false_alarms.push_back(fa);
    }
    if (j.contains("registration_a")) s.registration_a = vec2_of(j["registration_a"], "registration_a");
    if (j.contains("registration_b")) s.registration_b = vec2_of(j["registration_b"], "registration_b");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("scenario: ") + e.what());
  }
  validate(s);
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open scenario " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return scenario_from_json_text(ss.str());
}

std::string scenario_to_json_text(const Scenario& s) {
  json j;
  j["name"] = s.name;
  j["seed"] = s.seed;
  j["width"] = s.width;
  j["height"] = s.height;
  j["frame_dt"] = s.frame_dt;
  j["dt_jitter"] = s.dt_jitter;
  j["frames"] = s.frames;
  j["camera_height"] = s.camera_height;
  j["reference_focal"] = s.reference_focal;
  j["landmarks_per_frame"] = s.landmarks_per_frame;
  j["descriptor_dim"] = s.descriptor_dim;
  j["field_pan_min_deg"] = s.field_pan_min_deg;
  j["field_pan_max_deg"] = s.field_pan_max_deg;
  j["field_tilt_min_deg"] = s.field_tilt_min_deg;
  j["field_tilt_max_deg"] = s.field_tilt_max_deg;
  j["min_size_px"] = s.min_size_px;
  j["max_size_px"] = s.max_size_px;
  j["min_focal"] = s.min_focal;
  j["max_focal"] = s.max_focal;
  j["landmark_lifetime_frames"] = s.landmark_lifetime_frames;
  j["keypoint_sigma"] = s.keypoint_sigma;
  j["keyframe_keypoint_sigma"] = s.keyframe_keypoint_sigma;
  j["descriptor_sigma"] = s.descriptor_sigma;
  j["drift_rate"] = s.drift_rate;
  j["clutter_per_frame"] = s.clutter_per_frame;
  j["outlier_fraction"] = s.outlier_fraction;
  j["outlier_radius_px"] = s.outlier_radius_px;
  j["detection_sigma"] = s.detection_sigma;
  j["detection_height_rel_sd"] = s.detection_height_rel_sd;
  j["p_miss"] = s.p_miss;
  j["clutter_detections_per_frame"] = s.clutter_detections_per_frame;
  j["loop_trajectory"] = s.loop_trajectory;
  j["actuator"] = {{"pan_sd_deg", s.actuator.pan_sd_deg},
                   {"tilt_sd_deg", s.actuator.tilt_sd_deg},
                   {"zoom_rel_sd", s.actuator.zoom_rel_sd},
                   {"angle_step_deg", s.actuator.angle_step_deg}};
  j["trajectory"] = json::array();
  for (const auto& k : s.trajectory)
    j["trajectory"].push_back({{"frame", k.frame}, {"pan_deg", k.pan_deg}, {"tilt_deg", k.tilt_deg}, {"focal", k.focal}});
  j["keyframes"] = json::array();
  for (const auto& l : s.keyframes)
    j["keyframes"].push_back({{"focal", l.focal}, {"pans_deg", l.pans_deg}, {"tilts_deg", l.tilts_deg}});
  j["events"] = json::array();
  for (const auto& e : s.events)
    j["events"].push_back({{"frame", e.frame},
                           {"pan_min_deg", e.pan_min_deg},
                           {"pan_max_deg", e.pan_max_deg},
                           {"tilt_min_deg", e.tilt_min_deg},
                           {"tilt_max_deg", e.tilt_max_deg}});
  j["targets"] = json::array();
  for (const auto& t : s.targets) {
    json w = json::array();
    for (const auto& p : t.waypoints) w.push_back(vec2_json(p));
    j["targets"].push_back(
        {{"height_m", t.height_m}, {"speed", t.speed}, {"start_frame", t.start_frame}, {"waypoints", w}});
  }
  j["false_alarms"] = json::array();
  for (const auto& f : s.false_alarms)
    j["false_alarms"].push_back({{"world", vec2_json(f.world)}, {"scale", f.scale}, {"rate", f.rate}});
  j["registration_a"] = vec2_json(s.registration_a);
  j["registration_b"] = vec2_json(s.registration_b);
  return j.dump(2);
}

}  // namespace ptz

#pragma once

// Synthetic PTZ camera over a planar world. Background landmarks are rays
// from the optical centre, so every inter-view map is an exact rotation
// homography; targets walk on the ground plane below the camera.

#include "ptz/detection.hpp"
#include "ptz/geometry.hpp"
#include "ptz/random.hpp"
#include "ptz/scene_map.hpp"

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <tuple>
#include <vector>

namespace ptz {

struct CameraKeypose {
  std::int64_t frame = 0;
  double pan_deg = 0.0;
  double tilt_deg = 0.0;
  double focal = 400.0;
};

/// Keyframes at one focal length on a pan x tilt grid.
struct KeyframeLevel {
  double focal = 400.0;
  std::vector<double> pans_deg;
  std::vector<double> tilts_deg;
};

/// Every landmark inside the angular box dies at `frame` and is replaced by
/// an equal number of new ones inside the same box.
struct SceneChangeEvent {
  std::int64_t frame = 0;
  double pan_min_deg = 0.0, pan_max_deg = 0.0;
  double tilt_min_deg = 0.0, tilt_max_deg = 0.0;
};

struct TargetScript {
  double height_m = 1.75;
  double speed = 1.4;  // m/s along the polyline
  std::vector<Vec2> waypoints;
  std::int64_t start_frame = 0;
};

/// A fixed spot where the detector fires at the wrong scale (a pole, a sign).
struct FalseAlarmSource {
  Vec2 world = Vec2::Zero();
  double scale = 2.5;  // box height relative to a person standing there
  double rate = 0.5;   // firing probability per frame while in view
};

/// Defaults give a mean keyframe-revisit discrepancy of about 2 px at f = 400
/// and 9 px at f = 1600 over a 640x480 grid.
struct ActuatorNoise {
  double pan_sd_deg = 0.19;
  double tilt_sd_deg = 0.19;
  double zoom_rel_sd = 0.014;    // per octave of zoom above the widest setting
  double angle_step_deg = 0.05;  // motor quantization, 0 disables
};

struct Scenario {
  std::string name = "unnamed";
  std::uint64_t seed = 1;
  int width = 640;
  int height = 480;
  double frame_dt = 0.08;
  double dt_jitter = 0.0;  // relative, uniform
  std::int64_t frames = 1000;
  double camera_height = 8.0;
  double reference_focal = 400.0;

  // Landmark field.
  double landmarks_per_frame = 300.0;
  int descriptor_dim = 32;
  double field_pan_min_deg = -60.0, field_pan_max_deg = 60.0;
  double field_tilt_min_deg = -45.0, field_tilt_max_deg = 10.0;
  double min_size_px = 2.0, max_size_px = 8.0;
  double min_focal = 400.0, max_focal = 1600.0;
  double landmark_lifetime_frames = 0.0;  // mean, 0 = immortal

  // Observation noise and scene dynamics.
  double keypoint_sigma = 1.0;
  double keyframe_keypoint_sigma = 1.0;
  double descriptor_sigma = 0.15;
  double drift_rate = 0.0;  // expected descriptor displacement per frame
  double clutter_per_frame = 0.0;
  double outlier_fraction = 0.0;  // share of landmark observations displaced at random
  double outlier_radius_px = 0.0;  // displacement bound; 0 = anywhere in the frame
  ActuatorNoise actuator;

  // Detector model.
  double detection_sigma = 2.0;
  double detection_height_rel_sd = 0.05;
  double p_miss = 0.05;
  double clutter_detections_per_frame = 0.0;
  std::vector<FalseAlarmSource> false_alarms;

  std::vector<CameraKeypose> trajectory;
  bool loop_trajectory = true;
  std::vector<KeyframeLevel> keyframes;
  std::vector<SceneChangeEvent> events;
  std::vector<TargetScript> targets;

  // Two ground points at a known distance used for metric registration.
  Vec2 registration_a = Vec2(0.0, 15.0);
  Vec2 registration_b = Vec2(5.0, 15.0);
};

/// Throws ConfigError on malformed or out-of-range input.
Scenario load_scenario(const std::string& path);
Scenario scenario_from_json_text(const std::string& text);
std::string scenario_to_json_text(const Scenario& s);

struct TargetTruth {
  int id = 0;
  Vec2 world = Vec2::Zero();  // simulator ground coordinates (m)
  Vec2 velocity = Vec2::Zero();
  Vec2 foot = Vec2::Zero();
  Vec2 head = Vec2::Zero();
  bool in_view = false;
};

struct FrameTruth {
  CameraPose pose;
  Mat3 H_ref = Mat3::Identity();  // frame pixels -> reference pixels
  Mat3 G = Mat3::Identity();      // simulator ground (m) -> frame pixels
  std::vector<TargetTruth> targets;
};

struct FrameData {
  std::int64_t index = 0;
  double timestamp = 0.0;
  ActuatorReading reading;
  std::vector<Observation> obs;
  std::vector<std::int64_t> obs_ray;  // -1 for clutter
  std::vector<char> obs_displaced;
  std::vector<Detection> dets;
  std::vector<int> det_target;  // -1 for false alarms
  FrameTruth truth;
};

struct KeyframeData {
  CameraPose pose;
  ActuatorReading reading;
  std::vector<Observation> obs;
  std::vector<std::int64_t> obs_ray;
};

/// Inputs for world-plane registration, expressed in the reference view.
struct RegistrationInputs {
  Vec3 vp_x = Vec3::Zero();  // vanishing point of the ground X axis
  Vec3 vp_y = Vec3::Zero();  // vanishing point of the ground Y axis
  Vec2 p1 = Vec2::Zero();
  Vec2 p2 = Vec2::Zero();
  double L = 0.0;
};

class Simulator {
 public:
  explicit Simulator(Scenario scenario);

  const Scenario& scenario() const { return sc_; }
  Intrinsics intrinsics(double focal) const;
  Intrinsics reference_intrinsics() const { return intrinsics(sc_.reference_focal); }

  CameraPose pose_at(std::int64_t frame) const;
  std::vector<CameraPose> keyframe_poses() const;

  /// Simulator ground (X, Y) -> frame pixels.
  Mat3 ground_to_frame(const CameraPose& pose) const;
  /// Frame pixels -> reference pixels.
  Mat3 frame_to_reference(const CameraPose& pose) const;
  Vec2 project_point(const CameraPose& pose, const Vec3& p) const;

  RegistrationInputs registration_inputs() const;
  /// Maps simulator ground coordinates into the registered world frame
  /// (registration_a at the origin, registration_b on +X).
  Vec2 to_registered(const Vec2& ground) const;

  ActuatorReading actuator_reading(const CameraPose& pose, Rng& rng) const;

  /// Renders a keyframe at frame 0 conditions (no drift, no clutter).
  KeyframeData render_keyframe(const CameraPose& pose, std::uint64_t tag);

  /// Frames must be requested in non-decreasing order.
  FrameData render_frame(std::int64_t t);

  /// Landmark observations only, at an arbitrary pose and time.
  void render_landmarks(const CameraPose& pose, std::int64_t t, double keypoint_sigma, Rng& rng,
                        std::vector<Observation>& obs, std::vector<std::int64_t>& ray_ids);

  std::vector<TargetTruth> targets_at(std::int64_t t, const CameraPose& pose) const;

  std::size_t ray_count() const { return rays_.size(); }
  std::size_t alive_rays(std::int64_t t) const;

 private:
  struct Ray {
    std::int64_t id = 0;
    Vec3 dir = Vec3::UnitZ();
    double size = 0.0;  // angular size, radians
    Descriptor base;
    std::int64_t born = 0;
    std::int64_t died = std::numeric_limits<std::int64_t>::max();
    std::vector<float> drift;
    std::int64_t drift_t = 0;
  };
  using BinKey = std::tuple<int, int, int>;

  void build_field();
  Ray make_ray(Rng& rng, double pan_min, double pan_max, double tilt_min, double tilt_max,
               std::int64_t born);
  void spawn_with_successors(Ray ray, Rng& rng, std::vector<Ray>& out);
  void index_rays();
  int level_of(double size) const;
  const std::vector<float>& drift_at(Ray& ray, std::int64_t t);

  Scenario sc_;
  double size_min_ = 0.0, size_max_ = 0.0;
  double density_ = 0.0;  // landmarks per steradian over the full size range
  std::vector<Ray> rays_;
  std::map<BinKey, std::vector<std::size_t>> bins_;
  std::int64_t last_frame_ = -1;
};

inline constexpr double kDegToRad = 3.14159265358979323846 / 180.0;

}  // namespace ptz

#pragma once

// On-line camera pose estimation against the scene map and map updating:
// RANSAC homography to the nearest view, per-landmark EKF refinement and the
// landmark birth-death process.

#include "ptz/geometry.hpp"
#include "ptz/random.hpp"
#include "ptz/scene_map.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <vector>

namespace ptz {

/// Covariance of the frame-domain residual of one matched landmark, in
/// pixels^2, kept as its three addends.
struct MeasurementNoise {
  Mat2 spatial = Mat2::Zero();   // homography uncertainty
  Mat2 keypoint = Mat2::Zero();  // current-frame keypoint localization
  Mat2 landmark = Mat2::Zero();  // view-map landmark position
  Mat2 total() const { return spatial + keypoint + landmark; }
  /// Homogeneous 3x3 form in the w = 1 chart; its principal minor is total().
  Mat3 homogeneous() const;
};

struct FrameHomography {
  Homography H;  // frame pixels -> view pixels, with covariance
  std::vector<LandmarkMatch> inliers;
  std::vector<std::size_t> outliers;  // indices of matched observations rejected by RANSAC
  int ransac_iterations = 0;
};

/// RANSAC over tentative matches, DLT refit on the inliers and closed-form
/// covariance. Throws InsufficientInliers.
FrameHomography estimate_frame_homography(std::span<const LandmarkMatch> matches, const RansacParams& params,
                                          Rng& rng, double keypoint_sigma = 1.0);

/// Covariance of v - pi(H^-1 u) for the observation v matched to landmark u.
/// H carries its 9x9 covariance; Lambda' is the observation covariance
/// (keypoint_sigma^2 I when absent).
MeasurementNoise measurement_covariance(const PointMatch& match, const Homography& H, const Landmark& lm,
                                        double keypoint_sigma = 1.0);

enum class GainForm {
  AsPrinted,  // K = P Ht^-1 [Ht^-1 P Ht^-T + Lambda]^-1
  Textbook,   // K = P Ht^-T [Ht^-1 P Ht^-T + Lambda]^-1
};

/// One EKF step in the view-map frame. The observation is carried into the
/// view by H, the residual is mapped back to frame pixels by Ht^-1 (Ht is the
/// Jacobian of H at the observation) and the landmark moves by K times it.
/// Throws SingularInnovation.
void ekf_update_landmark(Landmark& lm, const Observation& obs, const Homography& H, const MeasurementNoise& noise,
                         GainForm form = GainForm::AsPrinted);

/// area(A) / area(B) where A bounds the inlier frame positions and B is A
/// grown to include the candidate. Throws NoInliers.
double proximity_check(const Vec2& candidate, std::span<const LandmarkMatch> inliers);

struct LifecycleParams {
  int birth_persistence = 20;
  int death_threshold = 20;
  double proximity_threshold = 0.5;
  bool use_proximity = true;
  std::size_t protected_originals = 50;
  std::size_t max_landmarks_per_view = 5000;
  double candidate_radius_px = 3.0;  // view pixels
  double exclusion_radius_px = 3.0;  // no candidates this close to a live landmark
  double birth_inflation = 1.0;      // px^2 added to the founding covariance
  double descriptor_alpha = 0.1;
};

/// A recurring unmatched observation waiting to become a landmark.
struct BirthCandidate {
  Vec2 pos = Vec2::Zero();  // view pixels, running mean
  Descriptor desc;
  int streak = 0;
  std::int64_t last_frame = -1;
};

/// Per-view candidate lists.
struct BirthTracker {
  std::map<std::int32_t, std::vector<BirthCandidate>> views;
};

struct LifecycleCounts {
  int births = 0;
  int deaths = 0;
  int rejected_by_proximity = 0;
};

/// Frame inputs to the birth-death step.
struct LifecycleFrame {
  std::int64_t frame = 0;
  std::span<const Observation> obs;
  std::span<const LandmarkMatch> inliers;
  std::span<const std::size_t> sampled;  // landmark indices offered to the matcher
  int width = 640;
  int height = 480;
  double keypoint_sigma = 1.0;
};

/// Matched landmarks get their counters reset and descriptors averaged;
/// sampled, in-view, unmatched ones age and die past the threshold; persistent
/// candidates that pass the proximity check are born at H-mapped positions.
LifecycleCounts lifecycle_step(ViewMap& view, const Homography& H, const LifecycleFrame& in, BirthTracker& births,
                               std::int64_t& next_landmark_id, const LifecycleParams& params);

/// Rotation-defect tolerance for frames registered by DLT from noisy
/// keypoints; 1e-2 rejects a sizeable share of good frames at 1 px noise.
inline constexpr double kFrameRotationTolerance = 5e-2;

struct CalibrateConfig {
  MatchParams match;
  RansacParams ransac;
  ActuatorWeights weights;
  double keypoint_sigma = 1.0;
  bool map_updating = true;
  GainForm gain = GainForm::AsPrinted;
  double rotation_tolerance = kFrameRotationTolerance;
  LifecycleParams lifecycle;
  int width = 640;
  int height = 480;
};

struct CalibrationResult {
  std::int64_t frame = 0;
  bool stale = false;  // pose and G repeat the last good frame
  std::int32_t view = -1;
  Homography H;        // frame -> view
  Homography H_total;  // frame -> reference
  Intrinsics K;
  CameraPose pose;
  std::optional<Mat3> G;  // world metres -> frame pixels, oriented (see world_to_frame_homography)
  std::size_t tentative = 0;
  std::vector<LandmarkMatch> inliers;
  std::vector<std::size_t> outliers;
  LifecycleCounts lifecycle;
  double seconds = 0.0;
  // Stage split of `seconds`.
  double t_match = 0.0, t_homography = 0.0, t_update = 0.0;
};

/// Mutable state carried across frames by the calibration thread.
struct CalibrationState {
  BirthTracker births;
  std::optional<CalibrationResult> last_good;
  std::vector<std::int32_t> dirty_views;  // views touched by the latest frame
};

/// G = (H_W H_rk H)^-1, Frobenius-normalized with its sign fixed so that the
/// ground seen at the bottom centre of the frame has positive homogeneous
/// scale; points behind the camera then come out negative.
Mat3 world_to_frame_homography(const Homography& H_W, const Homography& H_total, int width, int height);

/// Pose from the current frame and the map only. When the frame cannot be
/// registered the result repeats the last good pose and G flagged stale
/// (before any success: the actuator pose and no G).
CalibrationResult calibrate_frame(std::int64_t frame, std::span<const Observation> obs, const ActuatorReading& reading,
                                  SceneMap& map, CalibrationState& state, const CalibrateConfig& config, Rng& rng);

}  // namespace ptz

#pragma once

// Multi-target tracking on the ground plane: constant-velocity EKF per target,
// projective measurement through G, Cheap-JPDAF association. An image-plane
// mode keeps the state in pixels for comparison.

#include "ptz/detection.hpp"
#include "ptz/geometry.hpp"
#include "ptz/worldproj.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace ptz {

using Mat24 = Eigen::Matrix<double, 2, 4>;

enum class TrackStatus { Tentative, Confirmed, Lost };
const char* to_string(TrackStatus s);

struct TargetState {
  Vec4 s = Vec4::Zero();  // X, Y, Xdot, Ydot (metres, m/s); pixels in image mode
  Mat4 P = Mat4::Identity();
  int id = 0;
  TrackStatus status = TrackStatus::Tentative;
  int age = 0;
  int hits = 0;
  int misses = 0;       // consecutive
  std::uint32_t recent = 0;  // hit bits of the latest frames, newest in bit 0
  double scale = 0.0;   // box height in pixels, image mode
  int shadowed = 0;     // consecutive frames on top of an older track
};

struct MotionModel {
  double sigma_a = 0.5;  // white acceleration, per axis

  Mat4 A(double dt) const;
  Mat4 Q(double dt) const;
};

/// s <- A s, P <- A P A^T + Q. Throws ConfigError when dt <= 0.
void predict(TargetState& track, double dt, const MotionModel& model);

struct TrackProjection {
  Vec2 p = Vec2::Zero();   // predicted foot, pixels
  Mat2 S = Mat2::Identity();
  Mat24 Gt = Mat24::Zero();  // measurement Jacobian
};

/// Prediction through the projective map G with the 2x4 Jacobian
/// [dG(X)/dX | 0]. Throws BehindCamera.
TrackProjection project_track(const TargetState& track, const Mat3& G, const Mat2& V);
/// Image mode: identity measurement of the position.
TrackProjection project_track_image(const TargetState& track, const Mat2& V);

struct Association {
  // beta[i][j]: weight of detection j for track i; beta0[i] the no-detection mass.
  std::vector<std::vector<double>> beta;
  std::vector<double> beta0;
  std::vector<char> detection_gated;  // detection fell in some track's gate
};

/// Cheap-JPDAF weights beta_ij = g_ij / (sum_j g_ij + sum_i g_ij - g_ij + B)
/// over pairs with Mahalanobis distance^2 <= gate, where g_ij is the Gaussian
/// likelihood. `allowed`, when given, masks pairs (row-major tracks x detections).
Association associate_cheap_jpdaf(std::span<const TrackProjection> tracks, std::span<const Detection> dets,
                                  double gate, double B, const std::vector<char>* allowed = nullptr);

/// Greedy nearest-neighbour assignment in the same gates, as 0/1 weights.
Association associate_nearest(std::span<const TrackProjection> tracks, std::span<const Detection> dets, double gate,
                              const std::vector<char>* allowed = nullptr);

/// Plain gated EKF update with the measurement z. Joseph form. Throws SingularS.
void ekf_update(TargetState& track, const TrackProjection& proj, const Vec2& z, const Mat2& V);

/// Probabilistic-data-association update with weights beta over detections
/// and beta0 for none. Reduces to ekf_update for a single detection with
/// beta = 1. Throws SingularS.
void update(TargetState& track, const TrackProjection& proj, std::span<const double> beta, double beta0,
            std::span<const Detection> dets, const Mat2& V);

enum class TrackingMode { World, Image };
enum class AssociationMethod { CheapJpdaf, NearestNeighbor };

struct TrackerConfig {
  TrackingMode mode = TrackingMode::World;
  AssociationMethod association = AssociationMethod::CheapJpdaf;
  MotionModel motion{0.5};
  double sigma_a_px = 40.0;  // image mode, px/s^2
  Mat2 V = 4.0 * Mat2::Identity();
  double gate = 9.0;            // Mahalanobis distance^2
  double clutter_bias = 1e-3;   // B relative to the highest track likelihood peak
  int confirm_hits = 3;
  int confirm_window = 5;
  int max_misses = 10;
  double birth_gate = 36.0;  // no birth within this d^2 of a predicted track
  double merge_gate = 1.0;   // d^2 between two tracks counted as one target
  int merge_frames = 10;     // the younger of such a pair is dropped after this many frames
  double stale_inflation = 4.0;  // V multiplier while the pose is stale
  double scale_gate = 0.15;      // relative box-height tolerance
  double init_speed_sd = 2.0;    // m/s
  double init_speed_sd_px = 100.0;
  double mu = 1.0;  // homology cross-ratio for the target height
  HorizonLine horizon = HorizonLine::Pullback;
};

struct TrackerInput {
  std::int64_t frame = 0;
  double timestamp = 0.0;
  std::optional<Mat3> G;  // world -> frame, oriented
  Intrinsics K;
  bool stale = false;
  std::vector<Detection> dets;
};

/// One confirmed track in one frame.
struct TrackRecord {
  std::int64_t frame = 0;
  int id = 0;
  double X = 0.0, Y = 0.0;  // world metres (NaN in image mode)
  double x = 0.0, y = 0.0;  // foot, frame pixels
  double height_px = 0.0;
  TrackStatus status = TrackStatus::Confirmed;
};

class Tracker {
 public:
  explicit Tracker(TrackerConfig config);

  /// Predict, associate, update and manage; returns the confirmed tracks.
  std::vector<TrackRecord> step(const TrackerInput& in);

  const std::vector<TargetState>& tracks() const { return tracks_; }
  const TrackerConfig& config() const { return cfg_; }

 private:
  std::vector<TrackRecord> step_world(const TrackerInput& in, double dt);
  std::vector<TrackRecord> step_image(const TrackerInput& in, double dt);
  Association associate(std::span<const TrackProjection> proj, std::span<const Detection> dets,
                        const std::vector<char>* allowed) const;
  void manage(std::vector<char>& updated);
  void prune_duplicates(const std::vector<Vec2>& p, const std::vector<TrackProjection>& proj,
                        const std::vector<char>& valid);
  bool near_track(const Vec2& z, const std::vector<TrackProjection>& proj, const std::vector<char>& valid) const;

  TrackerConfig cfg_;
  std::vector<TargetState> tracks_;
  int next_id_ = 1;
  std::optional<double> last_time_;
};

}  // namespace ptz

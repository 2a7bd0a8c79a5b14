#pragma once

// Off-line scene map initialization: rotation-only bundle adjustment over a
// set of keyframes, and registration of the reference mosaic to the ground
// plane.

#include "ptz/geometry.hpp"
#include "ptz/random.hpp"
#include "ptz/scene_map.hpp"

#include <vector>

namespace ptz {

struct KeyframeInput {
  ActuatorReading reading;
  std::vector<Observation> obs;
};

/// Correspondences between two keyframes: src in view a, dst in view b.
struct CrossViewMatches {
  int a = 0;
  int b = 0;
  std::vector<PointMatch> matches;
};

struct BundleProblem {
  std::vector<KeyframeInput> keyframes;
  std::vector<CrossViewMatches> matches;
  Vec2 pp = Vec2::Zero();
  int reference = 0;
  double base_focal = 400.0;  // focal at zoom 1; readings are converted with f = base_focal * zoom
  // Optional starting point overriding the actuator readings.
  std::vector<Mat3> initial_R;
  std::vector<double> initial_f;
};

struct BundleOptions {
  int max_iterations = 200;
  double relative_tolerance = 1e-10;
};

struct BundleResult {
  std::vector<Mat3> R;  // world -> camera, R[reference] = I
  std::vector<double> f;
  double initial_rms = 0.0;
  double rms = 0.0;  // symmetric transfer error, pixels
  std::size_t residual_terms = 0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> cost_history;  // accepted iterations only
};

/// Starting rotation and focal of every keyframe, gauge-fixed to the reference.
void initial_guess(const BundleProblem& problem, std::vector<Mat3>& R, std::vector<double>& f);

/// Levenberg-Marquardt over per-view rotation (3 dof, left perturbation) and
/// log focal, minimizing the symmetric transfer error of all matches.
/// Throws DisconnectedGraph. A run that hits max_iterations returns the best
/// estimate with converged = false.
BundleResult bundle_adjust(const BundleProblem& problem, const BundleOptions& options = {});

/// RMS symmetric transfer error of the problem's matches under (R, f).
double transfer_rms(const BundleProblem& problem, const std::vector<Mat3>& R, const std::vector<double>& f);

struct KeyframeMatchOptions {
  int width = 640;
  int height = 480;
  double min_overlap = 0.15;     // share of view b predicted to fall inside view a
  double max_focal_ratio = 3.0;  // beyond this keypoint scales rarely overlap
  MatchParams match;
  RansacParams ransac{3.0, 1000, 0.999, 20};
};

/// Descriptor matching plus RANSAC between keyframe pairs whose predicted
/// footprints overlap.
std::vector<CrossViewMatches> match_keyframes(const BundleProblem& problem,
                                              const KeyframeMatchOptions& options, Rng& rng);

/// Scene map with one view per keyframe. Landmarks are the keyframe
/// observations with covariance sigma^2 I.
SceneMap build_scene_map(const BundleProblem& problem, const BundleResult& result,
                         double landmark_sigma = 1.0);

struct WorldRegistration {
  Homography H_p;  // reference pixels -> rectified plane
  Homography H_s;  // rectified plane -> world metres (similarity)
  Homography H_W;  // H_s * H_p
  double L = 0.0;
  Vec2 p1 = Vec2::Zero();
  Vec2 p2 = Vec2::Zero();
};

/// Metric rectification of the ground plane seen in the reference view from
/// the vanishing points of two orthogonal ground directions. The vanishing
/// line is vp1 x vp2. World Y points away from the camera, Z up, X = Y x Z.
/// Throws DegenerateVanishingGeometry.
Homography rectify_from_vanishing(const Vec3& vp1, const Vec3& vp2, const Intrinsics& K_r);

/// Similarity taking H_p p1 to the origin and H_p p2 to (L, 0). Throws CoincidentPoints.
Homography scale_from_known_distance(const Homography& H_p, const Vec2& p1, const Vec2& p2, double L);

WorldRegistration register_world(const Vec3& vp1, const Vec3& vp2, const Intrinsics& K_r, const Vec2& p1,
                                 const Vec2& p2, double L);

}  // namespace ptz

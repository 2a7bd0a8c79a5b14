#pragma once

// Projective-geometry kernel: homography algebra, DLT estimation with
// first-order covariance, and the rotation/intrinsics composition used by a
// camera that rotates about its optical centre and zooms.

#include <Eigen/Core>
#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace ptz {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Vec9 = Eigen::Matrix<double, 9, 1>;
using Mat9 = Eigen::Matrix<double, 9, 9>;

/// Row-major stacking h = [h00 h01 h02 h10 ... h22].
Vec9 stack(const Mat3& h);
Mat3 unstack(const Vec9& v);

/// Frobenius norm 1; sign chosen so h(2,2) > 0 (falling back to the last
/// non-negligible entry when h(2,2) vanishes).
Mat3 normalize_homography(const Mat3& h);

/// A 3x3 projective map with optional covariance over its stacked entries.
struct Homography {
  Mat3 h = Mat3::Identity() / std::sqrt(3.0);
  std::optional<Mat9> cov;

  Homography() = default;

  /// Normalizes `m`; throws DegenerateConfiguration when it is singular.
  static Homography from(const Mat3& m);
  static Homography identity() { return from(Mat3::Identity()); }

  /// Perspective-divided image of `p`. Throws AtInfinity.
  Vec2 apply(const Vec2& p) const;
  Homography inverse() const;

  /// Composition (*this) o rhs. Covariance is not propagated.
  Homography operator*(const Homography& rhs) const;
};

/// Zero skew, unit aspect ratio, fixed principal point.
struct Intrinsics {
  double f = 1.0;
  Vec2 pp = Vec2::Zero();

  Mat3 K() const;
  Mat3 K_inv() const;
};

/// Pan and tilt in radians relative to the reference keyframe; focal in pixels.
struct CameraPose {
  double pan = 0.0;
  double tilt = 0.0;
  double focal = 1.0;
};

struct PointMatch {
  Vec2 src = Vec2::Zero();
  Vec2 dst = Vec2::Zero();
  std::optional<Mat2> src_cov;
  std::optional<Mat2> dst_cov;
};

/// Hartley-normalized DLT for dst ~ H src.
Homography estimate_homography_dlt(std::span<const PointMatch> matches);

/// Minimal-sample DLT without the n>=4 collinearity diagnostics used by RANSAC.
/// Returns false when the sample is degenerate.
bool estimate_homography_minimal(std::span<const PointMatch> matches, Mat3& out);

/// First-order covariance (9x9) of the stacked, Frobenius-normalized entries of
/// `h` as estimated by DLT from `matches`. Matches without covariance use
/// default_sigma^2 * I.
Mat9 homography_covariance(const Homography& h, std::span<const PointMatch> matches,
                           double default_sigma = 1.0);

/// Jacobian of x -> pi(h * [x; 1]) at p.
Mat2 linearize_homography_at(const Mat3& h, const Vec2& p);

/// One-way transfer error |pi(h src) - dst|; +inf when src maps to infinity.
double transfer_error(const Mat3& h, const PointMatch& m);

class Rng;

struct RansacParams {
  double threshold = 3.0;  // one-way transfer error, pixels
  int max_iterations = 1000;
  double confidence = 0.999;
  std::size_t min_inliers = 8;
};

struct RansacResult {
  bool ok = false;
  Mat3 h = Mat3::Identity();
  std::vector<std::size_t> inliers;  // ascending; every one within threshold under h
  int iterations = 0;
};

/// Four-point RANSAC with adaptive termination, then DLT refits on the
/// consensus set until it stops growing.
RansacResult ransac_homography(std::span<const PointMatch> matches, const RansacParams& params,
                               Rng& rng);

/// World-to-camera rotation R = R_tilt(tilt) * R_pan(pan). Camera axes are
/// x right, y down, z forward; positive pan turns right, positive tilt up.
Mat3 rotation_from_pan_tilt(double pan, double tilt);

/// Inverse of rotation_from_pan_tilt for a pure pan-tilt rotation.
void pan_tilt_from_rotation(const Mat3& R, double& pan, double& tilt);

/// Nearest rotation in the Frobenius sense (orthogonal Procrustes).
Mat3 nearest_rotation(const Mat3& m);

/// ||M M^T - I||_F after scaling M to unit determinant magnitude.
double orthonormality_defect(const Mat3& m);

/// K_r * R_r * R_k^-1 * K_k^-1: maps view k pixels into reference pixels.
Homography compose_rotation_homography(const Intrinsics& K_r, const Mat3& R_r,
                                       const Mat3& R_k, const Intrinsics& K_k);

inline constexpr double kRotationDefectTolerance = 1e-2;

/// Pan/tilt of the view whose pixels `h_total` maps into the reference frame.
/// Throws NotARotation when K_r^-1 h K_k is not close to a rotation.
CameraPose decompose_to_pose(const Homography& h_total, const Intrinsics& K_r,
                             const Intrinsics& K_k,
                             double tolerance = kRotationDefectTolerance);

/// Focal length of the view mapped into the reference by `h`, assuming the
/// principal point of K_r. Throws NotARotation.
Intrinsics intrinsics_from_homography(const Homography& h, const Intrinsics& K_r,
                                      double tolerance = kRotationDefectTolerance);

}  // namespace ptz

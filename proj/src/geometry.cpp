#include "ptz/geometry.hpp"

#include "ptz/error.hpp"
#include "ptz/random.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace ptz {

namespace {

struct Normalizer {
  Mat3 T = Mat3::Identity();
  double scale = 1.0;
};

template <typename Getter>
Normalizer hartley_normalizer(std::span<const PointMatch> matches, Getter get) {
  Vec2 centroid = Vec2::Zero();
  for (const auto& m : matches) centroid += get(m);
  centroid /= static_cast<double>(matches.size());
  double mean_dist = 0.0;
  for (const auto& m : matches) mean_dist += (get(m) - centroid).norm();
  mean_dist /= static_cast<double>(matches.size());
  if (!(mean_dist > 0.0) || !std::isfinite(mean_dist)) {
    throw Error(ErrorCode::DegenerateConfiguration, "coincident points");
  }
  Normalizer n;
  n.scale = std::sqrt(2.0) / mean_dist;
  n.T << n.scale, 0, -n.scale * centroid.x(),
         0, n.scale, -n.scale * centroid.y(),
         0, 0, 1;
  return n;
}

inline Vec2 apply_affine(const Mat3& T, const Vec2& p) {
  return Vec2(T(0, 0) * p.x() + T(0, 2), T(1, 1) * p.y() + T(1, 2));
}

inline void dlt_rows(const Vec2& s, const Vec2& d, Vec9& r0, Vec9& r1) {
  r0 << 0, 0, 0, -s.x(), -s.y(), -1, d.y() * s.x(), d.y() * s.y(), d.y();
  r1 << s.x(), s.y(), 1, 0, 0, 0, -d.x() * s.x(), -d.x() * s.y(), -d.x();
}

bool collinear(const Vec2& a, const Vec2& b, const Vec2& c, double tol) {
  const Vec2 u = b - a;
  const Vec2 v = c - a;
  const double area = std::abs(u.x() * v.y() - u.y() * v.x());
  const double scale = std::max({u.squaredNorm(), v.squaredNorm(), 1e-300});
  return area <= tol * scale;
}

bool any_triple_collinear(const Vec2 pts[4], double tol) {
  return collinear(pts[0], pts[1], pts[2], tol) || collinear(pts[0], pts[1], pts[3], tol) ||
         collinear(pts[0], pts[2], pts[3], tol) || collinear(pts[1], pts[2], pts[3], tol);
}

double singular_ratio(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m);
  const auto s = svd.singularValues();
  return s(0) > 0.0 ? s(2) / s(0) : 0.0;
}

}  // namespace

Vec9 stack(const Mat3& h) {
  Vec9 v;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) v(3 * i + j) = h(i, j);
  return v;
}

Mat3 unstack(const Vec9& v) {
  Mat3 h;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) h(i, j) = v(3 * i + j);
  return h;
}

Mat3 normalize_homography(const Mat3& h) {
  const double n = h.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw Error(ErrorCode::DegenerateConfiguration, "zero or non-finite homography");
  }
  Mat3 out = h / n;
  double pivot = out(2, 2);
  if (std::abs(pivot) < 1e-12) {
    for (int k = 8; k >= 0; --k) {
      const double v = out(k / 3, k % 3);
      if (std::abs(v) >= 1e-12) {
        pivot = v;
        break;
      }
    }
  }
  if (pivot < 0.0) out = -out;
  return out;
}

Homography Homography::from(const Mat3& m) {
  Homography out;
  out.h = normalize_homography(m);
  if (singular_ratio(out.h) < 1e-13) {
    throw Error(ErrorCode::DegenerateConfiguration, "singular homography");
  }
  return out;
}

Vec2 Homography::apply(const Vec2& p) const {
  const Vec3 q = h * p.homogeneous();
  if (std::abs(q.z()) <= 1e-14 * h.row(2).norm() * std::max(1.0, p.norm())) {
    throw Error(ErrorCode::AtInfinity, "point maps to infinity");
  }
  return q.hnormalized();
}

Homography Homography::inverse() const { return from(h.inverse()); }

Homography Homography::operator*(const Homography& rhs) const { return from(h * rhs.h); }

Mat3 Intrinsics::K() const {
  Mat3 k;
  k << f, 0, pp.x(), 0, f, pp.y(), 0, 0, 1;
  return k;
}

Mat3 Intrinsics::K_inv() const {
  Mat3 k;
  k << 1.0 / f, 0, -pp.x() / f, 0, 1.0 / f, -pp.y() / f, 0, 0, 1;
  return k;
}

bool estimate_homography_minimal(std::span<const PointMatch> matches, Mat3& out) {
  if (matches.size() < 4) return false;
  Vec2 src[4], dst[4];
  for (int i = 0; i < 4; ++i) {
    src[i] = matches[i].src;
    dst[i] = matches[i].dst;
  }
  if (matches.size() == 4 && (any_triple_collinear(src, 1e-6) || any_triple_collinear(dst, 1e-6))) {
    return false;
  }
  Normalizer n1, n2;
  try {
    n1 = hartley_normalizer(matches, [](const PointMatch& m) { return m.src; });
    n2 = hartley_normalizer(matches, [](const PointMatch& m) { return m.dst; });
  } catch (const Error&) {
    return false;
  }
  Mat9 ata = Mat9::Zero();
  Vec9 r0, r1;
  for (const auto& m : matches) {
    dlt_rows(apply_affine(n1.T, m.src), apply_affine(n2.T, m.dst), r0, r1);
    ata.selfadjointView<Eigen::Lower>().rankUpdate(r0);
    ata.selfadjointView<Eigen::Lower>().rankUpdate(r1);
  }
  Eigen::SelfAdjointEigenSolver<Mat9> es;
  es.compute(ata);  // reads the lower triangle only
  const auto& ev = es.eigenvalues();
  if (!(ev(1) > 1e-10 * ev(8))) return false;
  const Mat3 hn = unstack(es.eigenvectors().col(0));
  if (singular_ratio(hn) < 1e-8) return false;
  out = n2.T.inverse() * hn * n1.T;
  return out.allFinite();
}

Homography estimate_homography_dlt(std::span<const PointMatch> matches) {
  if (matches.size() < 4) {
    throw Error(ErrorCode::TooFewMatches, std::to_string(matches.size()) + " matches");
  }
  for (const auto& m : matches) {
    if (!m.src.allFinite() || !m.dst.allFinite()) {
      throw Error(ErrorCode::DegenerateConfiguration, "non-finite coordinates");
    }
  }
  if (matches.size() == 4) {
    Vec2 src[4], dst[4];
    for (int i = 0; i < 4; ++i) {
      src[i] = matches[i].src;
      dst[i] = matches[i].dst;
    }
    if (any_triple_collinear(src, 1e-9) || any_triple_collinear(dst, 1e-9)) {
      throw Error(ErrorCode::DegenerateConfiguration, "three of four points collinear");
    }
  }
  const auto n1 = hartley_normalizer(matches, [](const PointMatch& m) { return m.src; });
  const auto n2 = hartley_normalizer(matches, [](const PointMatch& m) { return m.dst; });

  Mat9 ata = Mat9::Zero();
  Vec9 r0, r1;
  for (const auto& m : matches) {
    dlt_rows(apply_affine(n1.T, m.src), apply_affine(n2.T, m.dst), r0, r1);
    ata.noalias() += r0 * r0.transpose();
    ata.noalias() += r1 * r1.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat9> es(ata);
  const auto& ev = es.eigenvalues();
  if (!(ev(1) > 1e-10 * ev(8))) {
    throw Error(ErrorCode::DegenerateConfiguration, "rank-deficient design matrix");
  }
  const Mat3 hn = unstack(es.eigenvectors().col(0));
  if (singular_ratio(hn) < 1e-8) {
    throw Error(ErrorCode::DegenerateConfiguration, "estimated homography is singular");
  }
  return Homography::from(n2.T.inverse() * hn * n1.T);
}

Mat9 homography_covariance(const Homography& H, std::span<const PointMatch> matches,
                           double default_sigma) {
  if (matches.size() < 4) {
    throw Error(ErrorCode::TooFewMatches, std::to_string(matches.size()) + " matches");
  }
  const auto n1 = hartley_normalizer(matches, [](const PointMatch& m) { return m.src; });
  const auto n2 = hartley_normalizer(matches, [](const PointMatch& m) { return m.dst; });
  const Mat2 default_cov = default_sigma * default_sigma * Mat2::Identity();

  Mat3 hn_mat = n2.T * H.h * n1.T.inverse();
  Vec9 hn = stack(hn_mat);
  hn /= hn.norm();

  Mat9 ata = Mat9::Zero();
  Mat9 middle = Mat9::Zero();
  Eigen::Matrix<double, 9, 2> a;
  Eigen::Matrix<double, 2, 4> C;
  Eigen::Matrix4d lambda = Eigen::Matrix4d::Zero();
  Vec9 r0, r1;
  const double s1sq = n1.scale * n1.scale;
  const double s2sq = n2.scale * n2.scale;
  for (const auto& m : matches) {
    const Vec2 s = apply_affine(n1.T, m.src);
    const Vec2 d = apply_affine(n2.T, m.dst);
    dlt_rows(s, d, r0, r1);
    a.col(0) = r0;
    a.col(1) = r1;
    const double w = hn(6) * s.x() + hn(7) * s.y() + hn(8);
    C << -hn(3) + d.y() * hn(6), -hn(4) + d.y() * hn(7), 0, w,
          hn(0) - d.x() * hn(6), hn(1) - d.x() * hn(7), -w, 0;
    lambda.topLeftCorner<2, 2>() = s1sq * m.src_cov.value_or(default_cov);
    lambda.bottomRightCorner<2, 2>() = s2sq * m.dst_cov.value_or(default_cov);
    const Mat2 e = C * lambda * C.transpose();
    ata.noalias() += a * a.transpose();
    middle.noalias() += a * e * a.transpose();
  }

  Eigen::SelfAdjointEigenSolver<Mat9> es(ata);
  const auto& ev = es.eigenvalues();
  if (!(ev(1) > 1e-12 * ev(8))) {
    throw Error(ErrorCode::SingularNormalMatrix, "DLT normal matrix is singular");
  }
  Mat9 pinv = Mat9::Zero();
  for (int k = 1; k < 9; ++k) {
    const Vec9 v = es.eigenvectors().col(k);
    pinv.noalias() += v * v.transpose() / ev(k);
  }
  const Mat9 cov_n = pinv * middle * pinv;

  // Undo the point normalization: vec_r(A X B) = (A kron B^T) vec_r(X).
  const Mat3 t2inv = n2.T.inverse();
  const Mat3 t1t = n1.T.transpose();
  Mat9 L;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) L.block<3, 3>(3 * i, 3 * j) = t2inv(i, j) * t1t;

  const Vec9 raw = L * hn;
  const double r = raw.norm();
  const Vec9 unit = raw / r;
  const double sign = unit.dot(stack(H.h)) < 0.0 ? -1.0 : 1.0;
  const Mat9 N = sign * (Mat9::Identity() - unit * unit.transpose()) / r;
  const Mat9 J = N * L;
  Mat9 cov = J * cov_n * J.transpose();
  return 0.5 * (cov + cov.transpose());
}

Mat2 linearize_homography_at(const Mat3& h, const Vec2& p) {
  const Vec3 q = h * p.homogeneous();
  const double w = q.z();
  if (std::abs(w) <= 1e-14 * h.row(2).norm() * std::max(1.0, p.norm())) {
    throw Error(ErrorCode::AtInfinity, "linearization point maps to infinity");
  }
  const double w2 = w * w;
  Mat2 J;
  J << (h(0, 0) * w - q.x() * h(2, 0)) / w2, (h(0, 1) * w - q.x() * h(2, 1)) / w2,
       (h(1, 0) * w - q.y() * h(2, 0)) / w2, (h(1, 1) * w - q.y() * h(2, 1)) / w2;
  return J;
}

double transfer_error(const Mat3& h, const PointMatch& m) {
  const Vec3 q = h * m.src.homogeneous();
  if (std::abs(q.z()) < 1e-300) return std::numeric_limits<double>::infinity();
  return (q.hnormalized() - m.dst).norm();
}

namespace {

std::vector<std::size_t> consensus(const Mat3& h, std::span<const PointMatch> matches, double thr) {
  std::vector<std::size_t> in;
  for (std::size_t i = 0; i < matches.size(); ++i)
    if (transfer_error(h, matches[i]) <= thr) in.push_back(i);
  return in;
}

}  // namespace

RansacResult ransac_homography(std::span<const PointMatch> matches, const RansacParams& params,
                               Rng& rng) {
  RansacResult best;
  const std::size_t n = matches.size();
  if (n < 4) return best;
  double needed = params.max_iterations;
  PointMatch sample[4];
  for (int it = 0; it < params.max_iterations && it < needed; ++it) {
    ++best.iterations;
    const auto idx = rng.sample_indices(n, 4);
    for (int k = 0; k < 4; ++k) sample[k] = matches[idx[k]];
    Mat3 h;
    if (!estimate_homography_minimal(std::span<const PointMatch>(sample, 4), h)) continue;
    auto in = consensus(h, matches, params.threshold);
    if (in.size() <= best.inliers.size()) continue;
    best.h = h;
    best.inliers = std::move(in);
    const double w = static_cast<double>(best.inliers.size()) / static_cast<double>(n);
    const double miss = 1.0 - std::pow(w, 4);
    if (miss <= 0.0) break;
    needed = std::log(1.0 - params.confidence) / std::log(miss);
  }
  if (best.inliers.size() < 4) return best;

  // Refit on the consensus set until it settles. A refit that loses more
  // than a tenth of the support is discarded.
  for (int round = 0; round < 5; ++round) {
    std::vector<PointMatch> sub;
    sub.reserve(best.inliers.size());
    for (auto i : best.inliers) sub.push_back(matches[i]);
    Mat3 h;
    try {
      h = estimate_homography_dlt(sub).h;
    } catch (const Error&) {
      break;
    }
    auto in = consensus(h, matches, params.threshold);
    if (10 * in.size() < 9 * best.inliers.size() || in.size() < 4) break;
    const bool same = in == best.inliers;
    best.h = h;
    best.inliers = std::move(in);
    if (same) break;
  }
  best.h = normalize_homography(best.h);
  best.ok = best.inliers.size() >= std::max<std::size_t>(params.min_inliers, 4);
  return best;
}

Mat3 rotation_from_pan_tilt(double pan, double tilt) {
  const double cp = std::cos(pan), sp = std::sin(pan);
  const double ct = std::cos(tilt), st = std::sin(tilt);
  Mat3 r_pan, r_tilt;
  r_pan << cp, 0, -sp, 0, 1, 0, sp, 0, cp;
  r_tilt << 1, 0, 0, 0, ct, st, 0, -st, ct;
  return r_tilt * r_pan;
}

void pan_tilt_from_rotation(const Mat3& R, double& pan, double& tilt) {
  tilt = std::asin(std::clamp(-R(2, 1), -1.0, 1.0));
  pan = std::atan2(R(2, 0), R(2, 2));
}

Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

double orthonormality_defect(const Mat3& m) {
  const double det = m.determinant();
  if (!(std::abs(det) > 0.0) || !std::isfinite(det)) return std::numeric_limits<double>::infinity();
  const Mat3 ms = m / std::cbrt(det);
  return (ms * ms.transpose() - Mat3::Identity()).norm();
}

Homography compose_rotation_homography(const Intrinsics& K_r, const Mat3& R_r, const Mat3& R_k,
                                       const Intrinsics& K_k) {
  return Homography::from(K_r.K() * R_r * R_k.transpose() * K_k.K_inv());
}

CameraPose decompose_to_pose(const Homography& h_total, const Intrinsics& K_r,
                             const Intrinsics& K_k, double tolerance) {
  const Mat3 m = K_r.K_inv() * h_total.h * K_k.K();
  const double defect = orthonormality_defect(m);
  if (!(defect <= tolerance)) {
    throw Error(ErrorCode::NotARotation, "orthonormality defect " + std::to_string(defect));
  }
  const Mat3 r_rel = nearest_rotation(m / std::cbrt(m.determinant()));
  CameraPose pose;
  pan_tilt_from_rotation(r_rel.transpose(), pose.pan, pose.tilt);
  pose.focal = K_k.f;
  return pose;
}

Intrinsics intrinsics_from_homography(const Homography& h, const Intrinsics& K_r,
                                      double tolerance) {
  const Mat3 a = K_r.K_inv() * h.h;
  const Vec3 c = K_r.pp.x() * a.col(0) + K_r.pp.y() * a.col(1) + a.col(2);
  const double denom = std::sqrt(0.5 * (a.col(0).squaredNorm() + a.col(1).squaredNorm()));
  Intrinsics out;
  out.pp = K_r.pp;
  out.f = c.norm() / denom;
  if (!(out.f > 0.0) || !std::isfinite(out.f)) {
    throw Error(ErrorCode::NotARotation, "no positive focal length");
  }
  const double defect = orthonormality_defect(a * out.K());
  if (!(defect <= tolerance)) {
    throw Error(ErrorCode::NotARotation, "orthonormality defect " + std::to_string(defect));
  }
  return out;
}

}  // namespace ptz

#include "ptz/error.hpp"
#include "ptz/geometry.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

using namespace ptz;
using ptz::testing::homography_distance;

namespace {

std::vector<PointMatch> forward_matches(const Mat3& h, Rng& rng, int n, double noise = 0.0) {
  std::vector<PointMatch> out;
  while (static_cast<int>(out.size()) < n) {
    const Vec2 src(rng.uniform(0, 640), rng.uniform(0, 480));
    const Vec3 q = h * src.homogeneous();
    if (std::abs(q.z()) < 1e-3) continue;
    PointMatch m;
    m.src = src + Vec2(rng.normal(), rng.normal()) * noise;
    m.dst = q.hnormalized() + Vec2(rng.normal(), rng.normal()) * noise;
    out.push_back(m);
  }
  return out;
}

Mat3 plausible_homography(Rng& rng) {
  Intrinsics k1{rng.uniform(500, 1500), Vec2(320, 240)};
  Intrinsics k2{rng.uniform(500, 1500), Vec2(320, 240)};
  const Mat3 r1 = rotation_from_pan_tilt(rng.uniform(-0.3, 0.3), rng.uniform(-0.2, 0.2));
  const Mat3 r2 = rotation_from_pan_tilt(rng.uniform(-0.3, 0.3), rng.uniform(-0.2, 0.2));
  return k1.K() * r1 * r2.transpose() * k2.K_inv();
}

// Central finite differences of x -> pi(h [x;1]).
Mat2 finite_difference_jacobian(const Mat3& h, const Vec2& p, double step) {
  auto f = [&](const Vec2& x) { return Vec2((h * x.homogeneous()).hnormalized()); };
  Mat2 J;
  for (int k = 0; k < 2; ++k) {
    Vec2 dp = Vec2::Zero();
    dp(k) = step;
    J.col(k) = (f(p + dp) - f(p - dp)) / (2.0 * step);
  }
  return J;
}

}  // namespace

TEST_CASE("DLT of identical point sets is the identity") {
  std::vector<PointMatch> m(4);
  const Vec2 pts[4] = {{0, 0}, {100, 0}, {100, 80}, {0, 80}};
  for (int i = 0; i < 4; ++i) m[i].src = m[i].dst = pts[i];
  const auto h = estimate_homography_dlt(m);
  CHECK(homography_distance(h.h, Mat3::Identity()) < 1e-12);
  CHECK(h.h.norm() == doctest::Approx(1.0));
  CHECK(h.h(2, 2) > 0.0);
}

TEST_CASE("DLT recovers a ground-truth homography from noiseless matches") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Mat3 truth = plausible_homography(rng);
    const auto matches = forward_matches(truth, rng, 20);
    const auto h = estimate_homography_dlt(matches);
    CHECK(homography_distance(h.h, truth) < 1e-9);
  }
}

TEST_CASE("DLT rejects degenerate and undersized inputs") {
  std::vector<PointMatch> collinear(4);
  for (int i = 0; i < 4; ++i) {
    collinear[i].src = Vec2(10.0 * i, 5.0 * i);
    collinear[i].dst = Vec2(3.0 * i, 7.0 * i);
  }
  try {
    estimate_homography_dlt(collinear);
    FAIL("expected DegenerateConfiguration");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateConfiguration);
  }

  std::vector<PointMatch> three_collinear(4);
  const Vec2 pts[4] = {{0, 0}, {50, 0}, {100, 0}, {40, 90}};
  for (int i = 0; i < 4; ++i) three_collinear[i].src = three_collinear[i].dst = pts[i];
  CHECK_THROWS_AS(estimate_homography_dlt(three_collinear), Error);

  std::vector<PointMatch> few(3);
  try {
    estimate_homography_dlt(few);
    FAIL("expected TooFewMatches");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TooFewMatches);
  }
}

TEST_CASE("homography covariance: zero input, linear scaling, symmetry") {
  Rng rng(11);
  const Mat3 truth = plausible_homography(rng);
  auto matches = forward_matches(truth, rng, 30);
  const auto h = estimate_homography_dlt(matches);

  for (auto& m : matches) m.src_cov = m.dst_cov = Mat2::Zero();
  CHECK(homography_covariance(h, matches).norm() == 0.0);

  for (auto& m : matches) {
    m.src_cov = Mat2::Identity() * 0.7;
    m.dst_cov = Mat2::Identity() * 1.3;
  }
  const Mat9 base = homography_covariance(h, matches);
  for (auto& m : matches) {
    m.src_cov = *m.src_cov * 4.0;
    m.dst_cov = *m.dst_cov * 4.0;
  }
  const Mat9 scaled = homography_covariance(h, matches);
  CHECK((scaled - 4.0 * base).norm() <= 1e-12 * scaled.norm());

  CHECK((base - base.transpose()).norm() == 0.0);
  Eigen::SelfAdjointEigenSolver<Mat9> es(base);
  CHECK(es.eigenvalues().minCoeff() >= -1e-12 * base.trace());
}

TEST_CASE("homography covariance matches a Monte-Carlo of DLT re-estimates") {
  Rng rng(5);
  const Mat3 truth = normalize_homography(plausible_homography(rng));
  const auto clean = forward_matches(truth, rng, 25);
  const auto h_clean = estimate_homography_dlt(clean);
  const Mat9 closed = homography_covariance(h_clean, clean, 1.0);

  const int draws = 3000;
  std::vector<Vec9> samples;
  Vec9 mean = Vec9::Zero();
  for (int d = 0; d < draws; ++d) {
    auto noisy = clean;
    for (auto& m : noisy) {
      m.src += Vec2(rng.normal(), rng.normal());
      m.dst += Vec2(rng.normal(), rng.normal());
    }
    samples.push_back(stack(estimate_homography_dlt(noisy).h));
    mean += samples.back();
  }
  mean /= draws;
  Mat9 empirical = Mat9::Zero();
  for (const auto& s : samples) empirical += (s - mean) * (s - mean).transpose();
  empirical /= (draws - 1);
  // Looser than the acceptance bound because this uses fewer draws.
  CHECK((empirical - closed).norm() / closed.norm() < 0.2);
}

TEST_CASE("linearization: identity, pure scaling, finite differences") {
  CHECK((linearize_homography_at(Mat3::Identity(), Vec2(13, -4)) - Mat2::Identity()).norm() < 1e-15);

  Mat3 s = Mat3::Identity();
  s(0, 0) = s(1, 1) = 2.5;
  for (const Vec2& p : {Vec2(0, 0), Vec2(100, 50), Vec2(-7, 3)}) {
    CHECK((linearize_homography_at(s, p) - 2.5 * Mat2::Identity()).norm() < 1e-14);
  }

  Rng rng(3);
  int checked = 0;
  while (checked < 1000) {
    const Mat3 h = ptz::testing::random_homography(rng);
    const Vec2 p(rng.uniform(0, 640), rng.uniform(0, 480));
    const double w = (h * p.homogeneous()).z();
    if (std::abs(w) < 0.2) continue;
    const Mat2 J = linearize_homography_at(h, p);
    const Mat2 fd = finite_difference_jacobian(h, p, 1e-5);
    CHECK((J - fd).norm() / J.norm() < 1e-6);
    ++checked;
  }

  Mat3 singular_row = Mat3::Identity();
  singular_row.row(2) << 1, 0, -5;
  CHECK_THROWS_AS(linearize_homography_at(singular_row, Vec2(5, 1)), Error);
}

TEST_CASE("rotation homography composition") {
  const Intrinsics k{1000, Vec2(320, 240)};
  const Mat3 r = rotation_from_pan_tilt(0.3, -0.2);
  CHECK(homography_distance(compose_rotation_homography(k, r, r, k).h, Mat3::Identity()) < 1e-12);

  // Pan-only view at +0.1 rad seen from the reference: its principal point
  // lands f*tan(0.1) to the right of the reference principal point.
  const auto h = compose_rotation_homography(k, Mat3::Identity(), rotation_from_pan_tilt(0.1, 0.0), k);
  const Vec2 moved = h.apply(k.pp);
  CHECK(moved.x() - k.pp.x() == doctest::Approx(1000.0 * std::tan(0.1)).epsilon(1e-12));
  CHECK(moved.y() == doctest::Approx(k.pp.y()).epsilon(1e-12));

  const Intrinsics k2{2000, Vec2(320, 240)};
  const auto zoom = compose_rotation_homography(k2, Mat3::Identity(), Mat3::Identity(), k);
  for (const Vec2& p : {Vec2(320, 240), Vec2(0, 0), Vec2(600, 100)}) {
    CHECK((zoom.apply(p) - (k.pp + 2.0 * (p - k.pp))).norm() < 1e-9);
  }
}

TEST_CASE("pose decomposition round-trips composition") {
  const Intrinsics kr{800, Vec2(320, 240)};
  const Intrinsics kk{1200, Vec2(320, 240)};
  const auto ident = decompose_to_pose(Homography::from(kr.K() * kk.K_inv()), kr, kk);
  CHECK(std::abs(ident.pan) < 1e-12);
  CHECK(std::abs(ident.tilt) < 1e-12);
  CHECK(ident.focal == 1200.0);

  const auto h = compose_rotation_homography(kr, Mat3::Identity(), rotation_from_pan_tilt(0.2, -0.1), kk);
  const auto pose = decompose_to_pose(h, kr, kk);
  CHECK(std::abs(pose.pan - 0.2) < 1e-9);
  CHECK(std::abs(pose.tilt + 0.1) < 1e-9);

  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    const double pan = rng.uniform(-3.0, 3.0);
    const double tilt = rng.uniform(-1.4, 1.4);
    const auto hh = compose_rotation_homography(kr, Mat3::Identity(), rotation_from_pan_tilt(pan, tilt), kk);
    const auto p = decompose_to_pose(hh, kr, kk);
    CHECK(std::abs(p.pan - pan) < 1e-9);
    CHECK(std::abs(p.tilt - tilt) < 1e-9);
  }

  // 10% non-rotational perturbation of the chain.
  Mat3 noise;
  noise << 0.1, -0.07, 0.02, 0.05, -0.1, 0.08, -0.03, 0.06, 0.1;
  const Mat3 m = kr.K_inv() * h.h * kk.K();
  const Mat3 bad = kr.K() * (m + noise * m.norm() / std::sqrt(3.0)) * kk.K_inv();
  try {
    decompose_to_pose(Homography::from(bad), kr, kk);
    FAIL("expected NotARotation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotARotation);
  }
  CHECK_THROWS_AS(decompose_to_pose(Homography::from(bad), kr, kk, 5e-2), Error);
}

TEST_CASE("focal recovery from rotation homographies") {
  const Intrinsics kr{800, Vec2(320, 240)};
  CHECK(intrinsics_from_homography(Homography::identity(), kr).f == doctest::Approx(800.0).epsilon(1e-12));

  const Intrinsics k1500{1500, Vec2(320, 240)};
  const auto zoom = compose_rotation_homography(kr, Mat3::Identity(), Mat3::Identity(), k1500);
  CHECK(std::abs(intrinsics_from_homography(zoom, kr).f - 1500.0) < 1e-6);

  // Pan + tilt + zoom to f = 2085, estimated by DLT from 1 px noisy matches
  // against the nearest keyframe at f = 1600, then chained to the reference.
  Rng rng(23);
  const Intrinsics k_key{1600, Vec2(320, 240)};
  const Intrinsics k_true{2085, Vec2(320, 240)};
  const Mat3 r_key = rotation_from_pan_tilt(0.25, -0.12);
  const Mat3 r_true = rotation_from_pan_tilt(0.27, -0.11);
  const auto h_rk = compose_rotation_homography(kr, Mat3::Identity(), r_key, k_key);
  const Mat3 frame_to_key = k_key.K() * r_key * r_true.transpose() * k_true.K_inv();
  std::vector<PointMatch> matches;
  while (matches.size() < 300) {
    PointMatch m;
    m.src = Vec2(rng.uniform(0, 640), rng.uniform(0, 480));
    m.dst = (frame_to_key * m.src.homogeneous()).hnormalized();
    if (m.dst.x() < 0 || m.dst.x() > 640 || m.dst.y() < 0 || m.dst.y() > 480) continue;
    m.src += Vec2(rng.normal(), rng.normal());
    m.dst += Vec2(rng.normal(), rng.normal());
    matches.push_back(m);
  }
  const auto h = estimate_homography_dlt(matches);
  const auto k = intrinsics_from_homography(h_rk * h, kr);
  CHECK(std::abs(k.f - 2085.0) / 2085.0 < 0.01);
}

TEST_CASE("homography normalization and inversion") {
  Rng rng(2);
  const Mat3 m = plausible_homography(rng);
  const auto h = Homography::from(-3.0 * m);
  CHECK(h.h.norm() == doctest::Approx(1.0));
  CHECK(h.h(2, 2) > 0);
  const auto round = h * h.inverse();
  CHECK(homography_distance(round.h, Mat3::Identity()) < 1e-12);
  CHECK_THROWS_AS(Homography::from(Mat3::Zero()), Error);
}

#include "ptz/error.hpp"
#include "ptz/offline_init.hpp"
#include "ptz/simulator.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace ptz;
using ptz::testing::homography_distance;

namespace {

Scenario base_scenario(std::uint64_t seed, double keypoint_sigma) {
  Scenario s;
  s.seed = seed;
  s.frames = 10;
  s.landmarks_per_frame = 150;
  s.keypoint_sigma = keypoint_sigma;
  s.keyframe_keypoint_sigma = keypoint_sigma;
  s.descriptor_sigma = 0.05;
  return s;
}

struct Built {
  BundleProblem problem;
  std::vector<CameraPose> truth;
};

Built build(Simulator& sim, const std::vector<CameraPose>& poses, int reference) {
  Built b;
  b.truth = poses;
  b.problem.pp = sim.reference_intrinsics().pp;
  b.problem.base_focal = sim.scenario().reference_focal;
  b.problem.reference = reference;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const KeyframeData kf = sim.render_keyframe(poses[i], i);
    b.problem.keyframes.push_back(KeyframeInput{kf.reading, kf.obs});
  }
  Rng rng(99);
  b.problem.matches = match_keyframes(b.problem, KeyframeMatchOptions{}, rng);
  return b;
}

std::vector<CameraPose> grid_poses() {
  std::vector<CameraPose> poses;
  const double focal[3] = {400, 500, 620};
  for (int r = 0; r < 3; ++r)
    for (double pan : {-15.0, 0.0, 15.0})
      poses.push_back(CameraPose{pan * kDegToRad, -10.0 * r * kDegToRad, focal[r]});
  return poses;  // index 1 is pan 0, tilt 0, f 400
}

// Relative rotation of view k w.r.t. the reference, from simulator truth.
Mat3 truth_rotation(const CameraPose& p, const CameraPose& ref) {
  return rotation_from_pan_tilt(p.pan, p.tilt) * rotation_from_pan_tilt(ref.pan, ref.tilt).transpose();
}

}  // namespace

TEST_CASE("noiseless 3x3 keyframe grid is recovered exactly") {
  Scenario s = base_scenario(7, 0.0);
  s.descriptor_sigma = 0.0;
  Simulator sim(s);
  const Built b = build(sim, grid_poses(), 1);
  REQUIRE(b.problem.matches.size() >= 8);
  const BundleResult res = bundle_adjust(b.problem);
  MESSAGE("initial rms " << res.initial_rms << " final rms " << res.rms << " after " << res.iterations);
  CHECK(res.initial_rms > 1.0);  // the actuator readings are noisy
  CHECK(res.converged);
  CHECK(res.rms < 1e-8);
  for (std::size_t k = 0; k < b.truth.size(); ++k) {
    CHECK(std::abs(res.f[k] / b.truth[k].focal - 1.0) < 1e-6);
    CHECK((res.R[k] - truth_rotation(b.truth[k], b.truth[1])).norm() < 1e-8);
  }
  CHECK((res.R[1] - Mat3::Identity()).norm() == 0.0);
}

TEST_CASE("a single keyframe keeps its initial guess") {
  Simulator sim(base_scenario(3, 1.0));
  const Built b = build(sim, {CameraPose{0, 0, 400}}, 0);
  const BundleResult res = bundle_adjust(b.problem);
  REQUIRE(res.R.size() == 1);
  CHECK(res.R[0].isApprox(Mat3::Identity(), 1e-15));
  CHECK(res.f[0] == doctest::Approx(400.0 * b.problem.keyframes[0].reading.zoom));
  CHECK(res.rms == 0.0);
}

TEST_CASE("an unreachable keyframe is rejected") {
  Simulator sim(base_scenario(3, 1.0));
  const Built b = build(sim, {CameraPose{0, 0, 400}, CameraPose{0.05, 0, 400}, CameraPose{1.5, 0, 400}}, 0);
  CHECK_THROWS_WITH_AS(bundle_adjust(b.problem), doctest::Contains("unreachable"), Error);
  try {
    bundle_adjust(b.problem);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DisconnectedGraph);
  }
}

TEST_CASE("gauge: a rotated starting point gives the same registrations") {
  Simulator sim(base_scenario(11, 1.0));
  Built b = build(sim, grid_poses(), 1);
  const BundleResult r0 = bundle_adjust(b.problem);
  std::vector<Mat3> R;
  std::vector<double> f;
  initial_guess(b.problem, R, f);
  const Mat3 Q = rotation_from_pan_tilt(0.3, -0.2) * Eigen::AngleAxisd(0.1, Vec3::UnitZ()).toRotationMatrix();
  for (auto& r : R) r = r * Q;
  b.problem.initial_R = R;
  b.problem.initial_f = f;
  const BundleResult r1 = bundle_adjust(b.problem);
  CHECK(r0.rms == doctest::Approx(r1.rms).epsilon(1e-9));
  const SceneMap m0 = build_scene_map(b.problem, r0), m1 = build_scene_map(b.problem, r1);
  for (std::size_t k = 0; k < m0.views.size(); ++k) {
    CHECK(homography_distance(m0.views[k].H_rk.h, m1.views[k].H_rk.h) < 1e-9);
    CHECK((r0.R[k] - r1.R[k]).norm() < 1e-9);
  }
}

TEST_CASE("recovered focals do not depend on the reference keyframe") {
  Simulator sim(base_scenario(13, 1.0));
  Built b = build(sim, grid_poses(), 1);
  const BundleResult r1 = bundle_adjust(b.problem);
  b.problem.reference = 6;
  const BundleResult r6 = bundle_adjust(b.problem);
  for (std::size_t k = 0; k < r1.f.size(); ++k) CHECK(std::abs(r1.f[k] / r6.f[k] - 1.0) < 1e-6);
  CHECK(r1.rms == doctest::Approx(r6.rms).epsilon(1e-9));
  // Relative rotations agree as well.
  const Mat3 rel1 = r1.R[3] * r1.R[5].transpose();
  const Mat3 rel6 = r6.R[3] * r6.R[5].transpose();
  CHECK((rel1 - rel6).norm() < 1e-7);
}

TEST_CASE("accepted iterations never increase the residual") {
  Simulator sim(base_scenario(17, 1.0));
  const Built b = build(sim, grid_poses(), 1);
  const BundleResult res = bundle_adjust(b.problem);
  REQUIRE(res.cost_history.size() >= 2);
  for (std::size_t i = 1; i < res.cost_history.size(); ++i) CHECK(res.cost_history[i] <= res.cost_history[i - 1]);
  CHECK(res.rms < res.initial_rms);
  CHECK(res.rms == doctest::Approx(transfer_rms(b.problem, res.R, res.f)).epsilon(1e-12));
  // One-pixel keypoint noise on both ends of every match.
  CHECK(res.rms > 0.8);
  CHECK(res.rms < 2.5);
}

TEST_CASE("focal uncertainty grows along a zoom ladder") {
  const double ladder[5] = {400, 566, 800, 1131, 1600};
  std::vector<CameraPose> poses;
  for (double pan : {-20.0, 0.0, 20.0})
    for (double tilt : {-20.0, 0.0}) poses.push_back(CameraPose{pan * kDegToRad, tilt * kDegToRad, 400});
  for (int i = 1; i < 5; ++i)
    for (double pan : {-3.0, 3.0}) poses.push_back(CameraPose{pan * kDegToRad, -10 * kDegToRad, ladder[i]});
  const int reference = 2;  // pan 0, tilt 0
  double sum2[5] = {0, 0, 0, 0, 0};
  int count[5] = {0, 0, 0, 0, 0};
  const int seeds = 8;
  for (int seed = 0; seed < seeds; ++seed) {
    Simulator sim(base_scenario(100 + seed, 1.0));
    const Built b = build(sim, poses, reference);
    const BundleResult res = bundle_adjust(b.problem);
    for (std::size_t k = 0; k < poses.size(); ++k) {
      const int lv = static_cast<int>(std::lround(std::log2(poses[k].focal / 400) * 2));
      const double e = res.f[k] - poses[k].focal;
      sum2[lv] += e * e;
      ++count[lv];
    }
  }
  double sd[5];
  for (int i = 0; i < 5; ++i) {
    sd[i] = std::sqrt(sum2[i] / count[i]);
    MESSAGE("f=" << ladder[i] << " focal rms error " << sd[i]);
  }
  CHECK(sd[4] > sd[2]);
  CHECK(sd[2] > sd[0]);
  CHECK(sd[4] < 0.02 * 1600);
}

TEST_CASE("rectification of already-rectified input is a similarity") {
  const Intrinsics K{500, Vec2(320, 240)};
  const Homography H = rectify_from_vanishing(Vec3(1, 0, 0), Vec3(0, 1, 0), K);
  // Lengths scale uniformly and angles survive.
  const Vec2 a = H.apply(Vec2(10, 20)), b = H.apply(Vec2(110, 20)), c = H.apply(Vec2(10, 120));
  CHECK((b - a).norm() == doctest::Approx((c - a).norm()).epsilon(1e-12));
  CHECK(std::abs((b - a).dot(c - a)) < 1e-12);
  CHECK(std::abs(H.h(2, 0)) < 1e-15);
  CHECK(std::abs(H.h(2, 1)) < 1e-15);
}

TEST_CASE("rectification restores right angles of a tilted ground plane") {
  Scenario s = base_scenario(1, 0.0);
  for (double tilt : {-20.0, -35.0}) {
    const CameraPose pose{0.15, tilt * kDegToRad, 400};
    Simulator sim(s);
    const Mat3 G = sim.ground_to_frame(pose);
    const Intrinsics K = sim.intrinsics(400);
    // Vanishing points of two ground directions at 30 degrees to the axes.
    const Vec3 u(std::cos(0.5), std::sin(0.5), 0), v(-std::sin(0.5), std::cos(0.5), 0);
    const Homography H = rectify_from_vanishing(G * u, G * v, K);
    const Vec2 o(2, 20);
    auto rect = [&](const Vec2& X) { return H.apply((G * X.homogeneous()).hnormalized()); };
    const Vec2 p0 = rect(o), p1 = rect(o + 3 * u.head<2>()), p2 = rect(o + 3 * v.head<2>());
    const double angle = std::acos((p1 - p0).normalized().dot((p2 - p0).normalized())) / kDegToRad;
    CHECK(std::abs(angle - 90.0) < 0.1);
    CHECK((p1 - p0).norm() == doctest::Approx((p2 - p0).norm()).epsilon(1e-9));
  }
}

TEST_CASE("degenerate vanishing geometry and coincident points are rejected") {
  const Intrinsics K{500, Vec2(320, 240)};
  const Vec3 vp(900, 240, 1);
  try {
    rectify_from_vanishing(vp, 2.0 * vp, K);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateVanishingGeometry);
  }
  const Homography H = rectify_from_vanishing(Vec3(1, 0, 0), Vec3(0, 1, 0), K);
  try {
    scale_from_known_distance(H, Vec2(5, 5), Vec2(5, 5), 2.0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CoincidentPoints);
  }
}

TEST_CASE("scale from a known distance") {
  const Homography I = Homography::identity();
  const Homography rigid = scale_from_known_distance(I, Vec2(1, 1), Vec2(4, 5), 5.0);
  CHECK((rigid.apply(Vec2(1, 1))).norm() < 1e-12);
  CHECK((rigid.apply(Vec2(4, 5)) - Vec2(5, 0)).norm() < 1e-12);
  CHECK((rigid.apply(Vec2(1, 2)) - rigid.apply(Vec2(1, 1))).norm() == doctest::Approx(1.0));
  const Homography twice = scale_from_known_distance(I, Vec2(0, 0), Vec2(0, 5), 10.0);
  CHECK((twice.apply(Vec2(0, 5)) - Vec2(10, 0)).norm() < 1e-12);
  CHECK((twice.apply(Vec2(3, 0)) - twice.apply(Vec2(0, 0))).norm() == doctest::Approx(6.0));
}

TEST_CASE("registered world distances survive the keyframe pipeline") {
  Scenario s = base_scenario(21, 0.0);
  s.descriptor_sigma = 0.0;
  Simulator sim(s);
  std::vector<CameraPose> poses = grid_poses();
  const Built b = build(sim, poses, 1);
  const BundleResult res = bundle_adjust(b.problem);
  SceneMap map = build_scene_map(b.problem, res);
  const RegistrationInputs in = sim.registration_inputs();
  const WorldRegistration reg =
      register_world(in.vp_x, in.vp_y, map.reference_intrinsics(), in.p1, in.p2, in.L);
  CHECK(reg.H_W.apply(in.p1).norm() < 1e-9);
  CHECK((reg.H_W.apply(in.p2) - Vec2(in.L, 0)).norm() < 1e-9);

  // Ground points seen in each keyframe, carried to the world through H_rk and H_W.
  Rng rng(4);
  double extent = 0, worst = 0, worst_dist = 0;
  std::vector<Vec2> truth, recovered;
  for (std::size_t k = 0; k < poses.size(); ++k) {
    const Mat3 G = sim.ground_to_frame(poses[k]);
    for (int i = 0; i < 20; ++i) {
      const Vec2 X(rng.uniform(-15, 15), rng.uniform(8, 40));
      const Vec3 q = G * X.homogeneous();
      if (q.z() <= 0) continue;
      const Vec2 px = q.hnormalized();
      if (px.x() < 0 || px.x() > 640 || px.y() < 0 || px.y() > 480) continue;
      const Vec2 w = (reg.H_W * map.views[k].H_rk).apply(px);
      truth.push_back(sim.to_registered(X));
      recovered.push_back(w);
      extent = std::max(extent, truth.back().norm());
      worst = std::max(worst, (w - truth.back()).norm());
    }
  }
  REQUIRE(truth.size() > 40);
  for (std::size_t i = 1; i < truth.size(); ++i) {
    const double dt = (truth[i] - truth[i - 1]).norm();
    const double dr = (recovered[i] - recovered[i - 1]).norm();
    worst_dist = std::max(worst_dist, std::abs(dr / dt - 1.0));
  }
  MESSAGE("worst position error " << worst << " m over extent " << extent << " m; worst distance ratio error "
                                  << worst_dist);
  CHECK(worst < 0.01 * extent);
  CHECK(worst_dist < 0.005);
}

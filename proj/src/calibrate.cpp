#include "ptz/calibrate.hpp"

#include "ptz/error.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <unordered_map>

namespace ptz {

namespace {

// 2x3 Jacobian of perspective division at homogeneous y.
Eigen::Matrix<double, 2, 3> division_jacobian(const Vec3& y) {
  if (std::abs(y.z()) < 1e-300) throw Error(ErrorCode::AtInfinity, "point maps to infinity");
  Eigen::Matrix<double, 2, 3> J;
  const double w = y.z();
  J << 1.0 / w, 0, -y.x() / (w * w), 0, 1.0 / w, -y.y() / (w * w);
  return J;
}

Mat2 symmetrize(const Mat2& m) { return 0.5 * (m + m.transpose()); }

// Hash grid over 2D points for radius queries.
class PointGrid {
 public:
  explicit PointGrid(double cell) : cell_(cell) {}
  void insert(const Vec2& p, int id) { cells_[key(cell_of(p.x()), cell_of(p.y()))].push_back({p, id}); }
  template <typename F>
  void near(const Vec2& p, double r, F&& visit) const {
    const long x0 = cell_of(p.x() - r), x1 = cell_of(p.x() + r);
    const long y0 = cell_of(p.y() - r), y1 = cell_of(p.y() + r);
    for (long x = x0; x <= x1; ++x)
      for (long y = y0; y <= y1; ++y) {
        auto it = cells_.find(key(x, y));
        if (it == cells_.end()) continue;
        for (const auto& e : it->second)
          if ((e.p - p).squaredNorm() <= r * r) visit(e.id, (e.p - p).squaredNorm());
      }
  }

 private:
  struct Entry {
    Vec2 p;
    int id;
  };
  long cell_of(double v) const { return static_cast<long>(std::floor(v / cell_)); }
  static long long key(long x, long y) { return (static_cast<long long>(x) << 32) ^ (y & 0xffffffffLL); }
  double cell_;
  std::unordered_map<long long, std::vector<Entry>> cells_;
};

float descriptor_distance2(const Descriptor& a, const Descriptor& b) {
  float s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const float d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

float descriptor_norm2(const Descriptor& a) {
  float s = 0;
  for (float x : a) s += x * x;
  return s;
}

}  // namespace

Mat3 MeasurementNoise::homogeneous() const {
  Mat3 m = Mat3::Zero();
  m.topLeftCorner<2, 2>() = total();
  return m;
}

FrameHomography estimate_frame_homography(std::span<const LandmarkMatch> matches, const RansacParams& params,
                                          Rng& rng, double keypoint_sigma) {
  std::vector<PointMatch> pm;
  pm.reserve(matches.size());
  for (const auto& m : matches) pm.push_back(m.match);
  if (pm.size() < std::max<std::size_t>(params.min_inliers, 4))
    throw Error(ErrorCode::InsufficientInliers, std::to_string(pm.size()) + " tentative matches");
  const RansacResult rr = ransac_homography(pm, params, rng);
  if (!rr.ok)
    throw Error(ErrorCode::InsufficientInliers, std::to_string(rr.inliers.size()) + " inliers");
  FrameHomography out;
  out.ransac_iterations = rr.iterations;
  std::vector<PointMatch> in;
  in.reserve(rr.inliers.size());
  std::size_t next = 0;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    if (next < rr.inliers.size() && rr.inliers[next] == i) {
      out.inliers.push_back(matches[i]);
      in.push_back(pm[i]);
      ++next;
    } else {
      out.outliers.push_back(matches[i].obs);
    }
  }
  out.H = Homography::from(rr.h);
  out.H.cov = homography_covariance(out.H, in, keypoint_sigma);
  return out;
}

MeasurementNoise measurement_covariance(const PointMatch& match, const Homography& H, const Landmark& lm,
                                        double keypoint_sigma) {
  MeasurementNoise n;
  const Vec3 v = match.src.homogeneous();
  const Mat2 Ht = linearize_homography_at(H.h, match.src);
  const Mat2 Ht_inv = Ht.inverse();
  if (H.cov) {
    Eigen::Matrix<double, 3, 9> B = Eigen::Matrix<double, 3, 9>::Zero();
    for (int r = 0; r < 3; ++r) B.block<1, 3>(r, 3 * r) = v.transpose();
    const Eigen::Matrix<double, 2, 9> JB = division_jacobian(H.h * v) * B;
    // Uncertainty of the mapped point in the view, pulled back to frame pixels.
    n.spatial = symmetrize(Ht_inv * (JB * (*H.cov) * JB.transpose()) * Ht_inv.transpose());
  }
  n.keypoint = match.src_cov ? *match.src_cov : Mat2(keypoint_sigma * keypoint_sigma * Mat2::Identity());
  const Mat3 Hinv = H.h.inverse();
  const Mat2 L = linearize_homography_at(Hinv, lm.pos);
  n.landmark = symmetrize(L * lm.P * L.transpose());
  return n;
}

void ekf_update_landmark(Landmark& lm, const Observation& obs, const Homography& H, const MeasurementNoise& noise,
                         GainForm form) {
  const Mat2 Ht = linearize_homography_at(H.h, obs.pos);
  if (!(std::abs(Ht.determinant()) > 1e-12 * Ht.squaredNorm()))
    throw Error(ErrorCode::SingularInnovation, "homography Jacobian is singular");
  const Mat2 C = Ht.inverse();
  const Vec2 y = H.apply(obs.pos) - lm.pos;  // view pixels
  const Vec2 nu = C * y;                      // frame pixels
  const Mat2 S = C * lm.P * C.transpose() + noise.total();
  const double det = S.determinant();
  if (!(std::abs(det) > 1e-300) || !std::isfinite(det) || !(det > 1e-14 * S.squaredNorm()))
    throw Error(ErrorCode::SingularInnovation, "innovation covariance is singular");
  const Mat2 S_inv = S.inverse();
  const Mat2 K = form == GainForm::AsPrinted ? Mat2(lm.P * C * S_inv) : Mat2(lm.P * C.transpose() * S_inv);
  lm.pos += K * nu;
  Mat2 P = symmetrize((Mat2::Identity() - K * C) * lm.P);
  // Clip tiny negative eigenvalues from rounding.
  Eigen::SelfAdjointEigenSolver<Mat2> es(P);
  if (es.eigenvalues().minCoeff() < 0)
    P = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() * es.eigenvectors().transpose();
  lm.P = P;
}

double proximity_check(const Vec2& candidate, std::span<const LandmarkMatch> inliers) {
  if (inliers.empty()) throw Error(ErrorCode::NoInliers, "no matched landmarks for the proximity check");
  Vec2 lo = inliers[0].match.src, hi = lo;
  for (const auto& m : inliers) {
    lo = lo.cwiseMin(m.match.src);
    hi = hi.cwiseMax(m.match.src);
  }
  const double area_a = (hi - lo).prod();
  const Vec2 blo = lo.cwiseMin(candidate), bhi = hi.cwiseMax(candidate);
  const double area_b = (bhi - blo).prod();
  if (!(area_b > 0)) return 1.0;
  return std::clamp(area_a / area_b, 0.0, 1.0);
}

LifecycleCounts lifecycle_step(ViewMap& view, const Homography& H, const LifecycleFrame& in, BirthTracker& births,
                               std::int64_t& next_landmark_id, const LifecycleParams& params) {
  LifecycleCounts counts;
  auto& lms = view.landmarks;

  // Matched landmarks.
  std::vector<char> matched(lms.size(), 0);
  std::vector<char> obs_used(in.obs.size(), 0);
  for (const auto& m : in.inliers) {
    Landmark& lm = lms[m.landmark];
    matched[m.landmark] = 1;
    obs_used[m.obs] = 1;
    lm.frames_since_match = 0;
    ++lm.frames_seen;
    update_descriptor(lm, in.obs[m.obs].desc, params.descriptor_alpha);
  }

  // Ageing of landmarks that were offered to the matcher, are inside the
  // frame, and were not matched.
  const Mat3 Hinv = H.h.inverse();
  for (std::size_t idx : in.sampled) {
    if (matched[idx]) continue;
    const Vec3 q = Hinv * lms[idx].pos.homogeneous();
    if (std::abs(q.z()) < 1e-12) continue;
    const Vec2 p = q.hnormalized();
    if (p.x() < 0 || p.y() < 0 || p.x() >= in.width || p.y() >= in.height) continue;
    ++lms[idx].frames_since_match;
  }

  // Deaths, never taking the originals below the protected floor.
  std::size_t originals = static_cast<std::size_t>(
      std::count_if(lms.begin(), lms.end(), [](const Landmark& l) { return l.original; }));
  std::vector<Landmark> kept;
  kept.reserve(lms.size());
  for (auto& lm : lms) {
    if (lm.frames_since_match >= params.death_threshold) {
      if (!lm.original) {
        ++counts.deaths;
        continue;
      }
      if (originals > params.protected_originals) {
        --originals;
        ++counts.deaths;
        continue;
      }
    }
    kept.push_back(std::move(lm));
  }
  lms.swap(kept);

  // Candidates: unmatched observations away from every live landmark.
  PointGrid live(std::max(params.exclusion_radius_px, 1.0));
  for (std::size_t i = 0; i < lms.size(); ++i) live.insert(lms[i].pos, static_cast<int>(i));

  auto& cands = births.views[view.id];
  std::erase_if(cands, [&](const BirthCandidate& c) { return c.last_frame != in.frame - 1; });
  PointGrid cgrid(std::max(params.candidate_radius_px, 1.0));
  for (std::size_t i = 0; i < cands.size(); ++i) cgrid.insert(cands[i].pos, static_cast<int>(i));
  std::vector<Vec2> cand_frame_pos(cands.size(), Vec2::Zero());

  for (std::size_t o = 0; o < in.obs.size(); ++o) {
    if (obs_used[o]) continue;
    const Vec3 q3 = H.h * in.obs[o].pos.homogeneous();
    if (std::abs(q3.z()) < 1e-12) continue;
    const Vec2 q = q3.hnormalized();
    bool near_live = false;
    live.near(q, params.exclusion_radius_px, [&](int, double) { near_live = true; });
    if (near_live) continue;
    int best = -1;
    double best_d2 = 1e300;
    cgrid.near(q, params.candidate_radius_px, [&](int id, double d2) {
      auto& c = cands[static_cast<std::size_t>(id)];
      if (c.last_frame == in.frame) return;
      if (descriptor_distance2(c.desc, in.obs[o].desc) > 0.25f * descriptor_norm2(c.desc)) return;
      if (d2 < best_d2) {
        best_d2 = d2;
        best = id;
      }
    });
    if (best >= 0) {
      auto& c = cands[static_cast<std::size_t>(best)];
      ++c.streak;
      c.pos += (q - c.pos) / c.streak;
      const float w = 1.0f / static_cast<float>(c.streak);
      for (std::size_t k = 0; k < c.desc.size(); ++k) c.desc[k] += w * (in.obs[o].desc[k] - c.desc[k]);
      c.last_frame = in.frame;
      cand_frame_pos[static_cast<std::size_t>(best)] = in.obs[o].pos;
    } else {
      cands.push_back(BirthCandidate{q, in.obs[o].desc, 1, in.frame});
      cand_frame_pos.push_back(in.obs[o].pos);
    }
  }

  // Births.
  std::vector<BirthCandidate> remaining;
  remaining.reserve(cands.size());
  for (std::size_t i = 0; i < cands.size(); ++i) {
    auto& c = cands[i];
    if (c.last_frame != in.frame || c.streak < params.birth_persistence) {
      remaining.push_back(std::move(c));
      continue;
    }
    if (lms.size() >= params.max_landmarks_per_view) continue;
    if (params.use_proximity && !in.inliers.empty() &&
        proximity_check(cand_frame_pos[i], in.inliers) < params.proximity_threshold) {
      ++counts.rejected_by_proximity;
      continue;
    }
    Landmark lm;
    lm.id = next_landmark_id++;
    lm.pos = c.pos;
    lm.desc = std::move(c.desc);
    lm.born_at = in.frame;
    lm.original = false;
    lm.frames_seen = c.streak;
    // Founding covariance carried into the view, plus inflation.
    Landmark zero;
    zero.P = Mat2::Zero();
    zero.pos = c.pos;
    PointMatch pm;
    pm.src = cand_frame_pos[i];
    const MeasurementNoise n = measurement_covariance(pm, H, zero, in.keypoint_sigma);
    const Mat2 Ht = linearize_homography_at(H.h, cand_frame_pos[i]);
    lm.P = symmetrize(Ht * n.total() * Ht.transpose()) + params.birth_inflation * Mat2::Identity();
    lms.push_back(std::move(lm));
    ++counts.births;
  }
  cands.swap(remaining);
  return counts;
}

Mat3 world_to_frame_homography(const Homography& H_W, const Homography& H_total, int width, int height) {
  const Mat3 M = H_W.h * H_total.h;  // frame -> world
  Mat3 G = M.inverse();
  G /= G.norm();
  const Vec3 y = M * Vec3(0.5 * width, 0.95 * height, 1.0);
  if (y.z() < 0) G = -G;
  return G;
}

CalibrationResult calibrate_frame(std::int64_t frame, std::span<const Observation> obs, const ActuatorReading& reading,
                                  SceneMap& map, CalibrationState& state, const CalibrateConfig& config, Rng& rng) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  auto since = [](clock::time_point a) { return std::chrono::duration<double>(clock::now() - a).count(); };
  CalibrationResult res;
  res.frame = frame;
  state.dirty_views.clear();

  ViewMap& view = map.view(nearest_view(map, reading, config.weights).id);
  res.view = view.id;
  std::vector<std::size_t> sampled;
  const auto matches = match_descriptors(obs, view, config.match, rng, &sampled);
  res.tentative = matches.size();
  res.t_match = since(t0);
  const auto t1 = clock::now();

  bool ok = true;
  FrameHomography fh;
  try {
    fh = estimate_frame_homography(matches, config.ransac, rng, config.keypoint_sigma);
    res.H = fh.H;
    res.H_total = view.H_rk * fh.H;
    const Intrinsics& K_r = map.reference_intrinsics();
    res.K = intrinsics_from_homography(res.H_total, K_r, config.rotation_tolerance);
    res.pose = decompose_to_pose(res.H_total, K_r, res.K, config.rotation_tolerance);
  } catch (const Error& e) {
    switch (e.code()) {
      case ErrorCode::InsufficientInliers:
      case ErrorCode::TooFewMatches:
      case ErrorCode::NotARotation:
      case ErrorCode::DegenerateConfiguration:
      case ErrorCode::SingularNormalMatrix:
      case ErrorCode::AtInfinity:
        ok = false;
        break;
      default:
        throw;
    }
  }

  if (!ok) {
    if (state.last_good) {
      const auto& g = *state.last_good;
      res.H = g.H;
      res.H_total = g.H_total;
      res.K = g.K;
      res.pose = g.pose;
      res.G = g.G;
    } else {
      res.pose = CameraPose{reading.pan_deg * std::numbers::pi / 180.0, reading.tilt_deg * std::numbers::pi / 180.0,
                            map.reference_intrinsics().f * reading.zoom};
      res.K = Intrinsics{res.pose.focal, map.reference_intrinsics().pp};
    }
    res.stale = true;
    res.t_homography = since(t1);
    res.seconds = since(t0);
    return res;
  }

  if (map.H_W) res.G = world_to_frame_homography(*map.H_W, res.H_total, config.width, config.height);
  res.inliers = fh.inliers;
  res.outliers = fh.outliers;
  res.t_homography = since(t1);
  const auto t2 = clock::now();

  if (config.map_updating) {
    for (const auto& m : fh.inliers) {
      Landmark& lm = view.landmarks[m.landmark];
      const MeasurementNoise n = measurement_covariance(m.match, fh.H, lm, config.keypoint_sigma);
      try {
        ekf_update_landmark(lm, obs[m.obs], fh.H, n, config.gain);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::SingularInnovation) throw;
      }
    }
    LifecycleFrame lf;
    lf.frame = frame;
    lf.obs = obs;
    lf.inliers = fh.inliers;
    lf.sampled = sampled;
    lf.width = config.width;
    lf.height = config.height;
    lf.keypoint_sigma = config.keypoint_sigma;
    res.lifecycle = lifecycle_step(view, fh.H, lf, state.births, map.next_landmark_id, config.lifecycle);
    state.dirty_views.push_back(view.id);
  }

  state.last_good = res;
  state.last_good->inliers.clear();
  state.last_good->outliers.clear();
  res.t_update = since(t2);
  res.seconds = since(t0);
  return res;
}

}  // namespace ptz

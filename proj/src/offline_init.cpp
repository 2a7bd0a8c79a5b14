#include "ptz/offline_init.hpp"

#include "ptz/error.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <string>

namespace ptz {

namespace {

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

Mat3 exp_so3(const Vec3& w) {
  const double th = w.norm();
  if (th < 1e-300) return Mat3::Identity();
  return Eigen::AngleAxisd(th, w / th).toRotationMatrix();
}

Mat3 K_of(double f, const Vec2& pp) { return Intrinsics{f, pp}.K(); }
Mat3 Kinv_of(double f, const Vec2& pp) { return Intrinsics{f, pp}.K_inv(); }

// Transfer of x_s from view s into view t. Jacobians are with respect to the
// left rotation increments and log focal of both views.
struct Transfer {
  Vec2 r = Vec2::Zero();
  Eigen::Matrix<double, 2, 3> dR_s, dR_t;
  Vec2 df_s, df_t;
  bool valid = false;
};

Transfer transfer(const Mat3& R_s, double f_s, const Mat3& R_t, double f_t, const Vec2& pp, const Vec2& x_s,
                  const Vec2& x_t, bool jacobians) {
  Transfer out;
  const Vec3 m((x_s.x() - pp.x()) / f_s, (x_s.y() - pp.y()) / f_s, 1.0);
  const Mat3 Rts = R_t * R_s.transpose();
  const Vec3 c = Rts * m;
  const Mat3 Kt = K_of(f_t, pp);
  const Vec3 q = Kt * c;
  if (!(q.z() > 1e-12 * q.head<2>().norm())) return out;
  out.valid = true;
  out.r = q.hnormalized() - x_t;
  if (!jacobians) return out;
  Eigen::Matrix<double, 2, 3> dpi;
  dpi << 1.0 / q.z(), 0, -q.x() / (q.z() * q.z()), 0, 1.0 / q.z(), -q.y() / (q.z() * q.z());
  const Mat3 KR = Kt * Rts;
  out.dR_t = dpi * (-Kt * skew(c));
  out.dR_s = dpi * (KR * skew(m));
  out.df_t = dpi * Vec3(f_t * c.x(), f_t * c.y(), 0.0);
  out.df_s = dpi * (KR * Vec3(-m.x(), -m.y(), 0.0));
  return out;
}

struct Cost {
  double sum = 0.0;
  std::size_t terms = 0;
};

Cost evaluate(const BundleProblem& p, const std::vector<Mat3>& R, const std::vector<double>& f) {
  Cost c;
  for (const auto& set : p.matches) {
    const auto a = static_cast<std::size_t>(set.a), b = static_cast<std::size_t>(set.b);
    for (const auto& m : set.matches) {
      const Transfer ab = transfer(R[a], f[a], R[b], f[b], p.pp, m.src, m.dst, false);
      const Transfer ba = transfer(R[b], f[b], R[a], f[a], p.pp, m.dst, m.src, false);
      if (ab.valid) {
        c.sum += ab.r.squaredNorm();
        ++c.terms;
      }
      if (ba.valid) {
        c.sum += ba.r.squaredNorm();
        ++c.terms;
      }
    }
  }
  return c;
}

void check_problem(const BundleProblem& p) {
  const int n = static_cast<int>(p.keyframes.size());
  if (n == 0) throw Error(ErrorCode::EmptyMap, "bundle problem has no keyframes");
  if (p.reference < 0 || p.reference >= n) throw Error(ErrorCode::ConfigError, "reference keyframe out of range");
  std::vector<std::vector<int>> adj(n);
  for (const auto& s : p.matches) {
    if (s.a < 0 || s.a >= n || s.b < 0 || s.b >= n || s.a == s.b)
      throw Error(ErrorCode::ConfigError, "match set refers to an unknown view");
    if (s.matches.empty()) continue;
    adj[s.a].push_back(s.b);
    adj[s.b].push_back(s.a);
  }
  std::vector<char> seen(n, 0);
  std::deque<int> q{p.reference};
  seen[p.reference] = 1;
  while (!q.empty()) {
    const int v = q.front();
    q.pop_front();
    for (int w : adj[v])
      if (!seen[w]) {
        seen[w] = 1;
        q.push_back(w);
      }
  }
  const auto missing = std::count(seen.begin(), seen.end(), 0);
  if (missing > 0)
    throw Error(ErrorCode::DisconnectedGraph, std::to_string(missing) + " keyframes unreachable from the reference");
}

}  // namespace

void initial_guess(const BundleProblem& problem, std::vector<Mat3>& R, std::vector<double>& f) {
  const std::size_t n = problem.keyframes.size();
  R.resize(n);
  f.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (problem.initial_R.size() == n) {
      R[i] = problem.initial_R[i];
    } else {
      const auto& r = problem.keyframes[i].reading;
      R[i] = rotation_from_pan_tilt(r.pan_deg * std::numbers::pi / 180.0, r.tilt_deg * std::numbers::pi / 180.0);
    }
    f[i] = problem.initial_f.size() == n ? problem.initial_f[i] : problem.base_focal * problem.keyframes[i].reading.zoom;
  }
  const Mat3 g = R[static_cast<std::size_t>(problem.reference)].transpose();
  for (auto& r : R) r = nearest_rotation(r * g);
}

double transfer_rms(const BundleProblem& problem, const std::vector<Mat3>& R, const std::vector<double>& f) {
  const Cost c = evaluate(problem, R, f);
  return c.terms ? std::sqrt(c.sum / static_cast<double>(c.terms)) : 0.0;
}

BundleResult bundle_adjust(const BundleProblem& problem, const BundleOptions& options) {
  check_problem(problem);
  const std::size_t nv = problem.keyframes.size();
  const auto ref = static_cast<std::size_t>(problem.reference);

  BundleResult res;
  initial_guess(problem, res.R, res.f);

  // Parameter layout: [3 rotation per non-reference view][1 log focal per view].
  std::vector<int> rot(nv, -1);
  int np = 0;
  for (std::size_t v = 0; v < nv; ++v)
    if (v != ref) {
      rot[v] = np;
      np += 3;
    }
  std::vector<int> foc(nv);
  for (std::size_t v = 0; v < nv; ++v) foc[v] = np++;

  Cost cost = evaluate(problem, res.R, res.f);
  res.residual_terms = cost.terms;
  res.initial_rms = cost.terms ? std::sqrt(cost.sum / cost.terms) : 0.0;
  res.rms = res.initial_rms;
  res.cost_history.push_back(cost.sum);
  if (cost.terms == 0) {
    res.converged = true;
    return res;
  }

  Eigen::MatrixXd H(np, np);
  Eigen::VectorXd g(np);
  double lambda = -1.0;
  std::vector<Mat3> R_try(nv);
  std::vector<double> f_try(nv);

  for (res.iterations = 0; res.iterations < options.max_iterations;) {
    // Normal equations.
    H.setZero();
    g.setZero();
    Eigen::Matrix<double, 2, 8> J;
    int idx[8];
    for (const auto& set : problem.matches) {
      const auto a = static_cast<std::size_t>(set.a), b = static_cast<std::size_t>(set.b);
      for (const auto& m : set.matches) {
        for (int dir = 0; dir < 2; ++dir) {
          const std::size_t s = dir == 0 ? a : b, t = dir == 0 ? b : a;
          const Vec2& xs = dir == 0 ? m.src : m.dst;
          const Vec2& xt = dir == 0 ? m.dst : m.src;
          const Transfer tr = transfer(res.R[s], res.f[s], res.R[t], res.f[t], problem.pp, xs, xt, true);
          if (!tr.valid) continue;
          J.block<2, 3>(0, 0) = tr.dR_s;
          J.col(3) = tr.df_s;
          J.block<2, 3>(0, 4) = tr.dR_t;
          J.col(7) = tr.df_t;
          for (int k = 0; k < 3; ++k) {
            idx[k] = rot[s] < 0 ? -1 : rot[s] + k;
            idx[4 + k] = rot[t] < 0 ? -1 : rot[t] + k;
          }
          idx[3] = foc[s];
          idx[7] = foc[t];
          for (int i = 0; i < 8; ++i) {
            if (idx[i] < 0) continue;
            g(idx[i]) += J.col(i).dot(tr.r);
            for (int j = 0; j < 8; ++j)
              if (idx[j] >= 0) H(idx[i], idx[j]) += J.col(i).dot(J.col(j));
          }
        }
      }
    }
    if (lambda < 0) lambda = 1e-3 * H.diagonal().maxCoeff();
    if (g.lpNorm<Eigen::Infinity>() < 1e-15 * (1.0 + cost.sum)) {
      res.converged = true;
      break;
    }

    // Inner loop: raise damping until a step lowers the cost.
    bool accepted = false;
    while (res.iterations < options.max_iterations) {
      ++res.iterations;
      Eigen::MatrixXd A = H;
      for (int i = 0; i < np; ++i) A(i, i) += lambda * std::max(H(i, i), 1e-12);
      const Eigen::VectorXd delta = A.ldlt().solve(-g);
      if (!delta.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      for (std::size_t v = 0; v < nv; ++v) {
        R_try[v] = rot[v] < 0 ? res.R[v] : exp_so3(delta.segment<3>(rot[v])) * res.R[v];
        f_try[v] = res.f[v] * std::exp(delta(foc[v]));
      }
      const Cost c = evaluate(problem, R_try, f_try);
      if (c.terms == cost.terms && c.sum < cost.sum) {
        const double rel = (cost.sum - c.sum) / cost.sum;
        res.R.swap(R_try);
        res.f.swap(f_try);
        cost = c;
        res.cost_history.push_back(cost.sum);
        lambda = std::max(lambda * 0.2, 1e-15);
        accepted = true;
        if (rel < options.relative_tolerance || cost.sum < 1e-28) res.converged = true;
        break;
      }
      lambda *= 10.0;
      if (lambda > 1e20) break;
    }
    if (!accepted || res.converged) {
      // No downhill step at any damping: a minimum to machine precision.
      if (!accepted && lambda > 1e20) res.converged = true;
      break;
    }
  }
  for (auto& r : res.R) r = nearest_rotation(r);
  res.rms = std::sqrt(cost.sum / cost.terms);
  return res;
}

std::vector<CrossViewMatches> match_keyframes(const BundleProblem& problem, const KeyframeMatchOptions& options,
                                              Rng& rng) {
  std::vector<Mat3> R;
  std::vector<double> f;
  initial_guess(problem, R, f);
  const std::size_t n = problem.keyframes.size();

  std::vector<ViewMap> views(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& o : problem.keyframes[i].obs) {
      Landmark lm;
      lm.pos = o.pos;
      lm.desc = o.desc;
      views[i].landmarks.push_back(std::move(lm));
    }
  }

  std::vector<CrossViewMatches> out;
  const int grid = 8;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const double ratio = f[a] > f[b] ? f[a] / f[b] : f[b] / f[a];
      if (ratio > options.max_focal_ratio) continue;
      // Predicted footprint of b inside a.
      const Mat3 h_ba = K_of(f[a], problem.pp) * R[a] * R[b].transpose() * Kinv_of(f[b], problem.pp);
      int inside = 0;
      for (int i = 0; i <= grid; ++i)
        for (int j = 0; j <= grid; ++j) {
          const Vec3 q = h_ba * Vec3(options.width * i / double(grid), options.height * j / double(grid), 1.0);
          if (q.z() <= 0) continue;
          const Vec2 p = q.hnormalized();
          inside += p.x() >= 0 && p.x() < options.width && p.y() >= 0 && p.y() < options.height;
        }
      if (inside < options.min_overlap * (grid + 1) * (grid + 1)) continue;

      const auto lm = match_descriptors(problem.keyframes[b].obs, views[a], options.match, rng);
      std::vector<PointMatch> pm;
      pm.reserve(lm.size());
      for (const auto& m : lm) pm.push_back(PointMatch{views[a].landmarks[m.landmark].pos, m.match.src, {}, {}});
      const RansacResult rr = ransac_homography(pm, options.ransac, rng);
      if (!rr.ok) continue;
      CrossViewMatches set;
      set.a = static_cast<int>(a);
      set.b = static_cast<int>(b);
      for (auto i : rr.inliers) set.matches.push_back(pm[i]);
      out.push_back(std::move(set));
    }
  }
  return out;
}

SceneMap build_scene_map(const BundleProblem& problem, const BundleResult& result, double landmark_sigma) {
  SceneMap map;
  map.reference = problem.reference;
  const auto ref = static_cast<std::size_t>(problem.reference);
  const Intrinsics K_r{result.f[ref], problem.pp};
  for (std::size_t i = 0; i < problem.keyframes.size(); ++i) {
    ViewMap v;
    v.id = static_cast<std::int32_t>(i);
    v.key = problem.keyframes[i].reading;
    v.K = Intrinsics{result.f[i], problem.pp};
    v.R = result.R[i];
    v.H_rk = compose_rotation_homography(K_r, result.R[ref], result.R[i], v.K);
    for (const auto& o : problem.keyframes[i].obs) {
      Landmark lm;
      lm.id = map.next_landmark_id++;
      lm.pos = o.pos;
      lm.desc = o.desc;
      lm.P = landmark_sigma * landmark_sigma * Mat2::Identity();
      lm.original = true;
      v.landmarks.push_back(std::move(lm));
    }
    map.views.push_back(std::move(v));
  }
  return map;
}

Homography rectify_from_vanishing(const Vec3& vp1, const Vec3& vp2, const Intrinsics& K_r) {
  const Mat3 Kinv = K_r.K_inv();
  if (vp1.norm() == 0 || vp2.norm() == 0)
    throw Error(ErrorCode::DegenerateVanishingGeometry, "zero vanishing point");
  const Vec3 d1 = (Kinv * vp1).normalized();
  const Vec3 d2 = (Kinv * vp2).normalized();
  const Vec3 cross = d1.cross(d2);
  if (cross.norm() < 1e-9)
    throw Error(ErrorCode::DegenerateVanishingGeometry, "vanishing points coincide");
  // Plane normal, oriented so that the lower image half sees the plane.
  Vec3 n_down = cross.normalized();
  const double side = n_down.dot(Vec3(0.0, 0.5, 1.0).normalized());
  if (std::abs(side) < 1e-9)
    throw Error(ErrorCode::DegenerateVanishingGeometry, "plane seen edge-on");
  if (side < 0) n_down = -n_down;
  Vec3 r2 = d2 - d2.dot(n_down) * n_down;
  if (r2.norm() < 1e-12) throw Error(ErrorCode::DegenerateVanishingGeometry, "second direction off the plane");
  r2.normalize();
  if (r2.dot(Vec3(0.0, -1.0, 1.0)) < 0) r2 = -r2;
  const Vec3 r1 = r2.cross(-n_down);
  Mat3 Rw;
  Rw.row(0) = r1.transpose();
  Rw.row(1) = r2.transpose();
  Rw.row(2) = n_down.transpose();
  return Homography::from(Rw * Kinv);
}

Homography scale_from_known_distance(const Homography& H_p, const Vec2& p1, const Vec2& p2, double L) {
  if (!(L > 0)) throw Error(ErrorCode::ConfigError, "known distance must be positive");
  const Vec2 a = H_p.apply(p1);
  const Vec2 b = H_p.apply(p2);
  const Vec2 d = b - a;
  if (d.norm() < 1e-12 * (1.0 + a.norm()))
    throw Error(ErrorCode::CoincidentPoints, "registration points coincide after rectification");
  const double s = L / d.norm();
  const double c = d.x() / d.norm(), sn = d.y() / d.norm();
  Mat3 Hs;
  Hs << s * c, s * sn, -s * (c * a.x() + sn * a.y()),
       -s * sn, s * c, -s * (-sn * a.x() + c * a.y()),
        0, 0, 1;
  return Homography::from(Hs);
}

WorldRegistration register_world(const Vec3& vp1, const Vec3& vp2, const Intrinsics& K_r, const Vec2& p1,
                                 const Vec2& p2, double L) {
  WorldRegistration w;
  w.H_p = rectify_from_vanishing(vp1, vp2, K_r);
  w.H_s = scale_from_known_distance(w.H_p, p1, p2, L);
  w.H_W = w.H_s * w.H_p;
  w.L = L;
  w.p1 = p1;
  w.p2 = p2;
  return w;
}

}  // namespace ptz

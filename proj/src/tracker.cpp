#include "ptz/tracker.hpp"

#include "ptz/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>

namespace ptz {

const char* to_string(TrackStatus s) {
  switch (s) {
    case TrackStatus::Tentative: return "tentative";
    case TrackStatus::Confirmed: return "confirmed";
    case TrackStatus::Lost: return "lost";
  }
  return "?";
}

Mat4 MotionModel::A(double dt) const {
  Mat4 a = Mat4::Identity();
  a(0, 2) = dt;
  a(1, 3) = dt;
  return a;
}

Mat4 MotionModel::Q(double dt) const {
  const double q = sigma_a * sigma_a;
  const double d2 = dt * dt, d3 = d2 * dt, d4 = d3 * dt;
  Mat4 m = Mat4::Zero();
  m(0, 0) = m(1, 1) = q * d4 / 4.0;
  m(0, 2) = m(2, 0) = m(1, 3) = m(3, 1) = q * d3 / 2.0;
  m(2, 2) = m(3, 3) = q * d2;
  return m;
}

void predict(TargetState& track, double dt, const MotionModel& model) {
  if (!(dt > 0)) throw Error(ErrorCode::ConfigError, "non-positive time step");
  const Mat4 A = model.A(dt);
  track.s = A * track.s;
  track.P = A * track.P * A.transpose() + model.Q(dt);
  track.P = 0.5 * (track.P + track.P.transpose());
}

TrackProjection project_track(const TargetState& track, const Mat3& G, const Mat2& V) {
  const Vec2 X = track.s.head<2>();
  const Vec3 q = G * X.homogeneous();
  if (!(q.z() > 1e-12 * q.norm())) throw Error(ErrorCode::BehindCamera, "track is behind the camera");
  TrackProjection out;
  out.p = q.hnormalized();
  out.Gt.leftCols<2>() = linearize_homography_at(G, X);
  out.S = out.Gt * track.P * out.Gt.transpose() + V;
  out.S = 0.5 * (out.S + out.S.transpose());
  return out;
}

TrackProjection project_track_image(const TargetState& track, const Mat2& V) {
  TrackProjection out;
  out.p = track.s.head<2>();
  out.Gt.leftCols<2>() = Mat2::Identity();
  out.S = track.P.topLeftCorner<2, 2>() + V;
  out.S = 0.5 * (out.S + out.S.transpose());
  return out;
}

namespace {

struct Pair {
  double d2 = 0.0;
  double g = 0.0;
};

// Gated Mahalanobis distances and likelihoods; d2 < 0 marks pairs outside the gate.
std::vector<std::vector<Pair>> gate_pairs(std::span<const TrackProjection> tracks, std::span<const Detection> dets,
                                          double gate, const std::vector<char>* allowed) {
  std::vector<std::vector<Pair>> out(tracks.size(), std::vector<Pair>(dets.size(), Pair{-1.0, 0.0}));
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    const Mat2 S_inv = tracks[i].S.inverse();
    const double norm = 1.0 / (2.0 * std::numbers::pi * std::sqrt(tracks[i].S.determinant()));
    for (std::size_t j = 0; j < dets.size(); ++j) {
      if (allowed && !(*allowed)[i * dets.size() + j]) continue;
      const Vec2 nu = dets[j].p - tracks[i].p;
      const double d2 = nu.dot(S_inv * nu);
      if (!(d2 <= gate)) continue;
      out[i][j] = Pair{d2, norm * std::exp(-0.5 * d2)};
    }
  }
  return out;
}

Mat2 checked_inverse(const Mat2& S) {
  const double det = S.determinant();
  if (!(det > 1e-300) || !std::isfinite(det)) throw Error(ErrorCode::SingularS, "innovation covariance is singular");
  return S.inverse();
}

// Gain and Joseph-form posterior covariance for one full-weight measurement.
void gain_and_posterior(const TargetState& track, const TrackProjection& proj, const Mat2& V,
                        Eigen::Matrix<double, 4, 2>& W, Mat4& Pc) {
  W = track.P * proj.Gt.transpose() * checked_inverse(proj.S);
  const Mat4 IKH = Mat4::Identity() - W * proj.Gt;
  Pc = IKH * track.P * IKH.transpose() + W * V * W.transpose();
}

}  // namespace

Association associate_cheap_jpdaf(std::span<const TrackProjection> tracks, std::span<const Detection> dets,
                                  double gate, double B, const std::vector<char>* allowed) {
  const auto pairs = gate_pairs(tracks, dets, gate, allowed);
  Association a;
  a.beta.assign(tracks.size(), std::vector<double>(dets.size(), 0.0));
  a.beta0.assign(tracks.size(), 1.0);
  a.detection_gated.assign(dets.size(), 0);
  std::vector<double> st(tracks.size(), 0.0), sd(dets.size(), 0.0);
  for (std::size_t i = 0; i < tracks.size(); ++i)
    for (std::size_t j = 0; j < dets.size(); ++j)
      if (pairs[i][j].d2 >= 0) {
        st[i] += pairs[i][j].g;
        sd[j] += pairs[i][j].g;
        a.detection_gated[j] = 1;
      }
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < dets.size(); ++j) {
      if (pairs[i][j].d2 < 0) continue;
      const double g = pairs[i][j].g;
      const double den = st[i] + sd[j] - g + B;
      a.beta[i][j] = den > 0 ? g / den : 0.0;
      sum += a.beta[i][j];
    }
    a.beta0[i] = std::max(0.0, 1.0 - sum);
  }
  return a;
}

Association associate_nearest(std::span<const TrackProjection> tracks, std::span<const Detection> dets, double gate,
                              const std::vector<char>* allowed) {
  const auto pairs = gate_pairs(tracks, dets, gate, allowed);
  Association a;
  a.beta.assign(tracks.size(), std::vector<double>(dets.size(), 0.0));
  a.beta0.assign(tracks.size(), 1.0);
  a.detection_gated.assign(dets.size(), 0);
  struct Cand {
    double d2;
    std::size_t i, j;
  };
  std::vector<Cand> cands;
  for (std::size_t i = 0; i < tracks.size(); ++i)
    for (std::size_t j = 0; j < dets.size(); ++j)
      if (pairs[i][j].d2 >= 0) {
        cands.push_back({pairs[i][j].d2, i, j});
        a.detection_gated[j] = 1;
      }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) { return x.d2 < y.d2; });
  std::vector<char> track_used(tracks.size(), 0), det_used(dets.size(), 0);
  for (const auto& c : cands) {
    if (track_used[c.i] || det_used[c.j]) continue;
    track_used[c.i] = det_used[c.j] = 1;
    a.beta[c.i][c.j] = 1.0;
    a.beta0[c.i] = 0.0;
  }
  return a;
}

void ekf_update(TargetState& track, const TrackProjection& proj, const Vec2& z, const Mat2& V) {
  Eigen::Matrix<double, 4, 2> W;
  Mat4 Pc;
  gain_and_posterior(track, proj, V, W, Pc);
  track.s += W * (z - proj.p);
  track.P = Pc;
}

void update(TargetState& track, const TrackProjection& proj, std::span<const double> beta, double beta0,
            std::span<const Detection> dets, const Mat2& V) {
  Eigen::Matrix<double, 4, 2> W;
  Mat4 Pc;
  gain_and_posterior(track, proj, V, W, Pc);
  Vec2 nu_bar = Vec2::Zero();
  Mat2 spread = Mat2::Zero();
  for (std::size_t j = 0; j < dets.size(); ++j) {
    if (beta[j] == 0.0) continue;
    const Vec2 nu = dets[j].p - proj.p;
    nu_bar += beta[j] * nu;
    spread += beta[j] * (nu * nu.transpose());
  }
  spread -= nu_bar * nu_bar.transpose();
  track.s += W * nu_bar;
  track.P = beta0 * track.P + (1.0 - beta0) * Pc + W * spread * W.transpose();
  track.P = 0.5 * (track.P + track.P.transpose());
}

Tracker::Tracker(TrackerConfig config) : cfg_(std::move(config)) {}

Association Tracker::associate(std::span<const TrackProjection> proj, std::span<const Detection> dets,
                               const std::vector<char>* allowed) const {
  if (cfg_.association == AssociationMethod::NearestNeighbor)
    return associate_nearest(proj, dets, cfg_.gate, allowed);
  double peak = 0.0;
  for (const auto& p : proj) peak = std::max(peak, 1.0 / (2.0 * std::numbers::pi * std::sqrt(p.S.determinant())));
  return associate_cheap_jpdaf(proj, dets, cfg_.gate, cfg_.clutter_bias * peak, allowed);
}

void Tracker::manage(std::vector<char>& updated) {
  const std::uint32_t window = cfg_.confirm_window >= 32 ? ~0u : ((1u << cfg_.confirm_window) - 1u);
  for (std::size_t i = 0; i < tracks_.size(); ++i) {
    TargetState& t = tracks_[i];
    const bool hit = updated[i] != 0;
    t.recent = (t.recent << 1) | (hit ? 1u : 0u);
    if (hit) {
      ++t.hits;
      t.misses = 0;
    } else {
      ++t.misses;
    }
    if (t.status == TrackStatus::Tentative) {
      if (std::popcount(t.recent & window) >= cfg_.confirm_hits)
        t.status = TrackStatus::Confirmed;
      else if (t.age >= cfg_.confirm_window)
        t.status = TrackStatus::Lost;
    } else if (t.status == TrackStatus::Confirmed && t.misses >= cfg_.max_misses) {
      t.status = TrackStatus::Lost;
    }
  }
  std::erase_if(tracks_, [](const TargetState& t) { return t.status == TrackStatus::Lost; });
}

void Tracker::prune_duplicates(const std::vector<Vec2>& p, const std::vector<TrackProjection>& proj,
                               const std::vector<char>& valid) {
  std::vector<char> close(tracks_.size(), 0);
  for (std::size_t i = 0; i < tracks_.size(); ++i)
    for (std::size_t j = i + 1; j < tracks_.size(); ++j) {
      if (!valid[i] || !valid[j]) continue;
      const Vec2 d = p[i] - p[j];
      if (d.dot((proj[i].S + proj[j].S).ldlt().solve(d)) >= cfg_.merge_gate) continue;
      // ids grow with age, so the higher id is the younger track
      close[tracks_[i].id > tracks_[j].id ? i : j] = 1;
    }
  for (std::size_t i = 0; i < tracks_.size(); ++i) {
    tracks_[i].shadowed = close[i] ? tracks_[i].shadowed + 1 : 0;
    if (tracks_[i].shadowed >= cfg_.merge_frames) tracks_[i].status = TrackStatus::Lost;
  }
}

bool Tracker::near_track(const Vec2& z, const std::vector<TrackProjection>& proj, const std::vector<char>& valid) const {
  for (std::size_t i = 0; i < proj.size(); ++i) {
    if (!valid[i]) continue;
    const Vec2 nu = z - proj[i].p;
    if (nu.dot(proj[i].S.ldlt().solve(nu)) <= cfg_.birth_gate) return true;
  }
  return false;
}

std::vector<TrackRecord> Tracker::step(const TrackerInput& in) {
  double dt = 0.0;
  if (last_time_) dt = in.timestamp - *last_time_;
  last_time_ = in.timestamp;
  return cfg_.mode == TrackingMode::World ? step_world(in, dt) : step_image(in, dt);
}

std::vector<TrackRecord> Tracker::step_world(const TrackerInput& in, double dt) {
  for (auto& t : tracks_) {
    ++t.age;
    if (dt > 0) predict(t, dt, cfg_.motion);
  }
  std::vector<char> updated(tracks_.size(), 0);
  if (!in.G) {
    manage(updated);
    return {};
  }
  const Mat3& G = *in.G;
  const Mat2 V = cfg_.V * (in.stale ? cfg_.stale_inflation : 1.0);

  // Single-scale detection: keep boxes whose height agrees with the homology.
  std::vector<Detection> dets;
  std::optional<Homology> hom;
  try {
    hom = build_homology(G, in.K, cfg_.mu, cfg_.horizon);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateHomology) throw;
  }
  for (const Detection& d : in.dets) {
    if (!hom) {
      dets.push_back(d);
      continue;
    }
    try {
      const double h = estimate_scale(*hom, G, d.p).height_px;
      if (h > 0 && std::abs(d.height / h - 1.0) <= cfg_.scale_gate) dets.push_back(d);
    } catch (const Error&) {
    }
  }

  std::vector<TrackProjection> proj(tracks_.size());
  std::vector<char> valid(tracks_.size(), 0);
  for (std::size_t i = 0; i < tracks_.size(); ++i) {
    try {
      proj[i] = project_track(tracks_[i], G, V);
      valid[i] = 1;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::BehindCamera) throw;
    }
  }
  std::vector<char> allowed(tracks_.size() * dets.size(), 0);
  for (std::size_t i = 0; i < tracks_.size(); ++i)
    for (std::size_t j = 0; j < dets.size(); ++j) allowed[i * dets.size() + j] = valid[i];
  const Association a = associate(proj, dets, &allowed);

  for (std::size_t i = 0; i < tracks_.size(); ++i) {
    if (!valid[i] || a.beta0[i] >= 1.0) continue;
    update(tracks_[i], proj[i], a.beta[i], a.beta0[i], dets, V);
    updated[i] = 1;
  }
  std::vector<Vec2> now(tracks_.size(), Vec2::Zero());
  std::vector<char> placed = valid;
  for (std::size_t i = 0; i < tracks_.size(); ++i) {
    if (!valid[i]) continue;
    try {
      now[i] = world_to_frame(G, tracks_[i].s.head<2>());
    } catch (const Error&) {
      placed[i] = 0;
    }
  }
  prune_duplicates(now, proj, placed);
  manage(updated);

  const Mat3 G_inv = G.inverse();
  for (std::size_t j = 0; j < dets.size(); ++j) {
    if (a.detection_gated[j] || near_track(dets[j].p, proj, valid)) continue;
    Vec2 X;
    try {
      X = frame_to_world(G, dets[j].p);
    } catch (const Error&) {
      continue;
    }
    TargetState t;
    t.id = next_id_++;
    t.s << X.x(), X.y(), 0.0, 0.0;
    const Mat2 J = linearize_homography_at(G_inv, dets[j].p);
    t.P = Mat4::Zero();
    t.P.topLeftCorner<2, 2>() = J * V * J.transpose();
    t.P.bottomRightCorner<2, 2>() = cfg_.init_speed_sd * cfg_.init_speed_sd * Mat2::Identity();
    t.age = 1;
    t.hits = 1;
    t.recent = 1;
    tracks_.push_back(t);
  }

  std::vector<TrackRecord> out;
  for (const auto& t : tracks_) {
    if (t.status != TrackStatus::Confirmed) continue;
    TrackRecord r;
    r.frame = in.frame;
    r.id = t.id;
    r.X = t.s[0];
    r.Y = t.s[1];
    try {
      const Vec2 p = world_to_frame(G, t.s.head<2>());
      r.x = p.x();
      r.y = p.y();
      r.height_px = hom ? estimate_scale(*hom, G, p).height_px : 0.0;
    } catch (const Error&) {
      continue;
    }
    r.status = t.status;
    out.push_back(r);
  }
  return out;
}

std::vector<TrackRecord> Tracker::step_image(const TrackerInput& in, double dt) {
  const MotionModel model{cfg_.sigma_a_px};
  for (auto& t : tracks_) {
    ++t.age;
    if (dt > 0) predict(t, dt, model);
  }
  const Mat2 V = cfg_.V * (in.stale ? cfg_.stale_inflation : 1.0);
  const auto& dets = in.dets;
  std::vector<TrackProjection> proj(tracks_.size());
  for (std::size_t i = 0; i < tracks_.size(); ++i) proj[i] = project_track_image(tracks_[i], V);
  // Scale search around the previous frame's scale.
  std::vector<char> allowed(tracks_.size() * dets.size(), 0);
  for (std::size_t i = 0; i < tracks_.size(); ++i)
    for (std::size_t j = 0; j < dets.size(); ++j)
      allowed[i * dets.size() + j] = std::abs(dets[j].height / tracks_[i].scale - 1.0) <= cfg_.scale_gate;
  const Association a = associate(proj, dets, &allowed);

  std::vector<char> updated(tracks_.size(), 0);
  for (std::size_t i = 0; i < tracks_.size(); ++i) {
    if (a.beta0[i] >= 1.0) continue;
    update(tracks_[i], proj[i], a.beta[i], a.beta0[i], dets, V);
    double scale = a.beta0[i] * tracks_[i].scale;
    for (std::size_t j = 0; j < dets.size(); ++j) scale += a.beta[i][j] * dets[j].height;
    tracks_[i].scale = scale;
    updated[i] = 1;
  }
  std::vector<Vec2> now(tracks_.size());
  for (std::size_t i = 0; i < tracks_.size(); ++i) now[i] = tracks_[i].s.head<2>();
  const std::vector<char> valid(tracks_.size(), 1);
  prune_duplicates(now, proj, valid);
  manage(updated);

  for (std::size_t j = 0; j < dets.size(); ++j) {
    if (a.detection_gated[j] || near_track(dets[j].p, proj, valid)) continue;
    TargetState t;
    t.id = next_id_++;
    t.s << dets[j].p.x(), dets[j].p.y(), 0.0, 0.0;
    t.P = Mat4::Zero();
    t.P.topLeftCorner<2, 2>() = V;
    t.P.bottomRightCorner<2, 2>() = cfg_.init_speed_sd_px * cfg_.init_speed_sd_px * Mat2::Identity();
    t.age = 1;
    t.hits = 1;
    t.recent = 1;
    t.scale = dets[j].height;
    tracks_.push_back(t);
  }

  std::vector<TrackRecord> out;
  for (const auto& t : tracks_) {
    if (t.status != TrackStatus::Confirmed) continue;
    TrackRecord r;
    r.frame = in.frame;
    r.id = t.id;
    r.X = r.Y = std::numeric_limits<double>::quiet_NaN();
    r.x = t.s[0];
    r.y = t.s[1];
    r.height_px = t.scale;
    r.status = t.status;
    out.push_back(r);
  }
  return out;
}

}  // namespace ptz

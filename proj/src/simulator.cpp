#include "ptz/simulator.hpp"

#include "ptz/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ptz {

namespace {

constexpr double kBinDeg = 2.0;

// Solid angle of a W x H image at focal f (pinhole, centred principal point).
double image_solid_angle(double w, double h, double f) {
  const double a = std::atan(w / (2.0 * f));
  const double b = std::atan(h / (2.0 * f));
  return 4.0 * std::asin(std::sin(a) * std::sin(b));
}

Vec3 direction(double pan, double elev) {
  return Vec3(std::sin(pan) * std::cos(elev), -std::sin(elev), std::cos(pan) * std::cos(elev));
}

void angles_of(const Vec3& d, double& pan, double& elev) {
  pan = std::atan2(d.x(), d.z());
  elev = std::asin(std::clamp(-d.y() / d.norm(), -1.0, 1.0));
}

bool in_image(const Vec2& p, int w, int h) { return p.x() >= 0 && p.x() < w && p.y() >= 0 && p.y() < h; }

}  // namespace

Simulator::Simulator(Scenario scenario) : sc_(std::move(scenario)) {
  if (sc_.min_focal <= 0 || sc_.max_focal < sc_.min_focal)
    throw Error(ErrorCode::ConfigError, "focal range of the landmark field");
  if (sc_.min_size_px <= 0 || sc_.max_size_px <= sc_.min_size_px)
    throw Error(ErrorCode::ConfigError, "landmark size range");
  if (sc_.field_pan_max_deg <= sc_.field_pan_min_deg || sc_.field_tilt_max_deg <= sc_.field_tilt_min_deg)
    throw Error(ErrorCode::ConfigError, "landmark field extent");
  std::sort(sc_.trajectory.begin(), sc_.trajectory.end(),
            [](const CameraKeypose& a, const CameraKeypose& b) { return a.frame < b.frame; });
  std::sort(sc_.events.begin(), sc_.events.end(),
            [](const SceneChangeEvent& a, const SceneChangeEvent& b) { return a.frame < b.frame; });
  size_min_ = sc_.min_size_px / sc_.max_focal;
  size_max_ = sc_.max_size_px / sc_.min_focal;
  build_field();
}

Intrinsics Simulator::intrinsics(double focal) const {
  return Intrinsics{focal, Vec2(0.5 * sc_.width, 0.5 * sc_.height)};
}

int Simulator::level_of(double size) const {
  return static_cast<int>(std::floor(std::log2(size / size_min_)));
}

Simulator::Ray Simulator::make_ray(Rng& rng, double pan_min, double pan_max, double tilt_min,
                                   double tilt_max, std::int64_t born) {
  Ray r;
  r.id = static_cast<std::int64_t>(rays_.size());  // overwritten by the caller
  const double pan = rng.uniform(pan_min, pan_max) * kDegToRad;
  const double elev = std::asin(rng.uniform(std::sin(tilt_min * kDegToRad), std::sin(tilt_max * kDegToRad)));
  r.dir = direction(pan, elev);
  const double a = 1.0 / (size_min_ * size_min_);
  const double b = 1.0 / (size_max_ * size_max_);
  r.size = 1.0 / std::sqrt(a - rng.uniform() * (a - b));  // density proportional to s^-3
  r.base.resize(sc_.descriptor_dim);
  for (auto& x : r.base) x = static_cast<float>(rng.normal());
  r.born = born;
  if (sc_.landmark_lifetime_frames > 0) {
    const double life = -std::log(1.0 - rng.uniform()) * sc_.landmark_lifetime_frames;
    r.died = born + 1 + static_cast<std::int64_t>(life);
  }
  return r;
}

void Simulator::spawn_with_successors(Ray ray, Rng& rng, std::vector<Ray>& out) {
  while (true) {
    const std::int64_t died = ray.died;
    out.push_back(std::move(ray));
    if (died >= sc_.frames) return;
    ray = make_ray(rng, sc_.field_pan_min_deg, sc_.field_pan_max_deg, sc_.field_tilt_min_deg,
                   sc_.field_tilt_max_deg, died);
  }
}

void Simulator::build_field() {
  Rng rng(mix_seed({sc_.seed, 0x11}));
  const double a = 1.0 / (size_min_ * size_min_);
  const double b = 1.0 / (size_max_ * size_max_);
  const double f = sc_.min_focal;
  const double visible_fraction =
      (std::pow(f / sc_.min_size_px, 2) - std::pow(f / sc_.max_size_px, 2)) / (a - b);
  density_ = sc_.landmarks_per_frame / (image_solid_angle(sc_.width, sc_.height, f) * visible_fraction);
  const double field_sr = (sc_.field_pan_max_deg - sc_.field_pan_min_deg) * kDegToRad *
                          (std::sin(sc_.field_tilt_max_deg * kDegToRad) - std::sin(sc_.field_tilt_min_deg * kDegToRad));
  const auto n0 = static_cast<std::size_t>(std::llround(density_ * field_sr));

  std::vector<Ray> rays;
  rays.reserve(n0);
  for (std::size_t i = 0; i < n0; ++i)
    spawn_with_successors(make_ray(rng, sc_.field_pan_min_deg, sc_.field_pan_max_deg, sc_.field_tilt_min_deg,
                                   sc_.field_tilt_max_deg, 0),
                          rng, rays);

  for (const auto& ev : sc_.events) {
    std::size_t killed = 0;
    for (auto& r : rays) {
      if (r.born > ev.frame || r.died <= ev.frame) continue;
      double pan, elev;
      angles_of(r.dir, pan, elev);
      pan /= kDegToRad;
      elev /= kDegToRad;
      if (pan < ev.pan_min_deg || pan > ev.pan_max_deg || elev < ev.tilt_min_deg || elev > ev.tilt_max_deg)
        continue;
      r.died = ev.frame;
      ++killed;
    }
    for (std::size_t i = 0; i < killed; ++i)
      spawn_with_successors(make_ray(rng, ev.pan_min_deg, ev.pan_max_deg, ev.tilt_min_deg, ev.tilt_max_deg, ev.frame),
                            rng, rays);
  }
  rays_ = std::move(rays);
  for (std::size_t i = 0; i < rays_.size(); ++i) rays_[i].id = static_cast<std::int64_t>(i);
  index_rays();
}

void Simulator::index_rays() {
  bins_.clear();
  for (std::size_t i = 0; i < rays_.size(); ++i) {
    double pan, elev;
    angles_of(rays_[i].dir, pan, elev);
    const BinKey key{level_of(rays_[i].size), static_cast<int>(std::floor(pan / kDegToRad / kBinDeg)),
                     static_cast<int>(std::floor(elev / kDegToRad / kBinDeg))};
    bins_[key].push_back(i);
  }
}

std::size_t Simulator::alive_rays(std::int64_t t) const {
  return static_cast<std::size_t>(
      std::count_if(rays_.begin(), rays_.end(), [t](const Ray& r) { return r.born <= t && t < r.died; }));
}

const std::vector<float>& Simulator::drift_at(Ray& ray, std::int64_t t) {
  if (ray.drift.empty()) {
    ray.drift.assign(sc_.descriptor_dim, 0.0f);
    ray.drift_t = ray.born;
  }
  if (sc_.drift_rate > 0 && t > ray.drift_t) {
    // Brownian increment over (drift_t, t]; per-component variance so that one
    // frame moves the descriptor by about drift_rate in norm.
    Rng rng(mix_seed({sc_.seed, 0x44, static_cast<std::uint64_t>(ray.id), static_cast<std::uint64_t>(ray.drift_t),
                      static_cast<std::uint64_t>(t)}));
    const double sd = sc_.drift_rate / std::sqrt(static_cast<double>(sc_.descriptor_dim)) *
                      std::sqrt(static_cast<double>(t - ray.drift_t));
    for (auto& x : ray.drift) x += static_cast<float>(sd * rng.normal());
    ray.drift_t = t;
  }
  return ray.drift;
}

CameraPose Simulator::pose_at(std::int64_t frame) const {
  if (sc_.trajectory.empty()) return CameraPose{0.0, 0.0, sc_.reference_focal};
  const auto& traj = sc_.trajectory;
  std::int64_t t = frame;
  const std::int64_t period = traj.back().frame;
  if (sc_.loop_trajectory && period > 0 && t > period) t %= period;
  auto to_pose = [](const CameraKeypose& k) {
    return CameraPose{k.pan_deg * kDegToRad, k.tilt_deg * kDegToRad, k.focal};
  };
  if (t <= traj.front().frame) return to_pose(traj.front());
  if (t >= traj.back().frame) return to_pose(traj.back());
  auto hi = std::upper_bound(traj.begin(), traj.end(), t,
                             [](std::int64_t v, const CameraKeypose& k) { return v < k.frame; });
  auto lo = hi - 1;
  const double u = static_cast<double>(t - lo->frame) / static_cast<double>(hi->frame - lo->frame);
  CameraPose p;
  p.pan = ((1 - u) * lo->pan_deg + u * hi->pan_deg) * kDegToRad;
  p.tilt = ((1 - u) * lo->tilt_deg + u * hi->tilt_deg) * kDegToRad;
  p.focal = std::exp((1 - u) * std::log(lo->focal) + u * std::log(hi->focal));
  return p;
}

std::vector<CameraPose> Simulator::keyframe_poses() const {
  std::vector<CameraPose> out;
  for (const auto& level : sc_.keyframes)
    for (double tilt : level.tilts_deg)
      for (double pan : level.pans_deg) out.push_back(CameraPose{pan * kDegToRad, tilt * kDegToRad, level.focal});
  return out;
}

Mat3 Simulator::ground_to_frame(const CameraPose& pose) const {
  Mat3 M;
  M << 1, 0, 0, 0, 0, sc_.camera_height, 0, 1, 0;
  return intrinsics(pose.focal).K() * rotation_from_pan_tilt(pose.pan, pose.tilt) * M;
}

Mat3 Simulator::frame_to_reference(const CameraPose& pose) const {
  return reference_intrinsics().K() * rotation_from_pan_tilt(pose.pan, pose.tilt).transpose() *
         intrinsics(pose.focal).K_inv();
}

Vec2 Simulator::project_point(const CameraPose& pose, const Vec3& p) const {
  const Vec3 c = rotation_from_pan_tilt(pose.pan, pose.tilt) * p;
  if (c.z() <= 0) throw Error(ErrorCode::BehindCamera, "point behind the camera");
  return (intrinsics(pose.focal).K() * c).hnormalized();
}

RegistrationInputs Simulator::registration_inputs() const {
  const Mat3 Kr = reference_intrinsics().K();
  RegistrationInputs in;
  in.vp_x = Kr * Vec3::UnitX();
  in.vp_y = Kr * Vec3::UnitZ();
  const CameraPose ref{0.0, 0.0, sc_.reference_focal};
  const Mat3 g = ground_to_frame(ref);
  in.p1 = (g * sc_.registration_a.homogeneous()).hnormalized();
  in.p2 = (g * sc_.registration_b.homogeneous()).hnormalized();
  in.L = (sc_.registration_b - sc_.registration_a).norm();
  return in;
}

Vec2 Simulator::to_registered(const Vec2& ground) const {
  const Vec2 d = sc_.registration_b - sc_.registration_a;
  const double th = std::atan2(d.y(), d.x());
  const Vec2 q = ground - sc_.registration_a;
  return Vec2(std::cos(th) * q.x() + std::sin(th) * q.y(), -std::sin(th) * q.x() + std::cos(th) * q.y());
}

ActuatorReading Simulator::actuator_reading(const CameraPose& pose, Rng& rng) const {
  const auto& n = sc_.actuator;
  auto quantize = [&](double v) {
    return n.angle_step_deg > 0 ? std::round(v / n.angle_step_deg) * n.angle_step_deg : v;
  };
  ActuatorReading r;
  r.pan_deg = quantize(pose.pan / kDegToRad + n.pan_sd_deg * rng.normal());
  r.tilt_deg = quantize(pose.tilt / kDegToRad + n.tilt_sd_deg * rng.normal());
  const double mag = pose.focal / sc_.reference_focal;
  r.zoom = mag * (1.0 + n.zoom_rel_sd * std::max(0.0, std::log2(mag)) * rng.normal());
  r.pan_sd = n.pan_sd_deg;
  r.tilt_sd = n.tilt_sd_deg;
  r.zoom_sd = n.zoom_rel_sd;
  return r;
}

void Simulator::render_landmarks(const CameraPose& pose, std::int64_t t, double keypoint_sigma, Rng& rng,
                                 std::vector<Observation>& obs, std::vector<std::int64_t>& ray_ids) {
  const Mat3 R = rotation_from_pan_tilt(pose.pan, pose.tilt);
  const Intrinsics K = intrinsics(pose.focal);
  const Mat3 Kinv = K.K_inv();
  const double smin = sc_.min_size_px / pose.focal;
  const double smax = sc_.max_size_px / pose.focal;

  // Angular footprint of the image border.
  double pan_lo = 1e9, pan_hi = -1e9, el_lo = 1e9, el_hi = -1e9;
  const int steps = 8;
  for (int i = 0; i <= steps; ++i) {
    const double u = static_cast<double>(i) / steps;
    for (const Vec2& px : {Vec2(u * sc_.width, 0), Vec2(u * sc_.width, sc_.height), Vec2(0, u * sc_.height),
                           Vec2(sc_.width, u * sc_.height)}) {
      double pan, elev;
      angles_of(R.transpose() * (Kinv * px.homogeneous()), pan, elev);
      pan_lo = std::min(pan_lo, pan);
      pan_hi = std::max(pan_hi, pan);
      el_lo = std::min(el_lo, elev);
      el_hi = std::max(el_hi, elev);
    }
  }
  const int az0 = static_cast<int>(std::floor(pan_lo / kDegToRad / kBinDeg)) - 1;
  const int az1 = static_cast<int>(std::floor(pan_hi / kDegToRad / kBinDeg)) + 1;
  const int el0 = static_cast<int>(std::floor(el_lo / kDegToRad / kBinDeg)) - 1;
  const int el1 = static_cast<int>(std::floor(el_hi / kDegToRad / kBinDeg)) + 1;
  const int lv0 = std::max(0, level_of(smin));
  const int lv1 = level_of(smax);

  const Mat3 P = K.K() * R;
  for (int lv = lv0; lv <= lv1; ++lv) {
    auto it = bins_.lower_bound(BinKey{lv, az0, el0});
    const auto end = bins_.upper_bound(BinKey{lv, az1, el1});
    for (; it != end; ++it) {
      const auto& [klv, kaz, kel] = it->first;
      if (kel < el0 || kel > el1) continue;
      (void)klv;
      (void)kaz;
      for (std::size_t idx : it->second) {
        Ray& r = rays_[idx];
        if (r.born > t || t >= r.died || r.size < smin || r.size > smax) continue;
        const Vec3 q = P * r.dir;
        if (q.z() <= 0) continue;
        const Vec2 px = q.hnormalized();
        if (!in_image(px, sc_.width, sc_.height)) continue;
        Observation o;
        o.pos = px + keypoint_sigma * Vec2(rng.normal(), rng.normal());
        o.desc = r.base;
        if (sc_.drift_rate > 0) {
          const auto& d = drift_at(r, t);
          for (int k = 0; k < sc_.descriptor_dim; ++k) o.desc[k] += d[k];
        }
        if (sc_.descriptor_sigma > 0)
          for (auto& x : o.desc) x += static_cast<float>(sc_.descriptor_sigma * rng.normal());
        obs.push_back(std::move(o));
        ray_ids.push_back(r.id);
      }
    }
  }
}

KeyframeData Simulator::render_keyframe(const CameraPose& pose, std::uint64_t tag) {
  KeyframeData kf;
  kf.pose = pose;
  Rng rng(mix_seed({sc_.seed, 0x55, tag}));
  kf.reading = actuator_reading(pose, rng);
  render_landmarks(pose, 0, sc_.keyframe_keypoint_sigma, rng, kf.obs, kf.obs_ray);
  return kf;
}

std::vector<TargetTruth> Simulator::targets_at(std::int64_t t, const CameraPose& pose) const {
  std::vector<TargetTruth> out;
  Rng jitter(mix_seed({sc_.seed, 0x66, static_cast<std::uint64_t>(t)}));
  const double ts = sc_.frame_dt * (static_cast<double>(t) + sc_.dt_jitter * jitter.uniform(-0.5, 0.5));
  const Mat3 R = rotation_from_pan_tilt(pose.pan, pose.tilt);
  const Mat3 K = intrinsics(pose.focal).K();
  for (std::size_t i = 0; i < sc_.targets.size(); ++i) {
    const auto& tg = sc_.targets[i];
    if (t < tg.start_frame || tg.waypoints.empty()) continue;
    double dist = tg.speed * (ts - sc_.frame_dt * static_cast<double>(tg.start_frame));
    std::size_t seg = 0;
    while (seg + 1 < tg.waypoints.size()) {
      const double len = (tg.waypoints[seg + 1] - tg.waypoints[seg]).norm();
      if (dist <= len) break;
      dist -= len;
      ++seg;
    }
    if (seg + 1 >= tg.waypoints.size()) continue;  // walked off the end of its path
    const Vec2 a = tg.waypoints[seg];
    const Vec2 dir = (tg.waypoints[seg + 1] - a).normalized();
    TargetTruth tt;
    tt.id = static_cast<int>(i);
    tt.world = a + dist * dir;
    tt.velocity = tg.speed * dir;
    const Vec3 foot3(tt.world.x(), sc_.camera_height, tt.world.y());
    const Vec3 head3(tt.world.x(), sc_.camera_height - tg.height_m, tt.world.y());
    const Vec3 cf = R * foot3;
    const Vec3 ch = R * head3;
    if (cf.z() > 0 && ch.z() > 0) {
      tt.foot = (K * cf).hnormalized();
      tt.head = (K * ch).hnormalized();
      tt.in_view = in_image(tt.foot, sc_.width, sc_.height) && in_image(tt.head, sc_.width, sc_.height);
    }
    out.push_back(tt);
  }
  return out;
}

FrameData Simulator::render_frame(std::int64_t t) {
  if (t < last_frame_) throw Error(ErrorCode::ConfigError, "frames must be rendered in order");
  last_frame_ = t;
  FrameData fd;
  fd.index = t;
  Rng jitter(mix_seed({sc_.seed, 0x66, static_cast<std::uint64_t>(t)}));
  fd.timestamp = sc_.frame_dt * (static_cast<double>(t) + sc_.dt_jitter * jitter.uniform(-0.5, 0.5));

  const CameraPose pose = pose_at(t);
  fd.truth.pose = pose;
  fd.truth.H_ref = frame_to_reference(pose);
  fd.truth.G = ground_to_frame(pose);

  Rng act(mix_seed({sc_.seed, 0x77, static_cast<std::uint64_t>(t)}));
  fd.reading = actuator_reading(pose, act);

  Rng rng(mix_seed({sc_.seed, 0x88, static_cast<std::uint64_t>(t)}));
  render_landmarks(pose, t, sc_.keypoint_sigma, rng, fd.obs, fd.obs_ray);
  fd.obs_displaced.assign(fd.obs.size(), 0);
  if (sc_.outlier_fraction > 0) {
    for (std::size_t i = 0; i < fd.obs.size(); ++i) {
      if (!rng.bernoulli(sc_.outlier_fraction)) continue;
      if (sc_.outlier_radius_px > 0) {
        // uniform over the disc
        const double r = sc_.outlier_radius_px * std::sqrt(rng.uniform());
        const double a = rng.uniform(0, 2 * std::numbers::pi);
        fd.obs[i].pos += r * Vec2(std::cos(a), std::sin(a));
      } else {
        fd.obs[i].pos = Vec2(rng.uniform(0, sc_.width), rng.uniform(0, sc_.height));
      }
      fd.obs_displaced[i] = 1;
    }
  }
  const int clutter = rng.poisson(sc_.clutter_per_frame);
  for (int i = 0; i < clutter; ++i) {
    Observation o;
    o.pos = Vec2(rng.uniform(0, sc_.width), rng.uniform(0, sc_.height));
    o.desc.resize(sc_.descriptor_dim);
    for (auto& x : o.desc) x = static_cast<float>(rng.normal());
    fd.obs.push_back(std::move(o));
    fd.obs_ray.push_back(-1);
    fd.obs_displaced.push_back(0);
  }

  // Detections.
  Rng det(mix_seed({sc_.seed, 0x99, static_cast<std::uint64_t>(t)}));
  fd.truth.targets = targets_at(t, pose);
  for (const auto& tt : fd.truth.targets) {
    if (!tt.in_view || det.bernoulli(sc_.p_miss)) continue;
    Detection d;
    d.p = tt.foot + sc_.detection_sigma * Vec2(det.normal(), det.normal());
    d.height = (tt.head - tt.foot).norm() * (1.0 + sc_.detection_height_rel_sd * det.normal());
    d.confidence = 1.0;
    fd.dets.push_back(d);
    fd.det_target.push_back(tt.id);
  }
  const Mat3 R = rotation_from_pan_tilt(pose.pan, pose.tilt);
  const Mat3 K = intrinsics(pose.focal).K();
  for (const auto& fa : sc_.false_alarms) {
    const Vec3 cf = R * Vec3(fa.world.x(), sc_.camera_height, fa.world.y());
    const Vec3 ch = R * Vec3(fa.world.x(), sc_.camera_height - 1.75, fa.world.y());
    if (cf.z() <= 0 || ch.z() <= 0) continue;
    const Vec2 foot = (K * cf).hnormalized();
    if (!in_image(foot, sc_.width, sc_.height) || !det.bernoulli(fa.rate)) continue;
    Detection d;
    d.p = foot + sc_.detection_sigma * Vec2(det.normal(), det.normal());
    d.height = fa.scale * ((K * ch).hnormalized() - foot).norm();
    d.confidence = 0.7;
    fd.dets.push_back(d);
    fd.det_target.push_back(-1);
  }
  const int fa_count = det.poisson(sc_.clutter_detections_per_frame);
  for (int i = 0; i < fa_count; ++i) {
    Detection d;
    d.p = Vec2(det.uniform(0, sc_.width), det.uniform(0, sc_.height));
    d.height = det.uniform(20, 200);
    d.confidence = 0.5;
    fd.dets.push_back(d);
    fd.det_target.push_back(-1);
  }
  return fd;
}

}  // namespace ptz

#include "ptz/worldproj.hpp"

#include "ptz/error.hpp"

#include <cmath>

namespace ptz {

Vec2 world_to_frame(const Mat3& G, const Vec2& X) {
  const Vec3 q = G * X.homogeneous();
  if (std::abs(q.z()) <= 1e-12 * q.norm()) throw Error(ErrorCode::AtInfinity, "world point maps to infinity");
  if (q.z() < 0) throw Error(ErrorCode::BehindCamera, "world point is behind the camera");
  return q.hnormalized();
}

Vec2 frame_to_world(const Mat3& G, const Vec2& p) {
  const Vec3 q = G.inverse() * p.homogeneous();
  if (std::abs(q.z()) <= 1e-12 * q.norm()) throw Error(ErrorCode::AtInfinity, "frame point is on the horizon");
  if (q.z() < 0) throw Error(ErrorCode::AboveHorizon, "frame point is above the horizon");
  return q.hnormalized();
}

Vec3 horizon_line(const Mat3& G, HorizonLine convention) {
  const Vec3 l = convention == HorizonLine::Pullback ? Vec3(G.inverse().transpose() * Vec3::UnitZ())
                                                     : Vec3(G * Vec3::UnitZ());
  return l / l.norm();
}

Homology build_homology(const Mat3& G, const Intrinsics& K, double mu, HorizonLine convention) {
  Homology h;
  h.mu = mu;
  h.l_inf = horizon_line(G, convention);
  const Mat3 k = K.K();
  h.v_inf = k * k.transpose() * h.l_inf;
  h.v_inf /= h.v_inf.norm();
  const double vl = h.v_inf.dot(h.l_inf);
  if (!(std::abs(vl) > 1e-12)) throw Error(ErrorCode::DegenerateHomology, "vertical vanishing point lies on the horizon");
  h.W = Mat3::Identity() + (mu - 1.0) * h.v_inf * h.l_inf.transpose() / vl;
  return h;
}

ScaleEstimate estimate_scale(const Homology& homology, const Mat3& G, const Vec2& foot) {
  const Vec3 p = foot.homogeneous();
  if (horizon_line(G).dot(p) < -1e-12 * p.norm()) throw Error(ErrorCode::AboveHorizon, "foot point is above the horizon");
  const Vec3 q = homology.W * p;
  if (std::abs(q.z()) <= 1e-12 * q.norm()) throw Error(ErrorCode::AtInfinity, "head point at infinity");
  ScaleEstimate s;
  s.foot = foot;
  s.head = q.hnormalized();
  s.height_px = (s.head - s.foot).norm();
  return s;
}

double calibrate_mu(const Mat3& G, const Intrinsics& K, const Vec2& foot, const Vec2& head, HorizonLine convention) {
  if ((head - foot).norm() < 1e-9) throw Error(ErrorCode::DegenerateObservation, "head coincides with foot");
  const Homology unit = build_homology(G, K, 1.0, convention);
  const Vec3 p = foot.homogeneous(), h = head.homogeneous(), v = unit.v_inf, l = unit.l_inf;
  // p + t v ~ h  =>  t (v x h) = -(p x h)
  const Vec3 vh = v.cross(h), ph = p.cross(h);
  if (!(vh.squaredNorm() > 1e-18)) throw Error(ErrorCode::DegenerateObservation, "head lies on the vanishing point");
  const double t = -vh.dot(ph) / vh.squaredNorm();
  const double lp = l.dot(p);
  if (!(std::abs(lp) > 1e-12)) throw Error(ErrorCode::DegenerateObservation, "foot lies on the horizon");
  return 1.0 + t * v.dot(l) / lp;
}

}  // namespace ptz

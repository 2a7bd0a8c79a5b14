#pragma once

// Frame <-> world-plane transforms and target scale from the planar homology
// that carries a foot point to the head point of a target of fixed height.

#include "ptz/geometry.hpp"

namespace ptz {

/// Which line stands for the ground vanishing line in the frame.
enum class HorizonLine {
  Pullback,   // G^-T e3, the image of the world line at infinity
  AsWritten,  // G e3
};

struct Homology {
  Mat3 W = Mat3::Identity();
  Vec3 l_inf = Vec3::UnitZ();
  Vec3 v_inf = Vec3::UnitZ();
  double mu = 1.0;
};

struct ScaleEstimate {
  Vec2 foot = Vec2::Zero();
  Vec2 head = Vec2::Zero();
  double height_px = 0.0;
  bool stale = false;
};

/// G maps world metres to frame pixels and is oriented: visible ground points
/// have positive homogeneous scale. Throws AtInfinity or BehindCamera.
Vec2 world_to_frame(const Mat3& G, const Vec2& X);
/// Throws AtInfinity or AboveHorizon.
Vec2 frame_to_world(const Mat3& G, const Vec2& p);

Vec3 horizon_line(const Mat3& G, HorizonLine convention = HorizonLine::Pullback);

/// W = I + (mu - 1) v l^T / (v^T l) with v = K K^T l. Throws DegenerateHomology.
Homology build_homology(const Mat3& G, const Intrinsics& K, double mu,
                        HorizonLine convention = HorizonLine::Pullback);

/// Head point W p of a target whose foot is at p. Throws AboveHorizon when p
/// is not on the visible ground side of the horizon (judged with the pullback
/// line whatever the homology's convention).
ScaleEstimate estimate_scale(const Homology& homology, const Mat3& G, const Vec2& foot);

/// mu that makes W carry `foot` onto `head` (least squares along the line
/// through them). Throws DegenerateObservation when head == foot.
double calibrate_mu(const Mat3& G, const Intrinsics& K, const Vec2& foot, const Vec2& head,
                    HorizonLine convention = HorizonLine::Pullback);

}  // namespace ptz

#pragma once

#include "ptz/geometry.hpp"

namespace ptz {

/// A person detection: foot point and box height in frame pixels.
struct Detection {
  Vec2 p = Vec2::Zero();
  double height = 0.0;
  double confidence = 1.0;
};

}  // namespace ptz

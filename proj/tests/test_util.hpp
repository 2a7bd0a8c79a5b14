#pragma once

#include "ptz/geometry.hpp"
#include "ptz/random.hpp"

#include <doctest.h>

namespace ptz::testing {

/// Distance between two homographies after removing projective scale and sign.
inline double homography_distance(const Mat3& a, const Mat3& b) {
  const Mat3 na = normalize_homography(a);
  const Mat3 nb = normalize_homography(b);
  return std::min((na - nb).norm(), (na + nb).norm());
}

inline Mat3 random_homography(Rng& rng, double spread = 0.2) {
  Mat3 h = Mat3::Identity();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) h(i, j) += spread * rng.normal();
  h(2, 0) *= 0.01;
  h(2, 1) *= 0.01;
  h(0, 2) *= 100.0;
  h(1, 2) *= 100.0;
  return h;
}

inline Mat2 symmetric_defect_free(const Mat2& m) { return 0.5 * (m + m.transpose()); }

}  // namespace ptz::testing

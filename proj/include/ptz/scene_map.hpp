#pragma once

// View maps, landmarks and the scene map, with keyframe retrieval from
// actuator readings and descriptor matching.

#include "ptz/geometry.hpp"
#include "ptz/kd_forest.hpp"
#include "ptz/random.hpp"

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ptz {

using Descriptor = std::vector<float>;

struct Landmark {
  std::int64_t id = 0;
  Vec2 pos = Vec2::Zero();  // keyframe pixels
  Descriptor desc;
  Mat2 P = Mat2::Identity();
  std::int32_t frames_seen = 0;
  std::int32_t frames_since_match = 0;
  std::int64_t born_at = 0;
  bool original = true;
};

/// Motor-reported pose. Zoom is the optical magnification relative to the
/// widest setting.
struct ActuatorReading {
  double pan_deg = 0.0;
  double tilt_deg = 0.0;
  double zoom = 1.0;
  double pan_sd = 0.0;
  double tilt_sd = 0.0;
  double zoom_sd = 0.0;
};

/// A landmark observation in the current frame.
struct Observation {
  Vec2 pos = Vec2::Zero();
  Descriptor desc;
  std::optional<Mat2> cov;
};

struct ViewMap {
  std::int32_t id = 0;
  ActuatorReading key;
  std::vector<Landmark> landmarks;
  Homography H_rk;  // view pixels -> reference pixels
  Intrinsics K;
  Mat3 R = Mat3::Identity();
};

struct SceneMap {
  std::vector<ViewMap> views;  // views[i].id == i
  std::int32_t reference = 0;
  std::optional<Homography> H_W;  // reference pixels -> world plane (meters)
  std::int64_t next_landmark_id = 0;

  bool empty() const { return views.empty(); }
  const ViewMap& view(std::int32_t id) const;
  ViewMap& view(std::int32_t id);
  const Intrinsics& reference_intrinsics() const { return view(reference).K; }
  std::size_t landmark_count() const;
};

struct ActuatorWeights {
  double pan = 1.0;
  double tilt = 1.0;
  double log2_zoom = 10.0;
};

double actuator_distance(const ActuatorReading& a, const ActuatorReading& b,
                         const ActuatorWeights& w = {});

/// View whose key is closest to `reading`; ties go to the lowest id. Throws EmptyMap.
const ViewMap& nearest_view(const SceneMap& map, const ActuatorReading& reading,
                            const ActuatorWeights& w = {});

struct MatchParams {
  double ratio = 0.8;
  std::size_t sample_size = 1000;
  std::size_t brute_force_below = 2000;
  KdForestParams forest;
};

struct LandmarkMatch {
  std::size_t obs = 0;       // index into the frame observations
  std::size_t landmark = 0;  // index into view.landmarks
  PointMatch match;          // src: frame pixels, dst: view pixels
};

/// Nearest-neighbour distance-ratio matching of the observations against a
/// random sample of the view's landmarks. Each landmark keeps only its
/// closest claimant, so the result is a partial injection. `sampled`, when
/// given, receives the landmark indices that took part.
std::vector<LandmarkMatch> match_descriptors(std::span<const Observation> frame_obs,
                                             const ViewMap& view, const MatchParams& params,
                                             Rng& rng, std::vector<std::size_t>* sampled = nullptr);

/// desc <- (1 - alpha) desc + alpha new_desc, alpha in (0, 1].
void update_descriptor(Landmark& lm, const Descriptor& new_desc, double alpha = 0.1);

// Binary map container. Layout, all little-endian:
//   "PTZM" | u32 version | i32 reference | i64 next_landmark_id
//   | u8 has_world [f64 x9 H_W | u8 has_cov [f64 x81]]
//   | u32 view_count | views... | u64 FNV-1a of every preceding byte
// view: i32 id | f64 x6 key | f64 x9 H_rk | u8 has_cov [f64 x81] | f64 f, ppx, ppy
//   | f64 x9 R | u32 desc_dim | u32 landmark_count | landmarks...
// landmark: i64 id | f64 x2 pos | f64 x4 P | i32 seen | i32 since_match | i64 born_at
//   | u8 original | f32 x desc_dim
inline constexpr std::uint32_t kMapFormatVersion = 1;

std::vector<std::uint8_t> serialize_map(const SceneMap& map);
/// Throws VersionMismatch or CorruptPayload.
SceneMap deserialize_map(std::span<const std::uint8_t> bytes);

void save_map(const SceneMap& map, const std::string& path);
SceneMap load_map(const std::string& path);

/// Immutable per-frame snapshot. Views that were not modified since the
/// previous publish are shared rather than copied.
struct SceneMapSnapshot {
  std::vector<std::shared_ptr<const ViewMap>> views;
  std::int32_t reference = 0;
  std::optional<Homography> H_W;
  std::uint64_t generation = 0;
};

/// One writer, many readers. Readers hold a snapshot for as long as they
/// like; the writer swaps in a new one under a short lock.
class SharedSceneMap {
 public:
  explicit SharedSceneMap(const SceneMap& initial);

  std::shared_ptr<const SceneMapSnapshot> snapshot() const;

  /// Publishes `map`, copying only the views listed in `dirty_views`.
  void publish(const SceneMap& map, std::span<const std::int32_t> dirty_views);

 private:
  mutable std::mutex mutex_;
  std::shared_ptr<const SceneMapSnapshot> current_;
};

}  // namespace ptz

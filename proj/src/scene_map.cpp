#include "ptz/scene_map.hpp"

#include "ptz/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ptz {

const ViewMap& SceneMap::view(std::int32_t id) const {
  if (id < 0 || id >= static_cast<std::int32_t>(views.size()))
    throw Error(ErrorCode::EmptyMap, "no view with id " + std::to_string(id));
  return views[id];
}

ViewMap& SceneMap::view(std::int32_t id) {
  return const_cast<ViewMap&>(static_cast<const SceneMap&>(*this).view(id));
}

std::size_t SceneMap::landmark_count() const {
  std::size_t n = 0;
  for (const auto& v : views) n += v.landmarks.size();
  return n;
}

double actuator_distance(const ActuatorReading& a, const ActuatorReading& b,
                         const ActuatorWeights& w) {
  double dpan = std::remainder(a.pan_deg - b.pan_deg, 360.0);
  const double dtilt = a.tilt_deg - b.tilt_deg;
  const double dzoom = std::log2(std::max(a.zoom, 1e-12)) - std::log2(std::max(b.zoom, 1e-12));
  dpan *= w.pan;
  return std::sqrt(dpan * dpan + (w.tilt * dtilt) * (w.tilt * dtilt) +
                   (w.log2_zoom * dzoom) * (w.log2_zoom * dzoom));
}

const ViewMap& nearest_view(const SceneMap& map, const ActuatorReading& reading,
                            const ActuatorWeights& w) {
  if (map.empty()) throw Error(ErrorCode::EmptyMap, "scene map has no views");
  const ViewMap* best = nullptr;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& v : map.views) {
    const double d = actuator_distance(v.key, reading, w);
    if (d < best_d || (d == best_d && best && v.id < best->id)) {
      best_d = d;
      best = &v;
    }
  }
  return best ? *best : map.views.front();
}

std::vector<LandmarkMatch> match_descriptors(std::span<const Observation> frame_obs,
                                             const ViewMap& view, const MatchParams& params,
                                             Rng& rng, std::vector<std::size_t>* sampled) {
  std::vector<LandmarkMatch> out;
  if (sampled) sampled->clear();
  const std::size_t n = view.landmarks.size();
  if (n < 2 || frame_obs.empty()) return out;

  std::vector<std::size_t> sample;
  if (params.sample_size >= n) {
    sample.resize(n);
    for (std::size_t i = 0; i < n; ++i) sample[i] = i;
  } else {
    sample = rng.sample_indices(n, params.sample_size);
  }
  if (sampled) *sampled = sample;
  if (sample.size() < 2) return out;

  const std::size_t dim = view.landmarks[sample[0]].desc.size();
  std::vector<float> data(sample.size() * dim);
  for (std::size_t s = 0; s < sample.size(); ++s) {
    const auto& d = view.landmarks[sample[s]].desc;
    if (d.size() != dim) throw Error(ErrorCode::DimensionMismatch, "landmark descriptor length");
    std::copy(d.begin(), d.end(), data.begin() + s * dim);
  }

  std::optional<KdForest> forest;
  if (sample.size() >= params.brute_force_below)
    forest.emplace(data.data(), sample.size(), dim, params.forest);

  const float r2 = static_cast<float>(params.ratio * params.ratio);
  std::vector<int> claimant(sample.size(), -1);
  std::vector<float> claim_d2(sample.size(), std::numeric_limits<float>::infinity());
  std::vector<Neighbor> nn;
  for (std::size_t o = 0; o < frame_obs.size(); ++o) {
    const auto& q = frame_obs[o].desc;
    if (q.size() != dim) throw Error(ErrorCode::DimensionMismatch, "observation descriptor length");
    if (forest)
      forest->knn(q.data(), 2, nn);
    else
      brute_force_knn(data.data(), sample.size(), dim, q.data(), 2, nn);
    if (nn.size() < 2 || !(nn[0].dist2 < r2 * nn[1].dist2)) continue;
    const int s = nn[0].index;
    if (nn[0].dist2 < claim_d2[s]) {
      claim_d2[s] = nn[0].dist2;
      claimant[s] = static_cast<int>(o);
    }
  }

  for (std::size_t s = 0; s < sample.size(); ++s) {
    if (claimant[s] < 0) continue;
    LandmarkMatch m;
    m.obs = static_cast<std::size_t>(claimant[s]);
    m.landmark = sample[s];
    m.match.src = frame_obs[m.obs].pos;
    m.match.dst = view.landmarks[m.landmark].pos;
    m.match.src_cov = frame_obs[m.obs].cov;
    m.match.dst_cov = view.landmarks[m.landmark].P;
    out.push_back(std::move(m));
  }
  std::sort(out.begin(), out.end(),
            [](const LandmarkMatch& a, const LandmarkMatch& b) { return a.obs < b.obs; });
  return out;
}

void update_descriptor(Landmark& lm, const Descriptor& new_desc, double alpha) {
  if (new_desc.size() != lm.desc.size())
    throw Error(ErrorCode::DimensionMismatch, "descriptor length " + std::to_string(new_desc.size()) +
                                                  " vs " + std::to_string(lm.desc.size()));
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(ErrorCode::ConfigError, "forgetting factor outside (0, 1]");
  const float a = static_cast<float>(alpha);
  if (alpha == 1.0) {
    lm.desc = new_desc;
    return;
  }
  for (std::size_t i = 0; i < lm.desc.size(); ++i) lm.desc[i] = (1.0f - a) * lm.desc[i] + a * new_desc[i];
}

SharedSceneMap::SharedSceneMap(const SceneMap& initial) {
  auto snap = std::make_shared<SceneMapSnapshot>();
  snap->reference = initial.reference;
  snap->H_W = initial.H_W;
  for (const auto& v : initial.views) snap->views.push_back(std::make_shared<const ViewMap>(v));
  current_ = std::move(snap);
}

std::shared_ptr<const SceneMapSnapshot> SharedSceneMap::snapshot() const {
  std::lock_guard lock(mutex_);
  return current_;
}

void SharedSceneMap::publish(const SceneMap& map, std::span<const std::int32_t> dirty_views) {
  const auto prev = snapshot();
  auto next = std::make_shared<SceneMapSnapshot>();
  next->reference = map.reference;
  next->H_W = map.H_W;
  next->generation = prev->generation + 1;
  next->views.reserve(map.views.size());
  for (std::size_t i = 0; i < map.views.size(); ++i) {
    const bool dirty = i >= prev->views.size() ||
                       std::find(dirty_views.begin(), dirty_views.end(),
                                 static_cast<std::int32_t>(i)) != dirty_views.end();
    next->views.push_back(dirty ? std::make_shared<const ViewMap>(map.views[i]) : prev->views[i]);
  }
  std::lock_guard lock(mutex_);
  current_ = std::move(next);
}

}  // namespace ptz

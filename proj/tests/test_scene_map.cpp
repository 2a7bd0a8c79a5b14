#include "ptz/error.hpp"
#include "ptz/scene_map.hpp"

#include <doctest.h>

#include <atomic>
#include <cmath>
#include <set>
#include <thread>

using namespace ptz;

namespace {

Descriptor random_desc(Rng& rng, std::size_t dim = 32) {
  Descriptor d(dim);
  for (auto& x : d) x = static_cast<float>(rng.normal());
  return d;
}

ViewMap make_view(std::int32_t id, double pan, double tilt, double zoom) {
  ViewMap v;
  v.id = id;
  v.key.pan_deg = pan;
  v.key.tilt_deg = tilt;
  v.key.zoom = zoom;
  v.K = Intrinsics{400.0 * zoom, Vec2(320, 240)};
  return v;
}

SceneMap random_map(Rng& rng, int views, int landmarks_per_view) {
  SceneMap map;
  for (int i = 0; i < views; ++i) {
    auto v = make_view(i, 10.0 * i, -5.0, 1.0 + i);
    v.R = rotation_from_pan_tilt(0.1 * i, -0.05);
    v.H_rk = compose_rotation_homography(Intrinsics{400, Vec2(320, 240)}, Mat3::Identity(), v.R, v.K);
    v.H_rk.cov = Mat9::Identity() * 1e-6 * (i + 1);
    for (int j = 0; j < landmarks_per_view; ++j) {
      Landmark lm;
      lm.id = map.next_landmark_id++;
      lm.pos = Vec2(rng.uniform(0, 640), rng.uniform(0, 480));
      lm.desc = random_desc(rng);
      lm.P << rng.uniform(0.5, 2), 0.1, 0.1, rng.uniform(0.5, 2);
      lm.frames_seen = static_cast<int>(rng.index(100));
      lm.frames_since_match = static_cast<int>(rng.index(5));
      lm.born_at = static_cast<std::int64_t>(rng.index(1000));
      lm.original = rng.bernoulli(0.5);
      v.landmarks.push_back(lm);
    }
    map.views.push_back(v);
  }
  Mat3 hw = Mat3::Identity();
  hw(0, 2) = 3.0;
  map.H_W = Homography::from(hw);
  return map;
}

bool maps_equal(const SceneMap& a, const SceneMap& b) {
  if (a.reference != b.reference || a.next_landmark_id != b.next_landmark_id) return false;
  if (a.H_W.has_value() != b.H_W.has_value()) return false;
  if (a.H_W && a.H_W->h != b.H_W->h) return false;
  if (a.views.size() != b.views.size()) return false;
  for (std::size_t i = 0; i < a.views.size(); ++i) {
    const auto& va = a.views[i];
    const auto& vb = b.views[i];
    if (va.id != vb.id || va.key.pan_deg != vb.key.pan_deg || va.key.tilt_deg != vb.key.tilt_deg ||
        va.key.zoom != vb.key.zoom || va.H_rk.h != vb.H_rk.h || va.K.f != vb.K.f || va.K.pp != vb.K.pp ||
        va.R != vb.R || va.H_rk.cov.has_value() != vb.H_rk.cov.has_value())
      return false;
    if (va.H_rk.cov && *va.H_rk.cov != *vb.H_rk.cov) return false;
    if (va.landmarks.size() != vb.landmarks.size()) return false;
    for (std::size_t j = 0; j < va.landmarks.size(); ++j) {
      const auto& la = va.landmarks[j];
      const auto& lb = vb.landmarks[j];
      if (la.id != lb.id || la.pos != lb.pos || la.desc != lb.desc || la.P != lb.P ||
          la.frames_seen != lb.frames_seen || la.frames_since_match != lb.frames_since_match ||
          la.born_at != lb.born_at || la.original != lb.original)
        return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("nearest_view picks the exact key and breaks ties by id") {
  SceneMap map;
  map.views = {make_view(0, 0, 0, 1), make_view(1, 10, 0, 1), make_view(2, 0, 10, 2)};
  ActuatorReading r;
  r.pan_deg = 10;
  r.zoom = 1;
  CHECK(nearest_view(map, r).id == 1);
  r.pan_deg = 5;
  CHECK(nearest_view(map, r).id == 0);
  r.pan_deg = 0;
  r.tilt_deg = 10;
  r.zoom = 2;
  CHECK(nearest_view(map, r).id == 2);

  // Pan wraps around.
  map.views[1].key.pan_deg = 179;
  r = ActuatorReading{};
  r.pan_deg = -179;
  CHECK(nearest_view(map, r).id == 1);

  CHECK_THROWS_AS(nearest_view(SceneMap{}, r), Error);
}

TEST_CASE("nearest_view is deterministic") {
  Rng rng(4);
  SceneMap map;
  for (int i = 0; i < 40; ++i) map.views.push_back(make_view(i, rng.uniform(-90, 90), rng.uniform(-30, 0), 1));
  for (int t = 0; t < 100; ++t) {
    ActuatorReading r;
    r.pan_deg = rng.uniform(-90, 90);
    r.tilt_deg = rng.uniform(-30, 0);
    CHECK(nearest_view(map, r).id == nearest_view(map, r).id);
  }
}

TEST_CASE("descriptor matching: identity, ambiguous, injection") {
  Rng rng(9);
  ViewMap view = make_view(0, 0, 0, 1);
  std::vector<Observation> obs;
  for (int i = 0; i < 50; ++i) {
    Landmark lm;
    lm.id = i;
    lm.pos = Vec2(i, 2 * i);
    lm.desc = random_desc(rng);
    view.landmarks.push_back(lm);
    obs.push_back(Observation{Vec2(i + 1, 2 * i), lm.desc, std::nullopt});
  }
  MatchParams params;
  auto m = match_descriptors(obs, view, params, rng);
  REQUIRE(m.size() == 50);
  for (const auto& x : m) CHECK(x.obs == x.landmark);

  // Two landmarks with descriptors a and b; a query at their midpoint is ambiguous.
  ViewMap two = make_view(0, 0, 0, 1);
  Landmark a, b;
  a.desc = Descriptor(32, 0.0f);
  b.desc = Descriptor(32, 0.0f);
  a.desc[0] = 1.0f;
  b.desc[0] = -1.0f;
  two.landmarks = {a, b};
  std::vector<Observation> mid(5, Observation{Vec2::Zero(), Descriptor(32, 0.0f), std::nullopt});
  for (int i = 0; i < 5; ++i) mid[i].desc[1 + i] = 0.3f * i;
  CHECK(match_descriptors(mid, two, params, rng).empty());

  // Many observations near the same landmark: only the closest survives.
  std::vector<Observation> crowd;
  for (int i = 0; i < 10; ++i) {
    Observation o{Vec2::Zero(), view.landmarks[3].desc, std::nullopt};
    o.desc[0] += 0.01f * (i + 1);
    crowd.push_back(o);
  }
  auto cm = match_descriptors(crowd, view, params, rng);
  REQUIRE(cm.size() == 1);
  CHECK(cm[0].obs == 0);
  CHECK(cm[0].landmark == 3);
}

TEST_CASE("matching output is a partial injection under noise and sampling") {
  Rng rng(21);
  ViewMap view = make_view(0, 0, 0, 1);
  for (int i = 0; i < 3000; ++i) {
    Landmark lm;
    lm.id = i;
    lm.desc = random_desc(rng);
    view.landmarks.push_back(lm);
  }
  std::vector<Observation> obs;
  for (int i = 0; i < 600; ++i) {
    Observation o;
    o.desc = view.landmarks[rng.index(3000)].desc;
    for (auto& x : o.desc) x += static_cast<float>(0.3 * rng.normal());
    obs.push_back(o);
  }
  for (std::size_t sample : {std::size_t(500), std::size_t(2500)}) {
    MatchParams params;
    params.sample_size = sample;
    const auto m = match_descriptors(obs, view, params, rng);
    std::set<std::size_t> seen_obs, seen_lm;
    for (const auto& x : m) {
      CHECK(seen_obs.insert(x.obs).second);
      CHECK(seen_lm.insert(x.landmark).second);
    }
    CHECK(!m.empty());
  }
}

TEST_CASE("kd forest agrees with brute force on most queries") {
  Rng rng(33);
  const std::size_t n = 5000, dim = 32;
  std::vector<float> data(n * dim);
  for (auto& x : data) x = static_cast<float>(rng.normal());
  KdForest forest(data.data(), n, dim, KdForestParams{4, 256, 8, 1});
  int agree = 0;
  const int queries = 200;
  std::vector<Neighbor> a, b;
  for (int q = 0; q < queries; ++q) {
    const std::size_t row = rng.index(n);
    std::vector<float> query(data.begin() + row * dim, data.begin() + (row + 1) * dim);
    for (auto& x : query) x += static_cast<float>(0.2 * rng.normal());
    forest.knn(query.data(), 2, a);
    brute_force_knn(data.data(), n, dim, query.data(), 2, b);
    REQUIRE(a.size() == 2);
    CHECK(a[0].dist2 <= a[1].dist2);
    CHECK(a[0].dist2 >= b[0].dist2);
    if (a[0].index == b[0].index) ++agree;
  }
  CHECK(agree >= queries * 9 / 10);
}

TEST_CASE("update_descriptor") {
  Landmark lm;
  lm.desc = {1.0f, 2.0f, 3.0f};
  const Descriptor same = lm.desc;
  update_descriptor(lm, same, 0.3);
  CHECK(lm.desc == same);

  const Descriptor target = {0.0f, 10.0f, -4.0f};
  update_descriptor(lm, target, 1.0);
  CHECK(lm.desc == target);

  Landmark g;
  g.desc = {0.0f};
  const double alpha = 0.1;
  double prev_err = 1.0;
  for (int i = 0; i < 50; ++i) {
    update_descriptor(g, Descriptor{1.0f}, alpha);
    const double err = 1.0 - g.desc[0];
    CHECK(err == doctest::Approx(prev_err * (1.0 - alpha)).epsilon(1e-5));
    prev_err = err;
  }

  CHECK_THROWS_AS(update_descriptor(lm, Descriptor(4, 0.0f), 0.1), Error);
  try {
    update_descriptor(lm, Descriptor(4, 0.0f), 0.1);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimensionMismatch);
  }
}

TEST_CASE("map serialization round-trips bit-exactly") {
  SceneMap ref_only;
  ref_only.views.push_back(make_view(0, 0, 0, 1));
  CHECK(maps_equal(deserialize_map(serialize_map(ref_only)), ref_only));

  Rng rng(77);
  const SceneMap big = random_map(rng, 10, 1000);
  REQUIRE(big.landmark_count() == 10000);
  const auto bytes = serialize_map(big);
  CHECK(maps_equal(deserialize_map(bytes), big));
  CHECK(serialize_map(deserialize_map(bytes)) == bytes);
}

TEST_CASE("map deserialization rejects bad streams") {
  Rng rng(78);
  const auto bytes = serialize_map(random_map(rng, 2, 20));

  auto expect = [](std::span<const std::uint8_t> b, ErrorCode code) {
    try {
      deserialize_map(b);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == code);
    }
  };
  expect(std::span(bytes).first(bytes.size() / 2), ErrorCode::CorruptPayload);
  expect(std::span(bytes).first(5), ErrorCode::CorruptPayload);

  auto flipped = bytes;
  flipped[100] ^= 0x40;
  expect(flipped, ErrorCode::CorruptPayload);

  auto versioned = bytes;
  versioned[4] = 99;
  expect(versioned, ErrorCode::VersionMismatch);
}

TEST_CASE("shared map snapshots stay consistent under a concurrent writer") {
  Rng rng(5);
  SceneMap map = random_map(rng, 3, 50);
  const std::int32_t original_seen = map.views[1].landmarks[0].frames_seen;
  SharedSceneMap shared(map);
  const auto first = shared.snapshot();

  std::atomic<bool> stop{false};
  std::atomic<int> bad{0};
  std::thread reader([&] {
    while (!stop) {
      const auto snap = shared.snapshot();
      // Every landmark in view 1 carries the same counter within a snapshot.
      const auto& lms = snap->views[1]->landmarks;
      for (const auto& lm : lms)
        if (lm.frames_seen != lms.front().frames_seen) ++bad;
    }
  });
  for (int gen = 0; gen < 200; ++gen) {
    for (auto& lm : map.views[1].landmarks) lm.frames_seen = gen;
    const std::int32_t dirty[] = {1};
    shared.publish(map, dirty);
  }
  stop = true;
  reader.join();
  CHECK(bad == 0);

  const auto last = shared.snapshot();
  CHECK(last->generation == 200);
  CHECK(last->views[0] == first->views[0]);  // untouched views are shared
  CHECK(last->views[1] != first->views[1]);
  CHECK(first->views[1]->landmarks[0].frames_seen == original_seen);
  CHECK(last->views[1]->landmarks[0].frames_seen == 199);
}

#include "ptz/error.hpp"
#include "ptz/scene_map.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace ptz {

static_assert(std::endian::native == std::endian::little, "map format assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'P', 'T', 'Z', 'M'};

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename T>
  void put(const T& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_doubles(const double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) put(p[i]);
  }
  void put_mat3(const Mat3& m) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) put(m(r, c));
  }
  void put_cov(const std::optional<Mat9>& cov) {
    put<std::uint8_t>(cov ? 1 : 0);
    if (!cov) return;
    for (int r = 0; r < 9; ++r)
      for (int c = 0; c < 9; ++c) put((*cov)(r, c));
  }
  std::vector<std::uint8_t>& bytes() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > b_.size()) throw Error(ErrorCode::CorruptPayload, "truncated map stream");
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  Mat3 get_mat3() {
    Mat3 m;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m(r, c) = get<double>();
    return m;
  }
  std::optional<Mat9> get_cov() {
    const auto flag = get<std::uint8_t>();
    if (flag > 1) throw Error(ErrorCode::CorruptPayload, "bad covariance flag");
    if (!flag) return std::nullopt;
    Mat9 m;
    for (int r = 0; r < 9; ++r)
      for (int c = 0; c < 9; ++c) m(r, c) = get<double>();
    return m;
  }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

// Homographies are stored raw; no renormalization on load.
Homography raw_homography(const Mat3& h, std::optional<Mat9> cov) {
  Homography out;
  out.h = h;
  out.cov = std::move(cov);
  return out;
}

}  // namespace

std::vector<std::uint8_t> serialize_map(const SceneMap& map) {
  Writer w;
  for (char c : kMagic) w.put(c);
  w.put(kMapFormatVersion);
  w.put<std::int32_t>(map.reference);
  w.put<std::int64_t>(map.next_landmark_id);
  w.put<std::uint8_t>(map.H_W ? 1 : 0);
  if (map.H_W) {
    w.put_mat3(map.H_W->h);
    w.put_cov(map.H_W->cov);
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(map.views.size()));
  for (const auto& v : map.views) {
    w.put<std::int32_t>(v.id);
    const double key[6] = {v.key.pan_deg, v.key.tilt_deg, v.key.zoom,
                           v.key.pan_sd,  v.key.tilt_sd,  v.key.zoom_sd};
    w.put_doubles(key, 6);
    w.put_mat3(v.H_rk.h);
    w.put_cov(v.H_rk.cov);
    w.put(v.K.f);
    w.put(v.K.pp.x());
    w.put(v.K.pp.y());
    w.put_mat3(v.R);
    const std::uint32_t dim = v.landmarks.empty() ? 0 : static_cast<std::uint32_t>(v.landmarks[0].desc.size());
    w.put(dim);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v.landmarks.size()));
    for (const auto& lm : v.landmarks) {
      if (lm.desc.size() != dim) throw Error(ErrorCode::DimensionMismatch, "mixed descriptor lengths in view");
      w.put<std::int64_t>(lm.id);
      w.put(lm.pos.x());
      w.put(lm.pos.y());
      w.put(lm.P(0, 0));
      w.put(lm.P(0, 1));
      w.put(lm.P(1, 0));
      w.put(lm.P(1, 1));
      w.put<std::int32_t>(lm.frames_seen);
      w.put<std::int32_t>(lm.frames_since_match);
      w.put<std::int64_t>(lm.born_at);
      w.put<std::uint8_t>(lm.original ? 1 : 0);
      for (float f : lm.desc) w.put(f);
    }
  }
  auto& bytes = w.bytes();
  const std::uint64_t checksum = fnv1a(bytes.data(), bytes.size());
  w.put(checksum);
  return std::move(bytes);
}

SceneMap deserialize_map(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 + sizeof(std::uint64_t))
    throw Error(ErrorCode::CorruptPayload, "map stream too short");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw Error(ErrorCode::CorruptPayload, "bad magic");

  Reader r(bytes);
  for (int i = 0; i < 4; ++i) r.get<char>();
  const auto version = r.get<std::uint32_t>();
  if (version != kMapFormatVersion)
    throw Error(ErrorCode::VersionMismatch,
                "map format " + std::to_string(version) + ", expected " + std::to_string(kMapFormatVersion));

  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof(stored));
  if (stored != fnv1a(bytes.data(), body)) throw Error(ErrorCode::CorruptPayload, "checksum mismatch");
  Reader rb(bytes.first(body));
  for (int i = 0; i < 8; ++i) rb.get<char>();

  SceneMap map;
  map.reference = rb.get<std::int32_t>();
  map.next_landmark_id = rb.get<std::int64_t>();
  const auto has_world = rb.get<std::uint8_t>();
  if (has_world > 1) throw Error(ErrorCode::CorruptPayload, "bad world flag");
  if (has_world) {
    const Mat3 h = rb.get_mat3();
    map.H_W = raw_homography(h, rb.get_cov());
  }
  const auto n_views = rb.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_views; ++i) {
    ViewMap v;
    v.id = rb.get<std::int32_t>();
    if (v.id != static_cast<std::int32_t>(i)) throw Error(ErrorCode::CorruptPayload, "view ids out of order");
    v.key.pan_deg = rb.get<double>();
    v.key.tilt_deg = rb.get<double>();
    v.key.zoom = rb.get<double>();
    v.key.pan_sd = rb.get<double>();
    v.key.tilt_sd = rb.get<double>();
    v.key.zoom_sd = rb.get<double>();
    const Mat3 h = rb.get_mat3();
    v.H_rk = raw_homography(h, rb.get_cov());
    v.K.f = rb.get<double>();
    const double ppx = rb.get<double>();
    v.K.pp = Vec2(ppx, rb.get<double>());
    v.R = rb.get_mat3();
    const auto dim = rb.get<std::uint32_t>();
    const auto n_lm = rb.get<std::uint32_t>();
    // Each landmark needs at least 65 + 4*dim bytes; reject absurd counts before allocating.
    if (static_cast<std::uint64_t>(n_lm) * (65 + 4ull * dim) > rb.remaining())
      throw Error(ErrorCode::CorruptPayload, "landmark count exceeds payload");
    v.landmarks.resize(n_lm);
    for (auto& lm : v.landmarks) {
      lm.id = rb.get<std::int64_t>();
      const double x = rb.get<double>();
      lm.pos = Vec2(x, rb.get<double>());
      lm.P(0, 0) = rb.get<double>();
      lm.P(0, 1) = rb.get<double>();
      lm.P(1, 0) = rb.get<double>();
      lm.P(1, 1) = rb.get<double>();
      lm.frames_seen = rb.get<std::int32_t>();
      lm.frames_since_match = rb.get<std::int32_t>();
      lm.born_at = rb.get<std::int64_t>();
      const auto orig = rb.get<std::uint8_t>();
      if (orig > 1) throw Error(ErrorCode::CorruptPayload, "bad landmark flag");
      lm.original = orig == 1;
      lm.desc.resize(dim);
      for (auto& f : lm.desc) f = rb.get<float>();
    }
    map.views.push_back(std::move(v));
  }
  if (rb.remaining() != 0) throw Error(ErrorCode::CorruptPayload, "trailing bytes in map stream");
  if (!map.views.empty() && (map.reference < 0 || map.reference >= static_cast<std::int32_t>(map.views.size())))
    throw Error(ErrorCode::CorruptPayload, "reference id out of range");
  return map;
}

void save_map(const SceneMap& map, const std::string& path) {
  const auto bytes = serialize_map(map);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::ConfigError, "cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::ConfigError, "short write to " + path);
}

SceneMap load_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_map(bytes);
}

}  // namespace ptz

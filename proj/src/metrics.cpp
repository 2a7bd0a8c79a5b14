#include "ptz/metrics.hpp"

#include "ptz/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

namespace ptz {

namespace {

double wrapped_deg(double a_rad, double b_rad) {
  double d = std::remainder(a_rad - b_rad, 2.0 * std::numbers::pi);
  return std::abs(d) * 180.0 / std::numbers::pi;
}

}  // namespace

CalibErrorRecord calib_errors(const CameraPose& est, const Mat3& H_est, const CameraPose& ref, const Mat3& H_ref,
                              int width, int height, int grid_step) {
  CalibErrorRecord r;
  r.e_pan_deg = wrapped_deg(est.pan, ref.pan);
  r.e_tilt_deg = wrapped_deg(est.tilt, ref.tilt);
  r.e_f_pct = std::abs((est.focal - ref.focal) / ref.focal) * 100.0;
  const Mat3 M = H_est.inverse() * H_ref;
  double sum = 0.0;
  int n = 0;
  for (int y = grid_step / 2; y < height; y += grid_step)
    for (int x = grid_step / 2; x < width; x += grid_step) {
      const Vec2 p(x, y);
      const Vec3 q = M * p.homogeneous();
      sum += (q.hnormalized() - p).norm();
      ++n;
    }
  r.reproj_px = n > 0 ? sum / n : 0.0;
  return r;
}

CalibErrorRecord mean_calib_errors(std::span<const CalibErrorRecord> records) {
  CalibErrorRecord m;
  if (records.empty()) return m;
  for (const auto& r : records) {
    m.e_pan_deg += r.e_pan_deg;
    m.e_tilt_deg += r.e_tilt_deg;
    m.e_f_pct += r.e_f_pct;
    m.reproj_px += r.reproj_px;
  }
  const double n = static_cast<double>(records.size());
  m.e_pan_deg /= n;
  m.e_tilt_deg /= n;
  m.e_f_pct /= n;
  m.reproj_px /= n;
  return m;
}

Box box_from_foot(const Vec2& foot, double height, double aspect) {
  const double w = aspect * height;
  return Box{foot.x() - 0.5 * w, foot.y() - height, foot.x() + 0.5 * w, foot.y()};
}

double voc(const Box& a, const Box& b) {
  const Box i{std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1), std::min(a.y1, b.y1)};
  const double inter = i.area();
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

const char* to_string(MotEventType t) {
  switch (t) {
    case MotEventType::TruePositive: return "TP";
    case MotEventType::Miss: return "FN";
    case MotEventType::FalsePositive: return "FP";
    case MotEventType::Switch: return "SW";
    case MotEventType::Fragment: return "FRAG";
  }
  return "?";
}

std::vector<int> hungarian(const std::vector<double>& cost, int rows, int cols) {
  // Shortest augmenting path (Jonker-Volgenant style potentials) on a square
  // padding of the matrix.
  const int n = std::max(rows, cols);
  const double big = 1e9;
  auto a = [&](int i, int j) { return (i < rows && j < cols) ? cost[static_cast<std::size_t>(i * cols + j)] : big; };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> out(static_cast<std::size_t>(rows), -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] >= 1 && p[j] <= rows && j <= cols) out[static_cast<std::size_t>(p[j] - 1)] = j - 1;
  return out;
}

MotReport clear_mot(std::span<const MotFrame> gt, std::span<const MotFrame> hyp, const MotOptions& options) {
  if (gt.size() != hyp.size()) throw Error(ErrorCode::FrameIndexMismatch, "frame counts differ");
  for (std::size_t t = 0; t < gt.size(); ++t) {
    if (gt[t].frame != hyp[t].frame) throw Error(ErrorCode::FrameIndexMismatch, "frame indices differ");
    if (t > 0 && gt[t].frame <= gt[t - 1].frame)
      throw Error(ErrorCode::FrameIndexMismatch, "frames are not increasing");
  }

  struct GtState {
    int last_hyp = -1;  // for switches
    int prev_hyp = -1;  // correspondence in the previous frame
    bool ever_tracked = false;
    bool gap = false;
    std::int64_t present = 0, tracked = 0;
  };
  std::map<int, GtState> states;
  MotReport r;
  double voc_sum = 0.0;
  const double thr = options.threshold;

  for (std::size_t t = 0; t < gt.size(); ++t) {
    const auto& G = gt[t].objects;
    const auto& H = hyp[t].objects;
    const std::int64_t frame = gt[t].frame;
    ++r.frames;
    r.gt_objects += static_cast<std::int64_t>(G.size());
    std::vector<int> match(G.size(), -1);
    std::vector<char> hyp_used(H.size(), 0);

    // Keep last frame's correspondences that are still valid.
    for (std::size_t g = 0; g < G.size(); ++g) {
      const int prev = states[G[g].id].prev_hyp;
      if (prev < 0) continue;
      for (std::size_t h = 0; h < H.size(); ++h)
        if (!hyp_used[h] && H[h].id == prev && voc(G[g].box, H[h].box) >= thr) {
          match[g] = static_cast<int>(h);
          hyp_used[h] = 1;
          break;
        }
    }
    // Hungarian on the rest.
    std::vector<int> rows, cols;
    for (std::size_t g = 0; g < G.size(); ++g)
      if (match[g] < 0) rows.push_back(static_cast<int>(g));
    for (std::size_t h = 0; h < H.size(); ++h)
      if (!hyp_used[h]) cols.push_back(static_cast<int>(h));
    if (!rows.empty() && !cols.empty()) {
      std::vector<double> cost(rows.size() * cols.size());
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) {
          const double o = voc(G[static_cast<std::size_t>(rows[i])].box, H[static_cast<std::size_t>(cols[j])].box);
          cost[i * cols.size() + j] = o >= thr ? 1.0 - o : 1e6;
        }
      const auto asg = hungarian(cost, static_cast<int>(rows.size()), static_cast<int>(cols.size()));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (asg[i] < 0) continue;
        if (cost[i * cols.size() + static_cast<std::size_t>(asg[i])] >= 1e6) continue;
        match[static_cast<std::size_t>(rows[i])] = cols[static_cast<std::size_t>(asg[i])];
        hyp_used[static_cast<std::size_t>(cols[static_cast<std::size_t>(asg[i])])] = 1;
      }
    }

    for (std::size_t g = 0; g < G.size(); ++g) {
      GtState& s = states[G[g].id];
      ++s.present;
      if (match[g] >= 0) {
        const MotObject& h = H[static_cast<std::size_t>(match[g])];
        const double o = voc(G[g].box, h.box);
        ++r.tp_count;
        ++s.tracked;
        voc_sum += o;
        r.events.push_back({frame, MotEventType::TruePositive, G[g].id, h.id, o});
        if (s.last_hyp >= 0 && s.last_hyp != h.id) {
          ++r.id_sw;
          r.events.push_back({frame, MotEventType::Switch, G[g].id, h.id, o});
        }
        if (s.gap) {
          ++r.tr_fr;
          r.events.push_back({frame, MotEventType::Fragment, G[g].id, h.id, o});
          s.gap = false;
        }
        s.last_hyp = h.id;
        s.prev_hyp = h.id;
        s.ever_tracked = true;
      } else {
        ++r.fn_count;
        r.events.push_back({frame, MotEventType::Miss, G[g].id, -1, 0.0});
        if (s.ever_tracked) s.gap = true;
        s.prev_hyp = -1;
      }
    }
    // Ground truth absent this frame loses its running correspondence.
    for (auto& [id, s] : states) {
      const bool here = std::any_of(G.begin(), G.end(), [&](const MotObject& o) { return o.id == id; });
      if (!here) s.prev_hyp = -1;
    }
    for (std::size_t h = 0; h < H.size(); ++h)
      if (!hyp_used[h]) {
        ++r.fp_count;
        r.events.push_back({frame, MotEventType::FalsePositive, -1, H[h].id, 0.0});
      }
  }

  const double n = static_cast<double>(r.gt_objects);
  if (r.gt_objects > 0) {
    r.mota = 100.0 * (1.0 - static_cast<double>(r.fn_count + r.fp_count + r.id_sw) / n);
    r.fn = 100.0 * static_cast<double>(r.fn_count) / n;
    r.fp = 100.0 * static_cast<double>(r.fp_count) / n;
  } else {
    r.mota = std::numeric_limits<double>::quiet_NaN();
  }
  r.motp = r.tp_count > 0 ? 100.0 * voc_sum / static_cast<double>(r.tp_count) : 0.0;
  r.faf = r.frames > 0 ? static_cast<double>(r.fp_count) / static_cast<double>(r.frames) : 0.0;
  int mt = 0, pt = 0, ml = 0;
  for (const auto& [id, s] : states) {
    if (s.present == 0) continue;
    const double cover = static_cast<double>(s.tracked) / static_cast<double>(s.present);
    if (cover > 0.8)
      ++mt;
    else if (cover < 0.2)
      ++ml;
    else
      ++pt;
  }
  r.gt_trajectories = mt + pt + ml;
  if (r.gt_trajectories > 0) {
    r.mt = 100.0 * mt / r.gt_trajectories;
    r.pt = 100.0 * pt / r.gt_trajectories;
    r.ml = 100.0 * ml / r.gt_trajectories;
  }
  return r;
}

UscReport usc_metric(std::span<const MotFrame> gt, std::span<const MotFrame> hyp, const MotOptions& options) {
  const MotReport r = clear_mot(gt, hyp, options);
  // Recount from the event log.
  std::map<int, std::pair<std::int64_t, std::int64_t>> cover;  // present, tracked
  std::int64_t fp = 0;
  for (const auto& e : r.events) {
    if (e.type == MotEventType::TruePositive) {
      ++cover[e.gt].first;
      ++cover[e.gt].second;
    } else if (e.type == MotEventType::Miss) {
      ++cover[e.gt].first;
    } else if (e.type == MotEventType::FalsePositive) {
      ++fp;
    }
  }
  UscReport u;
  int mt = 0, pt = 0, ml = 0;
  for (const auto& [id, c] : cover) {
    const double f = static_cast<double>(c.second) / static_cast<double>(c.first);
    if (f > 0.8)
      ++mt;
    else if (f < 0.2)
      ++ml;
    else
      ++pt;
  }
  const int total = mt + pt + ml;
  if (total > 0) {
    u.mt = 100.0 * mt / total;
    u.pt = 100.0 * pt / total;
    u.ml = 100.0 * ml / total;
  }
  u.faf = r.frames > 0 ? static_cast<double>(fp) / static_cast<double>(r.frames) : 0.0;
  return u;
}

std::string mot_report_json(const MotReport& r) {
  nlohmann::ordered_json j;
  j["MOTA"] = r.mota;
  j["MOTP"] = r.motp;
  j["FN"] = r.fn;
  j["FP"] = r.fp;
  j["ID_SW"] = r.id_sw;
  j["TR_FR"] = r.tr_fr;
  j["MT"] = r.mt;
  j["PT"] = r.pt;
  j["ML"] = r.ml;
  j["FAF"] = r.faf;
  j["frames"] = r.frames;
  j["gt_objects"] = r.gt_objects;
  j["tp"] = r.tp_count;
  j["fn"] = r.fn_count;
  j["fp"] = r.fp_count;
  j["gt_trajectories"] = r.gt_trajectories;
  return j.dump(2);
}

std::string mot_events_csv(const MotReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "frame,event,gt,hyp,voc\n";
  for (const auto& e : r.events)
    os << e.frame << ',' << to_string(e.type) << ',' << e.gt << ',' << e.hyp << ',' << e.overlap << '\n';
  return os.str();
}

}  // namespace ptz

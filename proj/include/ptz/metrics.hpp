#pragma once

// Evaluation: calibration errors against ground truth, CLEAR MOT and the
// USC trajectory buckets.

#include "ptz/geometry.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ptz {

struct CalibErrorRecord {
  double e_pan_deg = 0.0;
  double e_tilt_deg = 0.0;
  double e_f_pct = 0.0;
  double reproj_px = 0.0;  // mean over the grid, current-frame pixels
};

/// Pose errors plus the mean distance between grid points of the frame and
/// their images under H_est^-1 H_ref (both frame -> reference).
CalibErrorRecord calib_errors(const CameraPose& est, const Mat3& H_est, const CameraPose& ref, const Mat3& H_ref,
                              int width, int height, int grid_step = 40);

/// Means of the four fields.
CalibErrorRecord mean_calib_errors(std::span<const CalibErrorRecord> records);

struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double area() const { return std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0); }
};

/// Upright box standing on the foot point, width = aspect * height.
Box box_from_foot(const Vec2& foot, double height, double aspect = 0.41);

/// Intersection over union.
double voc(const Box& a, const Box& b);

struct MotObject {
  int id = 0;
  Box box;
};

struct MotFrame {
  std::int64_t frame = 0;
  std::vector<MotObject> objects;
};

enum class MotEventType { TruePositive, Miss, FalsePositive, Switch, Fragment };
const char* to_string(MotEventType t);

struct MotEvent {
  std::int64_t frame = 0;
  MotEventType type = MotEventType::TruePositive;
  int gt = -1;
  int hyp = -1;
  double overlap = 0.0;
};

struct MotReport {
  double mota = 0.0;  // percent
  double motp = 0.0;  // percent, mean VOC of true positives
  double fn = 0.0;    // percent of ground-truth objects
  double fp = 0.0;    // percent of ground-truth objects
  int id_sw = 0;
  int tr_fr = 0;  // interruptions of a ground-truth trajectory that is later tracked again
  double mt = 0.0, pt = 0.0, ml = 0.0;  // percent of ground-truth trajectories
  double faf = 0.0;  // false positives per frame
  std::int64_t frames = 0;
  std::int64_t gt_objects = 0;
  std::int64_t tp_count = 0, fn_count = 0, fp_count = 0;
  int gt_trajectories = 0;
  std::vector<MotEvent> events;
};

struct MotOptions {
  double threshold = 0.5;
};

/// Frame-by-frame assignment: correspondences from the previous frame are kept
/// while their overlap stays above the threshold, the rest are solved by
/// Hungarian matching on VOC. Frame lists must list the same frames in the
/// same increasing order; otherwise throws FrameIndexMismatch.
MotReport clear_mot(std::span<const MotFrame> gt, std::span<const MotFrame> hyp, const MotOptions& options = {});

/// MT / PT / ML / FAF fields of a report, recomputed from its event log.
struct UscReport {
  double mt = 0.0, pt = 0.0, ml = 0.0, faf = 0.0;
};
UscReport usc_metric(std::span<const MotFrame> gt, std::span<const MotFrame> hyp, const MotOptions& options = {});

/// Minimum-cost assignment of a rectangular cost matrix (rows x cols, row-major).
/// Returns for each row the assigned column or -1.
std::vector<int> hungarian(const std::vector<double>& cost, int rows, int cols);

std::string mot_report_json(const MotReport& r);
std::string mot_events_csv(const MotReport& r);

}  // namespace ptz

#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fusedet/detector.hpp"
#include "fusedet/synth_video.hpp"

namespace fusedet {

struct Box {
  float x_min = 0, y_min = 0, x_max = 0, y_max = 0;
};

/// Intersection area / union area; 0 for disjoint boxes, error on
/// degenerate (non-positive area) boxes.
float iou(const Box& a, const Box& b);

/// Per-detection match flags for one frame and one class, score-descending.
struct MatchResult {
  std::vector<std::pair<float, bool>> detections;  // (score, matched)
  int gt_count = 0;
};

/// Greedy matching: detections sorted by descending score (ties keep input
/// order), each taking the unmatched ground truth of highest IoU >= the
/// threshold. Every ground truth matches at most once.
struct ScoredBox {
  float score = 0;
  Box box;
};
MatchResult match_detections(const std::vector<ScoredBox>& dets, const std::vector<Box>& gts,
                             float iou_threshold);

struct PrCurve {
  std::vector<std::pair<double, double>> points;  // (recall, precision)
  double ap = 0.0;
};

/// Area under the precision-recall curve with all-points interpolation:
/// ap = sum (r_i - r_{i-1}) * max precision at recall >= r_i.
PrCurve average_precision(std::vector<std::pair<float, bool>> scored_matches, int gt_count);

/// Unweighted mean over classes with ground truth present.
double mean_average_precision(const std::vector<std::optional<PrCurve>>& per_class);

// ---------------------------------------------------------------------------
// Whole-run evaluation over CSV-shaped records

struct DetRecord {
  std::string frame_key;  // "<sequence_id>/<frame_index>"
  int class_id = 0;
  float score = 0;
  Box box;
};

struct GtRecord {
  std::string frame_key;
  int class_id = 0;
  Box box;
};

struct ClassMetrics {
  int class_id = 0;
  int gt_count = 0;
  PrCurve curve;
};

struct EvalResult {
  std::vector<ClassMetrics> per_class;  // classes with ground truth, ascending id
  double map = 0.0;
};

EvalResult evaluate(const std::vector<DetRecord>& dets, const std::vector<GtRecord>& gts,
                    float iou_threshold);

/// Convenience: run a model over sequences (cache on) and collect records.
std::vector<DetRecord> run_detector(const DetectorModel& model,
                                    const std::vector<Sequence>& sequences);
std::vector<GtRecord> gt_records(const std::vector<Sequence>& sequences);

double test_map(const DetectorModel& model, const std::vector<Sequence>& sequences,
                float iou_threshold);

std::vector<DetRecord> read_detections_csv(const std::string& path);
std::vector<GtRecord> read_gt_csv(const std::string& path);

}  // namespace fusedet

#include "fusedet/eval.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace fusedet {

float iou(const Box& a, const Box& b) {
  const float area_a = (a.x_max - a.x_min) * (a.y_max - a.y_min);
  const float area_b = (b.x_max - b.x_min) * (b.y_max - b.y_min);
  if (area_a <= 0 || area_b <= 0) throw TensorError("iou: degenerate box");
  const float ix = std::max(0.0f, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const float iy = std::max(0.0f, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const float inter = ix * iy;
  return inter / (area_a + area_b - inter);
}

MatchResult match_detections(const std::vector<ScoredBox>& dets, const std::vector<Box>& gts,
                             float iou_threshold) {
  if (iou_threshold <= 0.0f || iou_threshold >= 1.0f) {
    throw TensorError("iou threshold must be in (0,1)");
  }
  // Stable sort keeps input order on score ties.
  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  MatchResult result;
  result.gt_count = static_cast<int>(gts.size());
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t oi : order) {
    const ScoredBox& d = dets[oi];
    float best_iou = 0.0f;
    int best_gt = -1;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      if (taken[gi]) continue;
      const float v = iou(d.box, gts[gi]);
      if (v >= iou_threshold && v > best_iou) {
        best_iou = v;
        best_gt = static_cast<int>(gi);
      }
    }
    const bool matched = best_gt >= 0;
    if (matched) taken[static_cast<std::size_t>(best_gt)] = true;
    result.detections.emplace_back(d.score, matched);
  }
  return result;
}

PrCurve average_precision(std::vector<std::pair<float, bool>> scored_matches, int gt_count) {
  if (gt_count <= 0) throw TensorError("average_precision: no ground truth");
  std::stable_sort(scored_matches.begin(), scored_matches.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  PrCurve curve;
  int tp = 0;
  for (std::size_t i = 0; i < scored_matches.size(); ++i) {
    if (scored_matches[i].second) ++tp;
    const double precision = static_cast<double>(tp) / static_cast<double>(i + 1);
    const double recall = static_cast<double>(tp) / static_cast<double>(gt_count);
    curve.points.emplace_back(recall, precision);
  }

  // All-points interpolation: precision envelope from the right.
  std::vector<double> interp(curve.points.size());
  double running = 0.0;
  for (std::size_t i = curve.points.size(); i-- > 0;) {
    running = std::max(running, curve.points[i].second);
    interp[i] = running;
  }
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < curve.points.size(); ++i) {
    const double r = curve.points[i].first;
    if (r > prev_recall) {
      ap += (r - prev_recall) * interp[i];
      prev_recall = r;
    }
  }
  curve.ap = ap;
  return curve;
}

double mean_average_precision(const std::vector<std::optional<PrCurve>>& per_class) {
  double total = 0.0;
  int present = 0;
  for (const auto& c : per_class) {
    if (!c) continue;
    total += c->ap;
    ++present;
  }
  if (present == 0) throw TensorError("mean_average_precision: no class with ground truth");
  return total / static_cast<double>(present);
}

// ---------------------------------------------------------------------------
// Whole-run evaluation

EvalResult evaluate(const std::vector<DetRecord>& dets, const std::vector<GtRecord>& gts,
                    float iou_threshold) {
  // Bucket by (frame, class).
  std::map<std::pair<std::string, int>, std::vector<ScoredBox>> det_buckets;
  std::map<std::pair<std::string, int>, std::vector<Box>> gt_buckets;
  std::set<int> classes;
  for (const DetRecord& d : dets) {
    det_buckets[{d.frame_key, d.class_id}].push_back({d.score, d.box});
  }
  for (const GtRecord& g : gts) {
    gt_buckets[{g.frame_key, g.class_id}].push_back(g.box);
    classes.insert(g.class_id);
  }

  EvalResult result;
  std::vector<std::optional<PrCurve>> curves;
  for (int cls : classes) {
    std::vector<std::pair<float, bool>> scored;
    int gt_count = 0;
    // Frames with ground truth for this class.
    for (const auto& [key, boxes] : gt_buckets) {
      if (key.second != cls) continue;
      gt_count += static_cast<int>(boxes.size());
      std::vector<ScoredBox> frame_dets;
      if (auto it = det_buckets.find(key); it != det_buckets.end()) frame_dets = it->second;
      MatchResult m = match_detections(frame_dets, boxes, iou_threshold);
      scored.insert(scored.end(), m.detections.begin(), m.detections.end());
    }
    // Detections on frames without any ground truth of this class are
    // false positives.
    for (const auto& [key, boxes] : det_buckets) {
      if (key.second != cls) continue;
      if (gt_buckets.count(key)) continue;
      for (const ScoredBox& d : boxes) scored.emplace_back(d.score, false);
    }
    ClassMetrics cm;
    cm.class_id = cls;
    cm.gt_count = gt_count;
    cm.curve = average_precision(std::move(scored), gt_count);
    curves.emplace_back(cm.curve);
    result.per_class.push_back(std::move(cm));
  }
  result.map = mean_average_precision(curves);
  return result;
}

std::vector<DetRecord> run_detector(const DetectorModel& model,
                                    const std::vector<Sequence>& sequences) {
  std::vector<DetRecord> records;
  for (const Sequence& seq : sequences) {
    FeatureCache cache(static_cast<std::size_t>(2 * model.n + 1));
    for (int t = 0; t < static_cast<int>(seq.frames.size()); ++t) {
      for (const Detection& d : model.detect_frame(cache, seq.frames, t)) {
        DetRecord r;
        r.frame_key = seq.id + "/" + std::to_string(t);
        r.class_id = d.class_id;
        r.score = d.score;
        r.box = {d.x_min, d.y_min, d.x_max, d.y_max};
        records.push_back(std::move(r));
      }
    }
  }
  return records;
}

std::vector<GtRecord> gt_records(const std::vector<Sequence>& sequences) {
  std::vector<GtRecord> records;
  for (const Sequence& seq : sequences) {
    for (std::size_t t = 0; t < seq.ground_truth.size(); ++t) {
      for (const GtBox& b : seq.ground_truth[t]) {
        GtRecord r;
        r.frame_key = seq.id + "/" + std::to_string(t);
        r.class_id = b.class_id;
        r.box = {b.x_min, b.y_min, b.x_max, b.y_max};
        records.push_back(std::move(r));
      }
    }
  }
  return records;
}

double test_map(const DetectorModel& model, const std::vector<Sequence>& sequences,
                float iou_threshold) {
  return evaluate(run_detector(model, sequences), gt_records(sequences), iou_threshold).map;
}

namespace {
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::istringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  return fields;
}
}  // namespace

std::vector<DetRecord> read_detections_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw TensorError("cannot open detections csv: " + path);
  std::vector<DetRecord> records;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 7) throw TensorError("bad detections row: " + line);
    DetRecord r;
    r.frame_key = fields[0];
    r.class_id = std::stoi(fields[1]);
    r.score = std::stof(fields[2]);
    r.box = {std::stof(fields[3]), std::stof(fields[4]), std::stof(fields[5]),
             std::stof(fields[6])};
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<GtRecord> read_gt_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw TensorError("cannot open gt csv: " + path);
  std::vector<GtRecord> records;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 8) throw TensorError("bad gt row: " + line);
    GtRecord r;
    r.frame_key = fields[0] + "/" + fields[1];
    r.class_id = std::stoi(fields[2]);
    r.box = {std::stof(fields[3]), std::stof(fields[4]), std::stof(fields[5]),
             std::stof(fields[6])};
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace fusedet

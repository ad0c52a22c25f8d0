#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fusedet/detector.hpp"
#include "fusedet/synth_video.hpp"

namespace fusedet {

enum class Stage { single_frame, fusion };
enum class OptimKind { sgd_momentum, adam };

struct TrainConfig {
  Stage stage = Stage::single_frame;
  int epochs = 20;
  int batch_size = 8;
  float lr = 1e-3f;
  OptimKind optimizer = OptimKind::adam;
  std::vector<std::string> freeze;  // layer-name prefixes; stage fusion default {"backbone"}
  std::uint64_t seed = 1;
  float size_loss_weight = 0.1f;
  float divergence_threshold = 1e4f;
  /// Halve the learning rate when the validation loss has not improved for
  /// this many epochs; 0 disables the schedule.
  int plateau_patience = 3;
};

// ---------------------------------------------------------------------------
// Targets

struct GroundTruthTargets {
  Tensor heatmap;  // K x h' x w', Gaussian splats, exact 1.0 at centre cells
  Tensor size;     // 2 x h' x w', valid at centre cells (input pixels)
  Tensor offset;   // 2 x h' x w', fractional centre remainder (cells)
  Tensor mask;     // 1 x h' x w', 1.0 at centre cells
  int num_objects = 0;
};

/// Gaussian radius = max(1, min(w,h)/(2R)) cells; overlapping splats
/// combine by elementwise max. Degenerate boxes are rejected.
GroundTruthTargets build_targets(const std::vector<GtBox>& boxes, const DetectorConfig& cfg);

// ---------------------------------------------------------------------------
// Loss: penalty-reduced focal (alpha=2, beta=4) on heatmaps, L1 on size and
// offset at centre cells, total = L_heat + size_weight * L_size + L_off.

struct LossResult {
  double total = 0, heat = 0, size = 0, offset = 0;
  Tensor grad_heatmap;  // d total / d post-sigmoid heatmap
  Tensor grad_size;
  Tensor grad_offset;
};

LossResult detection_loss(const HeadOutputs& outputs, const GroundTruthTargets& targets,
                          float size_weight = 0.1f);

// ---------------------------------------------------------------------------
// Optimizer

class Optimizer {
 public:
  Optimizer(std::vector<ParamRef> params, OptimKind kind, float lr);

  /// Apply accumulated gradients (scaled by grad_scale) to all unfrozen
  /// parameters. Frozen parameters are untouched, bit for bit.
  void step(float grad_scale);
  void zero_grads();
  void set_lr(float lr) { lr_ = lr; }
  float lr() const { return lr_; }

 private:
  struct Slot {
    ParamRef ref;
    std::vector<float> m, v;
  };
  std::vector<Slot> slots_;
  OptimKind kind_;
  float lr_;
  std::int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Two-stage training

struct EpochRow {
  int epoch = 0;  // 0 = before any update
  double train_loss = 0;
  double val_loss = 0;
};

struct TrainReport {
  std::vector<EpochRow> curve;
  int best_epoch = 0;
  double best_val_loss = 0;
  std::vector<std::string> update_sequence_ids;  // audit of sequences seen in updates

  std::string curve_csv() const;
};

/// Stage 1: train the single-frame detector (n = 0, fusion none).
TrainReport train_stage1(DetectorModel& model, const Dataset& data, const TrainConfig& cfg);

/// Stage 2: freeze the named prefixes (default: the whole backbone) and
/// train fusion, heads and attention on windows of 2n+1 frames. The model
/// carries stage-1 weights; learned fusion is expected identity-initialized.
TrainReport train_stage2(DetectorModel& model, const Dataset& data, const TrainConfig& cfg);

}  // namespace fusedet

#include "fusedet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace fusedet {

// ---------------------------------------------------------------------------
// Targets

GroundTruthTargets build_targets(const std::vector<GtBox>& boxes, const DetectorConfig& cfg) {
  const int hc = cfg.feature_h(), wc = cfg.feature_w();
  const float r_stride = static_cast<float>(cfg.stride);
  GroundTruthTargets t;
  t.heatmap = Tensor({cfg.num_classes, hc, wc});
  t.size = Tensor({2, hc, wc});
  t.offset = Tensor({2, hc, wc});
  t.mask = Tensor({1, hc, wc});

  for (const GtBox& b : boxes) {
    const float bw = b.x_max - b.x_min, bh = b.y_max - b.y_min;
    if (bw <= 0 || bh <= 0) throw TensorError("build_targets: degenerate box");
    if (b.class_id < 0 || b.class_id >= cfg.num_classes) {
      throw TensorError("build_targets: class id out of range");
    }
    const float cx = (b.x_min + b.x_max) * 0.5f / r_stride;
    const float cy = (b.y_min + b.y_max) * 0.5f / r_stride;
    const int cell_x = std::clamp(static_cast<int>(cx), 0, wc - 1);
    const int cell_y = std::clamp(static_cast<int>(cy), 0, hc - 1);

    const float radius = std::max(1.0f, std::min(bw, bh) / (2.0f * r_stride));
    const float sigma = (2.0f * radius + 1.0f) / 6.0f;
    const int reach = static_cast<int>(std::ceil(3.0f * sigma));
    for (int dy = -reach; dy <= reach; ++dy) {
      const int y = cell_y + dy;
      if (y < 0 || y >= hc) continue;
      for (int dx = -reach; dx <= reach; ++dx) {
        const int x = cell_x + dx;
        if (x < 0 || x >= wc) continue;
        const float g = std::exp(-static_cast<float>(dx * dx + dy * dy) / (2.0f * sigma * sigma));
        float& cell = t.heatmap.at(b.class_id, y, x);
        cell = std::max(cell, g);  // overlapping splats combine by max
      }
    }
    t.heatmap.at(b.class_id, cell_y, cell_x) = 1.0f;
    t.size.at(0, cell_y, cell_x) = bw;
    t.size.at(1, cell_y, cell_x) = bh;
    t.offset.at(0, cell_y, cell_x) = cx - static_cast<float>(cell_x);
    t.offset.at(1, cell_y, cell_x) = cy - static_cast<float>(cell_y);
    t.mask.at(0, cell_y, cell_x) = 1.0f;
    ++t.num_objects;
  }
  return t;
}

// ---------------------------------------------------------------------------
// Loss

LossResult detection_loss(const HeadOutputs& outputs, const GroundTruthTargets& targets,
                          float size_weight) {
  if (outputs.heatmap.shape != targets.heatmap.shape ||
      outputs.size.shape != targets.size.shape || outputs.offset.shape != targets.offset.shape) {
    throw TensorError("detection_loss: output/target shape mismatch");
  }
  LossResult r;
  r.grad_heatmap = Tensor(outputs.heatmap.shape);
  r.grad_size = Tensor(outputs.size.shape);
  r.grad_offset = Tensor(outputs.offset.shape);

  const float inv_n = 1.0f / static_cast<float>(std::max(1, targets.num_objects));
  constexpr float kEps = 1e-5f;

  double heat = 0.0;
  for (std::size_t i = 0; i < outputs.heatmap.data.size(); ++i) {
    const float p = std::clamp(outputs.heatmap.data[i], kEps, 1.0f - kEps);
    const float y = targets.heatmap.data[i];
    if (y == 1.0f) {
      const float lg = std::log(p);
      heat -= static_cast<double>((1.0f - p) * (1.0f - p) * lg);
      r.grad_heatmap.data[i] = (2.0f * (1.0f - p) * lg - (1.0f - p) * (1.0f - p) / p) * inv_n;
    } else {
      const float w = (1.0f - y) * (1.0f - y);
      const float w4 = w * w;  // (1 - y)^4
      const float lg1m = std::log(1.0f - p);
      heat -= static_cast<double>(w4 * p * p * lg1m);
      r.grad_heatmap.data[i] = w4 * (p * p / (1.0f - p) - 2.0f * p * lg1m) * inv_n;
    }
  }
  r.heat = heat * static_cast<double>(inv_n);

  double size_loss = 0.0, off_loss = 0.0;
  const int hc = targets.mask.dim(1), wc = targets.mask.dim(2);
  for (int y = 0; y < hc; ++y) {
    for (int x = 0; x < wc; ++x) {
      if (targets.mask.at(0, y, x) != 1.0f) continue;
      for (int ch = 0; ch < 2; ++ch) {
        const float ds = outputs.size.at(ch, y, x) - targets.size.at(ch, y, x);
        size_loss += std::abs(static_cast<double>(ds));
        r.grad_size.at(ch, y, x) = (ds > 0 ? 1.0f : ds < 0 ? -1.0f : 0.0f) * inv_n * size_weight;
        const float doff = outputs.offset.at(ch, y, x) - targets.offset.at(ch, y, x);
        off_loss += std::abs(static_cast<double>(doff));
        r.grad_offset.at(ch, y, x) = (doff > 0 ? 1.0f : doff < 0 ? -1.0f : 0.0f) * inv_n;
      }
    }
  }
  r.size = size_loss * static_cast<double>(inv_n);
  r.offset = off_loss * static_cast<double>(inv_n);
  r.total = r.heat + static_cast<double>(size_weight) * r.size + r.offset;
  if (!std::isfinite(r.total)) {
    throw NumericError("detection_loss is not finite (heat=" + std::to_string(r.heat) +
                       " size=" + std::to_string(r.size) + " off=" + std::to_string(r.offset) +
                       ")");
  }
  return r;
}

// ---------------------------------------------------------------------------
// Optimizer

Optimizer::Optimizer(std::vector<ParamRef> params, OptimKind kind, float lr)
    : kind_(kind), lr_(lr) {
  slots_.reserve(params.size());
  for (ParamRef& p : params) {
    Slot s;
    s.ref = p;
    s.m.assign(p.value->data.size(), 0.0f);
    if (kind_ == OptimKind::adam) s.v.assign(p.value->data.size(), 0.0f);
    slots_.push_back(std::move(s));
  }
}

void Optimizer::step(float grad_scale) {
  ++t_;
  constexpr float kBeta1 = 0.9f, kBeta2 = 0.999f, kAdamEps = 1e-8f;
  const float bc1 = 1.0f - std::pow(kBeta1, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(kBeta2, static_cast<float>(t_));
  for (Slot& s : slots_) {
    if (s.ref.frozen && *s.ref.frozen) continue;
    float* p = s.ref.value->data.data();
    const float* g = s.ref.grad->data.data();
    const std::size_t count = s.ref.value->data.size();
    if (kind_ == OptimKind::adam) {
      for (std::size_t i = 0; i < count; ++i) {
        const float gi = g[i] * grad_scale;
        s.m[i] = kBeta1 * s.m[i] + (1.0f - kBeta1) * gi;
        s.v[i] = kBeta2 * s.v[i] + (1.0f - kBeta2) * gi * gi;
        p[i] -= lr_ * (s.m[i] / bc1) / (std::sqrt(s.v[i] / bc2) + kAdamEps);
      }
    } else {
      for (std::size_t i = 0; i < count; ++i) {
        s.m[i] = 0.9f * s.m[i] + g[i] * grad_scale;
        p[i] -= lr_ * s.m[i];
      }
    }
  }
}

void Optimizer::zero_grads() {
  for (Slot& s : slots_) {
    std::fill(s.ref.grad->data.begin(), s.ref.grad->data.end(), 0.0f);
  }
}

// ---------------------------------------------------------------------------
// Stage forward/backward drivers

namespace {

/// Single-frame pipeline (stage 1, n = 0).
double stage1_item(DetectorModel& model, const Tensor& pixels, const GroundTruthTargets& targets,
                   float size_weight, bool backward) {
  const AttentionKind att = model.cfg.attention;
  if (!backward) {
    const Tensor feat = model.frame_features(pixels);
    return detection_loss(model.heads.infer(feat, feat), targets, size_weight).total;
  }

  BackboneTape btape;
  const Tensor raw = model.backbone.forward(pixels, btape);
  ThreeConvTape a3tape;
  UNetTape autape;
  Tensor sal;
  Tensor feat = raw;
  if (att == AttentionKind::three_conv) {
    sal = model.attention3.forward(raw, a3tape);
    feat = apply_attention(raw, sal);
  } else if (att == AttentionKind::unet) {
    sal = model.attention_unet.forward(raw, autape);
    feat = apply_attention(raw, sal);
  }

  HeadsTape htape;
  HeadOutputs out = model.heads.forward(feat, feat, htape);
  LossResult loss = detection_loss(out, targets, size_weight);
  auto [gfused, gtarget] =
      model.heads.backward(htape, loss.grad_heatmap, loss.grad_size, loss.grad_offset);
  Tensor gfeat = add(gfused, gtarget);
  if (att != AttentionKind::none) {
    auto [gdirect, gsal] = apply_attention_backward(raw, sal, gfeat);
    const Tensor gthrough = att == AttentionKind::three_conv
                                ? model.attention3.backward(a3tape, gsal)
                                : model.attention_unet.backward(autape, gsal);
    gfeat = add(gdirect, gthrough);
  }
  model.backbone.backward(btape, gfeat);
  return loss.total;
}

/// Per-unique-frame state of one stage-2 window pass.
struct FrameState {
  Tensor raw;       // backbone output
  Tensor saliency;  // attention map, when attention is on
  FeatureMapPtr weighted;
  BackboneTape btape;  // only filled when the backbone trains
  ThreeConvTape a3tape;
  UNetTape autape;
};

/// Windowed pipeline (stage 2). `raw_feats` holds precomputed backbone
/// outputs when the backbone is frozen; otherwise the backbone runs (and
/// trains) here.
double stage2_item(DetectorModel& model, const std::vector<Tensor>& frames,
                   const std::vector<Tensor>* raw_feats, int t,
                   const GroundTruthTargets& targets, float size_weight, bool backward) {
  const AttentionKind att = model.cfg.attention;
  const WindowIndex win = model.window_for(t, static_cast<int>(frames.size()));

  if (!backward) {
    std::map<int, FeatureMapPtr> unique;
    for (int idx : win.indices) {
      if (unique.count(idx)) continue;
      Tensor raw = raw_feats ? (*raw_feats)[static_cast<std::size_t>(idx)]
                             : model.backbone.infer(frames[static_cast<std::size_t>(idx)]);
      Tensor feat = std::move(raw);
      if (att == AttentionKind::three_conv) {
        feat = apply_attention(feat, model.attention3.infer(feat));
      } else if (att == AttentionKind::unet) {
        feat = apply_attention(feat, model.attention_unet.infer(feat));
      }
      unique.emplace(idx, std::make_shared<const Tensor>(std::move(feat)));
    }
    std::vector<FeatureMapPtr> maps;
    maps.reserve(win.indices.size());
    for (int idx : win.indices) maps.push_back(unique.at(idx));
    const Tensor fused = model.fusion.strategy.fuse(maps);
    HeadOutputs out = model.heads.infer(fused, *maps[static_cast<std::size_t>(win.target_pos)]);
    return detection_loss(out, targets, size_weight).total;
  }

  // Forward with tapes, one state per unique frame index.
  std::map<int, FrameState> states;
  for (int idx : win.indices) {
    if (states.count(idx)) continue;
    FrameState st;
    if (raw_feats) {
      st.raw = (*raw_feats)[static_cast<std::size_t>(idx)];
    } else {
      st.raw = model.backbone.forward(frames[static_cast<std::size_t>(idx)], st.btape);
    }
    Tensor feat = st.raw;
    if (att == AttentionKind::three_conv) {
      st.saliency = model.attention3.forward(st.raw, st.a3tape);
      feat = apply_attention(st.raw, st.saliency);
    } else if (att == AttentionKind::unet) {
      st.saliency = model.attention_unet.forward(st.raw, st.autape);
      feat = apply_attention(st.raw, st.saliency);
    }
    st.weighted = std::make_shared<const Tensor>(std::move(feat));
    states.emplace(idx, std::move(st));
  }
  std::vector<FeatureMapPtr> maps;
  maps.reserve(win.indices.size());
  for (int idx : win.indices) maps.push_back(states.at(idx).weighted);

  const FusionTag tag = model.fusion.strategy.tag;
  FusionContext fctx;
  Tensor fused = tag == FusionTag::learned
                     ? fuse_learned(maps, model.fusion.strategy.params, fctx)
                     : fuse_baseline(maps, model.fusion.strategy);

  HeadsTape htape;
  HeadOutputs out =
      model.heads.forward(fused, *maps[static_cast<std::size_t>(win.target_pos)], htape);
  LossResult loss = detection_loss(out, targets, size_weight);

  auto [gfused, gtarget] =
      model.heads.backward(htape, loss.grad_heatmap, loss.grad_size, loss.grad_offset);

  // Through the fusion to per-window-position gradients.
  std::vector<Tensor> pos_grads;
  if (tag == FusionTag::learned) {
    FusionGrads fg = fuse_learned_backward(fctx, gfused);
    if (!model.fusion.frozen) {
      for (std::size_t i = 0; i < fg.weights.data.size(); ++i) {
        model.fusion.weight_grad.data[i] += fg.weights.data[i];
      }
      if (!fg.bias.empty()) {
        for (std::size_t i = 0; i < fg.bias.data.size(); ++i) {
          model.fusion.bias_grad.data[i] += fg.bias.data[i];
        }
      }
    }
    pos_grads = std::move(fg.maps);
  } else if (tag == FusionTag::concat_conv) {
    Conv2dGrads cg;
    pos_grads = fuse_baseline_backward(maps, model.fusion.strategy, gfused, &cg);
    if (!model.fusion.frozen) {
      for (std::size_t i = 0; i < cg.weight.data.size(); ++i) {
        model.fusion.weight_grad.data[i] += cg.weight.data[i];
      }
      if (!cg.bias.empty()) {
        for (std::size_t i = 0; i < cg.bias.data.size(); ++i) {
          model.fusion.bias_grad.data[i] += cg.bias.data[i];
        }
      }
    }
  } else {
    pos_grads = fuse_baseline_backward(maps, model.fusion.strategy, gfused, nullptr);
  }

  // Fold per-position gradients onto unique frames (duplicated boundary
  // entries alias one map, so their gradients accumulate).
  std::map<int, Tensor> map_grads;
  for (std::size_t k = 0; k < win.indices.size(); ++k) {
    const int idx = win.indices[k];
    auto it = map_grads.find(idx);
    if (it == map_grads.end()) {
      map_grads.emplace(idx, std::move(pos_grads[k]));
    } else {
      it->second = add(it->second, pos_grads[k]);
    }
  }
  {
    auto it = map_grads.find(win.indices[static_cast<std::size_t>(win.target_pos)]);
    it->second = add(it->second, gtarget);
  }

  for (auto& [idx, gmap] : map_grads) {
    FrameState& st = states.at(idx);
    Tensor graw = std::move(gmap);
    if (att != AttentionKind::none) {
      auto [gdirect, gsal] = apply_attention_backward(st.raw, st.saliency, graw);
      const Tensor gthrough = att == AttentionKind::three_conv
                                  ? model.attention3.backward(st.a3tape, gsal)
                                  : model.attention_unet.backward(st.autape, gsal);
      graw = add(gdirect, gthrough);
    }
    if (!raw_feats) model.backbone.backward(st.btape, graw);
  }
  return loss.total;
}

struct Item {
  int seq = 0;
  int frame = 0;
};

struct Snapshot {
  std::vector<Tensor> values;

  static Snapshot take(const std::vector<ParamRef>& params) {
    Snapshot s;
    s.values.reserve(params.size());
    for (const ParamRef& p : params) s.values.push_back(*p.value);
    return s;
  }
  void restore(const std::vector<ParamRef>& params) const {
    for (std::size_t i = 0; i < params.size(); ++i) *params[i].value = values[i];
  }
};

std::vector<std::vector<GroundTruthTargets>> precompute_targets(const std::vector<Sequence>& seqs,
                                                                const DetectorConfig& cfg) {
  std::vector<std::vector<GroundTruthTargets>> out;
  out.reserve(seqs.size());
  for (const Sequence& s : seqs) {
    std::vector<GroundTruthTargets> per_frame;
    per_frame.reserve(s.ground_truth.size());
    for (const auto& boxes : s.ground_truth) per_frame.push_back(build_targets(boxes, cfg));
    out.push_back(std::move(per_frame));
  }
  return out;
}

void check_split_disjoint(const Dataset& data) {
  std::set<std::string> train_ids;
  for (const Sequence& s : data.train) train_ids.insert(s.id);
  for (const Sequence& s : data.val) {
    if (train_ids.count(s.id)) {
      throw TensorError("validation sequence also present in training: " + s.id);
    }
  }
}

/// Epoch loop shared by both stages. `run_item(seq, frame, backward)`
/// returns the loss and, when backward, accumulates gradients.
TrainReport run_training(DetectorModel& model, const Dataset& data, const TrainConfig& cfg,
                         const std::function<double(int, int, bool)>& run_item) {
  check_split_disjoint(data);
  if (data.train.empty() || data.val.empty()) {
    throw TensorError("training requires non-empty train and val splits");
  }

  std::vector<Item> items;
  for (int s = 0; s < static_cast<int>(data.train.size()); ++s) {
    for (int f = 0; f < static_cast<int>(data.train[static_cast<std::size_t>(s)].frames.size());
         ++f) {
      items.push_back({s, f});
    }
  }

  std::vector<ParamRef> params = model.parameters();
  Optimizer opt(params, cfg.optimizer, cfg.lr);
  Rng order_rng(cfg.seed);

  const auto eval_split = [&](bool train_split) {
    double total = 0.0;
    std::int64_t count = 0;
    const auto& seqs = train_split ? data.train : data.val;
    for (int s = 0; s < static_cast<int>(seqs.size()); ++s) {
      for (int f = 0; f < static_cast<int>(seqs[static_cast<std::size_t>(s)].frames.size()); ++f) {
        total += run_item(train_split ? s : ~s, f, false);
        ++count;
      }
    }
    return total / static_cast<double>(count);
  };

  TrainReport report;
  const double val0 = eval_split(false);
  report.curve.push_back({0, eval_split(true), val0});
  report.best_epoch = 0;
  report.best_val_loss = val0;
  Snapshot best = Snapshot::take(params);
  int epochs_since_best = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Fisher-Yates with the run rng; every target frame appears once.
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j =
          static_cast<std::size_t>(order_rng.uniform_int(0, static_cast<int>(i) - 1));
      std::swap(items[i - 1], items[j]);
    }
    opt.zero_grads();
    model.zero_grads();
    int in_batch = 0;
    double epoch_loss = 0.0;
    for (const Item& it : items) {
      const double loss = run_item(it.seq, it.frame, true);
      if (!std::isfinite(loss) || loss > cfg.divergence_threshold) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                           " (loss=" + std::to_string(loss) + ")");
      }
      epoch_loss += loss;
      if (++in_batch == cfg.batch_size) {
        opt.step(1.0f / static_cast<float>(in_batch));
        opt.zero_grads();
        model.zero_grads();
        in_batch = 0;
      }
    }
    if (in_batch > 0) {
      opt.step(1.0f / static_cast<float>(in_batch));
      opt.zero_grads();
      model.zero_grads();
    }
    const double val = eval_split(false);
    report.curve.push_back({epoch, epoch_loss / static_cast<double>(items.size()), val});
    if (val < report.best_val_loss) {
      report.best_val_loss = val;
      report.best_epoch = epoch;
      best = Snapshot::take(params);
      epochs_since_best = 0;
    } else if (cfg.plateau_patience > 0 && ++epochs_since_best >= cfg.plateau_patience) {
      opt.set_lr(opt.lr() * 0.5f);
      epochs_since_best = 0;
    }
  }
  best.restore(params);
  for (const Sequence& s : data.train) report.update_sequence_ids.push_back(s.id);
  return report;
}

}  // namespace

// ---------------------------------------------------------------------------
// Stage entry points

TrainReport train_stage1(DetectorModel& model, const Dataset& data, const TrainConfig& cfg) {
  if (cfg.stage != Stage::single_frame) throw TensorError("train_stage1: config stage mismatch");
  if (model.n != 0 || model.fusion.strategy.tag != FusionTag::none) {
    throw TensorError("train_stage1 expects n=0 and fusion disabled");
  }
  auto targets_train = precompute_targets(data.train, model.cfg);
  auto targets_val = precompute_targets(data.val, model.cfg);

  return run_training(model, data, cfg, [&](int seq, int frame, bool backward) {
    const bool is_val = seq < 0;
    const int s = is_val ? ~seq : seq;
    const Sequence& sequence = (is_val ? data.val : data.train)[static_cast<std::size_t>(s)];
    const GroundTruthTargets& tgt =
        (is_val ? targets_val : targets_train)[static_cast<std::size_t>(s)]
                                              [static_cast<std::size_t>(frame)];
    return stage1_item(model, sequence.frames[static_cast<std::size_t>(frame)], tgt,
                       cfg.size_loss_weight, backward);
  });
}

TrainReport train_stage2(DetectorModel& model, const Dataset& data, const TrainConfig& cfg) {
  if (cfg.stage != Stage::fusion) throw TensorError("train_stage2: config stage mismatch");
  if (model.n < 1) throw TensorError("train_stage2 expects n >= 1");
  if (cfg.freeze.empty()) throw TensorError("train_stage2 requires a non-empty freeze set");
  model.set_frozen(cfg.freeze, true);

  const bool backbone_frozen =
      std::any_of(cfg.freeze.begin(), cfg.freeze.end(),
                  [](const std::string& p) { return std::string("backbone").rfind(p, 0) == 0; });

  auto targets_train = precompute_targets(data.train, model.cfg);
  auto targets_val = precompute_targets(data.val, model.cfg);

  // Frozen backbone: its per-frame outputs never change, so compute them
  // once for the whole run.
  std::vector<std::vector<Tensor>> feats_train, feats_val;
  if (backbone_frozen) {
    const auto compute_split = [&](const std::vector<Sequence>& seqs) {
      std::vector<std::vector<Tensor>> out;
      out.reserve(seqs.size());
      for (const Sequence& s : seqs) {
        std::vector<Tensor> feats;
        feats.reserve(s.frames.size());
        for (const Tensor& frame : s.frames) feats.push_back(model.backbone.infer(frame));
        out.push_back(std::move(feats));
      }
      return out;
    };
    feats_train = compute_split(data.train);
    feats_val = compute_split(data.val);
  }

  return run_training(model, data, cfg, [&](int seq, int frame, bool backward) {
    const bool is_val = seq < 0;
    const int s = is_val ? ~seq : seq;
    const Sequence& sequence = (is_val ? data.val : data.train)[static_cast<std::size_t>(s)];
    const GroundTruthTargets& tgt =
        (is_val ? targets_val : targets_train)[static_cast<std::size_t>(s)]
                                              [static_cast<std::size_t>(frame)];
    const std::vector<Tensor>* raw =
        backbone_frozen ? &(is_val ? feats_val : feats_train)[static_cast<std::size_t>(s)]
                        : nullptr;
    return stage2_item(model, sequence.frames, raw, frame, tgt, cfg.size_loss_weight, backward);
  });
}

std::string TrainReport::curve_csv() const {
  std::ostringstream os;
  os.precision(9);
  os << "epoch,train_loss,val_loss\n";
  for (const EpochRow& r : curve) {
    os << r.epoch << "," << r.train_loss << "," << r.val_loss << "\n";
  }
  return os.str();
}

}  // namespace fusedet

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <set>

#include "fusedet/trainer.hpp"
#include "oracles.hpp"

using namespace fusedet;

namespace {

DetectorConfig micro_cfg() {
  DetectorConfig cfg;
  cfg.input_h = 8;
  cfg.input_w = 8;
  cfg.stride = 4;
  cfg.channels = 4;
  cfg.num_classes = 1;
  return cfg;
}

DetectorConfig toy_cfg() {
  DetectorConfig cfg;
  cfg.channels = 8;
  cfg.num_classes = 2;
  return cfg;
}

Dataset subset(const Dataset& full, std::size_t train_count, std::size_t val_count) {
  Dataset out;
  out.train.assign(full.train.begin(), full.train.begin() + static_cast<long>(train_count));
  out.val.assign(full.val.begin(), full.val.begin() + static_cast<long>(val_count));
  out.test = full.test;
  return out;
}

std::vector<float> flatten_params(DetectorModel& m) {
  std::vector<float> all;
  for (const ParamRef& p : m.parameters()) {
    all.insert(all.end(), p.value->data.begin(), p.value->data.end());
  }
  return all;
}

}  // namespace

TEST_CASE("build_targets: centred box gives zero offset and a unit peak") {
  DetectorConfig cfg = toy_cfg();
  // Centre at pixel (10, 18) = cell (2.5, 4.5)*... choose centre on a cell centre:
  // cell (x=2, y=4) spans pixels [8,12) x [16,20); centre pixel 10, 18 -> cell coords 2.5, 4.5.
  // For an exact-zero offset the centre must land on integer cell coords: pixels 8, 16.
  GtBox b;
  b.class_id = 0;
  b.x_min = 8 - 6;
  b.x_max = 8 + 6;
  b.y_min = 16 - 5;
  b.y_max = 16 + 5;
  GroundTruthTargets t = build_targets({b}, cfg);
  CHECK(t.num_objects == 1);
  CHECK(t.heatmap.at(0, 4, 2) == 1.0f);
  CHECK(t.offset.at(0, 4, 2) == 0.0f);
  CHECK(t.offset.at(1, 4, 2) == 0.0f);
  CHECK(t.size.at(0, 4, 2) == 12.0f);
  CHECK(t.size.at(1, 4, 2) == 10.0f);
  CHECK(t.mask.at(0, 4, 2) == 1.0f);
  for (float v : t.heatmap.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("build_targets: two distant boxes give two unit peaks") {
  DetectorConfig cfg = toy_cfg();
  GtBox a;
  a.class_id = 0;
  a.x_min = 4;
  a.y_min = 4;
  a.x_max = 16;
  a.y_max = 16;
  GtBox b;
  b.class_id = 1;
  b.x_min = 44;
  b.y_min = 44;
  b.x_max = 58;
  b.y_max = 58;
  GroundTruthTargets t = build_targets({a, b}, cfg);
  CHECK(t.num_objects == 2);
  int unit_peaks = 0;
  for (float v : t.heatmap.data) {
    if (v == 1.0f) ++unit_peaks;
  }
  CHECK(unit_peaks == 2);
}

TEST_CASE("build_targets: overlapping splats combine by per-cell max") {
  DetectorConfig cfg = toy_cfg();
  std::vector<GtBox> boxes;
  GtBox a;
  a.class_id = 0;
  a.x_min = 12;
  a.y_min = 12;
  a.x_max = 28;
  a.y_max = 28;
  GtBox b = a;
  b.x_min = 18;
  b.x_max = 34;
  boxes = {a, b};
  GroundTruthTargets t = build_targets(boxes, cfg);

  // Direct recompute: per-cell max over both splats.
  const auto splat = [&](const GtBox& box, int y, int x) {
    const double cx = (box.x_min + box.x_max) / 2.0 / 4.0;
    const double cy = (box.y_min + box.y_max) / 2.0 / 4.0;
    const int cell_x = static_cast<int>(cx), cell_y = static_cast<int>(cy);
    const double radius =
        std::max(1.0, static_cast<double>(std::min(box.x_max - box.x_min,
                                                   box.y_max - box.y_min)) / 8.0);
    const double sigma = (2.0 * radius + 1.0) / 6.0;
    const int dx = x - cell_x, dy = y - cell_y;
    const double reach = std::ceil(3.0 * sigma);
    if (std::abs(dx) > reach || std::abs(dy) > reach) return 0.0;
    return std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
  };
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      double want = std::max(splat(a, y, x), splat(b, y, x));
      if (want > 1.0 - 1e-12) want = 1.0;
      CHECK(std::abs(static_cast<double>(t.heatmap.at(0, y, x)) - want) < 1e-5);
    }
  }
}

TEST_CASE("build_targets rejects degenerate boxes") {
  GtBox z;
  z.x_min = 5;
  z.x_max = 5;
  z.y_min = 1;
  z.y_max = 4;
  CHECK_THROWS_AS(build_targets({z}, toy_cfg()), TensorError);
}

TEST_CASE("detection_loss: perfect size/offset predictions cost nothing") {
  DetectorConfig cfg = micro_cfg();
  GtBox b;
  b.class_id = 0;
  b.x_min = 0;
  b.y_min = 0;
  b.x_max = 8;
  b.y_max = 8;
  GroundTruthTargets t = build_targets({b}, cfg);

  HeadOutputs out;
  out.heatmap = t.heatmap;  // one-hot limit (clamped internally)
  out.size = t.size;
  out.offset = t.offset;
  LossResult r = detection_loss(out, t);
  CHECK(r.size == 0.0);
  CHECK(r.offset == 0.0);
  for (float v : r.grad_size.data) CHECK(v == 0.0f);
  for (float v : r.grad_offset.data) CHECK(v == 0.0f);
}

TEST_CASE("detection_loss: empty ground truth is pure background penalty") {
  DetectorConfig cfg = micro_cfg();
  GroundTruthTargets t = build_targets({}, cfg);
  CHECK(t.num_objects == 0);

  Rng rng(3);
  HeadOutputs out;
  out.heatmap = Tensor::random_uniform({1, 2, 2}, 0.1f, 0.9f, rng);
  out.size = Tensor::random_uniform({2, 2, 2}, -1.0f, 1.0f, rng);
  out.offset = Tensor::random_uniform({2, 2, 2}, -1.0f, 1.0f, rng);
  LossResult r = detection_loss(out, t);
  CHECK(r.size == 0.0);
  CHECK(r.offset == 0.0);
  CHECK(r.heat > 0.0);
  CHECK(r.total == r.heat);
}

TEST_CASE("detection_loss gradients match finite differences (double mirror)") {
  DetectorConfig cfg = micro_cfg();
  GtBox b;
  b.class_id = 0;
  b.x_min = 1;
  b.y_min = 2;
  b.x_max = 7;
  b.y_max = 8;
  GroundTruthTargets t = build_targets({b}, cfg);

  // A double mirror of the loss formula, for FD probing.
  const auto loss_ref = [&](const std::vector<double>& heat, const std::vector<double>& size,
                            const std::vector<double>& off) {
    const double inv_n = 1.0 / std::max(1, t.num_objects);
    double acc = 0.0;
    for (std::size_t i = 0; i < heat.size(); ++i) {
      const double p = std::clamp(heat[i], 1e-5, 1.0 - 1e-5);
      const double y = static_cast<double>(t.heatmap.data[i]);
      if (y == 1.0) {
        acc -= (1 - p) * (1 - p) * std::log(p) * inv_n;
      } else {
        const double w4 = std::pow(1.0 - y, 4.0);
        acc -= w4 * p * p * std::log(1.0 - p) * inv_n;
      }
    }
    for (int y = 0; y < 2; ++y) {
      for (int x = 0; x < 2; ++x) {
        if (t.mask.at(0, y, x) != 1.0f) continue;
        for (int ch = 0; ch < 2; ++ch) {
          const std::size_t i = static_cast<std::size_t>((ch * 2 + y) * 2 + x);
          acc += 0.1 * std::abs(size[i] - static_cast<double>(t.size.data[i])) * inv_n;
          acc += std::abs(off[i] - static_cast<double>(t.offset.data[i])) * inv_n;
        }
      }
    }
    return acc;
  };

  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed * 11);
    HeadOutputs out;
    out.heatmap = Tensor::random_uniform({1, 2, 2}, 0.1f, 0.9f, rng);
    out.size = Tensor::random_uniform({2, 2, 2}, -2.0f, 2.0f, rng);
    out.offset = Tensor::random_uniform({2, 2, 2}, -1.0f, 1.0f, rng);
    LossResult r = detection_loss(out, t);

    std::vector<double> heat(out.heatmap.data.begin(), out.heatmap.data.end());
    std::vector<double> size(out.size.data.begin(), out.size.data.end());
    std::vector<double> off(out.offset.data.begin(), out.offset.data.end());

    for (std::size_t j = 0; j < heat.size(); ++j) {
      const double fd = oracle::central_diff(
          [&](double v) {
            auto h = heat;
            h[j] = v;
            return loss_ref(h, size, off);
          },
          heat[j]);
      CHECK(oracle::rel_err(static_cast<double>(r.grad_heatmap.data[j]), fd) < 1e-3);
    }
    for (std::size_t j = 0; j < size.size(); ++j) {
      const double fd = oracle::central_diff(
          [&](double v) {
            auto s = size;
            s[j] = v;
            return loss_ref(heat, s, off);
          },
          size[j]);
      CHECK(oracle::rel_err(static_cast<double>(r.grad_size.data[j]), fd) < 1e-3);
    }
  }
}

TEST_CASE("fusion-weight gradients through the full loss match finite differences") {
  DetectorConfig cfg = micro_cfg();
  GtBox b;
  b.class_id = 0;
  b.x_min = 1;
  b.y_min = 1;
  b.x_max = 7;
  b.y_max = 7;
  GroundTruthTargets targets = build_targets({b}, cfg);

  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    DetectorModel m = DetectorModel::create(cfg, 1, WindowMode::symmetric, FusionTag::learned,
                                            FusionInit::seeded_random, FusionMode::shared, seed);
    Rng rng(seed * 5 + 1);
    std::vector<Tensor> frames;
    for (int i = 0; i < 3; ++i) {
      frames.push_back(Tensor::random_uniform({3, 8, 8}, 0.0f, 1.0f, rng));
    }

    // Analytic: public training pieces chained by hand.
    std::vector<FeatureMapPtr> maps;
    for (const Tensor& f : frames) {
      maps.push_back(std::make_shared<const Tensor>(m.backbone.infer(f)));
    }
    FusionContext fctx;
    Tensor fused = fuse_learned(maps, m.fusion.strategy.params, fctx);
    HeadsTape htape;
    HeadOutputs out = m.heads.forward(fused, *maps[1], htape);
    LossResult loss = detection_loss(out, targets);
    auto [gfused, gtarget] =
        m.heads.backward(htape, loss.grad_heatmap, loss.grad_size, loss.grad_offset);
    (void)gtarget;
    FusionGrads fg = fuse_learned_backward(fctx, gfused);

    // FD on the double mirror of the whole pipeline.
    oracle::PipelineMirror mirror = oracle::PipelineMirror::of(m);
    std::vector<oracle::DTensor> dmaps;
    for (const Tensor& f : frames) dmaps.push_back(mirror.backbone(oracle::from_float(f)));

    for (int k = 0; k < 3; ++k) {
      const double fd = oracle::central_diff(
          [&](double v) {
            oracle::PipelineMirror probe = mirror;
            probe.fusion_weights[static_cast<std::size_t>(k)] = v;
            return probe.loss(dmaps, 1, targets, 0.1);
          },
          mirror.fusion_weights[static_cast<std::size_t>(k)]);
      CHECK(oracle::rel_err(static_cast<double>(fg.weights.at(k)), fd) < 1e-3);
    }
  }
}

TEST_CASE("stage-1 training halves the loss on the toy benchmark") {
  Dataset data = subset(benchmark_suite(Profile::easy, 42), 6, 2);
  DetectorModel m = DetectorModel::create(toy_cfg(), 0, WindowMode::symmetric, FusionTag::none,
                                          FusionInit::identity, FusionMode::shared, 7);
  TrainConfig cfg;
  cfg.stage = Stage::single_frame;
  cfg.epochs = 20;
  cfg.batch_size = 8;
  cfg.seed = 7;
  TrainReport report = train_stage1(m, data, cfg);
  REQUIRE(report.curve.size() == 21);
  const double first = report.curve[0].train_loss;
  const double last = report.curve.back().train_loss;
  CHECK(last < 0.5 * first);
  CHECK(report.best_val_loss <= report.curve[0].val_loss);
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
  Dataset data = subset(benchmark_suite(Profile::easy, 1), 2, 1);
  const auto run = [&] {
    DetectorModel m = DetectorModel::create(toy_cfg(), 0, WindowMode::symmetric, FusionTag::none,
                                            FusionInit::identity, FusionMode::shared, 3);
    TrainConfig cfg;
    cfg.stage = Stage::single_frame;
    cfg.epochs = 2;
    cfg.seed = 11;
    train_stage1(m, data, cfg);
    return flatten_params(m);
  };
  CHECK(run() == run());
}

TEST_CASE("validation sequences never enter gradient updates") {
  Dataset data = subset(benchmark_suite(Profile::easy, 2), 3, 2);
  DetectorModel m = DetectorModel::create(toy_cfg(), 0, WindowMode::symmetric, FusionTag::none,
                                          FusionInit::identity, FusionMode::shared, 5);
  TrainConfig cfg;
  cfg.stage = Stage::single_frame;
  cfg.epochs = 1;
  TrainReport report = train_stage1(m, data, cfg);
  std::set<std::string> updated(report.update_sequence_ids.begin(),
                                report.update_sequence_ids.end());
  CHECK(updated.size() == 3);
  for (const Sequence& s : data.val) CHECK(updated.count(s.id) == 0);
}

TEST_CASE("stage 2: identity init starts at the stage-1 validation loss") {
  Dataset data = subset(benchmark_suite(Profile::occlusion_heavy, 3), 3, 1);
  DetectorModel stage1 = DetectorModel::create(toy_cfg(), 0, WindowMode::symmetric,
                                               FusionTag::none, FusionInit::identity,
                                               FusionMode::shared, 9);
  TrainConfig c1;
  c1.stage = Stage::single_frame;
  c1.epochs = 3;
  c1.seed = 9;
  TrainReport r1 = train_stage1(stage1, data, c1);

  DetectorModel stage2 = DetectorModel::create(toy_cfg(), 2, WindowMode::symmetric,
                                               FusionTag::learned, FusionInit::identity,
                                               FusionMode::shared, 9);
  stage2.backbone = stage1.backbone;
  stage2.heads = stage1.heads;

  TrainConfig c2;
  c2.stage = Stage::fusion;
  c2.epochs = 2;
  c2.freeze = {"backbone"};
  c2.seed = 10;
  const std::vector<float> backbone_before = stage1.backbone.conv2.params.weight.data;
  TrainReport r2 = train_stage2(stage2, data, c2);

  CHECK(std::abs(r2.curve[0].val_loss - r1.best_val_loss) < 1e-5);
  // Best-by-validation can only improve on (or match) the identity start.
  CHECK(r2.best_val_loss <= r2.curve[0].val_loss);
  // Frozen backbone unchanged to the bit.
  CHECK(stage2.backbone.conv2.params.weight.data == backbone_before);
  CHECK(std::memcmp(stage2.backbone.res1.params.weight.data.data(),
                    stage1.backbone.res1.params.weight.data.data(),
                    stage1.backbone.res1.params.weight.data.size() * sizeof(float)) == 0);
}

TEST_CASE("stage 2 trains baseline strategies and touches fusion weights") {
  Dataset data = subset(benchmark_suite(Profile::easy, 4), 2, 1);
  DetectorModel m = DetectorModel::create(toy_cfg(), 1, WindowMode::symmetric, FusionTag::learned,
                                          FusionInit::identity, FusionMode::shared, 13);
  TrainConfig cfg;
  cfg.stage = Stage::fusion;
  cfg.epochs = 1;
  cfg.freeze = {"backbone"};
  const std::vector<float> w0 = m.fusion.strategy.params.weights.data;
  train_stage2(m, data, cfg);
  CHECK(m.fusion.strategy.params.weights.data != w0);  // fusion weights updated

  DetectorModel mm = DetectorModel::create(toy_cfg(), 1, WindowMode::symmetric, FusionTag::mean,
                                           FusionInit::identity, FusionMode::shared, 13);
  TrainReport rep = train_stage2(mm, data, cfg);  // parameterless fusion still trains heads
  CHECK(rep.curve.size() == 2);
}

TEST_CASE("stage guards reject mismatched setups") {
  Dataset data = subset(benchmark_suite(Profile::easy, 5), 1, 1);
  DetectorModel m = DetectorModel::create(toy_cfg(), 0, WindowMode::symmetric, FusionTag::none,
                                          FusionInit::identity, FusionMode::shared, 1);
  TrainConfig cfg;
  cfg.stage = Stage::fusion;
  CHECK_THROWS_AS(train_stage2(m, data, cfg), TensorError);  // n = 0
  cfg.stage = Stage::single_frame;
  DetectorModel m2 = DetectorModel::create(toy_cfg(), 2, WindowMode::symmetric, FusionTag::learned,
                                           FusionInit::identity, FusionMode::shared, 1);
  CHECK_THROWS_AS(train_stage1(m2, data, cfg), TensorError);  // fusion enabled
}

TEST_CASE("optimizer leaves frozen parameters untouched to the ULP") {
  Rng rng(17);
  Tensor value = Tensor::random_uniform({8}, -1, 1, rng);
  Tensor grad({8}, 1.0f);
  bool frozen = true;
  const std::vector<float> before = value.data;
  Optimizer opt({{"p", &value, &grad, &frozen}}, OptimKind::adam, 0.1f);
  opt.step(1.0f);
  CHECK(std::memcmp(value.data.data(), before.data(), before.size() * sizeof(float)) == 0);

  frozen = false;
  opt.step(1.0f);
  CHECK(value.data != before);
}

TEST_CASE("sgd-momentum optimizer also steps") {
  Rng rng(19);
  Tensor value = Tensor::random_uniform({4}, -1, 1, rng);
  Tensor grad({4}, 0.5f);
  bool frozen = false;
  Optimizer opt({{"p", &value, &grad, &frozen}}, OptimKind::sgd_momentum, 0.01f);
  const std::vector<float> before = value.data;
  opt.step(1.0f);
  for (std::size_t i = 0; i < value.data.size(); ++i) {
    CHECK(value.data[i] == doctest::Approx(before[i] - 0.01f * 0.5f));
  }
}

TEST_CASE("training curve CSV shape") {
  TrainReport r;
  r.curve = {{0, 1.0, 2.0}, {1, 0.5, 1.5}};
  const std::string csv = r.curve_csv();
  CHECK(csv.rfind("epoch,train_loss,val_loss\n", 0) == 0);
  CHECK(csv.find("\n1,0.5,1.5\n") != std::string::npos);
}

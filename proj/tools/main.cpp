// fusedet: dataset generation, two-stage training, cached video inference,
// evaluation, fusion-strategy ablation and window-size sweeps behind one
// command-line entry point. Every artifact-producing command writes a
// manifest.json describing its inputs and outputs.

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "fusedet/checkpoint.hpp"
#include "fusedet/detector.hpp"
#include "fusedet/eval.hpp"
#include "fusedet/hash.hpp"
#include "fusedet/synth_video.hpp"
#include "fusedet/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace fusedet;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::string resolve_out(const std::string& path) {
  if (path.empty() || fs::path(path).is_absolute()) return path;
  if (const char* root = std::getenv("FUSEDET_OUT_ROOT")) {
    return (fs::path(root) / path).string();
  }
  return path;
}

void require_fresh_dir(const std::string& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) {
      throw TensorError("output directory " + dir + " is not empty (use --force to overwrite)");
    }
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

class ManifestTimer {
 public:
  ManifestTimer(std::string command, std::string out_dir)
      : command_(std::move(command)), out_dir_(std::move(out_dir)),
        start_(std::chrono::steady_clock::now()) {
    doc_["command"] = command_;
  }

  json& doc() { return doc_; }

  void write() {
    const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_);
    doc_["wall_clock_seconds"] = elapsed.count();
    std::ofstream f(fs::path(out_dir_) / "manifest.json");
    f << doc_.dump(2) << "\n";
  }

 private:
  std::string command_;
  std::string out_dir_;
  std::chrono::steady_clock::time_point start_;
  json doc_;
};

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream f(path);
  if (!f) throw TensorError("cannot write " + path.string());
  f << content;
}

// ---------------------------------------------------------------------------
// Shared model/training plumbing

struct ModelFlags {
  int channels = 32;
  int classes = 2;
  std::string attention = "none";
  int unet_levels = 2;
  int top_k = 50;
  float score_threshold = 0.05f;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--channels", channels, "Backbone feature channels");
    cmd->add_option("--classes", classes, "Number of object classes");
    cmd->add_option("--attention", attention, "Attention variant: none|three_conv|unet")
        ->check(CLI::IsMember({"none", "three_conv", "unet"}));
    cmd->add_option("--unet-levels", unet_levels, "U-Net attention depth");
    cmd->add_option("--top-k", top_k, "Maximum detections per frame");
    cmd->add_option("--score-threshold", score_threshold, "Decode score threshold");
  }

  DetectorConfig config(const Dataset& data) const {
    DetectorConfig cfg;
    if (!data.train.empty()) {
      cfg.input_h = data.train[0].frames[0].dim(1);
      cfg.input_w = data.train[0].frames[0].dim(2);
    } else if (!data.test.empty()) {
      cfg.input_h = data.test[0].frames[0].dim(1);
      cfg.input_w = data.test[0].frames[0].dim(2);
    }
    cfg.channels = channels;
    cfg.num_classes = classes;
    cfg.attention = attention_kind_from_name(attention);
    cfg.unet_levels = unet_levels;
    cfg.top_k = top_k;
    cfg.score_threshold = score_threshold;
    return cfg;
  }
};

struct TrainFlags {
  int epochs = 15;
  int batch = 8;
  float lr = 1e-3f;
  std::string optimizer = "adam";
  std::uint64_t seed = 1;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--epochs", epochs, "Training epochs");
    cmd->add_option("--batch", batch, "Frames per optimizer step");
    cmd->add_option("--lr", lr, "Learning rate");
    cmd->add_option("--optimizer", optimizer, "adam|sgd")
        ->check(CLI::IsMember({"adam", "sgd"}));
    cmd->add_option("--seed", seed, "Run seed");
  }

  TrainConfig config(Stage stage) const {
    TrainConfig cfg;
    cfg.stage = stage;
    cfg.epochs = epochs;
    cfg.batch_size = batch;
    cfg.lr = lr;
    cfg.optimizer = optimizer == "sgd" ? OptimKind::sgd_momentum : OptimKind::adam;
    cfg.seed = seed;
    if (stage == Stage::fusion) cfg.freeze = {"backbone"};
    return cfg;
  }
};

/// Strategy names accepted for ablation rows; learned_past_only combines
/// the learned tag with a past-only window.
struct StrategyChoice {
  FusionTag tag = FusionTag::none;
  WindowMode window = WindowMode::symmetric;
};

StrategyChoice parse_strategy(const std::string& name) {
  if (name == "learned_past_only") return {FusionTag::learned, WindowMode::past_only};
  return {fusion_tag_from_name(name), WindowMode::symmetric};
}

DetectorModel build_stage2_model(const DetectorModel& stage1, int n, const StrategyChoice& choice,
                                 std::uint64_t seed, FusionMode mode = FusionMode::shared) {
  DetectorModel m = DetectorModel::create(
      stage1.cfg, n, choice.window, choice.tag,
      choice.tag == FusionTag::learned ? FusionInit::identity : FusionInit::seeded_random, mode,
      seed);
  m.backbone = stage1.backbone;
  m.attention3 = stage1.attention3;
  m.attention_unet = stage1.attention_unet;
  m.heads = stage1.heads;
  return m;
}

/// One ablation/sweep cell: stage-2 training (unless the row is the n=0
/// baseline, which is scored as-is) followed by a test-set evaluation.
/// Stage 2 fine-tunes at lr2, a fraction of the stage-1 rate by default.
double run_cell(const DetectorModel& stage1, const Dataset& data, const StrategyChoice& choice,
                int n, const TrainFlags& tf, int epochs2, float lr2, float iou_thresh) {
  if (choice.tag == FusionTag::none || n == 0) {
    return test_map(stage1, data.test, iou_thresh);
  }
  DetectorModel m = build_stage2_model(stage1, n, choice, tf.seed * 1000 + 17);
  TrainFlags cell_flags = tf;
  cell_flags.epochs = epochs2;
  cell_flags.lr = lr2 > 0 ? lr2 : tf.lr * 0.25f;
  TrainConfig cfg = cell_flags.config(Stage::fusion);
  train_stage2(m, data, cfg);
  return test_map(m, data.test, iou_thresh);
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_generate(const std::string& profile, std::uint64_t seed, const std::string& out_raw,
                 const std::string& format, bool force) {
  const std::string out = resolve_out(out_raw);
  require_fresh_dir(out, force);
  ManifestTimer manifest("generate", out);

  Dataset ds = benchmark_suite(profile_from_name(profile), seed);
  save_dataset(out, ds, format == "ppm" ? FrameFormat::ppm : FrameFormat::fftn);

  manifest.doc()["flags"] = {{"profile", profile}, {"seed", seed}, {"format", format}};
  manifest.doc()["seed"] = seed;
  manifest.doc()["dataset_hash"] = hex64(ds.content_hash());
  manifest.doc()["outputs"] = {(fs::path(out) / "gt.csv").string()};
  manifest.write();
  std::cout << "dataset " << profile << " seed " << seed << " hash " << hex64(ds.content_hash())
            << " -> " << out << "\n";
  return 0;
}

int cmd_train(int stage, const std::string& data_dir, const std::string& out_raw, int n,
              const std::string& fusion, const std::string& fusion_mode,
              const std::string& init_from, bool unfreeze_backbone, const ModelFlags& mf,
              const TrainFlags& tf, bool force) {
  const std::string out = resolve_out(out_raw);
  if (stage == 2 && init_from.empty()) {
    std::cerr << "error: --stage 2 requires --init-from <stage-1 checkpoint>\n";
    return kExitUsage;
  }
  if (stage == 1 && (n != 0 || fusion != "none")) {
    std::cerr << "error: --stage 1 trains the single-frame baseline (--n 0 --fusion none)\n";
    return kExitUsage;
  }
  if (stage == 2 && n < 1) {
    std::cerr << "error: --stage 2 requires --n >= 1\n";
    return kExitUsage;
  }

  Dataset data = load_dataset(data_dir);
  require_fresh_dir(out, force);
  ManifestTimer manifest("train", out);

  DetectorModel model = [&] {
    if (stage == 1) {
      return DetectorModel::create(mf.config(data), 0, WindowMode::symmetric, FusionTag::none,
                                   FusionInit::identity, FusionMode::shared, tf.seed);
    }
    const DetectorModel stage1 = load_checkpoint(init_from);
    return build_stage2_model(stage1, n, parse_strategy(fusion), tf.seed * 1000 + 17,
                              fusion_mode == "per_channel" ? FusionMode::per_channel
                                                           : FusionMode::shared);
  }();

  TrainConfig cfg = tf.config(stage == 1 ? Stage::single_frame : Stage::fusion);
  if (stage == 2 && unfreeze_backbone) {
    cfg.freeze = {"__none__"};  // matches no layer: everything stays trainable
  }

  TrainReport report =
      stage == 1 ? train_stage1(model, data, cfg) : train_stage2(model, data, cfg);

  save_checkpoint(out, model);
  write_text(fs::path(out) / "curve.csv", report.curve_csv());

  manifest.doc()["flags"] = {{"stage", stage},
                             {"data", data_dir},
                             {"n", n},
                             {"fusion", fusion},
                             {"fusion_mode", fusion_mode},
                             {"init_from", init_from},
                             {"epochs", tf.epochs},
                             {"batch", tf.batch},
                             {"lr", tf.lr},
                             {"optimizer", tf.optimizer},
                             {"channels", mf.channels},
                             {"attention", mf.attention},
                             {"unfreeze_backbone", unfreeze_backbone}};
  manifest.doc()["seed"] = tf.seed;
  manifest.doc()["dataset_hash"] = hex64(data.content_hash());
  manifest.doc()["checkpoint"] = out;
  manifest.doc()["best_epoch"] = report.best_epoch;
  manifest.doc()["best_val_loss"] = report.best_val_loss;
  manifest.doc()["outputs"] = {(fs::path(out) / "manifest.txt").string(),
                               (fs::path(out) / "curve.csv").string()};
  manifest.write();
  std::cout << "stage " << stage << " trained; best epoch " << report.best_epoch << " val loss "
            << report.best_val_loss << " -> " << out << "\n";
  return 0;
}

int cmd_detect(const std::string& ckpt, const std::string& data_dir, const std::string& split,
               const std::string& cache_mode, const std::string& out_raw, bool force) {
  const std::string out = resolve_out(out_raw);
  DetectorModel model = load_checkpoint(ckpt);
  Dataset data = load_dataset(data_dir);
  const std::vector<Sequence>& seqs =
      split == "train" ? data.train : split == "val" ? data.val : data.test;

  for (const Sequence& s : seqs) {
    if (!s.frames.empty() && (s.frames[0].dim(1) != model.cfg.input_h ||
                              s.frames[0].dim(2) != model.cfg.input_w)) {
      throw TensorError("checkpoint expects " + std::to_string(model.cfg.input_h) + "x" +
                        std::to_string(model.cfg.input_w) + " frames, dataset has " +
                        shape_str(s.frames[0].shape));
    }
  }

  require_fresh_dir(out, force);
  ManifestTimer manifest("detect", out);

  std::ostringstream dets;
  dets << detections_csv_header() << "\n";
  std::ostringstream stats;
  stats << "sequence_id,computes,hits,evictions\n";
  std::int64_t total_computes = 0, total_hits = 0, total_evictions = 0;

  const bool use_cache = cache_mode != "off";
  for (const Sequence& seq : seqs) {
    const int frame_count = static_cast<int>(seq.frames.size());
    if (use_cache) {
      FeatureCache cache(static_cast<std::size_t>(2 * model.n + 1));
      for (int t = 0; t < frame_count; ++t) {
        for (const Detection& d : model.detect_frame(cache, seq.frames, t)) {
          dets << detection_csv_row(seq.id + "/" + std::to_string(t), d) << "\n";
        }
      }
      stats << seq.id << "," << cache.stats().csv_row() << "\n";
      total_computes += cache.stats().computes;
      total_hits += cache.stats().hits;
      total_evictions += cache.stats().evictions;
    } else {
      // No reuse at all: every window position recomputes its frame.
      std::int64_t computes = 0;
      for (int t = 0; t < frame_count; ++t) {
        const WindowIndex win = model.window_for(t, frame_count);
        std::vector<FeatureMapPtr> maps;
        maps.reserve(win.indices.size());
        for (int idx : win.indices) {
          maps.push_back(std::make_shared<const Tensor>(
              model.frame_features(seq.frames[static_cast<std::size_t>(idx)])));
          ++computes;
        }
        for (const Detection& d : decode(model.forward_window(maps, win.target_pos), model.cfg)) {
          dets << detection_csv_row(seq.id + "/" + std::to_string(t), d) << "\n";
        }
      }
      stats << seq.id << "," << computes << ",0,0\n";
      total_computes += computes;
    }
  }
  stats << "total," << total_computes << "," << total_hits << "," << total_evictions << "\n";

  write_text(fs::path(out) / "detections.csv", dets.str());
  write_text(fs::path(out) / "cache_stats.csv", stats.str());

  manifest.doc()["flags"] = {{"ckpt", ckpt}, {"data", data_dir}, {"split", split},
                             {"cache", cache_mode}};
  manifest.doc()["dataset_hash"] = hex64(data.content_hash());
  manifest.doc()["outputs"] = {(fs::path(out) / "detections.csv").string(),
                               (fs::path(out) / "cache_stats.csv").string()};
  manifest.write();
  std::cout << "detections -> " << out << " (backbone computes: " << total_computes << ")\n";
  return 0;
}

int cmd_eval(const std::string& dets_path, const std::string& gt_path, float iou_thresh,
             const std::string& out_raw, bool pr_curves, bool force) {
  const std::string out = resolve_out(out_raw);
  if (!fs::exists(gt_path)) throw TensorError("ground-truth file not found: " + gt_path);
  if (!fs::exists(dets_path)) throw TensorError("detections file not found: " + dets_path);

  const auto dets = read_detections_csv(dets_path);
  const auto gts = read_gt_csv(gt_path);
  EvalResult result = evaluate(dets, gts, iou_thresh);

  require_fresh_dir(out, force);
  ManifestTimer manifest("eval", out);

  std::ostringstream metrics;
  metrics.precision(9);
  metrics << "class,ap,gt_count\n";
  int total_gt = 0;
  for (const ClassMetrics& c : result.per_class) {
    metrics << c.class_id << "," << c.curve.ap << "," << c.gt_count << "\n";
    total_gt += c.gt_count;
  }
  metrics << "mAP," << result.map << "," << total_gt << "\n";
  write_text(fs::path(out) / "metrics.csv", metrics.str());

  if (pr_curves) {
    for (const ClassMetrics& c : result.per_class) {
      std::ostringstream pr;
      pr.precision(9);
      pr << "recall,precision\n";
      for (const auto& [r, p] : c.curve.points) pr << r << "," << p << "\n";
      write_text(fs::path(out) / ("pr_class_" + std::to_string(c.class_id) + ".csv"), pr.str());
    }
  }

  manifest.doc()["flags"] = {{"dets", dets_path}, {"gt", gt_path}, {"iou_thresh", iou_thresh}};
  manifest.doc()["interpolation"] = "all_points";
  manifest.doc()["map"] = result.map;
  manifest.doc()["outputs"] = {(fs::path(out) / "metrics.csv").string()};
  manifest.write();
  std::cout << "mAP " << result.map << " -> " << out << "\n";
  return 0;
}

int cmd_ablate(const std::string& data_dir, const std::string& out_raw, int seeds, int n,
               int epochs1, int epochs2, float lr2, float iou_thresh, int jobs,
               const ModelFlags& mf, const TrainFlags& tf, bool force) {
  const std::string out = resolve_out(out_raw);
  Dataset data = load_dataset(data_dir);
  require_fresh_dir(out, force);
  ManifestTimer manifest("ablate-fusion", out);

  // Table rows: the full strategy set plus the past-only variants.
  struct Row {
    std::string name;
    int n;
  };
  std::vector<Row> rows = {{"learned", n}, {"none", 0},   {"max", n},
                           {"mean", n},    {"median", n}, {"concat_conv", n},
                           {"learned_past_only", n}};
  if (n >= 2) rows.push_back({"learned_past_only", 1});

  // Phase 1: one stage-1 model per seed, trained in parallel.
  std::vector<DetectorModel> stage1(static_cast<std::size_t>(seeds));
  {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int w = 0; w < std::max(1, jobs); ++w) {
      pool.emplace_back([&] {
        for (int i = next.fetch_add(1); i < seeds; i = next.fetch_add(1)) {
          TrainFlags seed_flags = tf;
          seed_flags.seed = tf.seed + static_cast<std::uint64_t>(i);
          seed_flags.epochs = epochs1;
          DetectorModel m = DetectorModel::create(mf.config(data), 0, WindowMode::symmetric,
                                                  FusionTag::none, FusionInit::identity,
                                                  FusionMode::shared, seed_flags.seed);
          train_stage1(m, data, seed_flags.config(Stage::single_frame));
          stage1[static_cast<std::size_t>(i)] = std::move(m);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  // Phase 2: every (row, seed) cell independently.
  struct Cell {
    std::size_t row;
    int seed_index;
  };
  std::vector<Cell> cells;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (int s = 0; s < seeds; ++s) cells.push_back({r, s});
  }
  std::vector<std::vector<double>> maps(rows.size(),
                                        std::vector<double>(static_cast<std::size_t>(seeds)));
  {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (int w = 0; w < std::max(1, jobs); ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1)) {
          const Cell& cell = cells[i];
          const Row& row = rows[cell.row];
          TrainFlags cell_flags = tf;
          cell_flags.seed = tf.seed + static_cast<std::uint64_t>(cell.seed_index);
          maps[cell.row][static_cast<std::size_t>(cell.seed_index)] =
              run_cell(stage1[static_cast<std::size_t>(cell.seed_index)], data,
                       parse_strategy(row.name), row.n, cell_flags, epochs2, lr2, iou_thresh);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  std::ostringstream csv;
  csv.precision(9);
  csv << "strategy,n";
  for (int s = 0; s < seeds; ++s) csv << ",map_seed_" << s;
  csv << ",map_mean,map_min,map_max\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    csv << rows[r].name << "," << rows[r].n;
    double total = 0, lo = 2.0, hi = -1.0;
    for (int s = 0; s < seeds; ++s) {
      const double v = maps[r][static_cast<std::size_t>(s)];
      csv << "," << v;
      total += v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    csv << "," << total / seeds << "," << lo << "," << hi << "\n";
  }
  write_text(fs::path(out) / "ablation.csv", csv.str());

  manifest.doc()["flags"] = {{"data", data_dir},         {"seeds", seeds},
                             {"n", n},                   {"epochs1", epochs1},
                             {"epochs2", epochs2},       {"lr2", lr2},
                             {"jobs", jobs},             {"iou_thresh", iou_thresh},
                             {"channels", mf.channels}};
  manifest.doc()["seed"] = tf.seed;
  manifest.doc()["dataset_hash"] = hex64(data.content_hash());
  manifest.doc()["outputs"] = {(fs::path(out) / "ablation.csv").string()};
  manifest.write();
  std::cout << "ablation table -> " << (fs::path(out) / "ablation.csv").string() << "\n";
  return 0;
}

int cmd_sweep(const std::string& data_dir, const std::string& out_raw, int max_n, int epochs1,
              int epochs2, float lr2, float iou_thresh, int jobs, const ModelFlags& mf,
              const TrainFlags& tf, bool force) {
  const std::string out = resolve_out(out_raw);
  Dataset data = load_dataset(data_dir);
  require_fresh_dir(out, force);
  ManifestTimer manifest("sweep-n", out);

  DetectorModel stage1 =
      DetectorModel::create(mf.config(data), 0, WindowMode::symmetric, FusionTag::none,
                            FusionInit::identity, FusionMode::shared, tf.seed);
  TrainFlags s1_flags = tf;
  s1_flags.epochs = epochs1;
  train_stage1(stage1, data, s1_flags.config(Stage::single_frame));
  save_checkpoint((fs::path(out) / "stage1").string(), stage1);
  const double baseline_map = test_map(stage1, data.test, iou_thresh);

  std::vector<double> maps(static_cast<std::size_t>(max_n + 1));
  maps[0] = baseline_map;  // n = 0 is the baseline itself, no retraining
  {
    std::vector<std::thread> pool;
    std::atomic<int> next{1};
    for (int w = 0; w < std::max(1, jobs); ++w) {
      pool.emplace_back([&] {
        for (int i = next.fetch_add(1); i <= max_n; i = next.fetch_add(1)) {
          maps[static_cast<std::size_t>(i)] =
              run_cell(stage1, data, parse_strategy("learned"), i, tf, epochs2, lr2, iou_thresh);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  std::ostringstream csv;
  csv.precision(9);
  csv << "n,map\n";
  for (int i = 0; i <= max_n; ++i) csv << i << "," << maps[static_cast<std::size_t>(i)] << "\n";
  write_text(fs::path(out) / "sweep.csv", csv.str());

  manifest.doc()["flags"] = {{"data", data_dir},   {"max_n", max_n},
                             {"epochs1", epochs1}, {"epochs2", epochs2},
                             {"lr2", lr2},         {"iou_thresh", iou_thresh},
                             {"jobs", jobs}};
  manifest.doc()["seed"] = tf.seed;
  manifest.doc()["dataset_hash"] = hex64(data.content_hash());
  manifest.doc()["baseline_map"] = baseline_map;
  manifest.doc()["outputs"] = {(fs::path(out) / "sweep.csv").string(),
                               (fs::path(out) / "stage1").string()};
  manifest.write();
  std::cout << "n-sweep curve -> " << (fs::path(out) / "sweep.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fusedet: temporal feature-fusion video object detection, desk scale"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Render a synthetic video benchmark to disk");
  std::string gen_profile = "easy", gen_out, gen_format = "fftn";
  std::uint64_t gen_seed = 42;
  bool gen_force = false;
  gen->add_option("--profile", gen_profile, "easy|occlusion_heavy|small_objects")
      ->check(CLI::IsMember({"easy", "occlusion_heavy", "small_objects"}));
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--format", gen_format, "Frame format: fftn|ppm")
      ->check(CLI::IsMember({"fftn", "ppm"}));
  gen->add_flag("--force", gen_force, "Overwrite an existing non-empty output directory");

  // train
  auto* train = app.add_subcommand("train", "Train stage 1 (single frame) or stage 2 (fusion)");
  int train_stage = 1, train_n = 0;
  std::string train_data, train_out, train_fusion = "none", train_fusion_mode = "shared",
              train_init;
  bool train_force = false, train_unfreeze = false;
  ModelFlags train_mf;
  TrainFlags train_tf;
  train->add_option("--stage", train_stage, "1|2")->check(CLI::IsMember({1, 2}))->required();
  train->add_option("--data", train_data, "Dataset directory")->required();
  train->add_option("--out", train_out, "Checkpoint output directory")->required();
  train->add_option("--n", train_n, "Half-window size (stage 2)");
  train->add_option("--fusion", train_fusion,
                    "none|learned|mean|max|median|concat_conv|learned_past_only");
  train->add_option("--fusion-mode", train_fusion_mode,
                    "shared|per_channel learned-fusion kernel layout")
      ->check(CLI::IsMember({"shared", "per_channel"}));
  train->add_option("--init-from", train_init, "Stage-1 checkpoint to start from (stage 2)");
  train->add_flag("--unfreeze-backbone", train_unfreeze,
                  "Ablation: leave the backbone trainable in stage 2");
  train->add_flag("--force", train_force, "Overwrite output directory");
  train_mf.add_to(train);
  train_tf.add_to(train);

  // detect
  auto* detect = app.add_subcommand("detect", "Run cached sliding-window inference");
  std::string det_ckpt, det_data, det_split = "test", det_cache = "on", det_out;
  bool det_force = false;
  detect->add_option("--ckpt", det_ckpt, "Checkpoint directory")->required();
  detect->add_option("--data", det_data, "Dataset directory")->required();
  detect->add_option("--split", det_split, "train|val|test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  detect->add_option("--cache", det_cache, "on|off")->check(CLI::IsMember({"on", "off"}));
  detect->add_option("--out", det_out, "Output directory")->required();
  detect->add_flag("--force", det_force, "Overwrite output directory");

  // eval
  auto* ev = app.add_subcommand("eval", "Score detections against ground truth (mAP)");
  std::string ev_dets, ev_gt, ev_out;
  float ev_iou = 0.7f;
  bool ev_pr = false, ev_force = false;
  ev->add_option("--dets", ev_dets, "Detections CSV")->required();
  ev->add_option("--gt", ev_gt, "Ground-truth CSV")->required();
  ev->add_option("--iou-thresh", ev_iou, "IoU matching threshold");
  ev->add_option("--out", ev_out, "Output directory")->required();
  ev->add_flag("--pr-curves", ev_pr, "Also dump per-class PR curve points");
  ev->add_flag("--force", ev_force, "Overwrite output directory");

  // ablate-fusion
  auto* ab = app.add_subcommand("ablate-fusion",
                                "Train and score every fusion strategy over several seeds");
  std::string ab_data, ab_out;
  int ab_seeds = 5, ab_n = 2, ab_epochs1 = 12, ab_epochs2 = 8, ab_jobs = 2;
  float ab_iou = 0.7f, ab_lr2 = 0.0f;
  bool ab_force = false;
  ModelFlags ab_mf;
  TrainFlags ab_tf;
  ab->add_option("--data", ab_data, "Dataset directory")->required();
  ab->add_option("--out", ab_out, "Output directory")->required();
  ab->add_option("--seeds", ab_seeds, "Number of seeds per row");
  ab->add_option("--n", ab_n, "Half-window for fused rows");
  ab->add_option("--epochs1", ab_epochs1, "Stage-1 epochs");
  ab->add_option("--epochs2", ab_epochs2, "Stage-2 epochs per cell");
  ab->add_option("--lr2", ab_lr2, "Stage-2 learning rate (default: lr/4)");
  ab->add_option("--jobs", ab_jobs, "Parallel worker threads");
  ab->add_option("--iou-thresh", ab_iou, "IoU matching threshold");
  ab->add_flag("--force", ab_force, "Overwrite output directory");
  ab_mf.add_to(ab);
  ab_tf.add_to(ab);

  // sweep-n
  auto* sw = app.add_subcommand("sweep-n", "mAP as a function of the half-window size n");
  std::string sw_data, sw_out;
  int sw_max_n = 4, sw_epochs1 = 12, sw_epochs2 = 8, sw_jobs = 2;
  float sw_iou = 0.7f, sw_lr2 = 0.0f;
  bool sw_force = false;
  ModelFlags sw_mf;
  TrainFlags sw_tf;
  sw->add_option("--data", sw_data, "Dataset directory")->required();
  sw->add_option("--out", sw_out, "Output directory")->required();
  sw->add_option("--max-n", sw_max_n, "Largest half-window to evaluate");
  sw->add_option("--epochs1", sw_epochs1, "Stage-1 epochs");
  sw->add_option("--epochs2", sw_epochs2, "Stage-2 epochs per point");
  sw->add_option("--lr2", sw_lr2, "Stage-2 learning rate (default: lr/4)");
  sw->add_option("--jobs", sw_jobs, "Parallel worker threads");
  sw->add_option("--iou-thresh", sw_iou, "IoU matching threshold");
  sw->add_flag("--force", sw_force, "Overwrite output directory");
  sw_mf.add_to(sw);
  sw_tf.add_to(sw);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      return cmd_generate(gen_profile, gen_seed, gen_out, gen_format, gen_force);
    }
    if (train->parsed()) {
      return cmd_train(train_stage, train_data, train_out, train_n, train_fusion,
                       train_fusion_mode, train_init, train_unfreeze, train_mf, train_tf,
                       train_force);
    }
    if (detect->parsed()) {
      return cmd_detect(det_ckpt, det_data, det_split, det_cache, det_out, det_force);
    }
    if (ev->parsed()) {
      return cmd_eval(ev_dets, ev_gt, ev_iou, ev_out, ev_pr, ev_force);
    }
    if (ab->parsed()) {
      return cmd_ablate(ab_data, ab_out, ab_seeds, ab_n, ab_epochs1, ab_epochs2, ab_lr2, ab_iou,
                        ab_jobs, ab_mf, ab_tf, ab_force);
    }
    if (sw->parsed()) {
      return cmd_sweep(sw_data, sw_out, sw_max_n, sw_epochs1, sw_epochs2, sw_lr2, sw_iou,
                       sw_jobs, sw_mf, sw_tf, sw_force);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}

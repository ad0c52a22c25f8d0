#include "fusedet/synth_video.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "fusedet/hash.hpp"
#include "fusedet/rng.hpp"
#include "fusedet/tensor_io.hpp"

namespace fs = std::filesystem;

namespace fusedet {

namespace {

struct Rect {
  float x_min, y_min, x_max, y_max;

  float area() const { return std::max(0.0f, x_max - x_min) * std::max(0.0f, y_max - y_min); }
  Rect intersect(const Rect& o) const {
    return {std::max(x_min, o.x_min), std::max(y_min, o.y_min), std::min(x_max, o.x_max),
            std::min(y_max, o.y_max)};
  }
  bool valid() const { return x_min < x_max && y_min < y_max; }
};

/// area(box ∩ union(rects)) by inclusion-exclusion; rect counts are tiny.
float covered_area(const Rect& box, const std::vector<Rect>& rects) {
  std::vector<Rect> clipped;
  for (const Rect& r : rects) {
    Rect c = box.intersect(r);
    if (c.valid()) clipped.push_back(c);
  }
  const int m = static_cast<int>(clipped.size());
  float total = 0.0f;
  for (unsigned mask = 1; mask < (1u << m); ++mask) {
    Rect cur = box;
    for (int i = 0; i < m; ++i) {
      if (mask & (1u << i)) cur = cur.intersect(clipped[static_cast<std::size_t>(i)]);
    }
    if (!cur.valid()) continue;
    total += (__builtin_popcount(mask) % 2 == 1) ? cur.area() : -cur.area();
  }
  return total;
}

struct ClassPalette {
  float a[3], b[3];  // two texture colors
  int period;
};

ClassPalette class_palette(int class_id, std::uint64_t texture_seed) {
  Rng rng(texture_seed);
  ClassPalette p{};
  if (class_id == 0) {
    // Checkerboard, warm tones.
    for (int c = 0; c < 3; ++c) p.a[c] = rng.uniform(0.65f, 0.95f);
    p.a[2] *= 0.4f;  // suppress blue
    for (int c = 0; c < 3; ++c) p.b[c] = rng.uniform(0.05f, 0.3f);
    p.period = rng.uniform_int(3, 4);
  } else {
    // Horizontal stripes, cool tones.
    for (int c = 0; c < 3; ++c) p.a[c] = rng.uniform(0.6f, 0.95f);
    p.a[0] *= 0.35f;  // suppress red
    for (int c = 0; c < 3; ++c) p.b[c] = rng.uniform(0.05f, 0.3f);
    p.period = rng.uniform_int(2, 3);
  }
  return p;
}

float texel(const ClassPalette& p, int class_id, int u, int v, int channel) {
  if (class_id == 0) {
    const bool on = ((u / p.period) + (v / p.period)) % 2 == 0;
    return on ? p.a[channel] : p.b[channel];
  }
  const bool on = (v / p.period) % 2 == 0;
  return on ? p.a[channel] : p.b[channel];
}

void box_blur(Tensor& frame, int kernel) {
  const int c = frame.dim(0), h = frame.dim(1), w = frame.dim(2);
  const int r = kernel / 2;
  const float inv = 1.0f / static_cast<float>(kernel);
  std::vector<float> tmp(static_cast<std::size_t>(h) * w);
  for (int ch = 0; ch < c; ++ch) {
    float* plane = frame.data.data() + static_cast<std::size_t>(ch) * h * w;
    // Horizontal pass with edge clamping.
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (int k = -r; k <= r; ++k) {
          acc += plane[static_cast<std::size_t>(y) * w + std::clamp(x + k, 0, w - 1)];
        }
        tmp[static_cast<std::size_t>(y) * w + x] = acc * inv;
      }
    }
    // Vertical pass.
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (int k = -r; k <= r; ++k) {
          acc += tmp[static_cast<std::size_t>(std::clamp(y + k, 0, h - 1)) * w + x];
        }
        plane[static_cast<std::size_t>(y) * w + x] = acc * inv;
      }
    }
  }
}

}  // namespace

Scene generate(const SceneSpec& spec) {
  if (spec.width < 8 || spec.height < 8 || spec.frame_count < 1) {
    throw TensorError("scene spec too small");
  }
  const int W = spec.width, H = spec.height, T = spec.frame_count;
  Rng root(spec.seed);
  Rng bg_rng = root.fork(1);
  Rng obj_rng = root.fork(2);
  Rng occ_rng = root.fork(3);

  // Background: smooth bilinear field per channel, static across frames.
  const int grid = 5;
  std::vector<float> cells(3u * grid * grid);
  float base[3];
  for (int c = 0; c < 3; ++c) base[c] = bg_rng.uniform(0.25f, 0.55f);
  for (auto& v : cells) v = bg_rng.uniform(-0.12f, 0.12f);
  Tensor background({3, H, W});
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < H; ++y) {
      const float gy = static_cast<float>(y) / static_cast<float>(H - 1) * (grid - 1);
      const int y0 = std::min(static_cast<int>(gy), grid - 2);
      const float fy = gy - static_cast<float>(y0);
      for (int x = 0; x < W; ++x) {
        const float gx = static_cast<float>(x) / static_cast<float>(W - 1) * (grid - 1);
        const int x0 = std::min(static_cast<int>(gx), grid - 2);
        const float fx = gx - static_cast<float>(x0);
        const auto cell = [&](int yy, int xx) {
          return cells[static_cast<std::size_t>((c * grid + yy) * grid + xx)];
        };
        const float v = (1 - fy) * ((1 - fx) * cell(y0, x0) + fx * cell(y0, x0 + 1)) +
                        fy * ((1 - fx) * cell(y0 + 1, x0) + fx * cell(y0 + 1, x0 + 1));
        background.at(c, y, x) = std::clamp(base[c] + v, 0.0f, 1.0f);
      }
    }
  }

  // Object set: explicit or sampled.
  std::vector<ObjectSpec> objects = spec.objects;
  if (objects.empty()) {
    const int count = obj_rng.uniform_int(spec.min_objects, spec.max_objects);
    for (int i = 0; i < count; ++i) {
      ObjectSpec o;
      o.class_id = obj_rng.uniform_int(0, 1);
      o.w = obj_rng.uniform(spec.min_obj_size, spec.max_obj_size);
      o.h = obj_rng.uniform(spec.min_obj_size, spec.max_obj_size);
      const float mx = o.w / 2 + 1, my = o.h / 2 + 1;
      if (mx >= static_cast<float>(W) - mx || my >= static_cast<float>(H) - my) {
        throw TensorError("object does not fit in the image");
      }
      o.x0 = obj_rng.uniform(mx, static_cast<float>(W) - mx);
      o.y0 = obj_rng.uniform(my, static_cast<float>(H) - my);
      o.jitter = 0.3f;
      const float vcap = spec.max_speed - o.jitter;
      for (int tries = 0;; ++tries) {
        if (tries > 100) throw TensorError("could not sample a velocity");
        o.vx = obj_rng.uniform(-vcap, vcap);
        o.vy = obj_rng.uniform(-vcap, vcap);
        if (std::abs(o.vx) + std::abs(o.vy) >= 1.0f) break;
      }
      o.texture_seed = obj_rng.next_u64();
      objects.push_back(o);
    }
  }

  // Trajectories first (occluder placement targets them).
  const std::size_t num_obj = objects.size();
  std::vector<std::vector<Rect>> boxes(static_cast<std::size_t>(T),
                                       std::vector<Rect>(num_obj));
  for (std::size_t i = 0; i < num_obj; ++i) {
    ObjectSpec& o = objects[i];
    Rng jit = root.fork(1000 + static_cast<std::uint64_t>(i));
    float cx = o.x0, cy = o.y0, vx = o.vx, vy = o.vy;
    for (int t = 0; t < T; ++t) {
      boxes[static_cast<std::size_t>(t)][i] = {cx - o.w / 2, cy - o.h / 2, cx + o.w / 2,
                                               cy + o.h / 2};
      float dx = std::clamp(vx + jit.uniform(-o.jitter, o.jitter), -spec.max_speed, spec.max_speed);
      float dy = std::clamp(vy + jit.uniform(-o.jitter, o.jitter), -spec.max_speed, spec.max_speed);
      cx += dx;
      cy += dy;
      // Bounce to keep the full box inside the image.
      if (cx - o.w / 2 < 0) { cx = o.w - cx; vx = std::abs(vx); }
      if (cx + o.w / 2 > static_cast<float>(W)) { cx = 2 * static_cast<float>(W) - o.w - cx; vx = -std::abs(vx); }
      if (cy - o.h / 2 < 0) { cy = o.h - cy; vy = std::abs(vy); }
      if (cy + o.h / 2 > static_cast<float>(H)) { cy = 2 * static_cast<float>(H) - o.h - cy; vy = -std::abs(vy); }
    }
  }

  // Occluders: explicit or aimed at a sampled object position so that dwell
  // windows really do cover something.
  std::vector<OccluderSpec> occluders = spec.occluders;
  if (occluders.empty() && spec.occluder_count > 0 && num_obj > 0) {
    for (int i = 0; i < spec.occluder_count; ++i) {
      OccluderSpec oc;
      oc.dwell_len = occ_rng.uniform_int(spec.min_dwell, spec.max_dwell);
      oc.dwell_start = occ_rng.uniform_int(1, std::max(1, T - oc.dwell_len - 1));
      oc.opacity = spec.occluder_opacity;
      const std::size_t target = static_cast<std::size_t>(
          occ_rng.uniform_int(0, static_cast<int>(num_obj) - 1));
      const int mid = std::min(T - 1, oc.dwell_start + oc.dwell_len / 2);
      const Rect& tb = boxes[static_cast<std::size_t>(mid)][target];
      const float tcx = (tb.x_min + tb.x_max) / 2, tcy = (tb.y_min + tb.y_max) / 2;
      const float span = occ_rng.uniform(1.3f, 1.9f);
      if (occ_rng.bernoulli(0.5)) {
        // Vertical pole: full height.
        oc.w = (tb.x_max - tb.x_min) * span;
        oc.h = static_cast<float>(H);
        oc.cx = tcx;
        oc.cy = static_cast<float>(H) / 2;
        oc.vx = occ_rng.uniform(-1.0f, 1.0f);
      } else {
        // Horizontal bar: full width.
        oc.w = static_cast<float>(W);
        oc.h = (tb.y_max - tb.y_min) * span;
        oc.cx = static_cast<float>(W) / 2;
        oc.cy = tcy;
        oc.vy = occ_rng.uniform(-1.0f, 1.0f);
      }
      // Back out so the bar is centred on the target mid-dwell.
      oc.cx -= oc.vx * static_cast<float>(oc.dwell_len / 2);
      oc.cy -= oc.vy * static_cast<float>(oc.dwell_len / 2);
      occluders.push_back(oc);
    }
  }

  std::vector<ClassPalette> palettes;
  palettes.reserve(num_obj);
  for (const ObjectSpec& o : objects) palettes.push_back(class_palette(o.class_id, o.texture_seed));

  float occ_color[3];
  for (int c = 0; c < 3; ++c) occ_color[c] = occ_rng.uniform(0.35f, 0.65f);

  Scene scene;
  scene.objects = objects;
  scene.occluders = occluders;
  scene.frames.reserve(static_cast<std::size_t>(T));
  scene.ground_truth.resize(static_cast<std::size_t>(T));

  for (int t = 0; t < T; ++t) {
    Tensor frame = background;

    // Objects, in index order.
    for (std::size_t i = 0; i < num_obj; ++i) {
      const Rect& b = boxes[static_cast<std::size_t>(t)][i];
      const ObjectSpec& o = objects[i];
      const int px0 = std::max(0, static_cast<int>(std::floor(b.x_min)));
      const int py0 = std::max(0, static_cast<int>(std::floor(b.y_min)));
      const int px1 = std::min(W - 1, static_cast<int>(std::ceil(b.x_max)));
      const int py1 = std::min(H - 1, static_cast<int>(std::ceil(b.y_max)));
      for (int py = py0; py <= py1; ++py) {
        if (py + 0.5f < b.y_min || py + 0.5f >= b.y_max) continue;
        for (int px = px0; px <= px1; ++px) {
          if (px + 0.5f < b.x_min || px + 0.5f >= b.x_max) continue;
          const int u = px - static_cast<int>(std::floor(b.x_min));
          const int v = py - static_cast<int>(std::floor(b.y_min));
          for (int c = 0; c < 3; ++c) {
            frame.at(c, py, px) = texel(palettes[i], o.class_id, u, v, c);
          }
        }
      }
    }

    // Active occluders.
    std::vector<Rect> active;
    for (const OccluderSpec& oc : occluders) {
      if (!oc.active(t)) continue;
      const float age = static_cast<float>(t - oc.dwell_start);
      const float cx = oc.cx + oc.vx * age, cy = oc.cy + oc.vy * age;
      Rect r{cx - oc.w / 2, cy - oc.h / 2, cx + oc.w / 2, cy + oc.h / 2};
      r = r.intersect({0, 0, static_cast<float>(W), static_cast<float>(H)});
      if (!r.valid()) continue;
      active.push_back(r);
      const int px0 = std::max(0, static_cast<int>(std::floor(r.x_min)));
      const int py0 = std::max(0, static_cast<int>(std::floor(r.y_min)));
      const int px1 = std::min(W - 1, static_cast<int>(std::ceil(r.x_max)));
      const int py1 = std::min(H - 1, static_cast<int>(std::ceil(r.y_max)));
      for (int py = py0; py <= py1; ++py) {
        if (py + 0.5f < r.y_min || py + 0.5f >= r.y_max) continue;
        for (int px = px0; px <= px1; ++px) {
          if (px + 0.5f < r.x_min || px + 0.5f >= r.x_max) continue;
          for (int c = 0; c < 3; ++c) {
            frame.at(c, py, px) =
                oc.opacity * occ_color[c] + (1.0f - oc.opacity) * frame.at(c, py, px);
          }
        }
      }
    }

    // Degradations.
    Rng frame_rng = root.fork(100 + static_cast<std::uint64_t>(t));
    if (spec.blur_probability > 0 && frame_rng.bernoulli(spec.blur_probability)) {
      box_blur(frame, spec.blur_kernel);
    }
    if (spec.noise_sigma > 0) {
      for (auto& v : frame.data) {
        v = std::clamp(v + frame_rng.normal(0.0f, spec.noise_sigma), 0.0f, 1.0f);
      }
    }

    // Ground truth.
    auto& gt = scene.ground_truth[static_cast<std::size_t>(t)];
    for (std::size_t i = 0; i < num_obj; ++i) {
      const Rect& b = boxes[static_cast<std::size_t>(t)][i];
      GtBox g;
      g.class_id = objects[i].class_id;
      g.x_min = std::clamp(b.x_min, 0.0f, static_cast<float>(W));
      g.y_min = std::clamp(b.y_min, 0.0f, static_cast<float>(H));
      g.x_max = std::clamp(b.x_max, 0.0f, static_cast<float>(W));
      g.y_max = std::clamp(b.y_max, 0.0f, static_cast<float>(H));
      const Rect clipped{g.x_min, g.y_min, g.x_max, g.y_max};
      g.occluded_fraction = clipped.area() > 0 ? covered_area(clipped, active) / clipped.area() : 0;
      gt.push_back(g);
    }

    scene.frames.push_back(std::move(frame));
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Benchmark suite

const char* profile_name(Profile p) {
  switch (p) {
    case Profile::easy: return "easy";
    case Profile::occlusion_heavy: return "occlusion_heavy";
    case Profile::small_objects: return "small_objects";
  }
  return "?";
}

Profile profile_from_name(const std::string& name) {
  for (Profile p : {Profile::easy, Profile::occlusion_heavy, Profile::small_objects}) {
    if (name == profile_name(p)) return p;
  }
  throw TensorError("unknown profile: " + name);
}

namespace {

SceneSpec profile_spec(Profile profile, std::uint64_t seed, Rng& knobs) {
  SceneSpec s;
  s.seed = seed;
  switch (profile) {
    case Profile::easy:
      s.occluder_count = 0;
      s.min_obj_size = 12;
      s.max_obj_size = 20;
      s.noise_sigma = 0.01f;
      break;
    case Profile::occlusion_heavy:
      s.occluder_count = knobs.uniform_int(3, 5);
      s.occluder_opacity = 1.0f;
      s.min_obj_size = 12;
      s.max_obj_size = 18;
      // Keeps +-2-frame misalignment within one stride-4 feature cell.
      s.max_speed = 2.0f;
      s.min_dwell = 2;
      s.max_dwell = 4;
      s.noise_sigma = 0.02f;
      s.blur_probability = 0.2f;
      break;
    case Profile::small_objects:
      s.occluder_count = 0;
      s.min_obj_size = 6;
      s.max_obj_size = 10;
      s.noise_sigma = 0.02f;
      break;
  }
  return s;
}

}  // namespace

Dataset benchmark_suite(Profile profile, std::uint64_t seed) {
  Dataset ds;
  Rng root(seed ^ 0x5eedbeefULL);
  const struct {
    const char* name;
    int count;
    std::vector<Sequence>* out;
  } splits[] = {{"train", 20, &ds.train}, {"val", 4, &ds.val}, {"test", 6, &ds.test}};

  int global_index = 0;
  for (const auto& split : splits) {
    for (int i = 0; i < split.count; ++i, ++global_index) {
      Rng knobs = root.fork(static_cast<std::uint64_t>(global_index));
      SceneSpec spec = profile_spec(profile, knobs.next_u64(), knobs);
      Scene scene = generate(spec);
      Sequence seq;
      std::ostringstream id;
      id << split.name << "_" << (i < 10 ? "00" : i < 100 ? "0" : "") << i;
      seq.id = id.str();
      seq.frames = std::move(scene.frames);
      seq.ground_truth = std::move(scene.ground_truth);
      split.out->push_back(std::move(seq));
    }
  }
  return ds;
}

std::uint64_t Dataset::content_hash() const {
  Fnv1a h;
  for (const std::vector<Sequence>* split : {&train, &val, &test}) {
    for (const Sequence& seq : *split) {
      h.update(seq.id);
      for (const Tensor& f : seq.frames) h.update(f.data);
      for (const auto& frame_gt : seq.ground_truth) {
        for (const GtBox& b : frame_gt) {
          h.update_value(b.class_id);
          h.update_value(b.x_min);
          h.update_value(b.y_min);
          h.update_value(b.x_max);
          h.update_value(b.y_max);
          h.update_value(b.occluded_fraction);
        }
      }
    }
  }
  return h.digest();
}

// ---------------------------------------------------------------------------
// Disk format

std::string gt_csv_header() {
  return "sequence_id,frame_id,class,x_min,y_min,x_max,y_max,occluded_fraction";
}

namespace {
std::string frame_file_name(int index, FrameFormat format) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04d.%s", index, format == FrameFormat::fftn ? "fftn" : "ppm");
  return buf;
}
}  // namespace

void write_ppm(const std::string& path, const Tensor& frame) {
  if (frame.rank() != 3 || frame.dim(0) != 3) throw TensorError("write_ppm expects a 3 x H x W frame");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw TensorError("cannot open for write: " + path);
  const int h = frame.dim(1), w = frame.dim(2);
  f << "P6\n" << w << " " << h << "\n255\n";
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(frame.at(c, y, x), 0.0f, 1.0f);
        f.put(static_cast<char>(static_cast<int>(v * 255.0f + 0.5f)));
      }
    }
  }
  if (!f) throw TensorError("ppm write failed: " + path);
}

Tensor read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw TensorError("cannot open for read: " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255) throw TensorError("unsupported ppm: " + path);
  f.get();  // single whitespace after header
  Tensor frame({3, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        frame.at(c, y, x) = static_cast<float>(static_cast<unsigned char>(f.get())) / 255.0f;
      }
    }
  }
  if (!f) throw TensorError("ppm truncated: " + path);
  return frame;
}

void save_dataset(const std::string& dir, const Dataset& ds, FrameFormat format) {
  fs::create_directories(dir);
  // Combined ground truth plus one file per split, so evaluations can score
  // a split's detections against exactly that split's boxes.
  std::ofstream gt(fs::path(dir) / "gt.csv");
  if (!gt) throw TensorError("cannot write gt.csv in " + dir);
  gt.precision(9);
  gt << gt_csv_header() << "\n";

  const struct {
    const char* name;
    const std::vector<Sequence>* seqs;
  } splits[] = {{"train", &ds.train}, {"val", &ds.val}, {"test", &ds.test}};
  for (const auto& split : splits) {
    std::ofstream split_gt(fs::path(dir) / ("gt_" + std::string(split.name) + ".csv"));
    split_gt.precision(9);
    split_gt << gt_csv_header() << "\n";
    for (const Sequence& seq : *split.seqs) {
      const fs::path seq_dir = fs::path(dir) / split.name / seq.id;
      fs::create_directories(seq_dir);
      for (std::size_t t = 0; t < seq.frames.size(); ++t) {
        const std::string file = frame_file_name(static_cast<int>(t), format);
        if (format == FrameFormat::fftn) {
          save_tensor((seq_dir / file).string(), seq.frames[t]);
        } else {
          write_ppm((seq_dir / file).string(), seq.frames[t]);
        }
        for (const GtBox& b : seq.ground_truth[t]) {
          std::ostringstream row;
          row.precision(9);
          row << seq.id << "," << t << "," << b.class_id << "," << b.x_min << "," << b.y_min << ","
              << b.x_max << "," << b.y_max << "," << b.occluded_fraction << "\n";
          gt << row.str();
          split_gt << row.str();
        }
      }
    }
  }
}

Dataset load_dataset(const std::string& dir) {
  // Ground truth rows, bucketed by sequence id.
  std::map<std::string, std::map<int, std::vector<GtBox>>> gt;
  std::ifstream gtf(fs::path(dir) / "gt.csv");
  if (!gtf) throw TensorError("missing gt.csv in " + dir);
  std::string line;
  std::getline(gtf, line);  // header
  while (std::getline(gtf, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 8) throw TensorError("bad gt.csv row: " + line);
    GtBox b;
    b.class_id = std::stoi(fields[2]);
    b.x_min = std::stof(fields[3]);
    b.y_min = std::stof(fields[4]);
    b.x_max = std::stof(fields[5]);
    b.y_max = std::stof(fields[6]);
    b.occluded_fraction = std::stof(fields[7]);
    gt[fields[0]][std::stoi(fields[1])].push_back(b);
  }

  Dataset ds;
  const struct {
    const char* name;
    std::vector<Sequence>* out;
  } splits[] = {{"train", &ds.train}, {"val", &ds.val}, {"test", &ds.test}};
  for (const auto& split : splits) {
    const fs::path split_dir = fs::path(dir) / split.name;
    if (!fs::exists(split_dir)) continue;
    std::vector<fs::path> seq_dirs;
    for (const auto& e : fs::directory_iterator(split_dir)) {
      if (e.is_directory()) seq_dirs.push_back(e.path());
    }
    std::sort(seq_dirs.begin(), seq_dirs.end());
    for (const fs::path& sd : seq_dirs) {
      Sequence seq;
      seq.id = sd.filename().string();
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(sd)) {
        if (e.is_regular_file()) files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const fs::path& f : files) {
        if (f.extension() == ".fftn") {
          seq.frames.push_back(load_tensor(f.string()));
        } else if (f.extension() == ".ppm") {
          seq.frames.push_back(read_ppm(f.string()));
        }
      }
      seq.ground_truth.resize(seq.frames.size());
      if (auto it = gt.find(seq.id); it != gt.end()) {
        for (auto& [frame_id, bs] : it->second) {
          if (frame_id >= 0 && frame_id < static_cast<int>(seq.frames.size())) {
            seq.ground_truth[static_cast<std::size_t>(frame_id)] = bs;
          }
        }
      }
      split.out->push_back(std::move(seq));
    }
  }
  return ds;
}

}  // namespace fusedet

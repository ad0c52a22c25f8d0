#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fusedet/tensor.hpp"

namespace fusedet {

struct GtBox {
  int class_id = 0;
  float x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  float occluded_fraction = 0.0f;

  float area() const { return (x_max - x_min) * (y_max - y_min); }
};

/// Explicit object placement. When SceneSpec.objects is empty the generator
/// samples these from the ranges below; tests pass them directly.
struct ObjectSpec {
  int class_id = 0;
  float w = 12, h = 12;
  float x0 = 0, y0 = 0;  // centre at frame 0
  float vx = 0, vy = 0;  // px/frame
  float jitter = 0.0f;   // per-axis uniform velocity jitter amplitude
  std::uint64_t texture_seed = 0;
};

/// A bar that is present (and sweeping) only during its dwell window.
struct OccluderSpec {
  float cx = 0, cy = 0;  // centre at dwell start
  float w = 0, h = 0;
  float vx = 0, vy = 0;
  float opacity = 1.0f;
  int dwell_start = 0;
  int dwell_len = 0;

  bool active(int frame) const { return frame >= dwell_start && frame < dwell_start + dwell_len; }
};

struct SceneSpec {
  std::uint64_t seed = 0;
  int width = 64, height = 64;
  int frame_count = 40;
  int min_objects = 2, max_objects = 3;
  float min_obj_size = 12.0f, max_obj_size = 20.0f;
  float max_speed = 3.0f;  // per-axis px/frame cap, jitter included
  int occluder_count = 0;
  float occluder_opacity = 1.0f;
  int min_dwell = 2, max_dwell = 4;
  float blur_probability = 0.0f;
  int blur_kernel = 3;
  float noise_sigma = 0.0f;
  std::vector<ObjectSpec> objects;      // optional explicit placement
  std::vector<OccluderSpec> occluders;  // optional explicit placement
};

struct Scene {
  std::vector<Tensor> frames;                    // 3 x H x W, values in [0,1]
  std::vector<std::vector<GtBox>> ground_truth;  // per frame
  std::vector<ObjectSpec> objects;               // realized placements
  std::vector<OccluderSpec> occluders;
};

/// Render the scene. Identical specs produce bit-identical frames and
/// ground truth. Objects bounce off the image borders, so every box has
/// positive area inside the image.
Scene generate(const SceneSpec& spec);

struct Sequence {
  std::string id;
  std::vector<Tensor> frames;
  std::vector<std::vector<GtBox>> ground_truth;
};

struct Dataset {
  std::vector<Sequence> train, val, test;
  std::uint64_t content_hash() const;
};

enum class Profile { easy, occlusion_heavy, small_objects };
const char* profile_name(Profile p);
Profile profile_from_name(const std::string& name);

/// Fixed-size benchmark: 20 train / 4 val / 6 test sequences of 40 frames
/// at 64x64, split by sequence. Profiles vary object size, occluders and
/// degradations.
Dataset benchmark_suite(Profile profile, std::uint64_t seed);

// ---------------------------------------------------------------------------
// On-disk layout: <dir>/{train,val,test}/<seq_id>/frame_%04d.(fftn|ppm)
// plus a single gt.csv covering all splits.

enum class FrameFormat { fftn, ppm };

std::string gt_csv_header();
void save_dataset(const std::string& dir, const Dataset& ds, FrameFormat format);
Dataset load_dataset(const std::string& dir);

void write_ppm(const std::string& path, const Tensor& frame);
Tensor read_ppm(const std::string& path);

}  // namespace fusedet

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fusedet/frame_window.hpp"
#include "fusedet/fusion.hpp"
#include "fusedet/tensor.hpp"

namespace fusedet {

enum class AttentionKind { none, three_conv, unet };
enum class WindowMode { symmetric, past_only };

const char* attention_kind_name(AttentionKind k);
AttentionKind attention_kind_from_name(const std::string& name);

struct DetectorConfig {
  int input_h = 64;
  int input_w = 64;
  int stride = 4;   // R: input pixels per feature cell
  int channels = 32;
  int num_classes = 2;
  AttentionKind attention = AttentionKind::none;
  int unet_levels = 2;
  int top_k = 50;
  float score_threshold = 0.05f;

  int feature_h() const { return input_h / stride; }
  int feature_w() const { return input_w / stride; }
  void validate() const;
};

struct HeadOutputs {
  Tensor heatmap;  // K x h' x w', post-sigmoid
  Tensor size;     // 2 x h' x w'  (channel 0 = width, 1 = height, input pixels)
  Tensor offset;   // 2 x h' x w'  (channel 0 = x, 1 = y, fractional cells)
};

struct Detection {
  int class_id = 0;
  float score = 0.0f;
  float x_min = 0.0f, y_min = 0.0f, x_max = 0.0f, y_max = 0.0f;
};

// ---------------------------------------------------------------------------
// Trainable conv wrapper (rank-3 maps in, rank-3 maps out)

struct ConvLayer {
  std::string name;
  ConvParams params;
  Tensor weight_grad;
  Tensor bias_grad;
  bool frozen = false;

  void init(std::string layer_name, int in_ch, int out_ch, int ksize, int stride, int pad,
            Rng& rng, bool with_bias = true);
  Tensor infer(const Tensor& x) const;
  Tensor forward(const Tensor& x, Conv2dContext& ctx) const;
  /// Accumulates weight/bias grads and returns grad w.r.t. the input map.
  Tensor backward(Conv2dContext& ctx, const Tensor& grad_out);
  void zero_grads();
};

/// Registry entry used by the optimizer and the checkpoint writer.
struct ParamRef {
  std::string name;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;
  const bool* frozen = nullptr;
};

// ---------------------------------------------------------------------------
// Backbone: stride-4 miniature feature extractor
//   conv(3 -> c/2, 3x3, s2) + relu
//   conv(c/2 -> c, 3x3, s2) + relu
//   two residual blocks: y = relu(x + conv(x, 3x3))

struct BackboneTape {
  Conv2dContext c1, c2, r1, r2;
  Tensor z1, z2, s1, s2;  // pre-relu activations
};

struct Backbone {
  ConvLayer conv1, conv2, res1, res2;

  void init(const DetectorConfig& cfg, Rng& rng);
  Tensor infer(const Tensor& pixels) const;
  Tensor forward(const Tensor& pixels, BackboneTape& tape) const;
  void backward(BackboneTape& tape, const Tensor& grad_out);  // input grad discarded
  void collect(std::vector<ParamRef>& out);
  void zero_grads();
};

// ---------------------------------------------------------------------------
// Attention variants producing a (0,1) saliency map of the feature extents

struct ThreeConvTape {
  Conv2dContext ca, cb, cc;
  Tensor za, zb;
  Tensor saliency;  // post-sigmoid
};

struct ThreeConvAttention {
  ConvLayer a1, a2, a3;

  void init(const DetectorConfig& cfg, Rng& rng);
  Tensor infer(const Tensor& feat) const;
  Tensor forward(const Tensor& feat, ThreeConvTape& tape) const;
  Tensor backward(ThreeConvTape& tape, const Tensor& grad_saliency);
  void collect(std::vector<ParamRef>& out);
  void zero_grads();
};

/// Internal shape trace of one U-Net forward, for structural checks.
struct UNetTrace {
  std::vector<std::vector<int>> encoder_pre_pool;   // conv+relu outputs per level
  std::vector<std::vector<int>> encoder_post_pool;  // after each maxpool
  std::vector<int> bottleneck;
};

struct UNetTape {
  std::vector<Conv2dContext> enc_ctx;
  std::vector<Tensor> enc_pre;  // pre-relu
  std::vector<Tensor> enc_act;  // post-relu skip inputs
  std::vector<Conv2dContext> dec_ctx;
  std::vector<Tensor> dec_pre;
  Conv2dContext final_ctx;
  Tensor saliency;
};

/// Encoder of `levels` (conv 3x3 + relu + maxpool2x) stages doubling
/// channels; mirrored decoder with skip concatenation halving them; final
/// conv to one channel + sigmoid.
struct UNetAttention {
  int levels = 2;
  std::vector<ConvLayer> enc;  // enc[k]: c*2^k -> c*2^(k+1)
  std::vector<ConvLayer> dec;  // dec[j]: consumes skip level j, emits c*2^j
  ConvLayer final_conv;

  void init(const DetectorConfig& cfg, Rng& rng);
  Tensor infer(const Tensor& feat, UNetTrace* trace = nullptr) const;
  Tensor forward(const Tensor& feat, UNetTape& tape) const;
  Tensor backward(UNetTape& tape, const Tensor& grad_saliency);
  void collect(std::vector<ParamRef>& out);
  void zero_grads();
};

/// feat * saliency, the saliency broadcast across channels.
Tensor apply_attention(const Tensor& feat, const Tensor& saliency);
/// Returns (grad_feat, grad_saliency).
std::pair<Tensor, Tensor> apply_attention_backward(const Tensor& feat, const Tensor& saliency,
                                                   const Tensor& grad_out);

// ---------------------------------------------------------------------------
// Detection heads. The heatmap head reads the fused map; size and offset
// heads read the target-frame map.

struct HeadsTape {
  Conv2dContext heat1, heat2, size1, size2, off1, off2;
  Tensor heat_z, size_z, off_z;  // pre-relu of the first conv in each head
  Tensor heatmap;                // post-sigmoid
};

struct Heads {
  ConvLayer heat1, heat2;  // c -> c 3x3, c -> K 1x1
  ConvLayer size1, size2;  // c -> c 3x3, c -> 2 1x1
  ConvLayer off1, off2;

  void init(const DetectorConfig& cfg, Rng& rng);
  HeadOutputs infer(const Tensor& fused, const Tensor& target) const;
  HeadOutputs forward(const Tensor& fused, const Tensor& target, HeadsTape& tape) const;
  /// Takes grads w.r.t. the three outputs; returns (grad_fused, grad_target).
  std::pair<Tensor, Tensor> backward(HeadsTape& tape, const Tensor& grad_heatmap,
                                     const Tensor& grad_size, const Tensor& grad_offset);
  void collect(std::vector<ParamRef>& out);
  void zero_grads();
};

// ---------------------------------------------------------------------------
// Fusion with grad storage

struct FusionLayer {
  FusionStrategy strategy;
  Tensor weight_grad;  // learned weights or concat kernel
  Tensor bias_grad;
  bool frozen = false;

  bool trainable() const {
    return strategy.tag == FusionTag::learned || strategy.tag == FusionTag::concat_conv;
  }
  void zero_grads();
  void collect(std::vector<ParamRef>& out);
};

// ---------------------------------------------------------------------------
// Whole detector

struct DetectorModel {
  DetectorConfig cfg;
  int n = 0;
  WindowMode window_mode = WindowMode::symmetric;
  Backbone backbone;
  ThreeConvAttention attention3;
  UNetAttention attention_unet;
  FusionLayer fusion;
  Heads heads;

  static DetectorModel create(const DetectorConfig& cfg, int n, WindowMode mode, FusionTag tag,
                              FusionInit init, FusionMode fusion_mode, std::uint64_t seed);

  WindowIndex window_for(int t, int frame_count) const;
  /// Backbone + attention for one frame; this is what the cache stores.
  Tensor frame_features(const Tensor& pixels) const;
  HeadOutputs forward_window(const std::vector<FeatureMapPtr>& maps, int target_pos) const;
  std::vector<Detection> detect_frame(FeatureCache& cache, const std::vector<Tensor>& frames,
                                      int t) const;

  std::vector<ParamRef> parameters();
  void set_frozen(const std::vector<std::string>& name_prefixes, bool frozen);
  void zero_grads();
};

/// Center-keypoint decoding: 3x3 local maxima above the score threshold,
/// top_k kept (ties broken by row-major cell order), centers displaced by
/// the offset map and scaled by the stride, sizes read in input pixels.
std::vector<Detection> decode(const HeadOutputs& outputs, const DetectorConfig& cfg);

std::string detections_csv_header();
std::string detection_csv_row(const std::string& frame_id, const Detection& d);

}  // namespace fusedet

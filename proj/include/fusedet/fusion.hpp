#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "fusedet/tensor.hpp"

namespace fusedet {

using FeatureMapPtr = std::shared_ptr<const Tensor>;

enum class FusionMode { shared, per_channel };

/// Learned frame-axis mixing weights: the 1x1x(2n+1) kernel applied across
/// the window of feature maps. `weights` has shape [2n+1] in shared mode or
/// [c, 2n+1] in per-channel mode.
struct FusionParams {
  int n = 0;
  FusionMode mode = FusionMode::shared;
  Tensor weights;
  Tensor bias;  // per output channel; empty = no bias (default)

  int window() const { return 2 * n + 1; }
  bool has_bias() const { return !bias.empty(); }
  void validate(int channels) const;

  /// One-hot weight on `target_pos` (defaults to the window centre), zero
  /// elsewhere: fused output equals the target map exactly.
  static FusionParams identity(int n, FusionMode mode, int channels, int target_pos = -1,
                               bool with_bias = false);
  static FusionParams uniform(int n, FusionMode mode, int channels, bool with_bias = false);
  static FusionParams seeded_random(int n, FusionMode mode, int channels, Rng& rng,
                                    bool with_bias = false);
};

enum class FusionTag { learned, mean, max, median, concat_conv, none };

const char* fusion_tag_name(FusionTag tag);
FusionTag fusion_tag_from_name(const std::string& name);

/// One of the fusion strategies of the ablation set, behind a common
/// interface. `learned` carries FusionParams, `concat_conv` carries a 1x1
/// ConvParams over the stacked channels, the reductions carry nothing.
struct FusionStrategy {
  FusionTag tag = FusionTag::none;
  int n = 0;
  FusionParams params;      // learned
  ConvParams concat_params;  // concat_conv

  Tensor fuse(const std::vector<FeatureMapPtr>& maps) const;
};

enum class FusionInit { identity, uniform, seeded_random };

FusionStrategy make_fusion(FusionTag tag, int n, int channels, FusionInit init, Rng& rng,
                           FusionMode mode = FusionMode::shared, int target_pos = -1,
                           bool with_bias = false);

// ---------------------------------------------------------------------------
// Learned fusion

/// Weighted sum over the frame axis:
///   out[ch,y,x] = sum_k weights[k(,ch)] * maps[k][ch,y,x] (+ bias[ch]).
Tensor fuse_learned(const std::vector<FeatureMapPtr>& maps, const FusionParams& p);

/// The channel-regroup formulation of the same operation: slice each map per
/// channel, stack the 2n+1 slices, run a 1x1 convolution with the weights as
/// kernel, and re-order the results channel-wise. Kept as the reference
/// route; must agree with fuse_learned to within float tolerance.
Tensor fuse_learned_grouped(const std::vector<FeatureMapPtr>& maps, const FusionParams& p);

struct FusionContext {
  std::vector<FeatureMapPtr> maps;
  FusionParams params;
  bool valid = false;
};

Tensor fuse_learned(const std::vector<FeatureMapPtr>& maps, const FusionParams& p,
                    FusionContext& ctx);

struct FusionGrads {
  std::vector<Tensor> maps;
  Tensor weights;
  Tensor bias;  // empty when no bias
};

FusionGrads fuse_learned_backward(FusionContext& ctx, const Tensor& grad_out);

// ---------------------------------------------------------------------------
// Baselines

/// Elementwise reduction over the frame axis (mean/max/median) or channel
/// concatenation followed by a 1x1 convolution (concat_conv).
Tensor fuse_baseline(const std::vector<FeatureMapPtr>& maps, const FusionStrategy& strategy);

/// Gradients of fuse_baseline w.r.t. each input map (and the concat_conv
/// kernel, accumulated into `concat_grads` when provided).
std::vector<Tensor> fuse_baseline_backward(const std::vector<FeatureMapPtr>& maps,
                                           const FusionStrategy& strategy,
                                           const Tensor& grad_out,
                                           Conv2dGrads* concat_grads = nullptr);

// Plain-text sidecar + FFTN serialization for learned strategies.
void write_fusion(std::ostream& header, std::ostream& weights, const FusionStrategy& s);
FusionStrategy read_fusion(std::istream& header, std::istream& weights);

}  // namespace fusedet

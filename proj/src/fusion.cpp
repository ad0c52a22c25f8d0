#include "fusedet/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "fusedet/tensor_io.hpp"

namespace fusedet {

void FusionParams::validate(int channels) const {
  if (n < 0) throw TensorError("fusion n must be >= 0");
  const int win = window();
  if (mode == FusionMode::shared) {
    if (weights.shape != std::vector<int>{win}) {
      throw TensorError("shared fusion weights must have shape [" + std::to_string(win) + "]");
    }
  } else {
    if (weights.shape != std::vector<int>{channels, win}) {
      throw TensorError("per-channel fusion weights must have shape [c," + std::to_string(win) +
                        "]");
    }
  }
  if (has_bias() && bias.shape != std::vector<int>{channels}) {
    throw TensorError("fusion bias must have shape [c]");
  }
}

FusionParams FusionParams::identity(int n, FusionMode mode, int channels, int target_pos,
                                    bool with_bias) {
  if (target_pos < 0) target_pos = n;
  FusionParams p;
  p.n = n;
  p.mode = mode;
  if (mode == FusionMode::shared) {
    p.weights = Tensor({p.window()});
    p.weights.at(target_pos) = 1.0f;
  } else {
    p.weights = Tensor({channels, p.window()});
    for (int c = 0; c < channels; ++c) p.weights.at(c, target_pos) = 1.0f;
  }
  if (with_bias) p.bias = Tensor({channels});
  return p;
}

FusionParams FusionParams::uniform(int n, FusionMode mode, int channels, bool with_bias) {
  FusionParams p;
  p.n = n;
  p.mode = mode;
  const float v = 1.0f / static_cast<float>(p.window());
  p.weights = mode == FusionMode::shared ? Tensor({p.window()}, v)
                                         : Tensor({channels, p.window()}, v);
  if (with_bias) p.bias = Tensor({channels});
  return p;
}

FusionParams FusionParams::seeded_random(int n, FusionMode mode, int channels, Rng& rng,
                                         bool with_bias) {
  FusionParams p;
  p.n = n;
  p.mode = mode;
  const float b = 1.0f / static_cast<float>(p.window());
  p.weights = mode == FusionMode::shared
                  ? Tensor::random_uniform({p.window()}, -b, b, rng)
                  : Tensor::random_uniform({channels, p.window()}, -b, b, rng);
  if (with_bias) p.bias = Tensor({channels});
  return p;
}

const char* fusion_tag_name(FusionTag tag) {
  switch (tag) {
    case FusionTag::learned: return "learned";
    case FusionTag::mean: return "mean";
    case FusionTag::max: return "max";
    case FusionTag::median: return "median";
    case FusionTag::concat_conv: return "concat_conv";
    case FusionTag::none: return "none";
  }
  return "?";
}

FusionTag fusion_tag_from_name(const std::string& name) {
  for (FusionTag t : {FusionTag::learned, FusionTag::mean, FusionTag::max, FusionTag::median,
                      FusionTag::concat_conv, FusionTag::none}) {
    if (name == fusion_tag_name(t)) return t;
  }
  throw TensorError("unknown fusion tag: " + name);
}

namespace {

void check_window(const std::vector<FeatureMapPtr>& maps, int n, const char* op) {
  const int win = 2 * n + 1;
  if (static_cast<int>(maps.size()) != win) {
    throw TensorError(std::string(op) + ": expected " + std::to_string(win) + " maps, got " +
                      std::to_string(maps.size()));
  }
  for (const auto& m : maps) {
    if (!m) throw TensorError(std::string(op) + ": null map");
    if (m->rank() != 3) throw TensorError(std::string(op) + ": maps must be rank 3 (c,h,w)");
    if (!m->same_shape(*maps[0])) {
      throw TensorError(std::string(op) + ": map shape mismatch " + shape_str(m->shape) + " vs " +
                        shape_str(maps[0]->shape));
    }
  }
}

}  // namespace

Tensor fuse_learned(const std::vector<FeatureMapPtr>& maps, const FusionParams& p) {
  check_window(maps, p.n, "fuse_learned");
  const Tensor& first = *maps[0];
  const int c = first.dim(0);
  const std::int64_t plane = static_cast<std::int64_t>(first.dim(1)) * first.dim(2);
  p.validate(c);

  Tensor out(first.shape);
  for (int ch = 0; ch < c; ++ch) {
    float* o = out.data.data() + static_cast<std::size_t>(ch) * plane;
    for (int k = 0; k < p.window(); ++k) {
      const float wk = p.mode == FusionMode::shared ? p.weights.at(k) : p.weights.at(ch, k);
      const float* m = maps[static_cast<std::size_t>(k)]->data.data() +
                       static_cast<std::size_t>(ch) * plane;
      for (std::int64_t i = 0; i < plane; ++i) o[i] += wk * m[i];
    }
    if (p.has_bias()) {
      const float b = p.bias.at(ch);
      for (std::int64_t i = 0; i < plane; ++i) o[i] += b;
    }
  }
  ensure_finite(out, "fuse_learned");
  return out;
}

Tensor fuse_learned_grouped(const std::vector<FeatureMapPtr>& maps, const FusionParams& p) {
  check_window(maps, p.n, "fuse_learned_grouped");
  const Tensor& first = *maps[0];
  const int c = first.dim(0), h = first.dim(1), w = first.dim(2);
  p.validate(c);
  const int win = p.window();

  // Slice every c channels and concatenate: per channel, a [1, 2n+1, h, w]
  // tensor whose "channels" are the window positions.
  std::vector<Tensor> fused_slices;
  fused_slices.reserve(static_cast<std::size_t>(c));
  for (int ch = 0; ch < c; ++ch) {
    Tensor group({1, win, h, w});
    for (int k = 0; k < win; ++k) {
      const float* src = maps[static_cast<std::size_t>(k)]->data.data() +
                         static_cast<std::size_t>(ch) * h * w;
      std::copy(src, src + static_cast<std::size_t>(h) * w,
                group.data.begin() + static_cast<std::size_t>(k) * h * w);
    }
    ConvParams kernel;
    kernel.weight = Tensor({1, win, 1, 1});
    for (int k = 0; k < win; ++k) {
      kernel.weight.at(0, k, 0, 0) =
          p.mode == FusionMode::shared ? p.weights.at(k) : p.weights.at(ch, k);
    }
    if (p.has_bias()) {
      kernel.bias = Tensor({1});
      kernel.bias.at(0) = p.bias.at(ch);
    }
    fused_slices.push_back(reshape(conv2d(group, kernel), {1, h, w}));
  }

  std::vector<const Tensor*> slice_ptrs;
  slice_ptrs.reserve(fused_slices.size());
  for (const Tensor& t : fused_slices) slice_ptrs.push_back(&t);
  return concat_channels(slice_ptrs);  // re-order channel-wise into c x h x w
}

Tensor fuse_learned(const std::vector<FeatureMapPtr>& maps, const FusionParams& p,
                    FusionContext& ctx) {
  Tensor out = fuse_learned(maps, p);
  ctx.maps = maps;
  ctx.params = p;
  ctx.valid = true;
  return out;
}

FusionGrads fuse_learned_backward(FusionContext& ctx, const Tensor& grad_out) {
  if (!ctx.valid) throw TensorError("fuse_learned_backward: context already consumed");
  ctx.valid = false;
  const FusionParams& p = ctx.params;
  const Tensor& first = *ctx.maps[0];
  if (grad_out.shape != first.shape) {
    throw TensorError("fuse_learned_backward grad shape mismatch");
  }
  const int c = first.dim(0);
  const std::int64_t plane = static_cast<std::int64_t>(first.dim(1)) * first.dim(2);

  FusionGrads g;
  g.weights = Tensor(p.weights.shape);
  if (p.has_bias()) g.bias = Tensor(p.bias.shape);
  g.maps.reserve(ctx.maps.size());

  for (int k = 0; k < p.window(); ++k) {
    const Tensor& m = *ctx.maps[static_cast<std::size_t>(k)];
    Tensor gm(first.shape);
    for (int ch = 0; ch < c; ++ch) {
      const float wk = p.mode == FusionMode::shared ? p.weights.at(k) : p.weights.at(ch, k);
      const float* go = grad_out.data.data() + static_cast<std::size_t>(ch) * plane;
      const float* mv = m.data.data() + static_cast<std::size_t>(ch) * plane;
      float* gd = gm.data.data() + static_cast<std::size_t>(ch) * plane;
      double wacc = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) {
        gd[i] = wk * go[i];
        wacc += static_cast<double>(mv[i]) * go[i];
      }
      if (p.mode == FusionMode::shared) {
        g.weights.at(k) += static_cast<float>(wacc);
      } else {
        g.weights.at(ch, k) += static_cast<float>(wacc);
      }
    }
    g.maps.push_back(std::move(gm));
  }
  if (p.has_bias()) {
    for (int ch = 0; ch < c; ++ch) {
      const float* go = grad_out.data.data() + static_cast<std::size_t>(ch) * plane;
      double acc = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) acc += go[i];
      g.bias.at(ch) = static_cast<float>(acc);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Baselines

Tensor FusionStrategy::fuse(const std::vector<FeatureMapPtr>& maps) const {
  return fuse_baseline(maps, *this);
}

Tensor fuse_baseline(const std::vector<FeatureMapPtr>& maps, const FusionStrategy& strategy) {
  check_window(maps, strategy.n, "fuse_baseline");
  std::vector<const Tensor*> ptrs;
  ptrs.reserve(maps.size());
  for (const auto& m : maps) ptrs.push_back(m.get());

  switch (strategy.tag) {
    case FusionTag::none:
      return *maps[0];
    case FusionTag::learned:
      return fuse_learned(maps, strategy.params);
    case FusionTag::mean:
      return mean_over_axis(stack(ptrs), 0);
    case FusionTag::max:
      return max_over_axis(stack(ptrs), 0);
    case FusionTag::median:
      return median_over_axis(stack(ptrs), 0);
    case FusionTag::concat_conv: {
      const Tensor cat = concat_channels(ptrs);  // (2n+1)*c x h x w
      const Tensor batched = reshape(cat, {1, cat.dim(0), cat.dim(1), cat.dim(2)});
      const Tensor out = conv2d(batched, strategy.concat_params);
      return reshape(out, {out.dim(1), out.dim(2), out.dim(3)});
    }
  }
  throw TensorError("fuse_baseline: bad tag");
}

std::vector<Tensor> fuse_baseline_backward(const std::vector<FeatureMapPtr>& maps,
                                           const FusionStrategy& strategy, const Tensor& grad_out,
                                           Conv2dGrads* concat_grads) {
  check_window(maps, strategy.n, "fuse_baseline_backward");
  std::vector<const Tensor*> ptrs;
  ptrs.reserve(maps.size());
  for (const auto& m : maps) ptrs.push_back(m.get());

  switch (strategy.tag) {
    case FusionTag::none:
      return {grad_out};
    case FusionTag::learned:
      throw TensorError("use fuse_learned_backward for the learned strategy");
    case FusionTag::mean:
    case FusionTag::max:
    case FusionTag::median: {
      const Tensor stacked = stack(ptrs);
      Tensor gs;
      if (strategy.tag == FusionTag::mean) {
        gs = mean_over_axis_backward(stacked, 0, grad_out);
      } else if (strategy.tag == FusionTag::max) {
        gs = max_over_axis_backward(stacked, 0, grad_out);
      } else {
        gs = median_over_axis_backward(stacked, 0, grad_out);
      }
      std::vector<Tensor> grads;
      const std::size_t block = maps[0]->data.size();
      for (std::size_t k = 0; k < maps.size(); ++k) {
        Tensor g(maps[0]->shape);
        std::copy(gs.data.begin() + k * block, gs.data.begin() + (k + 1) * block, g.data.begin());
        grads.push_back(std::move(g));
      }
      return grads;
    }
    case FusionTag::concat_conv: {
      const Tensor cat = concat_channels(ptrs);
      const Tensor batched = reshape(cat, {1, cat.dim(0), cat.dim(1), cat.dim(2)});
      Conv2dContext ctx;
      conv2d(batched, strategy.concat_params, ctx);
      const Tensor go4 = reshape(grad_out, {1, grad_out.dim(0), grad_out.dim(1), grad_out.dim(2)});
      Conv2dGrads g = conv2d_backward(ctx, go4);
      if (concat_grads) {
        if (concat_grads->weight.empty()) {
          concat_grads->weight = Tensor(strategy.concat_params.weight.shape);
        }
        for (std::size_t i = 0; i < g.weight.data.size(); ++i) {
          concat_grads->weight.data[i] += g.weight.data[i];
        }
        if (strategy.concat_params.has_bias()) {
          if (concat_grads->bias.empty()) {
            concat_grads->bias = Tensor(strategy.concat_params.bias.shape);
          }
          for (std::size_t i = 0; i < g.bias.data.size(); ++i) {
            concat_grads->bias.data[i] += g.bias.data[i];
          }
        }
      }
      const Tensor gcat = reshape(g.x, cat.shape);
      std::vector<int> counts(maps.size(), maps[0]->dim(0));
      return concat_channels_backward(gcat, counts);
    }
  }
  throw TensorError("fuse_baseline_backward: bad tag");
}

FusionStrategy make_fusion(FusionTag tag, int n, int channels, FusionInit init, Rng& rng,
                           FusionMode mode, int target_pos, bool with_bias) {
  if (tag == FusionTag::none && n > 0) {
    throw TensorError("fusion tag 'none' requires n = 0");
  }
  FusionStrategy s;
  s.tag = tag;
  s.n = n;
  if (tag == FusionTag::learned) {
    switch (init) {
      case FusionInit::identity:
        s.params = FusionParams::identity(n, mode, channels, target_pos, with_bias);
        break;
      case FusionInit::uniform:
        s.params = FusionParams::uniform(n, mode, channels, with_bias);
        break;
      case FusionInit::seeded_random:
        s.params = FusionParams::seeded_random(n, mode, channels, rng, with_bias);
        break;
    }
  } else if (tag == FusionTag::concat_conv) {
    const int win = 2 * n + 1;
    const int in_ch = win * channels;
    const float bound = 1.0f / std::sqrt(static_cast<float>(in_ch));
    s.concat_params.weight = Tensor::random_uniform({channels, in_ch, 1, 1}, -bound, bound, rng);
    s.concat_params.bias = Tensor({channels});
    s.concat_params.stride = 1;
    s.concat_params.padding = 0;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Serialization

void write_fusion(std::ostream& header, std::ostream& weights, const FusionStrategy& s) {
  header << "tag=" << fusion_tag_name(s.tag) << " n=" << s.n;
  if (s.tag == FusionTag::learned) {
    header << " mode=" << (s.params.mode == FusionMode::shared ? "shared" : "per_channel")
           << " bias=" << (s.params.has_bias() ? 1 : 0);
    header << "\n";
    write_fftn(weights, s.params.weights);
    if (s.params.has_bias()) write_fftn(weights, s.params.bias);
  } else if (s.tag == FusionTag::concat_conv) {
    header << " bias=" << (s.concat_params.has_bias() ? 1 : 0) << "\n";
    write_fftn(weights, s.concat_params.weight);
    if (s.concat_params.has_bias()) write_fftn(weights, s.concat_params.bias);
  } else {
    header << "\n";
  }
}

FusionStrategy read_fusion(std::istream& header, std::istream& weights) {
  std::string line;
  if (!std::getline(header, line)) throw TensorError("fusion header: empty");
  FusionStrategy s;
  std::istringstream ss(line);
  std::string tok;
  std::string mode = "shared";
  int bias = 0;
  while (ss >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw TensorError("fusion header: bad token " + tok);
    const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
    if (key == "tag") {
      s.tag = fusion_tag_from_name(val);
    } else if (key == "n") {
      s.n = std::stoi(val);
    } else if (key == "mode") {
      mode = val;
    } else if (key == "bias") {
      bias = std::stoi(val);
    }
  }
  if (s.tag == FusionTag::learned) {
    s.params.n = s.n;
    s.params.mode = mode == "per_channel" ? FusionMode::per_channel : FusionMode::shared;
    s.params.weights = read_fftn(weights);
    if (bias) s.params.bias = read_fftn(weights);
  } else if (s.tag == FusionTag::concat_conv) {
    s.concat_params.weight = read_fftn(weights);
    if (bias) s.concat_params.bias = read_fftn(weights);
    s.concat_params.stride = 1;
    s.concat_params.padding = 0;
  }
  return s;
}

}  // namespace fusedet

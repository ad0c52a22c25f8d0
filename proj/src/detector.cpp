#include "fusedet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace fusedet {

const char* attention_kind_name(AttentionKind k) {
  switch (k) {
    case AttentionKind::none: return "none";
    case AttentionKind::three_conv: return "three_conv";
    case AttentionKind::unet: return "unet";
  }
  return "?";
}

AttentionKind attention_kind_from_name(const std::string& name) {
  for (AttentionKind k : {AttentionKind::none, AttentionKind::three_conv, AttentionKind::unet}) {
    if (name == attention_kind_name(k)) return k;
  }
  throw TensorError("unknown attention kind: " + name);
}

void DetectorConfig::validate() const {
  if (stride < 1 || input_h % stride != 0 || input_w % stride != 0) {
    throw TensorError("input extents must be divisible by the stride");
  }
  if (channels < 2 || channels % 2 != 0) {
    throw TensorError("backbone channels must be even and >= 2");
  }
  if (num_classes < 1) throw TensorError("need at least one class");
  if (attention == AttentionKind::unet) {
    const int div = 1 << unet_levels;
    if (feature_h() % div != 0 || feature_w() % div != 0) {
      throw TensorError("feature extents must be divisible by 2^unet_levels");
    }
  }
}

// ---------------------------------------------------------------------------
// ConvLayer

namespace {

Tensor to_batched(const Tensor& x) {
  if (x.rank() != 3) throw TensorError("expected a rank-3 feature map, got " + shape_str(x.shape));
  return reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
}

Tensor from_batched(const Tensor& x) { return reshape(x, {x.dim(1), x.dim(2), x.dim(3)}); }

}  // namespace

void ConvLayer::init(std::string layer_name, int in_ch, int out_ch, int ksize, int stride, int pad,
                     Rng& rng, bool with_bias) {
  name = std::move(layer_name);
  const float bound = 1.0f / std::sqrt(static_cast<float>(in_ch * ksize * ksize));
  params.weight = Tensor::random_uniform({out_ch, in_ch, ksize, ksize}, -bound, bound, rng);
  params.bias = with_bias ? Tensor::random_uniform({out_ch}, -bound, bound, rng) : Tensor();
  params.stride = stride;
  params.padding = pad;
  weight_grad = Tensor(params.weight.shape);
  if (with_bias) bias_grad = Tensor(params.bias.shape);
}

Tensor ConvLayer::infer(const Tensor& x) const { return from_batched(conv2d(to_batched(x), params)); }

Tensor ConvLayer::forward(const Tensor& x, Conv2dContext& ctx) const {
  return from_batched(conv2d(to_batched(x), params, ctx));
}

Tensor ConvLayer::backward(Conv2dContext& ctx, const Tensor& grad_out) {
  Conv2dGrads g = conv2d_backward(ctx, to_batched(grad_out));
  for (std::size_t i = 0; i < g.weight.data.size(); ++i) weight_grad.data[i] += g.weight.data[i];
  if (params.has_bias()) {
    for (std::size_t i = 0; i < g.bias.data.size(); ++i) bias_grad.data[i] += g.bias.data[i];
  }
  return from_batched(g.x);
}

void ConvLayer::zero_grads() {
  std::fill(weight_grad.data.begin(), weight_grad.data.end(), 0.0f);
  std::fill(bias_grad.data.begin(), bias_grad.data.end(), 0.0f);
}

namespace {
void collect_layer(ConvLayer& l, std::vector<ParamRef>& out) {
  out.push_back({l.name + ".weight", &l.params.weight, &l.weight_grad, &l.frozen});
  if (l.params.has_bias()) {
    out.push_back({l.name + ".bias", &l.params.bias, &l.bias_grad, &l.frozen});
  }
}
}  // namespace

// ---------------------------------------------------------------------------
// Backbone

void Backbone::init(const DetectorConfig& cfg, Rng& rng) {
  const int c = cfg.channels;
  conv1.init("backbone.conv1", 3, c / 2, 3, 2, 1, rng);
  conv2.init("backbone.conv2", c / 2, c, 3, 2, 1, rng);
  res1.init("backbone.res1", c, c, 3, 1, 1, rng);
  res2.init("backbone.res2", c, c, 3, 1, 1, rng);
}

Tensor Backbone::infer(const Tensor& pixels) const {
  const Tensor h1 = relu(conv1.infer(pixels));
  const Tensor h2 = relu(conv2.infer(h1));
  const Tensor r1v = relu(add(h2, res1.infer(h2)));
  return relu(add(r1v, res2.infer(r1v)));
}

Tensor Backbone::forward(const Tensor& pixels, BackboneTape& tape) const {
  tape.z1 = conv1.forward(pixels, tape.c1);
  const Tensor h1 = relu(tape.z1);
  tape.z2 = conv2.forward(h1, tape.c2);
  const Tensor h2 = relu(tape.z2);
  tape.s1 = add(h2, res1.forward(h2, tape.r1));
  const Tensor r1v = relu(tape.s1);
  tape.s2 = add(r1v, res2.forward(r1v, tape.r2));
  return relu(tape.s2);
}

void Backbone::backward(BackboneTape& tape, const Tensor& grad_out) {
  const Tensor gs2 = relu_backward(tape.s2, grad_out);
  const Tensor gr1v = add(gs2, res2.backward(tape.r2, gs2));
  const Tensor gs1 = relu_backward(tape.s1, gr1v);
  const Tensor gh2 = add(gs1, res1.backward(tape.r1, gs1));
  const Tensor gz2 = relu_backward(tape.z2, gh2);
  const Tensor gh1 = conv2.backward(tape.c2, gz2);
  const Tensor gz1 = relu_backward(tape.z1, gh1);
  conv1.backward(tape.c1, gz1);  // pixel grad unused
}

void Backbone::collect(std::vector<ParamRef>& out) {
  collect_layer(conv1, out);
  collect_layer(conv2, out);
  collect_layer(res1, out);
  collect_layer(res2, out);
}

void Backbone::zero_grads() {
  conv1.zero_grads();
  conv2.zero_grads();
  res1.zero_grads();
  res2.zero_grads();
}

// ---------------------------------------------------------------------------
// ThreeConvAttention

void ThreeConvAttention::init(const DetectorConfig& cfg, Rng& rng) {
  const int c = cfg.channels;
  a1.init("attention.a1", c, c, 3, 1, 1, rng);
  a2.init("attention.a2", c, c, 3, 1, 1, rng);
  a3.init("attention.a3", c, 1, 3, 1, 1, rng);
}

Tensor ThreeConvAttention::infer(const Tensor& feat) const {
  return sigmoid(a3.infer(relu(a2.infer(relu(a1.infer(feat))))));
}

Tensor ThreeConvAttention::forward(const Tensor& feat, ThreeConvTape& tape) const {
  tape.za = a1.forward(feat, tape.ca);
  const Tensor ha = relu(tape.za);
  tape.zb = a2.forward(ha, tape.cb);
  const Tensor hb = relu(tape.zb);
  tape.saliency = sigmoid(a3.forward(hb, tape.cc));
  return tape.saliency;
}

Tensor ThreeConvAttention::backward(ThreeConvTape& tape, const Tensor& grad_saliency) {
  const Tensor gzc = sigmoid_backward(tape.saliency, grad_saliency);
  const Tensor ghb = a3.backward(tape.cc, gzc);
  const Tensor gzb = relu_backward(tape.zb, ghb);
  const Tensor gha = a2.backward(tape.cb, gzb);
  const Tensor gza = relu_backward(tape.za, gha);
  return a1.backward(tape.ca, gza);
}

void ThreeConvAttention::collect(std::vector<ParamRef>& out) {
  collect_layer(a1, out);
  collect_layer(a2, out);
  collect_layer(a3, out);
}

void ThreeConvAttention::zero_grads() {
  a1.zero_grads();
  a2.zero_grads();
  a3.zero_grads();
}

// ---------------------------------------------------------------------------
// UNetAttention

void UNetAttention::init(const DetectorConfig& cfg, Rng& rng) {
  levels = cfg.unet_levels;
  const int c = cfg.channels;
  enc.resize(static_cast<std::size_t>(levels));
  dec.resize(static_cast<std::size_t>(levels));
  for (int k = 0; k < levels; ++k) {
    enc[static_cast<std::size_t>(k)].init("attention.enc" + std::to_string(k), c << k,
                                          c << (k + 1), 3, 1, 1, rng);
  }
  for (int j = 0; j < levels; ++j) {
    // Decoder stage consuming skip level j: upsampled c*2^(j+1) channels
    // concatenated with the skip's c*2^(j+1), reduced to c*2^j.
    dec[static_cast<std::size_t>(j)].init("attention.dec" + std::to_string(j), (c << (j + 1)) * 2,
                                          c << j, 3, 1, 1, rng);
  }
  final_conv.init("attention.final", c, 1, 3, 1, 1, rng);
}

Tensor UNetAttention::infer(const Tensor& feat, UNetTrace* trace) const {
  std::vector<Tensor> skips;
  skips.reserve(static_cast<std::size_t>(levels));
  Tensor cur = feat;
  for (int k = 0; k < levels; ++k) {
    Tensor act = relu(enc[static_cast<std::size_t>(k)].infer(cur));
    if (trace) trace->encoder_pre_pool.push_back(act.shape);
    cur = maxpool2x(act);
    if (trace) trace->encoder_post_pool.push_back(cur.shape);
    skips.push_back(std::move(act));
  }
  if (trace) trace->bottleneck = cur.shape;
  for (int j = levels - 1; j >= 0; --j) {
    const Tensor up = upsample2x_nearest(cur);
    const Tensor cat = concat_channels({&up, &skips[static_cast<std::size_t>(j)]});
    cur = relu(dec[static_cast<std::size_t>(j)].infer(cat));
  }
  return sigmoid(final_conv.infer(cur));
}

Tensor UNetAttention::forward(const Tensor& feat, UNetTape& tape) const {
  const std::size_t L = static_cast<std::size_t>(levels);
  tape.enc_ctx.resize(L);
  tape.enc_pre.resize(L);
  tape.enc_act.resize(L);
  tape.dec_ctx.resize(L);
  tape.dec_pre.resize(L);

  Tensor cur = feat;
  for (std::size_t k = 0; k < L; ++k) {
    tape.enc_pre[k] = enc[k].forward(cur, tape.enc_ctx[k]);
    tape.enc_act[k] = relu(tape.enc_pre[k]);
    cur = maxpool2x(tape.enc_act[k]);
  }
  for (int j = levels - 1; j >= 0; --j) {
    const std::size_t js = static_cast<std::size_t>(j);
    const Tensor up = upsample2x_nearest(cur);
    const Tensor cat = concat_channels({&up, &tape.enc_act[js]});
    tape.dec_pre[js] = dec[js].forward(cat, tape.dec_ctx[js]);
    cur = relu(tape.dec_pre[js]);
  }
  tape.saliency = sigmoid(final_conv.forward(cur, tape.final_ctx));
  return tape.saliency;
}

Tensor UNetAttention::backward(UNetTape& tape, const Tensor& grad_saliency) {
  const Tensor gfin = sigmoid_backward(tape.saliency, grad_saliency);
  Tensor g = final_conv.backward(tape.final_ctx, gfin);

  std::vector<Tensor> skip_grads(static_cast<std::size_t>(levels));
  for (int j = 0; j < levels; ++j) {
    const std::size_t js = static_cast<std::size_t>(j);
    const Tensor gpre = relu_backward(tape.dec_pre[js], g);
    const Tensor gcat = dec[js].backward(tape.dec_ctx[js], gpre);
    const int up_ch = tape.enc_act[js].dim(0);  // same channel count as the skip
    auto parts = concat_channels_backward(gcat, {up_ch, up_ch});
    skip_grads[js] = std::move(parts[1]);
    g = upsample2x_nearest_backward(parts[0]);
  }
  for (int k = levels - 1; k >= 0; --k) {
    const std::size_t ks = static_cast<std::size_t>(k);
    Tensor gact = maxpool2x_backward(tape.enc_act[ks], g);
    gact = add(gact, skip_grads[ks]);
    const Tensor gpre = relu_backward(tape.enc_pre[ks], gact);
    g = enc[ks].backward(tape.enc_ctx[ks], gpre);
  }
  return g;
}

void UNetAttention::collect(std::vector<ParamRef>& out) {
  for (auto& l : enc) collect_layer(l, out);
  for (auto& l : dec) collect_layer(l, out);
  collect_layer(final_conv, out);
}

void UNetAttention::zero_grads() {
  for (auto& l : enc) l.zero_grads();
  for (auto& l : dec) l.zero_grads();
  final_conv.zero_grads();
}

// ---------------------------------------------------------------------------
// Attention application

Tensor apply_attention(const Tensor& feat, const Tensor& saliency) {
  if (feat.rank() != 3 || saliency.rank() != 3 || saliency.dim(0) != 1 ||
      saliency.dim(1) != feat.dim(1) || saliency.dim(2) != feat.dim(2)) {
    throw TensorError("apply_attention: saliency must be 1 x h x w matching the feature map");
  }
  Tensor out(feat.shape);
  const std::int64_t plane = static_cast<std::int64_t>(feat.dim(1)) * feat.dim(2);
  for (int c = 0; c < feat.dim(0); ++c) {
    const float* f = feat.data.data() + static_cast<std::size_t>(c) * plane;
    float* o = out.data.data() + static_cast<std::size_t>(c) * plane;
    for (std::int64_t i = 0; i < plane; ++i) o[i] = f[i] * saliency.data[static_cast<std::size_t>(i)];
  }
  ensure_finite(out, "apply_attention");
  return out;
}

std::pair<Tensor, Tensor> apply_attention_backward(const Tensor& feat, const Tensor& saliency,
                                                   const Tensor& grad_out) {
  Tensor gfeat(feat.shape);
  Tensor gsal(saliency.shape);
  const std::int64_t plane = static_cast<std::int64_t>(feat.dim(1)) * feat.dim(2);
  for (int c = 0; c < feat.dim(0); ++c) {
    const float* f = feat.data.data() + static_cast<std::size_t>(c) * plane;
    const float* go = grad_out.data.data() + static_cast<std::size_t>(c) * plane;
    float* gf = gfeat.data.data() + static_cast<std::size_t>(c) * plane;
    for (std::int64_t i = 0; i < plane; ++i) {
      gf[i] = go[i] * saliency.data[static_cast<std::size_t>(i)];
      gsal.data[static_cast<std::size_t>(i)] += go[i] * f[i];
    }
  }
  return {std::move(gfeat), std::move(gsal)};
}

// ---------------------------------------------------------------------------
// Heads

void Heads::init(const DetectorConfig& cfg, Rng& rng) {
  const int c = cfg.channels;
  heat1.init("heads.heat1", c, c, 3, 1, 1, rng);
  heat2.init("heads.heat2", c, cfg.num_classes, 1, 1, 0, rng);
  // Focal prior: start the background probability near 0.1 instead of 0.5
  // so the first epochs are not dominated by the negative term.
  std::fill(heat2.params.bias.data.begin(), heat2.params.bias.data.end(), -2.19f);
  size1.init("heads.size1", c, c, 3, 1, 1, rng);
  size2.init("heads.size2", c, 2, 1, 1, 0, rng);
  off1.init("heads.off1", c, c, 3, 1, 1, rng);
  off2.init("heads.off2", c, 2, 1, 1, 0, rng);
}

HeadOutputs Heads::infer(const Tensor& fused, const Tensor& target) const {
  HeadOutputs out;
  out.heatmap = sigmoid(heat2.infer(relu(heat1.infer(fused))));
  out.size = size2.infer(relu(size1.infer(target)));
  out.offset = off2.infer(relu(off1.infer(target)));
  return out;
}

HeadOutputs Heads::forward(const Tensor& fused, const Tensor& target, HeadsTape& tape) const {
  HeadOutputs out;
  tape.heat_z = heat1.forward(fused, tape.heat1);
  out.heatmap = sigmoid(heat2.forward(relu(tape.heat_z), tape.heat2));
  tape.heatmap = out.heatmap;
  tape.size_z = size1.forward(target, tape.size1);
  out.size = size2.forward(relu(tape.size_z), tape.size2);
  tape.off_z = off1.forward(target, tape.off1);
  out.offset = off2.forward(relu(tape.off_z), tape.off2);
  return out;
}

std::pair<Tensor, Tensor> Heads::backward(HeadsTape& tape, const Tensor& grad_heatmap,
                                          const Tensor& grad_size, const Tensor& grad_offset) {
  const Tensor gh2 = sigmoid_backward(tape.heatmap, grad_heatmap);
  const Tensor gh1 = heat2.backward(tape.heat2, gh2);
  const Tensor gfused = heat1.backward(tape.heat1, relu_backward(tape.heat_z, gh1));

  const Tensor gs1 = size2.backward(tape.size2, grad_size);
  Tensor gtarget = size1.backward(tape.size1, relu_backward(tape.size_z, gs1));

  const Tensor go1 = off2.backward(tape.off2, grad_offset);
  gtarget = add(gtarget, off1.backward(tape.off1, relu_backward(tape.off_z, go1)));
  return {gfused, gtarget};
}

void Heads::collect(std::vector<ParamRef>& out) {
  collect_layer(heat1, out);
  collect_layer(heat2, out);
  collect_layer(size1, out);
  collect_layer(size2, out);
  collect_layer(off1, out);
  collect_layer(off2, out);
}

void Heads::zero_grads() {
  heat1.zero_grads();
  heat2.zero_grads();
  size1.zero_grads();
  size2.zero_grads();
  off1.zero_grads();
  off2.zero_grads();
}

// ---------------------------------------------------------------------------
// FusionLayer

void FusionLayer::zero_grads() {
  std::fill(weight_grad.data.begin(), weight_grad.data.end(), 0.0f);
  std::fill(bias_grad.data.begin(), bias_grad.data.end(), 0.0f);
}

void FusionLayer::collect(std::vector<ParamRef>& out) {
  if (strategy.tag == FusionTag::learned) {
    out.push_back({"fusion.weights", &strategy.params.weights, &weight_grad, &frozen});
    if (strategy.params.has_bias()) {
      out.push_back({"fusion.bias", &strategy.params.bias, &bias_grad, &frozen});
    }
  } else if (strategy.tag == FusionTag::concat_conv) {
    out.push_back({"fusion.concat.weight", &strategy.concat_params.weight, &weight_grad, &frozen});
    if (strategy.concat_params.has_bias()) {
      out.push_back({"fusion.concat.bias", &strategy.concat_params.bias, &bias_grad, &frozen});
    }
  }
}

// ---------------------------------------------------------------------------
// DetectorModel

DetectorModel DetectorModel::create(const DetectorConfig& cfg, int n, WindowMode mode,
                                    FusionTag tag, FusionInit init, FusionMode fusion_mode,
                                    std::uint64_t seed) {
  cfg.validate();
  DetectorModel m;
  m.cfg = cfg;
  m.n = n;
  m.window_mode = mode;
  Rng rng(seed);
  m.backbone.init(cfg, rng);
  if (cfg.attention == AttentionKind::three_conv) m.attention3.init(cfg, rng);
  if (cfg.attention == AttentionKind::unet) m.attention_unet.init(cfg, rng);
  m.heads.init(cfg, rng);
  const int target_pos = mode == WindowMode::past_only ? 2 * n : n;
  m.fusion.strategy = make_fusion(tag, n, cfg.channels, init, rng, fusion_mode, target_pos);
  if (m.fusion.trainable()) {
    m.fusion.weight_grad = Tensor(tag == FusionTag::learned
                                      ? m.fusion.strategy.params.weights.shape
                                      : m.fusion.strategy.concat_params.weight.shape);
    if (tag == FusionTag::learned && m.fusion.strategy.params.has_bias()) {
      m.fusion.bias_grad = Tensor(m.fusion.strategy.params.bias.shape);
    } else if (tag == FusionTag::concat_conv && m.fusion.strategy.concat_params.has_bias()) {
      m.fusion.bias_grad = Tensor(m.fusion.strategy.concat_params.bias.shape);
    }
  }
  return m;
}

WindowIndex DetectorModel::window_for(int t, int frame_count) const {
  return window_mode == WindowMode::past_only ? window_indices_past(t, n, frame_count)
                                              : window_indices(t, n, frame_count);
}

Tensor DetectorModel::frame_features(const Tensor& pixels) const {
  Tensor feat = backbone.infer(pixels);
  if (cfg.attention == AttentionKind::three_conv) {
    feat = apply_attention(feat, attention3.infer(feat));
  } else if (cfg.attention == AttentionKind::unet) {
    feat = apply_attention(feat, attention_unet.infer(feat));
  }
  return feat;
}

HeadOutputs DetectorModel::forward_window(const std::vector<FeatureMapPtr>& maps,
                                          int target_pos) const {
  const Tensor fused = fusion.strategy.fuse(maps);
  return heads.infer(fused, *maps[static_cast<std::size_t>(target_pos)]);
}

std::vector<Detection> DetectorModel::detect_frame(FeatureCache& cache,
                                                   const std::vector<Tensor>& frames,
                                                   int t) const {
  const WindowIndex win = window_for(t, static_cast<int>(frames.size()));
  auto maps = assemble_window(cache, win, [&](int idx) {
    return frame_features(frames[static_cast<std::size_t>(idx)]);
  });
  return decode(forward_window(maps, win.target_pos), cfg);
}

std::vector<ParamRef> DetectorModel::parameters() {
  std::vector<ParamRef> out;
  backbone.collect(out);
  if (cfg.attention == AttentionKind::three_conv) attention3.collect(out);
  if (cfg.attention == AttentionKind::unet) attention_unet.collect(out);
  heads.collect(out);
  fusion.collect(out);
  return out;
}

void DetectorModel::set_frozen(const std::vector<std::string>& name_prefixes, bool frozen) {
  auto matches = [&](const std::string& name) {
    for (const auto& p : name_prefixes) {
      if (name.rfind(p, 0) == 0) return true;
    }
    return false;
  };
  for (ConvLayer* l : {&backbone.conv1, &backbone.conv2, &backbone.res1, &backbone.res2,
                       &attention3.a1, &attention3.a2, &attention3.a3, &heads.heat1, &heads.heat2,
                       &heads.size1, &heads.size2, &heads.off1, &heads.off2,
                       &attention_unet.final_conv}) {
    if (matches(l->name)) l->frozen = frozen;
  }
  for (auto& l : attention_unet.enc) {
    if (matches(l.name)) l.frozen = frozen;
  }
  for (auto& l : attention_unet.dec) {
    if (matches(l.name)) l.frozen = frozen;
  }
  if (matches("fusion")) fusion.frozen = frozen;
}

void DetectorModel::zero_grads() {
  backbone.zero_grads();
  attention3.zero_grads();
  attention_unet.zero_grads();
  heads.zero_grads();
  fusion.zero_grads();
}

// ---------------------------------------------------------------------------
// Decoding

std::vector<Detection> decode(const HeadOutputs& outputs, const DetectorConfig& cfg) {
  const Tensor& heat = outputs.heatmap;
  const int k_classes = heat.dim(0), rows = heat.dim(1), cols = heat.dim(2);

  struct Peak {
    float score;
    int cls, row, col;
  };
  std::vector<Peak> peaks;
  for (int k = 0; k < k_classes; ++k) {
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const float s = heat.at(k, r, c);
        if (s <= cfg.score_threshold) continue;
        bool is_peak = true;
        for (int dr = -1; dr <= 1 && is_peak; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if (rr < 0 || rr >= rows || cc < 0 || cc >= cols) continue;
            if (heat.at(k, rr, cc) > s) {
              is_peak = false;
              break;
            }
          }
        }
        if (is_peak) peaks.push_back({s, k, r, c});
      }
    }
  }
  std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.cls != b.cls) return a.cls < b.cls;
    if (a.row != b.row) return a.row < b.row;
    return a.col < b.col;
  });
  if (static_cast<int>(peaks.size()) > cfg.top_k) {
    peaks.resize(static_cast<std::size_t>(cfg.top_k));
  }

  const float r_stride = static_cast<float>(cfg.stride);
  const float img_w = static_cast<float>(cfg.input_w);
  const float img_h = static_cast<float>(cfg.input_h);
  std::vector<Detection> dets;
  dets.reserve(peaks.size());
  for (const Peak& p : peaks) {
    const float cx = (static_cast<float>(p.col) + outputs.offset.at(0, p.row, p.col)) * r_stride;
    const float cy = (static_cast<float>(p.row) + outputs.offset.at(1, p.row, p.col)) * r_stride;
    const float w = outputs.size.at(0, p.row, p.col);
    const float h = outputs.size.at(1, p.row, p.col);
    if (w <= 0.0f || h <= 0.0f) continue;
    Detection d;
    d.class_id = p.cls;
    d.score = p.score;
    d.x_min = std::clamp(cx - w * 0.5f, 0.0f, img_w);
    d.y_min = std::clamp(cy - h * 0.5f, 0.0f, img_h);
    d.x_max = std::clamp(cx + w * 0.5f, 0.0f, img_w);
    d.y_max = std::clamp(cy + h * 0.5f, 0.0f, img_h);
    if (d.x_min >= d.x_max || d.y_min >= d.y_max) continue;
    dets.push_back(d);
  }
  return dets;
}

std::string detections_csv_header() {
  return "frame_id,class_id,score,x_min,y_min,x_max,y_max";
}

std::string detection_csv_row(const std::string& frame_id, const Detection& d) {
  std::ostringstream os;
  os.precision(9);  // max_digits10 for float: lossless text round-trip
  os << frame_id << "," << d.class_id << "," << d.score << "," << d.x_min << "," << d.y_min << ","
     << d.x_max << "," << d.y_max;
  return os.str();
}

}  // namespace fusedet

#include "fusedet/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace fusedet {

std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw TensorError("non-positive extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(std::vector<int> s, std::vector<float> values)
    : shape(std::move(s)), data(std::move(values)) {
  if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
    throw TensorError("data length " + std::to_string(data.size()) +
                      " does not match shape " + shape_str(shape));
  }
}

Tensor Tensor::random_uniform(std::vector<int> s, float lo, float hi, Rng& rng) {
  Tensor t(std::move(s));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

Tensor Tensor::random_normal(std::vector<int> s, float mean, float stddev, Rng& rng) {
  Tensor t(std::move(s));
  for (auto& v : t.data) v = rng.normal(mean, stddev);
  return t;
}

void ensure_finite(const Tensor& t, const char* op_name) {
  for (float v : t.data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op_name) + " produced a non-finite value");
    }
  }
}

Tensor reshape(const Tensor& x, std::vector<int> new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw TensorError("reshape " + shape_str(x.shape) + " -> " + shape_str(new_shape) +
                      " changes element count");
  }
  Tensor out;
  out.shape = std::move(new_shape);
  out.data = x.data;
  return out;
}

Tensor stack(const std::vector<const Tensor*>& xs) {
  if (xs.empty()) throw TensorError("stack of zero tensors");
  const Tensor& first = *xs[0];
  std::vector<int> out_shape;
  out_shape.reserve(first.shape.size() + 1);
  out_shape.push_back(static_cast<int>(xs.size()));
  out_shape.insert(out_shape.end(), first.shape.begin(), first.shape.end());
  Tensor out(out_shape);
  const std::size_t block = first.data.size();
  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (!xs[k]->same_shape(first)) {
      throw TensorError("stack shape mismatch: " + shape_str(xs[k]->shape) + " vs " +
                        shape_str(first.shape));
    }
    std::copy(xs[k]->data.begin(), xs[k]->data.end(), out.data.begin() + k * block);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution

void ConvParams::validate() const {
  if (weight.rank() != 4) {
    throw TensorError("conv weight must be rank 4, got " + shape_str(weight.shape));
  }
  if (weight.dim(2) % 2 == 0 || weight.dim(3) % 2 == 0) {
    throw TensorError("conv kernel extents must be odd, got " + shape_str(weight.shape));
  }
  if (stride < 1) throw TensorError("conv stride must be >= 1");
  if (padding < 0) throw TensorError("conv padding must be >= 0");
  if (has_bias() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0))) {
    throw TensorError("conv bias must have shape [out_ch]");
  }
}

namespace {

std::vector<int> conv_out_shape(const Tensor& x, const ConvParams& p) {
  const int h_out = (x.dim(2) + 2 * p.padding - p.weight.dim(2)) / p.stride + 1;
  const int w_out = (x.dim(3) + 2 * p.padding - p.weight.dim(3)) / p.stride + 1;
  if (h_out <= 0 || w_out <= 0) {
    throw TensorError("conv output would be empty for input " + shape_str(x.shape));
  }
  return {x.dim(0), p.weight.dim(0), h_out, w_out};
}

// Zero-padded copy of one image (C x H x W block of a rank-4 tensor).
void pad_image(const float* src, int c, int h, int w, int pad, float* dst) {
  const int hp = h + 2 * pad;
  const int wp = w + 2 * pad;
  std::fill(dst, dst + static_cast<std::size_t>(c) * hp * wp, 0.0f);
  for (int ci = 0; ci < c; ++ci) {
    for (int y = 0; y < h; ++y) {
      const float* s = src + (static_cast<std::size_t>(ci) * h + y) * w;
      float* d = dst + (static_cast<std::size_t>(ci) * hp + y + pad) * wp + pad;
      std::copy(s, s + w, d);
    }
  }
}

Tensor conv2d_impl(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
                   int padding, const std::vector<int>& out_shape) {
  const int n = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int c_out = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const int h_out = out_shape[2], w_out = out_shape[3];
  const int hp = h + 2 * padding, wp = w + 2 * padding;

  Tensor out(out_shape);
  std::vector<float> padded;
  const bool pad = padding > 0;
  if (pad) padded.resize(static_cast<std::size_t>(c_in) * hp * wp);

  for (int ni = 0; ni < n; ++ni) {
    const float* img = x.data.data() + static_cast<std::size_t>(ni) * c_in * h * w;
    if (pad) {
      pad_image(img, c_in, h, w, padding, padded.data());
      img = padded.data();
    }
    for (int co = 0; co < c_out; ++co) {
      const float b = bias.empty() ? 0.0f : bias.data[static_cast<std::size_t>(co)];
      float* orow = out.data.data() +
                    (static_cast<std::size_t>(ni) * c_out + co) * h_out * w_out;
      for (int oy = 0; oy < h_out; ++oy) {
        for (int ox = 0; ox < w_out; ++ox) {
          float acc = b;
          const int iy0 = oy * stride, ix0 = ox * stride;
          for (int ci = 0; ci < c_in; ++ci) {
            const float* iplane = img + static_cast<std::size_t>(ci) * hp * wp;
            const float* wplane = weight.data.data() +
                                  (static_cast<std::size_t>(co) * c_in + ci) * kh * kw;
            for (int ky = 0; ky < kh; ++ky) {
              const float* irow = iplane + static_cast<std::size_t>(iy0 + ky) * wp + ix0;
              const float* wrow = wplane + static_cast<std::size_t>(ky) * kw;
              for (int kx = 0; kx < kw; ++kx) acc += irow[kx] * wrow[kx];
            }
          }
          orow[static_cast<std::size_t>(oy) * w_out + ox] = acc;
        }
      }
    }
  }
  ensure_finite(out, "conv2d");
  return out;
}

}  // namespace

Tensor conv2d(const Tensor& x, const ConvParams& p) {
  p.validate();
  if (x.rank() != 4) throw TensorError("conv2d input must be rank 4, got " + shape_str(x.shape));
  if (x.dim(1) != p.weight.dim(1)) {
    throw TensorError("conv2d channel mismatch: input " + shape_str(x.shape) + ", weight " +
                      shape_str(p.weight.shape));
  }
  return conv2d_impl(x, p.weight, p.bias, p.stride, p.padding, conv_out_shape(x, p));
}

Tensor conv2d(const Tensor& x, const ConvParams& p, Conv2dContext& ctx) {
  Tensor out = conv2d(x, p);
  ctx.x = x;
  ctx.weight = p.weight;
  ctx.had_bias = p.has_bias();
  ctx.stride = p.stride;
  ctx.padding = p.padding;
  ctx.out_shape = out.shape;
  ctx.valid = true;
  return out;
}

Conv2dGrads conv2d_backward(Conv2dContext& ctx, const Tensor& grad_out) {
  if (!ctx.valid) throw TensorError("conv2d_backward: context already consumed or never filled");
  ctx.valid = false;
  if (grad_out.shape != ctx.out_shape) {
    throw TensorError("conv2d_backward grad shape " + shape_str(grad_out.shape) +
                      " does not match output " + shape_str(ctx.out_shape));
  }

  const Tensor& x = ctx.x;
  const Tensor& weight = ctx.weight;
  const int n = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int c_out = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const int h_out = ctx.out_shape[2], w_out = ctx.out_shape[3];
  const int stride = ctx.stride, padding = ctx.padding;
  const int hp = h + 2 * padding, wp = w + 2 * padding;

  Conv2dGrads g;
  g.x = Tensor(x.shape);
  g.weight = Tensor(weight.shape);
  if (ctx.had_bias) g.bias = Tensor({c_out});

  std::vector<float> padded;       // padded input, reused per image
  std::vector<float> padded_grad;  // grad accumulator in padded coordinates
  const bool pad = padding > 0;
  if (pad) {
    padded.resize(static_cast<std::size_t>(c_in) * hp * wp);
    padded_grad.resize(padded.size());
  }

  for (int ni = 0; ni < n; ++ni) {
    const float* img = x.data.data() + static_cast<std::size_t>(ni) * c_in * h * w;
    float* gimg = g.x.data.data() + static_cast<std::size_t>(ni) * c_in * h * w;
    if (pad) {
      pad_image(img, c_in, h, w, padding, padded.data());
      img = padded.data();
      std::fill(padded_grad.begin(), padded_grad.end(), 0.0f);
      gimg = padded_grad.data();
    }
    for (int co = 0; co < c_out; ++co) {
      const float* gorow = grad_out.data.data() +
                           (static_cast<std::size_t>(ni) * c_out + co) * h_out * w_out;
      double bias_acc = 0.0;
      for (int oy = 0; oy < h_out; ++oy) {
        for (int ox = 0; ox < w_out; ++ox) {
          const float go = gorow[static_cast<std::size_t>(oy) * w_out + ox];
          bias_acc += go;
          if (go == 0.0f) continue;
          const int iy0 = oy * stride, ix0 = ox * stride;
          for (int ci = 0; ci < c_in; ++ci) {
            const float* iplane = img + static_cast<std::size_t>(ci) * hp * wp;
            float* giplane = gimg + static_cast<std::size_t>(ci) * hp * wp;
            const std::size_t wbase = (static_cast<std::size_t>(co) * c_in + ci) * kh * kw;
            for (int ky = 0; ky < kh; ++ky) {
              const float* irow = iplane + static_cast<std::size_t>(iy0 + ky) * wp + ix0;
              float* girow = giplane + static_cast<std::size_t>(iy0 + ky) * wp + ix0;
              const float* wrow = weight.data.data() + wbase + static_cast<std::size_t>(ky) * kw;
              float* gwrow = g.weight.data.data() + wbase + static_cast<std::size_t>(ky) * kw;
              for (int kx = 0; kx < kw; ++kx) {
                girow[kx] += wrow[kx] * go;
                gwrow[kx] += irow[kx] * go;
              }
            }
          }
        }
      }
      if (ctx.had_bias) {
        g.bias.data[static_cast<std::size_t>(co)] += static_cast<float>(bias_acc);
      }
    }
    if (pad) {
      // Fold the padded-coordinate gradient back onto the unpadded image.
      float* dst = g.x.data.data() + static_cast<std::size_t>(ni) * c_in * h * w;
      for (int ci = 0; ci < c_in; ++ci) {
        for (int y = 0; y < h; ++y) {
          const float* s =
              padded_grad.data() + (static_cast<std::size_t>(ci) * hp + y + padding) * wp + padding;
          float* d = dst + (static_cast<std::size_t>(ci) * h + y) * w;
          for (int xw = 0; xw < w; ++xw) d[xw] += s[xw];
        }
      }
    }
  }
  ensure_finite(g.x, "conv2d_backward");
  ensure_finite(g.weight, "conv2d_backward");
  if (ctx.had_bias) ensure_finite(g.bias, "conv2d_backward");
  return g;
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw TensorError(std::string(op) + " shape mismatch: " + shape_str(a.shape) + " vs " +
                      shape_str(b.shape));
  }
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape);
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
  ensure_finite(out, "add");
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape);
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  ensure_finite(out, "mul");
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] > 0.0f ? x.data[i] : 0.0f;
  ensure_finite(out, "relu");
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    out.data[i] = 1.0f / (1.0f + std::exp(-x.data[i]));
  }
  ensure_finite(out, "sigmoid");
  return out;
}

Tensor scale(const Tensor& x, float s) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] * s;
  ensure_finite(out, "scale");
  return out;
}

std::pair<Tensor, Tensor> mul_backward(const Tensor& a, const Tensor& b, const Tensor& grad_out) {
  require_same_shape(a, grad_out, "mul_backward");
  require_same_shape(a, b, "mul_backward");
  Tensor ga(a.shape), gb(b.shape);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    ga.data[i] = b.data[i] * grad_out.data[i];
    gb.data[i] = a.data[i] * grad_out.data[i];
  }
  return {std::move(ga), std::move(gb)};
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  require_same_shape(x, grad_out, "relu_backward");
  Tensor gx(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    gx.data[i] = x.data[i] > 0.0f ? grad_out.data[i] : 0.0f;
  }
  return gx;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& grad_out) {
  require_same_shape(y, grad_out, "sigmoid_backward");
  Tensor gx(y.shape);
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    gx.data[i] = y.data[i] * (1.0f - y.data[i]) * grad_out.data[i];
  }
  return gx;
}

Tensor scale_backward(const Tensor& grad_out, float s) {
  Tensor gx(grad_out.shape);
  for (std::size_t i = 0; i < grad_out.data.size(); ++i) gx.data[i] = grad_out.data[i] * s;
  return gx;
}

// ---------------------------------------------------------------------------
// Reductions

namespace {

struct AxisView {
  std::int64_t outer;   // product of dims before axis
  std::int64_t extent;  // size of the reduced axis
  std::int64_t inner;   // product of dims after axis
  std::vector<int> out_shape;
};

AxisView axis_view(const Tensor& x, int axis, const char* op) {
  if (axis < 0 || axis >= x.rank()) {
    throw TensorError(std::string(op) + ": axis " + std::to_string(axis) +
                      " out of range for shape " + shape_str(x.shape));
  }
  AxisView v{1, x.dim(axis), 1, {}};
  for (int i = 0; i < axis; ++i) v.outer *= x.dim(i);
  for (int i = axis + 1; i < x.rank(); ++i) v.inner *= x.dim(i);
  for (int i = 0; i < x.rank(); ++i) {
    if (i != axis) v.out_shape.push_back(x.dim(i));
  }
  return v;
}

}  // namespace

Tensor max_over_axis(const Tensor& x, int axis) {
  const AxisView v = axis_view(x, axis, "max_over_axis");
  Tensor out(v.out_shape);
  for (std::int64_t o = 0; o < v.outer; ++o) {
    for (std::int64_t i = 0; i < v.inner; ++i) {
      float best = x.data[static_cast<std::size_t>(o * v.extent * v.inner + i)];
      for (std::int64_t k = 1; k < v.extent; ++k) {
        best = std::max(best, x.data[static_cast<std::size_t>((o * v.extent + k) * v.inner + i)]);
      }
      out.data[static_cast<std::size_t>(o * v.inner + i)] = best;
    }
  }
  return out;
}

Tensor mean_over_axis(const Tensor& x, int axis) {
  const AxisView v = axis_view(x, axis, "mean_over_axis");
  Tensor out(v.out_shape);
  const float inv = 1.0f / static_cast<float>(v.extent);
  for (std::int64_t o = 0; o < v.outer; ++o) {
    for (std::int64_t i = 0; i < v.inner; ++i) {
      float acc = 0.0f;
      for (std::int64_t k = 0; k < v.extent; ++k) {
        acc += x.data[static_cast<std::size_t>((o * v.extent + k) * v.inner + i)];
      }
      out.data[static_cast<std::size_t>(o * v.inner + i)] = acc * inv;
    }
  }
  ensure_finite(out, "mean_over_axis");
  return out;
}

Tensor median_over_axis(const Tensor& x, int axis) {
  const AxisView v = axis_view(x, axis, "median_over_axis");
  Tensor out(v.out_shape);
  std::vector<float> lane(static_cast<std::size_t>(v.extent));
  // Lower-middle order statistic; for the odd window lengths 2n+1 this is
  // the exact median.
  const std::size_t pick = static_cast<std::size_t>((v.extent - 1) / 2);
  for (std::int64_t o = 0; o < v.outer; ++o) {
    for (std::int64_t i = 0; i < v.inner; ++i) {
      for (std::int64_t k = 0; k < v.extent; ++k) {
        lane[static_cast<std::size_t>(k)] =
            x.data[static_cast<std::size_t>((o * v.extent + k) * v.inner + i)];
      }
      std::nth_element(lane.begin(), lane.begin() + pick, lane.end());
      out.data[static_cast<std::size_t>(o * v.inner + i)] = lane[pick];
    }
  }
  return out;
}

float sum(const Tensor& x) {
  double acc = 0.0;
  for (float f : x.data) acc += f;
  const float r = static_cast<float>(acc);
  if (!std::isfinite(r)) throw NumericError("sum produced a non-finite value");
  return r;
}

namespace {

template <typename Selector>
Tensor route_to_selected(const Tensor& x, int axis, const Tensor& grad_out, const char* op,
                         Selector select) {
  const AxisView v = axis_view(x, axis, op);
  if (grad_out.shape != v.out_shape) {
    throw TensorError(std::string(op) + " grad shape mismatch");
  }
  Tensor gx(x.shape);
  for (std::int64_t o = 0; o < v.outer; ++o) {
    for (std::int64_t i = 0; i < v.inner; ++i) {
      const float chosen = select(o, i, v);
      // First index along the axis attaining the value takes the gradient.
      for (std::int64_t k = 0; k < v.extent; ++k) {
        const std::size_t idx = static_cast<std::size_t>((o * v.extent + k) * v.inner + i);
        if (x.data[idx] == chosen) {
          gx.data[idx] = grad_out.data[static_cast<std::size_t>(o * v.inner + i)];
          break;
        }
      }
    }
  }
  return gx;
}

}  // namespace

Tensor max_over_axis_backward(const Tensor& x, int axis, const Tensor& grad_out) {
  return route_to_selected(x, axis, grad_out, "max_over_axis_backward",
                           [&x](std::int64_t o, std::int64_t i, const AxisView& v) {
                             float best = x.data[static_cast<std::size_t>(o * v.extent * v.inner + i)];
                             for (std::int64_t k = 1; k < v.extent; ++k) {
                               best = std::max(best, x.data[static_cast<std::size_t>(
                                                         (o * v.extent + k) * v.inner + i)]);
                             }
                             return best;
                           });
}

Tensor mean_over_axis_backward(const Tensor& x, int axis, const Tensor& grad_out) {
  const AxisView v = axis_view(x, axis, "mean_over_axis_backward");
  if (grad_out.shape != v.out_shape) throw TensorError("mean_over_axis_backward grad shape mismatch");
  Tensor gx(x.shape);
  const float inv = 1.0f / static_cast<float>(v.extent);
  for (std::int64_t o = 0; o < v.outer; ++o) {
    for (std::int64_t i = 0; i < v.inner; ++i) {
      const float g = grad_out.data[static_cast<std::size_t>(o * v.inner + i)] * inv;
      for (std::int64_t k = 0; k < v.extent; ++k) {
        gx.data[static_cast<std::size_t>((o * v.extent + k) * v.inner + i)] = g;
      }
    }
  }
  return gx;
}

Tensor median_over_axis_backward(const Tensor& x, int axis, const Tensor& grad_out) {
  std::vector<float> lane;
  return route_to_selected(x, axis, grad_out, "median_over_axis_backward",
                           [&x, lane](std::int64_t o, std::int64_t i, const AxisView& v) mutable {
                             lane.resize(static_cast<std::size_t>(v.extent));
                             for (std::int64_t k = 0; k < v.extent; ++k) {
                               lane[static_cast<std::size_t>(k)] = x.data[static_cast<std::size_t>(
                                   (o * v.extent + k) * v.inner + i)];
                             }
                             const std::size_t pick = static_cast<std::size_t>((v.extent - 1) / 2);
                             std::nth_element(lane.begin(), lane.begin() + pick, lane.end());
                             return lane[pick];
                           });
}

Tensor sum_backward(const std::vector<int>& x_shape, float grad_out) {
  return Tensor(x_shape, grad_out);
}

// ---------------------------------------------------------------------------
// Spatial ops

namespace {

struct SpatialView {
  std::int64_t planes;  // product of leading dims
  int h;
  int w;
};

SpatialView spatial_view(const Tensor& x, const char* op) {
  if (x.rank() < 2 || x.rank() > 4) {
    throw TensorError(std::string(op) + " expects rank 2..4, got " + shape_str(x.shape));
  }
  SpatialView v{1, x.dim(x.rank() - 2), x.dim(x.rank() - 1)};
  for (int i = 0; i < x.rank() - 2; ++i) v.planes *= x.dim(i);
  return v;
}

std::vector<int> with_spatial(const std::vector<int>& shape, int h, int w) {
  std::vector<int> s = shape;
  s[s.size() - 2] = h;
  s[s.size() - 1] = w;
  return s;
}

}  // namespace

Tensor upsample2x_nearest(const Tensor& x) {
  const SpatialView v = spatial_view(x, "upsample2x_nearest");
  Tensor out(with_spatial(x.shape, v.h * 2, v.w * 2));
  for (std::int64_t p = 0; p < v.planes; ++p) {
    const float* src = x.data.data() + static_cast<std::size_t>(p) * v.h * v.w;
    float* dst = out.data.data() + static_cast<std::size_t>(p) * v.h * v.w * 4;
    for (int y = 0; y < v.h; ++y) {
      for (int xw = 0; xw < v.w; ++xw) {
        const float val = src[static_cast<std::size_t>(y) * v.w + xw];
        float* d = dst + (static_cast<std::size_t>(y) * 2 * v.w * 2) + xw * 2;
        d[0] = val;
        d[1] = val;
        d[static_cast<std::size_t>(v.w) * 2] = val;
        d[static_cast<std::size_t>(v.w) * 2 + 1] = val;
      }
    }
  }
  return out;
}

Tensor maxpool2x(const Tensor& x) {
  const SpatialView v = spatial_view(x, "maxpool2x");
  if (v.h % 2 != 0 || v.w % 2 != 0) {
    throw TensorError("maxpool2x requires even spatial extents, got " + shape_str(x.shape));
  }
  const int ho = v.h / 2, wo = v.w / 2;
  Tensor out(with_spatial(x.shape, ho, wo));
  for (std::int64_t p = 0; p < v.planes; ++p) {
    const float* src = x.data.data() + static_cast<std::size_t>(p) * v.h * v.w;
    float* dst = out.data.data() + static_cast<std::size_t>(p) * ho * wo;
    for (int y = 0; y < ho; ++y) {
      const float* r0 = src + static_cast<std::size_t>(y) * 2 * v.w;
      const float* r1 = r0 + v.w;
      for (int xw = 0; xw < wo; ++xw) {
        const float m = std::max(std::max(r0[xw * 2], r0[xw * 2 + 1]),
                                 std::max(r1[xw * 2], r1[xw * 2 + 1]));
        dst[static_cast<std::size_t>(y) * wo + xw] = m;
      }
    }
  }
  return out;
}

Tensor concat_channels(const std::vector<const Tensor*>& xs) {
  if (xs.empty()) throw TensorError("concat_channels of zero tensors");
  const Tensor& first = *xs[0];
  if (first.rank() != 3 && first.rank() != 4) {
    throw TensorError("concat_channels expects rank 3 or 4 tensors");
  }
  const int ch_axis = first.rank() == 3 ? 0 : 1;
  int total_ch = 0;
  for (const Tensor* t : xs) {
    if (t->rank() != first.rank()) throw TensorError("concat_channels rank mismatch");
    for (int i = 0; i < first.rank(); ++i) {
      if (i != ch_axis && t->dim(i) != first.dim(i)) {
        throw TensorError("concat_channels extent mismatch: " + shape_str(t->shape) + " vs " +
                          shape_str(first.shape));
      }
    }
    total_ch += t->dim(ch_axis);
  }
  std::vector<int> out_shape = first.shape;
  out_shape[static_cast<std::size_t>(ch_axis)] = total_ch;
  Tensor out(out_shape);

  const std::int64_t batch = ch_axis == 1 ? first.dim(0) : 1;
  const std::int64_t plane = static_cast<std::int64_t>(first.dim(first.rank() - 2)) *
                             first.dim(first.rank() - 1);
  for (std::int64_t b = 0; b < batch; ++b) {
    std::int64_t ch_off = 0;
    for (const Tensor* t : xs) {
      const std::int64_t ch = t->dim(ch_axis);
      const float* src = t->data.data() + static_cast<std::size_t>(b * ch * plane);
      float* dst = out.data.data() + static_cast<std::size_t>((b * total_ch + ch_off) * plane);
      std::copy(src, src + static_cast<std::size_t>(ch * plane), dst);
      ch_off += ch;
    }
  }
  return out;
}

Tensor upsample2x_nearest_backward(const Tensor& grad_out) {
  const SpatialView v = spatial_view(grad_out, "upsample2x_nearest_backward");
  if (v.h % 2 != 0 || v.w % 2 != 0) {
    throw TensorError("upsample2x_nearest_backward grad must have even extents");
  }
  const int hi = v.h / 2, wi = v.w / 2;
  Tensor gx(with_spatial(grad_out.shape, hi, wi));
  for (std::int64_t p = 0; p < v.planes; ++p) {
    const float* g = grad_out.data.data() + static_cast<std::size_t>(p) * v.h * v.w;
    float* d = gx.data.data() + static_cast<std::size_t>(p) * hi * wi;
    for (int y = 0; y < hi; ++y) {
      const float* r0 = g + static_cast<std::size_t>(y) * 2 * v.w;
      const float* r1 = r0 + v.w;
      for (int xw = 0; xw < wi; ++xw) {
        d[static_cast<std::size_t>(y) * wi + xw] =
            r0[xw * 2] + r0[xw * 2 + 1] + r1[xw * 2] + r1[xw * 2 + 1];
      }
    }
  }
  return gx;
}

Tensor maxpool2x_backward(const Tensor& x, const Tensor& grad_out) {
  const SpatialView v = spatial_view(x, "maxpool2x_backward");
  const int ho = v.h / 2, wo = v.w / 2;
  if (grad_out.shape != with_spatial(x.shape, ho, wo)) {
    throw TensorError("maxpool2x_backward grad shape mismatch");
  }
  Tensor gx(x.shape);
  for (std::int64_t p = 0; p < v.planes; ++p) {
    const float* src = x.data.data() + static_cast<std::size_t>(p) * v.h * v.w;
    const float* g = grad_out.data.data() + static_cast<std::size_t>(p) * ho * wo;
    float* d = gx.data.data() + static_cast<std::size_t>(p) * v.h * v.w;
    for (int y = 0; y < ho; ++y) {
      for (int xw = 0; xw < wo; ++xw) {
        // Row-major first-max wins, matching the forward's selection.
        const std::size_t i00 = (static_cast<std::size_t>(y) * 2) * v.w + xw * 2;
        const std::size_t idx[4] = {i00, i00 + 1, i00 + v.w, i00 + v.w + 1};
        std::size_t best = idx[0];
        for (int k = 1; k < 4; ++k) {
          if (src[idx[k]] > src[best]) best = idx[k];
        }
        d[best] += g[static_cast<std::size_t>(y) * wo + xw];
      }
    }
  }
  return gx;
}

std::vector<Tensor> concat_channels_backward(const Tensor& grad_out,
                                             const std::vector<int>& channel_counts) {
  if (grad_out.rank() != 3 && grad_out.rank() != 4) {
    throw TensorError("concat_channels_backward expects rank 3 or 4");
  }
  const int ch_axis = grad_out.rank() == 3 ? 0 : 1;
  int total = 0;
  for (int c : channel_counts) total += c;
  if (total != grad_out.dim(ch_axis)) {
    throw TensorError("concat_channels_backward channel counts do not sum to grad channels");
  }
  const std::int64_t batch = ch_axis == 1 ? grad_out.dim(0) : 1;
  const std::int64_t plane = static_cast<std::int64_t>(grad_out.dim(grad_out.rank() - 2)) *
                             grad_out.dim(grad_out.rank() - 1);

  std::vector<Tensor> grads;
  grads.reserve(channel_counts.size());
  for (int c : channel_counts) {
    std::vector<int> s = grad_out.shape;
    s[static_cast<std::size_t>(ch_axis)] = c;
    grads.emplace_back(s);
  }
  for (std::int64_t b = 0; b < batch; ++b) {
    std::int64_t ch_off = 0;
    for (std::size_t k = 0; k < channel_counts.size(); ++k) {
      const std::int64_t ch = channel_counts[k];
      const float* src =
          grad_out.data.data() + static_cast<std::size_t>((b * total + ch_off) * plane);
      float* dst = grads[k].data.data() + static_cast<std::size_t>(b * ch * plane);
      std::copy(src, src + static_cast<std::size_t>(ch * plane), dst);
      ch_off += ch;
    }
  }
  return grads;
}

}  // namespace fusedet

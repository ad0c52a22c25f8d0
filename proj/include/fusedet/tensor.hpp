#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fusedet/rng.hpp"

namespace fusedet {

/// Shape/usage violations (mismatched extents, bad arguments).
struct TensorError : std::runtime_error {
  explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

/// NaN/Inf produced by an operation.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

std::int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

/// Dense row-major float32 tensor of rank 0..4. Activations follow the
/// batch x channels x height x width convention. Values are treated as
/// immutable once an op has produced them; the grad slot is only used on
/// parameter tensors.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty unless allocated; same length as data

  Tensor() = default;
  explicit Tensor(std::vector<int> s)
      : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), 0.0f) {}
  Tensor(std::vector<int> s, float fill)
      : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), fill) {}
  Tensor(std::vector<int> s, std::vector<float> values);

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, float v) { return Tensor(std::move(s), v); }
  static Tensor random_uniform(std::vector<int> s, float lo, float hi, Rng& rng);
  static Tensor random_normal(std::vector<int> s, float mean, float stddev, Rng& rng);

  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  bool empty() const { return data.empty(); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void alloc_grad() { grad.assign(data.size(), 0.0f); }
  void zero_grad() {
    if (!grad.empty()) grad.assign(data.size(), 0.0f);
  }

  float& at(int i0) { return data[static_cast<std::size_t>(i0)]; }
  float at(int i0) const { return data[static_cast<std::size_t>(i0)]; }
  float& at(int i0, int i1) { return data[static_cast<std::size_t>(i0 * shape[1] + i1)]; }
  float at(int i0, int i1) const { return data[static_cast<std::size_t>(i0 * shape[1] + i1)]; }
  float& at(int i0, int i1, int i2) {
    return data[static_cast<std::size_t>((i0 * shape[1] + i1) * shape[2] + i2)];
  }
  float at(int i0, int i1, int i2) const {
    return data[static_cast<std::size_t>((i0 * shape[1] + i1) * shape[2] + i2)];
  }
  float& at(int i0, int i1, int i2, int i3) {
    return data[static_cast<std::size_t>(((i0 * shape[1] + i1) * shape[2] + i2) * shape[3] + i3)];
  }
  float at(int i0, int i1, int i2, int i3) const {
    return data[static_cast<std::size_t>(((i0 * shape[1] + i1) * shape[2] + i2) * shape[3] + i3)];
  }
};

/// Throws NumericError if any element of t is NaN or Inf.
void ensure_finite(const Tensor& t, const char* op_name);

/// Same data, new shape (element counts must agree).
Tensor reshape(const Tensor& x, std::vector<int> new_shape);

/// Stack same-shape tensors along a new leading axis.
Tensor stack(const std::vector<const Tensor*>& xs);

// ---------------------------------------------------------------------------
// Convolution

struct ConvParams {
  Tensor weight;  // out_ch x in_ch x kh x kw, kh and kw odd
  Tensor bias;    // out_ch; empty means no bias
  int stride = 1;
  int padding = 0;

  bool has_bias() const { return !bias.empty(); }
  void validate() const;
};

/// Forward state saved for conv2d_backward. Single use: backward consumes
/// the context and a second call errors out.
struct Conv2dContext {
  Tensor x;
  Tensor weight;
  bool had_bias = false;
  int stride = 1;
  int padding = 0;
  std::vector<int> out_shape;
  bool valid = false;
};

/// Cross-correlation of a rank-4 input with p.weight.
/// Output spatial extent = floor((H + 2*pad - kh) / stride) + 1.
Tensor conv2d(const Tensor& x, const ConvParams& p);
Tensor conv2d(const Tensor& x, const ConvParams& p, Conv2dContext& ctx);

struct Conv2dGrads {
  Tensor x;
  Tensor weight;
  Tensor bias;  // empty when forward had no bias
};

/// Gradients of a scalar loss given grad_out = dL/d(conv output).
Conv2dGrads conv2d_backward(Conv2dContext& ctx, const Tensor& grad_out);

// ---------------------------------------------------------------------------
// Elementwise suite (shape-preserving)

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor scale(const Tensor& x, float s);

std::pair<Tensor, Tensor> mul_backward(const Tensor& a, const Tensor& b, const Tensor& grad_out);
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);
/// y is the forward *output* of sigmoid.
Tensor sigmoid_backward(const Tensor& y, const Tensor& grad_out);
Tensor scale_backward(const Tensor& grad_out, float s);

// ---------------------------------------------------------------------------
// Reductions

/// Remove `axis` by taking the max / mean / median along it. Median of an
/// even-length axis is the lower-middle order statistic.
Tensor max_over_axis(const Tensor& x, int axis);
Tensor mean_over_axis(const Tensor& x, int axis);
Tensor median_over_axis(const Tensor& x, int axis);
float sum(const Tensor& x);

/// Backward for the reductions. Max/median route the gradient to the first
/// index along the axis attaining the selected value.
Tensor max_over_axis_backward(const Tensor& x, int axis, const Tensor& grad_out);
Tensor mean_over_axis_backward(const Tensor& x, int axis, const Tensor& grad_out);
Tensor median_over_axis_backward(const Tensor& x, int axis, const Tensor& grad_out);
Tensor sum_backward(const std::vector<int>& x_shape, float grad_out);

// ---------------------------------------------------------------------------
// Spatial ops (operate on the last two dims; rank 2..4)

Tensor upsample2x_nearest(const Tensor& x);
Tensor maxpool2x(const Tensor& x);  // spatial extents must be even
/// Concatenate along the channel axis (dim 0 for rank 3, dim 1 for rank 4).
Tensor concat_channels(const std::vector<const Tensor*>& xs);

Tensor upsample2x_nearest_backward(const Tensor& grad_out);
Tensor maxpool2x_backward(const Tensor& x, const Tensor& grad_out);
std::vector<Tensor> concat_channels_backward(const Tensor& grad_out,
                                             const std::vector<int>& channel_counts);

}  // namespace fusedet

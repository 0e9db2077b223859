#pragma once

#include <vector>

#include "core/tensor.hpp"

namespace prnet {

// Grouped convolution weights, stored (out_channels, in_per_group, kh, kw).
// Output channels are group-major: channel o belongs to group
// o / (out_channels / groups). Bias is optional (undefined tensor = none);
// convolutions followed by batchnorm are built bias-free.
template <class S>
struct ConvWeightsT {
  TensorT<S> values;  // (out, in_per_group, kh, kw)
  TensorT<S> bias;    // (1, out, 1, 1) or undefined
  int groups = 1;

  int out_channels() const { return static_cast<int>(values.shape().n); }
  int in_per_group() const { return static_cast<int>(values.shape().c); }
  int kh() const { return static_cast<int>(values.shape().h); }
  int kw() const { return static_cast<int>(values.shape().w); }
  bool has_bias() const { return bias.defined(); }

  void validate() const;
};

template <class S>
struct BatchNormStateT {
  TensorT<S> gamma;  // (1, C, 1, 1)
  TensorT<S> beta;   // (1, C, 1, 1)
  std::vector<S> running_mean;
  std::vector<S> running_var;
  S eps = S(1e-5);
  S momentum = S(0.1);
  bool training = true;

  int channels() const { return static_cast<int>(gamma.shape().c); }

  static BatchNormStateT make(int channels) {
    BatchNormStateT s;
    s.gamma = TensorT<S>::filled({1, channels, 1, 1}, S(1), true);
    s.beta = TensorT<S>::zeros({1, channels, 1, 1}, true);
    s.running_mean.assign(channels, S(0));
    s.running_var.assign(channels, S(1));
    return s;
  }
};

enum class Act { identity, gelu, silu };

Act act_from_string(const std::string& s);
const char* act_to_string(Act a);

// --- operator set -----------------------------------------------------------

template <class S>
TensorT<S> conv2d(const TensorT<S>& x, const ConvWeightsT<S>& w, int stride,
                  int padding);

// Space-to-depth, channel-major: out(n, c*r^2 + i*r + j, h, w) =
// x(n, c, h*r + i, w*r + j).
template <class S>
TensorT<S> pixel_unshuffle(const TensorT<S>& x, int r);

// Exact inverse of pixel_unshuffle.
template <class S>
TensorT<S> pixel_shuffle(const TensorT<S>& x, int r);

// Nearest-neighbour 2x upsampling.
template <class S>
TensorT<S> upsample_nearest2(const TensorT<S>& x);

// 2x2 average pooling, stride 2; requires even H, W.
template <class S>
TensorT<S> avgpool2(const TensorT<S>& x);

// Strided spatial slice x[:, :, i::2, j::2]; requires even H, W.
template <class S>
TensorT<S> slice_stride2(const TensorT<S>& x, int i, int j);

template <class S>
TensorT<S> concat_channels(const std::vector<TensorT<S>>& xs);

template <class S>
TensorT<S> batchnorm(const TensorT<S>& x, BatchNormStateT<S>& state);

template <class S>
TensorT<S> activation(const TensorT<S>& x, Act kind);

// Sum of all elements as a 1x1x1x1 tensor.
template <class S>
TensorT<S> sum_all(const TensorT<S>& x);

template <class S>
Shape4 conv2d_output_shape(const Shape4& x, const ConvWeightsT<S>& w,
                           int stride, int padding);

}  // namespace prnet

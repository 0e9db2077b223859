#pragma once

#include "core/params.hpp"

namespace prnet {

// Kaiming-normal fan-in initialization, std = sqrt(2 / fan_in).
template <class S>
TensorT<S> kaiming_normal(Shape4 shape, int fan_in, Rng& rng);

// Conv(3x3 unless stated) -> BN -> activation. Stride 1 with padding
// (k-1)/2 keeps H, W; stride 2 halves them.
template <class S>
struct ConvBlockT {
  ConvWeightsT<S> conv;  // bias-free, BN follows
  BatchNormStateT<S> bn;
  Act act = Act::silu;
  int stride = 1;
  int padding = 1;

  int in_channels() const { return conv.groups * conv.in_per_group(); }
  int out_channels() const { return conv.out_channels(); }
};

template <class S>
ConvBlockT<S> make_conv_block(int in_c, int out_c, int k, int stride, Act act,
                              Rng& rng);

template <class S>
TensorT<S> conv_block(const TensorT<S>& x, ConvBlockT<S>& p);

// Stride-2 3x3 conv block; rejects odd spatial dims.
template <class S>
TensorT<S> resize_down2(const TensorT<S>& x, ConvBlockT<S>& p);

// Downsampling realization switch for the neck (`neck_down` config key).
enum class DownKind { conv, avgpool };

DownKind down_kind_from_string(const std::string& s);

template <class S>
struct DownsampleT {
  DownKind kind = DownKind::conv;
  ConvBlockT<S> block;  // unused for avgpool

  // avgpool preserves channel count; conv maps to the block's out channels.
  int out_channels(int in_c) const {
    return kind == DownKind::conv ? block.out_channels() : in_c;
  }
};

template <class S>
DownsampleT<S> make_downsample(DownKind kind, int in_c, int out_c, Rng& rng);

template <class S>
TensorT<S> downsample2(const TensorT<S>& x, DownsampleT<S>& p);

template <class S>
void register_conv_block(ParamSetT<S>& ps, const std::string& prefix,
                         ConvBlockT<S>& blk);

template <class S>
void register_downsample(ParamSetT<S>& ps, const std::string& prefix,
                         DownsampleT<S>& d);

}  // namespace prnet

#pragma once

#include "core/blocks.hpp"

namespace prnet {

// Detail-preserving 2x downsampler: pixel-unshuffle rearrangement into 4C
// channels, depthwise 3x3 with depth multiplier d (4dC outputs), then 1x1
// pointwise compression to c_out. BN + GELU after both convolutions. The
// spatial reduction comes entirely from the rearrangement; both convs are
// stride 1.
struct ESSampConfig {
  int c_in = 0;
  int c_out = 0;
  int d = 2;
};

template <class S>
struct ESSampParamsT {
  ESSampConfig cfg;
  ConvWeightsT<S> w1_edw;  // (4dC, 1, 3, 3), groups = 4C
  BatchNormStateT<S> bn1;  // 4dC channels
  ConvWeightsT<S> w2_pw;   // (c_out, 4dC, 1, 1)
  BatchNormStateT<S> bn2;  // c_out channels
};

template <class S>
ESSampParamsT<S> make_essamp(const ESSampConfig& cfg, Rng& rng);

template <class S>
TensorT<S> essamp_forward(ESSampParamsT<S>& p, const TensorT<S>& x);

// Reference variant: offset-major slice-concat rearrangement, single kernel
// per channel (d = 1). Weight layout is interpreted in slice order.
template <class S>
TensorT<S> slicesamp_forward(ESSampParamsT<S>& p, const TensorT<S>& x);

// Learnable value count: 36dC (depthwise) + 8dC (BN1) + 4dC*c_out (pointwise)
// + 2*c_out (BN2).
int64_t essamp_param_count(const ESSampConfig& cfg);

template <class S>
void register_essamp(ParamSetT<S>& ps, const std::string& prefix,
                     ESSampParamsT<S>& p);

}  // namespace prnet

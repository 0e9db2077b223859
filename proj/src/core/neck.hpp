#pragma once

#include <optional>

#include "core/blocks.hpp"

namespace prnet {

class InvalidState : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Backbone multi-scale outputs at strides {4, 8, 16, 32}.
template <class S>
struct FeatureSetT {
  TensorT<S> p2, p3, p4, p5;
};

// Neck intermediates and outputs. r[0] is the initial top-down fusion
// result at stride 4; refine stages append r[k] and t3[k-1].
template <class S>
struct NeckStateT {
  TensorT<S> p4td, p3td, p2td;
  std::vector<TensorT<S>> t3;  // one per refine stage, stride 8
  std::vector<TensorT<S>> r;   // r[0] = p2td, then one per stage, stride 4
  TensorT<S> p2out, p3out, p4out;
};

struct NeckWidths {
  int w2 = 0, w3 = 0, w4 = 0;
};

struct BackboneChannels {
  int c2 = 0, c3 = 0, c4 = 0, c5 = 0;
};

// Progressive refinement neck: initial top-down fusion, S refine stages that
// re-consume the raw backbone P2/P3 features, then three-scale output
// generation. Per-stage weights are independent.
template <class S>
struct PRNParamsT {
  NeckWidths widths;
  BackboneChannels backbone;
  DownKind down_kind = DownKind::conv;

  ConvBlockT<S> td4, td3, td2;

  struct Stage {
    DownsampleT<S> down;  // stride 4 -> 8
    ConvBlockT<S> t3;
    ConvBlockT<S> r;
  };
  std::vector<Stage> stages;

  DownsampleT<S> out_down1, out_down2;  // stride 4 -> 8 -> 16
  ConvBlockT<S> out_p4, out_p3, out_p2;

  int num_stages() const { return static_cast<int>(stages.size()); }
  // Blocks that consume the raw backbone P2 feature directly.
  int p2in_consumers() const { return 2 + num_stages(); }
};

template <class S>
PRNParamsT<S> make_prn(const NeckWidths& w, const BackboneChannels& c,
                       int stages, DownKind down, Rng& rng);

template <class S>
NeckStateT<S> top_down_fuse(const FeatureSetT<S>& f, PRNParamsT<S>& params);

// k is 1-based; requires r[k-1] from the previous stage (or r[0]).
template <class S>
void refine_stage(NeckStateT<S>& state, const FeatureSetT<S>& f,
                  PRNParamsT<S>& params, int k);

template <class S>
void generate_outputs(NeckStateT<S>& state, const FeatureSetT<S>& f,
                      PRNParamsT<S>& params);

template <class S>
NeckStateT<S> prn_forward(const FeatureSetT<S>& f, PRNParamsT<S>& params);

template <class S>
void register_prn(ParamSetT<S>& ps, const std::string& prefix,
                  PRNParamsT<S>& p);

// Baseline neck: PAN-style top-down + bottom-up over P2/P3/P4 with matched
// widths. Each backbone feature is consumed exactly once.
template <class S>
struct PanFPNParamsT {
  NeckWidths widths;
  BackboneChannels backbone;
  DownKind down_kind = DownKind::conv;

  ConvBlockT<S> td4, td3, td2;
  DownsampleT<S> down23, down34;
  ConvBlockT<S> out3, out4;

  int p2in_consumers() const { return 1; }
};

template <class S>
PanFPNParamsT<S> make_panfpn(const NeckWidths& w, const BackboneChannels& c,
                             DownKind down, Rng& rng);

template <class S>
NeckStateT<S> panfpn_forward(const FeatureSetT<S>& f, PanFPNParamsT<S>& params);

template <class S>
void register_panfpn(ParamSetT<S>& ps, const std::string& prefix,
                     PanFPNParamsT<S>& p);

}  // namespace prnet

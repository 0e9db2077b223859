#include "core/neck.hpp"

#include "core/cost_recorder.hpp"

namespace prnet {

namespace {

template <class S>
void check_feature_ratios(const FeatureSetT<S>& f) {
  const Shape4 s2 = f.p2.shape(), s3 = f.p3.shape(), s4 = f.p4.shape(),
               s5 = f.p5.shape();
  const bool ok = s2.n == s3.n && s3.n == s4.n && s4.n == s5.n &&
                  s2.h == 2 * s3.h && s2.w == 2 * s3.w &&
                  s3.h == 2 * s4.h && s3.w == 2 * s4.w &&
                  s4.h == 2 * s5.h && s4.w == 2 * s5.w;
  if (!ok)
    fail_contract("neck: inconsistent feature pyramid shapes: P2 " +
                  s2.str() + ", P3 " + s3.str() + ", P4 " + s4.str() +
                  ", P5 " + s5.str());
}

}  // namespace

template <class S>
PRNParamsT<S> make_prn(const NeckWidths& w, const BackboneChannels& c,
                       int stages, DownKind down, Rng& rng) {
  if (stages < 0) fail_invalid("prn: stage count must be non-negative");
  if (w.w2 <= 0 || w.w3 <= 0 || w.w4 <= 0)
    fail_invalid("prn: widths must be positive");
  PRNParamsT<S> p;
  p.widths = w;
  p.backbone = c;
  p.down_kind = down;
  p.td4 = make_conv_block<S>(c.c5 + c.c4, w.w4, 3, 1, Act::silu, rng);
  p.td3 = make_conv_block<S>(w.w4 + c.c3, w.w3, 3, 1, Act::silu, rng);
  p.td2 = make_conv_block<S>(w.w3 + c.c2, w.w2, 3, 1, Act::silu, rng);
  for (int k = 0; k < stages; ++k) {
    typename PRNParamsT<S>::Stage st;
    st.down = make_downsample<S>(down, w.w2, w.w3, rng);
    const int down_c = st.down.out_channels(w.w2);
    st.t3 = make_conv_block<S>(down_c + c.c3, w.w3, 3, 1, Act::silu, rng);
    st.r = make_conv_block<S>(w.w3 + w.w2 + c.c2, w.w2, 3, 1, Act::silu, rng);
    p.stages.push_back(std::move(st));
  }
  p.out_down1 = make_downsample<S>(down, w.w2, w.w3, rng);
  const int d1c = p.out_down1.out_channels(w.w2);
  p.out_down2 = make_downsample<S>(down, d1c, w.w4, rng);
  const int d2c = p.out_down2.out_channels(d1c);
  p.out_p4 = make_conv_block<S>(d2c, w.w4, 3, 1, Act::silu, rng);
  p.out_p3 = make_conv_block<S>(w.w4 + c.c3, w.w3, 3, 1, Act::silu, rng);
  p.out_p2 =
      make_conv_block<S>(w.w3 + w.w2 + c.c2, w.w2, 3, 1, Act::silu, rng);
  return p;
}

template <class S>
NeckStateT<S> top_down_fuse(const FeatureSetT<S>& f, PRNParamsT<S>& params) {
  check_feature_ratios(f);
  NeckStateT<S> state;
  {
    CostScope sc("td4");
    state.p4td = conv_block(
        concat_channels<S>({upsample_nearest2(f.p5), f.p4}), params.td4);
  }
  {
    CostScope sc("td3");
    state.p3td = conv_block(
        concat_channels<S>({upsample_nearest2(state.p4td), f.p3}), params.td3);
  }
  {
    CostScope sc("td2");
    state.p2td = conv_block(
        concat_channels<S>({upsample_nearest2(state.p3td), f.p2}), params.td2);
  }
  state.r.push_back(state.p2td);
  return state;
}

template <class S>
void refine_stage(NeckStateT<S>& state, const FeatureSetT<S>& f,
                  PRNParamsT<S>& params, int k) {
  if (k < 1) fail_invalid("refine_stage: k is 1-based");
  if (k > params.num_stages())
    fail_invalid("refine_stage: stage " + std::to_string(k) +
                 " beyond configured " + std::to_string(params.num_stages()));
  if (static_cast<int>(state.r.size()) != k)
    throw InvalidState("refine_stage: stage " + std::to_string(k) +
                       " requires exactly the previous " +
                       std::to_string(k - 1) + " stages, have " +
                       std::to_string(state.r.size() - 1));
  auto& st = params.stages[static_cast<size_t>(k - 1)];
  const TensorT<S>& prev = state.r.back();
  CostScope sc("stage" + std::to_string(k));
  TensorT<S> down;
  {
    CostScope sd("down");
    down = downsample2(prev, st.down);
  }
  TensorT<S> t3;
  {
    CostScope st3("t3");
    t3 = conv_block(concat_channels<S>({down, f.p3}), st.t3);
  }
  TensorT<S> r;
  {
    CostScope sr("r");
    r = conv_block(concat_channels<S>({upsample_nearest2(t3), prev, f.p2}),
                   st.r);
  }
  state.t3.push_back(t3);
  state.r.push_back(r);
}

template <class S>
void generate_outputs(NeckStateT<S>& state, const FeatureSetT<S>& f,
                      PRNParamsT<S>& params) {
  if (state.r.empty())
    throw InvalidState("generate_outputs: no refined features present");
  const TensorT<S>& rS = state.r.back();
  CostScope sc("out");
  {
    CostScope s1("down1");
    state.p4out = downsample2(rS, params.out_down1);
  }
  {
    CostScope s2("down2");
    state.p4out = downsample2(state.p4out, params.out_down2);
  }
  {
    CostScope s3("p4");
    state.p4out = conv_block(state.p4out, params.out_p4);
  }
  {
    CostScope s4("p3");
    state.p3out = conv_block(
        concat_channels<S>({upsample_nearest2(state.p4out), f.p3}),
        params.out_p3);
  }
  {
    CostScope s5("p2");
    state.p2out = conv_block(
        concat_channels<S>({upsample_nearest2(state.p3out), rS, f.p2}),
        params.out_p2);
  }
}

template <class S>
NeckStateT<S> prn_forward(const FeatureSetT<S>& f, PRNParamsT<S>& params) {
  NeckStateT<S> state = top_down_fuse(f, params);
  for (int k = 1; k <= params.num_stages(); ++k)
    refine_stage(state, f, params, k);
  generate_outputs(state, f, params);
  return state;
}

template <class S>
void register_prn(ParamSetT<S>& ps, const std::string& prefix,
                  PRNParamsT<S>& p) {
  register_conv_block(ps, prefix + ".td4", p.td4);
  register_conv_block(ps, prefix + ".td3", p.td3);
  register_conv_block(ps, prefix + ".td2", p.td2);
  for (size_t k = 0; k < p.stages.size(); ++k) {
    const std::string sp = prefix + ".stage" + std::to_string(k + 1);
    register_downsample(ps, sp + ".down", p.stages[k].down);
    register_conv_block(ps, sp + ".t3", p.stages[k].t3);
    register_conv_block(ps, sp + ".r", p.stages[k].r);
  }
  register_downsample(ps, prefix + ".out.down1", p.out_down1);
  register_downsample(ps, prefix + ".out.down2", p.out_down2);
  register_conv_block(ps, prefix + ".out.p4", p.out_p4);
  register_conv_block(ps, prefix + ".out.p3", p.out_p3);
  register_conv_block(ps, prefix + ".out.p2", p.out_p2);
}

template <class S>
PanFPNParamsT<S> make_panfpn(const NeckWidths& w, const BackboneChannels& c,
                             DownKind down, Rng& rng) {
  PanFPNParamsT<S> p;
  p.widths = w;
  p.backbone = c;
  p.down_kind = down;
  p.td4 = make_conv_block<S>(c.c5 + c.c4, w.w4, 3, 1, Act::silu, rng);
  p.td3 = make_conv_block<S>(w.w4 + c.c3, w.w3, 3, 1, Act::silu, rng);
  p.td2 = make_conv_block<S>(w.w3 + c.c2, w.w2, 3, 1, Act::silu, rng);
  p.down23 = make_downsample<S>(down, w.w2, w.w3, rng);
  p.out3 = make_conv_block<S>(p.down23.out_channels(w.w2) + w.w3, w.w3, 3, 1,
                              Act::silu, rng);
  p.down34 = make_downsample<S>(down, w.w3, w.w4, rng);
  p.out4 = make_conv_block<S>(p.down34.out_channels(w.w3) + w.w4, w.w4, 3, 1,
                              Act::silu, rng);
  return p;
}

template <class S>
NeckStateT<S> panfpn_forward(const FeatureSetT<S>& f,
                             PanFPNParamsT<S>& params) {
  check_feature_ratios(f);
  NeckStateT<S> state;
  {
    CostScope sc("td4");
    state.p4td = conv_block(
        concat_channels<S>({upsample_nearest2(f.p5), f.p4}), params.td4);
  }
  {
    CostScope sc("td3");
    state.p3td = conv_block(
        concat_channels<S>({upsample_nearest2(state.p4td), f.p3}), params.td3);
  }
  {
    CostScope sc("td2");
    state.p2td = conv_block(
        concat_channels<S>({upsample_nearest2(state.p3td), f.p2}), params.td2);
  }
  state.r.push_back(state.p2td);
  state.p2out = state.p2td;
  TensorT<S> d23;
  {
    CostScope sc("down23");
    d23 = downsample2(state.p2out, params.down23);
  }
  {
    CostScope sc("out3");
    state.p3out =
        conv_block(concat_channels<S>({d23, state.p3td}), params.out3);
  }
  TensorT<S> d34;
  {
    CostScope sc("down34");
    d34 = downsample2(state.p3out, params.down34);
  }
  {
    CostScope sc("out4");
    state.p4out =
        conv_block(concat_channels<S>({d34, state.p4td}), params.out4);
  }
  return state;
}

template <class S>
void register_panfpn(ParamSetT<S>& ps, const std::string& prefix,
                     PanFPNParamsT<S>& p) {
  register_conv_block(ps, prefix + ".td4", p.td4);
  register_conv_block(ps, prefix + ".td3", p.td3);
  register_conv_block(ps, prefix + ".td2", p.td2);
  register_downsample(ps, prefix + ".down23", p.down23);
  register_conv_block(ps, prefix + ".out3", p.out3);
  register_downsample(ps, prefix + ".down34", p.down34);
  register_conv_block(ps, prefix + ".out4", p.out4);
}

#define PRNET_INSTANTIATE(S)                                               \
  template struct PRNParamsT<S>;                                           \
  template struct PanFPNParamsT<S>;                                        \
  template PRNParamsT<S> make_prn(const NeckWidths&,                       \
                                  const BackboneChannels&, int, DownKind,  \
                                  Rng&);                                   \
  template NeckStateT<S> top_down_fuse(const FeatureSetT<S>&,              \
                                       PRNParamsT<S>&);                    \
  template void refine_stage(NeckStateT<S>&, const FeatureSetT<S>&,        \
                             PRNParamsT<S>&, int);                         \
  template void generate_outputs(NeckStateT<S>&, const FeatureSetT<S>&,    \
                                 PRNParamsT<S>&);                          \
  template NeckStateT<S> prn_forward(const FeatureSetT<S>&,                \
                                     PRNParamsT<S>&);                      \
  template void register_prn(ParamSetT<S>&, const std::string&,            \
                             PRNParamsT<S>&);                              \
  template PanFPNParamsT<S> make_panfpn(const NeckWidths&,                 \
                                        const BackboneChannels&, DownKind, \
                                        Rng&);                             \
  template NeckStateT<S> panfpn_forward(const FeatureSetT<S>&,             \
                                        PanFPNParamsT<S>&);                \
  template void register_panfpn(ParamSetT<S>&, const std::string&,         \
                                PanFPNParamsT<S>&);

PRNET_INSTANTIATE(float)
PRNET_INSTANTIATE(double)

#undef PRNET_INSTANTIATE

}  // namespace prnet

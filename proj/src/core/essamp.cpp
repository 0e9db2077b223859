#include "core/essamp.hpp"

namespace prnet {

template <class S>
ESSampParamsT<S> make_essamp(const ESSampConfig& cfg, Rng& rng) {
  if (cfg.c_in <= 0 || cfg.c_out <= 0 || cfg.d <= 0)
    fail_invalid("essamp: c_in, c_out and d must be positive");
  const int expanded = 4 * cfg.d * cfg.c_in;
  ESSampParamsT<S> p;
  p.cfg = cfg;
  p.w1_edw.values = kaiming_normal<S>({expanded, 1, 3, 3}, 9, rng);
  p.w1_edw.groups = 4 * cfg.c_in;
  p.bn1 = BatchNormStateT<S>::make(expanded);
  p.w2_pw.values =
      kaiming_normal<S>({cfg.c_out, expanded, 1, 1}, expanded, rng);
  p.w2_pw.groups = 1;
  p.bn2 = BatchNormStateT<S>::make(cfg.c_out);
  return p;
}

namespace {

template <class S>
void check_essamp_input(const ESSampConfig& cfg, const Shape4& s) {
  if (s.h % 2 != 0 || s.w % 2 != 0)
    fail_invalid("essamp: spatial dims " + std::to_string(s.h) + "x" +
                 std::to_string(s.w) + " must be even");
  if (s.c != cfg.c_in)
    fail_contract("essamp: input channels " + std::to_string(s.c) +
                  " != configured c_in " + std::to_string(cfg.c_in));
}

template <class S>
TensorT<S> essamp_tail(ESSampParamsT<S>& p, const TensorT<S>& rearranged) {
  TensorT<S> y = conv2d(rearranged, p.w1_edw, 1, 1);
  y = batchnorm(y, p.bn1);
  y = activation(y, Act::gelu);
  y = conv2d(y, p.w2_pw, 1, 0);
  y = batchnorm(y, p.bn2);
  return activation(y, Act::gelu);
}

}  // namespace

template <class S>
TensorT<S> essamp_forward(ESSampParamsT<S>& p, const TensorT<S>& x) {
  check_essamp_input<S>(p.cfg, x.shape());
  return essamp_tail(p, pixel_unshuffle(x, 2));
}

template <class S>
TensorT<S> slicesamp_forward(ESSampParamsT<S>& p, const TensorT<S>& x) {
  if (p.cfg.d != 1) fail_invalid("slicesamp: depth multiplier must be 1");
  check_essamp_input<S>(p.cfg, x.shape());
  std::vector<TensorT<S>> slices;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) slices.push_back(slice_stride2(x, i, j));
  return essamp_tail(p, concat_channels(slices));
}

int64_t essamp_param_count(const ESSampConfig& cfg) {
  const int64_t dC = static_cast<int64_t>(cfg.d) * cfg.c_in;
  return 36 * dC + 8 * dC + 4 * dC * cfg.c_out + 2 * cfg.c_out;
}

template <class S>
void register_essamp(ParamSetT<S>& ps, const std::string& prefix,
                     ESSampParamsT<S>& p) {
  ps.add_conv(prefix + ".dw", p.w1_edw);
  ps.add_bn(prefix + ".bn1", p.bn1);
  ps.add_conv(prefix + ".pw", p.w2_pw);
  ps.add_bn(prefix + ".bn2", p.bn2);
}

#define PRNET_INSTANTIATE(S)                                            \
  template struct ESSampParamsT<S>;                                     \
  template ESSampParamsT<S> make_essamp(const ESSampConfig&, Rng&);     \
  template TensorT<S> essamp_forward(ESSampParamsT<S>&,                 \
                                     const TensorT<S>&);                \
  template TensorT<S> slicesamp_forward(ESSampParamsT<S>&,              \
                                        const TensorT<S>&);             \
  template void register_essamp(ParamSetT<S>&, const std::string&,      \
                                ESSampParamsT<S>&);

PRNET_INSTANTIATE(float)
PRNET_INSTANTIATE(double)

#undef PRNET_INSTANTIATE

}  // namespace prnet

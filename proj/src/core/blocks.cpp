#include "core/blocks.hpp"

#include <cmath>

namespace prnet {

DownKind down_kind_from_string(const std::string& s) {
  if (s == "conv") return DownKind::conv;
  if (s == "avgpool") return DownKind::avgpool;
  fail_invalid("unknown neck_down kind: " + s);
}

template <class S>
TensorT<S> kaiming_normal(Shape4 shape, int fan_in, Rng& rng) {
  const S scale = static_cast<S>(std::sqrt(2.0 / fan_in));
  return TensorT<S>::random_normal(shape, rng, scale, true);
}

template <class S>
ConvBlockT<S> make_conv_block(int in_c, int out_c, int k, int stride, Act act,
                              Rng& rng) {
  if (in_c <= 0 || out_c <= 0) fail_invalid("conv block: channels must be positive");
  ConvBlockT<S> blk;
  blk.conv.values = kaiming_normal<S>({out_c, in_c, k, k}, in_c * k * k, rng);
  blk.conv.groups = 1;
  blk.bn = BatchNormStateT<S>::make(out_c);
  blk.act = act;
  blk.stride = stride;
  blk.padding = (k - 1) / 2;
  return blk;
}

template <class S>
TensorT<S> conv_block(const TensorT<S>& x, ConvBlockT<S>& p) {
  TensorT<S> y = conv2d(x, p.conv, p.stride, p.padding);
  y = batchnorm(y, p.bn);
  return activation(y, p.act);
}

template <class S>
TensorT<S> resize_down2(const TensorT<S>& x, ConvBlockT<S>& p) {
  const Shape4 s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0)
    fail_invalid("resize_down2: spatial dims " + std::to_string(s.h) + "x" +
                 std::to_string(s.w) + " must be even");
  if (p.stride != 2) fail_invalid("resize_down2: block stride must be 2");
  return conv_block(x, p);
}

template <class S>
DownsampleT<S> make_downsample(DownKind kind, int in_c, int out_c, Rng& rng) {
  DownsampleT<S> d;
  d.kind = kind;
  if (kind == DownKind::conv)
    d.block = make_conv_block<S>(in_c, out_c, 3, 2, Act::silu, rng);
  return d;
}

template <class S>
TensorT<S> downsample2(const TensorT<S>& x, DownsampleT<S>& p) {
  if (p.kind == DownKind::conv) return resize_down2(x, p.block);
  return avgpool2(x);
}

template <class S>
void register_conv_block(ParamSetT<S>& ps, const std::string& prefix,
                         ConvBlockT<S>& blk) {
  ps.add_conv(prefix + ".conv", blk.conv);
  ps.add_bn(prefix + ".bn", blk.bn);
}

template <class S>
void register_downsample(ParamSetT<S>& ps, const std::string& prefix,
                         DownsampleT<S>& d) {
  if (d.kind == DownKind::conv) register_conv_block(ps, prefix, d.block);
}

#define PRNET_INSTANTIATE(S)                                                  \
  template TensorT<S> kaiming_normal(Shape4, int, Rng&);                      \
  template struct ConvBlockT<S>;                                              \
  template ConvBlockT<S> make_conv_block(int, int, int, int, Act, Rng&);      \
  template TensorT<S> conv_block(const TensorT<S>&, ConvBlockT<S>&);          \
  template TensorT<S> resize_down2(const TensorT<S>&, ConvBlockT<S>&);        \
  template struct DownsampleT<S>;                                             \
  template DownsampleT<S> make_downsample(DownKind, int, int, Rng&);          \
  template TensorT<S> downsample2(const TensorT<S>&, DownsampleT<S>&);        \
  template void register_conv_block(ParamSetT<S>&, const std::string&,        \
                                    ConvBlockT<S>&);                          \
  template void register_downsample(ParamSetT<S>&, const std::string&,        \
                                    DownsampleT<S>&);

PRNET_INSTANTIATE(float)
PRNET_INSTANTIATE(double)

#undef PRNET_INSTANTIATE

}  // namespace prnet

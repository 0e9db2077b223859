#include "core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "core/cost_recorder.hpp"

namespace prnet {

Act act_from_string(const std::string& s) {
  if (s == "identity") return Act::identity;
  if (s == "gelu") return Act::gelu;
  if (s == "silu") return Act::silu;
  fail_invalid("unknown activation: " + s);
}

const char* act_to_string(Act a) {
  switch (a) {
    case Act::identity: return "identity";
    case Act::gelu: return "gelu";
    case Act::silu: return "silu";
  }
  return "?";
}

template <class S>
void ConvWeightsT<S>::validate() const {
  if (groups <= 0) fail_invalid("conv weights: groups must be positive");
  if (out_channels() % groups != 0)
    fail_contract("conv weights: out_channels " +
                  std::to_string(out_channels()) +
                  " not divisible by groups " + std::to_string(groups));
  if (bias.defined() && bias.shape().c != out_channels())
    fail_contract("conv weights: bias length " +
                  std::to_string(bias.shape().c) + " != out_channels " +
                  std::to_string(out_channels()));
}

template <class S>
Shape4 conv2d_output_shape(const Shape4& x, const ConvWeightsT<S>& w,
                           int stride, int padding) {
  int64_t oh = (x.h + 2 * padding - w.kh()) / stride + 1;
  int64_t ow = (x.w + 2 * padding - w.kw()) / stride + 1;
  return {x.n, w.out_channels(), oh, ow};
}

namespace {

// Valid output-column range for a kernel column offset: all ox with
// 0 <= ox*stride + shift < in_w. Numerator can go negative; keep the floor.
inline void ox_range(int shift, int stride, int64_t in_w, int64_t out_w,
                     int64_t& lo, int64_t& hi) {
  lo = shift < 0 ? (-shift + stride - 1) / stride : 0;
  const int64_t top = in_w - 1 - shift;
  hi = top < 0 ? -1 : std::min(out_w - 1, top / stride);
}

}  // namespace

template <class S>
TensorT<S> conv2d(const TensorT<S>& x, const ConvWeightsT<S>& w, int stride,
                  int padding) {
  w.validate();
  if (stride <= 0) fail_invalid("conv2d: stride must be positive");
  if (padding < 0) fail_invalid("conv2d: padding must be non-negative");
  const Shape4 xs = x.shape();
  const int groups = w.groups;
  const int in_per_group = w.in_per_group();
  const int out_c = w.out_channels();
  if (xs.c != static_cast<int64_t>(groups) * in_per_group)
    fail_contract("conv2d: input channels " + std::to_string(xs.c) +
                  " != groups*in_per_group " +
                  std::to_string(groups * in_per_group));
  if (xs.h + 2 * padding < w.kh() || xs.w + 2 * padding < w.kw())
    fail_contract("conv2d: padded input " +
                  std::to_string(xs.h + 2 * padding) + "x" +
                  std::to_string(xs.w + 2 * padding) +
                  " smaller than kernel " + std::to_string(w.kh()) + "x" +
                  std::to_string(w.kw()));

  const Shape4 ys = conv2d_output_shape(xs, w, stride, padding);
  const int m = out_c / groups;  // out channels per group
  const int kh = w.kh(), kw = w.kw();
  const int64_t H = xs.h, W = xs.w, OH = ys.h, OW = ys.w;

  std::vector<S> out(static_cast<size_t>(ys.numel()), S(0));
  if (w.has_bias()) {
    const S* b = w.bias.data();
    for (int64_t n = 0; n < ys.n; ++n)
      for (int64_t oc = 0; oc < out_c; ++oc) {
        S* dst = out.data() + (n * out_c + oc) * OH * OW;
        std::fill(dst, dst + OH * OW, b[oc]);
      }
  }

  const S* xd = x.data();
  const S* wd = w.values.data();
  for (int64_t n = 0; n < ys.n; ++n) {
    for (int oc = 0; oc < out_c; ++oc) {
      const int g = oc / m;
      S* yplane = out.data() + (n * out_c + oc) * OH * OW;
      for (int icg = 0; icg < in_per_group; ++icg) {
        const int64_t ic = static_cast<int64_t>(g) * in_per_group + icg;
        const S* xplane = xd + (n * xs.c + ic) * H * W;
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const S wv = wd[((static_cast<int64_t>(oc) * in_per_group + icg) *
                                 kh + ky) * kw + kx];
            const int shift = kx - padding;
            int64_t lo, hi;
            ox_range(shift, stride, W, OW, lo, hi);
            if (lo > hi) continue;
            for (int64_t oy = 0; oy < OH; ++oy) {
              const int64_t iy = oy * stride + ky - padding;
              if (iy < 0 || iy >= H) continue;
              const S* xrow = xplane + iy * W + shift;
              S* yrow = yplane + oy * OW;
              if (stride == 1) {
                for (int64_t ox = lo; ox <= hi; ++ox)
                  yrow[ox] += wv * xrow[ox];
              } else {
                for (int64_t ox = lo; ox <= hi; ++ox)
                  yrow[ox] += wv * xrow[ox * stride];
              }
            }
          }
        }
      }
    }
  }

  if (CostRecorder* rec = CostRecorder::current())
    rec->add_conv(ys.numel() * in_per_group * kh * kw);

  TensorT<S> xc = x;
  ConvWeightsT<S> wc = w;
  std::vector<TensorT<S>> parents = {x, w.values};
  if (w.has_bias()) parents.push_back(w.bias);
  return TensorT<S>::make_result(
      ys, std::move(out), parents,
      [xc, wc, stride, padding, xs, ys, m](detail::Node<S>& node) {
        const S* gy = node.grad.data();
        const int out_c = wc.out_channels();
        const int in_per_group = wc.in_per_group();
        const int kh = wc.kh(), kw = wc.kw();
        const int64_t H = xs.h, W = xs.w, OH = ys.h, OW = ys.w;
        const bool need_dx = xc.requires_grad();
        const bool need_dw = wc.values.requires_grad();
        TensorT<S> xmut = xc;
        ConvWeightsT<S> wmut = wc;
        S* dx = need_dx ? xmut.grad() : nullptr;
        S* dw = need_dw ? wmut.values.grad() : nullptr;
        const S* xd = xc.data();
        const S* wd = wc.values.data();

        if (wc.has_bias() && wc.bias.requires_grad()) {
          S* db = wmut.bias.grad();
          for (int64_t n = 0; n < ys.n; ++n)
            for (int oc = 0; oc < out_c; ++oc) {
              const S* row = gy + (n * out_c + oc) * OH * OW;
              S acc = S(0);
              for (int64_t i = 0; i < OH * OW; ++i) acc += row[i];
              db[oc] += acc;
            }
        }
        if (!need_dx && !need_dw) return;

        for (int64_t n = 0; n < ys.n; ++n) {
          for (int oc = 0; oc < out_c; ++oc) {
            const int g = oc / m;
            const S* gplane = gy + (n * out_c + oc) * OH * OW;
            for (int icg = 0; icg < in_per_group; ++icg) {
              const int64_t ic = static_cast<int64_t>(g) * in_per_group + icg;
              const S* xplane = xd + (n * xs.c + ic) * H * W;
              S* dxplane = need_dx ? dx + (n * xs.c + ic) * H * W : nullptr;
              for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                  const int64_t widx =
                      ((static_cast<int64_t>(oc) * in_per_group + icg) * kh +
                       ky) * kw + kx;
                  const S wv = wd[widx];
                  const int shift = kx - padding;
                  int64_t lo, hi;
                  ox_range(shift, stride, W, OW, lo, hi);
                  if (lo > hi) continue;
                  S wacc = S(0);
                  for (int64_t oy = 0; oy < OH; ++oy) {
                    const int64_t iy = oy * stride + ky - padding;
                    if (iy < 0 || iy >= H) continue;
                    const S* grow = gplane + oy * OW;
                    const S* xrow = xplane + iy * W + shift;
                    if (need_dw) {
                      if (stride == 1) {
                        for (int64_t ox = lo; ox <= hi; ++ox)
                          wacc += grow[ox] * xrow[ox];
                      } else {
                        for (int64_t ox = lo; ox <= hi; ++ox)
                          wacc += grow[ox] * xrow[ox * stride];
                      }
                    }
                    if (need_dx) {
                      S* dxrow = dxplane + iy * W + shift;
                      if (stride == 1) {
                        for (int64_t ox = lo; ox <= hi; ++ox)
                          dxrow[ox] += wv * grow[ox];
                      } else {
                        for (int64_t ox = lo; ox <= hi; ++ox)
                          dxrow[ox * stride] += wv * grow[ox];
                      }
                    }
                  }
                  if (need_dw) dw[widx] += wacc;
                }
              }
            }
          }
        }
      });
}

template <class S>
TensorT<S> pixel_unshuffle(const TensorT<S>& x, int r) {
  if (r <= 0) fail_invalid("pixel_unshuffle: r must be positive");
  const Shape4 xs = x.shape();
  if (xs.h % r != 0 || xs.w % r != 0)
    fail_invalid("pixel_unshuffle: H=" + std::to_string(xs.h) +
                 ", W=" + std::to_string(xs.w) + " not divisible by r=" +
                 std::to_string(r));
  const Shape4 ys = {xs.n, xs.c * r * r, xs.h / r, xs.w / r};
  std::vector<S> out(static_cast<size_t>(ys.numel()));
  const S* xd = x.data();
  const int64_t OH = ys.h, OW = ys.w;
  for (int64_t n = 0; n < xs.n; ++n)
    for (int64_t c = 0; c < xs.c; ++c)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
          const int64_t oc = c * r * r + static_cast<int64_t>(i) * r + j;
          for (int64_t h = 0; h < OH; ++h) {
            const S* src = xd + ((n * xs.c + c) * xs.h + h * r + i) * xs.w + j;
            S* dst = out.data() + ((n * ys.c + oc) * OH + h) * OW;
            for (int64_t w = 0; w < OW; ++w) dst[w] = src[w * r];
          }
        }

  TensorT<S> xc = x;
  return TensorT<S>::make_result(
      ys, std::move(out), {x}, [xc, r, xs, ys](detail::Node<S>& node) {
        if (!xc.requires_grad()) return;
        TensorT<S> xmut = xc;
        S* dx = xmut.grad();
        const S* gy = node.grad.data();
        const int64_t OH = ys.h, OW = ys.w;
        for (int64_t n = 0; n < xs.n; ++n)
          for (int64_t c = 0; c < xs.c; ++c)
            for (int i = 0; i < r; ++i)
              for (int j = 0; j < r; ++j) {
                const int64_t oc =
                    c * r * r + static_cast<int64_t>(i) * r + j;
                for (int64_t h = 0; h < OH; ++h) {
                  S* dst =
                      dx + ((n * xs.c + c) * xs.h + h * r + i) * xs.w + j;
                  const S* src = gy + ((n * ys.c + oc) * OH + h) * OW;
                  for (int64_t w = 0; w < OW; ++w) dst[w * r] += src[w];
                }
              }
      });
}

template <class S>
TensorT<S> pixel_shuffle(const TensorT<S>& x, int r) {
  if (r <= 0) fail_invalid("pixel_shuffle: r must be positive");
  const Shape4 xs = x.shape();
  if (xs.c % (static_cast<int64_t>(r) * r) != 0)
    fail_invalid("pixel_shuffle: C=" + std::to_string(xs.c) +
                 " not divisible by r^2=" + std::to_string(r * r));
  const Shape4 ys = {xs.n, xs.c / (r * r), xs.h * r, xs.w * r};
  std::vector<S> out(static_cast<size_t>(ys.numel()));
  const S* xd = x.data();
  for (int64_t n = 0; n < ys.n; ++n)
    for (int64_t c = 0; c < ys.c; ++c)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
          const int64_t ic = c * r * r + static_cast<int64_t>(i) * r + j;
          for (int64_t h = 0; h < xs.h; ++h) {
            const S* src = xd + ((n * xs.c + ic) * xs.h + h) * xs.w;
            S* dst = out.data() + ((n * ys.c + c) * ys.h + h * r + i) * ys.w + j;
            for (int64_t w = 0; w < xs.w; ++w) dst[w * r] = src[w];
          }
        }

  TensorT<S> xc = x;
  return TensorT<S>::make_result(
      ys, std::move(out), {x}, [xc, r, xs, ys](detail::Node<S>& node) {
        if (!xc.requires_grad()) return;
        TensorT<S> xmut = xc;
        S* dx = xmut.grad();
        const S* gy = node.grad.data();
        for (int64_t n = 0; n < ys.n; ++n)
          for (int64_t c = 0; c < ys.c; ++c)
            for (int i = 0; i < r; ++i)
              for (int j = 0; j < r; ++j) {
                const int64_t ic =
                    c * r * r + static_cast<int64_t>(i) * r + j;
                for (int64_t h = 0; h < xs.h; ++h) {
                  S* dst = dx + ((n * xs.c + ic) * xs.h + h) * xs.w;
                  const S* src =
                      gy + ((n * ys.c + c) * ys.h + h * r + i) * ys.w + j;
                  for (int64_t w = 0; w < xs.w; ++w) dst[w] += src[w * r];
                }
              }
      });
}

template <class S>
TensorT<S> upsample_nearest2(const TensorT<S>& x) {
  const Shape4 xs = x.shape();
  const Shape4 ys = {xs.n, xs.c, xs.h * 2, xs.w * 2};
  std::vector<S> out(static_cast<size_t>(ys.numel()));
  const S* xd = x.data();
  const int64_t planes = xs.n * xs.c;
  for (int64_t p = 0; p < planes; ++p) {
    const S* src = xd + p * xs.h * xs.w;
    S* dst = out.data() + p * ys.h * ys.w;
    for (int64_t h = 0; h < xs.h; ++h)
      for (int64_t w = 0; w < xs.w; ++w) {
        const S v = src[h * xs.w + w];
        S* d = dst + (2 * h) * ys.w + 2 * w;
        d[0] = v;
        d[1] = v;
        d[ys.w] = v;
        d[ys.w + 1] = v;
      }
  }
  if (CostRecorder* rec = CostRecorder::current()) rec->add_map(ys.numel());

  TensorT<S> xc = x;
  return TensorT<S>::make_result(
      ys, std::move(out), {x}, [xc, xs, ys](detail::Node<S>& node) {
        if (!xc.requires_grad()) return;
        TensorT<S> xmut = xc;
        S* dx = xmut.grad();
        const S* gy = node.grad.data();
        const int64_t planes = xs.n * xs.c;
        for (int64_t p = 0; p < planes; ++p) {
          S* d = dx + p * xs.h * xs.w;
          const S* g = gy + p * ys.h * ys.w;
          for (int64_t h = 0; h < xs.h; ++h)
            for (int64_t w = 0; w < xs.w; ++w) {
              const S* s = g + (2 * h) * ys.w + 2 * w;
              d[h * xs.w + w] += s[0] + s[1] + s[ys.w] + s[ys.w + 1];
            }
        }
      });
}

template <class S>
TensorT<S> avgpool2(const TensorT<S>& x) {
  const Shape4 xs = x.shape();
  if (xs.h % 2 != 0 || xs.w % 2 != 0)
    fail_invalid("avgpool2: H=" + std::to_string(xs.h) + ", W=" +
                 std::to_string(xs.w) + " must be even");
  const Shape4 ys = {xs.n, xs.c, xs.h / 2, xs.w / 2};
  std::vector<S> out(static_cast<size_t>(ys.numel()));
  const S* xd = x.data();
  const int64_t planes = xs.n * xs.c;
  for (int64_t p = 0; p < planes; ++p) {
    const S* src = xd + p * xs.h * xs.w;
    S* dst = out.data() + p * ys.h * ys.w;
    for (int64_t h = 0; h < ys.h; ++h)
      for (int64_t w = 0; w < ys.w; ++w) {
        const S* s = src + (2 * h) * xs.w + 2 * w;
        dst[h * ys.w + w] =
            (s[0] + s[1] + s[xs.w] + s[xs.w + 1]) * S(0.25);
      }
  }
  if (CostRecorder* rec = CostRecorder::current()) rec->add_map(ys.numel());

  TensorT<S> xc = x;
  return TensorT<S>::make_result(
      ys, std::move(out), {x}, [xc, xs, ys](detail::Node<S>& node) {
        if (!xc.requires_grad()) return;
        TensorT<S> xmut = xc;
        S* dx = xmut.grad();
        const S* gy = node.grad.data();
        const int64_t planes = xs.n * xs.c;
        for (int64_t p = 0; p < planes; ++p) {
          S* d = dx + p * xs.h * xs.w;
          const S* g = gy + p * ys.h * ys.w;
          for (int64_t h = 0; h < ys.h; ++h)
            for (int64_t w = 0; w < ys.w; ++w) {
              const S gv = g[h * ys.w + w] * S(0.25);
              S* t = d + (2 * h) * xs.w + 2 * w;
              t[0] += gv;
              t[1] += gv;
              t[xs.w] += gv;
              t[xs.w + 1] += gv;
            }
        }
      });
}

template <class S>
TensorT<S> slice_stride2(const TensorT<S>& x, int i, int j) {
  if (i < 0 || i > 1 || j < 0 || j > 1)
    fail_invalid("slice_stride2: offsets must be 0 or 1");
  const Shape4 xs = x.shape();
  if (xs.h % 2 != 0 || xs.w % 2 != 0)
    fail_invalid("slice_stride2: H and W must be even");
  const Shape4 ys = {xs.n, xs.c, xs.h / 2, xs.w / 2};
  std::vector<S> out(static_cast<size_t>(ys.numel()));
  const S* xd = x.data();
  const int64_t planes = xs.n * xs.c;
  for (int64_t p = 0; p < planes; ++p) {
    const S* src = xd + p * xs.h * xs.w;
    S* dst = out.data() + p * ys.h * ys.w;
    for (int64_t h = 0; h < ys.h; ++h) {
      const S* s = src + (2 * h + i) * xs.w + j;
      for (int64_t w = 0; w < ys.w; ++w) dst[h * ys.w + w] = s[2 * w];
    }
  }

  TensorT<S> xc = x;
  return TensorT<S>::make_result(
      ys, std::move(out), {x}, [xc, i, j, xs, ys](detail::Node<S>& node) {
        if (!xc.requires_grad()) return;
        TensorT<S> xmut = xc;
        S* dx = xmut.grad();
        const S* gy = node.grad.data();
        const int64_t planes = xs.n * xs.c;
        for (int64_t p = 0; p < planes; ++p) {
          S* d = dx + p * xs.h * xs.w;
          const S* g = gy + p * ys.h * ys.w;
          for (int64_t h = 0; h < ys.h; ++h) {
            S* t = d + (2 * h + i) * xs.w + j;
            for (int64_t w = 0; w < ys.w; ++w) t[2 * w] += g[h * ys.w + w];
          }
        }
      });
}

template <class S>
TensorT<S> concat_channels(const std::vector<TensorT<S>>& xs) {
  if (xs.empty()) fail_invalid("concat_channels: empty input list");
  const Shape4 first = xs[0].shape();
  int64_t total_c = 0;
  for (const auto& t : xs) {
    const Shape4 s = t.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w)
      fail_contract("concat_channels: shape " + s.str() +
                    " incompatible with " + first.str());
    total_c += s.c;
  }
  const Shape4 ys = {first.n, total_c, first.h, first.w};
  std::vector<S> out(static_cast<size_t>(ys.numel()));
  const int64_t hw = first.h * first.w;
  for (int64_t n = 0; n < first.n; ++n) {
    int64_t coff = 0;
    for (const auto& t : xs) {
      const int64_t c = t.shape().c;
      std::memcpy(out.data() + (n * total_c + coff) * hw,
                  t.data() + n * c * hw, sizeof(S) * c * hw);
      coff += c;
    }
  }

  std::vector<TensorT<S>> parents = xs;
  return TensorT<S>::make_result(
      ys, std::move(out), xs, [parents, ys, hw](detail::Node<S>& node) {
        const S* gy = node.grad.data();
        for (int64_t n = 0; n < ys.n; ++n) {
          int64_t coff = 0;
          for (const auto& t : parents) {
            const int64_t c = t.shape().c;
            if (t.requires_grad()) {
              TensorT<S> tm = t;
              S* d = tm.grad() + n * c * hw;
              const S* g = gy + (n * ys.c + coff) * hw;
              for (int64_t i = 0; i < c * hw; ++i) d[i] += g[i];
            }
            coff += c;
          }
        }
      });
}

template <class S>
TensorT<S> batchnorm(const TensorT<S>& x, BatchNormStateT<S>& state) {
  const Shape4 xs = x.shape();
  const int C = state.channels();
  if (xs.c != C)
    fail_contract("batchnorm: input channels " + std::to_string(xs.c) +
                  " != state channels " + std::to_string(C));
  const int64_t M = xs.n * xs.h * xs.w;  // reduction size per channel
  const int64_t hw = xs.h * xs.w;
  const S* xd = x.data();
  const S* gamma = state.gamma.data();
  const S* beta = state.beta.data();

  std::vector<S> mean(C), inv_std(C);
  if (state.training) {
    for (int c = 0; c < C; ++c) {
      S acc = S(0);
      for (int64_t n = 0; n < xs.n; ++n) {
        const S* p = xd + (n * xs.c + c) * hw;
        for (int64_t i = 0; i < hw; ++i) acc += p[i];
      }
      const S mu = acc / static_cast<S>(M);
      S vacc = S(0);
      for (int64_t n = 0; n < xs.n; ++n) {
        const S* p = xd + (n * xs.c + c) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          const S d = p[i] - mu;
          vacc += d * d;
        }
      }
      const S var = vacc / static_cast<S>(M);
      mean[c] = mu;
      inv_std[c] = S(1) / std::sqrt(var + state.eps);
      state.running_mean[c] =
          (S(1) - state.momentum) * state.running_mean[c] + state.momentum * mu;
      state.running_var[c] =
          (S(1) - state.momentum) * state.running_var[c] + state.momentum * var;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = S(1) / std::sqrt(state.running_var[c] + state.eps);
    }
  }

  std::vector<S> out(static_cast<size_t>(xs.numel()));
  for (int64_t n = 0; n < xs.n; ++n)
    for (int c = 0; c < C; ++c) {
      const S* p = xd + (n * xs.c + c) * hw;
      S* q = out.data() + (n * xs.c + c) * hw;
      const S a = gamma[c] * inv_std[c];
      const S mu = mean[c], b = beta[c];
      for (int64_t i = 0; i < hw; ++i) q[i] = a * (p[i] - mu) + b;
    }
  if (CostRecorder* rec = CostRecorder::current()) rec->add_map(xs.numel());

  TensorT<S> xc = x;
  TensorT<S> gamma_t = state.gamma;
  TensorT<S> beta_t = state.beta;
  const bool training = state.training;
  return TensorT<S>::make_result(
      {xs.n, xs.c, xs.h, xs.w}, std::move(out), {x, state.gamma, state.beta},
      [xc, gamma_t, beta_t, mean, inv_std, xs, hw, M,
       training](detail::Node<S>& node) {
        const int C = static_cast<int>(xs.c);
        const S* gy = node.grad.data();
        const S* xd = xc.data();
        const S* gamma = gamma_t.data();
        TensorT<S> gm = gamma_t, bm = beta_t, xm = xc;
        S* dgamma = gamma_t.requires_grad() ? gm.grad() : nullptr;
        S* dbeta = beta_t.requires_grad() ? bm.grad() : nullptr;
        S* dx = xc.requires_grad() ? xm.grad() : nullptr;

        for (int c = 0; c < C; ++c) {
          S sum_dy = S(0), sum_dy_xhat = S(0);
          for (int64_t n = 0; n < xs.n; ++n) {
            const S* g = gy + (n * xs.c + c) * hw;
            const S* p = xd + (n * xs.c + c) * hw;
            for (int64_t i = 0; i < hw; ++i) {
              const S xhat = (p[i] - mean[c]) * inv_std[c];
              sum_dy += g[i];
              sum_dy_xhat += g[i] * xhat;
            }
          }
          if (dgamma) dgamma[c] += sum_dy_xhat;
          if (dbeta) dbeta[c] += sum_dy;
          if (!dx) continue;
          if (training) {
            const S k = gamma[c] * inv_std[c];
            const S mdy = sum_dy / static_cast<S>(M);
            const S mdyx = sum_dy_xhat / static_cast<S>(M);
            for (int64_t n = 0; n < xs.n; ++n) {
              const S* g = gy + (n * xs.c + c) * hw;
              const S* p = xd + (n * xs.c + c) * hw;
              S* d = dx + (n * xs.c + c) * hw;
              for (int64_t i = 0; i < hw; ++i) {
                const S xhat = (p[i] - mean[c]) * inv_std[c];
                d[i] += k * (g[i] - mdy - xhat * mdyx);
              }
            }
          } else {
            const S k = gamma[c] * inv_std[c];
            for (int64_t n = 0; n < xs.n; ++n) {
              const S* g = gy + (n * xs.c + c) * hw;
              S* d = dx + (n * xs.c + c) * hw;
              for (int64_t i = 0; i < hw; ++i) d[i] += k * g[i];
            }
          }
        }
      });
}

namespace {

constexpr double kGeluC1 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC2 = 0.044715;

template <class S>
inline S gelu_fwd(S x) {
  const S u = static_cast<S>(kGeluC1) * (x + static_cast<S>(kGeluC2) * x * x * x);
  return S(0.5) * x * (S(1) + std::tanh(u));
}

template <class S>
inline S gelu_bwd(S x) {
  const S u = static_cast<S>(kGeluC1) * (x + static_cast<S>(kGeluC2) * x * x * x);
  const S t = std::tanh(u);
  const S du = static_cast<S>(kGeluC1) * (S(1) + S(3) * static_cast<S>(kGeluC2) * x * x);
  return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * du;
}

template <class S>
inline S sigmoid(S x) {
  return S(1) / (S(1) + std::exp(-x));
}

}  // namespace

template <class S>
TensorT<S> activation(const TensorT<S>& x, Act kind) {
  if (kind == Act::identity) return x;
  const Shape4 xs = x.shape();
  std::vector<S> out(static_cast<size_t>(xs.numel()));
  const S* xd = x.data();
  const int64_t n = xs.numel();
  if (kind == Act::gelu) {
    for (int64_t i = 0; i < n; ++i) out[i] = gelu_fwd(xd[i]);
  } else {
    for (int64_t i = 0; i < n; ++i) out[i] = xd[i] * sigmoid(xd[i]);
  }
  if (CostRecorder* rec = CostRecorder::current()) rec->add_map(n);

  TensorT<S> xc = x;
  return TensorT<S>::make_result(
      xs, std::move(out), {x}, [xc, kind, n](detail::Node<S>& node) {
        if (!xc.requires_grad()) return;
        TensorT<S> xm = xc;
        S* dx = xm.grad();
        const S* gy = node.grad.data();
        const S* xd = xc.data();
        if (kind == Act::gelu) {
          for (int64_t i = 0; i < n; ++i) dx[i] += gy[i] * gelu_bwd(xd[i]);
        } else {
          for (int64_t i = 0; i < n; ++i) {
            const S s = sigmoid(xd[i]);
            dx[i] += gy[i] * s * (S(1) + xd[i] * (S(1) - s));
          }
        }
      });
}

template <class S>
TensorT<S> sum_all(const TensorT<S>& x) {
  S acc = S(0);
  const S* xd = x.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) acc += xd[i];
  TensorT<S> xc = x;
  return TensorT<S>::make_result(
      {1, 1, 1, 1}, {acc}, {x}, [xc, n](detail::Node<S>& node) {
        if (!xc.requires_grad()) return;
        TensorT<S> xm = xc;
        S* dx = xm.grad();
        const S g = node.grad[0];
        for (int64_t i = 0; i < n; ++i) dx[i] += g;
      });
}

namespace detail {
bool& grad_enabled_flag() {
  thread_local bool flag = true;
  return flag;
}
}  // namespace detail

#define PRNET_INSTANTIATE(S)                                               \
  template struct ConvWeightsT<S>;                                         \
  template TensorT<S> conv2d(const TensorT<S>&, const ConvWeightsT<S>&,    \
                             int, int);                                    \
  template Shape4 conv2d_output_shape(const Shape4&, const ConvWeightsT<S>&, \
                                      int, int);                           \
  template TensorT<S> pixel_unshuffle(const TensorT<S>&, int);             \
  template TensorT<S> pixel_shuffle(const TensorT<S>&, int);               \
  template TensorT<S> upsample_nearest2(const TensorT<S>&);                \
  template TensorT<S> avgpool2(const TensorT<S>&);                         \
  template TensorT<S> slice_stride2(const TensorT<S>&, int, int);          \
  template TensorT<S> concat_channels(const std::vector<TensorT<S>>&);     \
  template TensorT<S> batchnorm(const TensorT<S>&, BatchNormStateT<S>&);   \
  template TensorT<S> activation(const TensorT<S>&, Act);                  \
  template TensorT<S> sum_all(const TensorT<S>&);

PRNET_INSTANTIATE(float)
PRNET_INSTANTIATE(double)

#undef PRNET_INSTANTIATE

}  // namespace prnet

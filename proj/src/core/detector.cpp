#include "core/detector.hpp"

#include <algorithm>
#include <cmath>

#include "core/cost_recorder.hpp"

namespace prnet {

template <class S>
BackboneParamsT<S> make_backbone(const ArchConfig& cfg, Rng& rng) {
  BackboneParamsT<S> b;
  int in_c = 3;
  for (int i = 0; i < 5; ++i) {
    const int out_c = cfg.widths[static_cast<size_t>(i)];
    auto& step = b.steps[static_cast<size_t>(i)];
    step.use_essamp = i < cfg.essamp_layers;
    if (step.use_essamp)
      step.essamp = make_essamp<S>({in_c, out_c, cfg.essamp_d}, rng);
    else
      step.down = make_conv_block<S>(in_c, out_c, 3, 2, Act::silu, rng);
    step.post = make_conv_block<S>(out_c, out_c, 3, 1, Act::silu, rng);
    in_c = out_c;
  }
  return b;
}

template <class S>
FeatureSetT<S> backbone_forward(BackboneParamsT<S>& params,
                                const TensorT<S>& images) {
  const Shape4 s = images.shape();
  if (s.c != 3)
    fail_contract("backbone: expected 3 input channels, got " +
                  std::to_string(s.c));
  if (s.h % 32 != 0 || s.w % 32 != 0)
    fail_invalid("backbone: input size " + std::to_string(s.h) + "x" +
                 std::to_string(s.w) + " must be divisible by 32");
  FeatureSetT<S> f;
  TensorT<S> x = images;
  for (int i = 0; i < 5; ++i) {
    auto& step = params.steps[static_cast<size_t>(i)];
    CostScope sc("step" + std::to_string(i + 1));
    {
      CostScope sd("down");
      x = step.use_essamp ? essamp_forward(step.essamp, x)
                          : conv_block(x, step.down);
    }
    {
      CostScope sp("post");
      x = conv_block(x, step.post);
    }
    if (i == 1) f.p2 = x;
    if (i == 2) f.p3 = x;
    if (i == 3) f.p4 = x;
    if (i == 4) f.p5 = x;
  }
  return f;
}

template <class S>
HeadParamsT<S> make_head(const NeckWidths& w, int num_classes, Rng& rng) {
  if (num_classes <= 0) fail_invalid("head: num_classes must be positive");
  const int out = 5 + num_classes;
  HeadParamsT<S> h;
  auto make = [&](int in_c) {
    ConvWeightsT<S> cw;
    cw.values = kaiming_normal<S>({out, in_c, 1, 1}, in_c, rng);
    cw.bias = TensorT<S>::zeros({1, out, 1, 1}, true);
    cw.groups = 1;
    return cw;
  };
  h.p2 = make(w.w2);
  h.p3 = make(w.w3);
  h.p4 = make(w.w4);
  return h;
}

template <class S>
RawPredictionsT<S> head_forward(HeadParamsT<S>& params,
                                const NeckStateT<S>& neck_out) {
  CostScope sc("head");
  RawPredictionsT<S> out;
  {
    CostScope s2("p2");
    out.p2 = conv2d(neck_out.p2out, params.p2, 1, 0);
  }
  {
    CostScope s3("p3");
    out.p3 = conv2d(neck_out.p3out, params.p3, 1, 0);
  }
  {
    CostScope s4("p4");
    out.p4 = conv2d(neck_out.p4out, params.p4, 1, 0);
  }
  return out;
}

TargetMaps assign_targets(const std::vector<std::vector<BoxLabel>>& labels,
                          int image_size) {
  TargetMaps maps;
  for (size_t n = 0; n < labels.size(); ++n) {
    for (const BoxLabel& raw : labels[n]) {
      BoxLabel b = raw;
      if (b.w <= 0 || b.h <= 0) {
        ++maps.dropped;
        continue;
      }
      // Clamp center into the image so every box lands in a real cell.
      b.cx = std::clamp(b.cx, 0.0, image_size - 1e-6);
      b.cy = std::clamp(b.cy, 0.0, image_size - 1e-6);
      const double max_side = std::max(b.w, b.h);
      int level;
      if (max_side < kLevelSplitSmall)
        level = 0;
      else if (max_side < kLevelSplitLarge)
        level = 1;
      else
        level = 2;
      const int stride = kLevelStrides[static_cast<size_t>(level)];
      const int cx = static_cast<int>(b.cx / stride);
      const int cy = static_cast<int>(b.cy / stride);

      auto& cells = maps.positives[static_cast<size_t>(level)];
      bool collided = false;
      for (auto& cell : cells) {
        if (cell.image == static_cast<int>(n) && cell.cy == cy &&
            cell.cx == cx) {
          collided = true;
          if (b.w * b.h > cell.box.w * cell.box.h) cell.box = b;
          ++maps.dropped;
          break;
        }
      }
      if (!collided)
        cells.push_back({static_cast<int>(n), cy, cx, b});
    }
  }
  return maps;
}

namespace {

template <class S>
inline double bce_with_logits(S logit, double target) {
  const double z = static_cast<double>(logit);
  return std::max(z, 0.0) - z * target + std::log1p(std::exp(-std::abs(z)));
}

inline double sigmoid_d(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// d(1 - IoU)/d(pred cx, cy, w, h) for axis-aligned boxes. Zero when the
// boxes are disjoint (flat region of the loss).
struct IouGrad {
  double iou = 0;
  double dcx = 0, dcy = 0, dw = 0, dh = 0;
};

IouGrad iou_with_grad(const Box& p, const Box& g) {
  IouGrad out;
  const double px1 = p.cx - p.w / 2, px2 = p.cx + p.w / 2;
  const double py1 = p.cy - p.h / 2, py2 = p.cy + p.h / 2;
  const double gx1 = g.cx - g.w / 2, gx2 = g.cx + g.w / 2;
  const double gy1 = g.cy - g.h / 2, gy2 = g.cy + g.h / 2;
  const double iw = std::min(px2, gx2) - std::max(px1, gx1);
  const double ih = std::min(py2, gy2) - std::max(py1, gy1);
  if (iw <= 0 || ih <= 0) return out;
  const double inter = iw * ih;
  const double uni = p.w * p.h + g.w * g.h - inter;
  out.iou = inter / uni;

  const double diw_dcx = (px2 < gx2 ? 1.0 : 0.0) - (px1 > gx1 ? 1.0 : 0.0);
  const double dih_dcy = (py2 < gy2 ? 1.0 : 0.0) - (py1 > gy1 ? 1.0 : 0.0);
  const double diw_dw = 0.5 * (px2 < gx2 ? 1.0 : 0.0) +
                        0.5 * (px1 > gx1 ? 1.0 : 0.0);
  const double dih_dh = 0.5 * (py2 < gy2 ? 1.0 : 0.0) +
                        0.5 * (py1 > gy1 ? 1.0 : 0.0);
  const double u2 = uni * uni;
  const double k = (uni + inter) / u2;  // dIoU/dI
  // dIoU = k*dI - I/U^2 * dArea_pred
  out.dcx = k * ih * diw_dcx;
  out.dcy = k * iw * dih_dcy;
  out.dw = k * ih * diw_dw - inter / u2 * p.h;
  out.dh = k * iw * dih_dh - inter / u2 * p.w;
  return out;
}

[[noreturn]] void fail_nonfinite(int level, int image, int cy, int cx,
                                 const char* term) {
  throw std::runtime_error(
      "detection_loss: non-finite " + std::string(term) + " at level P" +
      std::to_string(level + 2) + " image " + std::to_string(image) +
      " cell (" + std::to_string(cy) + "," + std::to_string(cx) + ")");
}

}  // namespace

template <class S>
LossBreakdown<S> detection_loss(const RawPredictionsT<S>& preds,
                                const TargetMaps& targets, int image_size,
                                const LossWeights& weights) {
  const TensorT<S>* levels[3] = {&preds.p2, &preds.p3, &preds.p4};
  const int K = preds.num_classes();
  if (K <= 0) fail_contract("detection_loss: predictions need 5+K channels");
  for (int l = 0; l < 3; ++l)
    if (levels[l]->shape().c != 5 + K)
      fail_contract("detection_loss: level channel mismatch");

  LossBreakdown<S> out;
  // dL/dpred, same layout as each level; filled during the forward pass and
  // replayed (scaled by the incoming gradient) in backward.
  std::array<std::vector<S>, 3> dgrad;
  for (int l = 0; l < 3; ++l)
    dgrad[static_cast<size_t>(l)].assign(
        static_cast<size_t>(levels[l]->numel()), S(0));

  // Objectness BCE over every cell; positives get target 1 below.
  for (int l = 0; l < 3; ++l) {
    const TensorT<S>& t = *levels[l];
    const Shape4 s = t.shape();
    std::vector<char> positive(static_cast<size_t>(s.n * s.h * s.w), 0);
    for (const TargetCell& cell : targets.positives[static_cast<size_t>(l)]) {
      if (cell.image >= s.n || cell.cy >= s.h || cell.cx >= s.w)
        fail_contract("detection_loss: target cell outside prediction grid");
      positive[static_cast<size_t>((cell.image * s.h + cell.cy) * s.w +
                                   cell.cx)] = 1;
    }
    const S* d = t.data();
    S* gd = dgrad[static_cast<size_t>(l)].data();
    for (int64_t n = 0; n < s.n; ++n)
      for (int64_t y = 0; y < s.h; ++y)
        for (int64_t x = 0; x < s.w; ++x) {
          const int64_t cell = (n * s.h + y) * s.w + x;
          const double tgt = positive[static_cast<size_t>(cell)] ? 1.0 : 0.0;
          const int64_t off = ((n * s.c + 4) * s.h + y) * s.w + x;
          const double z = static_cast<double>(d[off]);
          const double term = bce_with_logits(d[off], tgt);
          if (!std::isfinite(term))
            fail_nonfinite(l, static_cast<int>(n), static_cast<int>(y),
                           static_cast<int>(x), "objectness");
          out.obj += term;
          gd[off] += static_cast<S>(weights.obj * (sigmoid_d(z) - tgt));
        }
  }

  // Box IoU + classification BCE on positives.
  for (int l = 0; l < 3; ++l) {
    const int stride = kLevelStrides[static_cast<size_t>(l)];
    const TensorT<S>& t = *levels[l];
    const Shape4 s = t.shape();
    const S* d = t.data();
    S* gd = dgrad[static_cast<size_t>(l)].data();
    for (const TargetCell& cell : targets.positives[static_cast<size_t>(l)]) {
      ++out.num_pos;
      const int64_t n = cell.image, y = cell.cy, x = cell.cx;
      auto off = [&](int64_t c) {
        return ((n * s.c + c) * s.h + y) * s.w + x;
      };
      const double tx = d[off(0)], ty = d[off(1)];
      const double tw = d[off(2)], th = d[off(3)];
      const double sx = sigmoid_d(tx), sy = sigmoid_d(ty);
      Box pred;
      pred.cx = (x + sx) * stride;
      pred.cy = (y + sy) * stride;
      const double rw = stride * std::exp(tw);
      const double rh = stride * std::exp(th);
      pred.w = std::min(rw, static_cast<double>(image_size));
      pred.h = std::min(rh, static_cast<double>(image_size));
      const Box gt{cell.box.cx, cell.box.cy, cell.box.w, cell.box.h};
      const IouGrad ig = iou_with_grad(pred, gt);
      const double box_term = 1.0 - ig.iou;
      if (!std::isfinite(box_term))
        fail_nonfinite(l, cell.image, cell.cy, cell.cx, "box");
      out.box += box_term;
      // Chain rule through the decode.
      const double db_dtx = -ig.dcx * stride * sx * (1.0 - sx);
      const double db_dty = -ig.dcy * stride * sy * (1.0 - sy);
      const double db_dtw = rw < image_size ? -ig.dw * rw : 0.0;
      const double db_dth = rh < image_size ? -ig.dh * rh : 0.0;
      gd[off(0)] += static_cast<S>(weights.box * db_dtx);
      gd[off(1)] += static_cast<S>(weights.box * db_dty);
      gd[off(2)] += static_cast<S>(weights.box * db_dtw);
      gd[off(3)] += static_cast<S>(weights.box * db_dth);

      for (int k = 0; k < K; ++k) {
        const double tgt = k == cell.box.class_id ? 1.0 : 0.0;
        const double z = static_cast<double>(d[off(5 + k)]);
        const double term = bce_with_logits(d[off(5 + k)], tgt);
        if (!std::isfinite(term))
          fail_nonfinite(l, cell.image, cell.cy, cell.cx, "class");
        out.cls += term;
        gd[off(5 + k)] += static_cast<S>(weights.cls * (sigmoid_d(z) - tgt));
      }
    }
  }

  out.total = weights.box * out.box + weights.obj * out.obj +
              weights.cls * out.cls;
  if (!std::isfinite(out.total))
    throw std::runtime_error("detection_loss: non-finite total");

  TensorT<S> p2 = preds.p2, p3 = preds.p3, p4 = preds.p4;
  auto grads = std::make_shared<std::array<std::vector<S>, 3>>(
      std::move(dgrad));
  out.value = TensorT<S>::make_result(
      {1, 1, 1, 1}, {static_cast<S>(out.total)}, {preds.p2, preds.p3, preds.p4},
      [p2, p3, p4, grads](detail::Node<S>& node) {
        const S g = node.grad[0];
        TensorT<S> lv[3] = {p2, p3, p4};
        for (int l = 0; l < 3; ++l) {
          if (!lv[l].requires_grad()) continue;
          S* dst = lv[l].grad();
          const std::vector<S>& src = (*grads)[static_cast<size_t>(l)];
          for (size_t i = 0; i < src.size(); ++i) dst[i] += g * src[i];
        }
      });
  return out;
}

template <class S>
std::vector<Detection> decode_predictions(const RawPredictionsT<S>& preds,
                                          double conf_thresh, int image_size) {
  if (conf_thresh < 0 || conf_thresh > 1)
    fail_invalid("decode: conf_thresh must be in [0,1]");
  const TensorT<S>* levels[3] = {&preds.p2, &preds.p3, &preds.p4};
  const int K = preds.num_classes();
  std::vector<Detection> out;
  for (int l = 0; l < 3; ++l) {
    const int stride = kLevelStrides[static_cast<size_t>(l)];
    const TensorT<S>& t = *levels[l];
    const Shape4 s = t.shape();
    const S* d = t.data();
    for (int64_t n = 0; n < s.n; ++n)
      for (int64_t y = 0; y < s.h; ++y)
        for (int64_t x = 0; x < s.w; ++x) {
          auto off = [&](int64_t c) {
            return ((n * s.c + c) * s.h + y) * s.w + x;
          };
          const double obj = sigmoid_d(static_cast<double>(d[off(4)]));
          double best = -1.0;
          int best_k = 0;
          for (int k = 0; k < K; ++k) {
            const double p = sigmoid_d(static_cast<double>(d[off(5 + k)]));
            if (p > best) {
              best = p;
              best_k = k;
            }
          }
          const double score = obj * best;
          if (score < conf_thresh) continue;
          Detection det;
          det.image_id = static_cast<int>(n);
          det.class_id = best_k;
          det.score = score;
          det.box.cx =
              (x + sigmoid_d(static_cast<double>(d[off(0)]))) * stride;
          det.box.cy =
              (y + sigmoid_d(static_cast<double>(d[off(1)]))) * stride;
          det.box.w = std::min(stride * std::exp(static_cast<double>(d[off(2)])),
                               static_cast<double>(image_size));
          det.box.h = std::min(stride * std::exp(static_cast<double>(d[off(3)])),
                               static_cast<double>(image_size));
          out.push_back(det);
        }
  }
  return out;
}

template <class S>
std::unique_ptr<ModelT<S>> build_model(const ArchConfig& cfg) {
  cfg.validate();
  auto model = std::make_unique<ModelT<S>>();
  model->cfg = cfg;
  Rng rng(cfg.seed);
  model->backbone = make_backbone<S>(cfg, rng);
  const BackboneChannels bc = cfg.backbone_channels();
  if (cfg.neck == "prn")
    model->prn = std::make_unique<PRNParamsT<S>>(make_prn<S>(
        cfg.prn.widths, bc, cfg.prn.stages, cfg.neck_down, rng));
  else
    model->pan = std::make_unique<PanFPNParamsT<S>>(
        make_panfpn<S>(cfg.prn.widths, bc, cfg.neck_down, rng));
  model->head = make_head<S>(cfg.prn.widths, cfg.num_classes, rng);

  ParamSetT<S>& ps = model->params;
  for (int i = 0; i < 5; ++i) {
    auto& step = model->backbone.steps[static_cast<size_t>(i)];
    const std::string prefix = "backbone.step" + std::to_string(i + 1);
    if (step.use_essamp)
      register_essamp(ps, prefix + ".down", step.essamp);
    else
      register_conv_block(ps, prefix + ".down", step.down);
    register_conv_block(ps, prefix + ".post", step.post);
  }
  if (model->prn)
    register_prn(ps, "neck", *model->prn);
  else
    register_panfpn(ps, "neck", *model->pan);
  ps.add_conv("head.p2", model->head.p2);
  ps.add_conv("head.p3", model->head.p3);
  ps.add_conv("head.p4", model->head.p4);
  return model;
}

#define PRNET_INSTANTIATE(S)                                                  \
  template struct RawPredictionsT<S>;                                         \
  template struct BackboneParamsT<S>;                                         \
  template BackboneParamsT<S> make_backbone(const ArchConfig&, Rng&);         \
  template FeatureSetT<S> backbone_forward(BackboneParamsT<S>&,               \
                                           const TensorT<S>&);               \
  template HeadParamsT<S> make_head(const NeckWidths&, int, Rng&);            \
  template RawPredictionsT<S> head_forward(HeadParamsT<S>&,                   \
                                           const NeckStateT<S>&);             \
  template LossBreakdown<S> detection_loss(const RawPredictionsT<S>&,         \
                                           const TargetMaps&, int,            \
                                           const LossWeights&);               \
  template std::vector<Detection> decode_predictions(                         \
      const RawPredictionsT<S>&, double, int);                                \
  template std::unique_ptr<ModelT<S>> build_model(const ArchConfig&);

PRNET_INSTANTIATE(float)
PRNET_INSTANTIATE(double)

#undef PRNET_INSTANTIATE

}  // namespace prnet

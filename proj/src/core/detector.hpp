#pragma once

#include <array>
#include <memory>

#include "core/config.hpp"
#include "core/cost_recorder.hpp"
#include "core/essamp.hpp"
#include "core/metrics.hpp"
#include "core/neck.hpp"

namespace prnet {

// Ground-truth box in input-image pixels.
struct BoxLabel {
  int class_id = 0;
  double cx = 0, cy = 0, w = 0, h = 0;
};

// Per-level logits (N, 5+K, H, W): tx, ty, tw, th, obj, then K class logits.
template <class S>
struct RawPredictionsT {
  TensorT<S> p2, p3, p4;
  int num_classes() const { return static_cast<int>(p2.shape().c) - 5; }
};

constexpr std::array<int, 3> kLevelStrides = {4, 8, 16};
// Max-side thresholds routing boxes to P2 / P3 / P4.
constexpr double kLevelSplitSmall = 16.0;
constexpr double kLevelSplitLarge = 32.0;

// One downsampling step: ESSamp or stride-2 conv, then a stride-1 conv block.
template <class S>
struct BackboneStepT {
  bool use_essamp = false;
  ESSampParamsT<S> essamp;
  ConvBlockT<S> down;
  ConvBlockT<S> post;
};

template <class S>
struct BackboneParamsT {
  std::array<BackboneStepT<S>, 5> steps;
};

template <class S>
BackboneParamsT<S> make_backbone(const ArchConfig& cfg, Rng& rng);

template <class S>
FeatureSetT<S> backbone_forward(BackboneParamsT<S>& params,
                                const TensorT<S>& images);

// One 1x1 conv per level to 5+K channels; raw logits, bias allowed.
template <class S>
struct HeadParamsT {
  ConvWeightsT<S> p2, p3, p4;
};

template <class S>
HeadParamsT<S> make_head(const NeckWidths& w, int num_classes, Rng& rng);

template <class S>
RawPredictionsT<S> head_forward(HeadParamsT<S>& params,
                                const NeckStateT<S>& neck_out);

// Positive cell assignment. Each label goes to exactly one level by max-side
// thresholds, then to the cell containing its center. Cell collisions keep
// the larger-area box; losers and degenerate boxes are counted in `dropped`.
struct TargetCell {
  int image = 0;
  int cy = 0, cx = 0;
  BoxLabel box;
};

struct TargetMaps {
  std::array<std::vector<TargetCell>, 3> positives;  // P2, P3, P4
  int dropped = 0;
};

TargetMaps assign_targets(const std::vector<std::vector<BoxLabel>>& labels,
                          int image_size);

struct LossWeights {
  double box = 5.0, obj = 1.0, cls = 1.0;
};

template <class S>
struct LossBreakdown {
  double total = 0, box = 0, obj = 0, cls = 0;
  int num_pos = 0;
  TensorT<S> value;  // scalar, differentiable
};

// total = box_w * sum(1 - IoU) over positives
//       + obj_w * sum BCE(obj logit, is_positive) over every cell
//       + cls_w * sum BCE(class logits, one-hot) over positives.
// Decoded box: cx = (cellx + sigmoid(tx)) * stride, w = stride * exp(tw)
// clamped to the image size.
template <class S>
LossBreakdown<S> detection_loss(const RawPredictionsT<S>& preds,
                                const TargetMaps& targets, int image_size,
                                const LossWeights& weights = {});

// Per-cell score = sigmoid(obj) * max class sigmoid; boxes above conf_thresh
// in image coordinates, class = argmax. image_id is the batch index.
template <class S>
std::vector<Detection> decode_predictions(const RawPredictionsT<S>& preds,
                                          double conf_thresh, int image_size);

template <class S>
struct ModelT {
  ArchConfig cfg;
  BackboneParamsT<S> backbone;
  std::unique_ptr<PRNParamsT<S>> prn;
  std::unique_ptr<PanFPNParamsT<S>> pan;
  HeadParamsT<S> head;
  ParamSetT<S> params;

  ModelT() = default;
  ModelT(const ModelT&) = delete;
  ModelT& operator=(const ModelT&) = delete;

  FeatureSetT<S> features(const TensorT<S>& images) {
    CostScope sc("backbone");
    return backbone_forward(backbone, images);
  }
  NeckStateT<S> neck(const FeatureSetT<S>& f) {
    CostScope sc("neck");
    if (prn) return prn_forward(f, *prn);
    return panfpn_forward(f, *pan);
  }
  RawPredictionsT<S> forward(const TensorT<S>& images) {
    FeatureSetT<S> f = features(images);
    NeckStateT<S> n = neck(f);
    return head_forward(head, n);
  }
  void set_training(bool training) { params.set_training(training); }
  int p2in_consumers() const {
    return prn ? prn->p2in_consumers() : pan->p2in_consumers();
  }
};

using Model = ModelT<float>;

// Deterministic assembly from the seed in cfg.
template <class S>
std::unique_ptr<ModelT<S>> build_model(const ArchConfig& cfg);

}  // namespace prnet

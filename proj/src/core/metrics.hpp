#pragma once

#include <map>
#include <optional>
#include <vector>

#include "core/tensor.hpp"

namespace prnet {

// Axis-aligned box, center/size parameterization, pixel units.
struct Box {
  double cx = 0, cy = 0, w = 0, h = 0;
};

struct Detection {
  int image_id = 0;
  int class_id = 0;
  Box box;
  double score = 0;
};

struct GroundTruth {
  int image_id = 0;
  int class_id = 0;
  Box box;
};

double iou(const Box& a, const Box& b);

// Greedy NMS by descending score; score ties keep the earlier entry. Applied
// per image and per class internally.
std::vector<Detection> nms(const std::vector<Detection>& dets,
                           double iou_thresh);

// COCO-style AP at one IoU threshold: greedy matching by descending score,
// each ground truth matched at most once, 101-point interpolated PR area,
// averaged over classes that have at least one ground truth. Empty optional
// when there is no ground truth at all.
std::optional<double> average_precision(const std::vector<Detection>& dets,
                                        const std::vector<GroundTruth>& gts,
                                        double iou_thresh);

struct ApSummary {
  std::optional<double> ap;    // mean over 0.50:0.05:0.95
  std::optional<double> ap50;
  std::optional<double> ap75;
  std::map<int, std::optional<double>> per_class;  // at the 0.50:0.95 mean
};

ApSummary ap_sweep(const std::vector<Detection>& dets,
                   const std::vector<GroundTruth>& gts);

// Per-class AP at one threshold; classes without ground truth get nullopt.
std::map<int, std::optional<double>> per_class_ap(
    const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
    double iou_thresh);

// Objectness sigmoid of one prediction level (N=1), upsampled nearest to the
// input resolution. Values in [0,1].
struct Heatmap {
  int h = 0, w = 0;
  std::vector<float> values;
};

Heatmap heatmap_from_predictions(const Tensor& level_preds, int stride);

}  // namespace prnet

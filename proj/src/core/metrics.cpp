#include "core/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace prnet {

double iou(const Box& a, const Box& b) {
  const double ax1 = a.cx - a.w / 2, ax2 = a.cx + a.w / 2;
  const double ay1 = a.cy - a.h / 2, ay2 = a.cy + a.h / 2;
  const double bx1 = b.cx - b.w / 2, bx2 = b.cx + b.w / 2;
  const double by1 = b.cy - b.h / 2, by2 = b.cy + b.h / 2;
  const double iw = std::min(ax2, bx2) - std::max(ax1, bx1);
  const double ih = std::min(ay2, by2) - std::max(ay1, by1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return inter / uni;
}

std::vector<Detection> nms(const std::vector<Detection>& dets,
                           double iou_thresh) {
  // Stable order within (image, class) groups; greedy by score.
  std::vector<size_t> idx(dets.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    return dets[a].score > dets[b].score;
  });
  std::vector<bool> kept(dets.size(), false);
  std::vector<bool> removed(dets.size(), false);
  for (size_t ii = 0; ii < idx.size(); ++ii) {
    const size_t i = idx[ii];
    if (removed[i]) continue;
    kept[i] = true;
    for (size_t jj = ii + 1; jj < idx.size(); ++jj) {
      const size_t j = idx[jj];
      if (removed[j]) continue;
      if (dets[j].image_id != dets[i].image_id ||
          dets[j].class_id != dets[i].class_id)
        continue;
      if (iou(dets[j].box, dets[i].box) > iou_thresh) removed[j] = true;
    }
  }
  std::vector<Detection> out;
  for (size_t ii = 0; ii < idx.size(); ++ii)
    if (kept[idx[ii]]) out.push_back(dets[idx[ii]]);
  return out;
}

namespace {

// AP for one class at one threshold; nullopt when the class has no GT.
std::optional<double> class_ap(const std::vector<Detection>& dets,
                               const std::vector<GroundTruth>& gts,
                               int class_id, double iou_thresh) {
  std::vector<size_t> gt_idx;
  for (size_t i = 0; i < gts.size(); ++i)
    if (gts[i].class_id == class_id) gt_idx.push_back(i);
  if (gt_idx.empty()) return std::nullopt;

  std::vector<size_t> det_idx;
  for (size_t i = 0; i < dets.size(); ++i)
    if (dets[i].class_id == class_id) det_idx.push_back(i);
  std::stable_sort(det_idx.begin(), det_idx.end(), [&](size_t a, size_t b) {
    return dets[a].score > dets[b].score;
  });

  std::vector<bool> matched(gt_idx.size(), false);
  std::vector<int> is_tp(det_idx.size(), 0);
  for (size_t di = 0; di < det_idx.size(); ++di) {
    const Detection& d = dets[det_idx[di]];
    double best = -1.0;
    int best_gi = -1;
    for (size_t gi = 0; gi < gt_idx.size(); ++gi) {
      if (matched[gi]) continue;
      const GroundTruth& g = gts[gt_idx[gi]];
      if (g.image_id != d.image_id) continue;
      const double v = iou(d.box, g.box);
      if (v < iou_thresh) continue;
      if (v > best) {  // IoU ties keep the earlier ground truth
        best = v;
        best_gi = static_cast<int>(gi);
      }
    }
    if (best_gi >= 0) {
      matched[static_cast<size_t>(best_gi)] = true;
      is_tp[di] = 1;
    }
  }

  const double num_gt = static_cast<double>(gt_idx.size());
  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (size_t di = 0; di < det_idx.size(); ++di) {
    if (is_tp[di])
      ++tp;
    else
      ++fp;
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / num_gt);
  }

  // 101-point interpolation: precision at recall r is the max precision over
  // all operating points with recall >= r.
  double ap = 0.0;
  for (int ri = 0; ri <= 100; ++ri) {
    const double r = ri / 100.0;
    double p = 0.0;
    for (size_t i = 0; i < recall.size(); ++i)
      if (recall[i] >= r) p = std::max(p, precision[i]);
    ap += p;
  }
  return ap / 101.0;
}

std::set<int> classes_with_gt(const std::vector<GroundTruth>& gts) {
  std::set<int> cs;
  for (const auto& g : gts) cs.insert(g.class_id);
  return cs;
}

}  // namespace

std::optional<double> average_precision(const std::vector<Detection>& dets,
                                        const std::vector<GroundTruth>& gts,
                                        double iou_thresh) {
  const std::set<int> cs = classes_with_gt(gts);
  if (cs.empty()) return std::nullopt;
  double acc = 0.0;
  for (int c : cs) acc += class_ap(dets, gts, c, iou_thresh).value();
  return acc / static_cast<double>(cs.size());
}

std::map<int, std::optional<double>> per_class_ap(
    const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
    double iou_thresh) {
  std::map<int, std::optional<double>> out;
  for (int c : classes_with_gt(gts)) out[c] = class_ap(dets, gts, c, iou_thresh);
  return out;
}

ApSummary ap_sweep(const std::vector<Detection>& dets,
                   const std::vector<GroundTruth>& gts) {
  ApSummary s;
  const std::set<int> cs = classes_with_gt(gts);
  if (cs.empty()) return s;

  std::map<int, double> per_class_acc;
  double mean_acc = 0.0;
  for (int t = 0; t < 10; ++t) {
    const double thresh = 0.5 + 0.05 * t;
    double acc = 0.0;
    for (int c : cs) {
      const double v = class_ap(dets, gts, c, thresh).value();
      per_class_acc[c] += v;
      acc += v;
    }
    acc /= static_cast<double>(cs.size());
    mean_acc += acc;
    if (t == 0) s.ap50 = acc;
    if (t == 5) s.ap75 = acc;
  }
  s.ap = mean_acc / 10.0;
  for (int c : cs) s.per_class[c] = per_class_acc[c] / 10.0;
  return s;
}

Heatmap heatmap_from_predictions(const Tensor& level_preds, int stride) {
  const Shape4 s = level_preds.shape();
  if (s.n != 1) fail_invalid("heatmap: expected a single-image prediction");
  if (s.c < 5) fail_contract("heatmap: prediction needs at least 5 channels");
  Heatmap m;
  m.h = static_cast<int>(s.h) * stride;
  m.w = static_cast<int>(s.w) * stride;
  m.values.assign(static_cast<size_t>(m.h) * m.w, 0.f);
  for (int64_t y = 0; y < s.h; ++y)
    for (int64_t x = 0; x < s.w; ++x) {
      const float obj = level_preds.at(0, 4, y, x);
      const float v = 1.0f / (1.0f + std::exp(-obj));
      for (int dy = 0; dy < stride; ++dy)
        for (int dx = 0; dx < stride; ++dx)
          m.values[static_cast<size_t>(y * stride + dy) * m.w + x * stride +
                   dx] = v;
    }
  return m;
}

}  // namespace prnet

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "core/synth.hpp"

namespace prnet {

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.937;
  double weight_decay = 0.0005;
};

// One velocity buffer per learnable, aligned with the registry order.
struct SgdState {
  std::vector<std::vector<float>> velocity;
};

// v <- momentum*v + grad + weight_decay*w;  w <- w - lr*v.
// Weight decay enters the momentum buffer (classic coupled form).
void sgd_momentum_step(ParamSet& params, SgdState& state, const SgdConfig& cfg);

struct EvalSettings {
  double conf_thresh = 0.05;
  double nms_iou = 0.5;
  int max_pre_nms_per_class = 300;  // per image, by score
  int max_per_image = 100;          // after NMS, by score
};

struct EvalReport {
  ApSummary ap;
  int num_images = 0;
};

EvalReport evaluate_model(Model& model, const DatasetManifest& data,
                          const std::vector<size_t>& indices,
                          const EvalSettings& settings = {});

std::string eval_report_json(const EvalReport& report);
std::string eval_report_text(const EvalReport& report);

struct HistoryRow {
  int epoch = 0;
  double loss_total = 0, loss_box = 0, loss_obj = 0, loss_cls = 0;
  double val_ap50 = 0;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  double best_ap50 = 0;
  int best_epoch = 0;
  int epochs_run = 0;
  std::string best_checkpoint;  // path to the retained best-AP50 checkpoint
};

std::string history_csv(const std::vector<HistoryRow>& rows);

// Seeded epoch shuffling, per-epoch validation AP50, early stop after
// `patience` epochs without improvement; best checkpoint kept at
// out_dir/ckpt_best.json. history.csv written even if a later epoch aborts
// on a non-finite loss.
TrainResult train_loop(Model& model, const DatasetSplit& data,
                       const TrainConfig& cfg, const std::string& out_dir);

// Repeated steps on one fixed batch; returns the loss after each step with
// the initial loss at index 0. Trainability probe.
std::vector<double> overfit_batch(Model& model, const Tensor& images,
                                  const std::vector<std::vector<BoxLabel>>& labels,
                                  int steps, const SgdConfig& cfg);

}  // namespace prnet

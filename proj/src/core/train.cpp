#include "core/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include <json.hpp>

namespace prnet {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

void sgd_momentum_step(ParamSet& params, SgdState& state,
                       const SgdConfig& cfg) {
  if (state.velocity.size() != params.learnables.size()) {
    state.velocity.clear();
    for (const auto& p : params.learnables)
      state.velocity.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.f);
  }
  const float lr = static_cast<float>(cfg.lr);
  const float mom = static_cast<float>(cfg.momentum);
  const float wd = static_cast<float>(cfg.weight_decay);
  for (size_t i = 0; i < params.learnables.size(); ++i) {
    Tensor t = params.learnables[i].tensor;
    float* w = t.data();
    const std::vector<float>& g = t.grad_vec();
    if (g.empty()) continue;  // parameter saw no gradient this step
    std::vector<float>& v = state.velocity[i];
    for (size_t k = 0; k < v.size(); ++k) {
      if (!std::isfinite(g[k]))
        throw std::runtime_error("sgd: non-finite gradient in " +
                                 params.learnables[i].name);
      v[k] = mom * v[k] + g[k] + wd * w[k];
      w[k] -= lr * v[k];
    }
  }
}

EvalReport evaluate_model(Model& model, const DatasetManifest& data,
                          const std::vector<size_t>& indices,
                          const EvalSettings& settings) {
  const bool was_training = !model.params.bn_states.empty() &&
                            model.params.bn_states[0]->training;
  model.set_training(false);
  NoGradGuard ng;
  std::vector<Detection> dets;
  std::vector<GroundTruth> gts;
  for (size_t pos = 0; pos < indices.size(); ++pos) {
    auto [images, labels] = load_batch(data, {indices[pos]});
    RawPredictionsT<float> preds = model.forward(images);
    std::vector<Detection> img_dets = decode_predictions(
        preds, settings.conf_thresh, data.spec.image_size);
    // Top-scoring candidates per class go into NMS.
    std::stable_sort(img_dets.begin(), img_dets.end(),
                     [](const Detection& a, const Detection& b) {
                       return a.score > b.score;
                     });
    std::vector<Detection> capped;
    std::map<int, int> per_class;
    for (const Detection& d : img_dets)
      if (per_class[d.class_id]++ < settings.max_pre_nms_per_class)
        capped.push_back(d);
    std::vector<Detection> kept = nms(capped, settings.nms_iou);
    if (static_cast<int>(kept.size()) > settings.max_per_image)
      kept.resize(static_cast<size_t>(settings.max_per_image));
    for (Detection d : kept) {
      d.image_id = static_cast<int>(pos);
      dets.push_back(d);
    }
    for (const BoxLabel& b : labels[0])
      gts.push_back({static_cast<int>(pos), b.class_id, {b.cx, b.cy, b.w, b.h}});
  }
  EvalReport report;
  report.num_images = static_cast<int>(indices.size());
  report.ap = ap_sweep(dets, gts);
  model.set_training(was_training);
  return report;
}

namespace {

ordered_json opt_to_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string eval_report_json(const EvalReport& report) {
  ordered_json j;
  j["AP"] = opt_to_json(report.ap.ap);
  j["AP50"] = opt_to_json(report.ap.ap50);
  j["AP75"] = opt_to_json(report.ap.ap75);
  ordered_json per_class = ordered_json::object();
  for (const auto& [cls, ap] : report.ap.per_class)
    per_class[std::to_string(cls)] = opt_to_json(ap);
  j["per_class"] = per_class;
  j["num_images"] = report.num_images;
  return j.dump(2) + "\n";
}

std::string eval_report_text(const EvalReport& report) {
  auto fmt = [](const std::optional<double>& v) {
    return v ? fmt6(*v) : std::string("no-gt");
  };
  std::ostringstream os;
  os << "images " << report.num_images << "\n";
  os << "AP     " << fmt(report.ap.ap) << "\n";
  os << "AP50   " << fmt(report.ap.ap50) << "\n";
  os << "AP75   " << fmt(report.ap.ap75) << "\n";
  for (const auto& [cls, ap] : report.ap.per_class)
    os << "class " << cls << " AP " << fmt(ap) << "\n";
  return os.str();
}

std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::ostringstream os;
  os << "epoch,loss_total,loss_box,loss_obj,loss_cls,val_ap50\n";
  for (const auto& r : rows)
    os << r.epoch << "," << fmt6(r.loss_total) << "," << fmt6(r.loss_box)
       << "," << fmt6(r.loss_obj) << "," << fmt6(r.loss_cls) << ","
       << fmt6(r.val_ap50) << "\n";
  return os.str();
}

namespace {

void shuffle_indices(std::vector<size_t>& idx, Rng& rng) {
  for (size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1],
              idx[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
}

}  // namespace

TrainResult train_loop(Model& model, const DatasetSplit& data,
                       const TrainConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  if (data.train_indices.empty())
    fail_invalid("train: training split is empty");
  fs::create_directories(out_dir);

  TrainResult result;
  result.best_ap50 = -1.0;
  result.best_checkpoint = (fs::path(out_dir) / "ckpt_best.json").string();
  SgdState sgd;
  const SgdConfig sgd_cfg{cfg.lr, cfg.momentum, cfg.weight_decay};
  model.set_training(true);

  const int image_size = data.train.spec.image_size;
  std::exception_ptr abort_error;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<size_t> order = data.train_indices;
    Rng shuffle_rng(derive_seed(cfg.seed * 2654435761u, static_cast<uint64_t>(epoch)));
    shuffle_indices(order, shuffle_rng);

    double ep_total = 0, ep_box = 0, ep_obj = 0, ep_cls = 0;
    size_t images_seen = 0;
    try {
      for (size_t start = 0; start < order.size();
           start += static_cast<size_t>(cfg.batch_size)) {
        const size_t end = std::min(order.size(),
                                    start + static_cast<size_t>(cfg.batch_size));
        std::vector<size_t> batch_idx(order.begin() + start,
                                      order.begin() + end);
        auto [images, labels] = load_batch(data.train, batch_idx);
        TargetMaps targets = assign_targets(labels, image_size);
        RawPredictionsT<float> preds = model.forward(images);
        LossBreakdown<float> loss = detection_loss(preds, targets, image_size);
        model.params.zero_grad();
        loss.value.backward();
        sgd_momentum_step(model.params, sgd, sgd_cfg);
        ep_total += loss.total;
        ep_box += loss.box;
        ep_obj += loss.obj;
        ep_cls += loss.cls;
        images_seen += batch_idx.size();
      }
    } catch (const std::exception&) {
      abort_error = std::current_exception();
    }
    if (abort_error) break;

    EvalReport val = evaluate_model(model, data.val, data.val_indices);
    const double ap50 = val.ap.ap50.value_or(0.0);

    HistoryRow row;
    row.epoch = epoch;
    row.loss_total = ep_total / static_cast<double>(images_seen);
    row.loss_box = ep_box / static_cast<double>(images_seen);
    row.loss_obj = ep_obj / static_cast<double>(images_seen);
    row.loss_cls = ep_cls / static_cast<double>(images_seen);
    row.val_ap50 = ap50;
    result.history.push_back(row);
    result.epochs_run = epoch;

    if (ap50 > result.best_ap50) {
      result.best_ap50 = ap50;
      result.best_epoch = epoch;
      save_checkpoint(model, result.best_checkpoint);
    } else if (epoch - result.best_epoch >= cfg.patience) {
      break;  // early stop; best checkpoint already on disk
    }
  }

  write_text_file((fs::path(out_dir) / "history.csv").string(),
                  history_csv(result.history));
  if (abort_error) std::rethrow_exception(abort_error);
  if (result.best_epoch == 0) save_checkpoint(model, result.best_checkpoint);
  return result;
}

std::vector<double> overfit_batch(Model& model, const Tensor& images,
                                  const std::vector<std::vector<BoxLabel>>& labels,
                                  int steps, const SgdConfig& cfg) {
  const int image_size = static_cast<int>(images.shape().h);
  TargetMaps targets = assign_targets(labels, image_size);
  model.set_training(true);
  SgdState sgd;
  std::vector<double> curve;
  for (int step = 0; step <= steps; ++step) {
    RawPredictionsT<float> preds = model.forward(images);
    LossBreakdown<float> loss = detection_loss(preds, targets, image_size);
    curve.push_back(loss.total);
    if (step == steps) break;
    model.params.zero_grad();
    loss.value.backward();
    sgd_momentum_step(model.params, sgd, cfg);
  }
  return curve;
}

}  // namespace prnet

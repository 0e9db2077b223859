#include "prnet/prnet.h"

#include <cstring>
#include <filesystem>
#include <string>

#include "core/analyzer.hpp"
#include "core/train.hpp"

namespace fs = std::filesystem;

struct prnet_model {
  std::unique_ptr<prnet::Model> impl;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

template <class Fn>
prnet_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return PRNET_OK;
  } catch (const std::invalid_argument& e) {
    g_last_error = e.what();
    return PRNET_ERR_INVALID_ARGUMENT;
  } catch (const prnet::ContractViolation& e) {
    g_last_error = e.what();
    return PRNET_ERR_CONTRACT;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return PRNET_ERR_IO;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    const std::string what = e.what();
    if (what.find("file") != std::string::npos ||
        what.find("corrupt") != std::string::npos)
      return PRNET_ERR_IO;
    return PRNET_ERR_RUNTIME;
  }
}

prnet_status require(bool cond, const char* msg) {
  if (cond) return PRNET_OK;
  g_last_error = msg;
  return PRNET_ERR_INVALID_ARGUMENT;
}

// Area-average resample of CHW planes to a square size (degradation demo).
std::vector<float> resample_area(const std::vector<float>& planes, int src,
                                 int dst) {
  std::vector<float> out(static_cast<size_t>(3) * dst * dst, 0.f);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < dst; ++y)
      for (int x = 0; x < dst; ++x) {
        const int y0 = y * src / dst, y1 = std::max(y0 + 1, (y + 1) * src / dst);
        const int x0 = x * src / dst, x1 = std::max(x0 + 1, (x + 1) * src / dst);
        double acc = 0;
        for (int yy = y0; yy < y1; ++yy)
          for (int xx = x0; xx < x1; ++xx)
            acc += planes[(static_cast<size_t>(c) * src + yy) * src + xx];
        out[(static_cast<size_t>(c) * dst + y) * dst + x] =
            static_cast<float>(acc / ((y1 - y0) * (x1 - x0)));
      }
  return out;
}

}  // namespace

extern "C" {

const char* prnet_version(void) { return "0.1.0"; }

const char* prnet_last_error(void) { return g_last_error.c_str(); }

void prnet_string_free(char* s) { std::free(s); }

prnet_status prnet_gen_dataset(const char* spec_json, const char* out_dir,
                               int write_ppm) {
  if (auto st = require(spec_json && out_dir, "gen_dataset: null argument"))
    return st;
  return guarded([&] {
    prnet::DatasetSpec spec = prnet::DatasetSpec::from_json_text(spec_json);
    prnet::gen_dataset(spec, out_dir, write_ppm != 0);
  });
}

prnet_status prnet_model_build(const char* config_json, prnet_model** out) {
  if (auto st = require(config_json && out, "model_build: null argument"))
    return st;
  return guarded([&] {
    prnet::ArchConfig cfg = prnet::ArchConfig::from_json_text(config_json);
    auto impl = prnet::build_model<float>(cfg);
    auto handle = new prnet_model;
    handle->impl = std::move(impl);
    *out = handle;
  });
}

prnet_status prnet_model_load(const char* ckpt_json_path, prnet_model** out) {
  if (auto st = require(ckpt_json_path && out, "model_load: null argument"))
    return st;
  return guarded([&] {
    auto impl = prnet::load_checkpoint(ckpt_json_path);
    auto handle = new prnet_model;
    handle->impl = std::move(impl);
    *out = handle;
  });
}

prnet_status prnet_model_save(prnet_model* model, const char* ckpt_json_path) {
  if (auto st = require(model && ckpt_json_path, "model_save: null argument"))
    return st;
  return guarded([&] { prnet::save_checkpoint(*model->impl, ckpt_json_path); });
}

void prnet_model_free(prnet_model* model) { delete model; }

prnet_status prnet_model_param_count(prnet_model* model, long long* out) {
  if (auto st = require(model && out, "param_count: null argument")) return st;
  *out = model->impl->params.param_count();
  return PRNET_OK;
}

prnet_status prnet_train(prnet_model* model, const char* data_dir,
                         const char* train_config_json, const char* out_dir,
                         int override_epochs) {
  if (auto st = require(model && data_dir && train_config_json && out_dir,
                        "train: null argument"))
    return st;
  return guarded([&] {
    prnet::TrainConfig cfg =
        prnet::TrainConfig::from_json_text(train_config_json);
    if (override_epochs >= 0) {
      cfg.epochs = override_epochs;
      cfg.validate();
    }
    prnet::DatasetSplit split = prnet::load_split(data_dir);
    prnet::train_loop(*model->impl, split, cfg, out_dir);
  });
}

prnet_status prnet_eval(prnet_model* model, const char* data_dir,
                        const char* report_json_path, char** summary_out) {
  if (auto st = require(model && data_dir, "eval: null argument")) return st;
  return guarded([&] {
    prnet::DatasetSplit split = prnet::load_split(data_dir);
    prnet::EvalReport report =
        prnet::evaluate_model(*model->impl, split.val, split.val_indices);
    if (report_json_path)
      prnet::write_text_file(report_json_path,
                             prnet::eval_report_json(report));
    if (summary_out) *summary_out = dup_string(prnet::eval_report_text(report));
  });
}

prnet_status prnet_analyze(const char* config_json, int input_size,
                           const char* sweep, const char* csv_path,
                           char** table_out) {
  if (auto st = require(config_json != nullptr, "analyze: null config"))
    return st;
  return guarded([&] {
    prnet::ArchConfig cfg = prnet::ArchConfig::from_json_text(config_json);
    std::string text, csv;
    if (!sweep) {
      auto model = prnet::build_model<float>(cfg);
      prnet::ModelStats stats = prnet::analyze_model(*model, input_size);
      text = stats.to_text();
      csv = stats.to_csv();
    } else if (std::string(sweep) == "stages") {
      auto rows = prnet::sweep_stages(cfg, {0, 1, 2, 3}, input_size);
      text = prnet::sweep_to_text(rows);
      csv = prnet::sweep_to_csv(rows);
    } else if (std::string(sweep) == "depth") {
      auto rows = prnet::sweep_depth(cfg, {1, 2, 3}, input_size);
      text = prnet::sweep_to_text(rows);
      csv = prnet::sweep_to_csv(rows);
    } else {
      prnet::fail_invalid("analyze: sweep must be 'stages' or 'depth'");
    }
    if (csv_path) prnet::write_text_file(csv_path, csv);
    if (table_out) *table_out = dup_string(text);
  });
}

prnet_status prnet_export_heatmap(prnet_model* model, const char* image_path,
                                  const char* level, const char* out_path) {
  if (auto st = require(model && image_path && level && out_path,
                        "export_heatmap: null argument"))
    return st;
  return guarded([&] {
    const std::string lvl = level;
    prnet::Tensor image = prnet::load_tensor_file(image_path);
    if (image.shape().n != 1 || image.shape().c != 3)
      prnet::fail_contract("export_heatmap: image must be 1x3xHxW, got " +
                           image.shape().str());
    model->impl->set_training(false);
    prnet::RawPredictionsT<float> preds;
    {
      prnet::NoGradGuard ng;
      preds = model->impl->forward(image);
    }
    prnet::Tensor level_preds;
    int stride = 0;
    if (lvl == "P2") {
      level_preds = preds.p2;
      stride = 4;
    } else if (lvl == "P3") {
      level_preds = preds.p3;
      stride = 8;
    } else if (lvl == "P4") {
      level_preds = preds.p4;
      stride = 16;
    } else {
      prnet::fail_invalid("export_heatmap: level must be P2, P3 or P4");
    }
    prnet::Heatmap map = prnet::heatmap_from_predictions(level_preds, stride);
    prnet::export_pgm(out_path, map.h, map.w, map.values);
  });
}

prnet_status prnet_demo_degrade(const char* image_path, const char* out_dir) {
  if (auto st = require(image_path && out_dir, "demo_degrade: null argument"))
    return st;
  return guarded([&] {
    prnet::Tensor image = prnet::load_tensor_file(image_path);
    const prnet::Shape4 s = image.shape();
    if (s.n != 1 || s.c != 3 || s.h != s.w)
      prnet::fail_contract("demo_degrade: image must be 1x3xSxS, got " +
                           s.str());
    fs::create_directories(out_dir);
    const int src = static_cast<int>(s.h);
    prnet::export_ppm((fs::path(out_dir) / "full.ppm").string(), src, src,
                      image.vec());
    for (int dst : {160, 80}) {
      auto planes = resample_area(image.vec(), src, dst);
      prnet::export_ppm(
          (fs::path(out_dir) / (std::to_string(dst) + ".ppm")).string(), dst,
          dst, planes);
    }
  });
}

}  // extern "C"

// Command-line front end; all functionality goes through the C API.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "prnet/prnet.h"

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::cerr << "error: cannot open " << path << "\n";
    std::exit(2);
  }
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int check(prnet_status status) {
  if (status == PRNET_OK) return 0;
  std::cerr << "error: " << prnet_last_error() << "\n";
  return 2;
}

struct ModelGuard {
  prnet_model* model = nullptr;
  ~ModelGuard() { prnet_model_free(model); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PRNet: progressive-refinement small-object detector"};
  app.require_subcommand(1);
  app.set_version_flag("--version", prnet_version());

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  std::string gen_spec, gen_out;
  bool gen_ppm = false;
  gen->add_option("--spec", gen_spec, "dataset spec JSON file")->required();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_flag("--ppm", gen_ppm, "also write PPM mirrors");

  auto* train = app.add_subcommand("train", "train a model");
  std::string tr_data, tr_model, tr_train, tr_out;
  int tr_epochs = -1;
  train->add_option("--data", tr_data, "dataset directory")->required();
  train->add_option("--model", tr_model, "model config JSON file")->required();
  train->add_option("--train", tr_train, "train config JSON file")->required();
  train->add_option("--out", tr_out, "output directory")->required();
  train->add_option("--epochs", tr_epochs, "override epoch count");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_data, ev_ckpt, ev_json;
  eval->add_option("--data", ev_data, "dataset directory")->required();
  eval->add_option("--ckpt", ev_ckpt, "checkpoint index (.json)")->required();
  eval->add_option("--json", ev_json, "write the JSON report here");

  auto* analyze = app.add_subcommand("analyze", "parameter/MAC analysis");
  std::string an_model, an_sweep, an_csv;
  int an_input = 256;
  analyze->add_option("--model", an_model, "model config JSON file")->required();
  analyze->add_option("--input", an_input, "square input size");
  analyze->add_option("--sweep", an_sweep, "ablation sweep: stages | depth");
  analyze->add_option("--csv", an_csv, "write CSV rows here");

  auto* exp = app.add_subcommand("export", "objectness heatmap of one image");
  std::string ex_ckpt, ex_image, ex_level = "P2", ex_out;
  exp->add_option("--ckpt", ex_ckpt, "checkpoint index (.json)")->required();
  exp->add_option("--image", ex_image, "image tensor file")->required();
  exp->add_option("--heatmap", ex_level, "level: P2 | P3 | P4");
  exp->add_option("--out", ex_out, "output PGM path")->required();

  auto* degrade =
      app.add_subcommand("demo-degrade", "resolution degradation demo");
  std::string dg_image, dg_out;
  degrade->add_option("--image", dg_image, "image tensor file")->required();
  degrade->add_option("--out", dg_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << "\n";
    return 1;
  }

  if (gen->parsed())
    return check(prnet_gen_dataset(slurp(gen_spec).c_str(), gen_out.c_str(),
                                   gen_ppm ? 1 : 0));

  if (train->parsed()) {
    ModelGuard m;
    if (int rc = check(prnet_model_build(slurp(tr_model).c_str(), &m.model)))
      return rc;
    return check(prnet_train(m.model, tr_data.c_str(),
                             slurp(tr_train).c_str(), tr_out.c_str(),
                             tr_epochs));
  }

  if (eval->parsed()) {
    ModelGuard m;
    if (int rc = check(prnet_model_load(ev_ckpt.c_str(), &m.model))) return rc;
    char* summary = nullptr;
    if (int rc = check(prnet_eval(m.model, ev_data.c_str(),
                                  ev_json.empty() ? nullptr : ev_json.c_str(),
                                  &summary)))
      return rc;
    std::cout << summary;
    prnet_string_free(summary);
    return 0;
  }

  if (analyze->parsed()) {
    char* table = nullptr;
    if (int rc = check(prnet_analyze(
            slurp(an_model).c_str(), an_input,
            an_sweep.empty() ? nullptr : an_sweep.c_str(),
            an_csv.empty() ? nullptr : an_csv.c_str(), &table)))
      return rc;
    std::cout << table;
    prnet_string_free(table);
    return 0;
  }

  if (exp->parsed()) {
    ModelGuard m;
    if (int rc = check(prnet_model_load(ex_ckpt.c_str(), &m.model))) return rc;
    return check(prnet_export_heatmap(m.model, ex_image.c_str(),
                                      ex_level.c_str(), ex_out.c_str()));
  }

  if (degrade->parsed())
    return check(prnet_demo_degrade(dg_image.c_str(), dg_out.c_str()));

  return 1;
}

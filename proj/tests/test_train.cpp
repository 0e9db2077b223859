#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "core/train.hpp"

using namespace prnet;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "prnet_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

ParamSet single_param(Tensor t) {
  ParamSet ps;
  ps.add("w", t);
  return ps;
}

ArchConfig tiny_config() {
  ArchConfig cfg;
  cfg.widths = {4, 8, 16, 32, 64};
  cfg.prn.widths = {8, 16, 32};
  cfg.seed = 21;
  return cfg;
}

DatasetSplit tiny_dataset(const fs::path& dir, int n, uint32_t seed) {
  DatasetSpec spec;
  spec.num_images = n;
  spec.image_size = 64;
  spec.objects_min = 3;
  spec.objects_max = 6;
  spec.seed = seed;
  gen_dataset(spec, dir.string());
  return load_split(dir.string());
}

}  // namespace

TEST_CASE("sgd degenerate hyperparameters reduce to plain descent") {
  Tensor w = Tensor::from_data({1, 1, 1, 2}, {1.0f, -2.0f}, true);
  w.zero_grad();
  w.grad()[0] = 0.5f;
  w.grad()[1] = -1.0f;
  ParamSet ps = single_param(w);
  SgdState state;
  sgd_momentum_step(ps, state, {0.1, 0.0, 0.0});
  CHECK(w.data()[0] == doctest::Approx(1.0 - 0.1 * 0.5));
  CHECK(w.data()[1] == doctest::Approx(-2.0 + 0.1));
}

TEST_CASE("two steps of constant gradient follow the momentum recurrence") {
  const double lr = 0.05, m = 0.9, g = 2.0;
  Tensor w = Tensor::from_data({1, 1, 1, 1}, {1.0f}, true);
  ParamSet ps = single_param(w);
  SgdState state;
  for (int step = 0; step < 2; ++step) {
    w.zero_grad();
    w.grad()[0] = static_cast<float>(g);
    sgd_momentum_step(ps, state, {lr, m, 0.0});
  }
  CHECK(w.data()[0] == doctest::Approx(1.0 - lr * g * (2 + m)).epsilon(1e-6));
}

TEST_CASE("weight decay alone shrinks weights exponentially") {
  const double lr = 0.1, wd = 0.05;
  Tensor w = Tensor::from_data({1, 1, 1, 1}, {4.0f}, true);
  ParamSet ps = single_param(w);
  SgdState state;
  double expected = 4.0;
  for (int step = 0; step < 3; ++step) {
    w.zero_grad();
    sgd_momentum_step(ps, state, {lr, 0.0, wd});
    expected *= 1.0 - lr * wd;
    CHECK(w.data()[0] == doctest::Approx(expected).epsilon(1e-6));
  }
}

TEST_CASE("non-finite gradients abort with the parameter name") {
  Tensor w = Tensor::from_data({1, 1, 1, 1}, {1.0f}, true);
  w.zero_grad();
  w.grad()[0] = std::numeric_limits<float>::quiet_NaN();
  ParamSet ps = single_param(w);
  SgdState state;
  CHECK_THROWS_WITH_AS(sgd_momentum_step(ps, state, {0.1, 0.9, 0.0}),
                       doctest::Contains("w"), std::runtime_error);
}

TEST_CASE("patience 1 with frozen lr stops after two epochs") {
  const fs::path data = fresh_dir("train_patience");
  DatasetSplit split = tiny_dataset(data, 6, 3);
  auto model = build_model<float>(tiny_config());
  TrainConfig cfg;
  cfg.lr = 0.0;  // frozen: no improvement is possible after epoch 1
  cfg.epochs = 10;
  cfg.patience = 1;
  cfg.batch_size = 4;
  cfg.seed = 5;
  TrainResult result =
      train_loop(*model, split, cfg, fresh_dir("train_patience_out").string());
  CHECK(result.epochs_run == 2);
  CHECK(result.best_epoch == 1);
}

TEST_CASE("early stopping keeps the best checkpoint on disk") {
  const fs::path data = fresh_dir("train_best");
  DatasetSplit split = tiny_dataset(data, 6, 4);
  auto model = build_model<float>(tiny_config());
  TrainConfig cfg;
  cfg.lr = 1e-4;
  cfg.epochs = 2;
  cfg.patience = 50;
  cfg.batch_size = 4;
  cfg.seed = 6;
  const fs::path out = fresh_dir("train_best_out");
  TrainResult result = train_loop(*model, split, cfg, out.string());
  CHECK(fs::exists(out / "ckpt_best.json"));
  CHECK(fs::exists(out / "ckpt_best.bin"));
  CHECK(fs::exists(out / "history.csv"));
  auto best = load_checkpoint((out / "ckpt_best.json").string());
  CHECK(best->params.param_count() == model->params.param_count());
  CHECK(result.history.size() == 2);
}

TEST_CASE("training histories are deterministic under one seed") {
  auto run = [](const std::string& tag) {
    const fs::path data = fresh_dir("train_det_data_" + tag);
    DatasetSplit split = tiny_dataset(data, 6, 9);
    auto model = build_model<float>(tiny_config());
    TrainConfig cfg;
    cfg.lr = 1e-4;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.seed = 7;
    const fs::path out = fresh_dir("train_det_out_" + tag);
    train_loop(*model, split, cfg, out.string());
    return read_bytes(out / "history.csv");
  };
  const std::string a = run("a"), b = run("b");
  CHECK(a == b);
  CHECK(a.rfind("epoch,loss_total,loss_box,loss_obj,loss_cls,val_ap50\n", 0) ==
        0);
}

TEST_CASE("a short overfit run already reduces the loss") {
  const fs::path data = fresh_dir("train_overfit");
  DatasetSplit split = tiny_dataset(data, 4, 11);
  auto [images, labels] = load_batch(split.train, {0, 1, 2, 3});
  auto model = build_model<float>(tiny_config());
  std::vector<double> curve =
      overfit_batch(*model, images, labels, 40, {5e-4, 0.9, 0.0});
  REQUIRE(curve.size() == 41);
  CHECK(curve.back() < 0.8 * curve.front());
  for (double v : curve) REQUIRE(std::isfinite(v));
}

TEST_CASE("PRNET_SEED overrides config seeds") {
  setenv("PRNET_SEED", "4242", 1);
  ArchConfig cfg = ArchConfig::from_json_text("{\"seed\": 1}");
  CHECK(cfg.seed == 4242);
  TrainConfig tc = TrainConfig::from_json_text("{\"seed\": 2}");
  CHECK(tc.seed == 4242);
  unsetenv("PRNET_SEED");
  ArchConfig plain = ArchConfig::from_json_text("{\"seed\": 1}");
  CHECK(plain.seed == 1);
}

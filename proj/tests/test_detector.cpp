#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "core/detector.hpp"
#include "core/grad_check.hpp"

using namespace prnet;

namespace {

ArchConfig toy_config(const std::string& neck, int essamp_layers = 2) {
  ArchConfig cfg;
  cfg.neck = neck;
  cfg.widths = {16, 32, 64, 128, 256};
  cfg.prn.stages = 1;
  cfg.prn.widths = {32, 64, 128};
  cfg.essamp_layers = essamp_layers;
  cfg.essamp_d = 2;
  cfg.num_classes = 3;
  cfg.seed = 1;
  return cfg;
}

ArchConfig tiny_config(const std::string& neck, int essamp_layers = 2) {
  ArchConfig cfg;
  cfg.neck = neck;
  cfg.widths = {4, 8, 16, 32, 64};
  cfg.prn.stages = 1;
  cfg.prn.widths = {8, 16, 32};
  cfg.essamp_layers = essamp_layers;
  cfg.essamp_d = 2;
  cfg.num_classes = 3;
  cfg.seed = 7;
  return cfg;
}

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

TEST_CASE("backbone emits the four pyramid levels at strides 4..32") {
  auto model = build_model<float>(toy_config("prn"));
  Rng rng(2);
  Tensor images = Tensor::random_normal({2, 3, 256, 256}, rng, 1.f);
  FeatureSetT<float> f = backbone_forward(model->backbone, images);
  CHECK(f.p2.shape() == Shape4{2, 32, 64, 64});
  CHECK(f.p3.shape() == Shape4{2, 64, 32, 32});
  CHECK(f.p4.shape() == Shape4{2, 128, 16, 16});
  CHECK(f.p5.shape() == Shape4{2, 256, 8, 8});

  Tensor bad = Tensor::random_normal({1, 3, 100, 100}, rng, 1.f);
  CHECK_THROWS_AS(backbone_forward(model->backbone, bad),
                  std::invalid_argument);
}

TEST_CASE("essamp_layers=0 backbone is all strided convs and smaller") {
  auto with = build_model<float>(tiny_config("prn", 2));
  auto without = build_model<float>(tiny_config("prn", 0));
  CHECK_FALSE(without->backbone.steps[0].use_essamp);
  CHECK_FALSE(without->backbone.steps[1].use_essamp);
  CHECK(with->backbone.steps[0].use_essamp);
  CHECK(with->backbone.steps[1].use_essamp);

  Rng rng(3);
  Tensor images = Tensor::random_normal({1, 3, 64, 64}, rng, 1.f);
  CHECK(backbone_forward(without->backbone, images).p5.shape() ==
        Shape4{1, 64, 2, 2});

  const int64_t params_with =
      with->params.param_count_prefix("backbone.");
  const int64_t params_without =
      without->params.param_count_prefix("backbone.");
  CHECK(params_with > params_without);  // d=2 expansion adds weight
}

TEST_CASE("head emits 5+K logits per level and zero weights give 0.5") {
  auto model = build_model<float>(toy_config("prn"));
  Rng rng(4);
  Tensor images = Tensor::random_normal({2, 3, 256, 256}, rng, 1.f);
  RawPredictionsT<float> preds = model->forward(images);
  CHECK(preds.p2.shape() == Shape4{2, 8, 64, 64});
  CHECK(preds.p3.shape() == Shape4{2, 8, 32, 32});
  CHECK(preds.p4.shape() == Shape4{2, 8, 16, 16});
  CHECK(preds.num_classes() == 3);

  // Zeroed head -> zero logits -> decoded objectness exactly 0.5.
  for (auto* w : {&model->head.p2, &model->head.p3, &model->head.p4}) {
    std::fill(w->values.vec().begin(), w->values.vec().end(), 0.f);
    std::fill(w->bias.vec().begin(), w->bias.vec().end(), 0.f);
  }
  NeckStateT<float> neck = model->neck(model->features(images));
  RawPredictionsT<float> zeroed = head_forward(model->head, neck);
  for (float v : zeroed.p2.vec()) CHECK(v == 0.f);
  CHECK(1.0 / (1.0 + std::exp(-zeroed.p2.at(0, 4, 0, 0))) == 0.5);
}

TEST_CASE("head gradient check") {
  Rng rng(5);
  HeadParamsT<double> head = make_head<double>({2, 3, 4}, 2, rng);
  NeckStateT<double> neck;
  neck.p2out = TensorD::random_normal({1, 2, 8, 8}, rng, 1.0, true);
  neck.p3out = TensorD::random_normal({1, 3, 4, 4}, rng, 1.0, true);
  neck.p4out = TensorD::random_normal({1, 4, 2, 2}, rng, 1.0, true);
  const double err = grad_check<double>(
      [&] {
        RawPredictionsT<double> p = head_forward(head, neck);
        return sum_all(concat_channels<double>(
            {p.p2, upsample_nearest2(p.p3),
             upsample_nearest2(upsample_nearest2(p.p4))}));
      },
      {neck.p2out, neck.p3out, neck.p4out, head.p2.values, head.p2.bias,
       head.p3.values, head.p3.bias, head.p4.values, head.p4.bias},
      1e-5);
  CHECK(err <= 1e-4);
}

TEST_CASE("assign_targets routes boxes by max side and cell") {
  // 10 px box at the center of a 256 image: P2, cell (32,32).
  std::vector<std::vector<BoxLabel>> labels(1);
  labels[0].push_back({0, 128.0, 128.0, 10.0, 10.0});
  TargetMaps maps = assign_targets(labels, 256);
  REQUIRE(maps.positives[0].size() == 1);
  CHECK(maps.positives[0][0].cx == 32);
  CHECK(maps.positives[0][0].cy == 32);
  CHECK(maps.positives[1].empty());
  CHECK(maps.dropped == 0);

  // 40 px box goes to P4.
  labels[0][0] = {1, 100.0, 60.0, 40.0, 40.0};
  maps = assign_targets(labels, 256);
  CHECK(maps.positives[0].empty());
  REQUIRE(maps.positives[2].size() == 1);
  CHECK(maps.positives[2][0].cx == 100 / 16);

  // Boundary: exactly 16 px routes to P3, exactly 32 px to P4.
  labels[0][0] = {0, 50.0, 50.0, 16.0, 8.0};
  maps = assign_targets(labels, 256);
  CHECK(maps.positives[1].size() == 1);
  labels[0][0] = {0, 50.0, 50.0, 32.0, 8.0};
  maps = assign_targets(labels, 256);
  CHECK(maps.positives[2].size() == 1);
}

TEST_CASE("assign_targets cell ties keep the larger box") {
  std::vector<std::vector<BoxLabel>> labels(1);
  labels[0].push_back({0, 101.0, 101.0, 8.0, 8.0});
  labels[0].push_back({1, 102.0, 102.0, 12.0, 12.0});  // same P2 cell (25,25)
  TargetMaps maps = assign_targets(labels, 256);
  REQUIRE(maps.positives[0].size() == 1);
  CHECK(maps.positives[0][0].box.class_id == 1);
  CHECK(maps.dropped == 1);

  // Degenerate boxes are dropped with a count, not asserted on.
  labels[0].push_back({2, 40.0, 40.0, 0.0, 5.0});
  maps = assign_targets(labels, 256);
  CHECK(maps.dropped == 2);
}

TEST_CASE("detection_loss optimum and closed-form zero case") {
  const int K = 3;
  RawPredictionsT<float> preds;
  preds.p2 = Tensor::zeros({1, 5 + K, 16, 16});
  preds.p3 = Tensor::zeros({1, 5 + K, 8, 8});
  preds.p4 = Tensor::zeros({1, 5 + K, 4, 4});

  // No positives, zero logits: only the objectness term, log(2) per cell.
  TargetMaps empty;
  LossBreakdown<float> zero = detection_loss(preds, empty, 64);
  const double cells = 16 * 16 + 8 * 8 + 4 * 4;
  CHECK(zero.total == doctest::Approx(cells * std::log(2.0)).epsilon(1e-9));
  CHECK(zero.box == 0.0);
  CHECK(zero.cls == 0.0);
  CHECK(zero.num_pos == 0);

  // Perfect prediction at one positive cell: box term 0, class term -> 0.
  BoxLabel gt{1, 18.0, 10.0, 8.0, 6.0};
  std::vector<std::vector<BoxLabel>> labels{{gt}};
  TargetMaps maps = assign_targets(labels, 64);
  REQUIRE(maps.positives[0].size() == 1);
  const TargetCell& cell = maps.positives[0][0];
  auto set = [&](int c, float v) {
    preds.p2.at(0, c, cell.cy, cell.cx) = v;
  };
  set(0, static_cast<float>(logit(gt.cx / 4.0 - cell.cx)));
  set(1, static_cast<float>(logit(gt.cy / 4.0 - cell.cy)));
  set(2, static_cast<float>(std::log(gt.w / 4.0)));
  set(3, static_cast<float>(std::log(gt.h / 4.0)));
  set(4, 30.f);  // obj logit capped stand-in for +inf
  for (int k = 0; k < K; ++k) set(5 + k, k == gt.class_id ? 30.f : -30.f);
  LossBreakdown<float> perfect = detection_loss(preds, maps, 64);
  CHECK(perfect.box == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(perfect.cls == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(perfect.num_pos == 1);
}

TEST_CASE("detection_loss gradient matches finite differences") {
  Rng rng(6);
  const int K = 2;
  RawPredictionsT<double> preds;
  preds.p2 = TensorD::random_normal({1, 5 + K, 4, 4}, rng, 0.5, true);
  preds.p3 = TensorD::random_normal({1, 5 + K, 2, 2}, rng, 0.5, true);
  preds.p4 = TensorD::random_normal({1, 5 + K, 1, 1}, rng, 0.5, true);
  std::vector<std::vector<BoxLabel>> labels(1);
  labels[0].push_back({1, 6.5, 9.5, 7.0, 5.0});    // P2 positive
  labels[0].push_back({0, 9.0, 7.0, 20.0, 18.0});  // P3 positive
  TargetMaps maps = assign_targets(labels, 16);
  REQUIRE(maps.positives[0].size() == 1);
  REQUIRE(maps.positives[1].size() == 1);
  const double err = grad_check<double>(
      [&] { return detection_loss(preds, maps, 16).value; },
      {preds.p2, preds.p3, preds.p4}, 1e-6);
  CHECK(err <= 1e-4);
}

TEST_CASE("decode thresholds scores and localizes hot cells") {
  const int K = 3;
  RawPredictionsT<float> preds;
  preds.p2 = Tensor::zeros({1, 5 + K, 16, 16});
  preds.p3 = Tensor::zeros({1, 5 + K, 8, 8});
  preds.p4 = Tensor::zeros({1, 5 + K, 4, 4});
  CHECK(decode_predictions(preds, 0.3, 64).empty());  // 0.25 < 0.3

  preds.p2.at(0, 4, 5, 7) = 8.f;
  preds.p2.at(0, 5 + 2, 5, 7) = 8.f;
  std::vector<Detection> dets = decode_predictions(preds, 0.9, 64);
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].class_id == 2);
  CHECK(dets[0].box.cx == doctest::Approx((7 + 0.5) * 4));
  CHECK(dets[0].box.cy == doctest::Approx((5 + 0.5) * 4));
  CHECK_THROWS_AS(decode_predictions(preds, 1.5, 64), std::invalid_argument);
}

TEST_CASE("decode recovers assigned ground truth within a pixel") {
  Rng rng(7);
  const int K = 3, image = 128;
  RawPredictionsT<float> preds;
  preds.p2 = Tensor::zeros({1, 5 + K, 32, 32});
  preds.p3 = Tensor::zeros({1, 5 + K, 16, 16});
  preds.p4 = Tensor::zeros({1, 5 + K, 8, 8});
  // Push everything far negative so only stuffed cells clear the threshold.
  for (auto* t : {&preds.p2, &preds.p3, &preds.p4})
    std::fill(t->vec().begin(), t->vec().end(), -12.f);

  std::vector<std::vector<BoxLabel>> labels(1);
  labels[0].push_back({0, 30.2, 40.8, 9.0, 7.0});
  labels[0].push_back({1, 70.6, 22.3, 20.0, 24.0});
  labels[0].push_back({2, 90.0, 90.0, 40.0, 36.0});
  TargetMaps maps = assign_targets(labels, image);

  Tensor* levels[3] = {&preds.p2, &preds.p3, &preds.p4};
  for (int l = 0; l < 3; ++l) {
    const int stride = kLevelStrides[static_cast<size_t>(l)];
    for (const TargetCell& cell : maps.positives[static_cast<size_t>(l)]) {
      auto& t = *levels[l];
      const double fx = cell.box.cx / stride - cell.cx;
      const double fy = cell.box.cy / stride - cell.cy;
      t.at(0, 0, cell.cy, cell.cx) = static_cast<float>(logit(fx));
      t.at(0, 1, cell.cy, cell.cx) = static_cast<float>(logit(fy));
      t.at(0, 2, cell.cy, cell.cx) =
          static_cast<float>(std::log(cell.box.w / stride));
      t.at(0, 3, cell.cy, cell.cx) =
          static_cast<float>(std::log(cell.box.h / stride));
      t.at(0, 4, cell.cy, cell.cx) = 10.f;
      t.at(0, 5 + cell.box.class_id, cell.cy, cell.cx) = 10.f;
    }
  }
  std::vector<Detection> dets = decode_predictions(preds, 0.5, image);
  REQUIRE(dets.size() == labels[0].size());
  for (const BoxLabel& gt : labels[0]) {
    bool found = false;
    for (const Detection& d : dets)
      if (d.class_id == gt.class_id && std::abs(d.box.cx - gt.cx) < 1.0 &&
          std::abs(d.box.cy - gt.cy) < 1.0 && std::abs(d.box.w - gt.w) < 1.0 &&
          std::abs(d.box.h - gt.h) < 1.0)
        found = true;
    CHECK(found);
  }
}

TEST_CASE("both necks are drop-in comparable") {
  auto prn_model = build_model<float>(tiny_config("prn"));
  auto pan_model = build_model<float>(tiny_config("panfpn"));
  Rng rng(8);
  Tensor images = Tensor::random_normal({2, 3, 64, 64}, rng, 1.f);
  RawPredictionsT<float> a = prn_model->forward(images);
  RawPredictionsT<float> b = pan_model->forward(images);
  CHECK(a.p2.shape() == b.p2.shape());
  CHECK(a.p3.shape() == b.p3.shape());
  CHECK(a.p4.shape() == b.p4.shape());
}

TEST_CASE("same seed builds bitwise identical models") {
  auto a = build_model<float>(tiny_config("prn"));
  auto b = build_model<float>(tiny_config("prn"));
  REQUIRE(a->params.learnables.size() == b->params.learnables.size());
  for (size_t i = 0; i < a->params.learnables.size(); ++i) {
    CHECK(a->params.learnables[i].name == b->params.learnables[i].name);
    CHECK(a->params.learnables[i].tensor.vec() ==
          b->params.learnables[i].tensor.vec());
  }
  ArchConfig other = tiny_config("prn");
  other.seed = 8;
  auto c = build_model<float>(other);
  bool all_equal = true;
  for (size_t i = 0; i < a->params.learnables.size(); ++i)
    if (a->params.learnables[i].tensor.vec() !=
        c->params.learnables[i].tensor.vec())
      all_equal = false;
  CHECK_FALSE(all_equal);
}

TEST_CASE("every learnable parameter receives gradient") {
  for (const char* neck : {"prn", "panfpn"}) {
    auto model = build_model<float>(tiny_config(neck));
    Rng rng(9);
    Tensor images = Tensor::random_normal({2, 3, 64, 64}, rng, 0.5f);
    std::vector<std::vector<BoxLabel>> labels(2);
    // One positive per level so box/class rows of every head see gradient.
    labels[0].push_back({0, 20.0, 20.0, 10.0, 10.0});
    labels[0].push_back({1, 40.0, 28.0, 20.0, 20.0});
    labels[1].push_back({2, 32.0, 32.0, 40.0, 40.0});
    TargetMaps maps = assign_targets(labels, 64);
    RawPredictionsT<float> preds = model->forward(images);
    LossBreakdown<float> loss = detection_loss(preds, maps, 64);
    model->params.zero_grad();
    loss.value.backward();
    for (const auto& p : model->params.learnables) {
      bool nonzero = false;
      for (float g : p.tensor.grad_vec())
        if (g != 0.f) nonzero = true;
      INFO(p.name);
      CHECK(nonzero);
    }
  }
}

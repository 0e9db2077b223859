#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "core/grad_check.hpp"
#include "core/neck.hpp"

using namespace prnet;

namespace {

// Toy pyramid: c2..c5 = 32,64,128,256 at strides 4..32 of a 256 input.
constexpr NeckWidths kToyWidths{32, 64, 128};
constexpr BackboneChannels kToyChannels{32, 64, 128, 256};

template <class S>
FeatureSetT<S> random_features(const BackboneChannels& c, int image, Rng& rng,
                               bool requires_grad = false, int64_t n = 1) {
  FeatureSetT<S> f;
  f.p2 = TensorT<S>::random_normal({n, c.c2, image / 4, image / 4}, rng, S(1),
                                   requires_grad);
  f.p3 = TensorT<S>::random_normal({n, c.c3, image / 8, image / 8}, rng, S(1),
                                   requires_grad);
  f.p4 = TensorT<S>::random_normal({n, c.c4, image / 16, image / 16}, rng,
                                   S(1), requires_grad);
  f.p5 = TensorT<S>::random_normal({n, c.c5, image / 32, image / 32}, rng,
                                   S(1), requires_grad);
  return f;
}

bool any_nonzero(const std::vector<float>& v) {
  for (float x : v)
    if (x != 0.f) return true;
  return false;
}

bool any_nonzero(const std::vector<double>& v) {
  for (double x : v)
    if (x != 0.0) return true;
  return false;
}

}  // namespace

TEST_CASE("top_down_fuse shape contract on the toy config") {
  Rng rng(1);
  auto prn = make_prn<float>(kToyWidths, kToyChannels, 1, DownKind::conv, rng);
  auto f = random_features<float>(kToyChannels, 256, rng);
  NeckStateT<float> state = top_down_fuse(f, prn);
  CHECK(state.p2td.shape() == Shape4{1, 32, 64, 64});
  CHECK(state.p3td.shape() == Shape4{1, 64, 32, 32});
  CHECK(state.p4td.shape() == Shape4{1, 128, 16, 16});
  CHECK(state.r.size() == 1);
}

TEST_CASE("top_down_fuse rejects inconsistent pyramids") {
  Rng rng(2);
  auto prn = make_prn<float>(kToyWidths, kToyChannels, 0, DownKind::conv, rng);
  auto f = random_features<float>(kToyChannels, 256, rng);
  f.p3 = Tensor::random_normal({1, 64, 30, 32}, rng, 1.f);
  CHECK_THROWS_AS(top_down_fuse(f, prn), ContractViolation);
}

TEST_CASE("zero features with neutral inference stats give zero outputs") {
  Rng rng(3);
  auto prn = make_prn<float>(kToyWidths, kToyChannels, 1, DownKind::conv, rng);
  ParamSet ps;
  register_prn(ps, "neck", prn);
  ps.set_training(false);
  FeatureSetT<float> f;
  f.p2 = Tensor::zeros({1, 32, 32, 32});
  f.p3 = Tensor::zeros({1, 64, 16, 16});
  f.p4 = Tensor::zeros({1, 128, 8, 8});
  f.p5 = Tensor::zeros({1, 256, 4, 4});
  NeckStateT<float> state = prn_forward(f, prn);
  CHECK_FALSE(any_nonzero(state.p2out.vec()));
  CHECK_FALSE(any_nonzero(state.p3out.vec()));
  CHECK_FALSE(any_nonzero(state.p4out.vec()));
}

TEST_CASE("gradients reach all four backbone levels including P5") {
  Rng rng(4);
  auto prn = make_prn<float>(kToyWidths, kToyChannels, 1, DownKind::conv, rng);
  auto f = random_features<float>(kToyChannels, 128, rng, true);
  NeckStateT<float> state = prn_forward(f, prn);
  Tensor loss = sum_all(concat_channels<float>(
      {state.p2out,
       upsample_nearest2(state.p3out),
       upsample_nearest2(upsample_nearest2(state.p4out))}));
  loss.backward();
  CHECK(any_nonzero(f.p2.grad_vec()));
  CHECK(any_nonzero(f.p3.grad_vec()));
  CHECK(any_nonzero(f.p4.grad_vec()));
  CHECK(any_nonzero(f.p5.grad_vec()));
}

TEST_CASE("refine_stage shapes and stage ordering guard") {
  Rng rng(5);
  auto prn = make_prn<float>(kToyWidths, kToyChannels, 2, DownKind::conv, rng);
  auto f = random_features<float>(kToyChannels, 256, rng);
  NeckStateT<float> state = top_down_fuse(f, prn);
  refine_stage(state, f, prn, 1);
  CHECK(state.t3[0].shape() == Shape4{1, 64, 32, 32});
  CHECK(state.r[1].shape() == Shape4{1, 32, 64, 64});

  NeckStateT<float> fresh = top_down_fuse(f, prn);
  CHECK_THROWS_AS(refine_stage(fresh, f, prn, 2), InvalidState);
  CHECK_THROWS_AS(refine_stage(fresh, f, prn, 0), std::invalid_argument);
  CHECK_THROWS_AS(refine_stage(fresh, f, prn, 3), std::invalid_argument);
}

TEST_CASE("backbone features are re-consumed by every refine stage") {
  Rng rng(6);
  const int stages = 3;
  auto prn =
      make_prn<float>(kToyWidths, kToyChannels, stages, DownKind::conv, rng);
  ParamSet ps;
  register_prn(ps, "neck", prn);
  ps.set_training(false);  // freeze batch statistics for the comparison
  auto f = random_features<float>(kToyChannels, 128, rng);
  NeckStateT<float> base = prn_forward(f, prn);

  FeatureSetT<float> zeroed = f;
  zeroed.p2 = Tensor::zeros(f.p2.shape());
  NeckStateT<float> probed = prn_forward(zeroed, prn);
  for (int k = 1; k <= stages; ++k)
    CHECK(base.r[static_cast<size_t>(k)].vec() !=
          probed.r[static_cast<size_t>(k)].vec());

  FeatureSetT<float> zeroed3 = f;
  zeroed3.p3 = Tensor::zeros(f.p3.shape());
  NeckStateT<float> probed3 = prn_forward(zeroed3, prn);
  for (int k = 1; k <= stages; ++k)
    CHECK(base.r[static_cast<size_t>(k)].vec() !=
          probed3.r[static_cast<size_t>(k)].vec());

  CHECK(prn.p2in_consumers() == stages + 2);
}

TEST_CASE("two stages with identical weights are not idempotent") {
  Rng rng(7);
  auto prn = make_prn<float>(kToyWidths, kToyChannels, 2, DownKind::conv, rng);
  // Copy stage-1 weights into stage 2.
  auto copy_block = [](const ConvBlockT<float>& src, ConvBlockT<float>& dst) {
    dst.conv.values.vec() = src.conv.values.vec();
    dst.bn.gamma.vec() = src.bn.gamma.vec();
    dst.bn.beta.vec() = src.bn.beta.vec();
    dst.bn.running_mean = src.bn.running_mean;
    dst.bn.running_var = src.bn.running_var;
  };
  copy_block(prn.stages[0].down.block, prn.stages[1].down.block);
  copy_block(prn.stages[0].t3, prn.stages[1].t3);
  copy_block(prn.stages[0].r, prn.stages[1].r);

  auto f = random_features<float>(kToyChannels, 128, rng);
  NeckStateT<float> state = top_down_fuse(f, prn);
  refine_stage(state, f, prn, 1);
  refine_stage(state, f, prn, 2);
  CHECK(state.r[1].vec() != state.r[2].vec());
}

TEST_CASE("generate_outputs shape contract for every stage count") {
  Rng rng(8);
  for (int stages : {0, 1, 2, 3}) {
    auto prn =
        make_prn<float>(kToyWidths, kToyChannels, stages, DownKind::conv, rng);
    auto f = random_features<float>(kToyChannels, 256, rng);
    NeckStateT<float> state = prn_forward(f, prn);
    CHECK(state.p2out.shape() == Shape4{1, 32, 64, 64});
    CHECK(state.p3out.shape() == Shape4{1, 64, 32, 32});
    CHECK(state.p4out.shape() == Shape4{1, 128, 16, 16});
    CHECK(state.t3.size() == static_cast<size_t>(stages));
    // S = 0 generates straight from the initial fusion result.
    if (stages == 0) CHECK(state.r.size() == 1);
  }
}

TEST_CASE("avgpool neck_down variant keeps the output contract") {
  Rng rng(9);
  auto prn =
      make_prn<float>(kToyWidths, kToyChannels, 1, DownKind::avgpool, rng);
  auto f = random_features<float>(kToyChannels, 256, rng);
  NeckStateT<float> state = prn_forward(f, prn);
  CHECK(state.p2out.shape() == Shape4{1, 32, 64, 64});
  CHECK(state.p3out.shape() == Shape4{1, 64, 32, 32});
  CHECK(state.p4out.shape() == Shape4{1, 128, 16, 16});
}

TEST_CASE("full neck gradient check at minimal width") {
  Rng rng(10);
  const NeckWidths w{2, 2, 2};
  const BackboneChannels c{2, 2, 2, 2};
  auto prn = make_prn<double>(w, c, 1, DownKind::conv, rng);
  auto f = random_features<double>(c, 32, rng, true);
  ParamSetT<double> ps;
  register_prn(ps, "neck", prn);
  std::vector<TensorD> inputs = {f.p2, f.p3, f.p4, f.p5};
  for (const auto& p : ps.learnables) inputs.push_back(p.tensor);
  const double err = grad_check<double>(
      [&] {
        NeckStateT<double> s = prn_forward(f, prn);
        return sum_all(concat_channels<double>(
            {s.p2out, upsample_nearest2(s.p3out),
             upsample_nearest2(upsample_nearest2(s.p4out))}));
      },
      inputs, 1e-5);
  CHECK(err <= 1e-4);
}

TEST_CASE("identical seeds give bitwise identical neck outputs") {
  auto build_and_run = [] {
    Rng rng(77);
    auto prn =
        make_prn<float>(kToyWidths, kToyChannels, 1, DownKind::conv, rng);
    Rng data_rng(5);
    auto f = random_features<float>(kToyChannels, 128, data_rng);
    return prn_forward(f, prn);
  };
  NeckStateT<float> a = build_and_run();
  NeckStateT<float> b = build_and_run();
  CHECK(a.p2out.vec() == b.p2out.vec());
  CHECK(a.p3out.vec() == b.p3out.vec());
  CHECK(a.p4out.vec() == b.p4out.vec());
}

TEST_CASE("per-stage parameter increment is constant") {
  Rng rng(11);
  std::vector<int64_t> params;
  for (int stages : {0, 1, 2, 3}) {
    auto prn =
        make_prn<float>(kToyWidths, kToyChannels, stages, DownKind::conv, rng);
    ParamSet ps;
    register_prn(ps, "neck", prn);
    params.push_back(ps.param_count());
  }
  const int64_t inc = params[1] - params[0];
  CHECK(inc > 0);
  CHECK(params[2] - params[1] == inc);
  CHECK(params[3] - params[2] == inc);
}

TEST_CASE("panfpn baseline consumes P2 once but matches output shapes") {
  Rng rng(12);
  auto pan = make_panfpn<float>(kToyWidths, kToyChannels, DownKind::conv, rng);
  CHECK(pan.p2in_consumers() == 1);
  auto f = random_features<float>(kToyChannels, 256, rng, true);
  NeckStateT<float> state = panfpn_forward(f, pan);
  CHECK(state.p2out.shape() == Shape4{1, 32, 64, 64});
  CHECK(state.p3out.shape() == Shape4{1, 64, 32, 32});
  CHECK(state.p4out.shape() == Shape4{1, 128, 16, 16});

  Tensor loss = sum_all(concat_channels<float>(
      {state.p2out, upsample_nearest2(state.p3out),
       upsample_nearest2(upsample_nearest2(state.p4out))}));
  loss.backward();
  CHECK(any_nonzero(f.p2.grad_vec()));
  CHECK(any_nonzero(f.p5.grad_vec()));
}

// Tests pinned against the shipped desk-scale checkpoints and dataset.

#include <doctest.h>

#include <cmath>

#include "htsim/attacks.hpp"
#include "htsim/parallel.hpp"
#include "htsim/serialize.hpp"
#include "htsim/weight_attack.hpp"

using namespace htsim;

TEST_SUITE_BEGIN("desk");

namespace {

const std::string kAssets = HTSIM_SOURCE_DIR "/assets";

Model vgg() { return load_model(kAssets + "/desk_vgg.htnn"); }
Model resnet() { return load_model(kAssets + "/desk_resnet.htnn"); }
Dataset test_set() {
  return load_dataset(kAssets + "/synth10_test_images.htsr",
                      kAssets + "/synth10_test_labels.htsr");
}

Dataset head(const Dataset& ds, std::int64_t n) {
  Dataset out;
  std::vector<std::int64_t> shape = ds.images.shape;
  shape[0] = n;
  out.images = Tensor(shape);
  const std::int64_t stride =
      Tensor::numel_of({ds.images.shape.begin() + 1, ds.images.shape.end()});
  std::copy_n(ds.images.data.begin(), n * stride, out.images.data.begin());
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + n);
  return out;
}

}  // namespace

TEST_CASE("shipped checkpoints load, validate and perform") {
  for (const Model& m : {vgg(), resnet()}) {
    CHECK(m.net.class_count == 10);
    CHECK(m.net.input_shape == std::vector<std::int64_t>{3, 32, 32});
    CHECK_NOTHROW(m.net.infer_shapes());
    CHECK(m.reference_clean_accuracy > 80.0);  // desk models must be competent
  }
  CHECK(vgg().net.layers.size() == 14);
  CHECK(resnet().net.layers.size() == 21);
}

TEST_CASE("evaluate reproduces the stored reference accuracy exactly") {
  const Dataset ds = test_set();
  for (const Model& m : {vgg(), resnet()}) {
    const EvalResult r = evaluate(m, ds, NoisePlan::none(), default_bit_error_model(), 1);
    CHECK(r.accuracy == m.reference_clean_accuracy);
  }
}

TEST_CASE("quantized and float paths agree on most argmax decisions") {
  const Model m = vgg();
  const Dataset ds = head(test_set(), 300);
  std::vector<std::uint8_t> agree(300, 0);
  parallel_for(300, [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i) {
      const Tensor x = ds.example(i);
      const Tensor lf = forward_float(m.net, m.params, x);
      const Tensor lq = forward(m, x, NoisePlan::none(), default_bit_error_model(), 1);
      std::size_t af = 0, aq = 0;
      for (std::size_t j = 1; j < lf.data.size(); ++j) {
        if (lf.data[j] > lf.data[af]) af = j;
        if (lq.data[j] > lq.data[aq]) aq = j;
      }
      agree[i] = af == aq;
    }
  });
  int n = 0;
  for (auto a : agree) n += a;
  CHECK(n >= 270);  // >= 90% agreement
}

TEST_CASE("activation noise on one layer degrades gracefully and reproducibly") {
  const Model m = vgg();
  const Dataset ds = head(test_set(), 200);
  NoisePlan plan;
  plan.entries.push_back({0, NoiseTarget::activation_mb, {1, 7, 0.65}});
  const EvalResult a = evaluate(m, ds, plan, default_bit_error_model(), 7);
  const EvalResult b = evaluate(m, ds, plan, default_bit_error_model(), 7);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.mean_confidence == b.mean_confidence);
  CHECK(a.accuracy <= m.reference_clean_accuracy + 5.0);
}

TEST_CASE("bigger attacked sub-sections cannot help the attacker less") {
  // averaged over 5 seeds: accuracy at the full section <= at one quarter
  const Model m = vgg();
  const Dataset ds = head(test_set(), 300);
  Dataset batch = head(ds, 32);
  double quarter = 0.0, full = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto sel = select_section(m, 2, {7, 1, 0.72}, default_bit_error_model(), batch, 32,
                                    seed);
    const auto curve = subsection_sweep(m, ds, sel, {0.25, 1.0}, 0.1,
                                        default_bit_error_model(), seed, 0);
    quarter += curve[0].accuracy;
    full += curve[1].accuracy;
  }
  CHECK(full / 5.0 <= quarter / 5.0 + 1e-9);
}

TEST_CASE("the input convolution resists the attack better than the second one") {
  const Model m = vgg();
  const Dataset ds = head(test_set(), 300);
  Dataset batch = head(ds, 32);
  auto post_acc = [&](int layer) {
    const auto sel =
        select_section(m, layer, {7, 1, 0.72}, default_bit_error_model(), batch, 64, 11);
    return attack_section(m, ds, sel, 0.1, AttackMode::ideal, default_bit_error_model(), 11, 0)
        .post_accuracy;
  };
  CHECK(post_acc(0) > post_acc(2));
}

TEST_SUITE_END();

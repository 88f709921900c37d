#pragma once

// Small deterministic model/dataset fixtures shared by the search and attack
// tests. Accuracy values are irrelevant here; the tests assert contracts.

#include <algorithm>
#include <cmath>

#include "htsim/nn.hpp"
#include "htsim/rng.hpp"

namespace htsim::testfix {

inline Model tiny_conv_model(std::uint64_t seed = 1001) {
  Model m;
  m.name = "fixture";
  m.net.class_count = 3;
  m.net.input_shape = {1, 6, 6};
  m.net.layers = {
      LayerDef::conv2d(2, 1, 3, 1, 1),
      LayerDef::relu(),
      LayerDef::maxpool(2, 2),
      LayerDef::fc(2 * 3 * 3, 3),
  };
  Rng rng(seed);
  for (const auto& def : m.net.layers) {
    LayerParams lp = zero_params_for(def);
    for (auto& w : lp.weight.data) w = 0.5 * rng.normal();
    for (auto& b : lp.bias.data) b = 0.05 * rng.normal();
    m.params.layers.push_back(std::move(lp));
  }
  m.schemes.input = QuantScheme{Signedness::unsigned_int, 1.0 / 255.0};
  m.schemes.activation.resize(m.net.layers.size());
  m.schemes.weight.resize(m.net.layers.size());
  for (std::size_t i = 0; i < m.net.layers.size(); ++i) {
    if (m.net.layers[i].has_activation_mb())
      m.schemes.activation[i] = QuantScheme::signed_for_max_abs(6.0);
    if (m.net.layers[i].has_parameter_mb()) {
      double peak = 1e-6;
      for (double w : m.params.layers[i].weight.data) peak = std::max(peak, std::fabs(w));
      m.schemes.weight[i] = QuantScheme::signed_for_max_abs(peak);
    }
  }
  return m;
}

inline Dataset tiny_dataset(std::int64_t n = 30, std::uint64_t seed = 2002, int classes = 3) {
  Dataset ds;
  ds.images = Tensor({n, 1, 6, 6});
  Rng rng(seed);
  for (auto& v : ds.images.data) v = rng.unit();
  for (std::int64_t i = 0; i < n; ++i) ds.labels.push_back(static_cast<int>(rng.below(classes)));
  return ds;
}

inline BitErrorModel flat_ber(double p, double v = 0.68) {
  return BitErrorModel({{v, p}}, Extrapolation::clamp);
}

inline Dataset head(const Dataset& ds, std::int64_t n) {
  n = std::min(n, ds.size());
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

}  // namespace htsim::testfix

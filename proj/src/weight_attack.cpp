#include "htsim/weight_attack.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "htsim/attacks.hpp"
#include "htsim/parallel.hpp"
#include "htsim/rng.hpp"

namespace htsim {

const char* attack_mode_name(AttackMode mode) {
  return mode == AttackMode::ideal ? "ideal" : "sampled";
}

double match_fraction(const Tensor& direction, const Tensor& grad_sign) {
  require_same_shape(direction, grad_sign, "match_fraction");
  std::int64_t flipped = 0;
  std::int64_t matched = 0;
  for (std::size_t i = 0; i < direction.data.size(); ++i) {
    if (direction.data[i] == 0.0) continue;
    ++flipped;
    if (direction.data[i] == grad_sign.data[i]) ++matched;
  }
  if (flipped == 0) {
    std::cerr << "[htsim] warning: noise direction is all zero, match is 0%\n";
    return 0.0;
  }
  return 100.0 * static_cast<double>(matched) / static_cast<double>(flipped);
}

std::vector<int> attackable_layers(const NetworkDef& net, bool exclude_residual) {
  // Shortcut paths in this network definition are identity taps and carry no
  // parameters, so excluding residual layers removes residual_add banks only,
  // which have no weights to begin with; the main-path convolutions inside a
  // block stay attackable either way.
  (void)exclude_residual;
  return net.parameter_mb_layers();
}

namespace {

struct SectionGeometry {
  std::int64_t count = 0;  // N_ofm
  std::int64_t size = 0;   // elements per section
  std::vector<std::int64_t> shape;
};

SectionGeometry section_geometry(const NetworkDef& net, const Params& params, int layer) {
  if (layer < 0 || layer >= static_cast<int>(net.layers.size()))
    throw LayerError("layer " + std::to_string(layer) + " out of range");
  if (!net.layers[layer].has_parameter_mb())
    throw LayerError("layer " + std::to_string(layer) + " (" +
                     layer_kind_name(net.layers[layer].kind) + ") has no attackable weights");
  const Tensor& w = params.layers[layer].weight;
  SectionGeometry g;
  g.count = w.shape[0];
  g.size = w.numel() / g.count;
  g.shape.assign(w.shape.begin() + 1, w.shape.end());
  return g;
}

}  // namespace

SectionSelection select_section(const Model& model, int layer, const HybridConfig& config,
                                const BitErrorModel& ber, const Dataset& batch,
                                int resamples, std::uint64_t seed) {
  config.validate();
  if (resamples < 1) throw RangeError("resamples must be >= 1");
  const SectionGeometry geom = section_geometry(model.net, model.params, layer);

  // Gradient of the loss on the fixed batch (sum over examples), noise-free.
  std::vector<Tensor> xs;
  std::vector<int> ts;
  for (std::int64_t i = 0; i < batch.size(); ++i) {
    xs.push_back(batch.example(i));
    ts.push_back(batch.labels[i]);
  }
  const std::vector<LayerParams> grads =
      grad_params_batch(model.net, model.params, xs, ts);
  const Tensor& gw = grads[static_cast<std::size_t>(layer)].weight;

  const QuantTensor wq = quantize(model.params.layers[layer].weight,
                                  *model.schemes.weight[layer]);
  const CodeScheme cs = wq.scheme.code_scheme();

  struct Best {
    double match = -1.0;
    std::int64_t section = -1;
    int resample = -1;
  };
  const std::int64_t total = geom.count * resamples;
  std::vector<Best> per_pair(total);

  parallel_for(total, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t t = begin; t < end; ++t) {
      const std::int64_t i = t / resamples;
      const int r = static_cast<int>(t % resamples);
      const std::int64_t offset = i * geom.size;
      const std::uint64_t s =
          mix_seed(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(layer)),
                            static_cast<std::uint64_t>(i)),
                   static_cast<std::uint64_t>(r));
      const auto masks = sample_flip_masks(static_cast<std::size_t>(geom.size), config, ber, s);
      std::int64_t flipped = 0;
      std::int64_t matched = 0;
      for (std::int64_t j = 0; j < geom.size; ++j) {
        if (masks[j] == 0) continue;
        const std::uint8_t code = wq.codes[offset + j];
        const double delta = cs.decode(code ^ masks[j]) - cs.decode(code);
        const double d = delta > 0.0 ? 1.0 : -1.0;  // flipped bits never cancel
        const double gv = gw.data[offset + j];
        const double gs = gv > 0.0 ? 1.0 : (gv < 0.0 ? -1.0 : 0.0);
        ++flipped;
        if (d == gs) ++matched;
      }
      per_pair[t].section = i;
      per_pair[t].resample = r;
      per_pair[t].match =
          flipped == 0 ? 0.0 : 100.0 * static_cast<double>(matched) / static_cast<double>(flipped);
    }
  });

  Best best;
  for (const auto& b : per_pair)
    if (b.match > best.match) best = b;  // strict: lowest (section, resample) wins ties

  SectionSelection sel;
  sel.ref.layer = layer;
  sel.ref.index = static_cast<int>(best.section);
  sel.ref.shape = geom.shape;
  sel.ref.offset = best.section * geom.size;
  sel.ref.size = geom.size;
  sel.match_percent = best.match;
  sel.resample = best.resample;
  sel.selection_config = config;
  sel.mask_seed =
      mix_seed(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(layer)),
                        static_cast<std::uint64_t>(best.section)),
               static_cast<std::uint64_t>(best.resample));
  sel.mask = sample_flip_masks(static_cast<std::size_t>(geom.size), config, ber, sel.mask_seed);
  return sel;
}

Tensor frozen_noise_direction(const Model& model, const SectionSelection& sel) {
  const QuantTensor wq = quantize(model.params.layers[sel.ref.layer].weight,
                                  *model.schemes.weight[sel.ref.layer]);
  const CodeScheme cs = wq.scheme.code_scheme();
  Tensor d({sel.ref.size});
  for (std::int64_t j = 0; j < sel.ref.size; ++j) {
    if (sel.mask[j] == 0) {
      d.data[j] = 0.0;
      continue;
    }
    const std::uint8_t code = wq.codes[sel.ref.offset + j];
    const double delta = cs.decode(code ^ sel.mask[j]) - cs.decode(code);
    d.data[j] = delta > 0.0 ? 1.0 : -1.0;
  }
  return d;
}

Model apply_section_attack(const Model& model, const SectionSelection& sel, double mu,
                           AttackMode mode, std::int64_t elements) {
  if (elements < 0 || elements > sel.ref.size) elements = sel.ref.size;
  Model out = model;
  Tensor& w = out.params.layers[sel.ref.layer].weight;
  if (mode == AttackMode::ideal) {
    const Tensor d = frozen_noise_direction(model, sel);
    for (std::int64_t j = 0; j < elements; ++j)
      w.data[sel.ref.offset + j] += mu * d.data[j];
  } else {
    // Replay the frozen hardware mask: master weights move onto the exact
    // flipped grid values, so re-quantization reproduces code ^ mask.
    const QuantTensor wq = quantize(model.params.layers[sel.ref.layer].weight,
                                    *model.schemes.weight[sel.ref.layer]);
    const CodeScheme cs = wq.scheme.code_scheme();
    for (std::int64_t j = 0; j < elements; ++j)
      w.data[sel.ref.offset + j] = cs.decode(wq.codes[sel.ref.offset + j] ^ sel.mask[j]);
  }
  return out;
}

SectionAttackReport attack_section(const Model& model, const Dataset& ds,
                                   const SectionSelection& sel, double mu, AttackMode mode,
                                   const BitErrorModel& ber, std::uint64_t seed,
                                   std::int64_t eval_subset) {
  if (mu < 0.0) throw RangeError("mu must be non-negative");
  SectionAttackReport rep;
  rep.ref = sel.ref;
  rep.match_percent = sel.match_percent;
  rep.mu = mu;
  rep.mode = mode;
  rep.selection_config = sel.selection_config;
  rep.attack_config = mu > 0.0 ? config_for_mu(mu) : sel.selection_config;

  const EvalResult pre = evaluate(model, ds, NoisePlan::none(), ber, seed, eval_subset);
  rep.pre_accuracy = pre.accuracy;
  rep.pre_confidence = pre.mean_confidence;

  const Model attacked = apply_section_attack(model, sel, mu, mode);
  const EvalResult post = evaluate(attacked, ds, NoisePlan::none(), ber, seed, eval_subset);
  rep.post_accuracy = post.accuracy;
  rep.post_confidence = post.mean_confidence;
  return rep;
}

std::vector<SweepPoint> subsection_sweep(const Model& model, const Dataset& ds,
                                         const SectionSelection& sel,
                                         const std::vector<double>& fractions, double mu,
                                         const BitErrorModel& ber, std::uint64_t seed,
                                         std::int64_t eval_subset) {
  std::vector<SweepPoint> out;
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0))
      throw RangeError("subsection fraction must be in (0,1], got " + std::to_string(f));
    const std::int64_t elements =
        std::min<std::int64_t>(sel.ref.size,
                               static_cast<std::int64_t>(std::ceil(f * static_cast<double>(sel.ref.size))));
    const Model attacked = apply_section_attack(model, sel, mu, AttackMode::ideal, elements);
    const EvalResult r = evaluate(attacked, ds, NoisePlan::none(), ber, seed, eval_subset);
    out.push_back({f, r.accuracy, r.mean_confidence});
  }
  return out;
}

std::vector<SensitivityCell> layer_sensitivity_report(const Model& model, const Dataset& ds,
                                                      const std::vector<double>& mus,
                                                      const BitErrorModel& ber,
                                                      std::uint64_t seed,
                                                      const WeightAttackOptions& opts) {
  Dataset batch;
  const std::int64_t b = std::min<std::int64_t>(opts.batch, ds.size());
  std::vector<std::int64_t> shape = ds.images.shape;
  shape[0] = b;
  batch.images = Tensor(shape);
  const std::int64_t stride = Tensor::numel_of({ds.images.shape.begin() + 1, ds.images.shape.end()});
  std::copy_n(ds.images.data.begin(), b * stride, batch.images.data.begin());
  batch.labels.assign(ds.labels.begin(), ds.labels.begin() + b);

  std::vector<SensitivityCell> grid;
  for (int layer : attackable_layers(model.net, opts.exclude_residual)) {
    const SectionSelection sel = select_section(model, layer, opts.selection_config, ber, batch,
                                                opts.resamples, seed);
    for (double mu : mus) {
      SensitivityCell cell;
      cell.layer = layer;
      cell.mu = mu;
      cell.report =
          attack_section(model, ds, sel, mu, AttackMode::ideal, ber, seed, opts.eval_subset);
      grid.push_back(cell);
    }
  }
  return grid;
}

}  // namespace htsim

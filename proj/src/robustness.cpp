#include "htsim/robustness.hpp"

#include <algorithm>

#include "htsim/attacks.hpp"
#include "htsim/parallel.hpp"

namespace htsim {

const char* layer_label_name(LayerLabel label) {
  switch (label) {
    case LayerLabel::strong: return "strong";
    case LayerLabel::moderate: return "moderate";
    case LayerLabel::weak: return "weak";
  }
  return "?";
}

LayerLabel label_for_improvement(double improvement_points) {
  if (improvement_points > 10.0) return LayerLabel::strong;
  if (improvement_points > 5.0) return LayerLabel::moderate;
  return LayerLabel::weak;
}

RobustnessSearch::RobustnessSearch(const Model& model, const Dataset& ds,
                                   const BitErrorModel& ber, SearchOptions opts)
    : model_(model), ber_(ber), opts_(opts) {
  if (ds.size() == 0) throw RangeError("dataset is empty");
  if (model.net.layers.empty()) throw LayerError("network has no layers");

  const auto mbs = model.net.activation_mb_layers();
  const int last = static_cast<int>(model.net.layers.size()) - 1;
  for (int l : mbs)
    if (l != last) scannable_.push_back(l);

  const std::int64_t n = opts_.subset > 0 ? std::min(opts_.subset, ds.size()) : ds.size();
  std::vector<std::int64_t> img_shape = ds.images.shape;
  img_shape[0] = n;
  eval_clean_.images = Tensor(img_shape);
  eval_clean_.labels.assign(ds.labels.begin(), ds.labels.begin() + n);
  const std::int64_t stride = Tensor::numel_of({ds.images.shape.begin() + 1, ds.images.shape.end()});
  std::copy_n(ds.images.data.begin(), n * stride, eval_clean_.images.data.begin());

  eval_adv_.images = Tensor(img_shape);
  eval_adv_.labels = eval_clean_.labels;
  parallel_for(n, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t i = begin; i < end; ++i) {
      const Tensor adv = fgsm(model_.net, model_.params, eval_clean_.example(i),
                              eval_clean_.labels[i], opts_.epsilon);
      std::copy(adv.data.begin(), adv.data.end(), eval_adv_.images.data.begin() + i * stride);
    }
  });

  baseline_clean_ = eval_noisy(eval_clean_, NoisePlan::none()).accuracy;
  baseline_adv_ = eval_noisy(eval_adv_, NoisePlan::none()).accuracy;
}

EvalResult RobustnessSearch::eval_noisy(const Dataset& ds, const NoisePlan& plan) const {
  NoisePlan p = plan;
  p.scope = opts_.scope;
  return evaluate(model_, ds, p, ber_, opts_.seed);
}

LayerScanResult RobustnessSearch::scan_layer(int layer) const {
  if (std::find(scannable_.begin(), scannable_.end(), layer) == scannable_.end())
    throw LayerError("layer " + std::to_string(layer) +
                     " has no scannable activation memory bank");
  LayerScanResult res;
  res.layer = layer;
  res.baseline_adv_acc = baseline_adv_;
  double best = -1.0;
  for (int n6 = 1; n6 <= 7; ++n6) {
    const HybridConfig cfg{8 - n6, n6, opts_.v_dd};
    NoisePlan plan;
    plan.entries.push_back({layer, NoiseTarget::activation_mb, cfg});
    const double acc = eval_noisy(eval_adv_, plan).accuracy;
    res.adv_acc_by_n6[static_cast<std::size_t>(n6 - 1)] = acc;
    // Strictly-greater keeps the first (largest n8) among ties.
    if (acc > best) {
      best = acc;
      res.best_config = cfg;
    }
  }
  res.best_adv_acc = best;
  res.label = label_for_improvement(res.improvement());
  return res;
}

BestConfigStore RobustnessSearch::combine_search(
    const std::vector<LayerScanResult>& scans) const {
  BestConfigStore store;
  store.v_dd = opts_.v_dd;
  store.epsilon = opts_.epsilon;
  store.baseline_clean_acc = baseline_clean_;
  store.baseline_adv_acc = baseline_adv_;
  store.scans = scans;

  std::vector<const LayerScanResult*> candidates;
  for (const auto& s : store.scans)
    if (s.label != LayerLabel::weak) candidates.push_back(&s);

  if (candidates.empty()) {
    store.combined_adv_acc = baseline_adv_;
    store.combined_clean_acc = baseline_clean_;
    store.clean_deviation = 0.0;
    store.note = "no strong or moderate layers found; keeping the baseline configuration";
    return store;
  }

  const int n = static_cast<int>(candidates.size());
  const int max_k = std::min(opts_.max_subset, n);
  double best_acc = -1.0;
  std::vector<int> best_pick;

  // Subsets in ascending size then lexicographic order; strict improvement
  // keeps the smallest, lexicographically first argmax.
  std::vector<int> pick;
  int evaluated = 0;
  auto eval_pick = [&]() {
    NoisePlan plan;
    for (int idx : pick)
      plan.entries.push_back({candidates[idx]->layer, NoiseTarget::activation_mb,
                              candidates[idx]->best_config});
    const double acc = eval_noisy(eval_adv_, plan).accuracy;
    ++evaluated;
    if (acc > best_acc) {
      best_acc = acc;
      best_pick = pick;
    }
  };
  auto rec = [&](auto&& self, int start, int remaining) -> void {
    if (remaining == 0) {
      eval_pick();
      return;
    }
    for (int i = start; i <= n - remaining; ++i) {
      pick.push_back(i);
      self(self, i + 1, remaining - 1);
      pick.pop_back();
    }
  };
  for (int k = 1; k <= max_k; ++k) rec(rec, 0, k);

  store.subsets_evaluated = evaluated;
  for (int idx : best_pick)
    store.chosen.push_back({candidates[idx]->layer, candidates[idx]->best_config});
  store.combined_adv_acc = best_acc;

  NoisePlan chosen_plan;
  for (const auto& c : store.chosen)
    chosen_plan.entries.push_back({c.layer, NoiseTarget::activation_mb, c.config});
  store.combined_clean_acc = eval_noisy(eval_clean_, chosen_plan).accuracy;
  store.clean_deviation = store.baseline_clean_acc - store.combined_clean_acc;
  return store;
}

BestConfigStore RobustnessSearch::run() const {
  std::vector<LayerScanResult> scans;
  scans.reserve(scannable_.size());
  for (int layer : scannable_) scans.push_back(scan_layer(layer));
  return combine_search(scans);
}

std::vector<ConfigTableRow> emit_config_table(const BestConfigStore& store,
                                              const NetworkDef& net) {
  std::vector<ConfigTableRow> rows;
  for (int layer : net.activation_mb_layers()) {
    ConfigTableRow row;
    row.layer = layer;
    row.kind = layer_kind_name(net.layers[layer].kind);
    row.config = "H";
    for (const auto& c : store.chosen)
      if (c.layer == layer)
        row.config = std::to_string(c.config.n8) + "/" + std::to_string(c.config.n6);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace htsim

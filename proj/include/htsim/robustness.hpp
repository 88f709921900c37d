#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "htsim/nn.hpp"

namespace htsim {

enum class LayerLabel { strong, moderate, weak };

const char* layer_label_name(LayerLabel label);

// strong: SNI lifts adversarial accuracy by more than 10 points over the
// baseline; moderate: more than 5 and at most 10; weak: everything else.
LayerLabel label_for_improvement(double improvement_points);

struct LayerScanResult {
  int layer = -1;
  HybridConfig best_config;
  double best_adv_acc = 0.0;
  double baseline_adv_acc = 0.0;
  LayerLabel label = LayerLabel::weak;
  std::array<double, 7> adv_acc_by_n6{};  // n6 = 1..7 at fixed v_dd

  double improvement() const { return best_adv_acc - baseline_adv_acc; }
};

struct ChosenLayer {
  int layer = -1;
  HybridConfig config;
};

struct BestConfigStore {
  double v_dd = 0.0;
  double epsilon = 0.0;
  double baseline_clean_acc = 0.0;
  double baseline_adv_acc = 0.0;
  std::vector<LayerScanResult> scans;
  std::vector<ChosenLayer> chosen;
  double combined_adv_acc = 0.0;
  double combined_clean_acc = 0.0;
  double clean_deviation = 0.0;  // baseline clean - clean with SNI
  int subsets_evaluated = 0;
  std::string note;
};

struct SearchOptions {
  double epsilon = 0.05;
  double v_dd = 0.68;
  std::uint64_t seed = 0;
  std::int64_t subset = 1000;  // evaluation subset size per candidate
  int max_subset = 4;          // largest layer combination tried
  NoiseScope scope = NoiseScope::per_image;
};

// Per-layer scan plus combination search. Adversarial examples are produced
// once (gradients are noise-free, so they do not depend on the candidate
// configuration) and reused across all candidate evaluations.
class RobustnessSearch {
public:
  RobustnessSearch(const Model& model, const Dataset& ds, const BitErrorModel& ber,
                   SearchOptions opts);

  // Layers eligible for scanning: every activation memory bank except the
  // final layer's.
  const std::vector<int>& scannable_layers() const { return scannable_; }

  double baseline_clean_acc() const { return baseline_clean_; }
  double baseline_adv_acc() const { return baseline_adv_; }

  // Adversarial accuracy under SNI on one layer for each n6 in [1,7] at the
  // fixed search voltage; returns the best configuration and its label.
  LayerScanResult scan_layer(int layer) const;

  // Enumerates combinations of strong and moderate layers (sizes 1 to
  // max_subset) at their stored configurations and keeps the argmax.
  BestConfigStore combine_search(const std::vector<LayerScanResult>& scans) const;

  // Full pipeline: scan every candidate layer, then combine.
  BestConfigStore run() const;

private:
  EvalResult eval_noisy(const Dataset& ds, const NoisePlan& plan) const;

  const Model& model_;
  const BitErrorModel& ber_;
  SearchOptions opts_;
  std::vector<int> scannable_;
  Dataset eval_clean_;  // evaluation subset
  Dataset eval_adv_;    // FGSM views of the same subset
  double baseline_clean_ = 0.0;
  double baseline_adv_ = 0.0;
};

struct ConfigTableRow {
  int layer = -1;
  std::string kind;    // conv2d / maxpool / ...
  std::string config;  // "3/5" for chosen layers, "H" otherwise
};

// Paper-style table: one row per activation memory bank, homogeneous banks
// marked "H".
std::vector<ConfigTableRow> emit_config_table(const BestConfigStore& store,
                                              const NetworkDef& net);

}  // namespace htsim

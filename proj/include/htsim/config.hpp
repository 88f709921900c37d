#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "htsim/faultmodel.hpp"
#include "htsim/hwcost.hpp"
#include "htsim/nn.hpp"

namespace htsim {

// Experiment configuration, loaded from a JSON document. The seed is
// mandatory: nothing in the toolchain seeds itself from the clock.
struct ExperimentConfig {
  std::string model_path;
  std::string images_path;
  std::string labels_path;

  std::string ber_table_path;            // empty: calibrated default table
  std::string calibration_targets_path;  // alternative to ber_table_path

  double v_dd = 0.68;
  std::vector<double> v_dd_list{0.65, 0.68, 0.72};
  std::vector<double> epsilons{0.05, 0.1, 0.2, 0.3};
  std::vector<double> mus{0.01, 0.02, 0.04, 0.06, 0.1};

  std::uint64_t seed = 0;
  std::int64_t eval_subset = 1000;
  int max_subset = 4;
  int resamples = 64;
  int batch = 32;
  NoiseScope noise_scope = NoiseScope::per_image;
  std::string selection_ratio = "7-1";
  double selection_v_dd = 0.72;
  bool exclude_residual = true;

  CellCostModel cost;
  double v_scaled = 0.68;

  std::string out_dir = "reports";

  // Optional standing noise plan, used by the infer subcommand.
  struct PlanEntry {
    int layer = -1;
    std::string target;  // "activation_mb" | "parameter_mb"
    std::string ratio;   // "3-5"
  };
  std::vector<PlanEntry> plan;

  std::string canonical_json;  // sorted-key dump of the parsed document
};

ExperimentConfig load_config(const std::string& path);

// FNV-1a 64 over the canonical config document, as fixed-width hex.
std::string config_hash(const ExperimentConfig& cfg);

// BER table file: {"extrapolation_mode": "clamp", "points": [{"v_dd":..,
// "p_flip":..}, ...]}.
BitErrorModel load_ber_table(const std::string& path);
void save_ber_table(const std::string& path, const BitErrorModel& model);

// Calibration targets file: {"scale": .., "targets": [{"mu":.., "ratio":
// "3-5", "v_dd": ..}, ...]}.
std::vector<CalibrationTarget> load_calibration_targets(const std::string& path, double* scale);

// Table resolution order: explicit table file, calibration targets, default.
BitErrorModel resolve_ber_model(const ExperimentConfig& cfg);

NoisePlan resolve_plan(const ExperimentConfig& cfg);

}  // namespace htsim

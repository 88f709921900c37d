#pragma once

#include <cstdint>
#include <vector>

#include "htsim/errors.hpp"
#include "htsim/faultmodel.hpp"

namespace htsim {

// Dynamic-energy cell cost model: a 6T access at nominal voltage costs
// e6_nominal, an 8T access k8 times that, and dynamic energy scales with
// (V / v_nominal)^2. Area is voltage-independent.
struct CellCostModel {
  double e6_nominal = 1.0;
  double k8 = 1.13;          // 8T/6T energy ratio at equal voltage
  double area6 = 1.0;
  double area_ratio_8T = 1.3;
  double v_nominal = 0.9;

  void validate() const;
  double energy_6t(double v) const { return e6_nominal * (v / v_nominal) * (v / v_nominal); }
  double energy_8t(double v) const { return k8 * energy_6t(v); }
};

enum class Paradigm { energy_efficient, area_efficient };

// One memory bank worth of words: n8 bits per word in 8T cells, n6 in 6T,
// all on the same rail.
struct BankCells {
  std::int64_t words = 0;
  int n8 = 8;
  int n6 = 0;
  double rail_v = 0.0;
};

struct MemoryDesign {
  Paradigm paradigm = Paradigm::energy_efficient;
  std::vector<BankCells> banks;  // one per layer
};

double total_energy(const MemoryDesign& design, const CellCostModel& model);
double total_area(const MemoryDesign& design, const CellCostModel& model);

// Signed percent difference of a relative to b: 100 * (E_a - E_b) / E_b.
double energy_compare(const MemoryDesign& a, const MemoryDesign& b, const CellCostModel& model);
double area_compare(const MemoryDesign& a, const MemoryDesign& b, const CellCostModel& model);

// Chosen noisy layers keep their hybrid split at the scaled rail. Non-noisy
// layers become homogeneous 8T on the same scaled rail (energy paradigm) or
// homogeneous 6T on a second, nominal rail (area paradigm).
struct NoisyLayerChoice {
  std::int64_t words = 0;
  bool noisy = false;
  HybridConfig config;  // meaningful when noisy
};

MemoryDesign paradigm_config(const std::vector<NoisyLayerChoice>& layers, Paradigm paradigm,
                             double v_scaled, const CellCostModel& model);

}  // namespace htsim

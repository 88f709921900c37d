#include "htsim/hwcost.hpp"

namespace htsim {

void CellCostModel::validate() const {
  if (!(e6_nominal > 0.0 && k8 > 0.0 && area6 > 0.0 && v_nominal > 0.0))
    throw RangeError("cost model constants must be positive");
  if (!(area_ratio_8T > 1.0)) throw RangeError("8T cells must be larger than 6T cells");
}

double total_energy(const MemoryDesign& design, const CellCostModel& model) {
  model.validate();
  double e = 0.0;
  for (const auto& b : design.banks) {
    if (b.words < 0 || b.n8 + b.n6 != 8) throw RangeError("bank must hold 8-bit words");
    e += static_cast<double>(b.words) *
         (b.n8 * model.energy_8t(b.rail_v) + b.n6 * model.energy_6t(b.rail_v));
  }
  return e;
}

double total_area(const MemoryDesign& design, const CellCostModel& model) {
  model.validate();
  double a = 0.0;
  for (const auto& b : design.banks)
    a += static_cast<double>(b.words) *
         (b.n8 * model.area6 * model.area_ratio_8T + b.n6 * model.area6);
  return a;
}

double energy_compare(const MemoryDesign& a, const MemoryDesign& b, const CellCostModel& model) {
  const double eb = total_energy(b, model);
  if (eb == 0.0) throw RangeError("reference design has zero energy");
  return 100.0 * (total_energy(a, model) - eb) / eb;
}

double area_compare(const MemoryDesign& a, const MemoryDesign& b, const CellCostModel& model) {
  const double ab = total_area(b, model);
  if (ab == 0.0) throw RangeError("reference design has zero area");
  return 100.0 * (total_area(a, model) - ab) / ab;
}

MemoryDesign paradigm_config(const std::vector<NoisyLayerChoice>& layers, Paradigm paradigm,
                             double v_scaled, const CellCostModel& model) {
  model.validate();
  if (!(v_scaled > 0.0)) throw RangeError("scaled voltage must be positive");
  MemoryDesign design;
  design.paradigm = paradigm;
  for (const auto& l : layers) {
    BankCells bank;
    bank.words = l.words;
    if (l.noisy) {
      l.config.validate();
      bank.n8 = l.config.n8;
      bank.n6 = l.config.n6;
      bank.rail_v = v_scaled;
    } else if (paradigm == Paradigm::energy_efficient) {
      bank.n8 = 8;
      bank.n6 = 0;
      bank.rail_v = v_scaled;
    } else {
      bank.n8 = 0;
      bank.n6 = 8;
      bank.rail_v = model.v_nominal;
    }
    design.banks.push_back(bank);
  }
  return design;
}

}  // namespace htsim

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "htsim/nn.hpp"

namespace htsim {

// Slice of layer `layer`'s weight tensor along the output-feature-map
// dimension: flat range [offset, offset + size) of the weight data.
struct SectionRef {
  int layer = -1;
  int index = -1;
  std::vector<std::int64_t> shape;  // [N_ifm, k, k] for conv, [in] for fc
  std::int64_t offset = 0;
  std::int64_t size = 0;
};

// Percent of positions, among those where the noise direction is nonzero,
// where it equals the gradient sign. An all-zero direction scores 0 (with a
// warning on stderr: nothing flipped, nothing to match).
double match_fraction(const Tensor& direction, const Tensor& grad_sign);

struct SectionSelection {
  SectionRef ref;
  double match_percent = 0.0;
  std::vector<std::uint8_t> mask;  // frozen flip masks over the section codes
  std::uint64_t mask_seed = 0;
  int resample = -1;
  HybridConfig selection_config;
};

struct WeightAttackOptions {
  int resamples = 64;          // noise draws per section
  int batch = 32;              // examples behind the gradient estimate
  std::int64_t eval_subset = 1000;
  bool exclude_residual = true;
  // Noise configuration used while searching for an aligned direction. The
  // default is the sparsest tabulated point (fewest erroneous cells), which
  // keeps flip masks sparse enough that some draw aligns fully with the
  // gradient sign on every section size.
  HybridConfig selection_config{7, 1, 0.72};
};

// Layers whose weights can be attacked: conv and fc parameter banks.
// Residual taps and adds carry no parameters (identity shortcuts), so the
// exclude_residual flag only filters weighted layers sitting between a
// residual tap and its add, which the paper's shortcut layers would map to.
std::vector<int> attackable_layers(const NetworkDef& net, bool exclude_residual);

// Scores every (section, resample) pair of one layer by the sign match
// between its sampled noise direction and the loss gradient on a fixed
// batch; returns the argmax with its frozen mask. Ties keep the lowest
// (section, resample).
SectionSelection select_section(const Model& model, int layer, const HybridConfig& config,
                                const BitErrorModel& ber, const Dataset& batch,
                                int resamples, std::uint64_t seed);

enum class AttackMode { ideal, sampled };

const char* attack_mode_name(AttackMode mode);

// Perturbed copy of the model. ideal: the first `elements` (default: all) of
// the section move by mu along the frozen noise direction in float master
// space; sampled: the section's master weights move onto the exact grid
// values of code XOR mask. Weights outside the range stay bit-identical.
Model apply_section_attack(const Model& model, const SectionSelection& sel, double mu,
                           AttackMode mode, std::int64_t elements = -1);

// Noise direction of the frozen mask over the section's quantized codes.
Tensor frozen_noise_direction(const Model& model, const SectionSelection& sel);

struct SectionAttackReport {
  SectionRef ref;
  double match_percent = 0.0;
  double mu = 0.0;
  AttackMode mode = AttackMode::ideal;
  HybridConfig attack_config;     // configuration paired with mu
  HybridConfig selection_config;  // configuration the mask was drawn at
  double pre_accuracy = 0.0;
  double pre_confidence = 0.0;
  double post_accuracy = 0.0;
  double post_confidence = 0.0;
  double subsection_fraction = 1.0;
};

// Perturbs only the selected section. ideal: W + mu * D with D the frozen
// noise direction (Eq-style idealization); sampled: replay the frozen flip
// mask on the quantized codes (exact hardware deltas). Everything outside
// the section stays bit-identical.
SectionAttackReport attack_section(const Model& model, const Dataset& ds,
                                   const SectionSelection& sel, double mu, AttackMode mode,
                                   const BitErrorModel& ber, std::uint64_t seed,
                                   std::int64_t eval_subset);

struct SweepPoint {
  double fraction = 0.0;
  double accuracy = 0.0;
  double confidence = 0.0;
};

// Attacks the first ceil(f * size) section elements (flat order) for each
// fraction f in (0, 1].
std::vector<SweepPoint> subsection_sweep(const Model& model, const Dataset& ds,
                                         const SectionSelection& sel,
                                         const std::vector<double>& fractions, double mu,
                                         const BitErrorModel& ber, std::uint64_t seed,
                                         std::int64_t eval_subset);

struct SensitivityCell {
  int layer = -1;
  double mu = 0.0;
  SectionAttackReport report;
};

// select_section + attack_section for every attackable layer and every mu;
// the per-layer sensitivity grid behind the accuracy-vs-mu plots.
std::vector<SensitivityCell> layer_sensitivity_report(const Model& model, const Dataset& ds,
                                                      const std::vector<double>& mus,
                                                      const BitErrorModel& ber,
                                                      std::uint64_t seed,
                                                      const WeightAttackOptions& opts);

}  // namespace htsim

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "htsim/errors.hpp"

namespace htsim {

// A hybrid 8-bit word: the n8 most significant bits live in 8T cells (never
// erroneous), the n6 least significant bits in 6T cells that flip with a
// supply-voltage dependent probability. Written "n8-n6", e.g. "3-5".
struct HybridConfig {
  int n8 = 8;
  int n6 = 0;
  double v_dd = 0.0;

  void validate() const;
  std::string ratio_str() const;  // "3-5"
  std::string str() const;        // "3-5 @ 0.68V"
};

HybridConfig parse_ratio(const std::string& ratio, double v_dd);

enum class Extrapolation { clamp, error };

struct BerPoint {
  double v_dd = 0.0;
  double p_flip = 0.0;
};

// Per-bit flip probability of a 6T cell as a function of supply voltage.
// Tabulated points with log-linear interpolation in probability; 8T cells
// are error-free at every supported voltage by definition.
class BitErrorModel {
public:
  BitErrorModel() = default;
  BitErrorModel(std::vector<BerPoint> points, Extrapolation mode);

  double ber_at(double v_dd) const;

  const std::vector<BerPoint>& points() const { return points_; }
  Extrapolation extrapolation_mode() const { return mode_; }
  bool empty() const { return points_.empty(); }

private:
  std::vector<BerPoint> points_;
  Extrapolation mode_ = Extrapolation::clamp;
};

enum class Signedness { two_complement, unsigned_int };

// Value-domain interpretation of the 8-bit codes a noise sample acts on.
struct CodeScheme {
  Signedness signedness = Signedness::two_complement;
  double scale = 1.0;  // value per LSB, > 0

  double decode(std::uint8_t code) const {
    if (signedness == Signedness::two_complement)
      return static_cast<double>(static_cast<std::int8_t>(code)) * scale;
    return static_cast<double>(code) * scale;
  }
};

struct NoiseSample {
  std::vector<double> deltas;  // dequantized value perturbation per word
  std::uint64_t seed = 0;
  HybridConfig config;

  double mean_abs() const;
};

// Exact E|N| for one stored word under the given config, assuming the n6
// stored LSBs are uniform i.i.d. and each 6T bit flips independently with
// p = ber_at(model, config.v_dd). Exhaustive over all 2^n6 stored patterns
// x 2^n6 flip masks. Independent of signedness (the MSB-flip sign swap is
// measure-preserving under uniform stored bits).
double expected_mu(const HybridConfig& config, const BitErrorModel& model, double scale);

// Same expectation for an explicitly given per-bit flip probability.
double expected_mu_at_p(int n6, double p_flip, double scale);

// Per-word standard deviation of |N| (used to size Monte Carlo tolerances).
double stddev_abs_noise_at_p(int n6, double p_flip, double scale);

// Flip masks for `count` words: each of the n6 LSBs set independently with
// probability ber_at(model, v_dd). Deterministic for a fixed seed.
std::vector<std::uint8_t> sample_flip_masks(std::size_t count, const HybridConfig& config,
                                            const BitErrorModel& model, std::uint64_t seed);

NoiseSample sample_noise(std::span<const std::uint8_t> codes, const CodeScheme& scheme,
                         const HybridConfig& config, const BitErrorModel& model,
                         std::uint64_t seed);

struct CalibrationTarget {
  HybridConfig config;
  double mu_target = 0.0;
};

// Fits one p_flip per distinct supply voltage (bisection on expected_mu) so
// that every target is matched within `tolerance` relative error. Throws
// CalibrationError when a target exceeds the maximum achievable perturbation
// for its config, when two targets at the same voltage are mutually
// incompatible, or when the fitted table would not be monotone in voltage.
BitErrorModel calibrate(const std::vector<CalibrationTarget>& targets, double scale,
                        double tolerance = 0.10,
                        Extrapolation mode = Extrapolation::clamp);

// Reference (mu, config) anchor pairs used for the default table and by the
// attack CLI to map a requested perturbation onto a memory configuration.
struct MuConfigPair {
  double mu;
  HybridConfig config;
};
const std::vector<MuConfigPair>& reference_mu_configs();

// Config paired with a requested mu (nearest reference anchor).
HybridConfig config_for_mu(double mu);

// Scale used when calibrating the default table (one LSB of a signed 8-bit
// word covering [-1, 1)).
inline constexpr double kDefaultCalibrationScale = 0.0078125;  // 2^-7

// Table fitted against the reference anchors at kDefaultCalibrationScale.
// Built once, cached.
const BitErrorModel& default_bit_error_model();

}  // namespace htsim

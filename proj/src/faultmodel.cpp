#include "htsim/faultmodel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <map>

#include "htsim/rng.hpp"

namespace htsim {

namespace {

std::string format_voltage(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

void HybridConfig::validate() const {
  if (n8 < 0 || n8 > 8 || n6 < 0 || n6 > 8 || n8 + n6 != 8)
    throw RangeError("hybrid config must split 8 bits, got " + ratio_str());
  if (!(v_dd > 0.0)) throw RangeError("supply voltage must be positive");
}

std::string HybridConfig::ratio_str() const {
  return std::to_string(n8) + "-" + std::to_string(n6);
}

std::string HybridConfig::str() const {
  return ratio_str() + " @ " + format_voltage(v_dd) + "V";
}

HybridConfig parse_ratio(const std::string& ratio, double v_dd) {
  const auto dash = ratio.find('-');
  if (dash == std::string::npos)
    throw RangeError("ratio must look like \"n8-n6\", got \"" + ratio + "\"");
  HybridConfig cfg;
  try {
    cfg.n8 = std::stoi(ratio.substr(0, dash));
    cfg.n6 = std::stoi(ratio.substr(dash + 1));
  } catch (const std::exception&) {
    throw RangeError("ratio must look like \"n8-n6\", got \"" + ratio + "\"");
  }
  cfg.v_dd = v_dd;
  cfg.validate();
  return cfg;
}

BitErrorModel::BitErrorModel(std::vector<BerPoint> points, Extrapolation mode)
    : points_(std::move(points)), mode_(mode) {
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const auto& pt = points_[i];
    if (!(pt.p_flip >= 0.0 && pt.p_flip <= 1.0))
      throw RangeError("p_flip must be in [0,1], got " + std::to_string(pt.p_flip));
    if (i > 0) {
      if (!(pt.v_dd > points_[i - 1].v_dd))
        throw RangeError("BER table voltages must be strictly increasing");
      if (pt.p_flip > points_[i - 1].p_flip)
        throw RangeError("BER table p_flip must be non-increasing in voltage");
    }
  }
}

double BitErrorModel::ber_at(double v_dd) const {
  if (points_.empty()) throw RangeError("BER table is empty");
  if (v_dd <= points_.front().v_dd) {
    if (v_dd == points_.front().v_dd || mode_ == Extrapolation::clamp)
      return points_.front().p_flip;
    throw RangeError("v_dd " + format_voltage(v_dd) + "V below tabulated range");
  }
  if (v_dd >= points_.back().v_dd) {
    if (v_dd == points_.back().v_dd || mode_ == Extrapolation::clamp)
      return points_.back().p_flip;
    throw RangeError("v_dd " + format_voltage(v_dd) + "V above tabulated range");
  }
  std::size_t hi = 1;
  while (points_[hi].v_dd < v_dd) ++hi;
  const auto& a = points_[hi - 1];
  const auto& b = points_[hi];
  if (v_dd == a.v_dd) return a.p_flip;
  if (v_dd == b.v_dd) return b.p_flip;
  const double t = (v_dd - a.v_dd) / (b.v_dd - a.v_dd);
  // Log-linear needs positive endpoints; fall back to linear when one is zero.
  if (a.p_flip > 0.0 && b.p_flip > 0.0)
    return std::exp((1.0 - t) * std::log(a.p_flip) + t * std::log(b.p_flip));
  return (1.0 - t) * a.p_flip + t * b.p_flip;
}

double NoiseSample::mean_abs() const {
  if (deltas.empty()) return 0.0;
  double sum = 0.0;
  for (double d : deltas) sum += std::fabs(d);
  return sum / static_cast<double>(deltas.size());
}

namespace {

// Mean |(s^m) - s| over uniform stored patterns s, per mask m, in LSB units.
double mean_abs_code_delta(int n6, unsigned mask) {
  const unsigned span = 1u << n6;
  std::int64_t total = 0;
  for (unsigned s = 0; s < span; ++s) {
    const std::int64_t d =
        static_cast<std::int64_t>(s ^ mask) - static_cast<std::int64_t>(s);
    total += d < 0 ? -d : d;
  }
  return static_cast<double>(total) / static_cast<double>(span);
}

double mean_sq_code_delta(int n6, unsigned mask) {
  const unsigned span = 1u << n6;
  double total = 0.0;
  for (unsigned s = 0; s < span; ++s) {
    const double d =
        static_cast<double>(static_cast<std::int64_t>(s ^ mask) - static_cast<std::int64_t>(s));
    total += d * d;
  }
  return total / static_cast<double>(span);
}

}  // namespace

double expected_mu_at_p(int n6, double p_flip, double scale) {
  if (n6 < 0 || n6 > 8) throw RangeError("n6 must be in [0,8]");
  if (!(p_flip >= 0.0 && p_flip <= 1.0)) throw RangeError("p_flip must be in [0,1]");
  if (!(scale > 0.0)) throw RangeError("scale must be positive");
  if (n6 == 0 || p_flip == 0.0) return 0.0;
  const unsigned span = 1u << n6;
  double mu = 0.0;
  for (unsigned mask = 1; mask < span; ++mask) {
    const int k = std::popcount(mask);
    const double prob = std::pow(p_flip, k) * std::pow(1.0 - p_flip, n6 - k);
    if (prob == 0.0) continue;
    mu += prob * mean_abs_code_delta(n6, mask);
  }
  return mu * scale;
}

double stddev_abs_noise_at_p(int n6, double p_flip, double scale) {
  if (n6 == 0 || p_flip == 0.0) return 0.0;
  const unsigned span = 1u << n6;
  double m1 = 0.0;
  double m2 = 0.0;
  for (unsigned mask = 1; mask < span; ++mask) {
    const int k = std::popcount(mask);
    const double prob = std::pow(p_flip, k) * std::pow(1.0 - p_flip, n6 - k);
    if (prob == 0.0) continue;
    m1 += prob * mean_abs_code_delta(n6, mask);
    m2 += prob * mean_sq_code_delta(n6, mask);
  }
  const double var = std::max(0.0, m2 - m1 * m1);
  return std::sqrt(var) * scale;
}

double expected_mu(const HybridConfig& config, const BitErrorModel& model, double scale) {
  config.validate();
  return expected_mu_at_p(config.n6, model.ber_at(config.v_dd), scale);
}

std::vector<std::uint8_t> sample_flip_masks(std::size_t count, const HybridConfig& config,
                                            const BitErrorModel& model, std::uint64_t seed) {
  config.validate();
  const double p = model.ber_at(config.v_dd);
  std::vector<std::uint8_t> masks(count, 0);
  if (config.n6 == 0 || p == 0.0) return masks;
  Rng rng(seed);
  for (std::size_t w = 0; w < count; ++w) {
    std::uint8_t m = 0;
    for (int b = 0; b < config.n6; ++b)
      if (rng.bernoulli(p)) m |= static_cast<std::uint8_t>(1u << b);
    masks[w] = m;
  }
  return masks;
}

NoiseSample sample_noise(std::span<const std::uint8_t> codes, const CodeScheme& scheme,
                         const HybridConfig& config, const BitErrorModel& model,
                         std::uint64_t seed) {
  const auto masks = sample_flip_masks(codes.size(), config, model, seed);
  NoiseSample out;
  out.seed = seed;
  out.config = config;
  out.deltas.resize(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    const std::uint8_t flipped = codes[i] ^ masks[i];
    out.deltas[i] = scheme.decode(flipped) - scheme.decode(codes[i]);
  }
  return out;
}

namespace {

// Smallest p whose expected perturbation reaches mu_target (expected_mu is
// monotone non-decreasing in p).
double solve_p_for_mu(int n6, double mu_target, double scale) {
  double lo = 0.0;
  double hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (expected_mu_at_p(n6, mid, scale) < mu_target)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

BitErrorModel calibrate(const std::vector<CalibrationTarget>& targets, double scale,
                        double tolerance, Extrapolation mode) {
  if (targets.empty()) throw CalibrationError("no calibration targets");
  if (!(scale > 0.0)) throw CalibrationError("scale must be positive");

  std::map<double, std::vector<CalibrationTarget>> groups;
  for (const auto& t : targets) {
    t.config.validate();
    if (t.mu_target < 0.0) throw CalibrationError("mu target must be non-negative");
    groups[t.config.v_dd].push_back(t);
  }

  std::vector<BerPoint> points;
  for (const auto& [v_dd, group] : groups) {
    // Per-target feasible p interval [lo, hi] at this voltage.
    double lo = 0.0;
    double hi = 1.0;
    bool any_zero = false;
    bool any_nonzero = false;
    for (const auto& t : group) {
      if (t.mu_target == 0.0) {
        any_zero = true;
        continue;
      }
      any_nonzero = true;
      const double max_mu = expected_mu_at_p(t.config.n6, 1.0, scale);
      if (t.config.n6 == 0 || t.mu_target * (1.0 - tolerance) > max_mu)
        throw CalibrationError("target mu " + std::to_string(t.mu_target) +
                               " not achievable for config " + t.config.str());
      lo = std::max(lo, solve_p_for_mu(t.config.n6, t.mu_target * (1.0 - tolerance), scale));
      hi = std::min(hi, t.mu_target * (1.0 + tolerance) >= max_mu
                            ? 1.0
                            : solve_p_for_mu(t.config.n6, t.mu_target * (1.0 + tolerance), scale));
    }
    double p = 0.0;
    if (any_zero && any_nonzero)
      throw CalibrationError("conflicting targets at " + format_voltage(v_dd) +
                             "V: zero and nonzero mu requested");
    if (any_nonzero) {
      if (lo > hi)
        throw CalibrationError("targets at " + format_voltage(v_dd) +
                               "V are mutually incompatible within tolerance");
      // Geometric mean of the per-target exact solutions, clamped into the
      // window where every target stays within tolerance.
      double log_sum = 0.0;
      int n = 0;
      for (const auto& t : group) {
        if (t.mu_target == 0.0) continue;
        log_sum += std::log(solve_p_for_mu(t.config.n6, t.mu_target, scale));
        ++n;
      }
      p = std::clamp(std::exp(log_sum / n), lo, hi);
    }
    points.push_back({v_dd, p});
  }

  for (std::size_t i = 1; i < points.size(); ++i)
    if (points[i].p_flip > points[i - 1].p_flip)
      throw CalibrationError("fitted table is not monotone: p(" +
                             format_voltage(points[i].v_dd) + "V) > p(" +
                             format_voltage(points[i - 1].v_dd) + "V)");

  return BitErrorModel(std::move(points), mode);
}

const std::vector<MuConfigPair>& reference_mu_configs() {
  static const std::vector<MuConfigPair> pairs = {
      {0.01, {3, 5, 0.68}}, {0.02, {1, 7, 0.72}}, {0.04, {1, 7, 0.69}},
      {0.06, {2, 6, 0.65}}, {0.10, {2, 6, 0.65}},
  };
  return pairs;
}

HybridConfig config_for_mu(double mu) {
  if (!(mu > 0.0)) throw RangeError("mu must be positive");
  const auto& pairs = reference_mu_configs();
  double best = -1.0;
  const MuConfigPair* chosen = nullptr;
  for (const auto& pc : pairs) {
    const double dist = std::fabs(std::log(mu / pc.mu));
    if (chosen == nullptr || dist < best) {
      best = dist;
      chosen = &pc;
    }
  }
  return chosen->config;
}

const BitErrorModel& default_bit_error_model() {
  // The reference anchors carry two different mu values for the same
  // (ratio, voltage) pair; a single flip rate per voltage cannot satisfy
  // both, so the default table is fitted against the larger one (the value
  // the attack pipeline exercises).
  static const BitErrorModel model = [] {
    std::vector<CalibrationTarget> anchors;
    anchors.push_back({{3, 5, 0.68}, 0.01});
    anchors.push_back({{1, 7, 0.72}, 0.02});
    anchors.push_back({{1, 7, 0.69}, 0.04});
    anchors.push_back({{2, 6, 0.65}, 0.10});
    return calibrate(anchors, kDefaultCalibrationScale);
  }();
  return model;
}

}  // namespace htsim

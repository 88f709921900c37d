#pragma once

#include <cstdint>
#include <vector>

#include "htsim/faultmodel.hpp"
#include "htsim/tensor.hpp"

namespace htsim {

// 8-bit fixed-point scheme. Weights use signed two's complement with a
// symmetric clip (codes -127..127), post-ReLU activations use unsigned codes
// 0..255. Codes are stored as raw uint8 bit patterns either way; bit flips
// operate on the raw pattern.
struct QuantScheme {
  Signedness signedness = Signedness::two_complement;
  double scale = 1.0;

  static QuantScheme signed_for_max_abs(double max_abs);
  static QuantScheme unsigned_for_max(double max_val);

  double clip_min() const { return signedness == Signedness::two_complement ? -127.0 * scale : 0.0; }
  double clip_max() const { return signedness == Signedness::two_complement ? 127.0 * scale : 255.0 * scale; }

  CodeScheme code_scheme() const { return CodeScheme{signedness, scale}; }

  bool operator==(const QuantScheme&) const = default;
};

struct QuantTensor {
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> codes;
  QuantScheme scheme;

  std::int64_t numel() const { return static_cast<std::int64_t>(codes.size()); }
};

// Round-to-nearest-even, clip to the scheme's code range.
QuantTensor quantize(const Tensor& x, const QuantScheme& scheme);

Tensor dequantize(const QuantTensor& qt);

// Surgical noise injection: XORs each code with an independently sampled
// flip mask confined to the n6 LSBs. The n8 MSBs are untouched for every
// input and seed. Deterministic per seed and shares its mask stream with
// sample_noise, so dequantize(inject(qt)) - dequantize(qt) reproduces the
// NoiseSample deltas for the same seed.
QuantTensor inject(const QuantTensor& qt, const HybridConfig& config,
                   const BitErrorModel& model, std::uint64_t seed);

}  // namespace htsim

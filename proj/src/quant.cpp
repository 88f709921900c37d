#include "htsim/quant.hpp"

#include <cmath>

namespace htsim {

QuantScheme QuantScheme::signed_for_max_abs(double max_abs) {
  if (!(max_abs > 0.0)) throw RangeError("max_abs must be positive");
  return QuantScheme{Signedness::two_complement, max_abs / 127.0};
}

QuantScheme QuantScheme::unsigned_for_max(double max_val) {
  if (!(max_val > 0.0)) throw RangeError("max_val must be positive");
  return QuantScheme{Signedness::unsigned_int, max_val / 255.0};
}

QuantTensor quantize(const Tensor& x, const QuantScheme& scheme) {
  if (!(scheme.scale > 0.0)) throw RangeError("quant scale must be positive");
  QuantTensor qt;
  qt.shape = x.shape;
  qt.scheme = scheme;
  qt.codes.resize(x.data.size());
  const double inv = 1.0 / scheme.scale;
  if (scheme.signedness == Signedness::two_complement) {
    for (std::size_t i = 0; i < x.data.size(); ++i) {
      double q = std::nearbyint(x.data[i] * inv);  // ties to even
      if (q < -127.0) q = -127.0;
      if (q > 127.0) q = 127.0;
      qt.codes[i] = static_cast<std::uint8_t>(static_cast<std::int8_t>(q));
    }
  } else {
    for (std::size_t i = 0; i < x.data.size(); ++i) {
      double q = std::nearbyint(x.data[i] * inv);
      if (q < 0.0) q = 0.0;
      if (q > 255.0) q = 255.0;
      qt.codes[i] = static_cast<std::uint8_t>(q);
    }
  }
  return qt;
}

Tensor dequantize(const QuantTensor& qt) {
  Tensor out;
  out.shape = qt.shape;
  out.data.resize(qt.codes.size());
  const CodeScheme cs = qt.scheme.code_scheme();
  for (std::size_t i = 0; i < qt.codes.size(); ++i) out.data[i] = cs.decode(qt.codes[i]);
  return out;
}

QuantTensor inject(const QuantTensor& qt, const HybridConfig& config,
                   const BitErrorModel& model, std::uint64_t seed) {
  const auto masks = sample_flip_masks(qt.codes.size(), config, model, seed);
  QuantTensor out = qt;
  for (std::size_t i = 0; i < out.codes.size(); ++i) out.codes[i] ^= masks[i];
  return out;
}

}  // namespace htsim

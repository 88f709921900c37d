#include "htsim/attacks.hpp"

namespace htsim {

namespace {

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

Tensor fgsm(const NetworkDef& net, const Params& params, const Tensor& x, int target,
            double epsilon) {
  if (epsilon < 0.0) throw RangeError("epsilon must be non-negative");
  const Tensor g = grad_input(net, params, x, target);
  Tensor out = x;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    double v = out.data[i] + epsilon * sign_of(g.data[i]);
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    out.data[i] = v;
  }
  return out;
}

double adv_loss(double clean_acc, double adv_acc) { return clean_acc - adv_acc; }

Tensor weight_attack_ideal(const Tensor& w, const Tensor& g, double epsilon) {
  require_same_shape(w, g, "weight_attack_ideal");
  Tensor out = w;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = w.data[i] + epsilon * sign_of(g.data[i]);
  return out;
}

Tensor noise_direction(const Tensor& noise) {
  Tensor out = noise;
  for (auto& v : out.data) v = sign_of(v);
  return out;
}

Tensor weight_attack_sni(const Tensor& w, double mu, const Tensor& direction) {
  require_same_shape(w, direction, "weight_attack_sni");
  Tensor out = w;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = w.data[i] + mu * direction.data[i];
  return out;
}

}  // namespace htsim

#pragma once

#include "htsim/nn.hpp"
#include "htsim/tensor.hpp"

namespace htsim {

// Single-step input attack: x + eps * sign(dL/dx), clamped back into [0,1].
// The gradient is computed on the float network, noise-free; sign(0) leaves
// a coordinate untouched.
Tensor fgsm(const NetworkDef& net, const Params& params, const Tensor& x, int target,
            double epsilon);

// clean accuracy - adversarial accuracy, both in percent.
double adv_loss(double clean_acc, double adv_acc);

// W + eps * sign(g), sign(0) = 0.
Tensor weight_attack_ideal(const Tensor& w, const Tensor& g, double epsilon);

// Elementwise sign of a sampled noise vector, in {-1, 0, +1}.
Tensor noise_direction(const Tensor& noise);

// W + mu * D for a direction vector D with entries in {-1, 0, +1}.
Tensor weight_attack_sni(const Tensor& w, double mu, const Tensor& direction);

}  // namespace htsim

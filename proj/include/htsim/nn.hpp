#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "htsim/quant.hpp"
#include "htsim/tensor.hpp"

namespace htsim {

// ---------------------------------------------------------------------------
// Network definition
// ---------------------------------------------------------------------------

enum class LayerKind {
  conv2d,
  relu,
  maxpool,
  avgpool,
  fc,
  affine,  // folded batchnorm: per-channel scale and shift
  residual_begin,
  residual_add,
};

const char* layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(const std::string& name);

struct LayerDef {
  LayerKind kind = LayerKind::relu;
  // conv2d
  int ofm = 0, ifm = 0, k = 0, stride = 1, pad = 0;
  // pools reuse k/stride; fc uses in/out; affine uses channels
  int in = 0, out = 0;
  int channels = 0;

  static LayerDef conv2d(int ofm, int ifm, int k, int stride, int pad);
  static LayerDef relu();
  static LayerDef maxpool(int k, int stride);
  static LayerDef avgpool(int k, int stride);
  static LayerDef fc(int in, int out);
  static LayerDef affine(int channels);
  static LayerDef residual_begin();
  static LayerDef residual_add();

  bool has_weights() const { return kind == LayerKind::conv2d || kind == LayerKind::fc || kind == LayerKind::affine; }
  // Layers whose weight tensor lives quantized in a parameter memory bank.
  // Affine scale/shift (like biases) stay in the accumulator domain.
  bool has_parameter_mb() const { return kind == LayerKind::conv2d || kind == LayerKind::fc; }
  // residual_begin is a tap point, not a stored output.
  bool has_activation_mb() const { return kind != LayerKind::residual_begin; }
};

struct NetworkDef {
  std::vector<LayerDef> layers;
  int class_count = 0;
  std::vector<std::int64_t> input_shape;  // [C,H,W]

  // Output shape of every layer, validating connectivity and residual
  // pairing. Throws ShapeError on any inconsistency.
  std::vector<std::vector<std::int64_t>> infer_shapes() const;
  std::vector<std::vector<std::int64_t>> infer_shapes(
      const std::vector<std::int64_t>& input) const;

  std::vector<int> activation_mb_layers() const;
  std::vector<int> parameter_mb_layers() const;
};

struct LayerParams {
  Tensor weight;
  Tensor bias;
};

struct Params {
  std::vector<LayerParams> layers;
};

// Expected weight/bias shapes for a layer; empty entries for layers with no
// parameters. Used by loaders and the trainer.
LayerParams zero_params_for(const LayerDef& def);

// ---------------------------------------------------------------------------
// Noise plan
// ---------------------------------------------------------------------------

enum class NoiseTarget { activation_mb, parameter_mb };

enum class NoiseScope { per_image, per_run };

struct NoisePlanEntry {
  int layer = -1;
  NoiseTarget target = NoiseTarget::activation_mb;
  HybridConfig config;
};

struct NoisePlan {
  std::vector<NoisePlanEntry> entries;
  NoiseScope scope = NoiseScope::per_image;

  static NoisePlan none() { return {}; }
  bool empty() const { return entries.empty(); }
  const NoisePlanEntry* find(int layer, NoiseTarget target) const;
  void validate(const NetworkDef& net) const;
};

// ---------------------------------------------------------------------------
// Quantization schemes of a stored model
// ---------------------------------------------------------------------------

struct ModelSchemes {
  QuantScheme input;
  std::vector<std::optional<QuantScheme>> activation;  // per layer
  std::vector<std::optional<QuantScheme>> weight;      // per layer

  void validate(const NetworkDef& net) const;
};

struct Model {
  std::string name;
  NetworkDef net;
  Params params;
  ModelSchemes schemes;
  double reference_clean_accuracy = 0.0;  // percent, quantized clean path
};

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

// Weight tensors pre-quantized under the model schemes, reusable across
// forward calls within an evaluation.
struct QuantizedWeights {
  std::vector<std::optional<QuantTensor>> layers;
  static QuantizedWeights of(const Model& model);
};

struct ForwardTrace {
  // Stored memory-bank content per layer, post-injection (what the next
  // layer actually consumes). Empty QuantTensor for tap points.
  std::vector<QuantTensor> activations;
};

// Quantized execution: every layer output is quantized into its activation
// memory bank; the plan injects bit errors into selected activation or
// parameter banks. Per-layer injection seeds are derived from `seed` and the
// layer index only, so untargeted layers are bit-identical to a clean run.
Tensor forward(const Model& model, const Tensor& x, const NoisePlan& plan,
               const BitErrorModel& ber, std::uint64_t seed,
               const QuantizedWeights* qw = nullptr, ForwardTrace* trace = nullptr);

// Float master-weight execution, no quantization and no noise; the path all
// gradients flow through.
Tensor forward_float(const NetworkDef& net, const Params& params, const Tensor& x);

Tensor softmax(const Tensor& logits);

// Cross-entropy after softmax, natural log.
double loss(const Tensor& logits, int target);

Tensor grad_input(const NetworkDef& net, const Params& params, const Tensor& x, int target);

std::vector<LayerParams> grad_params(const NetworkDef& net, const Params& params,
                                     const Tensor& x, int target);

// Sum of per-example gradients over a batch.
std::vector<LayerParams> grad_params_batch(const NetworkDef& net, const Params& params,
                                           std::span<const Tensor> xs, std::span<const int> ts);

// ---------------------------------------------------------------------------
// Dataset & evaluation
// ---------------------------------------------------------------------------

struct Dataset {
  Tensor images;  // [N,C,H,W], values in [0,1]
  std::vector<int> labels;

  std::int64_t size() const { return images.shape.empty() ? 0 : images.shape[0]; }
  Tensor example(std::int64_t i) const;
};

struct EvalResult {
  double accuracy = 0.0;         // percent of argmax-correct predictions
  double mean_confidence = 0.0;  // percent, mean of max softmax probability
};

// Deterministic for a fixed seed. With NoiseScope::per_image each example
// gets an independently derived mask seed; with per_run all examples share
// `seed`. subset limits evaluation to the first `subset` examples (0 = all).
// Parallelized across examples; the reduction order is fixed by index.
EvalResult evaluate(const Model& model, const Dataset& ds, const NoisePlan& plan,
                    const BitErrorModel& ber, std::uint64_t seed, std::int64_t subset = 0);

}  // namespace htsim

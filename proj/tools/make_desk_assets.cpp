// Generates the desk-scale assets shipped with the repo: a synthetic
// 10-class 32x32 RGB dataset and two trained checkpoints (a small VGG-style
// net and a small residual net). Everything is seeded; rerunning with the
// same arguments rebuilds the same files on the same toolchain.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "htsim/nn.hpp"
#include "htsim/parallel.hpp"
#include "htsim/rng.hpp"
#include "htsim/serialize.hpp"

using namespace htsim;

namespace {

// ---------------------------------------------------------------------------
// Synthetic dataset: ten texture/shape classes that a small CNN separates
// well but that are not linearly trivial.
// ---------------------------------------------------------------------------

constexpr int kSide = 32;

struct Colors {
  double fg[3];
  double bg[3];
};

Colors pick_colors(Rng& rng) {
  Colors c{};
  for (;;) {
    double dist = 0.0;
    for (int i = 0; i < 3; ++i) {
      c.fg[i] = rng.uniform(0.15, 0.85);
      c.bg[i] = rng.uniform(0.15, 0.85);
      dist += std::fabs(c.fg[i] - c.bg[i]);
    }
    if (dist >= 0.6) return c;
  }
}

void paint(Tensor& img, int y, int x, const double* rgb) {
  for (int ch = 0; ch < 3; ++ch) img.data[(ch * kSide + y) * kSide + x] = rgb[ch];
}

Tensor make_image(int cls, Rng& rng) {
  Tensor img({3, kSide, kSide});
  const Colors col = pick_colors(rng);
  const int period = 4 + static_cast<int>(rng.below(5));  // 4..8
  const int phase = static_cast<int>(rng.below(static_cast<std::uint64_t>(period)));
  const double cx = 16.0 + rng.uniform(-6.0, 6.0);
  const double cy = 16.0 + rng.uniform(-6.0, 6.0);
  const double radius = rng.uniform(6.0, 12.0);
  const double angle = rng.uniform(0.0, 6.2831853);
  const double nx = std::cos(angle), ny = std::sin(angle);

  for (int y = 0; y < kSide; ++y) {
    for (int x = 0; x < kSide; ++x) {
      bool fg = false;
      double t = -1.0;  // gradient parameter when >= 0
      switch (cls) {
        case 0: fg = ((y + phase) / (period / 2 + 1)) % 2 == 0; break;  // horizontal stripes
        case 1: fg = ((x + phase) / (period / 2 + 1)) % 2 == 0; break;  // vertical stripes
        case 2: fg = ((x + y + phase) / (period / 2 + 1)) % 2 == 0; break;  // diagonal
        case 3: fg = (((x + phase) / period) + ((y + phase) / period)) % 2 == 0; break;
        case 4: {  // filled disc
          const double d = std::hypot(x - cx, y - cy);
          fg = d <= radius;
          break;
        }
        case 5: {  // square outline
          const double dx = std::fabs(x - cx), dy = std::fabs(y - cy);
          const double half = radius;
          fg = std::max(dx, dy) <= half && std::max(dx, dy) >= half - 2.5;
          break;
        }
        case 6: {  // linear gradient
          t = 0.5 + ((x - 16.0) * nx + (y - 16.0) * ny) / 32.0;
          break;
        }
        case 7: {  // bright blobs on background
          const double d1 = std::hypot(x - cx, y - cy);
          const double d2 = std::hypot(x - (31 - cx), y - (31 - cy));
          fg = d1 <= 4.5 || d2 <= 4.5;
          break;
        }
        case 8: fg = rng.bernoulli(0.5); break;  // per-pixel noise texture
        case 9: fg = (x - cx) * nx + (y - cy) * ny > 0.0; break;  // half plane
        default: break;
      }
      double rgb[3];
      if (t >= 0.0) {
        const double u = std::clamp(t, 0.0, 1.0);
        for (int ch = 0; ch < 3; ++ch) rgb[ch] = col.bg[ch] + u * (col.fg[ch] - col.bg[ch]);
      } else {
        for (int ch = 0; ch < 3; ++ch) rgb[ch] = fg ? col.fg[ch] : col.bg[ch];
      }
      paint(img, y, x, rgb);
    }
  }

  for (auto& v : img.data) v = std::clamp(v + 0.06 * rng.normal(), 0.0, 1.0);
  return img;
}

Dataset make_dataset(std::int64_t count, std::uint64_t seed) {
  Dataset ds;
  ds.images = Tensor({count, 3, kSide, kSide});
  ds.labels.resize(static_cast<std::size_t>(count));
  const std::int64_t stride = 3 * kSide * kSide;
  for (std::int64_t i = 0; i < count; ++i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    const int cls = static_cast<int>(i % 10);
    const Tensor img = make_image(cls, rng);
    std::copy(img.data.begin(), img.data.end(), ds.images.data.begin() + i * stride);
    ds.labels[static_cast<std::size_t>(i)] = cls;
  }
  // Round through the on-disk u8 encoding so that training sees exactly what
  // loaders will produce later.
  for (auto& v : ds.images.data) {
    double q = std::nearbyint(v * 255.0);
    v = std::clamp(q, 0.0, 255.0) / 255.0;
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

NetworkDef desk_vgg() {
  NetworkDef net;
  net.class_count = 10;
  net.input_shape = {3, kSide, kSide};
  net.layers = {
      LayerDef::conv2d(16, 3, 3, 1, 1),  LayerDef::relu(),
      LayerDef::conv2d(16, 16, 3, 1, 1), LayerDef::relu(),
      LayerDef::maxpool(2, 2),
      LayerDef::conv2d(32, 16, 3, 1, 1), LayerDef::relu(),
      LayerDef::maxpool(2, 2),
      LayerDef::conv2d(32, 32, 3, 1, 1), LayerDef::relu(),
      LayerDef::maxpool(2, 2),
      LayerDef::fc(512, 64),             LayerDef::relu(),
      LayerDef::fc(64, 10),
  };
  return net;
}

NetworkDef desk_resnet() {
  NetworkDef net;
  net.class_count = 10;
  net.input_shape = {3, kSide, kSide};
  net.layers = {
      LayerDef::conv2d(16, 3, 3, 1, 1),
      LayerDef::affine(16),
      LayerDef::relu(),
      LayerDef::residual_begin(),
      LayerDef::conv2d(16, 16, 3, 1, 1),
      LayerDef::relu(),
      LayerDef::conv2d(16, 16, 3, 1, 1),
      LayerDef::residual_add(),
      LayerDef::relu(),
      LayerDef::maxpool(2, 2),
      LayerDef::conv2d(32, 16, 3, 1, 1),
      LayerDef::relu(),
      LayerDef::residual_begin(),
      LayerDef::conv2d(32, 32, 3, 1, 1),
      LayerDef::relu(),
      LayerDef::conv2d(32, 32, 3, 1, 1),
      LayerDef::residual_add(),
      LayerDef::relu(),
      LayerDef::maxpool(2, 2),
      LayerDef::avgpool(8, 8),
      LayerDef::fc(32, 10),
  };
  return net;
}

// ---------------------------------------------------------------------------
// Training (plain SGD with momentum on the float network)
// ---------------------------------------------------------------------------

Params init_params(const NetworkDef& net, std::uint64_t seed) {
  Params params;
  Rng rng(seed);
  for (const auto& def : net.layers) {
    LayerParams lp = zero_params_for(def);
    if (def.kind == LayerKind::conv2d) {
      const double std = std::sqrt(2.0 / (def.ifm * def.k * def.k));
      for (auto& w : lp.weight.data) w = std * rng.normal();
    } else if (def.kind == LayerKind::fc) {
      const double std = std::sqrt(2.0 / def.in);
      for (auto& w : lp.weight.data) w = std * rng.normal();
    } else if (def.kind == LayerKind::affine) {
      for (auto& w : lp.weight.data) w = 1.0;
    }
    params.layers.push_back(std::move(lp));
  }
  return params;
}

double float_accuracy(const NetworkDef& net, const Params& params, const Dataset& ds) {
  std::vector<std::uint8_t> hit(static_cast<std::size_t>(ds.size()), 0);
  parallel_for(ds.size(), [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i) {
      const Tensor logits = forward_float(net, params, ds.example(i));
      std::size_t arg = 0;
      for (std::size_t j = 1; j < logits.data.size(); ++j)
        if (logits.data[j] > logits.data[arg]) arg = j;
      hit[i] = static_cast<int>(arg) == ds.labels[i];
    }
  });
  std::int64_t n = 0;
  for (auto h : hit) n += h;
  return 100.0 * static_cast<double>(n) / static_cast<double>(ds.size());
}

void train(const NetworkDef& net, Params& params, const Dataset& train_ds,
           const Dataset& test_ds, int epochs, int batch, double lr, std::uint64_t seed) {
  std::vector<LayerParams> velocity;
  for (const auto& def : net.layers) velocity.push_back(zero_params_for(def));
  const double momentum = 0.9;
  const double weight_decay = 5e-4;

  std::vector<std::int64_t> order(static_cast<std::size_t>(train_ds.size()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    const double cur_lr = epoch >= epochs - epochs / 4 ? lr * 0.2 : lr;
    for (std::size_t start = 0; start + batch <= order.size(); start += batch) {
      std::vector<Tensor> xs;
      std::vector<int> ts;
      xs.reserve(static_cast<std::size_t>(batch));
      for (int j = 0; j < batch; ++j) {
        xs.push_back(train_ds.example(order[start + j]));
        ts.push_back(train_ds.labels[static_cast<std::size_t>(order[start + j])]);
      }
      const auto grads = grad_params_batch(net, params, xs, ts);
      const double inv_batch = 1.0 / batch;
      for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& lp = params.layers[l];
        for (std::size_t j = 0; j < lp.weight.data.size(); ++j) {
          const double g = grads[l].weight.data[j] * inv_batch + weight_decay * lp.weight.data[j];
          velocity[l].weight.data[j] = momentum * velocity[l].weight.data[j] - cur_lr * g;
          lp.weight.data[j] += velocity[l].weight.data[j];
        }
        for (std::size_t j = 0; j < lp.bias.data.size(); ++j) {
          const double g = grads[l].bias.data[j] * inv_batch;
          velocity[l].bias.data[j] = momentum * velocity[l].bias.data[j] - cur_lr * g;
          lp.bias.data[j] += velocity[l].bias.data[j];
        }
      }
    }
    std::printf("  epoch %2d/%d  test acc %.2f%%\n", epoch + 1, epochs,
                float_accuracy(net, params, test_ds));
    std::fflush(stdout);
  }
}

// ---------------------------------------------------------------------------
// Quantization scheme calibration
// ---------------------------------------------------------------------------

ModelSchemes calibrate_schemes(const NetworkDef& net, const Params& params,
                               const Dataset& calib, std::int64_t count) {
  ModelSchemes schemes;
  schemes.input = QuantScheme{Signedness::unsigned_int, 1.0 / 255.0};
  schemes.activation.resize(net.layers.size());
  schemes.weight.resize(net.layers.size());

  // Structural signedness: post-relu banks are unsigned, pools inherit,
  // everything else can be negative.
  std::vector<Signedness> sgn(net.layers.size(), Signedness::two_complement);
  Signedness cur = Signedness::unsigned_int;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    switch (net.layers[i].kind) {
      case LayerKind::relu: cur = Signedness::unsigned_int; break;
      case LayerKind::maxpool:
      case LayerKind::avgpool:
      case LayerKind::residual_begin: break;  // inherit
      default: cur = Signedness::two_complement; break;
    }
    sgn[i] = cur;
  }

  const std::int64_t n = std::min(count, calib.size());
  std::vector<std::vector<double>> max_abs(static_cast<std::size_t>(n));
  parallel_for(n, [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i) {
      max_abs[i].assign(net.layers.size(), 0.0);
      // Re-run the tape per example and record per-layer peaks.
      Tensor x = calib.example(i);
      std::vector<Tensor> outs;
      outs.reserve(net.layers.size());
      std::vector<const Tensor*> stack;
      const Tensor* curp = &x;
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        Tensor y;
        const auto& def = net.layers[l];
        const auto& lp = params.layers[l];
        switch (def.kind) {
          case LayerKind::residual_begin:
            outs.push_back(*curp);
            stack.push_back(&outs.back());
            curp = &outs.back();
            max_abs[i][l] = 0.0;
            continue;
          case LayerKind::residual_add: {
            y = *curp;
            for (std::size_t j = 0; j < y.data.size(); ++j) y.data[j] += stack.back()->data[j];
            stack.pop_back();
            break;
          }
          default: {
            NetworkDef one;
            one.layers = {def};
            one.input_shape = curp->shape;
            Params p1;
            p1.layers = {lp};
            y = forward_float(one, p1, *curp);
            break;
          }
        }
        double peak = 0.0;
        for (double v : y.data) peak = std::max(peak, std::fabs(v));
        max_abs[i][l] = peak;
        outs.push_back(std::move(y));
        curp = &outs.back();
      }
    }
  });

  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (!net.layers[l].has_activation_mb()) continue;
    double peak = 1e-6;
    for (std::int64_t i = 0; i < n; ++i) peak = std::max(peak, max_abs[i][l]);
    schemes.activation[l] = sgn[l] == Signedness::unsigned_int
                                ? QuantScheme::unsigned_for_max(peak)
                                : QuantScheme::signed_for_max_abs(peak);
  }
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (!net.layers[l].has_parameter_mb()) continue;
    double peak = 1e-6;
    for (double v : params.layers[l].weight.data) peak = std::max(peak, std::fabs(v));
    schemes.weight[l] = QuantScheme::signed_for_max_abs(peak);
  }
  return schemes;
}

Model build_model(const std::string& name, const NetworkDef& net, const Params& params,
                  const Dataset& train_ds, const Dataset& test_ds) {
  Model model;
  model.name = name;
  model.net = net;
  model.params = params;
  model.schemes = calibrate_schemes(net, params, train_ds, 256);
  const EvalResult ref =
      evaluate(model, test_ds, NoisePlan::none(), default_bit_error_model(), 1);
  model.reference_clean_accuracy = ref.accuracy;
  std::printf("  quantized clean accuracy: %.2f%%\n", ref.accuracy);
  return model;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Build the desk-scale dataset and trained checkpoints"};
  std::string out_dir = "assets";
  std::int64_t train_count = 2000;
  std::int64_t test_count = 1000;
  int epochs = 16;
  int batch = 32;
  double lr = 0.01;
  std::uint64_t seed = 7;
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--train", train_count, "training examples");
  app.add_option("--test", test_count, "test examples");
  app.add_option("--epochs", epochs, "training epochs");
  app.add_option("--batch", batch, "batch size");
  app.add_option("--lr", lr, "learning rate");
  app.add_option("--seed", seed, "master seed");
  CLI11_PARSE(app, argc, argv);

  std::printf("synthesizing dataset (%lld train / %lld test)\n",
              static_cast<long long>(train_count), static_cast<long long>(test_count));
  const Dataset train_ds = make_dataset(train_count, mix_seed(seed, 1));
  const Dataset test_ds = make_dataset(test_count, mix_seed(seed, 2));
  save_dataset(out_dir + "/synth10_test_images.htsr", out_dir + "/synth10_test_labels.htsr",
               test_ds);

  {
    std::printf("training desk_vgg\n");
    const NetworkDef net = desk_vgg();
    Params params = init_params(net, mix_seed(seed, 10));
    train(net, params, train_ds, test_ds, epochs, batch, lr, mix_seed(seed, 11));
    const Model model = build_model("desk_vgg", net, params, train_ds, test_ds);
    save_model(out_dir + "/desk_vgg.htnn", model);
  }
  {
    std::printf("training desk_resnet\n");
    const NetworkDef net = desk_resnet();
    Params params = init_params(net, mix_seed(seed, 20));
    train(net, params, train_ds, test_ds, epochs, batch, lr, mix_seed(seed, 21));
    const Model model = build_model("desk_resnet", net, params, train_ds, test_ds);
    save_model(out_dir + "/desk_resnet.htnn", model);
  }
  std::printf("done\n");
  return 0;
}

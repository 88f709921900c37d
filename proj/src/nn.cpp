#include "htsim/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "htsim/parallel.hpp"
#include "htsim/rng.hpp"

namespace htsim {

// ---------------------------------------------------------------------------
// Layer definitions
// ---------------------------------------------------------------------------

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::fc: return "fc";
    case LayerKind::affine: return "affine";
    case LayerKind::residual_begin: return "residual_begin";
    case LayerKind::residual_add: return "residual_add";
  }
  return "?";
}

LayerKind layer_kind_from_name(const std::string& name) {
  for (LayerKind k : {LayerKind::conv2d, LayerKind::relu, LayerKind::maxpool,
                      LayerKind::avgpool, LayerKind::fc, LayerKind::affine,
                      LayerKind::residual_begin, LayerKind::residual_add})
    if (name == layer_kind_name(k)) return k;
  throw FormatError("unknown layer kind \"" + name + "\"");
}

LayerDef LayerDef::conv2d(int ofm, int ifm, int k, int stride, int pad) {
  LayerDef d;
  d.kind = LayerKind::conv2d;
  d.ofm = ofm;
  d.ifm = ifm;
  d.k = k;
  d.stride = stride;
  d.pad = pad;
  return d;
}
LayerDef LayerDef::relu() { return LayerDef{}; }
LayerDef LayerDef::maxpool(int k, int stride) {
  LayerDef d;
  d.kind = LayerKind::maxpool;
  d.k = k;
  d.stride = stride;
  return d;
}
LayerDef LayerDef::avgpool(int k, int stride) {
  LayerDef d;
  d.kind = LayerKind::avgpool;
  d.k = k;
  d.stride = stride;
  return d;
}
LayerDef LayerDef::fc(int in, int out) {
  LayerDef d;
  d.kind = LayerKind::fc;
  d.in = in;
  d.out = out;
  return d;
}
LayerDef LayerDef::affine(int channels) {
  LayerDef d;
  d.kind = LayerKind::affine;
  d.channels = channels;
  return d;
}
LayerDef LayerDef::residual_begin() {
  LayerDef d;
  d.kind = LayerKind::residual_begin;
  return d;
}
LayerDef LayerDef::residual_add() {
  LayerDef d;
  d.kind = LayerKind::residual_add;
  return d;
}

namespace {

std::vector<std::int64_t> conv_out_shape(const LayerDef& d,
                                         const std::vector<std::int64_t>& in) {
  if (in.size() != 3) throw ShapeError("conv2d expects [C,H,W] input, got " + Tensor::shape_str(in));
  if (in[0] != d.ifm)
    throw ShapeError("conv2d expects " + std::to_string(d.ifm) + " input channels, got " +
                     std::to_string(in[0]));
  const std::int64_t oh = (in[1] + 2 * d.pad - d.k) / d.stride + 1;
  const std::int64_t ow = (in[2] + 2 * d.pad - d.k) / d.stride + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d output would be empty");
  return {d.ofm, oh, ow};
}

std::vector<std::int64_t> pool_out_shape(const LayerDef& d,
                                         const std::vector<std::int64_t>& in) {
  if (in.size() != 3) throw ShapeError("pool expects [C,H,W] input, got " + Tensor::shape_str(in));
  const std::int64_t oh = (in[1] - d.k) / d.stride + 1;
  const std::int64_t ow = (in[2] - d.k) / d.stride + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("pool output would be empty");
  return {in[0], oh, ow};
}

}  // namespace

std::vector<std::vector<std::int64_t>> NetworkDef::infer_shapes() const {
  return infer_shapes(input_shape);
}

std::vector<std::vector<std::int64_t>> NetworkDef::infer_shapes(
    const std::vector<std::int64_t>& input) const {
  std::vector<std::vector<std::int64_t>> shapes;
  shapes.reserve(layers.size());
  std::vector<std::vector<std::int64_t>> stack;
  std::vector<std::int64_t> cur = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerDef& d = layers[i];
    switch (d.kind) {
      case LayerKind::conv2d: cur = conv_out_shape(d, cur); break;
      case LayerKind::relu: break;
      case LayerKind::maxpool:
      case LayerKind::avgpool: cur = pool_out_shape(d, cur); break;
      case LayerKind::fc: {
        if (Tensor::numel_of(cur) != d.in)
          throw ShapeError("fc layer " + std::to_string(i) + " expects " + std::to_string(d.in) +
                           " inputs, got " + Tensor::shape_str(cur));
        cur = {d.out};
        break;
      }
      case LayerKind::affine: {
        if (cur.size() != 3 || cur[0] != d.channels)
          throw ShapeError("affine layer " + std::to_string(i) + " expects [" +
                           std::to_string(d.channels) + ",H,W], got " + Tensor::shape_str(cur));
        break;
      }
      case LayerKind::residual_begin: stack.push_back(cur); break;
      case LayerKind::residual_add: {
        if (stack.empty())
          throw ShapeError("residual_add at layer " + std::to_string(i) + " has no matching begin");
        if (stack.back() != cur)
          throw ShapeError("residual_add operands mismatch: " + Tensor::shape_str(stack.back()) +
                           " vs " + Tensor::shape_str(cur));
        stack.pop_back();
        break;
      }
    }
    shapes.push_back(cur);
  }
  if (!stack.empty()) throw ShapeError("residual_begin without matching residual_add");
  return shapes;
}

std::vector<int> NetworkDef::activation_mb_layers() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].has_activation_mb()) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> NetworkDef::parameter_mb_layers() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].has_parameter_mb()) out.push_back(static_cast<int>(i));
  return out;
}

LayerParams zero_params_for(const LayerDef& def) {
  LayerParams p;
  switch (def.kind) {
    case LayerKind::conv2d:
      p.weight = Tensor({def.ofm, def.ifm, def.k, def.k});
      p.bias = Tensor({def.ofm});
      break;
    case LayerKind::fc:
      p.weight = Tensor({def.out, def.in});
      p.bias = Tensor({def.out});
      break;
    case LayerKind::affine:
      p.weight = Tensor({def.channels});
      p.bias = Tensor({def.channels});
      break;
    default: break;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Noise plan
// ---------------------------------------------------------------------------

const NoisePlanEntry* NoisePlan::find(int layer, NoiseTarget target) const {
  for (const auto& e : entries)
    if (e.layer == layer && e.target == target) return &e;
  return nullptr;
}

void NoisePlan::validate(const NetworkDef& net) const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.layer < 0 || e.layer >= static_cast<int>(net.layers.size()))
      throw LayerError("noise plan references layer " + std::to_string(e.layer) +
                       " of a " + std::to_string(net.layers.size()) + "-layer network");
    const LayerDef& d = net.layers[e.layer];
    if (e.target == NoiseTarget::activation_mb && !d.has_activation_mb())
      throw LayerError("layer " + std::to_string(e.layer) + " (" + layer_kind_name(d.kind) +
                       ") has no activation memory bank");
    if (e.target == NoiseTarget::parameter_mb && !d.has_parameter_mb())
      throw LayerError("layer " + std::to_string(e.layer) + " (" + layer_kind_name(d.kind) +
                       ") has no parameter memory bank");
    e.config.validate();
    for (std::size_t j = 0; j < i; ++j)
      if (entries[j].layer == e.layer && entries[j].target == e.target)
        throw LayerError("duplicate noise plan entry for layer " + std::to_string(e.layer));
  }
}

void ModelSchemes::validate(const NetworkDef& net) const {
  if (activation.size() != net.layers.size() || weight.size() != net.layers.size())
    throw ShapeError("scheme table size does not match layer count");
  if (!(input.scale > 0.0)) throw ShapeError("input scheme scale must be positive");
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (net.layers[i].has_activation_mb() && !activation[i])
      throw ShapeError("layer " + std::to_string(i) + " is missing an activation scheme");
    if (net.layers[i].has_parameter_mb() && !weight[i])
      throw ShapeError("layer " + std::to_string(i) + " is missing a weight scheme");
  }
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
  std::int64_t c, h, w, oh, ow, rows;  // rows = ifm*k*k
};

ConvDims conv_dims(const LayerDef& d, const std::vector<std::int64_t>& in) {
  const auto out = conv_out_shape(d, in);
  return {in[0], in[1], in[2], out[1], out[2],
          static_cast<std::int64_t>(d.ifm) * d.k * d.k};
}

// col is [rows, oh*ow], row-major.
void im2col(const LayerDef& d, const ConvDims& cd, const double* x, double* col) {
  const std::int64_t pix = cd.oh * cd.ow;
  for (std::int64_t c = 0; c < cd.c; ++c) {
    for (int ky = 0; ky < d.k; ++ky) {
      for (int kx = 0; kx < d.k; ++kx) {
        double* row = col + ((c * d.k + ky) * d.k + kx) * pix;
        for (std::int64_t oy = 0; oy < cd.oh; ++oy) {
          const std::int64_t iy = oy * d.stride - d.pad + ky;
          double* dst = row + oy * cd.ow;
          if (iy < 0 || iy >= cd.h) {
            std::memset(dst, 0, sizeof(double) * cd.ow);
            continue;
          }
          const double* src = x + (c * cd.h + iy) * cd.w;
          for (std::int64_t ox = 0; ox < cd.ow; ++ox) {
            const std::int64_t ix = ox * d.stride - d.pad + kx;
            dst[ox] = (ix >= 0 && ix < cd.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const LayerDef& d, const ConvDims& cd, const double* col, double* x) {
  const std::int64_t pix = cd.oh * cd.ow;
  std::memset(x, 0, sizeof(double) * cd.c * cd.h * cd.w);
  for (std::int64_t c = 0; c < cd.c; ++c) {
    for (int ky = 0; ky < d.k; ++ky) {
      for (int kx = 0; kx < d.k; ++kx) {
        const double* row = col + ((c * d.k + ky) * d.k + kx) * pix;
        for (std::int64_t oy = 0; oy < cd.oh; ++oy) {
          const std::int64_t iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= cd.h) continue;
          double* dst = x + (c * cd.h + iy) * cd.w;
          const double* src = row + oy * cd.ow;
          for (std::int64_t ox = 0; ox < cd.ow; ++ox) {
            const std::int64_t ix = ox * d.stride - d.pad + kx;
            if (ix >= 0 && ix < cd.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// y[o, pix] = sum_r w[o, r] * col[r, pix] + b[o]
void conv_gemm(std::int64_t ofm, std::int64_t rows, std::int64_t pix, const double* w,
               const double* col, const double* b, double* y) {
  for (std::int64_t o = 0; o < ofm; ++o) {
    double* yo = y + o * pix;
    const double bo = b ? b[o] : 0.0;
    for (std::int64_t p = 0; p < pix; ++p) yo[p] = bo;
    const double* wo = w + o * rows;
    for (std::int64_t r = 0; r < rows; ++r) {
      const double wr = wo[r];
      if (wr == 0.0) continue;
      const double* cr = col + r * pix;
      for (std::int64_t p = 0; p < pix; ++p) yo[p] += wr * cr[p];
    }
  }
}

Tensor conv_forward(const LayerDef& d, const Tensor& x, const Tensor& w, const Tensor& b,
                    Tensor* col_out) {
  const ConvDims cd = conv_dims(d, x.shape);
  Tensor col({cd.rows, cd.oh * cd.ow});
  im2col(d, cd, x.data.data(), col.data.data());
  Tensor y({d.ofm, cd.oh, cd.ow});
  conv_gemm(d.ofm, cd.rows, cd.oh * cd.ow, w.data.data(), col.data.data(),
            b.data.empty() ? nullptr : b.data.data(), y.data.data());
  if (col_out) *col_out = std::move(col);
  return y;
}

Tensor fc_forward(const LayerDef& d, const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y({d.out});
  for (int o = 0; o < d.out; ++o) {
    const double* wo = w.data.data() + static_cast<std::int64_t>(o) * d.in;
    double acc = b.data.empty() ? 0.0 : b.data[o];
    for (int i = 0; i < d.in; ++i) acc += wo[i] * x.data[i];
    y.data[o] = acc;
  }
  return y;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.data)
    if (v < 0.0) v = 0.0;
  return y;
}

Tensor maxpool_forward(const LayerDef& d, const Tensor& x, std::vector<std::int32_t>* idx) {
  const auto os = pool_out_shape(d, x.shape);
  const std::int64_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
  Tensor y(os);
  if (idx) idx->assign(static_cast<std::size_t>(Tensor::numel_of(os)), 0);
  std::int64_t oi = 0;
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t oy = 0; oy < os[1]; ++oy) {
      for (std::int64_t ox = 0; ox < os[2]; ++ox, ++oi) {
        double best = -1e308;
        std::int64_t best_idx = 0;
        for (int ky = 0; ky < d.k; ++ky) {
          const std::int64_t iy = oy * d.stride + ky;
          for (int kx = 0; kx < d.k; ++kx) {
            const std::int64_t ix = ox * d.stride + kx;
            const std::int64_t fi = (ch * h + iy) * w + ix;
            if (x.data[fi] > best) {  // first max wins ties
              best = x.data[fi];
              best_idx = fi;
            }
          }
        }
        y.data[oi] = best;
        if (idx) (*idx)[oi] = static_cast<std::int32_t>(best_idx);
      }
    }
  }
  return y;
}

Tensor avgpool_forward(const LayerDef& d, const Tensor& x) {
  const auto os = pool_out_shape(d, x.shape);
  const std::int64_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
  Tensor y(os);
  const double inv = 1.0 / (static_cast<double>(d.k) * d.k);
  std::int64_t oi = 0;
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t oy = 0; oy < os[1]; ++oy)
      for (std::int64_t ox = 0; ox < os[2]; ++ox, ++oi) {
        double acc = 0.0;
        for (int ky = 0; ky < d.k; ++ky)
          for (int kx = 0; kx < d.k; ++kx)
            acc += x.data[(ch * h + oy * d.stride + ky) * w + ox * d.stride + kx];
        y.data[oi] = acc * inv;
      }
  return y;
}

Tensor affine_forward(const LayerDef& d, const Tensor& x, const Tensor& scale,
                      const Tensor& shift) {
  Tensor y = x;
  const std::int64_t plane = x.shape[1] * x.shape[2];
  for (int c = 0; c < d.channels; ++c) {
    const double a = scale.data[c];
    const double b = shift.data[c];
    double* p = y.data.data() + static_cast<std::int64_t>(c) * plane;
    for (std::int64_t i = 0; i < plane; ++i) p[i] = a * p[i] + b;
  }
  return y;
}

void check_params(const NetworkDef& net, const Params& params) {
  if (params.layers.size() != net.layers.size())
    throw ShapeError("params cover " + std::to_string(params.layers.size()) + " layers, network has " +
                     std::to_string(net.layers.size()));
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerDef& d = net.layers[i];
    if (!d.has_weights()) continue;
    const LayerParams expect = zero_params_for(d);
    if (params.layers[i].weight.shape != expect.weight.shape)
      throw ShapeError("layer " + std::to_string(i) + " weight shape " +
                       Tensor::shape_str(params.layers[i].weight.shape) + ", expected " +
                       Tensor::shape_str(expect.weight.shape));
  }
}

// ---------------------------------------------------------------------------
// Float tape
// ---------------------------------------------------------------------------

struct Tape {
  std::vector<Tensor> outs;                          // per layer
  std::vector<std::vector<std::int32_t>> pool_idx;   // maxpool argmax
  std::vector<Tensor> cols;                          // conv im2col cache
  Tensor input;
};

Tape run_tape(const NetworkDef& net, const Params& params, const Tensor& x, bool keep_cols) {
  check_params(net, params);
  net.infer_shapes(x.shape);
  Tape tape;
  tape.input = x;
  tape.outs.resize(net.layers.size());
  tape.pool_idx.resize(net.layers.size());
  tape.cols.resize(net.layers.size());
  std::vector<const Tensor*> stack;
  const Tensor* cur = &tape.input;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerDef& d = net.layers[i];
    const LayerParams& lp = params.layers[i];
    switch (d.kind) {
      case LayerKind::conv2d:
        tape.outs[i] = conv_forward(d, *cur, lp.weight, lp.bias,
                                    keep_cols ? &tape.cols[i] : nullptr);
        break;
      case LayerKind::relu: tape.outs[i] = relu_forward(*cur); break;
      case LayerKind::maxpool: tape.outs[i] = maxpool_forward(d, *cur, &tape.pool_idx[i]); break;
      case LayerKind::avgpool: tape.outs[i] = avgpool_forward(d, *cur); break;
      case LayerKind::fc: {
        Tensor flat = *cur;
        flat.shape = {flat.numel()};
        tape.outs[i] = fc_forward(d, flat, lp.weight, lp.bias);
        break;
      }
      case LayerKind::affine: tape.outs[i] = affine_forward(d, *cur, lp.weight, lp.bias); break;
      case LayerKind::residual_begin:
        tape.outs[i] = *cur;
        stack.push_back(&tape.outs[i]);
        break;
      case LayerKind::residual_add: {
        Tensor sum = *cur;
        const Tensor& skip = *stack.back();
        stack.pop_back();
        for (std::size_t j = 0; j < sum.data.size(); ++j) sum.data[j] += skip.data[j];
        tape.outs[i] = std::move(sum);
        break;
      }
    }
    cur = &tape.outs[i];
  }
  return tape;
}

struct BackwardResult {
  Tensor dx;
  std::vector<LayerParams> dparams;
};

BackwardResult backward(const NetworkDef& net, const Params& params, const Tape& tape,
                        Tensor dout, bool need_dx, bool need_dw) {
  BackwardResult res;
  if (need_dw) {
    res.dparams.resize(net.layers.size());
    for (std::size_t i = 0; i < net.layers.size(); ++i)
      res.dparams[i] = zero_params_for(net.layers[i]);
  }
  const std::size_t n = net.layers.size();
  // Skip-path gradient contributions waiting at their residual_begin layer.
  std::vector<Tensor> pending(n);
  // Match residual pairs.
  std::vector<int> begin_of(n, -1);
  {
    std::vector<int> stack;
    for (std::size_t i = 0; i < n; ++i) {
      if (net.layers[i].kind == LayerKind::residual_begin) stack.push_back(static_cast<int>(i));
      if (net.layers[i].kind == LayerKind::residual_add) {
        begin_of[i] = stack.back();
        stack.pop_back();
      }
    }
  }

  Tensor g = std::move(dout);
  for (std::size_t ii = n; ii-- > 0;) {
    if (!pending[ii].data.empty()) {
      for (std::size_t j = 0; j < g.data.size(); ++j) g.data[j] += pending[ii].data[j];
      pending[ii] = Tensor();
    }
    const LayerDef& d = net.layers[ii];
    const Tensor& in = ii == 0 ? tape.input : tape.outs[ii - 1];
    const LayerParams& lp = params.layers[ii];
    switch (d.kind) {
      case LayerKind::conv2d: {
        const ConvDims cd = conv_dims(d, in.shape);
        const std::int64_t pix = cd.oh * cd.ow;
        Tensor col;
        const Tensor* colp = &tape.cols[ii];
        if (colp->data.empty()) {
          col = Tensor({cd.rows, pix});
          im2col(d, cd, in.data.data(), col.data.data());
          colp = &col;
        }
        if (need_dw) {
          LayerParams& dp = res.dparams[ii];
          for (int o = 0; o < d.ofm; ++o) {
            const double* go = g.data.data() + static_cast<std::int64_t>(o) * pix;
            double* dwo = dp.weight.data.data() + static_cast<std::int64_t>(o) * cd.rows;
            for (std::int64_t r = 0; r < cd.rows; ++r) {
              const double* cr = colp->data.data() + r * pix;
              double acc = 0.0;
              for (std::int64_t p = 0; p < pix; ++p) acc += go[p] * cr[p];
              dwo[r] += acc;
            }
            double accb = 0.0;
            for (std::int64_t p = 0; p < pix; ++p) accb += go[p];
            dp.bias.data[o] += accb;
          }
        }
        // dcol = W^T g, then scatter back to the input grid.
        Tensor dcol({cd.rows, pix});
        for (std::int64_t r = 0; r < cd.rows; ++r) {
          double* dr = dcol.data.data() + r * pix;
          for (int o = 0; o < d.ofm; ++o) {
            const double wr = lp.weight.data[static_cast<std::int64_t>(o) * cd.rows + r];
            if (wr == 0.0) continue;
            const double* go = g.data.data() + static_cast<std::int64_t>(o) * pix;
            for (std::int64_t p = 0; p < pix; ++p) dr[p] += wr * go[p];
          }
        }
        Tensor dx(in.shape);
        col2im(d, cd, dcol.data.data(), dx.data.data());
        g = std::move(dx);
        break;
      }
      case LayerKind::relu: {
        Tensor dx = g;
        for (std::size_t j = 0; j < dx.data.size(); ++j)
          if (in.data[j] <= 0.0) dx.data[j] = 0.0;
        g = std::move(dx);
        break;
      }
      case LayerKind::maxpool: {
        Tensor dx(in.shape);
        const auto& idx = tape.pool_idx[ii];
        for (std::size_t j = 0; j < idx.size(); ++j) dx.data[idx[j]] += g.data[j];
        g = std::move(dx);
        break;
      }
      case LayerKind::avgpool: {
        Tensor dx(in.shape);
        const auto os = pool_out_shape(d, in.shape);
        const std::int64_t h = in.shape[1], w = in.shape[2];
        const double inv = 1.0 / (static_cast<double>(d.k) * d.k);
        std::int64_t oi = 0;
        for (std::int64_t ch = 0; ch < in.shape[0]; ++ch)
          for (std::int64_t oy = 0; oy < os[1]; ++oy)
            for (std::int64_t ox = 0; ox < os[2]; ++ox, ++oi) {
              const double gv = g.data[oi] * inv;
              for (int ky = 0; ky < d.k; ++ky)
                for (int kx = 0; kx < d.k; ++kx)
                  dx.data[(ch * h + oy * d.stride + ky) * w + ox * d.stride + kx] += gv;
            }
        g = std::move(dx);
        break;
      }
      case LayerKind::fc: {
        if (need_dw) {
          LayerParams& dp = res.dparams[ii];
          for (int o = 0; o < d.out; ++o) {
            const double go = g.data[o];
            double* dwo = dp.weight.data.data() + static_cast<std::int64_t>(o) * d.in;
            for (int j = 0; j < d.in; ++j) dwo[j] += go * in.data[j];
            dp.bias.data[o] += go;
          }
        }
        Tensor dx(in.shape);
        for (int o = 0; o < d.out; ++o) {
          const double go = g.data[o];
          if (go == 0.0) continue;
          const double* wo = lp.weight.data.data() + static_cast<std::int64_t>(o) * d.in;
          for (int j = 0; j < d.in; ++j) dx.data[j] += go * wo[j];
        }
        g = std::move(dx);
        break;
      }
      case LayerKind::affine: {
        const std::int64_t plane = in.shape[1] * in.shape[2];
        if (need_dw) {
          LayerParams& dp = res.dparams[ii];
          for (int c = 0; c < d.channels; ++c) {
            const double* gp = g.data.data() + static_cast<std::int64_t>(c) * plane;
            const double* xp = in.data.data() + static_cast<std::int64_t>(c) * plane;
            double da = 0.0, db = 0.0;
            for (std::int64_t j = 0; j < plane; ++j) {
              da += gp[j] * xp[j];
              db += gp[j];
            }
            dp.weight.data[c] += da;
            dp.bias.data[c] += db;
          }
        }
        Tensor dx = g;
        for (int c = 0; c < d.channels; ++c) {
          const double a = lp.weight.data[c];
          double* gp = dx.data.data() + static_cast<std::int64_t>(c) * plane;
          for (std::int64_t j = 0; j < plane; ++j) gp[j] *= a;
        }
        g = std::move(dx);
        break;
      }
      case LayerKind::residual_begin:
        break;  // identity
      case LayerKind::residual_add: {
        Tensor skip_grad = g;
        skip_grad.shape = tape.outs[begin_of[ii]].shape;
        if (pending[begin_of[ii]].data.empty())
          pending[begin_of[ii]] = std::move(skip_grad);
        else
          for (std::size_t j = 0; j < g.data.size(); ++j)
            pending[begin_of[ii]].data[j] += skip_grad.data[j];
        break;  // main-path gradient passes through unchanged
      }
    }
    if (ii == 0 && !need_dx) break;
  }
  if (need_dx) {
    g.shape = tape.input.shape;
    res.dx = std::move(g);
  }
  return res;
}

Tensor logits_grad(const Tensor& logits, int target) {
  Tensor g = softmax(logits);
  if (target < 0 || target >= static_cast<int>(g.data.size()))
    throw RangeError("label " + std::to_string(target) + " out of range for " +
                     std::to_string(g.data.size()) + " logits");
  g.data[static_cast<std::size_t>(target)] -= 1.0;
  return g;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public float path
// ---------------------------------------------------------------------------

Tensor forward_float(const NetworkDef& net, const Params& params, const Tensor& x) {
  if (net.layers.empty()) return x;
  Tape tape = run_tape(net, params, x, false);
  return tape.outs.back();
}

Tensor softmax(const Tensor& logits) {
  Tensor out = logits;
  double m = -1e308;
  for (double v : out.data) m = std::max(m, v);
  double sum = 0.0;
  for (auto& v : out.data) {
    v = std::exp(v - m);
    sum += v;
  }
  for (auto& v : out.data) v /= sum;
  return out;
}

double loss(const Tensor& logits, int target) {
  if (target < 0 || target >= static_cast<int>(logits.data.size()))
    throw RangeError("label " + std::to_string(target) + " out of range");
  double m = -1e308;
  for (double v : logits.data) m = std::max(m, v);
  double sum = 0.0;
  for (double v : logits.data) sum += std::exp(v - m);
  return m + std::log(sum) - logits.data[static_cast<std::size_t>(target)];
}

Tensor grad_input(const NetworkDef& net, const Params& params, const Tensor& x, int target) {
  if (net.layers.empty()) return logits_grad(x, target);
  Tape tape = run_tape(net, params, x, false);
  return backward(net, params, tape, logits_grad(tape.outs.back(), target), true, false).dx;
}

std::vector<LayerParams> grad_params(const NetworkDef& net, const Params& params,
                                     const Tensor& x, int target) {
  Tape tape = run_tape(net, params, x, true);
  return backward(net, params, tape, logits_grad(tape.outs.back(), target), false, true).dparams;
}

std::vector<LayerParams> grad_params_batch(const NetworkDef& net, const Params& params,
                                           std::span<const Tensor> xs, std::span<const int> ts) {
  if (xs.size() != ts.size() || xs.empty())
    throw ShapeError("batch inputs and labels must pair up");
  std::vector<std::vector<LayerParams>> per(xs.size());
  parallel_for(static_cast<std::int64_t>(xs.size()),
               [&](std::int64_t begin, std::int64_t end) {
                 for (std::int64_t i = begin; i < end; ++i)
                   per[i] = grad_params(net, params, xs[i], ts[i]);
               });
  std::vector<LayerParams> total = std::move(per[0]);
  for (std::size_t e = 1; e < per.size(); ++e)
    for (std::size_t l = 0; l < total.size(); ++l) {
      for (std::size_t j = 0; j < total[l].weight.data.size(); ++j)
        total[l].weight.data[j] += per[e][l].weight.data[j];
      for (std::size_t j = 0; j < total[l].bias.data.size(); ++j)
        total[l].bias.data[j] += per[e][l].bias.data[j];
    }
  return total;
}

// ---------------------------------------------------------------------------
// Quantized path
// ---------------------------------------------------------------------------

QuantizedWeights QuantizedWeights::of(const Model& model) {
  QuantizedWeights qw;
  qw.layers.resize(model.net.layers.size());
  for (std::size_t i = 0; i < model.net.layers.size(); ++i)
    if (model.net.layers[i].has_parameter_mb())
      qw.layers[i] = quantize(model.params.layers[i].weight, *model.schemes.weight[i]);
  return qw;
}

namespace {

constexpr std::uint64_t kActivationSalt = 0x41435449u;
constexpr std::uint64_t kParameterSalt = 0x50415241u;

}  // namespace

Tensor forward(const Model& model, const Tensor& x, const NoisePlan& plan,
               const BitErrorModel& ber, std::uint64_t seed, const QuantizedWeights* qw,
               ForwardTrace* trace) {
  const NetworkDef& net = model.net;
  if (net.layers.empty()) return x;
  plan.validate(net);
  check_params(net, model.params);
  model.schemes.validate(net);
  net.infer_shapes(x.shape);

  if (trace) trace->activations.assign(net.layers.size(), QuantTensor{});

  Tensor cur = dequantize(quantize(x, model.schemes.input));
  std::vector<Tensor> stack;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerDef& d = net.layers[i];
    const LayerParams& lp = model.params.layers[i];
    Tensor y;
    switch (d.kind) {
      case LayerKind::conv2d:
      case LayerKind::fc: {
        QuantTensor wq = qw && qw->layers[i] ? *qw->layers[i]
                                             : quantize(lp.weight, *model.schemes.weight[i]);
        if (const auto* e = plan.find(static_cast<int>(i), NoiseTarget::parameter_mb))
          wq = inject(wq, e->config, ber, mix_seed(mix_seed(seed, kParameterSalt), i));
        Tensor wf = dequantize(wq);
        wf.shape = lp.weight.shape;
        if (d.kind == LayerKind::conv2d) {
          y = conv_forward(d, cur, wf, lp.bias, nullptr);
        } else {
          Tensor flat = cur;
          flat.shape = {flat.numel()};
          y = fc_forward(d, flat, wf, lp.bias);
        }
        break;
      }
      case LayerKind::relu: y = relu_forward(cur); break;
      case LayerKind::maxpool: y = maxpool_forward(d, cur, nullptr); break;
      case LayerKind::avgpool: y = avgpool_forward(d, cur); break;
      case LayerKind::affine: y = affine_forward(d, cur, lp.weight, lp.bias); break;
      case LayerKind::residual_begin:
        stack.push_back(cur);
        continue;  // tap point: nothing stored, cur flows on
      case LayerKind::residual_add: {
        y = cur;
        const Tensor& skip = stack.back();
        for (std::size_t j = 0; j < y.data.size(); ++j) y.data[j] += skip.data[j];
        stack.pop_back();
        break;
      }
    }
    QuantTensor qa = quantize(y, *model.schemes.activation[i]);
    if (const auto* e = plan.find(static_cast<int>(i), NoiseTarget::activation_mb))
      qa = inject(qa, e->config, ber, mix_seed(mix_seed(seed, kActivationSalt), i));
    cur = dequantize(qa);
    cur.shape = y.shape;
    if (trace) trace->activations[i] = std::move(qa);
  }
  return cur;
}

// ---------------------------------------------------------------------------
// Dataset & evaluation
// ---------------------------------------------------------------------------

Tensor Dataset::example(std::int64_t i) const {
  if (i < 0 || i >= size()) throw RangeError("example index out of range");
  std::vector<std::int64_t> shape(images.shape.begin() + 1, images.shape.end());
  const std::int64_t n = Tensor::numel_of(shape);
  Tensor out(shape);
  std::copy_n(images.data.begin() + i * n, n, out.data.begin());
  return out;
}

EvalResult evaluate(const Model& model, const Dataset& ds, const NoisePlan& plan,
                    const BitErrorModel& ber, std::uint64_t seed, std::int64_t subset) {
  if (ds.size() == 0) throw RangeError("dataset is empty");
  if (static_cast<std::int64_t>(ds.labels.size()) != ds.size())
    throw FormatError("dataset has " + std::to_string(ds.labels.size()) + " labels for " +
                      std::to_string(ds.size()) + " images");
  const std::int64_t n = subset > 0 ? std::min(subset, ds.size()) : ds.size();
  const QuantizedWeights qw = QuantizedWeights::of(model);

  std::vector<std::uint8_t> correct(n, 0);
  std::vector<double> confidence(n, 0.0);
  parallel_for(n, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t i = begin; i < end; ++i) {
      const std::uint64_t s =
          plan.scope == NoiseScope::per_image ? mix_seed(seed, static_cast<std::uint64_t>(i)) : seed;
      const Tensor logits = forward(model, ds.example(i), plan, ber, s, &qw);
      const Tensor probs = softmax(logits);
      std::size_t arg = 0;
      for (std::size_t j = 1; j < probs.data.size(); ++j)
        if (probs.data[j] > probs.data[arg]) arg = j;
      correct[i] = static_cast<int>(arg) == ds.labels[i] ? 1 : 0;
      confidence[i] = probs.data[arg];
    }
  });

  std::int64_t hits = 0;
  double conf_sum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    hits += correct[i];
    conf_sum += confidence[i];
  }
  return {100.0 * static_cast<double>(hits) / static_cast<double>(n),
          100.0 * conf_sum / static_cast<double>(n)};
}

}  // namespace htsim

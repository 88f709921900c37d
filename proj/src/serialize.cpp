#include "htsim/serialize.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace htsim {

namespace {

using nlohmann::json;

void write_u32le(std::ostream& os, std::uint32_t v) {
  const std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                             static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32le(std::istream& is, std::size_t at) {
  std::uint8_t b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated u32", at);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

constexpr char kTensorMagic[5] = {'H', 'T', 'S', 'R', '1'};
constexpr char kModelMagic[5] = {'H', 'T', 'N', 'N', '1'};

// f32 payloads are written byte-by-byte little-endian regardless of host
// order; every supported host here is little-endian so memcpy suffices,
// asserted at compile time would require C++23 byteswap; keep the simple way.
static_assert(sizeof(float) == 4);

}  // namespace

void write_container(std::ostream& os, const TensorContainer& tc) {
  if (tc.dims.empty() || tc.numel() <= 0) throw FormatError("container dims product must be > 0");
  os.write(kTensorMagic, 5);
  const std::uint8_t dtype = static_cast<std::uint8_t>(tc.dtype);
  const std::uint8_t ndim = static_cast<std::uint8_t>(tc.dims.size());
  os.write(reinterpret_cast<const char*>(&dtype), 1);
  os.write(reinterpret_cast<const char*>(&ndim), 1);
  for (auto d : tc.dims) write_u32le(os, static_cast<std::uint32_t>(d));
  if (tc.dtype == ContainerDtype::u8) {
    if (static_cast<std::int64_t>(tc.u8_data.size()) != tc.numel())
      throw FormatError("u8 payload size does not match dims");
    os.write(reinterpret_cast<const char*>(tc.u8_data.data()),
             static_cast<std::streamsize>(tc.u8_data.size()));
  } else {
    if (static_cast<std::int64_t>(tc.f32_data.size()) != tc.numel())
      throw FormatError("f32 payload size does not match dims");
    os.write(reinterpret_cast<const char*>(tc.f32_data.data()),
             static_cast<std::streamsize>(tc.f32_data.size() * 4));
  }
  if (!os) throw FormatError("write failed");
}

TensorContainer read_container(std::istream& is, std::size_t base) {
  char magic[5];
  if (!is.read(magic, 5)) throw FormatError("truncated magic", base);
  if (std::memcmp(magic, kTensorMagic, 5) != 0) throw FormatError("bad tensor magic", base);
  std::uint8_t dtype = 0, ndim = 0;
  if (!is.read(reinterpret_cast<char*>(&dtype), 1)) throw FormatError("truncated dtype", base + 5);
  if (!is.read(reinterpret_cast<char*>(&ndim), 1)) throw FormatError("truncated ndim", base + 6);
  if (dtype != 1 && dtype != 2) throw FormatError("unknown dtype code " + std::to_string(dtype), base + 5);
  TensorContainer tc;
  tc.dtype = static_cast<ContainerDtype>(dtype);
  std::size_t at = base + 7;
  for (int i = 0; i < ndim; ++i) {
    tc.dims.push_back(static_cast<std::int64_t>(read_u32le(is, at)));
    at += 4;
  }
  const std::int64_t n = ndim == 0 ? 0 : tc.numel();
  if (n <= 0) throw FormatError("dims product must be > 0", base + 6);
  if (tc.dtype == ContainerDtype::u8) {
    tc.u8_data.resize(static_cast<std::size_t>(n));
    if (!is.read(reinterpret_cast<char*>(tc.u8_data.data()), n))
      throw FormatError("truncated u8 payload", at);
  } else {
    tc.f32_data.resize(static_cast<std::size_t>(n));
    if (!is.read(reinterpret_cast<char*>(tc.f32_data.data()), n * 4))
      throw FormatError("truncated f32 payload", at);
  }
  return tc;
}

void save_container(const std::string& path, const TensorContainer& tc) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw FormatError("cannot open " + tmp + " for writing");
    write_container(os, tc);
  }
  std::remove(path.c_str());
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw FormatError("cannot move " + tmp + " into place");
}

TensorContainer load_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  TensorContainer tc = read_container(is);
  // trailing bytes mean the declared size lies
  is.peek();
  if (!is.eof()) throw FormatError("trailing bytes after payload in " + path,
                                   static_cast<std::size_t>(is.tellg()));
  return tc;
}

TensorContainer to_container_f32(const Tensor& t) {
  TensorContainer tc;
  tc.dtype = ContainerDtype::f32;
  tc.dims = t.shape;
  tc.f32_data.reserve(t.data.size());
  for (double v : t.data) tc.f32_data.push_back(static_cast<float>(v));
  return tc;
}

Tensor from_container(const TensorContainer& tc) {
  Tensor t;
  t.shape = tc.dims;
  if (tc.dtype == ContainerDtype::u8) {
    t.data.assign(tc.u8_data.begin(), tc.u8_data.end());
  } else {
    t.data.assign(tc.f32_data.begin(), tc.f32_data.end());
  }
  return t;
}

// ---------------------------------------------------------------------------
// Model file
// ---------------------------------------------------------------------------

namespace {

json layer_to_json(const LayerDef& d) {
  json j;
  j["kind"] = layer_kind_name(d.kind);
  switch (d.kind) {
    case LayerKind::conv2d:
      j["ofm"] = d.ofm;
      j["ifm"] = d.ifm;
      j["k"] = d.k;
      j["stride"] = d.stride;
      j["pad"] = d.pad;
      break;
    case LayerKind::maxpool:
    case LayerKind::avgpool:
      j["k"] = d.k;
      j["stride"] = d.stride;
      break;
    case LayerKind::fc:
      j["in"] = d.in;
      j["out"] = d.out;
      break;
    case LayerKind::affine: j["channels"] = d.channels; break;
    default: break;
  }
  return j;
}

LayerDef layer_from_json(const json& j) {
  const LayerKind kind = layer_kind_from_name(j.at("kind").get<std::string>());
  switch (kind) {
    case LayerKind::conv2d:
      return LayerDef::conv2d(j.at("ofm"), j.at("ifm"), j.at("k"), j.at("stride"), j.at("pad"));
    case LayerKind::relu: return LayerDef::relu();
    case LayerKind::maxpool: return LayerDef::maxpool(j.at("k"), j.at("stride"));
    case LayerKind::avgpool: return LayerDef::avgpool(j.at("k"), j.at("stride"));
    case LayerKind::fc: return LayerDef::fc(j.at("in"), j.at("out"));
    case LayerKind::affine: return LayerDef::affine(j.at("channels"));
    case LayerKind::residual_begin: return LayerDef::residual_begin();
    case LayerKind::residual_add: return LayerDef::residual_add();
  }
  throw FormatError("unreachable layer kind");
}

json scheme_to_json(const QuantScheme& s) {
  return json{{"signedness", s.signedness == Signedness::two_complement ? "signed" : "unsigned"},
              {"scale", s.scale}};
}

QuantScheme scheme_from_json(const json& j) {
  QuantScheme s;
  const std::string sg = j.at("signedness").get<std::string>();
  if (sg == "signed")
    s.signedness = Signedness::two_complement;
  else if (sg == "unsigned")
    s.signedness = Signedness::unsigned_int;
  else
    throw FormatError("unknown signedness \"" + sg + "\"");
  s.scale = j.at("scale").get<double>();
  if (!(s.scale > 0.0)) throw FormatError("scheme scale must be positive");
  return s;
}

}  // namespace

void save_model(const std::string& path, const Model& model) {
  model.net.infer_shapes();
  model.schemes.validate(model.net);
  if (model.params.layers.size() != model.net.layers.size())
    throw ShapeError("params cover " + std::to_string(model.params.layers.size()) +
                     " layers, network has " + std::to_string(model.net.layers.size()));
  for (std::size_t i = 0; i < model.net.layers.size(); ++i) {
    if (!model.net.layers[i].has_weights()) continue;
    const LayerParams expect = zero_params_for(model.net.layers[i]);
    if (model.params.layers[i].weight.shape != expect.weight.shape ||
        model.params.layers[i].bias.shape != expect.bias.shape)
      throw ShapeError("layer " + std::to_string(i) + " tensor shapes do not match descriptor");
  }

  json header;
  header["format_version"] = 1;
  header["name"] = model.name;
  header["class_count"] = model.net.class_count;
  header["input_shape"] = model.net.input_shape;
  header["reference_clean_accuracy"] = model.reference_clean_accuracy;
  header["input_scheme"] = scheme_to_json(model.schemes.input);
  json layers = json::array();
  json tensors = json::array();
  for (std::size_t i = 0; i < model.net.layers.size(); ++i) {
    json lj = layer_to_json(model.net.layers[i]);
    if (model.schemes.activation[i]) lj["activation_scheme"] = scheme_to_json(*model.schemes.activation[i]);
    if (model.schemes.weight[i]) lj["weight_scheme"] = scheme_to_json(*model.schemes.weight[i]);
    layers.push_back(lj);
    if (model.net.layers[i].has_weights()) {
      tensors.push_back(json{{"layer", i}, {"role", "weight"}});
      tensors.push_back(json{{"layer", i}, {"role", "bias"}});
    }
  }
  header["layers"] = layers;
  header["tensors"] = tensors;

  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw FormatError("cannot open " + tmp + " for writing");
    os.write(kModelMagic, 5);
    write_u32le(os, 1);  // version
    const std::string hs = header.dump();
    write_u32le(os, static_cast<std::uint32_t>(hs.size()));
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& tj : tensors) {
      const std::size_t layer = tj.at("layer").get<std::size_t>();
      const std::string role = tj.at("role").get<std::string>();
      const Tensor& t = role == "weight" ? model.params.layers[layer].weight
                                         : model.params.layers[layer].bias;
      write_container(os, to_container_f32(t));
    }
    if (!os) throw FormatError("write failed for " + tmp);
  }
  std::remove(path.c_str());
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw FormatError("cannot move " + tmp + " into place");
}

Model load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  char magic[5];
  if (!is.read(magic, 5)) throw FormatError("truncated magic", 0);
  if (std::memcmp(magic, kModelMagic, 5) != 0) throw FormatError("bad model magic", 0);
  const std::uint32_t version = read_u32le(is, 5);
  if (version != 1) throw FormatError("unsupported model version " + std::to_string(version), 5);
  const std::uint32_t hlen = read_u32le(is, 9);
  std::string hs(hlen, '\0');
  if (!is.read(hs.data(), hlen)) throw FormatError("truncated header", 13);

  json header;
  try {
    header = json::parse(hs);
  } catch (const json::exception& e) {
    throw FormatError(std::string("header is not valid JSON: ") + e.what(), 13);
  }

  Model model;
  try {
    model.name = header.value("name", "");
    model.net.class_count = header.at("class_count").get<int>();
    model.net.input_shape = header.at("input_shape").get<std::vector<std::int64_t>>();
    model.reference_clean_accuracy = header.at("reference_clean_accuracy").get<double>();
    model.schemes.input = scheme_from_json(header.at("input_scheme"));
    for (const auto& lj : header.at("layers")) {
      model.net.layers.push_back(layer_from_json(lj));
      model.schemes.activation.push_back(
          lj.contains("activation_scheme")
              ? std::optional<QuantScheme>(scheme_from_json(lj.at("activation_scheme")))
              : std::nullopt);
      model.schemes.weight.push_back(
          lj.contains("weight_scheme")
              ? std::optional<QuantScheme>(scheme_from_json(lj.at("weight_scheme")))
              : std::nullopt);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed model header: ") + e.what(), 13);
  }

  model.params.layers.resize(model.net.layers.size());
  std::size_t at = 13 + hlen;
  for (const auto& tj : header.at("tensors")) {
    const std::size_t layer = tj.at("layer").get<std::size_t>();
    const std::string role = tj.at("role").get<std::string>();
    if (layer >= model.net.layers.size())
      throw FormatError("tensor manifest references layer " + std::to_string(layer), at);
    TensorContainer tc = read_container(is, at);
    at = static_cast<std::size_t>(is.tellg());
    Tensor t = from_container(tc);
    if (role == "weight")
      model.params.layers[layer].weight = std::move(t);
    else if (role == "bias")
      model.params.layers[layer].bias = std::move(t);
    else
      throw FormatError("unknown tensor role \"" + role + "\"", at);
  }

  // Shape-check everything before handing the model out.
  try {
    model.net.infer_shapes();
    model.schemes.validate(model.net);
  } catch (const ShapeError& e) {
    throw FormatError(std::string("model file inconsistent: ") + e.what(), at);
  }
  for (std::size_t i = 0; i < model.net.layers.size(); ++i) {
    if (!model.net.layers[i].has_weights()) continue;
    const LayerParams expect = zero_params_for(model.net.layers[i]);
    if (model.params.layers[i].weight.shape != expect.weight.shape ||
        model.params.layers[i].bias.shape != expect.bias.shape)
      throw FormatError("layer " + std::to_string(i) + " tensor shapes do not match descriptor", at);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

void save_dataset(const std::string& images_path, const std::string& labels_path,
                  const Dataset& ds) {
  TensorContainer imgs;
  imgs.dtype = ContainerDtype::u8;
  imgs.dims = ds.images.shape;
  imgs.u8_data.reserve(ds.images.data.size());
  for (double v : ds.images.data) {
    double q = std::nearbyint(v * 255.0);
    if (q < 0.0) q = 0.0;
    if (q > 255.0) q = 255.0;
    imgs.u8_data.push_back(static_cast<std::uint8_t>(q));
  }
  save_container(images_path, imgs);

  TensorContainer labels;
  labels.dtype = ContainerDtype::u8;
  labels.dims = {static_cast<std::int64_t>(ds.labels.size())};
  for (int l : ds.labels) labels.u8_data.push_back(static_cast<std::uint8_t>(l));
  save_container(labels_path, labels);
}

Dataset load_dataset(const std::string& images_path, const std::string& labels_path) {
  const TensorContainer imgs = load_container(images_path);
  if (imgs.dtype != ContainerDtype::u8 || imgs.dims.size() != 4)
    throw FormatError("image container must be u8 [N,C,H,W] in " + images_path);
  const TensorContainer labels = load_container(labels_path);
  if (labels.dtype != ContainerDtype::u8 || labels.dims.size() != 1)
    throw FormatError("label container must be u8 [N] in " + labels_path);
  if (labels.dims[0] != imgs.dims[0])
    throw FormatError("dataset has " + std::to_string(imgs.dims[0]) + " images but " +
                      std::to_string(labels.dims[0]) + " labels");
  Dataset ds;
  ds.images.shape = imgs.dims;
  ds.images.data.reserve(imgs.u8_data.size());
  for (std::uint8_t b : imgs.u8_data) ds.images.data.push_back(static_cast<double>(b) / 255.0);
  ds.labels.assign(labels.u8_data.begin(), labels.u8_data.end());
  return ds;
}

}  // namespace htsim

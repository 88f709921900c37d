#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "htsim/nn.hpp"
#include "htsim/tensor.hpp"

namespace htsim {

// ---------------------------------------------------------------------------
// Tensor container ("HTSR1")
//
//   magic   5 bytes  "HTSR1"
//   dtype   u8       1 = u8, 2 = f32
//   ndim    u8
//   dims    ndim x u32, little-endian
//   data    raw payload, little-endian
//
// The payload size must equal exactly prod(dims) * element size, and the
// dims product must be positive.
// ---------------------------------------------------------------------------

enum class ContainerDtype : std::uint8_t { u8 = 1, f32 = 2 };

struct TensorContainer {
  ContainerDtype dtype = ContainerDtype::f32;
  std::vector<std::int64_t> dims;
  std::vector<std::uint8_t> u8_data;   // valid when dtype == u8
  std::vector<float> f32_data;         // valid when dtype == f32

  std::int64_t numel() const { return Tensor::numel_of(dims); }
};

void write_container(std::ostream& os, const TensorContainer& tc);
TensorContainer read_container(std::istream& is, std::size_t stream_base_offset = 0);

void save_container(const std::string& path, const TensorContainer& tc);
TensorContainer load_container(const std::string& path);

TensorContainer to_container_f32(const Tensor& t);
Tensor from_container(const TensorContainer& tc);  // u8 promotes to double codes

// ---------------------------------------------------------------------------
// Model file ("HTNN1"): JSON header describing the architecture, schemes and
// tensor manifest, followed by one HTSR1 container per tensor.
// ---------------------------------------------------------------------------

void save_model(const std::string& path, const Model& model);
Model load_model(const std::string& path);

// ---------------------------------------------------------------------------
// Dataset: u8 image container [N,C,H,W] (values 0..255, dequantized to [0,1]
// on load) plus a u8 label container [N].
// ---------------------------------------------------------------------------

void save_dataset(const std::string& images_path, const std::string& labels_path,
                  const Dataset& ds);
Dataset load_dataset(const std::string& images_path, const std::string& labels_path);

}  // namespace htsim

#pragma once

// DFE1 checkpoint format, little-endian throughout:
//
//   "DFE1"
//   repeated until end of file:
//     u32 name length, UTF-8 name bytes,
//     u32 rank, rank x u32 dims,
//     prod(dims) x f32 payload (row-major)

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dfe/graph.hpp"

namespace dfe {

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& records);
std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes);

std::vector<NamedTensor> model_parameters(const Model<float>& model);

void write_checkpoint(const Model<float>& model, const std::filesystem::path& path);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

// Copies every record into the matching model parameter. The record set must
// cover the model exactly, with identical shapes.
void assign_parameters(Model<float>& model, const std::vector<NamedTensor>& records);

// Architecture prefix of the records ("attention2d", "res3d_lite", ...).
std::string checkpoint_arch(const std::vector<NamedTensor>& records);

}  // namespace dfe

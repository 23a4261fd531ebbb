#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "thinsec/model.hpp"

namespace thinsec {

// Checkpoint layout (all integers little-endian):
//   "FLCK" | u32 version | u32 length + UTF-8 JSON header | u32 tensor count | tensors
// Named-tensor files drop the header:
//   "FLNT" | u32 version | u32 tensor count | tensors
// Each tensor:
//   u32 name length | name | u32 ndim | u64 dims[ndim] | u8 dtype (0 = f32) | raw f32 elements
//
// The JSON header holds the model spec, the per-parameter trainable flags, the
// class names and the names of the tensors that are buffers. The input
// normalization statistics are stored as the tensors "_input_norm.mean" and
// "_input_norm.std" so they round-trip bit-exactly.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Model& model);
Model deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

void save_named_tensors(const NamedTensors& tensors, const std::string& path);
// Reads every tensor from either a checkpoint or a named-tensor file.
NamedTensors read_named_tensors(const std::string& path);

// model parameter name -> tensor name in the file
using NameMap = std::map<std::string, std::string>;

// Maps every parameter to itself except those starting with one of `exclude`.
NameMap identity_name_map(const Model& model, const std::vector<std::string>& exclude_prefixes = {});

struct ImportResult {
  Model model;
  std::vector<std::string> imported;
  std::vector<std::string> unmatched;  // parameters the map does not cover; left as they were
};

// Overwrites every mapped parameter, plus any buffer the file holds under the
// model's own name. Unmapped buffers with the wrong shape are skipped. Missing tensors and shape mismatches are
// collected and reported together in one ImportError.
ImportResult import_named_tensors(const std::string& path, const Model& model, const NameMap& name_map);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace thinsec

#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sst/tensor.hpp"

namespace sst {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Container layout, all integers little-endian uint64:
///   "SSTCKPT1" | count | { name_len | name | rank | extents... | float64 LE payload }...
std::string encode_checkpoint(const NamedTensors& tensors);
NamedTensors decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::filesystem::path& path);

/// Copies values into existing tensors by name; shapes must match and every
/// name in `into` must be present.
void restore_into(const NamedTensors& from, const NamedTensors& into);

}  // namespace sst

#pragma once

// Weight persistence: a JSON manifest (tensor names, shapes, byte offsets and
// caller-supplied fields) next to a flat little-endian float64 blob.

#include <filesystem>
#include <span>
#include <string>

#include "slac/autodiff.hpp"

namespace slac {

/// `extra_json` must be a JSON object; its fields are merged into the manifest.
void save_tensors(const std::filesystem::path& manifest, const std::filesystem::path& blob,
                  std::span<const ParamTensor* const> tensors, const std::string& extra_json);

/// Reads the manifest and fills tensors by name (shapes must agree). Returns the manifest text.
std::string load_tensors(const std::filesystem::path& manifest, const std::filesystem::path& blob,
                         std::span<ParamTensor* const> tensors);

std::string read_file(const std::filesystem::path& path);
std::uint64_t file_hash(const std::filesystem::path& path);

}  // namespace slac

#pragma once

// Flat checkpoint archive: magic "MSNT1\n", then one record per array:
//   u32le name length, name bytes (UTF-8),
//   u32le extent count, u32le extents,
//   f32le values (product-of-extents many).
// Records run to end of file.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace wamd {

struct NamedArray {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> values;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedArray>& arrays);
std::vector<NamedArray> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<NamedArray>& arrays);
std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path);

}  // namespace wamd

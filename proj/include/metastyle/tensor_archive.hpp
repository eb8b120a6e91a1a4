#pragma once

#include <torch/torch.h>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace metastyle {

inline constexpr std::int64_t kArchiveFormatVersion = 1;

// Named-tensor container shared by checkpoints and feature-extractor weights.
//
// Layout on disk:
//   [8 bytes]  little-endian u64 N
//   [N bytes]  UTF-8 JSON header:
//                { "format_version": 1,
//                  "metadata": { ...scalar fields... },
//                  "tensors": { "<name>": { "dtype": "float32", "shape": [...],
//                                           "offset": o, "length": l }, ... },
//                  "payload_length": P,
//                  "payload_crc32": c }
//   [P bytes]  payload: little-endian float32 values; tensor i occupies
//              [offset, offset + length) and tensors are packed in header order.
//
// Offsets are relative to the start of the payload. Tensor order is preserved.
struct TensorArchive {
  std::int64_t format_version = kArchiveFormatVersion;
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  // nullptr when absent.
  const torch::Tensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_tensor_archive(const TensorArchive& archive);
TensorArchive decode_tensor_archive(const std::vector<std::uint8_t>& bytes);

// Writes to a sibling temporary file and renames it into place.
void write_tensor_archive(const TensorArchive& archive, const std::filesystem::path& path);
TensorArchive read_tensor_archive(const std::filesystem::path& path);

// Writes raw bytes atomically (temp file + rename).
void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace metastyle

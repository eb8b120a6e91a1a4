#include "metastyle/tensor_archive.hpp"

#include "metastyle/error.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unistd.h>

namespace metastyle {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kLengthPrefix = 8;

void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void append_f32_le(std::vector<std::uint8_t>& out, const torch::Tensor& t) {
  auto f = t.detach().to(torch::kCPU).to(torch::kFloat).contiguous();
  const auto* src = reinterpret_cast<const std::uint8_t*>(f.data_ptr<float>());
  const std::size_t n = static_cast<std::size_t>(f.numel()) * sizeof(float);
  const std::size_t base = out.size();
  out.insert(out.end(), src, src + n);
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = base; i < out.size(); i += 4) {
      std::swap(out[i], out[i + 3]);
      std::swap(out[i + 1], out[i + 2]);
    }
  }
}

torch::Tensor read_f32_le(const std::uint8_t* src, const std::vector<std::int64_t>& shape,
                          std::size_t bytes) {
  auto t = torch::empty(shape, torch::kFloat);
  std::memcpy(t.data_ptr<float>(), src, bytes);
  if constexpr (std::endian::native == std::endian::big) {
    auto* p = reinterpret_cast<std::uint8_t*>(t.data_ptr<float>());
    for (std::size_t i = 0; i < bytes; i += 4) {
      std::swap(p[i], p[i + 3]);
      std::swap(p[i + 1], p[i + 2]);
    }
  }
  return t;
}

}  // namespace

const torch::Tensor* TensorArchive::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::vector<std::uint8_t> encode_tensor_archive(const TensorArchive& archive) {
  std::vector<std::uint8_t> payload;
  nlohmann::ordered_json index = nlohmann::ordered_json::object();
  for (const auto& [name, t] : archive.tensors) {
    if (!t.is_floating_point()) {
      throw FormatError("tensor '" + name + "' is not floating point");
    }
    if (index.contains(name)) throw FormatError("duplicate tensor name '" + name + "'");
    const std::size_t offset = payload.size();
    append_f32_le(payload, t);
    index[name] = {{"dtype", "float32"},
                   {"shape", t.sizes().vec()},
                   {"offset", offset},
                   {"length", payload.size() - offset}};
  }

  nlohmann::ordered_json header = {{"format_version", archive.format_version},
                                   {"metadata", archive.metadata},
                                   {"tensors", index},
                                   {"payload_length", payload.size()},
                                   {"payload_crc32", crc_of(payload.data(), payload.size())}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(kLengthPrefix + text.size() + payload.size());
  put_u64_le(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

TensorArchive decode_tensor_archive(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kLengthPrefix) {
    throw CorruptionError("archive shorter than its length prefix");
  }
  const std::uint64_t header_len = get_u64_le(bytes.data());
  if (header_len > bytes.size() - kLengthPrefix) {
    throw CorruptionError("archive header length " + std::to_string(header_len) +
                          " exceeds file size " + std::to_string(bytes.size()));
  }
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(bytes.begin() + kLengthPrefix,
                                           bytes.begin() + kLengthPrefix + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("unreadable archive header: ") + e.what());
  }

  TensorArchive archive;
  try {
    archive.format_version = header.at("format_version").get<std::int64_t>();
    if (archive.format_version != kArchiveFormatVersion) {
      throw VersionError(archive.format_version, kArchiveFormatVersion);
    }
    archive.metadata = header.at("metadata");

    const std::size_t payload_start = kLengthPrefix + header_len;
    const auto payload_len = header.at("payload_length").get<std::uint64_t>();
    if (bytes.size() - payload_start != payload_len) {
      throw CorruptionError("payload holds " + std::to_string(bytes.size() - payload_start) +
                            " bytes, header declares " + std::to_string(payload_len));
    }
    const std::uint8_t* payload = bytes.data() + payload_start;
    if (crc_of(payload, payload_len) != header.at("payload_crc32").get<std::uint32_t>()) {
      throw CorruptionError("payload checksum mismatch");
    }

    std::uint64_t expected_offset = 0;
    for (const auto& [name, entry] : header.at("tensors").items()) {
      if (entry.at("dtype").get<std::string>() != "float32") {
        throw FormatError("tensor '" + name + "' has unsupported dtype " +
                          entry.at("dtype").dump());
      }
      const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto length = entry.at("length").get<std::uint64_t>();
      std::uint64_t numel = 1;
      for (auto d : shape) {
        if (d < 0) throw CorruptionError("tensor '" + name + "' has a negative dimension");
        numel *= static_cast<std::uint64_t>(d);
      }
      if (offset != expected_offset || length != numel * sizeof(float) ||
          offset + length > payload_len) {
        throw CorruptionError("tensor '" + name + "' has inconsistent offset/length");
      }
      expected_offset = offset + length;
      archive.tensors.emplace_back(name, read_f32_le(payload + offset, shape, length));
    }
    if (expected_offset != payload_len) {
      throw CorruptionError("payload has trailing bytes not covered by any tensor");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed archive header: ") + e.what());
  }
  return archive;
}

void write_file_atomic(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("failed writing '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move archive into place at '" + path.string() + "'");
  }
}

void write_tensor_archive(const TensorArchive& archive, const fs::path& path) {
  write_file_atomic(path, encode_tensor_archive(archive));
}

TensorArchive read_tensor_archive(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw IoError("failed reading '" + path.string() + "'");
  return decode_tensor_archive(bytes);
}

}  // namespace metastyle

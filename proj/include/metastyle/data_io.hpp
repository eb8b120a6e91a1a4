#pragma once

#include "metastyle/image.hpp"
#include "metastyle/param_set.hpp"
#include "metastyle/rng.hpp"
#include "metastyle/tensor_archive.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace metastyle {

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

// Decodes a PNG/JPEG at its native size: RGB, alpha dropped, gray replicated.
ImageTensor decode_image(const std::filesystem::path& path);

// Decode, center-crop to a square on the shorter side, bilinear resize
// (half-pixel centers, no corner alignment, no antialiasing) to
// target_size x target_size.
ImageTensor load_image(const std::filesystem::path& path, std::int64_t target_size);

// Same geometry as load_image applied to an already decoded image.
ImageTensor center_crop_resize(const ImageTensor& image, std::int64_t target_size);

// round(255 * v) per channel, written as 8-bit RGB PNG.
void save_image(const ImageTensor& image, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

enum class SplitTag { content_train, content_val, style };

struct DatasetHandle {
  std::filesystem::path root;
  std::vector<std::filesystem::path> index;  // sorted lexicographically
  SplitTag split_tag = SplitTag::content_train;

  std::size_t size() const { return index.size(); }
};

// Recursively collects .png/.jpg/.jpeg files (case-insensitive) under root.
DatasetHandle open_dataset(const std::filesystem::path& root, SplitTag tag);

// Seeded split of one content root into (train, val); the validation part
// takes ceil(val_fraction * n) images, at least one, and train keeps the rest.
std::pair<DatasetHandle, DatasetHandle> split_content(const DatasetHandle& all,
                                                      std::uint64_t seed,
                                                      double val_fraction = 0.1);

// Uniform draw without replacement of `batch` distinct indices.
std::vector<std::size_t> sample_indices(const DatasetHandle& handle, std::size_t batch, Rng& rng);

// Loads the sampled images at target_size.
std::vector<ImageTensor> sample_batch(const DatasetHandle& handle, std::size_t batch, Rng& rng,
                                      std::int64_t target_size);

// Lazily decoded images of one dataset at a fixed size, kept in memory up to
// `capacity` entries (further images are decoded on every use).
class ImageCache {
 public:
  ImageCache(DatasetHandle handle, std::int64_t target_size, std::size_t capacity = 4096);

  ImageTensor get(std::size_t index);
  const DatasetHandle& handle() const { return handle_; }
  std::int64_t target_size() const { return target_size_; }

 private:
  DatasetHandle handle_;
  std::int64_t target_size_;
  std::size_t capacity_;
  std::map<std::size_t, ImageTensor> cache_;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr std::int64_t kCheckpointFormatVersion = kArchiveFormatVersion;

struct Checkpoint {
  ParamSet params;
  ParamSet optimizer_state;
  std::int64_t iteration = 0;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  std::int64_t format_version = kCheckpointFormatVersion;
};

TensorArchive checkpoint_to_archive(const Checkpoint& ckpt);
Checkpoint checkpoint_from_archive(const TensorArchive& archive);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Hex digest of the encoded checkpoint bytes.
std::string checkpoint_digest(const Checkpoint& ckpt);

bool bit_equal(const Checkpoint& a, const Checkpoint& b);

// ---------------------------------------------------------------------------
// Frame sequences (video as numbered image files)
// ---------------------------------------------------------------------------

using FrameSource = std::function<std::optional<ImageTensor>()>;
using FrameSink = std::function<void(std::int64_t index, const ImageTensor& frame)>;

// Frames are the image files of `dir` in sorted order, decoded at native size.
// Throws CodecError naming the frame index when one cannot be decoded.
FrameSource directory_frame_source(const std::filesystem::path& dir);
// Writes frame_000000.png, frame_000001.png, ...
FrameSink directory_frame_sink(const std::filesystem::path& dir);

}  // namespace metastyle

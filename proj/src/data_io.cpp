#include "metastyle/data_io.hpp"

#include "metastyle/error.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>

namespace metastyle {

namespace fs = std::filesystem;

namespace {

bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> list_images(const fs::path& root, bool recursive) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) {
    throw DataError("dataset root '" + root.string() + "' is not a directory");
  }
  std::vector<fs::path> files;
  auto visit = [&](const fs::directory_entry& e) {
    if (e.is_regular_file() && has_image_extension(e.path())) files.push_back(e.path());
  };
  if (recursive) {
    for (const auto& e : fs::recursive_directory_iterator(root)) visit(e);
  } else {
    for (const auto& e : fs::directory_iterator(root)) visit(e);
  }
  // Byte-wise ordering of the generic form keeps enumeration platform independent.
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    return a.generic_string() < b.generic_string();
  });
  return files;
}

}  // namespace

ImageTensor decode_image(const fs::path& path) {
  cv::Mat bgr;
  try {
    bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw CodecError("cannot decode image '" + path.string() + "': " + e.what());
  }
  if (bgr.empty()) throw CodecError("cannot decode image '" + path.string() + "'");
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  auto hwc = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
  return ImageTensor(hwc.permute({2, 0, 1}).to(torch::kFloat).div_(255.0).contiguous());
}

ImageTensor center_crop_resize(const ImageTensor& image, std::int64_t target_size) {
  if (target_size <= 0) throw DimensionError("target size must be positive");
  const auto h = image.height();
  const auto w = image.width();
  const auto side = std::min(h, w);
  const auto top = (h - side) / 2;
  const auto left = (w - side) / 2;
  auto square = image.data().narrow(1, top, side).narrow(2, left, side);
  if (side == target_size) return ImageTensor(square.contiguous());
  namespace F = torch::nn::functional;
  auto resized = F::interpolate(square.unsqueeze(0),
                                F::InterpolateFuncOptions()
                                    .size(std::vector<std::int64_t>{target_size, target_size})
                                    .mode(torch::kBilinear)
                                    .align_corners(false)
                                    .antialias(false))
                     .squeeze(0);
  return ImageTensor::clamped(resized.contiguous());
}

ImageTensor load_image(const fs::path& path, std::int64_t target_size) {
  return center_crop_resize(decode_image(path), target_size);
}

void save_image(const ImageTensor& image, const fs::path& path) {
  auto q = (image.data().to(torch::kDouble) * 255.0 + 0.5)
               .floor()
               .clamp(0, 255)
               .to(torch::kUInt8)
               .permute({1, 2, 0})
               .contiguous();
  cv::Mat rgb(static_cast<int>(image.height()), static_cast<int>(image.width()), CV_8UC3,
              q.data_ptr<std::uint8_t>());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), bgr);
  } catch (const cv::Exception&) {
    ok = false;
  }
  if (!ok) throw IoError("cannot write image '" + path.string() + "'");
}

DatasetHandle open_dataset(const fs::path& root, SplitTag tag) {
  DatasetHandle h;
  h.root = root;
  h.index = list_images(root, /*recursive=*/true);
  h.split_tag = tag;
  return h;
}

std::pair<DatasetHandle, DatasetHandle> split_content(const DatasetHandle& all,
                                                      std::uint64_t seed, double val_fraction) {
  if (all.size() < 2) {
    throw DataError("content root '" + all.root.string() +
                    "' needs at least two images to split into train/val");
  }
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw DataError("validation fraction must lie in (0,1)");
  }
  auto n_val = static_cast<std::size_t>(std::ceil(val_fraction * static_cast<double>(all.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, all.size() - 1);
  Rng rng(seed, /*stream=*/0x5eed5);
  auto picked = rng.sample_without_replacement(all.size(), n_val);
  std::vector<bool> is_val(all.size(), false);
  for (auto i : picked) is_val[i] = true;

  DatasetHandle train{all.root, {}, SplitTag::content_train};
  DatasetHandle val{all.root, {}, SplitTag::content_val};
  for (std::size_t i = 0; i < all.size(); ++i) {
    (is_val[i] ? val : train).index.push_back(all.index[i]);
  }
  return {std::move(train), std::move(val)};
}

std::vector<std::size_t> sample_indices(const DatasetHandle& handle, std::size_t batch,
                                        Rng& rng) {
  if (batch > handle.size()) {
    throw DataError("batch of " + std::to_string(batch) + " exceeds dataset '" +
                    handle.root.string() + "' of size " + std::to_string(handle.size()));
  }
  return rng.sample_without_replacement(handle.size(), batch);
}

std::vector<ImageTensor> sample_batch(const DatasetHandle& handle, std::size_t batch, Rng& rng,
                                      std::int64_t target_size) {
  std::vector<ImageTensor> out;
  for (auto i : sample_indices(handle, batch, rng)) {
    out.push_back(load_image(handle.index[i], target_size));
  }
  return out;
}

ImageCache::ImageCache(DatasetHandle handle, std::int64_t target_size, std::size_t capacity)
    : handle_(std::move(handle)), target_size_(target_size), capacity_(capacity) {}

ImageTensor ImageCache::get(std::size_t index) {
  if (index >= handle_.size()) {
    throw DataError("image index " + std::to_string(index) + " out of range");
  }
  if (auto it = cache_.find(index); it != cache_.end()) return it->second;
  auto img = load_image(handle_.index[index], target_size_);
  if (cache_.size() < capacity_) cache_.emplace(index, img);
  return img;
}

TensorArchive checkpoint_to_archive(const Checkpoint& ckpt) {
  TensorArchive a;
  a.format_version = ckpt.format_version;
  a.metadata = {{"kind", "checkpoint"},
                {"iteration", ckpt.iteration},
                {"schema_hash", ckpt.params.schema_hash()},
                {"config", ckpt.config}};
  for (const auto& [name, t] : ckpt.params.entries()) a.tensors.emplace_back("params/" + name, t);
  for (const auto& [name, t] : ckpt.optimizer_state.entries()) {
    a.tensors.emplace_back("optim/" + name, t);
  }
  return a;
}

Checkpoint checkpoint_from_archive(const TensorArchive& archive) {
  Checkpoint ckpt;
  ckpt.format_version = archive.format_version;
  try {
    if (archive.metadata.at("kind").get<std::string>() != "checkpoint") {
      throw FormatError("archive is not a checkpoint");
    }
    ckpt.iteration = archive.metadata.at("iteration").get<std::int64_t>();
    ckpt.config = archive.metadata.at("config");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint metadata: ") + e.what());
  }
  for (const auto& [name, t] : archive.tensors) {
    if (name.starts_with("params/")) {
      ckpt.params.add(name.substr(7), t);
    } else if (name.starts_with("optim/")) {
      ckpt.optimizer_state.add(name.substr(6), t);
    } else {
      throw FormatError("unexpected tensor '" + name + "' in checkpoint");
    }
  }
  const auto stored = archive.metadata.value("schema_hash", std::string{});
  if (stored != ckpt.params.schema_hash()) {
    throw CorruptionError("checkpoint schema hash " + stored + " does not match its tensors (" +
                          ckpt.params.schema_hash() + ")");
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  write_tensor_archive(checkpoint_to_archive(ckpt), path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  return checkpoint_from_archive(read_tensor_archive(path));
}

std::string checkpoint_digest(const Checkpoint& ckpt) {
  const auto bytes = encode_tensor_archive(checkpoint_to_archive(ckpt));
  std::uint64_t h = 1469598103934665603ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

bool bit_equal(const Checkpoint& a, const Checkpoint& b) {
  return a.format_version == b.format_version && a.iteration == b.iteration &&
         a.config == b.config && a.params.bit_equal(b.params) &&
         a.optimizer_state.bit_equal(b.optimizer_state);
}

FrameSource directory_frame_source(const fs::path& dir) {
  auto files = std::make_shared<std::vector<fs::path>>(list_images(dir, /*recursive=*/false));
  auto next = std::make_shared<std::size_t>(0);
  return [files, next]() -> std::optional<ImageTensor> {
    if (*next >= files->size()) return std::nullopt;
    const auto k = (*next)++;
    try {
      return decode_image((*files)[k]);
    } catch (const CodecError&) {
      throw CodecError("frame " + std::to_string(k) + " ('" + (*files)[k].string() +
                       "') cannot be decoded");
    }
  };
}

FrameSink directory_frame_sink(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create frame directory '" + dir.string() + "'");
  return [dir](std::int64_t index, const ImageTensor& frame) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%06lld.png", static_cast<long long>(index));
    save_image(frame, dir / name);
  };
}

}  // namespace metastyle

#pragma once

#include <torch/torch.h>

#include <cstdint>

namespace metastyle {

// A 3xHxW image with every value finite and in [0,1]. Construction validates;
// the wrapped tensor is detached and never modified afterwards.
class ImageTensor {
 public:
  explicit ImageTensor(torch::Tensor data);

  // Clamps into [0,1] before validating (non-finite values still throw).
  static ImageTensor clamped(const torch::Tensor& data);

  const torch::Tensor& data() const { return data_; }
  std::int64_t height() const { return data_.size(1); }
  std::int64_t width() const { return data_.size(2); }
  torch::ScalarType dtype() const { return data_.scalar_type(); }

  // 1x3xHxW view for batched operations.
  torch::Tensor batched() const { return data_.unsqueeze(0); }

  ImageTensor to(torch::ScalarType dtype) const;

  bool bit_equal(const ImageTensor& other) const;

 private:
  torch::Tensor data_;
};

// Stacks images of identical size into an Nx3xHxW batch.
torch::Tensor stack_images(const std::vector<ImageTensor>& images);

}  // namespace metastyle

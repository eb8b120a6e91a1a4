#include "metastyle/image.hpp"

#include "metastyle/error.hpp"

#include <cstring>
#include <sstream>

namespace metastyle {

ImageTensor::ImageTensor(torch::Tensor data) : data_(data.detach()) {
  if (data_.dim() != 3 || data_.size(0) != 3) {
    std::ostringstream os;
    os << "image must have shape 3xHxW, got " << data_.sizes();
    throw DimensionError(os.str());
  }
  if (!data_.is_floating_point()) {
    throw DimensionError("image must hold floating-point values");
  }
  if (data_.numel() == 0) {
    throw DimensionError("image must be nonempty");
  }
  if (!torch::isfinite(data_).all().item<bool>()) {
    throw DataError("image contains non-finite values");
  }
  if (data_.min().item<double>() < 0.0 || data_.max().item<double>() > 1.0) {
    throw DataError("image values must lie in [0,1]");
  }
  data_ = data_.contiguous();
}

ImageTensor ImageTensor::clamped(const torch::Tensor& data) {
  return ImageTensor(data.detach().clamp(0.0, 1.0));
}

ImageTensor ImageTensor::to(torch::ScalarType dtype) const {
  return ImageTensor(data_.to(dtype).clamp(0.0, 1.0));
}

bool ImageTensor::bit_equal(const ImageTensor& other) const {
  if (!data_.sizes().equals(other.data_.sizes()) || dtype() != other.dtype()) return false;
  return std::memcmp(data_.data_ptr(), other.data_.data_ptr(),
                     data_.numel() * data_.element_size()) == 0;
}

torch::Tensor stack_images(const std::vector<ImageTensor>& images) {
  if (images.empty()) throw DataError("cannot stack an empty image list");
  std::vector<torch::Tensor> ts;
  ts.reserve(images.size());
  for (const auto& im : images) {
    if (im.height() != images.front().height() || im.width() != images.front().width()) {
      throw DimensionError("batch images must share one spatial size");
    }
    ts.push_back(im.data());
  }
  return torch::stack(ts);
}

}  // namespace metastyle

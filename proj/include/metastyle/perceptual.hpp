#pragma once

#include "metastyle/image.hpp"
#include "metastyle/tensor_archive.hpp"

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace metastyle {

enum class LayerId { relu1_2, relu2_2, relu3_3, relu4_3 };

std::string_view to_string(LayerId id);
LayerId parse_layer_id(std::string_view name);

inline constexpr std::array<LayerId, 4> kAllLayers = {LayerId::relu1_2, LayerId::relu2_2,
                                                      LayerId::relu3_3, LayerId::relu4_3};

// Activations of one image at one tap (C x H x W).
class FeatureMap {
 public:
  FeatureMap(torch::Tensor data, LayerId layer);

  const torch::Tensor& data() const { return data_; }
  LayerId layer() const { return layer_; }
  std::int64_t element_count() const { return data_.numel(); }

 private:
  torch::Tensor data_;
  LayerId layer_;
};

// Channel second-moment matrix of a feature map (C x C).
class GramMatrix {
 public:
  explicit GramMatrix(torch::Tensor data);

  const torch::Tensor& data() const { return data_; }
  std::int64_t channels() const { return data_.size(0); }

 private:
  torch::Tensor data_;
};

using StyleGrams = std::map<LayerId, GramMatrix>;

struct PerceptualConfig {
  double alpha = 1.0;
  double beta = 1e5;
  LayerId content_layer = LayerId::relu2_2;
  std::vector<LayerId> style_layers{kAllLayers.begin(), kAllLayers.end()};
  std::array<double, 3> channel_mean{0.485, 0.456, 0.406};
  std::array<double, 3> channel_std{0.229, 0.224, 0.225};

  // Throws ConfigError.
  void validate() const;
  // content_layer plus style_layers, deduplicated.
  std::vector<LayerId> required_layers() const;
};

struct LossBreakdown {
  double total = 0.0;
  double content = 0.0;
  double style = 0.0;
};

// total = alpha * content + beta * style.
LossBreakdown weighted_sum(const PerceptualConfig& config, double content, double style);

// Frozen convolutional feature network with named ReLU taps.
//
// Inputs are images in [0,1]; per-channel normalization is applied before the
// first convolution. Weights never require grad, but gradients flow through
// to the input (and to whatever produced it).
class FeatureExtractor {
 public:
  struct Stage {
    enum class Kind { conv, relu, max_pool };
    Kind kind = Kind::relu;
    torch::Tensor weight;  // conv only
    torch::Tensor bias;    // conv only
  };

  FeatureExtractor(std::vector<Stage> stages, std::map<LayerId, std::size_t> taps,
                   std::array<double, 3> channel_mean, std::array<double, 3> channel_std,
                   std::int64_t min_side = 1);

  // batch: N x 3 x H x W. Returns N x C x h x w activations per requested tap.
  std::map<LayerId, torch::Tensor> run(const torch::Tensor& batch,
                                       std::span<const LayerId> layers) const;

  bool has_tap(LayerId id) const { return taps_.contains(id); }
  std::int64_t min_side() const { return min_side_; }

  // Copy with weights converted (the extractor otherwise converts on each call).
  FeatureExtractor to(torch::ScalarType dtype) const;

 private:
  std::vector<Stage> stages_;
  std::map<LayerId, std::size_t> taps_;  // tap -> index of the stage whose output it is
  std::array<double, 3> mean_;
  std::array<double, 3> std_;
  std::int64_t min_side_;
};

// Indices of the 13 convolutions in the standard VGG16 `features` sequence,
// and the ReLU stages that the taps correspond to.
inline constexpr std::array<int, 13> kVgg16ConvIndices = {0,  2,  5,  7,  10, 12, 14,
                                                          17, 19, 21, 24, 26, 28};
inline constexpr std::array<std::int64_t, 13> kVgg16ConvChannels = {
    64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512};
std::size_t vgg16_tap_index(LayerId id);  // relu1_2 -> 3, relu2_2 -> 8, relu3_3 -> 15, relu4_3 -> 22

// Builds the extractor from `features.<k>.weight` / `features.<k>.bias`
// tensors. All 13 convolutions must be present with standard shapes; stages
// beyond relu4_3 are validated and then dropped.
FeatureExtractor vgg16_from_archive(const TensorArchive& archive,
                                    std::array<double, 3> channel_mean = {0.485, 0.456, 0.406},
                                    std::array<double, 3> channel_std = {0.229, 0.224, 0.225});

FeatureExtractor load_feature_extractor(const std::filesystem::path& weights_archive_path,
                                        const PerceptualConfig& config = {});

// He-normal VGG16 weights in the archive layout above, for environments
// without access to ImageNet-pretrained weights.
TensorArchive random_vgg16_weights(std::uint64_t seed);

// ---------------------------------------------------------------------------
// Single-image API
// ---------------------------------------------------------------------------

std::map<LayerId, FeatureMap> extract_features(const FeatureExtractor& extractor,
                                               const ImageTensor& image,
                                               std::span<const LayerId> layers);

GramMatrix gram(const FeatureMap& f);

double content_loss(const FeatureMap& f_c, const FeatureMap& f_x);

double style_loss(const StyleGrams& style_grams, const std::map<LayerId, FeatureMap>& x_features);

StyleGrams compute_style_grams(const FeatureExtractor& extractor, const ImageTensor& style,
                               std::span<const LayerId> layers);

LossBreakdown perceptual_loss(const PerceptualConfig& config, const FeatureExtractor& extractor,
                              const ImageTensor& i_c, const StyleGrams& style_grams,
                              const ImageTensor& i_x);

// d total / d i_x, shaped like i_x.
torch::Tensor image_gradient(const PerceptualConfig& config, const FeatureExtractor& extractor,
                             const ImageTensor& i_c, const StyleGrams& style_grams,
                             const ImageTensor& i_x);

// ---------------------------------------------------------------------------
// Batched, autograd-friendly API used by training
// ---------------------------------------------------------------------------

// N x C x H x W -> N x C x C, normalized by C*H*W.
torch::Tensor gram_batch(const torch::Tensor& features);
// Per-sample mean squared difference -> N.
torch::Tensor content_loss_batch(const torch::Tensor& f_c, const torch::Tensor& f_x);

struct PerceptualTerms {
  torch::Tensor total;    // N
  torch::Tensor content;  // N
  torch::Tensor style;    // N
};

// Perceptual loss bound to a configuration and an extractor. Content images
// enter as constants; the stylized batch may carry autograd history.
class PerceptualLoss {
 public:
  PerceptualLoss(PerceptualConfig config, FeatureExtractor extractor);

  const PerceptualConfig& config() const { return config_; }
  const FeatureExtractor& extractor() const { return extractor_; }

  StyleGrams style_grams(const ImageTensor& style) const;

  // Per-sample terms for content batch `content` (N x 3 x H x W) and output `x`.
  PerceptualTerms terms(const torch::Tensor& content, const StyleGrams& grams,
                        const torch::Tensor& x) const;

  // Mean over the batch of the total loss (a scalar tensor).
  torch::Tensor mean_total(const torch::Tensor& content, const StyleGrams& grams,
                           const torch::Tensor& x) const;

  // Mean breakdown over the batch, as plain numbers.
  LossBreakdown breakdown(const torch::Tensor& content, const StyleGrams& grams,
                          const torch::Tensor& x) const;

 private:
  PerceptualConfig config_;
  FeatureExtractor extractor_;
};

}  // namespace metastyle

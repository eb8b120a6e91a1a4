#include "metastyle/perceptual.hpp"

#include "metastyle/error.hpp"
#include "metastyle/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace metastyle {

namespace {

std::string shape_string(torch::IntArrayRef sizes) {
  std::ostringstream os;
  os << sizes;
  return os.str();
}

torch::Tensor channel_vector(const std::array<double, 3>& v, const torch::Tensor& like) {
  return torch::tensor({v[0], v[1], v[2]}, torch::TensorOptions().dtype(torch::kDouble))
      .to(like.scalar_type())
      .view({1, 3, 1, 1});
}

std::string conv_name(int k, const char* what) {
  return "features." + std::to_string(k) + "." + what;
}

}  // namespace

std::string_view to_string(LayerId id) {
  switch (id) {
    case LayerId::relu1_2: return "relu1_2";
    case LayerId::relu2_2: return "relu2_2";
    case LayerId::relu3_3: return "relu3_3";
    case LayerId::relu4_3: return "relu4_3";
  }
  return "?";
}

LayerId parse_layer_id(std::string_view name) {
  for (auto id : kAllLayers) {
    if (to_string(id) == name) return id;
  }
  throw ConfigError("unknown layer '" + std::string(name) + "'");
}

FeatureMap::FeatureMap(torch::Tensor data, LayerId layer) : data_(std::move(data)), layer_(layer) {
  if (data_.dim() != 3) {
    throw DimensionError("feature map must be C x H x W, got " + shape_string(data_.sizes()));
  }
}

GramMatrix::GramMatrix(torch::Tensor data) : data_(std::move(data)) {
  if (data_.dim() != 2 || data_.size(0) != data_.size(1)) {
    throw DimensionError("Gram matrix must be square, got " + shape_string(data_.sizes()));
  }
}

void PerceptualConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be finite and >= 0");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be finite and >= 0");
  if (style_layers.empty()) throw ConfigError("style layer set must be nonempty");
  std::set<LayerId> seen;
  for (auto id : style_layers) {
    if (!seen.insert(id).second) {
      throw ConfigError("style layer " + std::string(to_string(id)) + " listed twice");
    }
  }
  for (double s : channel_std) {
    if (!(s > 0.0)) throw ConfigError("channel std entries must be > 0");
  }
}

std::vector<LayerId> PerceptualConfig::required_layers() const {
  std::vector<LayerId> out = style_layers;
  if (std::find(out.begin(), out.end(), content_layer) == out.end()) {
    out.push_back(content_layer);
  }
  return out;
}

LossBreakdown weighted_sum(const PerceptualConfig& config, double content, double style) {
  return {config.alpha * content + config.beta * style, content, style};
}

// ---------------------------------------------------------------------------
// FeatureExtractor
// ---------------------------------------------------------------------------

FeatureExtractor::FeatureExtractor(std::vector<Stage> stages, std::map<LayerId, std::size_t> taps,
                                   std::array<double, 3> channel_mean,
                                   std::array<double, 3> channel_std, std::int64_t min_side)
    : stages_(std::move(stages)),
      taps_(std::move(taps)),
      mean_(channel_mean),
      std_(channel_std),
      min_side_(min_side) {
  for (const auto& [id, idx] : taps_) {
    if (idx >= stages_.size()) {
      throw ConfigError("tap " + std::string(to_string(id)) + " points past the last stage");
    }
  }
  for (auto& s : stages_) {
    if (s.kind == Stage::Kind::conv) {
      s.weight = s.weight.detach();
      s.bias = s.bias.detach();
    }
  }
  for (double s : std_) {
    if (!(s > 0.0)) throw ConfigError("channel std entries must be > 0");
  }
}

std::map<LayerId, torch::Tensor> FeatureExtractor::run(const torch::Tensor& batch,
                                                       std::span<const LayerId> layers) const {
  if (batch.dim() != 4 || batch.size(1) != 3) {
    throw DimensionError("extractor input must be N x 3 x H x W, got " +
                         shape_string(batch.sizes()));
  }
  if (batch.size(2) < min_side_ || batch.size(3) < min_side_) {
    throw DimensionError("extractor input is " + std::to_string(batch.size(2)) + "x" +
                         std::to_string(batch.size(3)) + "; height and width must be >= " +
                         std::to_string(min_side_));
  }
  std::size_t last = 0;
  for (auto id : layers) {
    auto it = taps_.find(id);
    if (it == taps_.end()) {
      throw ConfigError("extractor has no tap " + std::string(to_string(id)));
    }
    last = std::max(last, it->second);
  }
  std::map<LayerId, torch::Tensor> out;
  if (layers.empty()) return out;

  auto x = (batch - channel_vector(mean_, batch)) / channel_vector(std_, batch);
  for (std::size_t i = 0; i <= last; ++i) {
    const auto& s = stages_[i];
    switch (s.kind) {
      case Stage::Kind::conv:
        x = torch::conv2d(x, s.weight.to(x.scalar_type()), s.bias.to(x.scalar_type()),
                          /*stride=*/1, /*padding=*/1);
        break;
      case Stage::Kind::relu:
        x = torch::relu(x);
        break;
      case Stage::Kind::max_pool:
        x = torch::max_pool2d(x, 2, 2);
        break;
    }
    for (auto id : layers) {
      if (taps_.at(id) == i) out.insert_or_assign(id, x);
    }
  }
  return out;
}

FeatureExtractor FeatureExtractor::to(torch::ScalarType dtype) const {
  auto stages = stages_;
  for (auto& s : stages) {
    if (s.kind == Stage::Kind::conv) {
      s.weight = s.weight.to(dtype);
      s.bias = s.bias.to(dtype);
    }
  }
  return FeatureExtractor(std::move(stages), taps_, mean_, std_, min_side_);
}

std::size_t vgg16_tap_index(LayerId id) {
  switch (id) {
    case LayerId::relu1_2: return 3;
    case LayerId::relu2_2: return 8;
    case LayerId::relu3_3: return 15;
    case LayerId::relu4_3: return 22;
  }
  return 0;
}

FeatureExtractor vgg16_from_archive(const TensorArchive& archive,
                                    std::array<double, 3> channel_mean,
                                    std::array<double, 3> channel_std) {
  // features.0 .. features.30: conv/relu pairs with a pool closing each block.
  constexpr std::array<int, 5> kPoolIndices = {4, 9, 16, 23, 30};
  std::vector<FeatureExtractor::Stage> stages(31);
  for (int k : kPoolIndices) stages[k].kind = FeatureExtractor::Stage::Kind::max_pool;

  std::int64_t in_channels = 3;
  for (std::size_t c = 0; c < kVgg16ConvIndices.size(); ++c) {
    const int k = kVgg16ConvIndices[c];
    const std::int64_t out_channels = kVgg16ConvChannels[c];
    const std::vector<std::int64_t> w_shape{out_channels, in_channels, 3, 3};
    const std::vector<std::int64_t> b_shape{out_channels};

    auto fetch = [&](const std::string& name, const std::vector<std::int64_t>& expected) {
      const torch::Tensor* t = archive.find(name);
      if (t == nullptr) throw LoadError("weights archive is missing tensor '" + name + "'");
      if (!t->sizes().equals(expected)) {
        throw LoadError("tensor '" + name + "' has shape " + shape_string(t->sizes()) +
                        ", expected " + shape_string(expected));
      }
      return *t;
    };
    auto& stage = stages[k];
    stage.kind = FeatureExtractor::Stage::Kind::conv;
    stage.weight = fetch(conv_name(k, "weight"), w_shape);
    stage.bias = fetch(conv_name(k, "bias"), b_shape);
    in_channels = out_channels;
  }

  const std::size_t keep = vgg16_tap_index(LayerId::relu4_3) + 1;
  stages.resize(keep);
  std::map<LayerId, std::size_t> taps;
  for (auto id : kAllLayers) taps[id] = vgg16_tap_index(id);
  return FeatureExtractor(std::move(stages), std::move(taps), channel_mean, channel_std,
                          /*min_side=*/32);
}

FeatureExtractor load_feature_extractor(const std::filesystem::path& weights_archive_path,
                                        const PerceptualConfig& config) {
  return vgg16_from_archive(read_tensor_archive(weights_archive_path), config.channel_mean,
                            config.channel_std);
}

TensorArchive random_vgg16_weights(std::uint64_t seed) {
  TensorArchive a;
  a.metadata = {{"kind", "vgg16_features"}, {"source", "random_he_normal"}, {"seed", seed}};
  Rng rng(seed, /*stream=*/0x766767);
  std::int64_t in_channels = 3;
  for (std::size_t c = 0; c < kVgg16ConvIndices.size(); ++c) {
    const std::int64_t out_channels = kVgg16ConvChannels[c];
    auto w = torch::empty({out_channels, in_channels, 3, 3}, torch::kFloat);
    const double scale = std::sqrt(2.0 / static_cast<double>(in_channels * 9));
    float* p = w.data_ptr<float>();
    for (std::int64_t i = 0; i < w.numel(); ++i) p[i] = static_cast<float>(scale * rng.normal());
    a.tensors.emplace_back(conv_name(kVgg16ConvIndices[c], "weight"), w);
    a.tensors.emplace_back(conv_name(kVgg16ConvIndices[c], "bias"),
                           torch::zeros({out_channels}, torch::kFloat));
    in_channels = out_channels;
  }
  return a;
}

// ---------------------------------------------------------------------------
// Loss math
// ---------------------------------------------------------------------------

torch::Tensor gram_batch(const torch::Tensor& features) {
  if (features.dim() != 4) {
    throw DimensionError("gram_batch expects N x C x H x W, got " +
                         shape_string(features.sizes()));
  }
  const auto n = features.size(0);
  const auto c = features.size(1);
  const auto hw = features.size(2) * features.size(3);
  if (c * hw == 0) throw DimensionError("cannot take the Gram matrix of an empty feature map");
  auto psi = features.reshape({n, c, hw});
  return torch::bmm(psi, psi.transpose(1, 2)) / static_cast<double>(c * hw);
}

torch::Tensor content_loss_batch(const torch::Tensor& f_c, const torch::Tensor& f_x) {
  if (!f_c.sizes().equals(f_x.sizes())) {
    throw DimensionError("content features differ in shape: " + shape_string(f_c.sizes()) +
                         " vs " + shape_string(f_x.sizes()));
  }
  return (f_c - f_x).square().flatten(1).mean(1);
}

namespace {

void require_same_layers(const StyleGrams& grams, const std::vector<LayerId>& layers) {
  std::set<LayerId> want(layers.begin(), layers.end());
  std::set<LayerId> have;
  for (const auto& [id, g] : grams) have.insert(id);
  if (want != have) {
    throw ConfigError("style Gram layers do not match the configured style layer set");
  }
}

// Per-sample sum over layers of squared Frobenius distance.
torch::Tensor style_loss_batch(const StyleGrams& grams, const std::map<LayerId, torch::Tensor>& x,
                               const std::vector<LayerId>& layers) {
  torch::Tensor total;
  for (auto id : layers) {
    const auto& target = grams.at(id).data();
    auto g = gram_batch(x.at(id));
    if (g.size(1) != target.size(0)) {
      throw DimensionError("style Gram at " + std::string(to_string(id)) + " has " +
                           std::to_string(target.size(0)) + " channels, features have " +
                           std::to_string(g.size(1)));
    }
    auto term = (g - target.to(g.scalar_type()).unsqueeze(0)).square().sum({1, 2});
    total = total.defined() ? total + term : term;
  }
  return total;
}

}  // namespace

std::map<LayerId, FeatureMap> extract_features(const FeatureExtractor& extractor,
                                               const ImageTensor& image,
                                               std::span<const LayerId> layers) {
  auto raw = extractor.run(image.batched(), layers);
  std::map<LayerId, FeatureMap> out;
  for (auto& [id, t] : raw) out.emplace(id, FeatureMap(t.squeeze(0), id));
  return out;
}

GramMatrix gram(const FeatureMap& f) {
  return GramMatrix(gram_batch(f.data().unsqueeze(0)).squeeze(0));
}

double content_loss(const FeatureMap& f_c, const FeatureMap& f_x) {
  if (f_c.layer() != f_x.layer()) {
    throw DimensionError("content features come from different layers (" +
                         std::string(to_string(f_c.layer())) + " vs " +
                         std::string(to_string(f_x.layer())) + ")");
  }
  return content_loss_batch(f_c.data().unsqueeze(0), f_x.data().unsqueeze(0)).item<double>();
}

double style_loss(const StyleGrams& style_grams, const std::map<LayerId, FeatureMap>& x_features) {
  std::vector<LayerId> layers;
  std::map<LayerId, torch::Tensor> x;
  for (const auto& [id, f] : x_features) {
    layers.push_back(id);
    x.emplace(id, f.data().unsqueeze(0));
  }
  require_same_layers(style_grams, layers);
  return style_loss_batch(style_grams, x, layers).item<double>();
}

StyleGrams compute_style_grams(const FeatureExtractor& extractor, const ImageTensor& style,
                               std::span<const LayerId> layers) {
  torch::NoGradGuard no_grad;
  StyleGrams out;
  for (auto& [id, f] : extractor.run(style.batched(), layers)) {
    out.emplace(id, GramMatrix(gram_batch(f).squeeze(0)));
  }
  return out;
}

LossBreakdown perceptual_loss(const PerceptualConfig& config, const FeatureExtractor& extractor,
                              const ImageTensor& i_c, const StyleGrams& style_grams,
                              const ImageTensor& i_x) {
  PerceptualLoss loss(config, extractor);
  torch::NoGradGuard no_grad;
  return loss.breakdown(i_c.batched(), style_grams, i_x.batched());
}

torch::Tensor image_gradient(const PerceptualConfig& config, const FeatureExtractor& extractor,
                             const ImageTensor& i_c, const StyleGrams& style_grams,
                             const ImageTensor& i_x) {
  PerceptualLoss loss(config, extractor);
  auto x = i_x.batched().clone().set_requires_grad(true);
  auto total = loss.mean_total(i_c.batched(), style_grams, x);
  auto grads = torch::autograd::grad({total}, {x});
  return grads[0].squeeze(0).detach();
}

// ---------------------------------------------------------------------------
// PerceptualLoss
// ---------------------------------------------------------------------------

PerceptualLoss::PerceptualLoss(PerceptualConfig config, FeatureExtractor extractor)
    : config_(std::move(config)), extractor_(std::move(extractor)) {
  config_.validate();
  for (auto id : config_.required_layers()) {
    if (!extractor_.has_tap(id)) {
      throw ConfigError("extractor has no tap " + std::string(to_string(id)));
    }
  }
}

StyleGrams PerceptualLoss::style_grams(const ImageTensor& style) const {
  return compute_style_grams(extractor_, style, config_.style_layers);
}

PerceptualTerms PerceptualLoss::terms(const torch::Tensor& content, const StyleGrams& grams,
                                      const torch::Tensor& x) const {
  if (!content.sizes().equals(x.sizes())) {
    throw DimensionError("content batch " + shape_string(content.sizes()) +
                         " and output batch " + shape_string(x.sizes()) + " differ in shape");
  }
  require_same_layers(grams, config_.style_layers);

  torch::Tensor content_features;
  {
    torch::NoGradGuard no_grad;
    const LayerId layer[] = {config_.content_layer};
    content_features = extractor_.run(content.to(x.scalar_type()), layer).at(config_.content_layer);
  }
  const auto layers = config_.required_layers();
  auto x_features = extractor_.run(x, layers);

  PerceptualTerms t;
  t.content = content_loss_batch(content_features, x_features.at(config_.content_layer));
  t.style = style_loss_batch(grams, x_features, config_.style_layers);
  t.total = config_.alpha * t.content + config_.beta * t.style;
  return t;
}

torch::Tensor PerceptualLoss::mean_total(const torch::Tensor& content, const StyleGrams& grams,
                                         const torch::Tensor& x) const {
  return terms(content, grams, x).total.mean();
}

LossBreakdown PerceptualLoss::breakdown(const torch::Tensor& content, const StyleGrams& grams,
                                        const torch::Tensor& x) const {
  auto t = terms(content, grams, x);
  return weighted_sum(config_, t.content.mean().item<double>(), t.style.mean().item<double>());
}

}  // namespace metastyle

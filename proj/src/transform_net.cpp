#include "metastyle/transform_net.hpp"

#include "metastyle/error.hpp"
#include "metastyle/rng.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace metastyle {

namespace {

struct ConvLayout {
  std::string conv;  // "<conv>.weight" / "<conv>.bias"
  std::string norm;  // "<norm>.scale" / "<norm>.shift"; empty for the output conv
  std::int64_t in;
  std::int64_t out;
  std::int64_t kernel;
};

std::string res_prefix(std::int64_t i) { return "res" + std::to_string(i); }

// Convolutions in execution order.
std::vector<ConvLayout> layout(const NetworkSpec& spec) {
  const auto c1 = spec.base_channels;
  const auto c2 = 2 * c1;
  const auto c3 = 4 * c1;
  std::vector<ConvLayout> convs = {{"enc1.conv", "enc1.norm", 3, c1, 9},
                                   {"enc2.conv", "enc2.norm", c1, c2, 3},
                                   {"enc3.conv", "enc3.norm", c2, c3, 3}};
  for (std::int64_t i = 0; i < spec.num_residual_blocks; ++i) {
    const auto r = res_prefix(i);
    convs.push_back({r + ".conv1", r + ".norm1", c3, c3, 3});
    convs.push_back({r + ".conv2", r + ".norm2", c3, c3, 3});
  }
  convs.push_back({"dec1.conv", "dec1.norm", c3, c2, 3});
  convs.push_back({"dec2.conv", "dec2.norm", c2, c1, 3});
  convs.push_back({"out.conv", "", c1, 3, 9});
  return convs;
}

torch::Tensor conv(const ParamSet& p, const std::string& stage, const torch::Tensor& x,
                   std::int64_t stride) {
  const auto& w = p.at(stage + ".weight");
  const auto pad = w.size(2) / 2;
  auto padded = torch::reflection_pad2d(x, {pad, pad, pad, pad});
  return torch::conv2d(padded, w, p.at(stage + ".bias"), stride);
}

torch::Tensor affine_norm(const ParamSet& p, const std::string& stage, const torch::Tensor& x) {
  const auto c = x.size(1);
  return instance_normalize(x) * p.at(stage + ".scale").view({1, c, 1, 1}) +
         p.at(stage + ".shift").view({1, c, 1, 1});
}

torch::Tensor conv_norm_relu(const ParamSet& p, const std::string& name, const torch::Tensor& x,
                             std::int64_t stride) {
  return torch::relu(affine_norm(p, name + ".norm", conv(p, name + ".conv", x, stride)));
}

torch::Tensor upsample2(const torch::Tensor& x) {
  return torch::upsample_nearest2d(x, {x.size(2) * 2, x.size(3) * 2});
}

}  // namespace

void NetworkSpec::validate() const {
  if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
  if (num_residual_blocks < 1) throw ConfigError("num_residual_blocks must be >= 1");
}

ParamSet init_params(const NetworkSpec& spec, std::uint64_t seed, torch::ScalarType dtype) {
  spec.validate();
  Rng rng(seed, /*stream=*/0x1417);
  ParamSet params;
  auto uniform_tensor = [&](std::vector<std::int64_t> shape, double bound) {
    auto t = torch::empty(shape, torch::kDouble);
    double* d = t.data_ptr<double>();
    for (std::int64_t i = 0; i < t.numel(); ++i) d[i] = rng.uniform(-bound, bound);
    return t.to(dtype);
  };
  for (const auto& c : layout(spec)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(c.in * c.kernel * c.kernel));
    params.add(c.conv + ".weight", uniform_tensor({c.out, c.in, c.kernel, c.kernel}, bound));
    params.add(c.conv + ".bias", uniform_tensor({c.out}, bound));
    if (!c.norm.empty()) {
      params.add(c.norm + ".scale", torch::ones({c.out}, dtype));
      params.add(c.norm + ".shift", torch::zeros({c.out}, dtype));
    }
  }
  return params;
}

std::string expected_schema_hash(const NetworkSpec& spec) {
  ParamSet shapes;
  for (const auto& c : layout(spec)) {
    shapes.add(c.conv + ".weight", torch::empty({c.out, c.in, c.kernel, c.kernel}));
    shapes.add(c.conv + ".bias", torch::empty({c.out}));
    if (!c.norm.empty()) {
      shapes.add(c.norm + ".scale", torch::empty({c.out}));
      shapes.add(c.norm + ".shift", torch::empty({c.out}));
    }
  }
  return shapes.schema_hash();
}

NetworkSpec infer_spec(const ParamSet& params) {
  if (!params.contains("enc1.conv.weight")) {
    throw ParameterError("parameter set has no 'enc1.conv.weight'; not a transform network");
  }
  NetworkSpec spec;
  spec.base_channels = params.at("enc1.conv.weight").size(0);
  spec.num_residual_blocks = 0;
  while (params.contains(res_prefix(spec.num_residual_blocks) + ".conv1.weight")) {
    ++spec.num_residual_blocks;
  }
  if (spec.base_channels < 1 || spec.num_residual_blocks < 1 ||
      params.schema_hash() != expected_schema_hash(spec)) {
    throw ParameterError("parameter schema " + params.schema_hash() +
                         " does not match any transform network layout");
  }
  return spec;
}

torch::Tensor instance_normalize(const torch::Tensor& x, double eps) {
  auto mean = x.mean({2, 3}, /*keepdim=*/true);
  auto centered = x - mean;
  auto var = centered.square().mean({2, 3}, /*keepdim=*/true);
  return centered / torch::sqrt(var + eps);
}

torch::Tensor forward_batch(const ParamSet& params, const torch::Tensor& batch) {
  const NetworkSpec spec = infer_spec(params);
  if (batch.dim() != 4 || batch.size(1) != 3) {
    throw DimensionError("transform network input must be N x 3 x H x W");
  }
  const auto f = NetworkSpec::kDownsampleFactor;
  if (batch.size(2) % f != 0 || batch.size(3) % f != 0) {
    throw DimensionError("input is " + std::to_string(batch.size(2)) + "x" +
                         std::to_string(batch.size(3)) + "; height and width must be divisible by " +
                         std::to_string(f));
  }
  if (batch.size(2) < 2 * f || batch.size(3) < 2 * f) {
    throw DimensionError("input must be at least " + std::to_string(2 * f) + " pixels per side");
  }

  auto x = conv_norm_relu(params, "enc1", batch, 1);
  x = conv_norm_relu(params, "enc2", x, 2);
  x = conv_norm_relu(params, "enc3", x, 2);
  for (std::int64_t i = 0; i < spec.num_residual_blocks; ++i) {
    const auto r = res_prefix(i);
    auto y = torch::relu(affine_norm(params, r + ".norm1", conv(params, r + ".conv1", x, 1)));
    y = affine_norm(params, r + ".norm2", conv(params, r + ".conv2", y, 1));
    x = x + y;
  }
  x = conv_norm_relu(params, "dec1", upsample2(x), 1);
  x = conv_norm_relu(params, "dec2", upsample2(x), 1);
  auto y = torch::sigmoid(conv(params, "out.conv", x, 1));

  // Keep the output inside the open interval (0,1) even where the sigmoid
  // saturates to the representable endpoints.
  const bool is_double = y.scalar_type() == torch::kDouble;
  const double lo = is_double ? std::numeric_limits<double>::min()
                              : static_cast<double>(std::numeric_limits<float>::min());
  const double hi = is_double ? 1.0 - std::numeric_limits<double>::epsilon() / 2
                              : 1.0 - static_cast<double>(std::numeric_limits<float>::epsilon()) / 2;
  return torch::clamp(y, lo, hi);
}

ImageTensor forward(const ParamSet& params, const ImageTensor& image) {
  if (params.empty()) throw ParameterError("empty parameter set");
  torch::NoGradGuard no_grad;
  const auto dtype = params.entries().front().second.scalar_type();
  return ImageTensor(forward_batch(params, image.batched().to(dtype)).squeeze(0));
}

}  // namespace metastyle

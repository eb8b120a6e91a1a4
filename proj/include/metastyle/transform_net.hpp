#pragma once

#include "metastyle/image.hpp"
#include "metastyle/param_set.hpp"

#include <torch/torch.h>

#include <cstdint>

namespace metastyle {

// Encoder (9x9 conv, two stride-2 3x3 convs) -> residual trunk -> decoder
// (two nearest-neighbour x2 upsample + 3x3 conv stages, 9x9 output conv).
// Reflection padding throughout; instance norm with learned scale/shift after
// every convolution except the last, whose output goes through a sigmoid.
struct NetworkSpec {
  std::int64_t base_channels = 32;
  std::int64_t num_residual_blocks = 5;

  static constexpr std::int64_t kDownsampleFactor = 4;
  static constexpr double kNormEpsilon = 1e-5;

  void validate() const;  // throws ConfigError
};

// Fan-in scaled uniform convolution weights and biases, unit norm scales, zero
// norm shifts. Deterministic in (spec, seed) on every platform.
ParamSet init_params(const NetworkSpec& spec, std::uint64_t seed,
                     torch::ScalarType dtype = torch::kFloat);

// Recovers the spec a ParamSet was built for; throws ParameterError if the
// entries do not form a valid schema.
NetworkSpec infer_spec(const ParamSet& params);

// Schema hash of init_params(spec, *).
std::string expected_schema_hash(const NetworkSpec& spec);

// batch: N x 3 x H x W with H, W divisible by 4. Differentiable with respect
// to both the parameters and the input.
torch::Tensor forward_batch(const ParamSet& params, const torch::Tensor& batch);

ImageTensor forward(const ParamSet& params, const ImageTensor& image);

// Per-sample, per-channel normalization without the affine part.
torch::Tensor instance_normalize(const torch::Tensor& x, double eps = NetworkSpec::kNormEpsilon);

}  // namespace metastyle

#pragma once

#include "metastyle/adam.hpp"
#include "metastyle/data_io.hpp"
#include "metastyle/param_set.hpp"
#include "metastyle/perceptual.hpp"
#include "metastyle/rng.hpp"
#include "metastyle/transform_net.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace metastyle {

enum class MetaGradientMode { full, first_order };
enum class OuterOptimizer { adam, sgd };

std::string_view to_string(MetaGradientMode mode);
MetaGradientMode parse_meta_gradient_mode(std::string_view text);

struct MetaTrainConfig {
  double delta = 1e-4;  // inner SGD step
  double eta = 1e-3;    // outer step
  std::int64_t T = 1;   // inner steps per style
  std::int64_t style_batch = 4;
  std::int64_t content_batch = 4;
  std::int64_t iterations = 0;
  MetaGradientMode meta_gradient_mode = MetaGradientMode::full;
  OuterOptimizer outer_optimizer = OuterOptimizer::adam;
  std::uint64_t seed = 0;
  // Rescale the meta-gradient to at most this norm; 0 disables clipping.
  double clip_grad_norm = 0.0;
  std::int64_t image_size = 256;
  // Emit a checkpoint every this many iterations (0: only initial and final).
  std::int64_t checkpoint_interval = 0;

  void validate() const;  // throws ConfigError
  nlohmann::ordered_json to_json() const;
};

struct MetaStepReport {
  double outer_loss = 0.0;
  std::vector<double> per_style_inner_losses;  // loss at the last inner step; NaN when T = 0
  double grad_norm = 0.0;
  std::int64_t iteration = 0;
};

// Tab-separated: iteration, E, comma-joined inner losses, grad norm, wall ms.
std::string format_report_line(const MetaStepReport& report, double wall_ms);

// Scalar loss of a model with parameters `params` on one batch.
using Objective = std::function<torch::Tensor(const ParamSet& params, const torch::Tensor& batch)>;

// Supplies content batches; nullopt signals exhaustion.
class BatchSource {
 public:
  virtual ~BatchSource() = default;
  virtual std::optional<torch::Tensor> next() = 0;
};

// Hands out a fixed list of batches once, or cycles through them forever.
class FixedBatchSource : public BatchSource {
 public:
  explicit FixedBatchSource(std::vector<torch::Tensor> batches, bool cycle = false);
  std::optional<torch::Tensor> next() override;

 private:
  std::vector<torch::Tensor> batches_;
  bool cycle_;
  std::size_t pos_ = 0;
};

// Endless seeded draws of `batch` distinct images from a dataset.
class DatasetBatchSource : public BatchSource {
 public:
  DatasetBatchSource(ImageCache& images, std::size_t batch, Rng rng);
  std::optional<torch::Tensor> next() override;

 private:
  ImageCache* images_;
  std::size_t batch_;
  Rng rng_;
};

struct InnerResult {
  ParamSet adapted;
  std::vector<double> losses;  // one per inner step
};

// T steps of w <- w - delta * grad(objective) from w = theta, one fresh batch
// per step. In full mode the result keeps its autograd dependence on theta
// (when theta's tensors require grad); in first-order mode it is detached.
// theta itself is never modified.
InnerResult inner_adapt(const ParamSet& theta, const Objective& objective, BatchSource& train,
                        double delta, std::int64_t T, MetaGradientMode mode);

struct AdaptedStyle {
  const Objective* objective;
  ParamSet params;
};

// Mean over styles of the objective on one validation batch per style.
torch::Tensor outer_loss_tensor(std::span<const AdaptedStyle> adapted, BatchSource& val);
double outer_loss(std::span<const AdaptedStyle> adapted, BatchSource& val);

struct MetaStepResult {
  ParamSet theta;
  MetaStepReport report;
  ParamSet meta_gradient;
};

// One outer iteration over a batch of styles (one objective per style).
MetaStepResult meta_step(const ParamSet& theta, std::span<const Objective> styles,
                         BatchSource& train, BatchSource& val, const MetaTrainConfig& config,
                         AdamState& optimizer_state, std::int64_t iteration);

// Objective of the transform network under the perceptual loss for one style.
Objective make_style_objective(const PerceptualLoss& loss, StyleGrams grams);

struct MetaTrainData {
  DatasetHandle content_train;
  DatasetHandle content_val;
  DatasetHandle styles;
};

struct MetaTrainHooks {
  std::function<void(const Checkpoint&)> on_checkpoint;
  std::function<void(const MetaStepReport&, double wall_ms)> on_report;
  // Extra fields merged into every checkpoint's config snapshot.
  nlohmann::ordered_json extra_config = nlohmann::ordered_json::object();
};

// Runs config.iterations meta-steps from init_params(spec, config.seed).
// Emits a checkpoint at iteration 0, every checkpoint_interval iterations and
// at the end. Returns the final meta-parameters.
ParamSet meta_train(const MetaTrainConfig& config, const MetaTrainData& data,
                    const PerceptualLoss& perceptual, const NetworkSpec& spec,
                    const MetaTrainHooks& hooks);

}  // namespace metastyle

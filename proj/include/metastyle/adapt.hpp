#pragma once

#include "metastyle/data_io.hpp"
#include "metastyle/image.hpp"
#include "metastyle/meta_train.hpp"
#include "metastyle/param_set.hpp"
#include "metastyle/perceptual.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace metastyle {

struct AdaptConfig {
  std::int64_t steps = 200;
  double step_size = 1e-3;  // Adam, beta1 0.9, beta2 0.999, eps 1e-8
  std::int64_t content_batch = 4;
  std::int64_t eval_interval = 0;  // 0: no intermediate evaluation callbacks

  void validate() const;  // throws ConfigError
};

struct LossRecord {
  std::int64_t step = 0;
  double total = 0.0;
  double content = 0.0;
  double style = 0.0;
};

using LossTrace = std::vector<LossRecord>;

// One "step total content style" line per record.
std::string format_trace(const LossTrace& trace);
void write_trace(const LossTrace& trace, const std::filesystem::path& path);

struct AdaptResult {
  ParamSet params;
  LossTrace trace;  // trace[k]: training loss on the k-th batch, before update k+1
};

// Called with the current parameters at step 0, every eval_interval steps and
// after the final step.
using EvalCallback = std::function<void(std::int64_t step, const ParamSet& params)>;

// Single-style training of the transform network starting from theta.
AdaptResult adapt_to_style(const ParamSet& theta, const ImageTensor& style, BatchSource& content,
                           const PerceptualLoss& perceptual, const AdaptConfig& config,
                           const EvalCallback& on_eval = {});

enum class ImageInit { content, style_neutral };

struct ImageOptimizationResult {
  ImageTensor image;
  LossTrace trace;  // trace[k]: loss after k updates, k = 0..steps
};

// Adam on the pixels of a copy of `init`, clamped to [0,1] after every step.
ImageOptimizationResult optimize_image(const ImageTensor& init, const ImageTensor& i_c,
                                       const StyleGrams& style_grams,
                                       const PerceptualLoss& perceptual, std::int64_t steps,
                                       double step_size = 1e-2);

// i_c itself, or the transform network's output for i_c.
ImageTensor initial_image(ImageInit mode, const ImageTensor& i_c, const ParamSet* theta);

class InterpolationWeights {
 public:
  // Throws WeightError unless all weights are >= 0 and sum to 1 within 1e-9.
  explicit InterpolationWeights(std::vector<double> weights);
  const std::vector<double>& values() const { return weights_; }

 private:
  std::vector<double> weights_;
};

// Elementwise sum_i w_i * params_i over every entry.
ParamSet interpolate(std::span<const ParamSet> param_sets, const InterpolationWeights& weights);

// Reflect-pads to the next multiple of 4, runs the network, crops back.
ImageTensor stylize(const ParamSet& params, const ImageTensor& image);

// Stylizes frames one at a time in order; returns the number of frames.
std::int64_t stylize_video(const ParamSet& params, const FrameSource& source,
                           const FrameSink& sink);

}  // namespace metastyle

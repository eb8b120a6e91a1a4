#include "metastyle/adapt.hpp"

#include "metastyle/adam.hpp"
#include "metastyle/error.hpp"
#include "metastyle/transform_net.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace metastyle {

namespace {

LossRecord record(std::int64_t step, const PerceptualTerms& t, const PerceptualConfig& config) {
  const auto b = weighted_sum(config, t.content.mean().item<double>(), t.style.mean().item<double>());
  return {step, b.total, b.content, b.style};
}

}  // namespace

void AdaptConfig::validate() const {
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (!(step_size > 0.0) || !std::isfinite(step_size)) {
    throw ConfigError("step size must be finite and > 0");
  }
  if (content_batch < 1) throw ConfigError("content_batch must be >= 1");
  if (eval_interval < 0) throw ConfigError("eval_interval must be >= 0");
}

std::string format_trace(const LossTrace& trace) {
  std::ostringstream os;
  os << std::setprecision(9);
  for (const auto& r : trace) {
    os << r.step << ' ' << r.total << ' ' << r.content << ' ' << r.style << '\n';
  }
  return os.str();
}

void write_trace(const LossTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write trace '" + path.string() + "'");
  out << format_trace(trace);
  if (!out) throw IoError("failed writing trace '" + path.string() + "'");
}

AdaptResult adapt_to_style(const ParamSet& theta, const ImageTensor& style, BatchSource& content,
                           const PerceptualLoss& perceptual, const AdaptConfig& config,
                           const EvalCallback& on_eval) {
  config.validate();
  infer_spec(theta);
  AdaptResult result{theta, {}};
  if (config.steps == 0) {
    if (on_eval) on_eval(0, theta);
    return result;
  }

  const auto dtype = theta.entries().front().second.scalar_type();
  const StyleGrams grams = perceptual.style_grams(style.to(dtype));
  AdamOptions opts;
  opts.lr = config.step_size;
  AdamState state = AdamState::zeros_like(theta);
  ParamSet params = theta.detached_clone();

  for (std::int64_t step = 0; step < config.steps; ++step) {
    if (on_eval && config.eval_interval > 0 && step % config.eval_interval == 0) {
      on_eval(step, params);
    }
    auto batch = content.next();
    if (!batch) throw DataError("content source exhausted at step " + std::to_string(step));
    auto x = batch->to(dtype);
    const ParamSet leaves = params.as_leaves();
    auto terms = perceptual.terms(x, grams, forward_batch(leaves, x));
    auto loss = terms.total.mean();
    result.trace.push_back(record(step, terms, perceptual.config()));
    if (!std::isfinite(result.trace.back().total)) {
      throw DivergenceError(step, "adaptation loss is non-finite");
    }
    const auto leaf_tensors = leaves.tensors();
    auto grads = torch::autograd::grad({loss}, leaf_tensors);
    params = adam_step(params, theta.rebuild(grads), state, opts);
  }
  if (on_eval) on_eval(config.steps, params);
  result.params = std::move(params);
  return result;
}

ImageOptimizationResult optimize_image(const ImageTensor& init, const ImageTensor& i_c,
                                       const StyleGrams& style_grams,
                                       const PerceptualLoss& perceptual, std::int64_t steps,
                                       double step_size) {
  if (!init.data().sizes().equals(i_c.data().sizes())) {
    throw DimensionError("initial image and content image differ in shape");
  }
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (!(step_size > 0.0)) throw ConfigError("step size must be > 0");

  const auto content = i_c.batched().to(init.dtype());
  auto evaluate = [&](const torch::Tensor& image, std::int64_t step, bool with_grad) {
    auto x = image.unsqueeze(0).detach().clone().set_requires_grad(with_grad);
    auto terms = perceptual.terms(content, style_grams, x);
    LossRecord r = record(step, terms, perceptual.config());
    if (!std::isfinite(r.total)) throw DivergenceError(step, "image loss is non-finite");
    torch::Tensor grad;
    if (with_grad) grad = torch::autograd::grad({terms.total.mean()}, {x})[0].squeeze(0);
    return std::make_pair(r, grad);
  };

  ImageOptimizationResult result{init, {}};
  ParamSet pixels;
  pixels.add("image", init.data().clone());
  AdamOptions opts;
  opts.lr = step_size;
  AdamState state = AdamState::zeros_like(pixels);

  for (std::int64_t step = 0; step < steps; ++step) {
    auto [r, grad] = evaluate(pixels.at("image"), step, true);
    result.trace.push_back(r);
    ParamSet g;
    g.add("image", grad);
    auto updated = adam_step(pixels, g, state, opts);
    pixels = updated.with("image", updated.at("image").clamp(0.0, 1.0));
  }
  {
    torch::NoGradGuard no_grad;
    result.trace.push_back(evaluate(pixels.at("image"), steps, false).first);
  }
  result.image = ImageTensor(pixels.at("image"));
  return result;
}

ImageTensor initial_image(ImageInit mode, const ImageTensor& i_c, const ParamSet* theta) {
  if (mode == ImageInit::content) return i_c;
  if (theta == nullptr) throw ParameterError("style-neutral initialization needs parameters");
  return stylize(*theta, i_c).to(i_c.dtype());
}

InterpolationWeights::InterpolationWeights(std::vector<double> weights)
    : weights_(std::move(weights)) {
  if (weights_.empty()) throw WeightError("interpolation needs at least one weight");
  double sum = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw WeightError("interpolation weights must be finite and >= 0");
    }
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    std::ostringstream os;
    os << "interpolation weights sum to " << std::setprecision(12) << sum << ", not 1";
    throw WeightError(os.str());
  }
}

ParamSet interpolate(std::span<const ParamSet> param_sets, const InterpolationWeights& weights) {
  const auto& w = weights.values();
  if (param_sets.size() != w.size()) {
    throw WeightError(std::to_string(param_sets.size()) + " parameter sets but " +
                      std::to_string(w.size()) + " weights");
  }
  for (const auto& p : param_sets) require_same_schema(param_sets.front(), p, "interpolate");

  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> out;
  const auto& first = param_sets.front();
  for (std::size_t e = 0; e < first.size(); ++e) {
    torch::Tensor acc = first.entries()[e].second.detach() * w[0];
    for (std::size_t i = 1; i < param_sets.size(); ++i) {
      acc = acc + param_sets[i].entries()[e].second.detach() * w[i];
    }
    out.push_back(std::move(acc));
  }
  return first.rebuild(std::move(out));
}

ImageTensor stylize(const ParamSet& params, const ImageTensor& image) {
  const auto h = image.height();
  const auto w = image.width();
  if (h < 16 || w < 16) {
    throw DimensionError("stylize needs images of at least 16x16, got " + std::to_string(h) +
                         "x" + std::to_string(w));
  }
  const auto f = NetworkSpec::kDownsampleFactor;
  const auto pad_h = (f - h % f) % f;
  const auto pad_w = (f - w % f) % f;
  if (pad_h == 0 && pad_w == 0) return forward(params, image);

  torch::NoGradGuard no_grad;
  const auto dtype = params.entries().front().second.scalar_type();
  // Extra rows/columns go on the bottom/right so the crop is a plain narrow.
  auto padded = torch::reflection_pad2d(image.batched().to(dtype), {0, pad_w, 0, pad_h});
  auto out = forward_batch(params, padded).squeeze(0).narrow(1, 0, h).narrow(2, 0, w);
  return ImageTensor(out.contiguous());
}

std::int64_t stylize_video(const ParamSet& params, const FrameSource& source,
                           const FrameSink& sink) {
  std::int64_t count = 0;
  std::int64_t h = -1, w = -1;
  while (auto frame = source()) {
    if (count == 0) {
      h = frame->height();
      w = frame->width();
    } else if (frame->height() != h || frame->width() != w) {
      throw DimensionError("frame " + std::to_string(count) + " is " +
                           std::to_string(frame->height()) + "x" + std::to_string(frame->width()) +
                           ", earlier frames are " + std::to_string(h) + "x" + std::to_string(w));
    }
    sink(count, stylize(params, *frame));
    ++count;
  }
  return count;
}

}  // namespace metastyle

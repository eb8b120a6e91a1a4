#include "metastyle/meta_train.hpp"

#include "metastyle/error.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

namespace metastyle {

namespace {

std::vector<torch::Tensor> zeros_for_missing(const std::vector<torch::Tensor>& grads,
                                             const std::vector<torch::Tensor>& like) {
  std::vector<torch::Tensor> out(grads.size());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    out[i] = grads[i].defined() ? grads[i] : torch::zeros_like(like[i].detach());
  }
  return out;
}

nlohmann::ordered_json perceptual_json(const PerceptualConfig& c) {
  std::vector<std::string> style;
  for (auto id : c.style_layers) style.emplace_back(to_string(id));
  return {{"alpha", c.alpha},
          {"beta", c.beta},
          {"content_layer", std::string(to_string(c.content_layer))},
          {"style_layers", style},
          {"channel_mean", c.channel_mean},
          {"channel_std", c.channel_std}};
}

}  // namespace

std::string_view to_string(MetaGradientMode mode) {
  return mode == MetaGradientMode::full ? "full" : "first_order";
}

MetaGradientMode parse_meta_gradient_mode(std::string_view text) {
  if (text == "full") return MetaGradientMode::full;
  if (text == "first_order") return MetaGradientMode::first_order;
  throw ConfigError("unknown meta-gradient mode '" + std::string(text) +
                    "' (expected full or first_order)");
}

void MetaTrainConfig::validate() const {
  if (!(delta >= 0.0) || !std::isfinite(delta)) throw ConfigError("delta must be finite and >= 0");
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError("eta must be finite and >= 0");
  if (T < 0) throw ConfigError("T must be >= 0");
  if (style_batch < 1) throw ConfigError("style_batch must be >= 1");
  if (content_batch < 1) throw ConfigError("content_batch must be >= 1");
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (!(clip_grad_norm >= 0.0)) throw ConfigError("clip_grad_norm must be >= 0");
  if (image_size < 32 || image_size % NetworkSpec::kDownsampleFactor != 0) {
    throw ConfigError("image_size must be >= 32 and divisible by 4");
  }
  if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval must be >= 0");
}

nlohmann::ordered_json MetaTrainConfig::to_json() const {
  return {{"delta", delta},
          {"eta", eta},
          {"T", T},
          {"style_batch", style_batch},
          {"content_batch", content_batch},
          {"iterations", iterations},
          {"meta_gradient_mode", std::string(to_string(meta_gradient_mode))},
          {"outer_optimizer", outer_optimizer == OuterOptimizer::adam ? "adam" : "sgd"},
          {"seed", seed},
          {"clip_grad_norm", clip_grad_norm},
          {"image_size", image_size},
          {"checkpoint_interval", checkpoint_interval}};
}

std::string format_report_line(const MetaStepReport& report, double wall_ms) {
  std::ostringstream os;
  os << std::setprecision(9) << report.iteration << '\t' << report.outer_loss << '\t';
  for (std::size_t i = 0; i < report.per_style_inner_losses.size(); ++i) {
    if (i) os << ',';
    os << report.per_style_inner_losses[i];
  }
  os << '\t' << report.grad_norm << '\t' << std::setprecision(6) << wall_ms;
  return os.str();
}

// ---------------------------------------------------------------------------
// Batch sources
// ---------------------------------------------------------------------------

FixedBatchSource::FixedBatchSource(std::vector<torch::Tensor> batches, bool cycle)
    : batches_(std::move(batches)), cycle_(cycle) {}

std::optional<torch::Tensor> FixedBatchSource::next() {
  if (batches_.empty()) return std::nullopt;
  if (pos_ >= batches_.size()) {
    if (!cycle_) return std::nullopt;
    pos_ = 0;
  }
  return batches_[pos_++];
}

DatasetBatchSource::DatasetBatchSource(ImageCache& images, std::size_t batch, Rng rng)
    : images_(&images), batch_(batch), rng_(std::move(rng)) {}

std::optional<torch::Tensor> DatasetBatchSource::next() {
  std::vector<ImageTensor> picked;
  for (auto i : sample_indices(images_->handle(), batch_, rng_)) picked.push_back(images_->get(i));
  return stack_images(picked);
}

// ---------------------------------------------------------------------------
// Bilevel pieces
// ---------------------------------------------------------------------------

InnerResult inner_adapt(const ParamSet& theta, const Objective& objective, BatchSource& train,
                        double delta, std::int64_t T, MetaGradientMode mode) {
  if (T < 0) throw ConfigError("inner step count must be >= 0");
  InnerResult result{theta, {}};
  if (T == 0) return result;

  const bool full = mode == MetaGradientMode::full;
  std::vector<torch::Tensor> w = theta.tensors();
  for (auto& t : w) {
    // Tensors already tracking theta keep their history in full mode; anything
    // else becomes a fresh leaf so the inner gradient exists.
    if (!full || !t.requires_grad()) t = t.detach().set_requires_grad(true);
  }

  for (std::int64_t step = 0; step < T; ++step) {
    auto batch = train.next();
    if (!batch) {
      throw DataError("training batch source exhausted after " + std::to_string(step) + " of " +
                      std::to_string(T) + " inner steps");
    }
    auto loss = objective(theta.rebuild(w), *batch);
    result.losses.push_back(loss.item<double>());
    auto grads = zeros_for_missing(
        torch::autograd::grad({loss}, w, {}, /*retain_graph=*/full, /*create_graph=*/full,
                              /*allow_unused=*/true),
        w);
    for (std::size_t i = 0; i < w.size(); ++i) {
      auto next = w[i] - delta * grads[i];
      w[i] = full ? next : next.detach().set_requires_grad(true);
    }
  }
  if (!full) {
    for (auto& t : w) t = t.detach();
  }
  result.adapted = theta.rebuild(std::move(w));
  return result;
}

torch::Tensor outer_loss_tensor(std::span<const AdaptedStyle> adapted, BatchSource& val) {
  if (adapted.empty()) throw DataError("outer loss needs at least one adapted style");
  torch::Tensor sum;
  for (const auto& a : adapted) {
    auto batch = val.next();
    if (!batch) throw DataError("validation batch source is empty");
    auto e = (*a.objective)(a.params, *batch);
    sum = sum.defined() ? sum + e : e;
  }
  return sum / static_cast<double>(adapted.size());
}

double outer_loss(std::span<const AdaptedStyle> adapted, BatchSource& val) {
  torch::NoGradGuard no_grad;
  return outer_loss_tensor(adapted, val).item<double>();
}

MetaStepResult meta_step(const ParamSet& theta, std::span<const Objective> styles,
                         BatchSource& train, BatchSource& val, const MetaTrainConfig& config,
                         AdamState& optimizer_state, std::int64_t iteration) {
  config.validate();
  if (styles.size() != static_cast<std::size_t>(config.style_batch)) {
    throw ConfigError("meta_step got " + std::to_string(styles.size()) +
                      " styles, configured style_batch is " + std::to_string(config.style_batch));
  }
  const bool full = config.meta_gradient_mode == MetaGradientMode::full;
  const double inv_styles = 1.0 / static_cast<double>(styles.size());
  const ParamSet theta_leaf = full ? theta.as_leaves() : theta.detached_clone();

  MetaStepReport report;
  report.iteration = iteration;
  std::vector<torch::Tensor> accum;
  for (const auto& t : theta.tensors()) accum.push_back(torch::zeros_like(t.detach()));

  for (const auto& objective : styles) {
    auto inner = inner_adapt(theta_leaf, objective, train, config.delta, config.T,
                             config.meta_gradient_mode);
    report.per_style_inner_losses.push_back(
        inner.losses.empty() ? std::numeric_limits<double>::quiet_NaN() : inner.losses.back());
    for (double l : inner.losses) {
      if (!std::isfinite(l)) throw DivergenceError(iteration, "inner loss is non-finite");
    }

    // Full mode differentiates through the inner dynamics back to theta; first
    // order takes the gradient at the adapted parameters and applies it to theta.
    const ParamSet wrt = full ? theta_leaf : inner.adapted.as_leaves();
    const ParamSet& evaluated = full ? inner.adapted : wrt;

    auto batch = val.next();
    if (!batch) throw DataError("validation batch source exhausted");
    auto e = objective(evaluated, *batch) * inv_styles;
    const double e_value = e.item<double>();
    if (!std::isfinite(e_value)) throw DivergenceError(iteration, "outer loss is non-finite");
    report.outer_loss += e_value;

    const auto wrt_tensors = wrt.tensors();
    auto grads = zeros_for_missing(
        torch::autograd::grad({e}, wrt_tensors, {}, /*retain_graph=*/false,
                              /*create_graph=*/false, /*allow_unused=*/true),
        wrt_tensors);
    for (std::size_t i = 0; i < accum.size(); ++i) accum[i] += grads[i].detach();
  }

  ParamSet grad = theta.rebuild(std::move(accum));
  if (!grad.all_finite()) throw DivergenceError(iteration, "meta-gradient is non-finite");
  report.grad_norm = global_norm(grad);

  if (config.clip_grad_norm > 0.0 && report.grad_norm > config.clip_grad_norm) {
    const double scale = config.clip_grad_norm / report.grad_norm;
    std::vector<torch::Tensor> scaled;
    for (const auto& t : grad.tensors()) scaled.push_back(t * scale);
    grad = grad.rebuild(std::move(scaled));
  }

  MetaStepResult result;
  if (config.outer_optimizer == OuterOptimizer::adam) {
    AdamOptions opts;
    opts.lr = config.eta;
    result.theta = adam_step(theta.detached_clone(), grad, optimizer_state, opts);
  } else {
    torch::NoGradGuard no_grad;
    result.theta = sgd_step(theta.detached_clone(), grad, config.eta);
  }
  result.report = std::move(report);
  result.meta_gradient = std::move(grad);
  return result;
}

Objective make_style_objective(const PerceptualLoss& loss, StyleGrams grams) {
  return [&loss, grams = std::move(grams)](const ParamSet& params, const torch::Tensor& batch) {
    auto x = batch.to(params.entries().front().second.scalar_type());
    return loss.mean_total(x, grams, forward_batch(params, x));
  };
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

ParamSet meta_train(const MetaTrainConfig& config, const MetaTrainData& data,
                    const PerceptualLoss& perceptual, const NetworkSpec& spec,
                    const MetaTrainHooks& hooks) {
  config.validate();
  spec.validate();
  if (data.content_train.size() == 0) throw DataError("content training set is empty");
  if (data.content_val.size() == 0) throw DataError("content validation set is empty");
  if (data.styles.size() == 0) throw DataError("style set is empty");
  {
    std::set<std::string> train_paths;
    for (const auto& p : data.content_train.index) train_paths.insert(p.generic_string());
    for (const auto& p : data.content_val.index) {
      if (train_paths.contains(p.generic_string())) {
        throw DataError("content train and validation sets share '" + p.string() + "'");
      }
    }
  }
  for (const auto* set : {&data.content_train, &data.content_val}) {
    if (static_cast<std::size_t>(config.content_batch) > set->size()) {
      throw DataError("content_batch " + std::to_string(config.content_batch) + " exceeds the " +
                      std::to_string(set->size()) + " images of '" + set->root.string() + "'");
    }
  }
  if (static_cast<std::size_t>(config.style_batch) > data.styles.size()) {
    throw DataError("style_batch " + std::to_string(config.style_batch) + " exceeds the " +
                    std::to_string(data.styles.size()) + " available styles");
  }

  const auto batch = static_cast<std::size_t>(config.content_batch);
  ImageCache train_images(data.content_train, config.image_size);
  ImageCache val_images(data.content_val, config.image_size);
  ImageCache style_images(data.styles, config.image_size);
  DatasetBatchSource train(train_images, batch, Rng(config.seed, 2));
  DatasetBatchSource val(val_images, batch, Rng(config.seed, 3));
  Rng style_rng(config.seed, 1);
  std::map<std::size_t, StyleGrams> gram_cache;

  nlohmann::ordered_json snapshot = {
      {"meta_train", config.to_json()},
      {"network",
       {{"base_channels", spec.base_channels},
        {"num_residual_blocks", spec.num_residual_blocks}}},
      {"perceptual", perceptual_json(perceptual.config())},
      {"data",
       {{"content_train", data.content_train.root.generic_string()},
        {"content_train_size", data.content_train.size()},
        {"content_val", data.content_val.root.generic_string()},
        {"content_val_size", data.content_val.size()},
        {"styles", data.styles.root.generic_string()},
        {"styles_size", data.styles.size()}}}};
  for (const auto& [k, v] : hooks.extra_config.items()) snapshot[k] = v;

  ParamSet theta = init_params(spec, config.seed);
  AdamState adam = AdamState::zeros_like(theta);

  auto emit = [&](std::int64_t iteration) {
    if (!hooks.on_checkpoint) return;
    Checkpoint ckpt;
    ckpt.params = theta.detached_clone();
    ckpt.optimizer_state = adam.to_param_set();
    ckpt.iteration = iteration;
    ckpt.config = snapshot;
    hooks.on_checkpoint(ckpt);
  };
  emit(0);

  for (std::int64_t it = 1; it <= config.iterations; ++it) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<Objective> objectives;
    for (auto s : style_rng.sample_without_replacement(data.styles.size(),
                                                       static_cast<std::size_t>(config.style_batch))) {
      auto cached = gram_cache.find(s);
      if (cached == gram_cache.end()) {
        cached = gram_cache.emplace(s, perceptual.style_grams(style_images.get(s))).first;
      }
      objectives.push_back(make_style_objective(perceptual, cached->second));
    }
    auto step = meta_step(theta, objectives, train, val, config, adam, it);
    theta = std::move(step.theta);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
    if (hooks.on_report) hooks.on_report(step.report, ms);
    const bool periodic = config.checkpoint_interval > 0 && it % config.checkpoint_interval == 0;
    if (periodic || it == config.iterations) emit(it);
  }
  return theta;
}

}  // namespace metastyle

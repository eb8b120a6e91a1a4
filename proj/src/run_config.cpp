#include "metastyle/run_config.hpp"

#include "metastyle/error.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

namespace metastyle {

namespace {

constexpr std::pair<Command, std::string_view> kCommands[] = {
    {Command::meta_train, "meta-train"}, {Command::adapt, "adapt"},
    {Command::stylize, "stylize"},       {Command::optimize, "optimize"},
    {Command::interpolate, "interpolate"}, {Command::video, "video"},
    {Command::benchmark, "benchmark"}};

template <typename T>
std::string str(const T& v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

void require(bool ok, const std::string& key, const std::string& value,
             const std::string& constraint) {
  if (!ok) throw ValidationError(key, value, constraint);
}

std::vector<double> parse_weights(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("weights", text, "comma-separated real numbers");
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(Command command) {
  for (const auto& [c, name] : kCommands) {
    if (c == command) return name;
  }
  return "?";
}

RunConfig parse_config(const std::vector<std::string>& args) {
  RunConfig rc;
  CLI::App app{"Meta-learned fast style transfer", "metastyle"};
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_config("--config", "", "Key-value config file (key = value per line)");

  std::string command;
  std::string meta_grad = "full";
  std::string init = "neutral";
  std::string weights;
  std::string content_layer = "relu2_2";
  std::vector<std::string> style_layers = {"relu1_2", "relu2_2", "relu3_3", "relu4_3"};
  double step_size = std::nan("");

  app.add_option("command", command,
                 "meta-train | adapt | stylize | optimize | interpolate | video | benchmark")
      ->required();
  app.add_option("--content-dir", rc.content_dir, "Content image directory");
  app.add_option("--val-dir", rc.val_dir, "Content validation directory");
  app.add_option("--style-dir", rc.style_dir, "Style image directory");
  app.add_option("--style", rc.style, "Style image");
  app.add_option("--checkpoint", rc.checkpoints, "Checkpoint path (repeat for interpolate)");
  app.add_option("--vgg", rc.vgg, "Feature-extractor weights archive");
  app.add_option("--input", rc.input, "Input image (stylize/optimize) or frame directory (video)");
  app.add_option("--out", rc.out, "Output path");
  app.add_option("--iterations", rc.meta.iterations, "Meta-training iterations");
  app.add_option("--steps", rc.adapt.steps, "Adaptation / image-optimization steps");
  app.add_option("--lr", step_size, "Step size for adapt (default 1e-3) or optimize (1e-2)");
  app.add_option("--delta", rc.meta.delta, "Inner step size");
  app.add_option("--eta", rc.meta.eta, "Outer step size");
  app.add_option("--T", rc.meta.T, "Inner steps per style");
  app.add_option("--style-batch", rc.meta.style_batch, "Styles per meta-iteration");
  app.add_option("--content-batch", rc.meta.content_batch, "Content images per batch");
  app.add_option("--alpha", rc.perceptual.alpha, "Content weight");
  app.add_option("--beta", rc.perceptual.beta, "Style weight");
  app.add_option("--content-layer", content_layer, "Content loss layer");
  app.add_option("--style-layers", style_layers, "Style loss layers");
  app.add_option("--meta-grad", meta_grad, "full | first_order");
  app.add_option("--clip-grad-norm", rc.meta.clip_grad_norm, "Meta-gradient norm cap (0: off)");
  app.add_option("--checkpoint-interval", rc.meta.checkpoint_interval,
                 "Meta-training checkpoint interval (0: first and last only)");
  app.add_option("--seed", rc.seed, "Random seed");
  app.add_option("--size", rc.size, "Working image side length");
  app.add_option("--weights", weights, "Comma-separated interpolation weights");
  app.add_option("--init", init, "Image optimization start: content | neutral");
  app.add_option("--base-channels", rc.network.base_channels, "Transform network width");
  app.add_option("--residual-blocks", rc.network.num_residual_blocks, "Residual block count");
  app.add_option("--runs", rc.benchmark_runs, "Timed forward passes per resolution");
  app.add_option("--threads", rc.threads, "Intra-op threads (0: default)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    throw;
  }

  const auto it = std::find_if(std::begin(kCommands), std::end(kCommands),
                               [&](const auto& c) { return c.second == command; });
  require(it != std::end(kCommands), "command", command,
          "one of meta-train, adapt, stylize, optimize, interpolate, video, benchmark");
  rc.command = it->first;

  require(meta_grad == "full" || meta_grad == "first_order", "meta-grad", meta_grad,
          "full or first_order");
  rc.meta.meta_gradient_mode = parse_meta_gradient_mode(meta_grad);
  require(init == "content" || init == "neutral", "init", init, "content or neutral");
  rc.init = init == "content" ? ImageInit::content : ImageInit::style_neutral;
  if (!weights.empty()) rc.weights = parse_weights(weights);

  try {
    rc.perceptual.content_layer = parse_layer_id(content_layer);
  } catch (const ConfigError&) {
    throw ValidationError("content-layer", content_layer, "one of relu1_2, relu2_2, relu3_3, relu4_3");
  }
  rc.perceptual.style_layers.clear();
  for (const auto& l : style_layers) {
    try {
      rc.perceptual.style_layers.push_back(parse_layer_id(l));
    } catch (const ConfigError&) {
      throw ValidationError("style-layers", l, "one of relu1_2, relu2_2, relu3_3, relu4_3");
    }
  }

  if (!std::isnan(step_size)) {
    require(step_size > 0.0 && std::isfinite(step_size), "lr", str(step_size), "> 0");
    rc.adapt.step_size = step_size;
    rc.optimize_step_size = step_size;
  }

  const auto& m = rc.meta;
  require(m.delta > 0.0 && std::isfinite(m.delta), "delta", str(m.delta), "> 0");
  require(m.eta > 0.0 && std::isfinite(m.eta), "eta", str(m.eta), "> 0");
  require(m.T >= 0, "T", str(m.T), ">= 0");
  require(m.style_batch >= 1, "style-batch", str(m.style_batch), ">= 1");
  require(m.content_batch >= 1, "content-batch", str(m.content_batch), ">= 1");
  require(m.iterations >= 0, "iterations", str(m.iterations), ">= 0");
  require(m.clip_grad_norm >= 0.0, "clip-grad-norm", str(m.clip_grad_norm), ">= 0");
  require(m.checkpoint_interval >= 0, "checkpoint-interval", str(m.checkpoint_interval), ">= 0");
  require(rc.adapt.steps >= 0, "steps", str(rc.adapt.steps), ">= 0");
  require(rc.perceptual.alpha >= 0.0 && std::isfinite(rc.perceptual.alpha), "alpha",
          str(rc.perceptual.alpha), ">= 0");
  require(rc.perceptual.beta >= 0.0 && std::isfinite(rc.perceptual.beta), "beta",
          str(rc.perceptual.beta), ">= 0");
  require(!rc.perceptual.style_layers.empty(), "style-layers", "", "nonempty");
  require(rc.size >= 32 && rc.size % NetworkSpec::kDownsampleFactor == 0, "size", str(rc.size),
          ">= 32 and divisible by 4");
  require(rc.network.base_channels >= 1, "base-channels", str(rc.network.base_channels), ">= 1");
  require(rc.network.num_residual_blocks >= 1, "residual-blocks",
          str(rc.network.num_residual_blocks), ">= 1");
  require(rc.benchmark_runs >= 50, "runs", str(rc.benchmark_runs), ">= 50");
  require(rc.threads >= 0, "threads", str(rc.threads), ">= 0");
  if (!rc.weights.empty()) {
    try {
      InterpolationWeights check(rc.weights);
    } catch (const WeightError&) {
      throw ValidationError("weights", weights, "nonnegative values summing to 1");
    }
  }

  rc.adapt.content_batch = m.content_batch;
  rc.meta.seed = rc.seed;
  rc.meta.image_size = rc.size;
  return rc;
}

ParseOutcome parse_command_line(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  ParseOutcome outcome;
  try {
    outcome.config = parse_config(args);
  } catch (const CLI::CallForHelp&) {
    outcome.exit_code = 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    outcome.exit_code = 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    outcome.exit_code = 2;
  }
  return outcome;
}

}  // namespace metastyle

#include "metastyle/run_config.hpp"

#include "metastyle/error.hpp"

#include <torch/torch.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace metastyle {

namespace fs = std::filesystem;

namespace {

void need(bool ok, const std::string& key, const RunConfig& rc) {
  if (!ok) throw ValidationError(key, "<unset>", std::string("required by ") +
                                                   std::string(to_string(rc.command)));
}

std::string vgg_path(const RunConfig& rc) {
  if (!rc.vgg.empty()) return rc.vgg;
  if (const char* env = std::getenv("METASTYLE_VGG16"); env != nullptr && *env != '\0') return env;
  return {};
}

// Everything a command needs is checked here, before any file is read.
void check_inputs(const RunConfig& rc) {
  rc.perceptual.validate();
  rc.network.validate();
  switch (rc.command) {
    case Command::meta_train:
      need(!rc.content_dir.empty(), "content-dir", rc);
      need(!rc.style_dir.empty(), "style-dir", rc);
      need(!rc.out.empty(), "out", rc);
      need(!vgg_path(rc).empty(), "vgg", rc);
      rc.meta.validate();
      break;
    case Command::adapt:
      need(rc.checkpoints.size() == 1, "checkpoint", rc);
      need(!rc.style.empty(), "style", rc);
      need(!rc.content_dir.empty(), "content-dir", rc);
      need(!rc.out.empty(), "out", rc);
      need(!vgg_path(rc).empty(), "vgg", rc);
      rc.adapt.validate();
      break;
    case Command::stylize:
    case Command::video:
      need(rc.checkpoints.size() == 1, "checkpoint", rc);
      need(!rc.input.empty(), "input", rc);
      need(!rc.out.empty(), "out", rc);
      break;
    case Command::optimize:
      need(!rc.input.empty(), "input", rc);
      need(!rc.style.empty(), "style", rc);
      need(!rc.out.empty(), "out", rc);
      need(!vgg_path(rc).empty(), "vgg", rc);
      if (rc.init == ImageInit::style_neutral) need(rc.checkpoints.size() == 1, "checkpoint", rc);
      break;
    case Command::interpolate:
      need(!rc.checkpoints.empty(), "checkpoint", rc);
      need(!rc.weights.empty(), "weights", rc);
      need(!rc.out.empty(), "out", rc);
      if (rc.weights.size() != rc.checkpoints.size()) {
        throw ValidationError("weights", std::to_string(rc.weights.size()) + " values",
                              "one weight per --checkpoint (" +
                                  std::to_string(rc.checkpoints.size()) + ")");
      }
      break;
    case Command::benchmark:
      need(rc.checkpoints.size() == 1, "checkpoint", rc);
      break;
  }
}

PerceptualLoss make_perceptual(const RunConfig& rc) {
  return PerceptualLoss(rc.perceptual, load_feature_extractor(vgg_path(rc), rc.perceptual));
}

ParamSet load_params(const std::string& path) {
  auto ckpt = load_checkpoint(path);
  infer_spec(ckpt.params);
  return std::move(ckpt.params);
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::string trace_path(const std::string& out) { return out + ".trace.txt"; }

int cmd_meta_train(const RunConfig& rc) {
  MetaTrainData data;
  MetaTrainHooks hooks;
  const auto content = open_dataset(rc.content_dir, SplitTag::content_train);
  if (rc.val_dir.empty()) {
    std::tie(data.content_train, data.content_val) = split_content(content, rc.seed);
    hooks.extra_config["content_split"] = {
        {"source", "seeded_split"}, {"seed", rc.seed}, {"val_fraction", 0.1}};
  } else {
    data.content_train = content;
    data.content_val = open_dataset(rc.val_dir, SplitTag::content_val);
    hooks.extra_config["content_split"] = {{"source", "directory"}};
  }
  data.styles = open_dataset(rc.style_dir, SplitTag::style);
  const auto perceptual = make_perceptual(rc);

  const fs::path out(rc.out);
  fs::create_directories(out);
  std::ofstream metrics(out / "metrics.tsv", std::ios::trunc);
  if (!metrics) throw IoError("cannot write '" + (out / "metrics.tsv").string() + "'");
  metrics << "iteration\touter_loss\tinner_losses\tgrad_norm\twall_ms\n";

  hooks.on_checkpoint = [&](const Checkpoint& ckpt) {
    std::ostringstream name;
    name << "checkpoint_" << std::setw(6) << std::setfill('0') << ckpt.iteration << ".msck";
    save_checkpoint(ckpt, out / name.str());
  };
  hooks.on_report = [&](const MetaStepReport& report, double ms) {
    const auto line = format_report_line(report, ms);
    metrics << line << '\n' << std::flush;
    std::cerr << "meta-train " << line << '\n';
  };
  meta_train(rc.meta, data, perceptual, rc.network, hooks);
  return 0;
}

int cmd_adapt(const RunConfig& rc) {
  const auto theta = load_params(rc.checkpoints.front());
  const auto style = load_image(rc.style, rc.size);
  ImageCache content(open_dataset(rc.content_dir, SplitTag::content_train), rc.size);
  DatasetBatchSource batches(content, static_cast<std::size_t>(rc.adapt.content_batch),
                             Rng(rc.seed, 4));
  const auto perceptual = make_perceptual(rc);
  auto result = adapt_to_style(theta, style, batches, perceptual, rc.adapt);

  Checkpoint ckpt;
  ckpt.params = std::move(result.params);
  ckpt.iteration = rc.adapt.steps;
  ckpt.config = {{"adapt",
                  {{"steps", rc.adapt.steps},
                   {"step_size", rc.adapt.step_size},
                   {"content_batch", rc.adapt.content_batch},
                   {"seed", rc.seed},
                   {"size", rc.size}}},
                 {"source_checkpoint", rc.checkpoints.front()},
                 {"style", rc.style},
                 {"content_dir", rc.content_dir}};
  ensure_parent(rc.out);
  save_checkpoint(ckpt, rc.out);
  write_trace(result.trace, trace_path(rc.out));
  return 0;
}

int cmd_stylize(const RunConfig& rc) {
  const auto params = load_params(rc.checkpoints.front());
  const auto image = decode_image(rc.input);
  ensure_parent(rc.out);
  save_image(stylize(params, image), rc.out);
  return 0;
}

int cmd_optimize(const RunConfig& rc) {
  const auto content = load_image(rc.input, rc.size);
  const auto style = load_image(rc.style, rc.size);
  std::optional<ParamSet> theta;
  if (rc.init == ImageInit::style_neutral) theta = load_params(rc.checkpoints.front());
  const auto perceptual = make_perceptual(rc);
  const auto init = initial_image(rc.init, content, theta ? &*theta : nullptr);
  auto result = optimize_image(init, content, perceptual.style_grams(style), perceptual,
                               rc.adapt.steps, rc.optimize_step_size);
  ensure_parent(rc.out);
  save_image(result.image, rc.out);
  write_trace(result.trace, trace_path(rc.out));
  return 0;
}

int cmd_interpolate(const RunConfig& rc) {
  const InterpolationWeights weights(rc.weights);
  std::vector<ParamSet> sets;
  for (const auto& path : rc.checkpoints) sets.push_back(load_params(path));
  Checkpoint ckpt;
  ckpt.params = interpolate(sets, weights);
  ckpt.config = {{"interpolate", {{"sources", rc.checkpoints}, {"weights", rc.weights}}}};
  ensure_parent(rc.out);
  save_checkpoint(ckpt, rc.out);
  return 0;
}

int cmd_video(const RunConfig& rc) {
  const auto params = load_params(rc.checkpoints.front());
  fs::create_directories(rc.out);
  const auto frames =
      stylize_video(params, directory_frame_source(rc.input), directory_frame_sink(rc.out));
  std::cerr << "video: stylized " << frames << " frames\n";
  return 0;
}

int cmd_benchmark(const RunConfig& rc) {
  const auto params = load_params(rc.checkpoints.front());
  std::cout << format_benchmark(benchmark_forward(params, {256, 512}, rc.benchmark_runs));
  return 0;
}

}  // namespace

int run(const RunConfig& rc) {
  try {
    check_inputs(rc);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: invalid configuration: " << e.what() << '\n';
    return 2;
  }
  if (rc.threads > 0) torch::set_num_threads(rc.threads);

  try {
    switch (rc.command) {
      case Command::meta_train: return cmd_meta_train(rc);
      case Command::adapt: return cmd_adapt(rc);
      case Command::stylize: return cmd_stylize(rc);
      case Command::optimize: return cmd_optimize(rc);
      case Command::interpolate: return cmd_interpolate(rc);
      case Command::video: return cmd_video(rc);
      case Command::benchmark: return cmd_benchmark(rc);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

std::vector<BenchmarkRow> benchmark_forward(const ParamSet& params,
                                            const std::vector<std::int64_t>& resolutions,
                                            std::int64_t runs, std::int64_t warmup) {
  if (runs < 1) throw ConfigError("benchmark needs at least one timed run");
  torch::NoGradGuard no_grad;
  const auto dtype = params.entries().front().second.scalar_type();
  std::vector<BenchmarkRow> rows;
  for (auto r : resolutions) {
    // A smooth deterministic test pattern; content does not affect timing.
    auto ramp = torch::linspace(0.0, 1.0, r, torch::TensorOptions().dtype(dtype));
    auto image = torch::stack({ramp.unsqueeze(0).expand({r, r}), ramp.unsqueeze(1).expand({r, r}),
                               torch::full({r, r}, 0.5, ramp.options())})
                     .unsqueeze(0)
                     .contiguous();
    for (std::int64_t i = 0; i < warmup; ++i) forward_batch(params, image);
    const auto start = std::chrono::steady_clock::now();
    for (std::int64_t i = 0; i < runs; ++i) forward_batch(params, image);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
    rows.push_back({r, ms / static_cast<double>(runs)});
  }
  return rows;
}

std::string format_benchmark(const std::vector<BenchmarkRow>& rows) {
  std::ostringstream os;
  os << "resolution\tms_per_image\n" << std::fixed << std::setprecision(3);
  for (const auto& row : rows) os << row.resolution << '\t' << row.ms_per_image << '\n';
  return os.str();
}

}  // namespace metastyle

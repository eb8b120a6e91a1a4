#include "metastyle/error.hpp"
#include "metastyle/run_config.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <fstream>
#include <iostream>
#include <sstream>

using namespace metastyle;
namespace ts = testsupport;
namespace fs = std::filesystem;

namespace {

// Captures one standard stream for the lifetime of the object.
class Capture {
 public:
  explicit Capture(std::ostream& stream) : stream_(stream), old_(stream.rdbuf(buf_.rdbuf())) {}
  ~Capture() { stream_.rdbuf(old_); }
  std::string text() const { return buf_.str(); }

 private:
  std::ostream& stream_;
  std::ostringstream buf_;
  std::streambuf* old_;
};

int run_args(std::vector<std::string> args) {
  std::vector<const char*> argv{"metastyle"};
  for (const auto& a : args) argv.push_back(a.c_str());
  auto parsed = parse_command_line(static_cast<int>(argv.size()), argv.data());
  if (!parsed.config) return parsed.exit_code;
  return run(*parsed.config);
}

const fs::path& fixture() {
  static const fs::path dir = [] {
    auto d = ts::scratch_dir("cli");
    write_tensor_archive(random_vgg16_weights(0), d / "vgg.msta");
    ts::write_images(d / "content", 6, [](std::int64_t i) { return ts::content_image(i, 36, 40); });
    ts::write_images(d / "val", 2, [](std::int64_t i) { return ts::content_image(50 + i, 36, 40); });
    ts::write_images(d / "style", 2, [](std::int64_t i) { return ts::style_image(i, 32, 32); });
    Checkpoint c;
    c.params = init_params(NetworkSpec{4, 1}, 0);
    save_checkpoint(c, d / "a.msck");
    c.params = init_params(NetworkSpec{4, 1}, 1);
    save_checkpoint(c, d / "b.msck");
    save_image(ts::content_image(7, 42, 50), d / "photo.png");
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("defaults follow the published training setup") {
  auto rc = parse_config({"meta-train"});
  CHECK(rc.command == Command::meta_train);
  CHECK(rc.meta.delta == 1e-4);
  CHECK(rc.meta.eta == 1e-3);
  CHECK(rc.meta.T == 1);
  CHECK(rc.meta.style_batch == 4);
  CHECK(rc.meta.content_batch == 4);
  CHECK(rc.adapt.content_batch == 4);
  CHECK(rc.perceptual.alpha == 1.0);
  CHECK(rc.perceptual.beta == 1e5);
  CHECK(rc.meta.meta_gradient_mode == MetaGradientMode::full);
  CHECK(rc.adapt.steps == 200);
  CHECK(rc.adapt.step_size == 1e-3);
  CHECK(rc.optimize_step_size == 1e-2);
  CHECK(rc.size == 256);
}

TEST_CASE("flags override the config file, which overrides defaults") {
  auto dir = ts::scratch_dir("cli_config");
  std::ofstream(dir / "run.toml") << "T = 1\ndelta = 0.002\nmeta-grad = \"first_order\"\n";
  auto from_file = parse_config({"meta-train", "--config", (dir / "run.toml").string()});
  CHECK(from_file.meta.T == 1);
  CHECK(from_file.meta.delta == 0.002);
  CHECK(from_file.meta.meta_gradient_mode == MetaGradientMode::first_order);
  auto flag = parse_config({"meta-train", "--config", (dir / "run.toml").string(), "--T", "3"});
  CHECK(flag.meta.T == 3);
  CHECK(flag.meta.delta == 0.002);

  std::ofstream(dir / "bad.toml") << "T = 1\nunknown_key = 5\n";
  CHECK(run_args({"meta-train", "--config", (dir / "bad.toml").string()}) == 2);
}

TEST_CASE("invalid values are validation errors with exit code 2") {
  try {
    parse_config({"meta-train", "--delta", "-1"});
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(e.key() == "delta");
    CHECK(msg.find("-1") != std::string::npos);
    CHECK(msg.find("> 0") != std::string::npos);
  }
  Capture err(std::cerr);
  CHECK(run_args({"meta-train", "--delta", "-1"}) == 2);
  CHECK(run_args({"meta-train", "--eta", "0"}) == 2);
  CHECK(run_args({"meta-train", "--meta-grad", "second"}) == 2);
  CHECK(run_args({"meta-train", "--size", "30"}) == 2);
  CHECK(run_args({"dance"}) == 2);
  CHECK(run_args({"stylize", "--bogus", "1"}) == 2);
  CHECK(run_args({"interpolate", "--checkpoint", "a", "--weights", "0.5,0.6", "--out", "x"}) == 2);
  CHECK(run_args({"stylize", "--input", "x.png"}) == 2);
  CHECK(err.text().find("delta") != std::string::npos);
}

TEST_CASE("stylize writes the output image") {
  const auto& d = fixture();
  const auto out = d / "out" / "styled.png";
  CHECK(run_args({"stylize", "--checkpoint", (d / "a.msck").string(), "--input",
                  (d / "photo.png").string(), "--out", out.string()}) == 0);
  auto img = decode_image(out);
  CHECK(img.height() == 42);
  CHECK(img.width() == 50);
}

TEST_CASE("adapt with a missing style file fails with exit code 1 naming the path") {
  const auto& d = fixture();
  const auto missing = (d / "no_such_style.png").string();
  Capture err(std::cerr);
  CHECK(run_args({"adapt", "--checkpoint", (d / "a.msck").string(), "--style", missing,
                  "--content-dir", (d / "content").string(), "--vgg", (d / "vgg.msta").string(),
                  "--out", (d / "adapted.msck").string(), "--size", "32"}) == 1);
  CHECK(err.text().find(missing) != std::string::npos);
  CHECK_FALSE(fs::exists(d / "adapted.msck"));
}

TEST_CASE("adapt writes a checkpoint and a loss trace") {
  const auto& d = fixture();
  const auto out = d / "adapted.msck";
  CHECK(run_args({"adapt", "--checkpoint", (d / "a.msck").string(), "--style",
                  (d / "style" / "img_000.png").string(), "--content-dir",
                  (d / "content").string(), "--vgg", (d / "vgg.msta").string(), "--out",
                  out.string(), "--size", "32", "--steps", "3", "--content-batch", "2"}) == 0);
  auto ckpt = load_checkpoint(out);
  CHECK(ckpt.params.same_schema(init_params(NetworkSpec{4, 1}, 0)));
  std::ifstream trace(out.string() + ".trace.txt");
  std::string line;
  int lines = 0;
  while (std::getline(trace, line)) ++lines;
  CHECK(lines == 3);
}

TEST_CASE("meta-train writes checkpoints and metrics") {
  const auto& d = fixture();
  const auto out = d / "meta";
  CHECK(run_args({"meta-train", "--content-dir", (d / "content").string(), "--val-dir",
                  (d / "val").string(), "--style-dir", (d / "style").string(), "--vgg",
                  (d / "vgg.msta").string(), "--out", out.string(), "--iterations", "1",
                  "--size", "32", "--style-batch", "2", "--content-batch", "2",
                  "--base-channels", "4", "--residual-blocks", "1", "--seed", "3"}) == 0);
  CHECK(fs::exists(out / "checkpoint_000000.msck"));
  auto last = load_checkpoint(out / "checkpoint_000001.msck");
  CHECK(last.iteration == 1);
  CHECK(last.config["meta_train"]["seed"] == 3);
  CHECK(last.config["content_split"]["source"] == "directory");
  std::ifstream metrics(out / "metrics.tsv");
  std::string header, row;
  std::getline(metrics, header);
  std::getline(metrics, row);
  CHECK(header == "iteration\touter_loss\tinner_losses\tgrad_norm\twall_ms");
  CHECK(row.rfind("1\t", 0) == 0);
}

TEST_CASE("interpolate at a vertex reproduces the endpoint") {
  const auto& d = fixture();
  const auto out = d / "mix.msck";
  CHECK(run_args({"interpolate", "--checkpoint", (d / "a.msck").string(), "--checkpoint",
                  (d / "b.msck").string(), "--weights", "0,1", "--out", out.string()}) == 0);
  CHECK(load_checkpoint(out).params.bit_equal(load_checkpoint(d / "b.msck").params));
}

TEST_CASE("optimize and video commands") {
  const auto& d = fixture();
  CHECK(run_args({"optimize", "--input", (d / "photo.png").string(), "--style",
                  (d / "style" / "img_001.png").string(), "--checkpoint",
                  (d / "a.msck").string(), "--vgg", (d / "vgg.msta").string(), "--out",
                  (d / "opt.png").string(), "--size", "32", "--steps", "2"}) == 0);
  CHECK(decode_image(d / "opt.png").height() == 32);

  CHECK(run_args({"video", "--checkpoint", (d / "a.msck").string(), "--input",
                  (d / "val").string(), "--out", (d / "frames").string()}) == 0);
  CHECK(fs::exists(d / "frames" / "frame_000001.png"));
}

TEST_CASE("benchmark prints a two-row table") {
  const auto& d = fixture();
  Capture out(std::cout);
  CHECK(run_args({"benchmark", "--checkpoint", (d / "a.msck").string(), "--runs", "50"}) == 0);
  std::istringstream table(out.text());
  std::string header, r256, r512, extra;
  std::getline(table, header);
  std::getline(table, r256);
  std::getline(table, r512);
  CHECK(header == "resolution\tms_per_image");
  CHECK(r256.rfind("256\t", 0) == 0);
  CHECK(r512.rfind("512\t", 0) == 0);
  CHECK_FALSE(std::getline(table, extra));
  CHECK(std::stod(r256.substr(4)) > 0.0);
}

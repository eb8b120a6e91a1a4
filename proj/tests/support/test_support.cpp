#include "test_support.hpp"

#include "metastyle/rng.hpp"

#include <cmath>
#include <map>
#include <numbers>

namespace testsupport {

namespace fs = std::filesystem;
using metastyle::ImageTensor;
using metastyle::Rng;

namespace {

torch::Tensor grid_y(std::int64_t h, std::int64_t w) {
  return torch::linspace(0.0, 1.0, h, torch::kDouble).unsqueeze(1).expand({h, w});
}
torch::Tensor grid_x(std::int64_t h, std::int64_t w) {
  return torch::linspace(0.0, 1.0, w, torch::kDouble).unsqueeze(0).expand({h, w});
}

std::array<double, 3> color(Rng& rng) {
  return {rng.uniform01(), rng.uniform01(), rng.uniform01()};
}

ImageTensor finish(const std::vector<torch::Tensor>& channels) {
  return ImageTensor(torch::stack(channels).clamp(0.0, 1.0).to(torch::kFloat).contiguous());
}

}  // namespace

ImageTensor content_image(std::uint64_t id, std::int64_t h, std::int64_t w) {
  Rng rng(id, 0xc0de);
  const auto y = grid_y(h, w), x = grid_x(h, w);
  const auto top = color(rng), bottom = color(rng);
  std::vector<torch::Tensor> ch;
  for (int c = 0; c < 3; ++c) ch.push_back(top[c] * (1.0 - y) + bottom[c] * y);
  for (int b = 0; b < 4; ++b) {
    const double cy = rng.uniform01(), cx = rng.uniform01();
    const double r = rng.uniform(0.08, 0.3);
    const auto col = color(rng);
    auto d2 = (y - cy).square() + (x - cx).square();
    auto mask = torch::sigmoid((r * r - d2) * (40.0 / (r * r)));
    for (int c = 0; c < 3; ++c) ch[c] = ch[c] * (1.0 - mask) + col[c] * mask;
  }
  return finish(ch);
}

ImageTensor style_image(std::uint64_t id, std::int64_t h, std::int64_t w) {
  Rng rng(id, 0x57e1e);
  const auto y = grid_y(h, w) * static_cast<double>(h);
  const auto x = grid_x(h, w) * static_cast<double>(w);
  const double period = rng.uniform(4.0, 12.0);
  const double angle = rng.uniform(0.0, std::numbers::pi);
  const double k = 2.0 * std::numbers::pi / period;
  const auto u = x * std::cos(angle) + y * std::sin(angle);
  const auto v = -x * std::sin(angle) + y * std::cos(angle);
  torch::Tensor pattern;
  switch (id % 5) {
    case 0: pattern = 0.5 + 0.5 * torch::sin(k * u); break;
    case 1: pattern = (torch::sin(k * u) * torch::sin(k * v) > 0).to(torch::kDouble); break;
    case 2: {
      auto d = (torch::sin(0.5 * k * u).square() + torch::sin(0.5 * k * v).square());
      pattern = (d < 0.6).to(torch::kDouble);
      break;
    }
    case 3: {
      auto r = torch::sqrt((x - w / 2.0).square() + (y - h / 2.0).square());
      pattern = 0.5 + 0.5 * torch::cos(k * r);
      break;
    }
    default: pattern = 0.5 + 0.5 * torch::sin(k * u + 2.0 * torch::sin(0.5 * k * v)); break;
  }
  const auto a = color(rng), b = color(rng);
  std::vector<torch::Tensor> ch;
  for (int c = 0; c < 3; ++c) ch.push_back(a[c] * pattern + b[c] * (1.0 - pattern));
  return finish(ch);
}

void write_images(const fs::path& dir, std::int64_t count,
                  const std::function<ImageTensor(std::int64_t)>& make) {
  fs::create_directories(dir);
  for (std::int64_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%03lld.png", static_cast<long long>(i));
    metastyle::save_image(make(i), dir / name);
  }
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("metastyle_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Map to_map(const torch::Tensor& chw) {
  auto t = chw.detach().to(torch::kDouble).contiguous();
  Map m{t.size(0), t.size(1), t.size(2), {}};
  m.v.assign(t.data_ptr<double>(), t.data_ptr<double>() + t.numel());
  return m;
}

std::vector<std::vector<double>> oracle_gram(const Map& f) {
  const auto n = f.h * f.w;
  std::vector<std::vector<double>> g(f.c, std::vector<double>(f.c, 0.0));
  for (std::int64_t i = 0; i < f.c; ++i) {
    for (std::int64_t j = 0; j < f.c; ++j) {
      double s = 0.0;
      for (std::int64_t p = 0; p < n; ++p) s += f.at(i, p) * f.at(j, p);
      g[i][j] = s / static_cast<double>(f.c * n);
    }
  }
  return g;
}

double oracle_content(const Map& a, const Map& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) s += (a.v[i] - b.v[i]) * (a.v[i] - b.v[i]);
  return s / static_cast<double>(a.v.size());
}

double oracle_style(const std::vector<std::vector<std::vector<double>>>& style_grams,
                    const std::vector<Map>& x_maps) {
  double total = 0.0;
  for (std::size_t l = 0; l < x_maps.size(); ++l) {
    const auto g = oracle_gram(x_maps[l]);
    for (std::size_t i = 0; i < g.size(); ++i) {
      for (std::size_t j = 0; j < g.size(); ++j) {
        const double d = style_grams[l][i][j] - g[i][j];
        total += d * d;
      }
    }
  }
  return total;
}

torch::Tensor central_difference(const std::function<double(const torch::Tensor&)>& f,
                                 const torch::Tensor& x, double eps) {
  auto base = x.detach().to(torch::kDouble).contiguous().clone();
  auto out = torch::zeros_like(base);
  auto flat = base.view({-1});
  auto out_flat = out.view({-1});
  for (std::int64_t i = 0; i < flat.numel(); ++i) {
    const double orig = flat[i].item<double>();
    flat[i] = orig + eps;
    const double up = f(base);
    flat[i] = orig - eps;
    const double down = f(base);
    flat[i] = orig;
    out_flat[i] = (up - down) / (2.0 * eps);
  }
  return out;
}

double max_relative_error(const torch::Tensor& a, const torch::Tensor& b, double floor) {
  auto x = a.to(torch::kDouble), y = b.to(torch::kDouble);
  auto denom = torch::maximum(torch::maximum(x.abs(), y.abs()), torch::full_like(x, floor));
  return ((x - y).abs() / denom).max().item<double>();
}

double cosine(const torch::Tensor& a, const torch::Tensor& b) {
  auto x = a.to(torch::kDouble).flatten(), y = b.to(torch::kDouble).flatten();
  return (x.dot(y) / (x.norm() * y.norm())).item<double>();
}

metastyle::FeatureExtractor two_conv_extractor(std::uint64_t seed, std::int64_t c1,
                                               std::int64_t c2, torch::ScalarType dtype) {
  using Stage = metastyle::FeatureExtractor::Stage;
  Rng rng(seed, 0x2c0);
  auto random = [&](std::vector<std::int64_t> shape, double scale) {
    auto t = torch::empty(shape, torch::kDouble);
    auto flat = t.view({-1});
    for (std::int64_t i = 0; i < flat.numel(); ++i) flat[i] = scale * rng.normal();
    return t.to(dtype);
  };
  std::vector<Stage> stages(4);
  stages[0].kind = Stage::Kind::conv;
  stages[0].weight = random({c1, 3, 3, 3}, 0.4);
  stages[0].bias = random({c1}, 0.1);
  stages[1].kind = Stage::Kind::relu;
  stages[2].kind = Stage::Kind::conv;
  stages[2].weight = random({c2, c1, 3, 3}, 0.3);
  stages[2].bias = random({c2}, 0.1);
  stages[3].kind = Stage::Kind::relu;
  return metastyle::FeatureExtractor(
      std::move(stages),
      {{metastyle::LayerId::relu1_2, 1}, {metastyle::LayerId::relu2_2, 3}},
      {0.0, 0.0, 0.0}, {1.0, 1.0, 1.0});
}

const metastyle::FeatureExtractor& synthetic_vgg16(std::uint64_t seed) {
  static std::map<std::uint64_t, metastyle::FeatureExtractor> cache;
  auto it = cache.find(seed);
  if (it == cache.end()) {
    it = cache.emplace(seed, metastyle::vgg16_from_archive(metastyle::random_vgg16_weights(seed)))
             .first;
  }
  return it->second;
}

}  // namespace testsupport

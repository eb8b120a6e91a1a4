#include "metastyle/error.hpp"
#include "metastyle/perceptual.hpp"
#include "metastyle/rng.hpp"
#include "metastyle/tensor_archive.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <fstream>

using namespace metastyle;
namespace ts = testsupport;

namespace {

torch::Tensor dbl(std::vector<double> values, std::vector<std::int64_t> shape) {
  return torch::tensor(values, torch::kDouble).reshape(shape);
}

torch::Tensor random_map(Rng& rng, std::int64_t c, std::int64_t h, std::int64_t w) {
  auto t = torch::empty({c, h, w}, torch::kDouble);
  auto flat = t.view({-1});
  for (std::int64_t i = 0; i < flat.numel(); ++i) flat[i] = rng.normal();
  return t;
}

torch::Tensor uniform_image(Rng& rng, std::int64_t h, std::int64_t w, double lo = 0.1,
                            double hi = 0.9) {
  auto t = torch::empty({3, h, w}, torch::kDouble);
  auto flat = t.view({-1});
  for (std::int64_t i = 0; i < flat.numel(); ++i) flat[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("gram of the 2x1x2 map is [[1.25,2.75],[2.75,6.25]]") {
  auto g = gram(FeatureMap(dbl({1, 2, 3, 4}, {2, 1, 2}), LayerId::relu1_2)).data();
  CHECK(g[0][0].item<double>() == 1.25);
  CHECK(g[0][1].item<double>() == 2.75);
  CHECK(g[1][0].item<double>() == 2.75);
  CHECK(g[1][1].item<double>() == 6.25);

  auto oracle = ts::oracle_gram(ts::to_map(dbl({1, 2, 3, 4}, {2, 1, 2})));
  CHECK(oracle[0][1] == 2.75);
}

TEST_CASE("gram zero and single-element cases") {
  auto z = gram(FeatureMap(torch::zeros({4, 8, 8}, torch::kDouble), LayerId::relu1_2)).data();
  CHECK(z.sizes() == torch::IntArrayRef({4, 4}));
  CHECK(z.abs().max().item<double>() == 0.0);
  auto one = gram(FeatureMap(dbl({2}, {1, 1, 1}), LayerId::relu1_2)).data();
  CHECK(one[0][0].item<double>() == 4.0);
}

TEST_CASE("gram properties over random maps") {
  Rng rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const auto c = 1 + static_cast<std::int64_t>(rng.uniform_index(6));
    const auto h = 1 + static_cast<std::int64_t>(rng.uniform_index(5));
    const auto w = 1 + static_cast<std::int64_t>(rng.uniform_index(5));
    auto f = random_map(rng, c, h, w);
    auto g = gram(FeatureMap(f, LayerId::relu2_2)).data();
    const double scale = g.abs().max().item<double>() + 1e-300;

    CHECK((g - g.t()).abs().max().item<double>() <= 1e-14 * scale);
    auto eig = torch::linalg_eigvalsh(g);
    CHECK(eig.min().item<double>() >= -1e-12 * scale);

    const double k = rng.uniform(-3.0, 3.0);
    auto gk = gram(FeatureMap(f * k, LayerId::relu2_2)).data();
    CHECK((gk - g * (k * k)).abs().max().item<double>() <= 1e-12 * (scale * k * k + 1e-300));

    auto oracle = ts::oracle_gram(ts::to_map(f));
    for (std::int64_t i = 0; i < c; ++i) {
      for (std::int64_t j = 0; j < c; ++j) {
        CHECK(g[i][j].item<double>() == doctest::Approx(oracle[i][j]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("content loss examples") {
  auto zeros = FeatureMap(torch::zeros({1, 1, 2}, torch::kDouble), LayerId::relu2_2);
  CHECK(content_loss(zeros, FeatureMap(dbl({1, 1}, {1, 1, 2}), LayerId::relu2_2)) == 1.0);
  CHECK(content_loss(zeros, FeatureMap(dbl({2, 2}, {1, 1, 2}), LayerId::relu2_2)) == 4.0);
  CHECK(content_loss(zeros, zeros) == 0.0);

  CHECK_THROWS_AS(content_loss(zeros, FeatureMap(torch::zeros({1, 2, 2}), LayerId::relu2_2)),
                  DimensionError);
  CHECK_THROWS_AS(content_loss(zeros, FeatureMap(torch::zeros({1, 1, 2}), LayerId::relu1_2)),
                  DimensionError);
}

TEST_CASE("content loss matches the element-count oracle") {
  Rng rng(5);
  auto a = random_map(rng, 3, 4, 5), b = random_map(rng, 3, 4, 5);
  CHECK(content_loss(FeatureMap(a, LayerId::relu2_2), FeatureMap(b, LayerId::relu2_2)) ==
        doctest::Approx(ts::oracle_content(ts::to_map(a), ts::to_map(b))).epsilon(1e-13));
}

TEST_CASE("style loss examples") {
  StyleGrams s{{LayerId::relu1_2, GramMatrix(dbl({1}, {1, 1}))}};
  std::map<LayerId, FeatureMap> x{{LayerId::relu1_2, FeatureMap(dbl({2}, {1, 1, 1}), LayerId::relu1_2)}};
  CHECK(style_loss(s, x) == 9.0);

  std::map<LayerId, FeatureMap> zero{
      {LayerId::relu1_2, FeatureMap(torch::zeros({2, 3, 3}, torch::kDouble), LayerId::relu1_2)}};
  StyleGrams zero_grams{{LayerId::relu1_2, gram(zero.at(LayerId::relu1_2))}};
  CHECK(style_loss(zero_grams, zero) == 0.0);

  Rng rng(2);
  std::map<LayerId, FeatureMap> f{
      {LayerId::relu1_2, FeatureMap(random_map(rng, 3, 4, 4), LayerId::relu1_2)},
      {LayerId::relu2_2, FeatureMap(random_map(rng, 5, 2, 2), LayerId::relu2_2)}};
  StyleGrams own;
  for (const auto& [id, m] : f) own.emplace(id, gram(m));
  CHECK(style_loss(own, f) == 0.0);
}

TEST_CASE("style loss errors") {
  StyleGrams s{{LayerId::relu1_2, GramMatrix(torch::zeros({2, 2}, torch::kDouble))}};
  std::map<LayerId, FeatureMap> other{
      {LayerId::relu2_2, FeatureMap(torch::zeros({2, 1, 1}, torch::kDouble), LayerId::relu2_2)}};
  CHECK_THROWS_AS(style_loss(s, other), ConfigError);
  std::map<LayerId, FeatureMap> wrong_c{
      {LayerId::relu1_2, FeatureMap(torch::zeros({3, 1, 1}, torch::kDouble), LayerId::relu1_2)}};
  CHECK_THROWS_AS(style_loss(s, wrong_c), DimensionError);
}

TEST_CASE("style loss matches the brute-force oracle") {
  Rng rng(8);
  std::vector<ts::Map> xs;
  std::vector<std::vector<std::vector<double>>> sg;
  std::map<LayerId, FeatureMap> x;
  StyleGrams s;
  for (auto id : {LayerId::relu1_2, LayerId::relu3_3}) {
    auto fx = random_map(rng, 4, 3, 3), fs = random_map(rng, 4, 5, 2);
    x.emplace(id, FeatureMap(fx, id));
    s.emplace(id, gram(FeatureMap(fs, id)));
    xs.push_back(ts::to_map(fx));
    sg.push_back(ts::oracle_gram(ts::to_map(fs)));
  }
  CHECK(style_loss(s, x) == doctest::Approx(ts::oracle_style(sg, xs)).epsilon(1e-12));
}

TEST_CASE("weighted sum with the default weights") {
  PerceptualConfig config;
  CHECK(config.alpha == 1.0);
  CHECK(config.beta == 1e5);
  auto b = weighted_sum(config, 1.0, 2e-5);
  CHECK(b.total == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(b.content == 1.0);
  CHECK(b.style == 2e-5);

  config.alpha = 0.0;
  auto s = weighted_sum(config, 7.0, 0.25);
  CHECK(s.total == config.beta * 0.25);
}

TEST_CASE("perceptual config validation") {
  PerceptualConfig c;
  CHECK_NOTHROW(c.validate());
  c.alpha = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.style_layers.clear();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.channel_std[1] = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_layer_id("relu3_3") == LayerId::relu3_3);
  CHECK_THROWS_AS(parse_layer_id("relu5_3"), ConfigError);
}

TEST_CASE("vgg16 tap shapes, determinism and minimum size") {
  const auto& vgg = ts::synthetic_vgg16();
  Rng rng(3);
  ImageTensor img(uniform_image(rng, 256, 256).to(torch::kFloat));
  std::vector<LayerId> layers{LayerId::relu2_2, LayerId::relu3_3};
  auto a = extract_features(vgg, img, layers);
  CHECK(a.at(LayerId::relu2_2).data().sizes() == torch::IntArrayRef({128, 128, 128}));
  CHECK(a.at(LayerId::relu3_3).data().sizes() == torch::IntArrayRef({256, 64, 64}));
  auto b = extract_features(vgg, img, layers);
  CHECK(torch::equal(a.at(LayerId::relu3_3).data(), b.at(LayerId::relu3_3).data()));

  ImageTensor small(torch::full({3, 31, 64}, 0.5));
  CHECK_THROWS_AS(extract_features(vgg, small, layers), DimensionError);
  CHECK(vgg16_tap_index(LayerId::relu1_2) == 3);
  CHECK(vgg16_tap_index(LayerId::relu4_3) == 22);
}

TEST_CASE("a one-pixel change stays inside the relu1_2 receptive field") {
  const auto& vgg = ts::synthetic_vgg16();
  Rng rng(4);
  auto base = uniform_image(rng, 48, 48).to(torch::kFloat);
  auto changed = base.clone();
  changed[1][20][30] = 0.95f;
  std::vector<LayerId> l{LayerId::relu1_2};
  auto fa = extract_features(vgg, ImageTensor(base), l).at(LayerId::relu1_2).data();
  auto fb = extract_features(vgg, ImageTensor(changed), l).at(LayerId::relu1_2).data();
  // Two stacked 3x3 convolutions: influence radius 2 around (20, 30).
  auto diff = (fa - fb).abs().amax(0);
  auto inside = diff.slice(0, 18, 23).slice(1, 28, 33);
  CHECK(inside.max().item<float>() > 0.0f);
  auto outside = diff.clone();
  outside.slice(0, 18, 23).slice(1, 28, 33).zero_();
  CHECK(outside.max().item<float>() == 0.0f);
}

TEST_CASE("image gradient matches central differences through a two-conv extractor") {
  auto ext = ts::two_conv_extractor(1);
  PerceptualConfig config;
  config.style_layers = {LayerId::relu1_2, LayerId::relu2_2};
  config.channel_mean = {0.0, 0.0, 0.0};
  config.channel_std = {1.0, 1.0, 1.0};
  PerceptualLoss loss(config, ext);
  Rng rng(9);
  ImageTensor ic(uniform_image(rng, 8, 8));
  ImageTensor is(uniform_image(rng, 8, 8));
  ImageTensor ix(uniform_image(rng, 8, 8));
  auto grams = compute_style_grams(ext, is, config.style_layers);

  auto analytic = image_gradient(config, ext, ic, grams, ix);
  auto f = [&](const torch::Tensor& x) {
    torch::NoGradGuard ng;
    return loss.terms(ic.batched(), grams, x.unsqueeze(0)).total.item<double>();
  };
  auto numeric = ts::central_difference(f, ix.data(), 1e-3);
  const double err = ts::max_relative_error(analytic, numeric, 1e-6);
  INFO("max relative error " << err);
  CHECK(err <= 1e-3);

  auto grams_c = compute_style_grams(ext, ic, config.style_layers);
  auto at_opt = image_gradient(config, ext, ic, grams_c, ic);
  CHECK(at_opt.abs().max().item<double>() == 0.0);
}

TEST_CASE("style-only gradient is linear in beta") {
  auto ext = ts::two_conv_extractor(2);
  PerceptualConfig config;
  config.alpha = 0.0;
  config.style_layers = {LayerId::relu1_2, LayerId::relu2_2};
  Rng rng(10);
  ImageTensor ic(uniform_image(rng, 8, 8)), is(uniform_image(rng, 8, 8)),
      ix(uniform_image(rng, 8, 8));
  auto grams = compute_style_grams(ext, is, config.style_layers);
  auto g1 = image_gradient(config, ext, ic, grams, ix);
  config.beta *= 10.0;
  auto g10 = image_gradient(config, ext, ic, grams, ix);
  CHECK(ts::max_relative_error(g10, g1 * 10.0, 1e-12) <= 1e-12);
}

TEST_CASE("perceptual loss identities and invariants") {
  auto ext = ts::two_conv_extractor(3);
  PerceptualConfig config;
  config.style_layers = {LayerId::relu1_2, LayerId::relu2_2};
  Rng rng(12);
  ImageTensor ic(uniform_image(rng, 8, 8)), is(uniform_image(rng, 8, 8)),
      ix(uniform_image(rng, 8, 8));
  auto own = compute_style_grams(ext, ic, config.style_layers);
  auto zero = perceptual_loss(config, ext, ic, own, ic);
  CHECK(zero.total == 0.0);

  auto grams = compute_style_grams(ext, is, config.style_layers);
  auto b1 = perceptual_loss(config, ext, ic, grams, ix);
  auto b2 = perceptual_loss(config, ext, ic, grams, ix);
  CHECK(b1.total > 0.0);
  CHECK(b1.content >= 0.0);
  CHECK(b1.style >= 0.0);
  CHECK(b1.total == b2.total);
  CHECK(b1.total == doctest::Approx(config.alpha * b1.content + config.beta * b1.style)
                        .epsilon(1e-14));

  config.alpha = 0.0;
  auto b3 = perceptual_loss(config, ext, ic, grams, ix);
  CHECK(b3.total == config.beta * b3.style);
}

TEST_CASE("batched terms agree with the single-image losses") {
  const auto& vgg = ts::synthetic_vgg16();
  PerceptualConfig config;
  PerceptualLoss loss(config, vgg);
  auto ic0 = ts::content_image(0, 32, 32), ic1 = ts::content_image(1, 32, 32);
  auto ix0 = ts::content_image(2, 32, 32), ix1 = ts::content_image(3, 32, 32);
  auto grams = loss.style_grams(ts::style_image(0, 32, 32));
  auto t = loss.terms(stack_images({ic0, ic1}), grams, stack_images({ix0, ix1}));
  auto single = perceptual_loss(config, vgg, ic1, grams, ix1);
  CHECK(t.total[1].item<double>() == doctest::Approx(single.total).epsilon(1e-5));
  CHECK(t.content[1].item<double>() == doctest::Approx(single.content).epsilon(1e-5));
  CHECK(t.style[1].item<double>() == doctest::Approx(single.style).epsilon(1e-5));
}

TEST_CASE("vgg16 archive errors") {
  auto archive = random_vgg16_weights(1);
  CHECK_NOTHROW(vgg16_from_archive(archive));

  auto missing = archive;
  std::erase_if(missing.tensors, [](const auto& e) { return e.first == "features.12.bias"; });
  try {
    vgg16_from_archive(missing);
    FAIL("expected LoadError");
  } catch (const LoadError& e) {
    CHECK(std::string(e.what()).find("features.12.bias") != std::string::npos);
  }

  auto reshaped = archive;
  for (auto& [name, t] : reshaped.tensors) {
    if (name == "features.5.weight") t = torch::zeros({128, 64, 3, 2});
  }
  try {
    vgg16_from_archive(reshaped);
    FAIL("expected LoadError");
  } catch (const LoadError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("features.5.weight") != std::string::npos);
    CHECK(msg.find("[128, 64, 3, 3]") != std::string::npos);
    CHECK(msg.find("[128, 64, 3, 2]") != std::string::npos);
  }

  auto dir = ts::scratch_dir("vgg_truncated");
  auto bytes = encode_tensor_archive(archive);
  {
    std::ofstream out(dir / "vgg.msta", std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_feature_extractor(dir / "vgg.msta"), FormatError);
}

// Writes a seeded random VGG16 feature archive. Useful for smoke runs when the
// pretrained weights are not at hand; losses computed with it are not
// perceptually meaningful.
#include "metastyle/perceptual.hpp"
#include "metastyle/tensor_archive.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Write a synthetic VGG16 weights archive"};
  std::string out;
  std::uint64_t seed = 0;
  app.add_option("out", out, "Output archive path")->required();
  app.add_option("--seed", seed, "Weight seed");
  CLI11_PARSE(app, argc, argv);
  try {
    metastyle::write_tensor_archive(metastyle::random_vgg16_weights(seed), out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

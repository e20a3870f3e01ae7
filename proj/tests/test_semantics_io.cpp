#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "bev/error.hpp"
#include "bev/semantics_io.hpp"
#include "support.hpp"

namespace bev {
namespace {

namespace fs = std::filesystem;
using test::cls;
using test::palette;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "bev_semantics_io_test";
  fs::create_directories(dir);
  return dir / name;
}

TEST(Palette, StandardOrderAndOccluded) {
  const auto p = palette();
  ASSERT_EQ(p->size(), 10u);
  const char* names[] = {"road", "sidewalk", "person", "car", "truck", "bus", "bike", "obstacle", "vegetation", "occluded"};
  for (std::size_t k = 0; k < 10; ++k) EXPECT_EQ((*p)[k].name, names[k]);
  EXPECT_EQ(p->occluded(), 9);
  EXPECT_THROW(p->index_of("sky"), Error);
}

TEST(Palette, TextRoundTrip) {
  const Palette parsed = parse_palette(format_palette(*palette()));
  EXPECT_EQ(parsed, *palette());
}

TEST(Palette, DuplicatesAndMissingOccludedRejected) {
  EXPECT_THROW(parse_palette("road #804080\nroad #000001\noccluded #969696\n"), Error);
  EXPECT_THROW(parse_palette("road #804080\ncar #804080\noccluded #969696\n"), Error);
  EXPECT_THROW(parse_palette("road #804080\n"), Error);
  EXPECT_THROW(parse_palette("road 128,64,128\noccluded #969696\n"), Error);
}

TEST(ColorToIndex, RoadColor) {
  RgbImage img{1, 1, {128, 64, 128}};
  EXPECT_EQ(color_to_index(img, palette())(0, 0), cls("road"));
}

TEST(ColorToIndex, UnknownColorStrictAndLenient) {
  RgbImage img{2, 1, {128, 64, 128, 1, 2, 3}};
  try {
    color_to_index(img, palette());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Decode);
  }
  const SemanticImage lenient = color_to_index(img, palette(), false, cls("occluded"));
  EXPECT_EQ(lenient(0, 1), cls("occluded"));
}

TEST(ColorToIndex, RoundTripIsIdentity) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 20; ++k) {
    const SemanticImage img = test::random_labels(rng, 37, 23);
    EXPECT_EQ(color_to_index(index_to_color(img), palette()).labels, img.labels);
  }
}

TEST(OneHot, EncodeThenDecodeIsIdentity) {
  std::mt19937_64 rng(6);
  const SemanticImage img = test::random_labels(rng, 16, 9);
  const Planes<float> planes = encode_onehot<float>(img);
  EXPECT_EQ(planes.rows(), 10);
  EXPECT_TRUE((planes.colwise().sum().array() == 1.0f).all());
  EXPECT_EQ(decode_argmax<float>(planes, 16, 9, palette()).labels, img.labels);
}

TEST(OneHot, UniformLogitsDecodeToClassZero) {
  const Planes<double> logits = Planes<double>::Constant(10, 12, 0.25);
  const SemanticImage out = decode_argmax<double>(logits, 4, 3, palette());
  EXPECT_TRUE((out.labels.array() == 0).all());
}

TEST(OneHot, ArgmaxMatchesBruteForce) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> d(-3, 3);  // coarse values force ties
  Planes<double> logits(10, 35);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = d(rng);
  const SemanticImage out = decode_argmax<double>(logits, 7, 5, palette());
  for (int p = 0; p < 35; ++p) {
    int best = 0;
    for (int c = 1; c < 10; ++c) {
      if (logits(c, p) > logits(best, p)) best = c;
    }
    EXPECT_EQ(out(p / 7, p % 7), best);
  }
}

TEST(ClassWeights, EvenSplit) {
  const std::vector<std::uint64_t> counts{50, 50};
  const Eigen::VectorXd w = class_weights(counts);
  EXPECT_DOUBLE_EQ(w(0), 1.0 / std::log(1.52));
  EXPECT_DOUBLE_EQ(w(1), w(0));
}

TEST(ClassWeights, RareClassesWeighMore) {
  const std::vector<std::uint64_t> counts{900, 90, 9, 1};
  const Eigen::VectorXd w = class_weights(counts);
  for (int c = 0; c + 1 < 4; ++c) EXPECT_LT(w(c), w(c + 1));
  EXPECT_TRUE((w.array() > 0).all() && w.allFinite());
}

TEST(ClassWeights, TenClassHistogramByHand) {
  const std::vector<std::uint64_t> counts{400, 250, 120, 90, 60, 40, 20, 12, 6, 2};
  // total 1000: f = counts / 1000; w = 1 / ln(1.02 + f)
  const double expected[] = {1.0 / std::log(1.42),  1.0 / std::log(1.27),  1.0 / std::log(1.14),
                             1.0 / std::log(1.11),  1.0 / std::log(1.08),  1.0 / std::log(1.06),
                             1.0 / std::log(1.04),  1.0 / std::log(1.032), 1.0 / std::log(1.026),
                             1.0 / std::log(1.022)};
  const Eigen::VectorXd w = class_weights(counts);
  for (int c = 0; c < 10; ++c) EXPECT_NEAR(w(c), expected[c], 1e-12);
}

TEST(ClassWeights, InvalidInputs) {
  const std::vector<std::uint64_t> empty(3, 0);
  EXPECT_THROW(class_weights(empty), Error);
  const std::vector<std::uint64_t> one{1};
  EXPECT_THROW(class_weights(one, 1.0), Error);
}

TEST(LabelPng, RgbAndIndexedRoundTrip) {
  std::mt19937_64 rng(9);
  const SemanticImage img = test::random_labels(rng, 41, 17);
  for (PngLayout layout : {PngLayout::Rgb, PngLayout::Indexed}) {
    const fs::path path = scratch(layout == PngLayout::Rgb ? "rgb.png" : "indexed.png");
    save_label_png(path, img, layout);
    EXPECT_EQ(load_label_png(path, palette()).labels, img.labels);
  }
}

TEST(LabelPng, CorruptFileIsADecodeError) {
  const fs::path path = scratch("corrupt.png");
  std::ofstream(path) << "not a png";
  try {
    load_label_png(path, palette());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Decode);
  }
}

TEST(SemanticImage, OutOfPaletteIndexRejected) {
  SemanticImage img(3, 3, palette());
  img(1, 1) = 42;
  EXPECT_THROW(img.validate(), Error);
}

}  // namespace
}  // namespace bev

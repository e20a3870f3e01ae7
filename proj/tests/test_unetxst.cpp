#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "bev/error.hpp"
#include "bev/optim.hpp"
#include "bev/unetxst.hpp"
#include "support.hpp"

namespace bev {
namespace {

using test::palette;
using M = Model<double>;
using T = Tensor<double>;

NetworkConfig small_config(Variant v) {
  NetworkConfig cfg;
  cfg.variant = v;
  cfg.levels = 2;
  cfg.base_channels = 3;
  cfg.input_height = 16;
  cfg.input_width = 32;
  cfg.input_channels = 4;
  cfg.class_count = 5;
  if (v == Variant::SingleInput) {
    cfg.input_cameras = {"homography"};
  } else {
    cfg.input_cameras = {"front", "rear"};
  }
  if (v == Variant::MultiInputXst) {
    Eigen::Matrix3d mirror = Eigen::Matrix3d::Identity();
    mirror(0, 0) = -1.0;
    Eigen::Matrix3d tilt = Eigen::Matrix3d::Identity();
    tilt(2, 1) = 0.2;
    tilt(0, 2) = 0.1;
    cfg.homographies = {mirror, tilt};
  }
  return cfg;
}

std::vector<T> random_inputs(std::mt19937_64& rng, const NetworkConfig& cfg, int batch = 2) {
  std::vector<T> xs;
  for (int s = 0; s < cfg.streams(); ++s) {
    xs.push_back(test::random_tensor(rng, {batch, cfg.input_channels, cfg.input_height, cfg.input_width}, 0.0, 1.0));
  }
  return xs;
}

std::size_t closed_form_parameters(const NetworkConfig& cfg) {
  auto conv = [](std::size_t cin, std::size_t cout, std::size_t k) { return cin * cout * k * k + cout; };
  const std::size_t s = cfg.streams();
  std::size_t n = 0;
  for (int l = 0; l <= cfg.levels; ++l) {
    const std::size_t c = cfg.channels_at(l);
    const std::size_t cin = l == 0 ? cfg.input_channels : cfg.channels_at(l - 1);
    n += s * (conv(cin, c, 3) + conv(c, c, 3));
    n += conv(s * c, c, 3);
    if (l < cfg.levels) n += conv(cfg.channels_at(l + 1) + c, c, 3) + conv(c, c, 3);
  }
  return n + conv(cfg.channels_at(0), cfg.class_count, 1);
}

TEST(Variant, NamesRoundTrip) {
  for (Variant v : {Variant::MultiInputXst, Variant::MultiInputPlain, Variant::SingleInput}) {
    EXPECT_EQ(parse_variant(to_string(v)), v);
  }
  EXPECT_EQ(parse_variant("xst"), Variant::MultiInputXst);
  EXPECT_EQ(parse_variant("plain"), Variant::MultiInputPlain);
  EXPECT_EQ(parse_variant("single"), Variant::SingleInput);
  EXPECT_THROW(parse_variant("resnet"), Error);
}

TEST(NetworkConfig, RejectsIndivisibleResolution) {
  NetworkConfig cfg = small_config(Variant::MultiInputPlain);
  cfg.input_width = 30;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = small_config(Variant::MultiInputXst);
  cfg.homographies.pop_back();
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Model, OutputShapeForEveryVariant) {
  std::mt19937_64 rng(1);
  for (Variant v : {Variant::MultiInputXst, Variant::MultiInputPlain, Variant::SingleInput}) {
    const NetworkConfig cfg = small_config(v);
    const M m = M::build(cfg, 7);
    const T y = m.forward(random_inputs(rng, cfg, 3));
    EXPECT_EQ(y.shape(), (Shape{3, cfg.class_count, cfg.input_height, cfg.input_width}));
    EXPECT_TRUE(y.value().allFinite());
  }
}

TEST(Model, ParameterCountMatchesClosedForm) {
  for (Variant v : {Variant::MultiInputXst, Variant::MultiInputPlain, Variant::SingleInput}) {
    const NetworkConfig cfg = small_config(v);
    EXPECT_EQ(M::build(cfg, 1).parameter_count(), closed_form_parameters(cfg));
  }
  NetworkConfig big;  // defaults: 4 levels, 8 base channels, 10 classes
  big.input_cameras = {"front", "rear", "left", "right"};
  big.homographies.assign(4, Eigen::Matrix3d::Identity());
  EXPECT_EQ(Model<float>::build(big, 1).parameter_count(), closed_form_parameters(big));
}

TEST(Model, IdentityWarpsMatchThePlainNetwork) {
  std::mt19937_64 rng(2);
  NetworkConfig xst = small_config(Variant::MultiInputXst);
  xst.homographies.assign(2, Eigen::Matrix3d::Identity());
  const NetworkConfig plain = small_config(Variant::MultiInputPlain);
  const M a = M::build(xst, 3);
  M b = M::build(plain, 99);
  b.copy_weights_from(a);
  const auto xs = random_inputs(rng, xst);
  EXPECT_LT((a.forward(xs).value() - b.forward(xs).value()).abs().maxCoeff(), 1e-12);
}

TEST(ScaleHomography, LevelZeroAndIdentity) {
  const Eigen::Matrix3d h = small_config(Variant::MultiInputXst).homographies[1];
  EXPECT_TRUE(scale_homography(h, 0).isApprox(h));
  for (int l = 0; l < 5; ++l) EXPECT_TRUE(scale_homography(Eigen::Matrix3d::Identity(), l).isIdentity());
  EXPECT_THROW(scale_homography(h, -1), Error);
}

TEST(ScaleHomography, WarpCommutesWithResolutionChange) {
  // Render a linear field at each pyramid resolution and warp it there. The
  // result must equal the field pulled back through the warp and rendered at
  // that resolution, except where a bilinear tap falls off the image.
  Eigen::Matrix3d hom;
  hom << 0.9, 0.1, 0.05, -0.05, 0.8, 0.1, 0.02, 0.15, 1.0;
  auto field = [](double x, double y) { return 0.3 * x - 0.7 * y + 0.1; };
  for (int level = 0; level <= 3; ++level) {
    const int h = 64 >> level, w = 128 >> level;
    auto xn = [&](int j) { return (2.0 * j + 1.0) / w - 1.0; };
    auto yn = [&](int i) { return (2.0 * i + 1.0) / h - 1.0; };
    T::Array v(h * w);
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) v(i * w + j) = field(xn(j), yn(i));
    }
    const T out = spatial_transform(T::from({1, 1, h, w}, v), scale_homography(hom, level));
    int agree = 0;
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const Eigen::Vector3d q = hom * Eigen::Vector3d(xn(j), yn(i), 1.0);
        agree += std::abs(out.value()(i * w + j) - field(q.x() / q.z(), q.y() / q.z())) < 1e-9;
      }
    }
    EXPECT_GE(agree, 0.9 * h * w) << "level " << level;
  }
}

TEST(Model, EveryParameterReceivesAGradient) {
  std::mt19937_64 rng(5);
  for (Variant v : {Variant::MultiInputXst, Variant::MultiInputPlain, Variant::SingleInput}) {
    const NetworkConfig cfg = small_config(v);
    const M m = M::build(cfg, 11);
    const T y = m.forward(random_inputs(rng, cfg));
    const T target = test::random_tensor(rng, y.shape(), 0.0, 1.0);
    softmax_cross_entropy(y, target, Eigen::VectorXd::Ones(cfg.class_count)).backward();
    for (const auto& c : m.convs()) {
      ASSERT_EQ(c.weight.grad().size(), c.weight.value().size()) << c.name;
      EXPECT_TRUE(c.weight.grad().allFinite()) << c.name;
      EXPECT_GT(c.weight.grad().abs().maxCoeff(), 0.0) << c.name;
      EXPECT_GT(c.bias.grad().abs().maxCoeff(), 0.0) << c.name;
    }
  }
}

TEST(Model, SmallNetworkGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  NetworkConfig cfg = small_config(Variant::MultiInputXst);
  cfg.levels = 1;
  cfg.input_height = 4;
  cfg.input_width = 6;
  const M m = M::build(cfg, 3);
  const auto xs = random_inputs(rng, cfg, 1);
  const T target = test::random_tensor(rng, {1, cfg.class_count, 4, 6}, 0.0, 1.0);
  const Eigen::VectorXd weights = Eigen::VectorXd::Ones(cfg.class_count);
  // Differentiate w.r.t. the first stream's input.
  auto f = [&](const T& x) { return softmax_cross_entropy(m.forward({x, xs[1]}), target, weights); };
  EXPECT_LT(test::gradient_error<double>(f, xs[0]), 1e-4);
}

TEST(Predict, MismatchedCamerasAreAnInputError) {
  NetworkConfig cfg = small_config(Variant::MultiInputPlain);
  cfg.input_channels = 10;
  cfg.class_count = 10;
  const Model<float> m = Model<float>::build(cfg, 1);
  const SemanticImage view(cfg.input_width, cfg.input_height, palette());
  try {
    predict(m, {{"front", view}, {"left", view}}, palette());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Input);
  }
  const SemanticImage out = predict(m, {{"front", view}, {"rear", view}}, palette());
  EXPECT_EQ(out.width(), cfg.input_width);
  EXPECT_EQ(out.height(), cfg.input_height);
}

TEST(Checkpoint, RoundTripReproducesTheModel) {
  std::mt19937_64 rng(7);
  const auto path = std::filesystem::temp_directory_path() / "bev_unetxst_test.ckpt";
  for (Variant v : {Variant::MultiInputXst, Variant::MultiInputPlain, Variant::SingleInput}) {
    const NetworkConfig cfg = small_config(v);
    const Model<float> m = Model<float>::build(cfg, 5);
    save_checkpoint(path, m.to_arrays());
    const Model<float> back = Model<float>::from_arrays(load_checkpoint(path));
    EXPECT_EQ(back.config().variant, v);
    EXPECT_EQ(back.config().input_cameras, cfg.input_cameras);
    EXPECT_EQ(back.config().homographies.size(), cfg.homographies.size());
    std::vector<Tensor<float>> xs;
    for (const auto& x : random_inputs(rng, cfg)) xs.push_back(Tensor<float>::from(x.shape(), x.value().cast<float>()));
    EXPECT_TRUE((m.forward(xs).value() == back.forward(xs).value()).all());
  }
}

TEST(Checkpoint, TruncatedFileIsRejected) {
  const auto path = std::filesystem::temp_directory_path() / "bev_unetxst_trunc.ckpt";
  save_checkpoint(path, M::build(small_config(Variant::SingleInput), 1).to_arrays());
  std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
  EXPECT_THROW(load_checkpoint(path), Error);
}

TEST(Model, SameSeedSameTrainingTrajectory) {
  const NetworkConfig cfg = small_config(Variant::MultiInputXst);
  auto run = [&] {
    std::mt19937_64 rng(8);
    M m = M::build(cfg, 21);
    AdamState<double> state;
    auto params = m.parameters();
    for (int step = 0; step < 3; ++step) {
      const T y = m.forward(random_inputs(rng, cfg));
      softmax_cross_entropy(y, test::random_tensor(rng, y.shape(), 0.0, 1.0), Eigen::VectorXd::Ones(5)).backward();
      adam_step(params, state, AdamConfig{});
      for (auto& p : params) p.zero_grad();
    }
    return m;
  };
  const M a = run(), b = run();
  for (std::size_t k = 0; k < a.convs().size(); ++k) {
    EXPECT_TRUE((a.convs()[k].weight.value() == b.convs()[k].weight.value()).all());
  }
  EXPECT_FALSE((M::build(cfg, 21).convs()[0].weight.value() == a.convs()[0].weight.value()).all());
}

}  // namespace
}  // namespace bev

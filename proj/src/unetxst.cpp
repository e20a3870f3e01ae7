#include "bev/unetxst.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "bev/semantics_io.hpp"

namespace bev {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::MultiInputXst: return "multi_input_xst";
    case Variant::MultiInputPlain: return "multi_input_plain";
    case Variant::SingleInput: return "single_input";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  if (name == "xst" || name == "multi_input_xst") return Variant::MultiInputXst;
  if (name == "plain" || name == "multi_input_plain") return Variant::MultiInputPlain;
  if (name == "single" || name == "single_input") return Variant::SingleInput;
  throw Error(ErrorKind::Configuration, "unknown network variant '" + name + "'");
}

void NetworkConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::Configuration, msg); };
  if (levels < 1) fail("levels must be at least 1");
  if (levels > 10) fail("levels must be at most 10");
  if (base_channels < 1) fail("base_channels must be positive");
  if (input_channels < 1 || class_count < 1) fail("channel counts must be positive");
  const int div = 1 << levels;
  if (input_height < div || input_width < div || input_height % div != 0 || input_width % div != 0) {
    fail("input resolution " + std::to_string(input_width) + "x" + std::to_string(input_height) +
         " is not divisible by 2^levels = " + std::to_string(div));
  }
  if (input_cameras.empty()) fail("at least one input camera is required");
  if (std::set<std::string>(input_cameras.begin(), input_cameras.end()).size() != input_cameras.size()) {
    fail("input camera names must be unique");
  }
  if (variant == Variant::SingleInput && input_cameras.size() != 1) fail("single_input takes exactly one input");
  const bool wants_hom = variant == Variant::MultiInputXst;
  if (wants_hom && homographies.size() != input_cameras.size()) fail("multi_input_xst needs one homography per camera");
  if (!wants_hom && !homographies.empty()) fail(to_string(variant) + " takes no homographies");
}

Eigen::Matrix3d scale_homography(const Eigen::Matrix3d& h, int level) {
  if (level < 0) throw Error(ErrorKind::Configuration, "pyramid level must be non-negative");
  // Pixel coordinates at level l are 2^-l times those at level 0, but the
  // normalized frame absorbs that factor on both sides: S^-1 * (S h S^-1) * S.
  return h;
}

template <class Scalar>
std::size_t Model<Scalar>::add_conv(const std::string& name, int cin, int cout, int k, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / (static_cast<double>(cin) * k * k));
  std::uniform_real_distribution<double> dist(-bound, bound);
  typename T::Array w(static_cast<Eigen::Index>(cout) * cin * k * k);
  for (auto& v : w) v = static_cast<Scalar>(dist(rng));
  convs_.push_back(Conv{name, T::from(Shape{cout, cin, k, k}, std::move(w), true),
                        T::zeros(Shape{1, cout, 1, 1}, true)});
  return convs_.size() - 1;
}

template <class Scalar>
void Model<Scalar>::make_plans() {
  plans_.clear();
  if (cfg_.variant != Variant::MultiInputXst) return;
  for (int s = 0; s < cfg_.streams(); ++s) {
    std::vector<SamplingPlan> per_level;
    for (int l = 0; l <= cfg_.levels; ++l) {
      const int h = cfg_.input_height >> l;
      const int w = cfg_.input_width >> l;
      per_level.emplace_back(scale_homography(cfg_.homographies[s], l), h, w, h, w);
    }
    plans_.push_back(std::move(per_level));
  }
}

template <class Scalar>
Model<Scalar> Model<Scalar>::build(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg_ = cfg;
  std::mt19937_64 rng(seed);
  const int streams = cfg.streams();
  m.encoder_.resize(streams);
  for (int s = 0; s < streams; ++s) {
    int cin = cfg.input_channels;
    for (int l = 0; l <= cfg.levels; ++l) {
      const std::string p = "enc" + std::to_string(s) + ".l" + std::to_string(l);
      const int c = cfg.channels_at(l);
      m.encoder_[s].push_back(m.add_conv(p + ".conv1", cin, c, 3, rng));
      m.add_conv(p + ".conv2", c, c, 3, rng);
      cin = c;
    }
  }
  for (int l = 0; l <= cfg.levels; ++l) {
    const int c = cfg.channels_at(l);
    m.fusion_.push_back(m.add_conv("fuse.l" + std::to_string(l), streams * c, c, 3, rng));
  }
  for (int l = cfg.levels - 1; l >= 0; --l) {
    const std::string p = "dec.l" + std::to_string(l);
    const int c = cfg.channels_at(l);
    m.decoder_.push_back(m.add_conv(p + ".conv1", cfg.channels_at(l + 1) + c, c, 3, rng));
    m.add_conv(p + ".conv2", c, c, 3, rng);
  }
  m.head_ = m.add_conv("head", cfg.channels_at(0), cfg.class_count, 1, rng);
  m.make_plans();
  return m;
}

template <class Scalar>
Tensor<Scalar> Model<Scalar>::forward(const std::vector<T>& inputs) const {
  const int streams = cfg_.streams();
  if (static_cast<int>(inputs.size()) != streams) {
    throw Error(ErrorKind::Input, "expected " + std::to_string(streams) + " input streams, got " +
                                      std::to_string(inputs.size()));
  }
  const Shape expect{inputs.front().shape().n, cfg_.input_channels, cfg_.input_height, cfg_.input_width};
  auto conv_relu = [&](const T& x, std::size_t i) { return relu(conv2d(x, convs_[i].weight, convs_[i].bias)); };

  std::vector<std::vector<T>> warped(cfg_.levels + 1);
  for (int s = 0; s < streams; ++s) {
    if (!(inputs[s].shape() == expect)) {
      throw Error(ErrorKind::Shape, "input '" + cfg_.input_cameras[s] + "' has shape " + inputs[s].shape().str() +
                                        ", expected " + expect.str());
    }
    T x = inputs[s];
    for (int l = 0; l <= cfg_.levels; ++l) {
      if (l > 0) x = maxpool2(x);
      x = conv_relu(conv_relu(x, encoder_[s][l]), encoder_[s][l] + 1);
      warped[l].push_back(plans_.empty() ? x : spatial_transform(x, plans_[s][l]));
    }
  }
  std::vector<T> fused;
  for (int l = 0; l <= cfg_.levels; ++l) fused.push_back(conv_relu(concat_channels(warped[l]), fusion_[l]));

  T x = fused[cfg_.levels];
  for (int l = cfg_.levels - 1, k = 0; l >= 0; --l, ++k) {
    x = concat_channels(std::vector<T>{upsample_nearest2(x), fused[l]});
    x = conv_relu(conv_relu(x, decoder_[k]), decoder_[k] + 1);
  }
  return conv2d(x, convs_[head_].weight, convs_[head_].bias, 1, 0);
}

template <class Scalar>
std::vector<Tensor<Scalar>> Model<Scalar>::parameters() const {
  std::vector<T> out;
  for (const auto& c : convs_) {
    out.push_back(c.weight);
    out.push_back(c.bias);
  }
  return out;
}

template <class Scalar>
std::size_t Model<Scalar>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += static_cast<std::size_t>(p.value().size());
  return n;
}

template <class Scalar>
void Model<Scalar>::copy_weights_from(const Model& other) {
  if (other.convs_.size() != convs_.size()) throw Error(ErrorKind::Shape, "models have different layer counts");
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    if (!(convs_[i].weight.shape() == other.convs_[i].weight.shape())) {
      throw Error(ErrorKind::Shape, "layer '" + convs_[i].name + "' differs: " + convs_[i].weight.shape().str() +
                                        " vs " + other.convs_[i].weight.shape().str());
    }
    convs_[i].weight.value() = other.convs_[i].weight.value();
    convs_[i].bias.value() = other.convs_[i].bias.value();
  }
}

namespace {

constexpr DType dtype_of(float) { return DType::F32; }
constexpr DType dtype_of(double) { return DType::F64; }

const NamedArray& find_array(const std::vector<NamedArray>& arrays, const std::string& name) {
  for (const auto& a : arrays) {
    if (a.name == name) return a;
  }
  throw Error(ErrorKind::Io, "checkpoint lacks array '" + name + "'");
}

}  // namespace

template <class Scalar>
std::vector<NamedArray> Model<Scalar>::to_arrays() const {
  std::vector<NamedArray> out;
  const NetworkConfig& c = cfg_;
  out.push_back({"config.ints", DType::F64, {8},
                 {static_cast<double>(c.variant), double(c.levels), double(c.base_channels), double(c.input_height),
                  double(c.input_width), double(c.input_channels), double(c.class_count), double(c.streams())}});
  for (int s = 0; s < c.streams(); ++s) out.push_back({"config.camera:" + c.input_cameras[s], DType::F64, {1}, {double(s)}});
  for (std::size_t s = 0; s < c.homographies.size(); ++s) {
    NamedArray h{"config.homography." + std::to_string(s), DType::F64, {3, 3}, {}};
    for (int r = 0; r < 3; ++r) {
      for (int k = 0; k < 3; ++k) h.data.push_back(c.homographies[s](r, k));
    }
    out.push_back(std::move(h));
  }
  for (const auto& conv : convs_) {
    const Shape ws = conv.weight.shape();
    const auto& w = conv.weight.value();
    const auto& b = conv.bias.value();
    out.push_back({conv.name + ".weight", dtype_of(Scalar{}),
                   {std::uint64_t(ws.n), std::uint64_t(ws.c), std::uint64_t(ws.h), std::uint64_t(ws.w)},
                   std::vector<double>(w.data(), w.data() + w.size())});
    out.push_back({conv.name + ".bias", dtype_of(Scalar{}), {std::uint64_t(ws.n)},
                   std::vector<double>(b.data(), b.data() + b.size())});
  }
  return out;
}

template <class Scalar>
Model<Scalar> Model<Scalar>::from_arrays(const std::vector<NamedArray>& arrays) {
  const auto& ints = find_array(arrays, "config.ints").data;
  if (ints.size() != 8) throw Error(ErrorKind::Io, "malformed config.ints in checkpoint");
  NetworkConfig cfg;
  cfg.variant = static_cast<Variant>(static_cast<int>(ints[0]));
  cfg.levels = static_cast<int>(ints[1]);
  cfg.base_channels = static_cast<int>(ints[2]);
  cfg.input_height = static_cast<int>(ints[3]);
  cfg.input_width = static_cast<int>(ints[4]);
  cfg.input_channels = static_cast<int>(ints[5]);
  cfg.class_count = static_cast<int>(ints[6]);
  cfg.input_cameras.resize(static_cast<std::size_t>(ints[7]));
  const std::string prefix = "config.camera:";
  for (const auto& a : arrays) {
    if (a.name.rfind(prefix, 0) != 0 || a.data.size() != 1) continue;
    const auto s = static_cast<std::size_t>(a.data[0]);
    if (s >= cfg.input_cameras.size()) throw Error(ErrorKind::Io, "camera index out of range in checkpoint");
    cfg.input_cameras[s] = a.name.substr(prefix.size());
  }
  if (cfg.variant == Variant::MultiInputXst) {
    for (std::size_t s = 0; s < cfg.input_cameras.size(); ++s) {
      const auto& h = find_array(arrays, "config.homography." + std::to_string(s)).data;
      if (h.size() != 9) throw Error(ErrorKind::Io, "malformed homography in checkpoint");
      Eigen::Matrix3d m;
      for (int r = 0; r < 3; ++r) {
        for (int k = 0; k < 3; ++k) m(r, k) = h[3 * r + k];
      }
      cfg.homographies.push_back(m);
    }
  }
  Model model = build(cfg, 0);
  for (auto& conv : model.convs_) {
    for (auto* t : {&conv.weight, &conv.bias}) {
      const auto& a = find_array(arrays, conv.name + (t == &conv.weight ? ".weight" : ".bias"));
      if (static_cast<Eigen::Index>(a.data.size()) != t->value().size()) {
        throw Error(ErrorKind::Shape, "checkpoint array '" + a.name + "' has the wrong size");
      }
      for (std::size_t i = 0; i < a.data.size(); ++i) t->value()(static_cast<Eigen::Index>(i)) = static_cast<Scalar>(a.data[i]);
    }
  }
  return model;
}

template <class Scalar>
SemanticImage decode_logits(const Tensor<Scalar>& logits, int item, PaletteRef palette) {
  const Shape s = logits.shape();
  if (item < 0 || item >= s.n) throw Error(ErrorKind::Shape, "batch item out of range for " + s.str());
  if (static_cast<std::size_t>(s.c) != palette->size()) {
    throw Error(ErrorKind::Shape, "logit channels do not match the palette size");
  }
  const Eigen::Map<const Planes<Scalar>> planes(logits.value().data() + Eigen::Index(item) * s.c * s.plane(), s.c,
                                                s.plane());
  return decode_argmax<Scalar>(planes, s.w, s.h, std::move(palette));
}

template <class Scalar>
Tensor<Scalar> onehot_batch(const std::vector<const SemanticImage*>& images, int channels) {
  if (images.empty()) throw Error(ErrorKind::Shape, "empty batch");
  const int h = images.front()->height();
  const int w = images.front()->width();
  const Shape shape{static_cast<int>(images.size()), channels, h, w};
  typename Tensor<Scalar>::Array values = Tensor<Scalar>::Array::Zero(shape.size());
  for (std::size_t n = 0; n < images.size(); ++n) {
    const SemanticImage& img = *images[n];
    if (img.height() != h || img.width() != w) throw Error(ErrorKind::Shape, "batch images differ in size");
    const ClassIndex* src = img.labels.data();
    const Eigen::Index base = Eigen::Index(n) * channels * shape.plane();
    for (Eigen::Index p = 0; p < shape.plane(); ++p) {
      if (src[p] >= channels) throw Error(ErrorKind::Palette, "label index exceeds channel count");
      values(base + Eigen::Index(src[p]) * shape.plane() + p) = Scalar(1);
    }
  }
  return Tensor<Scalar>::from(shape, std::move(values));
}

template <class Scalar>
SemanticImage predict(const Model<Scalar>& model, const std::map<std::string, SemanticImage>& views,
                      PaletteRef palette) {
  const auto& cams = model.config().input_cameras;
  std::set<std::string> given;
  for (const auto& [name, img] : views) given.insert(name);
  if (given != std::set<std::string>(cams.begin(), cams.end())) {
    std::string have;
    for (const auto& n : given) have += (have.empty() ? "" : ", ") + n;
    throw Error(ErrorKind::Input, "camera set {" + have + "} does not match the model's inputs");
  }
  NoGradGuard no_grad;
  std::vector<Tensor<Scalar>> inputs;
  for (const auto& name : cams) {
    inputs.push_back(onehot_batch<Scalar>({&views.at(name)}, model.config().input_channels));
  }
  return decode_logits(model.forward(inputs), 0, std::move(palette));
}

#define BEV_INSTANTIATE_NET(Scalar)                                                                         \
  template class Model<Scalar>;                                                                             \
  template SemanticImage decode_logits(const Tensor<Scalar>&, int, PaletteRef);                             \
  template SemanticImage predict(const Model<Scalar>&, const std::map<std::string, SemanticImage>&, PaletteRef); \
  template Tensor<Scalar> onehot_batch(const std::vector<const SemanticImage*>&, int);

BEV_INSTANTIATE_NET(float)
BEV_INSTANTIATE_NET(double)

}  // namespace bev

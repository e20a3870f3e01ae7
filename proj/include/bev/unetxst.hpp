#pragma once

// Multi-stream encoder-decoder networks that map camera label images to a
// BEV label grid.
//
//   multi_input_xst    one encoder per camera; at every scale each stream's
//                      features are warped into the BEV frame by a fixed
//                      projective transform, concatenated across streams and
//                      convolved; the result is the skip connection
//   multi_input_plain  the same wiring without the warps
//   single_input       one stream consuming the stitched homography image
//
// Encoder level l has base_channels * 2^l channels; the deepest level is the
// bottleneck and is fused like the others.

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bev/checkpoint.hpp"
#include "bev/ops.hpp"
#include "bev/semantic_image.hpp"
#include "bev/tensor.hpp"

namespace bev {

enum class Variant { MultiInputXst, MultiInputPlain, SingleInput };

std::string to_string(Variant v);
/// Accepts the long names and the short CLI spellings xst / plain / single.
Variant parse_variant(const std::string& name);

struct NetworkConfig {
  Variant variant = Variant::MultiInputXst;
  int levels = 4;
  int base_channels = 8;
  int input_height = 64;
  int input_width = 128;
  int input_channels = 10;
  int class_count = 10;
  std::vector<std::string> input_cameras;
  /// One per camera for multi_input_xst, empty otherwise. Each maps BEV
  /// normalized coordinates of the output to the camera's normalized
  /// coordinates, both in [-1, 1].
  std::vector<Eigen::Matrix3d> homographies;

  int streams() const { return static_cast<int>(input_cameras.size()); }
  int channels_at(int level) const { return base_channels << level; }
  void validate() const;
};

/// Expresses h in the normalized coordinates of pyramid level `level`. With
/// resolution-independent [-1, 1] coordinates this is h itself.
Eigen::Matrix3d scale_homography(const Eigen::Matrix3d& h, int level);

template <class Scalar>
class Model {
 public:
  using T = Tensor<Scalar>;

  struct Conv {
    std::string name;
    T weight;
    T bias;
  };

  /// He-uniform weights from `seed`, zero biases.
  static Model build(const NetworkConfig& cfg, std::uint64_t seed);

  const NetworkConfig& config() const { return cfg_; }

  /// One (N, input_channels, H, W) tensor per camera, in config order.
  /// Returns (N, class_count, H, W) logits.
  T forward(const std::vector<T>& inputs) const;

  std::vector<T> parameters() const;
  std::size_t parameter_count() const;
  std::vector<Conv>& convs() { return convs_; }
  const std::vector<Conv>& convs() const { return convs_; }

  /// Copies weight values from a model with the same layer shapes.
  void copy_weights_from(const Model& other);

  std::vector<NamedArray> to_arrays() const;
  /// Rebuilds a model, configuration included, from a checkpoint.
  static Model from_arrays(const std::vector<NamedArray>& arrays);

 private:
  std::size_t add_conv(const std::string& name, int cin, int cout, int k, std::mt19937_64& rng);
  void make_plans();

  NetworkConfig cfg_;
  std::vector<Conv> convs_;
  // Indices into convs_: encoder[stream][level] holds the first of two convs.
  std::vector<std::vector<std::size_t>> encoder_;
  std::vector<std::size_t> fusion_;
  std::vector<std::size_t> decoder_;
  std::size_t head_ = 0;
  // Sampling plans per stream and level (multi_input_xst only).
  std::vector<std::vector<SamplingPlan>> plans_;
};

/// Per-pixel argmax of the logits of batch item `item`.
template <class Scalar>
SemanticImage decode_logits(const Tensor<Scalar>& logits, int item, PaletteRef palette);

/// Forward pass without graph recording on named camera inputs. Throws an
/// input error when the camera names differ from the configuration.
template <class Scalar>
SemanticImage predict(const Model<Scalar>& model, const std::map<std::string, SemanticImage>& views,
                      PaletteRef palette);

/// One-hot encodes label images of equal size into an (N, C, H, W) tensor.
template <class Scalar>
Tensor<Scalar> onehot_batch(const std::vector<const SemanticImage*>& images, int channels);

}  // namespace bev

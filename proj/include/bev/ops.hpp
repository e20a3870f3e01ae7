#pragma once

// Differentiable layers. All tensors are NCHW; every op validates shapes and
// throws ErrorKind::Shape naming the offending shapes.

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "bev/tensor.hpp"

namespace bev {

/// Zero-padded 2-D cross-correlation. `weights` is (Cout, Cin, k, k), `bias`
/// is (1, Cout, 1, 1) or undefined. `padding < 0` selects "same" (k / 2).
template <class Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& weights, const Tensor<Scalar>& bias,
                      int stride = 1, int padding = -1);

template <class Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x);

/// 2x2 max pooling with stride 2; ties pick the first element in row order.
template <class Scalar>
Tensor<Scalar> maxpool2(const Tensor<Scalar>& x);

template <class Scalar>
Tensor<Scalar> upsample_nearest2(const Tensor<Scalar>& x);

template <class Scalar>
Tensor<Scalar> concat_channels(const std::vector<Tensor<Scalar>>& xs);

template <class Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <class Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar s);

/// Sum of all elements.
template <class Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a);

/// sum_i a_i * r_i for a constant r; handy for gradient checks.
template <class Scalar>
Tensor<Scalar> weighted_sum(const Tensor<Scalar>& a, const typename Tensor<Scalar>::Array& r);

/// Precomputed bilinear taps of a projective resampling. Output pixel centers
/// are expressed in normalized coordinates ((2j + 1) / W - 1, ...) in [-1, 1],
/// mapped through the homography into the input's normalized coordinates and
/// sampled bilinearly; taps outside the input contribute zero.
class SamplingPlan {
 public:
  SamplingPlan(const Eigen::Matrix3d& hom, int in_h, int in_w, int out_h, int out_w);

  static SamplingPlan identity(int h, int w) { return SamplingPlan(Eigen::Matrix3d::Identity(), h, w, h, w); }

  int in_h() const { return in_h_; }
  int in_w() const { return in_w_; }
  int out_h() const { return out_h_; }
  int out_w() const { return out_w_; }

  struct Taps {
    std::array<std::int32_t, 4> index{-1, -1, -1, -1};
    std::array<double, 4> weight{0.0, 0.0, 0.0, 0.0};
  };
  const std::vector<Taps>& taps() const { return *taps_; }
  /// Shared so recorded graph nodes can hold on to the taps cheaply.
  const std::shared_ptr<const std::vector<Taps>>& shared_taps() const { return taps_; }

 private:
  int in_h_, in_w_, out_h_, out_w_;
  std::shared_ptr<const std::vector<Taps>> taps_;
};

/// Differentiable w.r.t. x only; the homography is a fixed constant.
template <class Scalar>
Tensor<Scalar> spatial_transform(const Tensor<Scalar>& x, const SamplingPlan& plan);

template <class Scalar>
Tensor<Scalar> spatial_transform(const Tensor<Scalar>& x, const Eigen::Matrix3d& hom);

/// Mean over pixels of sum_c t_c * w_c * (-log softmax(logits)_c). With a
/// one-hot target this is the class-weighted cross entropy.
template <class Scalar>
Tensor<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, const Tensor<Scalar>& target,
                                     const Eigen::VectorXd& weights);

}  // namespace bev

#pragma once

// Shared fixtures for the unit and acceptance tests.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "bev/camera_geometry.hpp"
#include "bev/semantic_image.hpp"
#include "bev/tensor.hpp"

namespace bev::test {

inline PaletteRef palette() { return Palette::standard(); }

inline ClassIndex cls(const char* name) { return palette()->index_of(name); }

/// Uniform random labels over the first `classes` palette entries.
inline SemanticImage random_labels(std::mt19937_64& rng, int w, int h, int classes = 10) {
  std::uniform_int_distribution<int> d(0, classes - 1);
  SemanticImage img(w, h, palette());
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) img(i, j) = static_cast<ClassIndex>(d(rng));
  }
  return img;
}

/// A plausible vehicle camera: 1-3 m high, pitched down 5-40 degrees, any yaw
/// and a small roll, random focal length and image size.
inline CameraModel random_camera(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  CameraModel cam;
  cam.name = "cam";
  cam.width = 160 + static_cast<int>(u(rng) * 800);
  cam.height = 120 + static_cast<int>(u(rng) * 500);
  cam.fov_deg = 50.0 + 70.0 * u(rng);
  cam.intrinsics = Intrinsics::from_fov(cam.fov_deg, cam.width, cam.height);
  cam.intrinsics.skew = 0.01 * (u(rng) - 0.5);
  const Eigen::Vector3d pos(4.0 * (u(rng) - 0.5), 2.0 * (u(rng) - 0.5), 1.0 + 2.0 * u(rng));
  cam.extrinsics = Extrinsics::from_pose(360.0 * u(rng), -5.0 - 35.0 * u(rng), 6.0 * (u(rng) - 0.5), pos);
  return cam;
}

/// Largest relative error between analytic and central-difference gradients
/// of the scalar function f at x. The relative error of each coordinate is
/// |a - n| / max(1, |a|, |n|), which degrades to absolute error near zero.
template <class Scalar>
double gradient_error(const std::function<Tensor<Scalar>(const Tensor<Scalar>&)>& f, Tensor<Scalar> x,
                      double step = 1e-5) {
  x.node().requires_grad = true;
  x.zero_grad();
  f(x).backward();
  const typename Tensor<Scalar>::Array analytic = x.grad();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.value().size(); ++i) {
    const Scalar saved = x.value()(i);
    Tensor<Scalar> probe = Tensor<Scalar>::from(x.shape(), x.value());
    probe.value()(i) = saved + step;
    const double up = f(probe).item();
    probe.value()(i) = saved - step;
    const double down = f(probe).item();
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic.size() ? analytic(i) : 0.0;
    const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    worst = std::max(worst, err);
  }
  return worst;
}

inline Tensor<double> random_tensor(std::mt19937_64& rng, const Shape& s, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double>::Array v(s.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = d(rng);
  return Tensor<double>::from(s, std::move(v));
}

}  // namespace bev::test

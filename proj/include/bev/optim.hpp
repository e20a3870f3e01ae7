#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "bev/tensor.hpp"

namespace bev {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-7;

  void validate() const {
    if (!(lr > 0.0) || !(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0) || !(eps > 0.0)) {
      throw Error(ErrorKind::Configuration, "adam needs lr > 0, betas in (0, 1) and eps > 0");
    }
  }
};

template <class Scalar>
struct AdamState {
  using Array = typename Tensor<Scalar>::Array;
  std::vector<Array> m;
  std::vector<Array> v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update of every parameter from its gradient.
/// Parameters whose gradient slot is empty are treated as having zero
/// gradient (their moments still decay).
template <class Scalar>
void adam_step(std::vector<Tensor<Scalar>>& params, AdamState<Scalar>& state, const AdamConfig& cfg) {
  using Array = typename Tensor<Scalar>::Array;
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Array::Zero(p.value().size()));
      state.v.push_back(Array::Zero(p.value().size()));
    }
  }
  if (state.m.size() != params.size()) throw Error(ErrorKind::Shape, "adam state does not match parameter list");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const Scalar b1 = static_cast<Scalar>(cfg.beta1);
  const Scalar b2 = static_cast<Scalar>(cfg.beta2);
  const Scalar step_size = static_cast<Scalar>(cfg.lr / c1);
  const Scalar root_c2 = static_cast<Scalar>(std::sqrt(c2));
  const Scalar eps = static_cast<Scalar>(cfg.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Array& value = params[k].value();
    if (state.m[k].size() != value.size()) throw Error(ErrorKind::Shape, "adam state does not match parameter size");
    const Array& g = params[k].grad();
    if (g.size() == value.size()) {
      state.m[k] = b1 * state.m[k] + (Scalar(1) - b1) * g;
      state.v[k] = b2 * state.v[k] + (Scalar(1) - b2) * g.square();
    } else {
      state.m[k] *= b1;
      state.v[k] *= b2;
    }
    value -= step_size * state.m[k] / (state.v[k].sqrt() / root_c2 + eps);
  }
}

}  // namespace bev

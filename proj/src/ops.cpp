#include "bev/ops.hpp"

#include <cmath>
#include <memory>

namespace bev {

namespace {

template <class Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class Scalar>
using Node = typename Tensor<Scalar>::Node;

[[noreturn]] void shape_error(const std::string& what, const Shape& a, const Shape& b) {
  throw Error(ErrorKind::Shape, what + ": " + a.str() + " vs " + b.str());
}

struct ConvGeometry {
  int cin, h, w, k, stride, pad, hout, wout;
  Eigen::Index rows() const { return Eigen::Index(cin) * k * k; }
  Eigen::Index cols() const { return Eigen::Index(hout) * wout; }
};

template <class Scalar>
void im2col(const Scalar* src, const ConvGeometry& g, RowMat<Scalar>& cols) {
  for (int ci = 0; ci < g.cin; ++ci) {
    const Scalar* plane = src + Eigen::Index(ci) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        Scalar* dst = cols.row((Eigen::Index(ci) * g.k + ky) * g.k + kx).data();
        for (int oy = 0; oy < g.hout; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          Scalar* out = dst + Eigen::Index(oy) * g.wout;
          if (iy < 0 || iy >= g.h) {
            std::fill(out, out + g.wout, Scalar(0));
            continue;
          }
          const Scalar* in = plane + Eigen::Index(iy) * g.w;
          for (int ox = 0; ox < g.wout; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            out[ox] = (ix >= 0 && ix < g.w) ? in[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <class Scalar>
void col2im_add(const RowMat<Scalar>& cols, const ConvGeometry& g, Scalar* dst) {
  for (int ci = 0; ci < g.cin; ++ci) {
    Scalar* plane = dst + Eigen::Index(ci) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const Scalar* src = cols.row((Eigen::Index(ci) * g.k + ky) * g.k + kx).data();
        for (int oy = 0; oy < g.hout; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const Scalar* in = src + Eigen::Index(oy) * g.wout;
          Scalar* out = plane + Eigen::Index(iy) * g.w;
          for (int ox = 0; ox < g.wout; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) out[ix] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <class Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& weights, const Tensor<Scalar>& bias, int stride,
                      int padding) {
  const Shape xs = x.shape();
  const Shape ws = weights.shape();
  if (ws.c != xs.c || ws.h != ws.w) shape_error("conv2d input/weight mismatch", xs, ws);
  if (stride < 1) throw Error(ErrorKind::Shape, "conv2d stride must be positive");
  const bool has_bias = bias.defined();
  if (has_bias && !(bias.shape() == Shape{1, ws.n, 1, 1})) shape_error("conv2d bias mismatch", bias.shape(), ws);
  ConvGeometry g{xs.c, xs.h, xs.w, ws.h, stride, padding < 0 ? ws.h / 2 : padding, 0, 0};
  g.hout = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wout = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  if (g.hout <= 0 || g.wout <= 0) shape_error("conv2d kernel larger than padded input", xs, ws);
  const int cout = ws.n;
  const Shape out_shape{xs.n, cout, g.hout, g.wout};
  const Eigen::Index out_item = Eigen::Index(cout) * g.cols();
  const Eigen::Index in_item = xs.size() / xs.n;

  typename Tensor<Scalar>::Array out(out_shape.size());
  RowMat<Scalar> cols(g.rows(), g.cols());
  const Eigen::Map<const RowMat<Scalar>> wmat(weights.value().data(), cout, g.rows());
  for (int n = 0; n < xs.n; ++n) {
    im2col(x.value().data() + n * in_item, g, cols);
    Eigen::Map<RowMat<Scalar>> o(out.data() + n * out_item, cout, g.cols());
    o.noalias() = wmat * cols;
    if (has_bias) o.colwise() += bias.value().matrix();
  }

  std::vector<Tensor<Scalar>> parents{x, weights};
  if (has_bias) parents.push_back(bias);
  return Tensor<Scalar>::make_result(
      out_shape, std::move(out), std::move(parents), [g, has_bias, cout, out_item, in_item, batch = xs.n](Node<Scalar>& self) {
        Node<Scalar>& xn = *self.parents[0];
        Node<Scalar>& wn = *self.parents[1];
        const Eigen::Map<const RowMat<Scalar>> wmat(wn.value.data(), cout, g.rows());
        RowMat<Scalar> cols(g.rows(), g.cols());
        RowMat<Scalar> dcols;
        for (int n = 0; n < batch; ++n) {
          const Eigen::Map<const RowMat<Scalar>> go(self.grad.data() + n * out_item, cout, g.cols());
          if (wn.requires_grad) {
            im2col(xn.value.data() + n * in_item, g, cols);
            Eigen::Map<RowMat<Scalar>> gw(wn.ensure_grad().data(), cout, g.rows());
            gw.noalias() += go * cols.transpose();
          }
          if (has_bias && self.parents[2]->requires_grad) {
            self.parents[2]->ensure_grad().matrix() += go.rowwise().sum();
          }
          if (xn.requires_grad) {
            dcols.noalias() = wmat.transpose() * go;
            col2im_add(dcols, g, xn.ensure_grad().data() + n * in_item);
          }
        }
      });
}

template <class Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  return Tensor<Scalar>::make_result(x.shape(), x.value().max(Scalar(0)), {x}, [](Node<Scalar>& self) {
    Node<Scalar>& xn = *self.parents[0];
    xn.ensure_grad() += (xn.value > Scalar(0)).select(self.grad, Scalar(0));
  });
}

template <class Scalar>
Tensor<Scalar> maxpool2(const Tensor<Scalar>& x) {
  const Shape xs = x.shape();
  if (xs.h < 2 || xs.w < 2) throw Error(ErrorKind::Shape, "maxpool2 needs at least 2x2 input, got " + xs.str());
  const Shape os{xs.n, xs.c, xs.h / 2, xs.w / 2};
  typename Tensor<Scalar>::Array out(os.size());
  std::vector<std::int32_t> arg(static_cast<std::size_t>(os.size()));
  const Scalar* in = x.value().data();
  for (Eigen::Index plane = 0; plane < Eigen::Index(xs.n) * xs.c; ++plane) {
    const Eigen::Index ib = plane * xs.plane();
    const Eigen::Index ob = plane * os.plane();
    for (int oy = 0; oy < os.h; ++oy) {
      for (int ox = 0; ox < os.w; ++ox) {
        Eigen::Index best = ib + Eigen::Index(2 * oy) * xs.w + 2 * ox;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const Eigen::Index idx = ib + Eigen::Index(2 * oy + dy) * xs.w + 2 * ox + dx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        out(ob + Eigen::Index(oy) * os.w + ox) = in[best];
        arg[ob + Eigen::Index(oy) * os.w + ox] = static_cast<std::int32_t>(best);
      }
    }
  }
  return Tensor<Scalar>::make_result(os, std::move(out), {x}, [arg = std::move(arg)](Node<Scalar>& self) {
    auto& gx = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < arg.size(); ++i) gx(arg[i]) += self.grad(static_cast<Eigen::Index>(i));
  });
}

template <class Scalar>
Tensor<Scalar> upsample_nearest2(const Tensor<Scalar>& x) {
  const Shape xs = x.shape();
  const Shape os{xs.n, xs.c, 2 * xs.h, 2 * xs.w};
  typename Tensor<Scalar>::Array out(os.size());
  const Scalar* in = x.value().data();
  for (Eigen::Index plane = 0; plane < Eigen::Index(xs.n) * xs.c; ++plane) {
    const Scalar* ip = in + plane * xs.plane();
    Scalar* op = out.data() + plane * os.plane();
    for (int oy = 0; oy < os.h; ++oy) {
      for (int ox = 0; ox < os.w; ++ox) op[Eigen::Index(oy) * os.w + ox] = ip[Eigen::Index(oy / 2) * xs.w + ox / 2];
    }
  }
  return Tensor<Scalar>::make_result(os, std::move(out), {x}, [xs, os](Node<Scalar>& self) {
    auto& gx = self.parents[0]->ensure_grad();
    for (Eigen::Index plane = 0; plane < Eigen::Index(xs.n) * xs.c; ++plane) {
      Scalar* ip = gx.data() + plane * xs.plane();
      const Scalar* op = self.grad.data() + plane * os.plane();
      for (int oy = 0; oy < os.h; ++oy) {
        for (int ox = 0; ox < os.w; ++ox) ip[Eigen::Index(oy / 2) * xs.w + ox / 2] += op[Eigen::Index(oy) * os.w + ox];
      }
    }
  });
}

template <class Scalar>
Tensor<Scalar> concat_channels(const std::vector<Tensor<Scalar>>& xs) {
  if (xs.empty()) throw Error(ErrorKind::Shape, "concat_channels needs at least one tensor");
  Shape os = xs.front().shape();
  os.c = 0;
  for (const auto& t : xs) {
    const Shape s = t.shape();
    if (s.n != os.n || s.h != os.h || s.w != os.w) shape_error("concat_channels mismatch", xs.front().shape(), s);
    os.c += s.c;
  }
  typename Tensor<Scalar>::Array out(os.size());
  const Eigen::Index out_item = Eigen::Index(os.c) * os.plane();
  std::vector<Eigen::Index> offsets;
  Eigen::Index offset = 0;
  for (const auto& t : xs) {
    offsets.push_back(offset);
    const Eigen::Index item = Eigen::Index(t.shape().c) * os.plane();
    for (int n = 0; n < os.n; ++n) {
      out.segment(n * out_item + offset, item) = t.value().segment(n * item, item);
    }
    offset += item;
  }
  return Tensor<Scalar>::make_result(os, std::move(out), xs, [os, out_item, offsets](Node<Scalar>& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node<Scalar>& p = *self.parents[k];
      if (!p.requires_grad) continue;
      const Eigen::Index item = Eigen::Index(p.shape.c) * os.plane();
      auto& g = p.ensure_grad();
      for (int n = 0; n < os.n; ++n) g.segment(n * item, item) += self.grad.segment(n * out_item + offsets[k], item);
    }
  });
}

template <class Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (!(a.shape() == b.shape())) shape_error("add mismatch", a.shape(), b.shape());
  return Tensor<Scalar>::make_result(a.shape(), a.value() + b.value(), {a, b}, [](Node<Scalar>& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) p->ensure_grad() += self.grad;
    }
  });
}

template <class Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar s) {
  return Tensor<Scalar>::make_result(a.shape(), a.value() * s, {a},
                                     [s](Node<Scalar>& self) { self.parents[0]->ensure_grad() += s * self.grad; });
}

template <class Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  typename Tensor<Scalar>::Array out(1);
  out(0) = a.value().sum();
  return Tensor<Scalar>::make_result(Shape{}, std::move(out), {a},
                                     [](Node<Scalar>& self) { self.parents[0]->ensure_grad() += self.grad(0); });
}

template <class Scalar>
Tensor<Scalar> weighted_sum(const Tensor<Scalar>& a, const typename Tensor<Scalar>::Array& r) {
  if (r.size() != a.value().size()) throw Error(ErrorKind::Shape, "weighted_sum weights do not match " + a.shape().str());
  typename Tensor<Scalar>::Array out(1);
  out(0) = (a.value() * r).sum();
  return Tensor<Scalar>::make_result(Shape{}, std::move(out), {a},
                                     [r](Node<Scalar>& self) { self.parents[0]->ensure_grad() += self.grad(0) * r; });
}

// ---------------------------------------------------------------------------
// Projective resampling

SamplingPlan::SamplingPlan(const Eigen::Matrix3d& hom, int in_h, int in_w, int out_h, int out_w)
    : in_h_(in_h), in_w_(in_w), out_h_(out_h), out_w_(out_w) {
  if (in_h <= 0 || in_w <= 0 || out_h <= 0 || out_w <= 0) throw Error(ErrorKind::Shape, "sampling plan needs positive sizes");
  Eigen::FullPivLU<Eigen::Matrix3d> lu(hom);
  if (!hom.allFinite() || !lu.isInvertible()) {
    throw Error(ErrorKind::DegenerateTransform, "spatial transform homography is singular");
  }
  // Coordinates closer than this to an integer are snapped onto it, so an
  // identity map samples exactly one tap.
  constexpr double snap = 1e-9;
  auto taps = std::make_shared<std::vector<Taps>>(static_cast<std::size_t>(out_h) * out_w);
  for (int i = 0; i < out_h; ++i) {
    const double yn = (2.0 * i + 1.0) / out_h - 1.0;
    for (int j = 0; j < out_w; ++j) {
      const double xn = (2.0 * j + 1.0) / out_w - 1.0;
      const Eigen::Vector3d s = hom * Eigen::Vector3d(xn, yn, 1.0);
      Taps& t = (*taps)[static_cast<std::size_t>(i) * out_w + j];
      if (!(s(2) > 0.0)) continue;
      double u = (s(0) / s(2) + 1.0) * 0.5 * in_w - 0.5;
      double v = (s(1) / s(2) + 1.0) * 0.5 * in_h - 0.5;
      if (!std::isfinite(u) || !std::isfinite(v)) continue;
      if (std::abs(u - std::round(u)) < snap) u = std::round(u);
      if (std::abs(v - std::round(v)) < snap) v = std::round(v);
      const double u0 = std::floor(u);
      const double v0 = std::floor(v);
      if (u0 < -1.0 || v0 < -1.0 || u0 > in_w || v0 > in_h) continue;
      const double fu = u - u0;
      const double fv = v - v0;
      const int x0 = static_cast<int>(u0);
      const int y0 = static_cast<int>(v0);
      const double w[4] = {(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv};
      const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
      const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
      for (int k = 0; k < 4; ++k) {
        if (w[k] == 0.0 || xs[k] < 0 || ys[k] < 0 || xs[k] >= in_w || ys[k] >= in_h) continue;
        t.index[k] = ys[k] * in_w + xs[k];
        t.weight[k] = w[k];
      }
    }
  }
  taps_ = std::move(taps);
}

template <class Scalar>
Tensor<Scalar> spatial_transform(const Tensor<Scalar>& x, const SamplingPlan& plan) {
  const Shape xs = x.shape();
  if (xs.h != plan.in_h() || xs.w != plan.in_w()) {
    shape_error("spatial_transform input does not match plan", xs, Shape{xs.n, xs.c, plan.in_h(), plan.in_w()});
  }
  const Shape os{xs.n, xs.c, plan.out_h(), plan.out_w()};
  typename Tensor<Scalar>::Array out(os.size());
  const auto& taps = plan.taps();
  for (Eigen::Index plane = 0; plane < Eigen::Index(xs.n) * xs.c; ++plane) {
    const Scalar* ip = x.value().data() + plane * xs.plane();
    Scalar* op = out.data() + plane * os.plane();
    for (std::size_t p = 0; p < taps.size(); ++p) {
      const auto& t = taps[p];
      Scalar acc(0);
      bool first = true;
      for (int k = 0; k < 4; ++k) {
        if (t.index[k] < 0) continue;
        const Scalar term = static_cast<Scalar>(t.weight[k]) * ip[t.index[k]];
        acc = first ? term : acc + term;
        first = false;
      }
      op[p] = acc;
    }
  }
  return Tensor<Scalar>::make_result(os, std::move(out), {x}, [xs, os, shared_taps = plan.shared_taps()](Node<Scalar>& self) {
    auto& gx = self.parents[0]->ensure_grad();
    const auto& taps = *shared_taps;
    for (Eigen::Index plane = 0; plane < Eigen::Index(xs.n) * xs.c; ++plane) {
      Scalar* ip = gx.data() + plane * xs.plane();
      const Scalar* op = self.grad.data() + plane * os.plane();
      for (std::size_t p = 0; p < taps.size(); ++p) {
        const auto& t = taps[p];
        for (int k = 0; k < 4; ++k) {
          if (t.index[k] >= 0) ip[t.index[k]] += static_cast<Scalar>(t.weight[k]) * op[p];
        }
      }
    }
  });
}

template <class Scalar>
Tensor<Scalar> spatial_transform(const Tensor<Scalar>& x, const Eigen::Matrix3d& hom) {
  return spatial_transform(x, SamplingPlan(hom, x.shape().h, x.shape().w, x.shape().h, x.shape().w));
}

// ---------------------------------------------------------------------------
// Loss

template <class Scalar>
Tensor<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, const Tensor<Scalar>& target,
                                     const Eigen::VectorXd& weights) {
  const Shape s = logits.shape();
  if (!(target.shape() == s)) shape_error("softmax_cross_entropy target mismatch", s, target.shape());
  if (weights.size() != s.c) throw Error(ErrorKind::Shape, "class weight count does not match " + s.str());
  if (!((weights.array() > 0.0).all() && weights.allFinite())) {
    throw Error(ErrorKind::Configuration, "class weights must be positive and finite");
  }
  const Eigen::Index plane = s.plane();
  const double count = static_cast<double>(s.n) * static_cast<double>(plane);
  typename Tensor<Scalar>::Array prob(s.size());
  double total = 0.0;
  const Scalar* z = logits.value().data();
  const Scalar* t = target.value().data();
  for (int n = 0; n < s.n; ++n) {
    const Eigen::Index base = Eigen::Index(n) * s.c * plane;
    for (Eigen::Index p = 0; p < plane; ++p) {
      double zmax = z[base + p];
      for (int c = 1; c < s.c; ++c) zmax = std::max(zmax, static_cast<double>(z[base + c * plane + p]));
      double norm = 0.0;
      for (int c = 0; c < s.c; ++c) norm += std::exp(static_cast<double>(z[base + c * plane + p]) - zmax);
      const double log_norm = std::log(norm);
      for (int c = 0; c < s.c; ++c) {
        const Eigen::Index i = base + c * plane + p;
        const double log_prob = static_cast<double>(z[i]) - zmax - log_norm;
        prob(i) = static_cast<Scalar>(std::exp(log_prob));
        if (t[i] != Scalar(0)) total -= static_cast<double>(t[i]) * weights(c) * log_prob;
      }
    }
  }
  typename Tensor<Scalar>::Array out(1);
  out(0) = static_cast<Scalar>(total / count);
  return Tensor<Scalar>::make_result(
      Shape{}, std::move(out), {logits, target}, [s, plane, count, weights, prob = std::move(prob)](Node<Scalar>& self) {
        Node<Scalar>& ln = *self.parents[0];
        if (!ln.requires_grad) return;
        const Scalar* t = self.parents[1]->value.data();
        auto& g = ln.ensure_grad();
        const double scale = static_cast<double>(self.grad(0)) / count;
        for (int n = 0; n < s.n; ++n) {
          const Eigen::Index base = Eigen::Index(n) * s.c * plane;
          for (Eigen::Index p = 0; p < plane; ++p) {
            double tw = 0.0;
            for (int c = 0; c < s.c; ++c) tw += static_cast<double>(t[base + c * plane + p]) * weights(c);
            for (int c = 0; c < s.c; ++c) {
              const Eigen::Index i = base + c * plane + p;
              g(i) += static_cast<Scalar>(scale * (static_cast<double>(prob(i)) * tw - static_cast<double>(t[i]) * weights(c)));
            }
          }
        }
      });
}

#define BEV_INSTANTIATE_OPS(Scalar)                                                                              \
  template Tensor<Scalar> conv2d(const Tensor<Scalar>&, const Tensor<Scalar>&, const Tensor<Scalar>&, int, int); \
  template Tensor<Scalar> relu(const Tensor<Scalar>&);                                                           \
  template Tensor<Scalar> maxpool2(const Tensor<Scalar>&);                                                       \
  template Tensor<Scalar> upsample_nearest2(const Tensor<Scalar>&);                                              \
  template Tensor<Scalar> concat_channels(const std::vector<Tensor<Scalar>>&);                                   \
  template Tensor<Scalar> add(const Tensor<Scalar>&, const Tensor<Scalar>&);                                     \
  template Tensor<Scalar> scale(const Tensor<Scalar>&, Scalar);                                                  \
  template Tensor<Scalar> sum(const Tensor<Scalar>&);                                                            \
  template Tensor<Scalar> weighted_sum(const Tensor<Scalar>&, const typename Tensor<Scalar>::Array&);            \
  template Tensor<Scalar> spatial_transform(const Tensor<Scalar>&, const SamplingPlan&);                         \
  template Tensor<Scalar> spatial_transform(const Tensor<Scalar>&, const Eigen::Matrix3d&);                      \
  template Tensor<Scalar> softmax_cross_entropy(const Tensor<Scalar>&, const Tensor<Scalar>&, const Eigen::VectorXd&);

BEV_INSTANTIATE_OPS(float)
BEV_INSTANTIATE_OPS(double)

}  // namespace bev

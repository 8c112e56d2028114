#include "cdn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "cdn/errors.hpp"

namespace cdn::ad {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, k, stride, pad, hout, wout;
  std::size_t patch() const { return cin * k * k; }
  std::size_t pixels() const { return hout * wout; }
};

void im2col(const double* x, const ConvGeometry& g, double* cols) {
  const auto h = static_cast<std::ptrdiff_t>(g.h);
  const auto w = static_cast<std::ptrdiff_t>(g.w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    const double* plane = x + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx, ++row) {
        double* out = cols + row * g.pixels();
        for (std::size_t oy = 0; oy < g.hout; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          double* orow = out + oy * g.wout;
          if (iy < 0 || iy >= h) {
            std::fill(orow, orow + g.wout, 0.0);
            continue;
          }
          const double* irow = plane + iy * w;
          for (std::size_t ox = 0; ox < g.wout; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            orow[ox] = (ix < 0 || ix >= w) ? 0.0 : irow[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* x) {
  const auto h = static_cast<std::ptrdiff_t>(g.h);
  const auto w = static_cast<std::ptrdiff_t>(g.w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    double* plane = x + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx, ++row) {
        const double* in = cols + row * g.pixels();
        for (std::size_t oy = 0; oy < g.hout; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= h) continue;
          double* xrow = plane + iy * w;
          const double* crow = in + oy * g.wout;
          for (std::size_t ox = 0; ox < g.wout; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < w) xrow[ix] += crow[ox];
          }
        }
      }
    }
  }
}

void require_rank(const Var& v, std::size_t rank, const char* what) {
  if (!v.defined() || v.value().rank() != rank) {
    throw InvalidInput(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                       (v.defined() ? shape_string(v.shape()) : std::string("undefined")));
  }
}

void require_same_shape(const Var& a, const Var& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw InvalidInput(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                       shape_string(b.shape()));
  }
}

template <typename F, typename D>
Var pointwise(const Var& x, F f, D df) {
  Tensor y = Tensor::zeros_like(x.value());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  Node* xn = &x.node();
  return make_node(std::move(y), {x}, [xn, df](Node& self) {
    if (!xn->requires_grad) return;
    Tensor& gx = xn->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * df(xn->value[i], self.value[i]);
  });
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, std::size_t stride, std::size_t pad) {
  require_rank(x, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  require_rank(bias, 1, "conv2d bias");
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (ws[1] != xs[1] || ws[2] != ws[3] || bias.shape()[0] != ws[0] || stride == 0) {
    throw InvalidInput("conv2d: incompatible input " + shape_string(xs) + " / weight " + shape_string(ws));
  }
  if (xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[3]) throw InvalidInput("conv2d: kernel larger than input");
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], stride, pad, 0, 0};
  g.hout = (g.h + 2 * pad - g.k) / stride + 1;
  g.wout = (g.w + 2 * pad - g.k) / stride + 1;

  Tensor y(Shape{g.n, g.cout, g.hout, g.wout});
  std::vector<double> cols(g.patch() * g.pixels());
  ConstMatMap wm(weight.value().data(), static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(g.patch()));
  Eigen::Map<const Eigen::VectorXd> bv(bias.value().data(), static_cast<Eigen::Index>(g.cout));
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(x.value().data() + n * g.cin * g.h * g.w, g, cols.data());
    ConstMatMap cm(cols.data(), static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(g.pixels()));
    MatMap ym(y.data() + n * g.cout * g.pixels(), static_cast<Eigen::Index>(g.cout),
              static_cast<Eigen::Index>(g.pixels()));
    ym.noalias() = wm * cm;
    ym.colwise() += bv;
  }

  Node* xn = &x.node();
  Node* wn = &weight.node();
  Node* bn = &bias.node();
  return make_node(std::move(y), {x, weight, bias}, [xn, wn, bn, g](Node& self) {
    std::vector<double> cols(g.patch() * g.pixels());
    ConstMatMap wm(wn->value.data(), static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(g.patch()));
    for (std::size_t n = 0; n < g.n; ++n) {
      ConstMatMap gy(self.grad.data() + n * g.cout * g.pixels(), static_cast<Eigen::Index>(g.cout),
                     static_cast<Eigen::Index>(g.pixels()));
      if (bn->requires_grad) {
        // plain loop: Eigen's reductions peel by address, which breaks bit reproducibility
        double* gb = bn->grad_buffer().data();
        const double* row = self.grad.data() + n * g.cout * g.pixels();
        for (std::size_t c = 0; c < g.cout; ++c) {
          double acc = 0.0;
          for (std::size_t p = 0; p < g.pixels(); ++p) acc += row[c * g.pixels() + p];
          gb[c] += acc;
        }
      }
      if (wn->requires_grad) {
        im2col(xn->value.data() + n * g.cin * g.h * g.w, g, cols.data());
        ConstMatMap cm(cols.data(), static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(g.pixels()));
        MatMap gw(wn->grad_buffer().data(), static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(g.patch()));
        gw.noalias() += gy * cm.transpose();
      }
      if (xn->requires_grad) {
        MatMap dc(cols.data(), static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(g.pixels()));
        dc.noalias() = wm.transpose() * gy;
        col2im_add(cols.data(), g, xn->grad_buffer().data() + n * g.cin * g.h * g.w);
      }
    }
  });
}

Var upsample2x(const Var& x) {
  require_rank(x, 4, "upsample2x");
  const Shape& s = x.shape();
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3];
  Tensor y(Shape{n, c, 2 * h, 2 * w});
  const Tensor& xv = x.value();
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t i = 0; i < 2 * h; ++i) {
      for (std::size_t j = 0; j < 2 * w; ++j) y[(p * 2 * h + i) * 2 * w + j] = xv[(p * h + i / 2) * w + j / 2];
    }
  }
  Node* xn = &x.node();
  return make_node(std::move(y), {x}, [xn, n, c, h, w](Node& self) {
    Tensor& gx = xn->grad_buffer();
    for (std::size_t p = 0; p < n * c; ++p) {
      for (std::size_t i = 0; i < 2 * h; ++i) {
        for (std::size_t j = 0; j < 2 * w; ++j) gx[(p * h + i / 2) * w + j / 2] += self.grad[(p * 2 * h + i) * 2 * w + j];
      }
    }
  });
}

Var leaky_relu(const Var& x, double slope) {
  return pointwise(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var silu(const Var& x) {
  return pointwise(
      x, [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Var sigmoid(const Var& x) {
  return pointwise(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor y = a.value();
  y += b.value();
  Node* an = &a.node();
  Node* bn = &b.node();
  return make_node(std::move(y), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) an->grad_buffer() += self.grad;
    if (bn->requires_grad) bn->grad_buffer() += self.grad;
  });
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

Var scale(const Var& x, double s) {
  Tensor y = x.value();
  y *= s;
  Node* xn = &x.node();
  return make_node(std::move(y), {x}, [xn, s](Node& self) {
    Tensor& gx = xn->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += s * self.grad[i];
  });
}

Var channel_mean(const Var& x) {
  require_rank(x, 4, "channel_mean");
  const Shape& s = x.shape();
  const std::size_t planes = s[0] * s[1], m = s[2] * s[3];
  Tensor y(Shape{s[0], s[1]});
  const Tensor& xv = x.value();
  for (std::size_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += xv[p * m + i];
    y[p] = acc / static_cast<double>(m);
  }
  Node* xn = &x.node();
  return make_node(std::move(y), {x}, [xn, planes, m](Node& self) {
    Tensor& gx = xn->grad_buffer();
    for (std::size_t p = 0; p < planes; ++p) {
      const double g = self.grad[p] / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i) gx[p * m + i] += g;
    }
  });
}

Var channel_std(const Var& x, double eps) {
  require_rank(x, 4, "channel_std");
  const Shape& s = x.shape();
  const std::size_t planes = s[0] * s[1], m = s[2] * s[3];
  Tensor y(Shape{s[0], s[1]});
  std::vector<double> mean(planes);
  const Tensor& xv = x.value();
  for (std::size_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += xv[p * m + i];
    mean[p] = acc / static_cast<double>(m);
    double var = 0.0;
    for (std::size_t i = 0; i < m; ++i) var += (xv[p * m + i] - mean[p]) * (xv[p * m + i] - mean[p]);
    y[p] = std::sqrt(var / static_cast<double>(m) + eps);
  }
  Node* xn = &x.node();
  return make_node(std::move(y), {x}, [xn, planes, m, mean = std::move(mean)](Node& self) {
    Tensor& gx = xn->grad_buffer();
    for (std::size_t p = 0; p < planes; ++p) {
      const double k = self.grad[p] / (static_cast<double>(m) * self.value[p]);
      for (std::size_t i = 0; i < m; ++i) gx[p * m + i] += k * (xn->value[p * m + i] - mean[p]);
    }
  });
}

Var instance_normalize(const Var& x, double eps) {
  require_rank(x, 4, "instance_normalize");
  const Shape& s = x.shape();
  const std::size_t planes = s[0] * s[1], m = s[2] * s[3];
  Tensor y = Tensor::zeros_like(x.value());
  std::vector<double> inv_std(planes);
  const Tensor& xv = x.value();
  for (std::size_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += xv[p * m + i];
    const double mu = acc / static_cast<double>(m);
    double var = 0.0;
    for (std::size_t i = 0; i < m; ++i) var += (xv[p * m + i] - mu) * (xv[p * m + i] - mu);
    const double sd = std::sqrt(var / static_cast<double>(m) + eps);
    inv_std[p] = 1.0 / sd;
    for (std::size_t i = 0; i < m; ++i) y[p * m + i] = (xv[p * m + i] - mu) / sd;
  }
  Node* xn = &x.node();
  return make_node(std::move(y), {x}, [xn, planes, m, inv_std = std::move(inv_std)](Node& self) {
    Tensor& gx = xn->grad_buffer();
    for (std::size_t p = 0; p < planes; ++p) {
      double mean_g = 0.0, mean_gy = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        mean_g += self.grad[p * m + i];
        mean_gy += self.grad[p * m + i] * self.value[p * m + i];
      }
      mean_g /= static_cast<double>(m);
      mean_gy /= static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i) {
        gx[p * m + i] += inv_std[p] * (self.grad[p * m + i] - mean_g - self.value[p * m + i] * mean_gy);
      }
    }
  });
}

Var scale_shift(const Var& x, const Var& scale_nc, const Var& shift_nc) {
  require_rank(x, 4, "scale_shift input");
  const Shape& s = x.shape();
  const Shape stats{s[0], s[1]};
  if (scale_nc.shape() != stats || shift_nc.shape() != stats) {
    throw InvalidInput("scale_shift: statistics must be " + shape_string(stats));
  }
  const std::size_t planes = s[0] * s[1], m = s[2] * s[3];
  Tensor y = Tensor::zeros_like(x.value());
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < m; ++i) y[p * m + i] = x.value()[p * m + i] * scale_nc.value()[p] + shift_nc.value()[p];
  }
  Node* xn = &x.node();
  Node* an = &scale_nc.node();
  Node* bn = &shift_nc.node();
  return make_node(std::move(y), {x, scale_nc, shift_nc}, [xn, an, bn, planes, m](Node& self) {
    for (std::size_t p = 0; p < planes; ++p) {
      double ga = 0.0, gb = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        ga += self.grad[p * m + i] * xn->value[p * m + i];
        gb += self.grad[p * m + i];
      }
      if (an->requires_grad) an->grad_buffer()[p] += ga;
      if (bn->requires_grad) bn->grad_buffer()[p] += gb;
      if (xn->requires_grad) {
        Tensor& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < m; ++i) gx[p * m + i] += self.grad[p * m + i] * an->value[p];
      }
    }
  });
}

Var gather_batch(const Var& x, const std::vector<std::size_t>& index) {
  const Tensor& xv = x.value();
  if (xv.rank() == 0) throw InvalidInput("gather_batch on a scalar");
  const std::size_t per = xv.sample_size();
  Shape s = xv.shape();
  s[0] = index.size();
  Tensor y(s);
  for (std::size_t n = 0; n < index.size(); ++n) {
    if (index[n] >= xv.dim(0)) throw InvalidInput("gather_batch index out of range");
    std::copy_n(xv.data() + index[n] * per, per, y.data() + n * per);
  }
  Node* xn = &x.node();
  return make_node(std::move(y), {x}, [xn, index, per](Node& self) {
    Tensor& gx = xn->grad_buffer();
    for (std::size_t n = 0; n < index.size(); ++n) {
      for (std::size_t i = 0; i < per; ++i) gx[index[n] * per + i] += self.grad[n * per + i];
    }
  });
}

Var select_batch(const std::vector<bool>& take_a, const Var& a, const Var& b) {
  require_same_shape(a, b, "select_batch");
  if (a.value().rank() == 0 || take_a.size() != a.shape()[0]) throw InvalidInput("select_batch mask length mismatch");
  const std::size_t per = a.value().sample_size();
  Tensor y = b.value();
  for (std::size_t n = 0; n < take_a.size(); ++n) {
    if (take_a[n]) std::copy_n(a.value().data() + n * per, per, y.data() + n * per);
  }
  Node* an = &a.node();
  Node* bn = &b.node();
  return make_node(std::move(y), {a, b}, [an, bn, take_a, per](Node& self) {
    for (std::size_t n = 0; n < take_a.size(); ++n) {
      Node* target = take_a[n] ? an : bn;
      if (!target->requires_grad) continue;
      Tensor& g = target->grad_buffer();
      for (std::size_t i = 0; i < per; ++i) g[n * per + i] += self.grad[n * per + i];
    }
  });
}

Var concat_batch(const std::vector<Var>& parts) {
  std::vector<Tensor> values;
  values.reserve(parts.size());
  for (const Var& p : parts) values.push_back(p.value());
  Tensor y = cdn::concat_batch(values);
  std::vector<Node*> nodes;
  std::vector<std::size_t> sizes;
  for (const Var& p : parts) {
    nodes.push_back(&p.node());
    sizes.push_back(p.value().size());
  }
  return make_node(std::move(y), parts, [nodes, sizes](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k]->requires_grad) {
        Tensor& g = nodes[k]->grad_buffer();
        for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += self.grad[off + i];
      }
      off += sizes[k];
    }
  });
}

Var slice_batch(const Var& x, std::size_t begin, std::size_t count) {
  Tensor y = x.value().slice_batch(begin, count);
  const std::size_t off = begin * x.value().sample_size();
  Node* xn = &x.node();
  return make_node(std::move(y), {x}, [xn, off](Node& self) {
    Tensor& g = xn->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[off + i] += self.grad[i];
  });
}

Var concat_features(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidInput("concat_features of nothing");
  const std::size_t n = parts.front().value().rank() == 2 ? parts.front().shape()[0] : 0;
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_rank(p, 2, "concat_features");
    if (p.shape()[0] != n) throw InvalidInput("concat_features batch mismatch");
    total += p.shape()[1];
  }
  Tensor y(Shape{n, total});
  std::vector<Node*> nodes;
  std::vector<std::size_t> widths;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const std::size_t f = p.shape()[1];
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < f; ++c) y.at(r, off + c) = p.value().at(r, c);
    }
    off += f;
    nodes.push_back(&p.node());
    widths.push_back(f);
  }
  return make_node(std::move(y), parts, [nodes, widths, n, total](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k]->requires_grad) {
        Tensor& g = nodes[k]->grad_buffer();
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < widths[k]; ++c) g[r * widths[k] + c] += self.grad[r * total + off + c];
        }
      }
      off += widths[k];
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank(x, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  require_rank(bias, 1, "linear bias");
  const auto n = static_cast<Eigen::Index>(x.shape()[0]);
  const auto f = static_cast<Eigen::Index>(x.shape()[1]);
  const auto o = static_cast<Eigen::Index>(weight.shape()[0]);
  if (static_cast<Eigen::Index>(weight.shape()[1]) != f || static_cast<Eigen::Index>(bias.shape()[0]) != o) {
    throw InvalidInput("linear: input " + shape_string(x.shape()) + " vs weight " + shape_string(weight.shape()));
  }
  Tensor y(Shape{x.shape()[0], weight.shape()[0]});
  ConstMatMap xm(x.value().data(), n, f);
  ConstMatMap wm(weight.value().data(), o, f);
  Eigen::Map<const Eigen::RowVectorXd> bv(bias.value().data(), o);
  MatMap ym(y.data(), n, o);
  ym.noalias() = xm * wm.transpose();
  ym.rowwise() += bv;
  Node* xn = &x.node();
  Node* wn = &weight.node();
  Node* bn = &bias.node();
  return make_node(std::move(y), {x, weight, bias}, [xn, wn, bn, n, f, o](Node& self) {
    ConstMatMap gy(self.grad.data(), n, o);
    if (xn->requires_grad) {
      MatMap gx(xn->grad_buffer().data(), n, f);
      gx.noalias() += gy * ConstMatMap(wn->value.data(), o, f);
    }
    if (wn->requires_grad) {
      MatMap gw(wn->grad_buffer().data(), o, f);
      gw.noalias() += gy.transpose() * ConstMatMap(xn->value.data(), n, f);
    }
    if (bn->requires_grad) {
      double* gb = bn->grad_buffer().data();
      for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < o; ++c) gb[c] += gy(r, c);
    }
  });
}

Var mean_squared_error(const Var& a, const Var& b) {
  require_same_shape(a, b, "mean_squared_error");
  const std::size_t m = a.value().size();
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double d = a.value()[i] - b.value()[i];
    acc += d * d;
  }
  Node* an = &a.node();
  Node* bn = &b.node();
  return make_node(Tensor::scalar(acc / static_cast<double>(m)), {a, b}, [an, bn, m](Node& self) {
    const double k = 2.0 * self.grad[0] / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
      const double d = k * (an->value[i] - bn->value[i]);
      if (an->requires_grad) an->grad_buffer()[i] += d;
      if (bn->requires_grad) bn->grad_buffer()[i] -= d;
    }
  });
}

Var batch_squared_distance(const Var& a, const Var& b) {
  require_same_shape(a, b, "batch_squared_distance");
  if (a.value().rank() == 0) throw InvalidInput("batch_squared_distance on scalars");
  const std::size_t m = a.value().size();
  const double n = static_cast<double>(a.shape()[0]);
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double d = a.value()[i] - b.value()[i];
    acc += d * d;
  }
  Node* an = &a.node();
  Node* bn = &b.node();
  return make_node(Tensor::scalar(acc / n), {a, b}, [an, bn, m, n](Node& self) {
    const double k = 2.0 * self.grad[0] / n;
    for (std::size_t i = 0; i < m; ++i) {
      const double d = k * (an->value[i] - bn->value[i]);
      if (an->requires_grad) an->grad_buffer()[i] += d;
      if (bn->requires_grad) bn->grad_buffer()[i] -= d;
    }
  });
}

Var binary_cross_entropy(const Var& scores, const std::vector<double>& labels, double clamp) {
  const std::size_t m = scores.value().size();
  if (labels.size() != m) {
    throw InvalidInput("binary_cross_entropy: " + std::to_string(m) + " scores vs " +
                       std::to_string(labels.size()) + " labels");
  }
  if (m == 0) throw InvalidInput("binary_cross_entropy on an empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double p = std::clamp(scores.value()[i], clamp, 1.0 - clamp);
    acc -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
  }
  Node* sn = &scores.node();
  return make_node(Tensor::scalar(acc / static_cast<double>(m)), {scores}, [sn, labels, clamp, m](Node& self) {
    Tensor& g = sn->grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      const double raw = sn->value[i];
      if (raw < clamp || raw > 1.0 - clamp) continue;
      g[i] += self.grad[0] * (-(labels[i] / raw) + (1.0 - labels[i]) / (1.0 - raw)) / static_cast<double>(m);
    }
  });
}

Var boundary_contrast(const Var& real, const Var& fake) {
  require_rank(real, 2, "boundary_contrast real");
  require_rank(fake, 2, "boundary_contrast fake");
  const std::size_t nr = real.shape()[0], nf = fake.shape()[0], f = real.shape()[1];
  if (fake.shape()[1] != f) throw InvalidInput("boundary_contrast: feature width mismatch");
  if (nr < 2 || nf < 1) throw InvalidInput("boundary_contrast: needs >= 2 real and >= 1 fake representation");

  auto unit_rows = [f](const Tensor& t, std::vector<double>& norms) {
    Tensor u = t;
    norms.assign(t.dim(0), 0.0);
    for (std::size_t r = 0; r < t.dim(0); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < f; ++c) s += t.at(r, c) * t.at(r, c);
      norms[r] = std::sqrt(s);
      if (!(norms[r] > 0.0)) throw InvalidInput("boundary_contrast: zero representation vector");
      for (std::size_t c = 0; c < f; ++c) u.at(r, c) /= norms[r];
    }
    return u;
  };
  std::vector<double> real_norm, fake_norm;
  Tensor ur = unit_rows(real.value(), real_norm);
  Tensor uf = unit_rows(fake.value(), fake_norm);
  std::vector<double> sum_r(f, 0.0), sum_f(f, 0.0);
  for (std::size_t r = 0; r < nr; ++r)
    for (std::size_t c = 0; c < f; ++c) sum_r[c] += ur.at(r, c);
  for (std::size_t r = 0; r < nf; ++r)
    for (std::size_t c = 0; c < f; ++c) sum_f[c] += uf.at(r, c);
  double rr = 0.0, rf = 0.0;
  for (std::size_t c = 0; c < f; ++c) {
    rr += sum_r[c] * sum_r[c];
    rf += sum_r[c] * sum_f[c];
  }
  const double dnr = static_cast<double>(nr), dnf = static_cast<double>(nf);
  // sum_{i,j} Dis = 0.5 * (pairs - sum_i u_i . sum_j v_j)
  const double value = 0.5 * (1.0 - rr / (dnr * dnr)) - 0.5 * (1.0 - rf / (dnr * dnf));

  Node* rn = &real.node();
  Node* fn = &fake.node();
  return make_node(Tensor::scalar(value), {real, fake},
                   [rn, fn, ur, uf, real_norm, fake_norm, sum_r, sum_f, nr, nf, f, dnr, dnf](Node& self) {
                     const double g = self.grad[0];
                     auto push = [f](Node* node, const Tensor& u, const std::vector<double>& norms,
                                     const std::vector<double>& du) {
                       Tensor& gx = node->grad_buffer();
                       for (std::size_t r = 0; r < u.dim(0); ++r) {
                         double dot = 0.0;
                         for (std::size_t c = 0; c < f; ++c) dot += u.at(r, c) * du[r * f + c];
                         for (std::size_t c = 0; c < f; ++c) {
                           gx.at(r, c) += (du[r * f + c] - u.at(r, c) * dot) / norms[r];
                         }
                       }
                     };
                     if (rn->requires_grad) {
                       std::vector<double> du(nr * f);
                       for (std::size_t r = 0; r < nr; ++r)
                         for (std::size_t c = 0; c < f; ++c)
                           du[r * f + c] = g * (-sum_r[c] / (dnr * dnr) + 0.5 * sum_f[c] / (dnr * dnf));
                       push(rn, ur, real_norm, du);
                     }
                     if (fn->requires_grad) {
                       std::vector<double> dv(nf * f);
                       for (std::size_t r = 0; r < nf; ++r)
                         for (std::size_t c = 0; c < f; ++c) dv[r * f + c] = g * 0.5 * sum_r[c] / (dnr * dnf);
                       push(fn, uf, fake_norm, dv);
                     }
                   });
}

}  // namespace cdn::ad

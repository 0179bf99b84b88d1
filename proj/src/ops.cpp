#include "spotfast/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "spotfast/error.hpp"
#include "spotfast/rng.hpp"

namespace spotfast::ops {

namespace {

using I64 = std::int64_t;

// Gradient buffer of an input, or nullptr when it does not need one.
Tensor* grad_of(const Var& v) {
  if (!v.requires_grad()) return nullptr;
  return &v.node()->ensure_grad();
}

int norm_axis(int axis, int rank) {
  if (axis < 0) axis += rank;
  require(axis >= 0 && axis < rank, "axis out of range");
  return axis;
}

struct AxisView {
  I64 outer = 1, len = 1, inner = 1;
};

AxisView axis_view(const Shape& s, int axis) {
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= s[i];
  v.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

void gemm(bool ta, bool tb, I64 m, I64 n, I64 k, const double* a, const double* b, double beta,
          double* c) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (beta == 0.0) std::fill(c, c + m * n, 0.0);
    return;
  }
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a,
              static_cast<int>(ta ? m : k), b, static_cast<int>(tb ? k : n), beta, c,
              static_cast<int>(n));
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require(a.shape() == b.shape(),
          "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  const auto bv = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& self) {
    for (const Var* in : {&a, &b}) {
      if (Tensor* g = grad_of(*in)) {
        auto gd = g->data();
        const auto sd = self.grad.data();
        for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += sd[i];
      }
    }
  });
}

Var add_const(const Var& x, const Tensor& c) {
  const I64 n = c.numel();
  require(n > 0 && x.value().numel() % n == 0,
          "add_const: " + shape_str(c.shape()) + " does not broadcast over " + shape_str(x.shape()));
  Tensor out = x.value();
  auto o = out.data();
  const auto cv = c.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += cv[i % static_cast<std::size_t>(n)];
  return make_op(std::move(out), {x}, [x](Node& self) {
    Tensor* g = grad_of(x);
    auto gd = g->data();
    const auto sd = self.grad.data();
    for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += sd[i];
  });
}

Var scale(const Var& x, double s) {
  Tensor out = x.value();
  for (auto& v : out.data()) v *= s;
  return make_op(std::move(out), {x}, [x, s](Node& self) {
    Tensor* g = grad_of(x);
    auto gd = g->data();
    const auto sd = self.grad.data();
    for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += s * sd[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch");
  Tensor out = a.value();
  const auto bv = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& self) {
    const auto sd = self.grad.data();
    if (Tensor* g = grad_of(a)) {
      auto gd = g->data();
      const auto bv = b.value().data();
      for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += sd[i] * bv[i];
    }
    if (Tensor* g = grad_of(b)) {
      auto gd = g->data();
      const auto av = a.value().data();
      for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += sd[i] * av[i];
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return make_op(std::move(out), {x}, [x](Node& self) {
    Tensor* g = grad_of(x);
    auto gd = g->data();
    const auto sd = self.grad.data();
    const auto xv = x.value().data();
    for (std::size_t i = 0; i < gd.size(); ++i)
      if (xv[i] > 0.0) gd[i] += sd[i];
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_op(std::move(out), {x}, [x](Node& self) {
    Tensor* g = grad_of(x);
    auto gd = g->data();
    const auto sd = self.grad.data();
    for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += sd[i];
  });
}

Var permute(const Var& x, const std::vector<int>& perm) {
  const Shape& in = x.shape();
  const int r = static_cast<int>(in.size());
  require(static_cast<int>(perm.size()) == r, "permute: rank mismatch");
  std::vector<I64> in_strides(r, 1);
  for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in[i + 1];
  Shape out_shape(r);
  std::vector<I64> src_strides(r);
  std::vector<bool> used(r, false);
  for (int i = 0; i < r; ++i) {
    require(perm[i] >= 0 && perm[i] < r && !used[perm[i]], "permute: invalid permutation");
    used[perm[i]] = true;
    out_shape[i] = in[perm[i]];
    src_strides[i] = in_strides[perm[i]];
  }
  const I64 n = numel(out_shape);
  // Output-order walk; offsets[j] is the source offset of output element j.
  std::vector<I64> offsets(static_cast<std::size_t>(n));
  {
    std::vector<I64> idx(r, 0);
    I64 src = 0;
    for (I64 j = 0; j < n; ++j) {
      offsets[j] = src;
      for (int d = r - 1; d >= 0; --d) {
        ++idx[d];
        src += src_strides[d];
        if (idx[d] < out_shape[d]) break;
        src -= src_strides[d] * out_shape[d];
        idx[d] = 0;
      }
    }
  }
  Tensor out(out_shape);
  const double* xv = x.value().ptr();
  double* o = out.ptr();
  for (I64 j = 0; j < n; ++j) o[j] = xv[offsets[j]];
  return make_op(std::move(out), {x}, [x, offsets = std::move(offsets)](Node& self) {
    Tensor* g = grad_of(x);
    double* gd = g->ptr();
    const double* sd = self.grad.ptr();
    for (std::size_t j = 0; j < offsets.size(); ++j) gd[offsets[j]] += sd[j];
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& first = parts.front().shape();
  axis = norm_axis(axis, static_cast<int>(first.size()));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    require(s.size() == first.size(), "concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (static_cast<int>(d) != axis)
        require(s[d] == first[d], "concat: shape mismatch " + shape_str(s) + " vs " + shape_str(first));
    out_shape[axis] += s[axis];
  }
  const AxisView ov = axis_view(out_shape, axis);
  Tensor out(out_shape);
  I64 offset = 0;
  for (const auto& p : parts) {
    const AxisView pv = axis_view(p.shape(), axis);
    const double* src = p.value().ptr();
    for (I64 o = 0; o < ov.outer; ++o) {
      std::copy_n(src + o * pv.len * pv.inner, pv.len * pv.inner,
                  out.ptr() + (o * ov.len + offset) * ov.inner);
    }
    offset += pv.len;
  }
  return make_op(std::move(out), parts, [parts, axis, ov](Node& self) {
    I64 offset = 0;
    for (const auto& p : parts) {
      const AxisView pv = axis_view(p.shape(), axis);
      if (Tensor* g = grad_of(p)) {
        for (I64 o = 0; o < ov.outer; ++o) {
          const double* src = self.grad.ptr() + (o * ov.len + offset) * ov.inner;
          double* dst = g->ptr() + o * pv.len * pv.inner;
          for (I64 i = 0; i < pv.len * pv.inner; ++i) dst[i] += src[i];
        }
      }
      offset += pv.len;
    }
  });
}

Var slice(const Var& x, int axis, I64 start, I64 length) {
  axis = norm_axis(axis, static_cast<int>(x.shape().size()));
  const AxisView v = axis_view(x.shape(), axis);
  require(start >= 0 && length >= 0 && start + length <= v.len, "slice: range out of bounds");
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  Tensor out(out_shape);
  for (I64 o = 0; o < v.outer; ++o)
    std::copy_n(x.value().ptr() + (o * v.len + start) * v.inner, length * v.inner,
                out.ptr() + o * length * v.inner);
  return make_op(std::move(out), {x}, [x, v, start, length](Node& self) {
    Tensor* g = grad_of(x);
    for (I64 o = 0; o < v.outer; ++o) {
      const double* src = self.grad.ptr() + o * length * v.inner;
      double* dst = g->ptr() + (o * v.len + start) * v.inner;
      for (I64 i = 0; i < length * v.inner; ++i) dst[i] += src[i];
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require(weight.shape().size() == 2, "linear: weight must be 2-D");
  const I64 out_f = weight.shape()[0];
  const I64 in_f = weight.shape()[1];
  require(!x.shape().empty() && x.shape().back() == in_f,
          "linear: input " + shape_str(x.shape()) + " does not match weight " +
              shape_str(weight.shape()));
  if (bias.defined()) require(bias.shape() == Shape{out_f}, "linear: bias shape mismatch");
  const I64 rows = x.value().numel() / in_f;
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  Tensor out(out_shape);
  gemm(false, true, rows, out_f, in_f, x.value().ptr(), weight.value().ptr(), 0.0, out.ptr());
  if (bias.defined()) {
    const double* b = bias.value().ptr();
    for (I64 r = 0; r < rows; ++r)
      for (I64 o = 0; o < out_f; ++o) out[r * out_f + o] += b[o];
  }
  return make_op(std::move(out), {x, weight, bias}, [x, weight, bias, rows, in_f, out_f](Node& self) {
    const double* dy = self.grad.ptr();
    if (Tensor* g = grad_of(x)) gemm(false, false, rows, in_f, out_f, dy, weight.value().ptr(), 1.0, g->ptr());
    if (Tensor* g = grad_of(weight)) gemm(true, false, out_f, in_f, rows, dy, x.value().ptr(), 1.0, g->ptr());
    if (Tensor* g = grad_of(bias)) {
      for (I64 r = 0; r < rows; ++r)
        for (I64 o = 0; o < out_f; ++o) (*g)[o] += dy[r * out_f + o];
    }
  });
}

Var bmm(const Var& a, const Var& b, bool transpose_b) {
  require(a.shape().size() == 3 && b.shape().size() == 3, "bmm: inputs must be 3-D");
  const I64 g = a.shape()[0], m = a.shape()[1], k = a.shape()[2];
  require(b.shape()[0] == g, "bmm: batch mismatch");
  const I64 n = transpose_b ? b.shape()[1] : b.shape()[2];
  require((transpose_b ? b.shape()[2] : b.shape()[1]) == k, "bmm: inner dim mismatch");
  Tensor out({g, m, n});
  for (I64 i = 0; i < g; ++i)
    gemm(false, transpose_b, m, n, k, a.value().ptr() + i * m * k, b.value().ptr() + i * k * n, 0.0,
         out.ptr() + i * m * n);
  return make_op(std::move(out), {a, b}, [a, b, g, m, n, k, transpose_b](Node& self) {
    const double* dc = self.grad.ptr();
    Tensor* ga = grad_of(a);
    Tensor* gb = grad_of(b);
    for (I64 i = 0; i < g; ++i) {
      const double* dci = dc + i * m * n;
      const double* ai = a.value().ptr() + i * m * k;
      const double* bi = b.value().ptr() + i * k * n;
      if (ga) gemm(false, !transpose_b, m, k, n, dci, bi, 1.0, ga->ptr() + i * m * k);
      if (gb) {
        if (transpose_b)
          gemm(true, false, n, k, m, dci, ai, 1.0, gb->ptr() + i * k * n);
        else
          gemm(true, false, k, n, m, ai, dci, 1.0, gb->ptr() + i * k * n);
      }
    }
  });
}

Var softmax(const Var& x) {
  require(!x.shape().empty(), "softmax: scalar input");
  const I64 d = x.shape().back();
  const I64 rows = x.value().numel() / d;
  Tensor out(x.shape());
  for (I64 r = 0; r < rows; ++r) {
    const double* in = x.value().ptr() + r * d;
    double* o = out.ptr() + r * d;
    const double mx = *std::max_element(in, in + d);
    double sum = 0.0;
    for (I64 i = 0; i < d; ++i) sum += (o[i] = std::exp(in[i] - mx));
    for (I64 i = 0; i < d; ++i) o[i] /= sum;
  }
  Tensor y = out;
  return make_op(std::move(out), {x}, [x, y = std::move(y), d, rows](Node& self) {
    Tensor* g = grad_of(x);
    for (I64 r = 0; r < rows; ++r) {
      const double* yr = y.ptr() + r * d;
      const double* dy = self.grad.ptr() + r * d;
      double s = 0.0;
      for (I64 i = 0; i < d; ++i) s += dy[i] * yr[i];
      double* gr = g->ptr() + r * d;
      for (I64 i = 0; i < d; ++i) gr[i] += yr[i] * (dy[i] - s);
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require(!x.shape().empty(), "layer_norm: scalar input");
  const I64 d = x.shape().back();
  if (gamma.defined()) require(gamma.shape() == Shape{d}, "layer_norm: gamma shape mismatch");
  if (beta.defined()) require(beta.shape() == Shape{d}, "layer_norm: beta shape mismatch");
  const I64 rows = x.value().numel() / d;
  Tensor xhat(x.shape());
  std::vector<double> inv_std(static_cast<std::size_t>(rows));
  Tensor out(x.shape());
  for (I64 r = 0; r < rows; ++r) {
    const double* in = x.value().ptr() + r * d;
    double mu = 0.0;
    for (I64 i = 0; i < d; ++i) mu += in[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (I64 i = 0; i < d; ++i) var += (in[i] - mu) * (in[i] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (I64 i = 0; i < d; ++i) {
      const double h = (in[i] - mu) * is;
      xhat[r * d + i] = h;
      double y = h;
      if (gamma.defined()) y *= gamma.value()[i];
      if (beta.defined()) y += beta.value()[i];
      out[r * d + i] = y;
    }
  }
  return make_op(std::move(out), {x, gamma, beta},
                 [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), d, rows](Node& self) {
                   Tensor* gx = grad_of(x);
                   Tensor* gg = grad_of(gamma);
                   Tensor* gb = grad_of(beta);
                   std::vector<double> dxhat(static_cast<std::size_t>(d));
                   for (I64 r = 0; r < rows; ++r) {
                     const double* dy = self.grad.ptr() + r * d;
                     const double* h = xhat.ptr() + r * d;
                     double m1 = 0.0, m2 = 0.0;
                     for (I64 i = 0; i < d; ++i) {
                       if (gg) (*gg)[i] += dy[i] * h[i];
                       if (gb) (*gb)[i] += dy[i];
                       dxhat[i] = gamma.defined() ? dy[i] * gamma.value()[i] : dy[i];
                       m1 += dxhat[i];
                       m2 += dxhat[i] * h[i];
                     }
                     if (!gx) continue;
                     m1 /= static_cast<double>(d);
                     m2 /= static_cast<double>(d);
                     double* gr = gx->ptr() + r * d;
                     for (I64 i = 0; i < d; ++i) gr[i] += inv_std[r] * (dxhat[i] - m1 - h[i] * m2);
                   }
                 });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, int axis, bool training,
               const BatchNormState& state) {
  axis = norm_axis(axis, static_cast<int>(x.shape().size()));
  const AxisView v = axis_view(x.shape(), axis);
  const I64 c = v.len;
  const I64 m = v.outer * v.inner;
  require(m > 0, "batch_norm: empty input");
  if (gamma.defined()) require(gamma.shape() == Shape{c}, "batch_norm: gamma shape mismatch");
  if (beta.defined()) require(beta.shape() == Shape{c}, "batch_norm: beta shape mismatch");
  require(state.running_mean && state.running_var, "batch_norm: missing running buffers");
  const double* xv = x.value().ptr();
  auto at = [&](I64 o, I64 ch, I64 i) { return (o * c + ch) * v.inner + i; };

  std::vector<double> mean(c), inv_std(c);
  for (I64 ch = 0; ch < c; ++ch) {
    double mu, var;
    if (training) {
      double s = 0.0;
      for (I64 o = 0; o < v.outer; ++o)
        for (I64 i = 0; i < v.inner; ++i) s += xv[at(o, ch, i)];
      mu = s / static_cast<double>(m);
      double q = 0.0;
      for (I64 o = 0; o < v.outer; ++o)
        for (I64 i = 0; i < v.inner; ++i) {
          const double dv = xv[at(o, ch, i)] - mu;
          q += dv * dv;
        }
      var = q / static_cast<double>(m);
      const double unbiased = m > 1 ? q / static_cast<double>(m - 1) : var;
      auto& rm = (*state.running_mean)[ch];
      auto& rv = (*state.running_var)[ch];
      rm = (1.0 - state.momentum) * rm + state.momentum * mu;
      rv = (1.0 - state.momentum) * rv + state.momentum * unbiased;
    } else {
      mu = (*state.running_mean)[ch];
      var = (*state.running_var)[ch];
    }
    mean[ch] = mu;
    inv_std[ch] = 1.0 / std::sqrt(var + state.eps);
  }

  Tensor out(x.shape());
  Tensor xhat(x.shape());
  for (I64 o = 0; o < v.outer; ++o)
    for (I64 ch = 0; ch < c; ++ch) {
      const double gm = gamma.defined() ? gamma.value()[ch] : 1.0;
      const double bt = beta.defined() ? beta.value()[ch] : 0.0;
      for (I64 i = 0; i < v.inner; ++i) {
        const I64 j = at(o, ch, i);
        const double h = (xv[j] - mean[ch]) * inv_std[ch];
        xhat[j] = h;
        out[j] = h * gm + bt;
      }
    }
  return make_op(std::move(out), {x, gamma, beta},
                 [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), v, c, m,
                  training](Node& self) {
                   Tensor* gx = grad_of(x);
                   Tensor* gg = grad_of(gamma);
                   Tensor* gb = grad_of(beta);
                   const double* dy = self.grad.ptr();
                   auto at = [&](I64 o, I64 ch, I64 i) { return (o * c + ch) * v.inner + i; };
                   for (I64 ch = 0; ch < c; ++ch) {
                     double sdy = 0.0, sdyh = 0.0;
                     for (I64 o = 0; o < v.outer; ++o)
                       for (I64 i = 0; i < v.inner; ++i) {
                         const I64 j = at(o, ch, i);
                         sdy += dy[j];
                         sdyh += dy[j] * xhat[j];
                       }
                     if (gg) (*gg)[ch] += sdyh;
                     if (gb) (*gb)[ch] += sdy;
                     if (!gx) continue;
                     const double gm = gamma.defined() ? gamma.value()[ch] : 1.0;
                     const double k = gm * inv_std[ch];
                     const double md = sdy / static_cast<double>(m);
                     const double mdh = sdyh / static_cast<double>(m);
                     for (I64 o = 0; o < v.outer; ++o)
                       for (I64 i = 0; i < v.inner; ++i) {
                         const I64 j = at(o, ch, i);
                         (*gx)[j] += training ? k * (dy[j] - md - xhat[j] * mdh) : k * dy[j];
                       }
                   }
                 });
}

namespace {

struct ConvGeom {
  I64 b, ci, t, h, w;
  I64 co, kt, kh, kw;
  Index3 stride, pad;
  I64 to, ho, wo;
  I64 kdim() const { return ci * kt * kh * kw; }
  I64 pdim() const { return to * ho * wo; }
};

void im2col(const ConvGeom& g, const double* x, double* cols) {
  const I64 p = g.pdim();
  I64 row = 0;
  for (I64 c = 0; c < g.ci; ++c)
    for (I64 a = 0; a < g.kt; ++a)
      for (I64 bb = 0; bb < g.kh; ++bb)
        for (I64 cc = 0; cc < g.kw; ++cc, ++row) {
          double* dst = cols + row * p;
          for (I64 ot = 0; ot < g.to; ++ot) {
            const I64 it = ot * g.stride[0] - g.pad[0] + a;
            for (I64 oh = 0; oh < g.ho; ++oh) {
              const I64 ih = oh * g.stride[1] - g.pad[1] + bb;
              double* d = dst + (ot * g.ho + oh) * g.wo;
              if (it < 0 || it >= g.t || ih < 0 || ih >= g.h) {
                std::fill(d, d + g.wo, 0.0);
                continue;
              }
              const double* src = x + ((c * g.t + it) * g.h + ih) * g.w;
              for (I64 ow = 0; ow < g.wo; ++ow) {
                const I64 iw = ow * g.stride[2] - g.pad[2] + cc;
                d[ow] = (iw >= 0 && iw < g.w) ? src[iw] : 0.0;
              }
            }
          }
        }
}

void col2im(const ConvGeom& g, const double* cols, double* dx) {
  const I64 p = g.pdim();
  I64 row = 0;
  for (I64 c = 0; c < g.ci; ++c)
    for (I64 a = 0; a < g.kt; ++a)
      for (I64 bb = 0; bb < g.kh; ++bb)
        for (I64 cc = 0; cc < g.kw; ++cc, ++row) {
          const double* src = cols + row * p;
          for (I64 ot = 0; ot < g.to; ++ot) {
            const I64 it = ot * g.stride[0] - g.pad[0] + a;
            if (it < 0 || it >= g.t) continue;
            for (I64 oh = 0; oh < g.ho; ++oh) {
              const I64 ih = oh * g.stride[1] - g.pad[1] + bb;
              if (ih < 0 || ih >= g.h) continue;
              const double* s = src + (ot * g.ho + oh) * g.wo;
              double* d = dx + ((c * g.t + it) * g.h + ih) * g.w;
              for (I64 ow = 0; ow < g.wo; ++ow) {
                const I64 iw = ow * g.stride[2] - g.pad[2] + cc;
                if (iw >= 0 && iw < g.w) d[iw] += s[ow];
              }
            }
          }
        }
}

}  // namespace

Var conv3d(const Var& x, const Var& weight, const Var& bias, Index3 stride, Index3 pad) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require(xs.size() == 5, "conv3d: input must be [B,C,T,H,W], got " + shape_str(xs));
  require(ws.size() == 5, "conv3d: weight must be [Co,Ci,kt,kh,kw]");
  require(ws[1] == xs[1], "conv3d: input channels " + std::to_string(xs[1]) +
                              " do not match weight " + shape_str(ws));
  ConvGeom g{xs[0], xs[1], xs[2], xs[3], xs[4], ws[0], ws[2], ws[3], ws[4], stride, pad, 0, 0, 0};
  for (int i = 0; i < 3; ++i) require(stride[i] >= 1 && pad[i] >= 0, "conv3d: bad stride/pad");
  g.to = (g.t + 2 * pad[0] - g.kt) / stride[0] + 1;
  g.ho = (g.h + 2 * pad[1] - g.kh) / stride[1] + 1;
  g.wo = (g.w + 2 * pad[2] - g.kw) / stride[2] + 1;
  require(g.t + 2 * pad[0] >= g.kt && g.h + 2 * pad[1] >= g.kh && g.w + 2 * pad[2] >= g.kw,
          "conv3d: kernel larger than padded input " + shape_str(xs));
  if (bias.defined()) require(bias.shape() == Shape{g.co}, "conv3d: bias shape mismatch");

  const I64 kd = g.kdim(), pd = g.pdim();
  const I64 in_sz = g.ci * g.t * g.h * g.w;
  Tensor out({g.b, g.co, g.to, g.ho, g.wo});
  std::vector<double> cols(static_cast<std::size_t>(kd * pd));
  for (I64 n = 0; n < g.b; ++n) {
    im2col(g, x.value().ptr() + n * in_sz, cols.data());
    double* o = out.ptr() + n * g.co * pd;
    gemm(false, false, g.co, pd, kd, weight.value().ptr(), cols.data(), 0.0, o);
    if (bias.defined())
      for (I64 c = 0; c < g.co; ++c) {
        const double bv = bias.value()[c];
        for (I64 j = 0; j < pd; ++j) o[c * pd + j] += bv;
      }
  }
  return make_op(std::move(out), {x, weight, bias}, [x, weight, bias, g, kd, pd, in_sz](Node& self) {
    Tensor* gx = grad_of(x);
    Tensor* gw = grad_of(weight);
    Tensor* gb = grad_of(bias);
    std::vector<double> cols(static_cast<std::size_t>(kd * pd));
    for (I64 n = 0; n < g.b; ++n) {
      const double* dy = self.grad.ptr() + n * g.co * pd;
      if (gw) {
        im2col(g, x.value().ptr() + n * in_sz, cols.data());
        gemm(false, true, g.co, kd, pd, dy, cols.data(), 1.0, gw->ptr());
      }
      if (gx) {
        gemm(true, false, kd, pd, g.co, weight.value().ptr(), dy, 0.0, cols.data());
        col2im(g, cols.data(), gx->ptr() + n * in_sz);
      }
      if (gb)
        for (I64 c = 0; c < g.co; ++c)
          for (I64 j = 0; j < pd; ++j) (*gb)[c] += dy[c * pd + j];
    }
  });
}

I64 pool_out_len(I64 len, I64 kernel, I64 stride, bool ceil_mode) {
  require(kernel >= 1 && stride >= 1, "pool: bad kernel/stride");
  if (!ceil_mode) return len >= kernel ? (len - kernel) / stride + 1 : 0;
  if (len <= 0) return 0;
  const I64 span = len - kernel;
  I64 out = (span >= 0 ? (span + stride - 1) / stride : -((-span) / stride)) + 1;
  if ((out - 1) * stride >= len) --out;
  return out;
}

Var max_pool_time(const Var& x, I64 kernel, I64 stride, bool ceil_mode) {
  require(x.shape().size() == 3, "max_pool_time: input must be [B,C,T]");
  const I64 rows = x.shape()[0] * x.shape()[1];
  const I64 t = x.shape()[2];
  const I64 to = pool_out_len(t, kernel, stride, ceil_mode);
  require(to >= 1, "max_pool_time: time length " + std::to_string(t) + " too short for kernel " +
                       std::to_string(kernel));
  Tensor out({x.shape()[0], x.shape()[1], to});
  std::vector<I64> arg(static_cast<std::size_t>(rows * to));
  for (I64 r = 0; r < rows; ++r) {
    const double* in = x.value().ptr() + r * t;
    for (I64 o = 0; o < to; ++o) {
      const I64 s = o * stride;
      const I64 e = std::min(s + kernel, t);
      I64 best = s;
      for (I64 i = s + 1; i < e; ++i)
        if (in[i] > in[best]) best = i;
      arg[r * to + o] = r * t + best;
      out[r * to + o] = in[best];
    }
  }
  return make_op(std::move(out), {x}, [x, arg = std::move(arg)](Node& self) {
    Tensor* g = grad_of(x);
    for (std::size_t j = 0; j < arg.size(); ++j) (*g)[arg[j]] += self.grad[static_cast<I64>(j)];
  });
}

Var avg_pool_hw(const Var& x, I64 kh, I64 kw) {
  const Shape& s = x.shape();
  require(s.size() == 5, "avg_pool_hw: input must be [B,C,T,H,W]");
  require(s[3] >= kh && s[4] >= kw, "avg_pool_hw: spatial size " + shape_str(s) +
                                        " smaller than kernel");
  const I64 planes = s[0] * s[1] * s[2];
  const I64 h = s[3], w = s[4], ho = h - kh + 1, wo = w - kw + 1;
  const double inv = 1.0 / static_cast<double>(kh * kw);
  Tensor out({s[0], s[1], s[2], ho, wo});
  for (I64 p = 0; p < planes; ++p) {
    const double* in = x.value().ptr() + p * h * w;
    double* o = out.ptr() + p * ho * wo;
    for (I64 i = 0; i < ho; ++i)
      for (I64 j = 0; j < wo; ++j) {
        double acc = 0.0;
        for (I64 a = 0; a < kh; ++a)
          for (I64 b = 0; b < kw; ++b) acc += in[(i + a) * w + j + b];
        o[i * wo + j] = acc * inv;
      }
  }
  return make_op(std::move(out), {x}, [x, planes, h, w, ho, wo, kh, kw, inv](Node& self) {
    Tensor* g = grad_of(x);
    for (I64 p = 0; p < planes; ++p) {
      const double* dy = self.grad.ptr() + p * ho * wo;
      double* gd = g->ptr() + p * h * w;
      for (I64 i = 0; i < ho; ++i)
        for (I64 j = 0; j < wo; ++j)
          for (I64 a = 0; a < kh; ++a)
            for (I64 b = 0; b < kw; ++b) gd[(i + a) * w + j + b] += dy[i * wo + j] * inv;
    }
  });
}

Var adaptive_avg_pool(const Var& x, int axis, I64 target) {
  axis = norm_axis(axis, static_cast<int>(x.shape().size()));
  require(target >= 1, "adaptive_avg_pool: target length must be >= 1");
  const AxisView v = axis_view(x.shape(), axis);
  std::vector<I64> starts(target), ends(target);
  for (I64 t = 0; t < target; ++t) {
    starts[t] = (t * v.len) / target;
    ends[t] = ((t + 1) * v.len + target - 1) / target;
  }
  Shape out_shape = x.shape();
  out_shape[axis] = target;
  Tensor out(out_shape);
  const double* xv = x.value().ptr();
  for (I64 o = 0; o < v.outer; ++o)
    for (I64 t = 0; t < target; ++t) {
      double* dst = out.ptr() + (o * target + t) * v.inner;
      const double inv = 1.0 / static_cast<double>(ends[t] - starts[t]);
      for (I64 s = starts[t]; s < ends[t]; ++s) {
        const double* src = xv + (o * v.len + s) * v.inner;
        for (I64 i = 0; i < v.inner; ++i) dst[i] += src[i];
      }
      for (I64 i = 0; i < v.inner; ++i) dst[i] *= inv;
    }
  return make_op(std::move(out), {x}, [x, v, target, starts, ends](Node& self) {
    Tensor* g = grad_of(x);
    for (I64 o = 0; o < v.outer; ++o)
      for (I64 t = 0; t < target; ++t) {
        const double* dy = self.grad.ptr() + (o * target + t) * v.inner;
        const double inv = 1.0 / static_cast<double>(ends[t] - starts[t]);
        for (I64 s = starts[t]; s < ends[t]; ++s) {
          double* dst = g->ptr() + (o * v.len + s) * v.inner;
          for (I64 i = 0; i < v.inner; ++i) dst[i] += dy[i] * inv;
        }
      }
  });
}

Var mean(const Var& x, int axis) {
  axis = norm_axis(axis, static_cast<int>(x.shape().size()));
  const AxisView v = axis_view(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + axis);
  Tensor out(out_shape);
  const double inv = 1.0 / static_cast<double>(v.len);
  for (I64 o = 0; o < v.outer; ++o)
    for (I64 l = 0; l < v.len; ++l)
      for (I64 i = 0; i < v.inner; ++i)
        out[o * v.inner + i] += x.value()[(o * v.len + l) * v.inner + i] * inv;
  return make_op(std::move(out), {x}, [x, v, inv](Node& self) {
    Tensor* g = grad_of(x);
    for (I64 o = 0; o < v.outer; ++o)
      for (I64 l = 0; l < v.len; ++l)
        for (I64 i = 0; i < v.inner; ++i)
          (*g)[(o * v.len + l) * v.inner + i] += self.grad[o * v.inner + i] * inv;
  });
}

Var dropout(const Var& x, double p, std::mt19937_64& rng, bool training) {
  require(p >= 0.0 && p < 1.0, "dropout: rate must be in [0, 1)");
  if (!training || p == 0.0) return x;
  const double keep = 1.0 - p;
  Tensor mask(x.shape());
  for (auto& m : mask.data()) m = spotfast::rng::uniform01(rng) < keep ? 1.0 / keep : 0.0;
  Tensor out = x.value();
  for (I64 i = 0; i < out.numel(); ++i) out[i] *= mask[i];
  return make_op(std::move(out), {x}, [x, mask = std::move(mask)](Node& self) {
    Tensor* g = grad_of(x);
    for (I64 i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i] * mask[i];
  });
}

Var pair_scores(const Var& s1, const Var& s2, std::span<const I64> flat, I64 k) {
  require(s1.shape().size() == 2 && s1.shape() == s2.shape(), "pair_scores: half-score shape mismatch");
  const I64 rows = s1.shape()[0], n = s1.shape()[1];
  require(static_cast<I64>(flat.size()) == rows * k, "pair_scores: index count mismatch");
  std::vector<I64> idx(flat.begin(), flat.end());
  Tensor out({rows, k});
  for (I64 r = 0; r < rows; ++r)
    for (I64 j = 0; j < k; ++j) {
      const I64 f = idx[r * k + j];
      require(f >= 0 && f < n * n, "pair_scores: index out of range");
      out[r * k + j] = s1.value()[r * n + f / n] + s2.value()[r * n + f % n];
    }
  return make_op(std::move(out), {s1, s2}, [s1, s2, idx = std::move(idx), rows, n, k](Node& self) {
    Tensor* g1 = grad_of(s1);
    Tensor* g2 = grad_of(s2);
    for (I64 r = 0; r < rows; ++r)
      for (I64 j = 0; j < k; ++j) {
        const I64 f = idx[r * k + j];
        const double d = self.grad[r * k + j];
        if (g1) (*g1)[r * n + f / n] += d;
        if (g2) (*g2)[r * n + f % n] += d;
      }
  });
}

Var sparse_rows(const Var& w, std::span<const I64> rows_idx, const Var& values) {
  require(w.shape().size() == 2 && values.shape().size() == 2, "sparse_rows: rank mismatch");
  const I64 rows = w.shape()[0], k = w.shape()[1];
  const I64 nv = values.shape()[0], d = values.shape()[1];
  require(static_cast<I64>(rows_idx.size()) == rows * k, "sparse_rows: index count mismatch");
  std::vector<I64> idx(rows_idx.begin(), rows_idx.end());
  Tensor out({rows, d});
  for (I64 r = 0; r < rows; ++r)
    for (I64 j = 0; j < k; ++j) {
      const I64 v = idx[r * k + j];
      require(v >= 0 && v < nv, "sparse_rows: row index out of range");
      const double wt = w.value()[r * k + j];
      const double* src = values.value().ptr() + v * d;
      double* dst = out.ptr() + r * d;
      for (I64 i = 0; i < d; ++i) dst[i] += wt * src[i];
    }
  return make_op(std::move(out), {w, values}, [w, values, idx = std::move(idx), rows, k, d](Node& self) {
    Tensor* gw = grad_of(w);
    Tensor* gv = grad_of(values);
    for (I64 r = 0; r < rows; ++r) {
      const double* dy = self.grad.ptr() + r * d;
      for (I64 j = 0; j < k; ++j) {
        const I64 v = idx[r * k + j];
        const double* row = values.value().ptr() + v * d;
        if (gw) {
          double s = 0.0;
          for (I64 i = 0; i < d; ++i) s += dy[i] * row[i];
          (*gw)[r * k + j] += s;
        }
        if (gv) {
          const double wt = w.value()[r * k + j];
          double* dst = gv->ptr() + v * d;
          for (I64 i = 0; i < d; ++i) dst[i] += wt * dy[i];
        }
      }
    }
  });
}

Var label_smoothed_ce(const Var& logits, std::span<const I64> targets, double eps) {
  require(logits.shape().size() == 2, "label_smoothed_ce: logits must be [B,K]");
  const I64 b = logits.shape()[0], kc = logits.shape()[1];
  require(kc >= 2, "label_smoothed_ce: need at least 2 classes");
  require(b >= 1 && static_cast<I64>(targets.size()) == b, "label_smoothed_ce: target count mismatch");
  require(eps >= 0.0 && eps < 1.0, "label_smoothed_ce: eps must be in [0, 1)");
  for (double v : logits.value().data())
    if (!std::isfinite(v)) fail(ErrorKind::Numeric, "label_smoothed_ce: non-finite logits");
  const double off = eps / static_cast<double>(kc);
  const double on = 1.0 - eps + off;
  Tensor probs({b, kc});
  double loss = 0.0;
  for (I64 r = 0; r < b; ++r) {
    const I64 t = targets[r];
    require(t >= 0 && t < kc, "label_smoothed_ce: target out of range");
    const double* z = logits.value().ptr() + r * kc;
    const double mx = *std::max_element(z, z + kc);
    double sum = 0.0;
    for (I64 i = 0; i < kc; ++i) sum += std::exp(z[i] - mx);
    const double lse = mx + std::log(sum);
    for (I64 i = 0; i < kc; ++i) {
      const double logp = z[i] - lse;
      probs[r * kc + i] = std::exp(logp);
      loss -= (i == t ? on : off) * logp;
    }
  }
  loss /= static_cast<double>(b);
  std::vector<I64> tg(targets.begin(), targets.end());
  return make_op(Tensor({1}, loss), {logits},
                 [logits, probs = std::move(probs), tg = std::move(tg), b, kc, on, off](Node& self) {
                   Tensor* g = grad_of(logits);
                   const double up = self.grad[0] / static_cast<double>(b);
                   for (I64 r = 0; r < b; ++r)
                     for (I64 i = 0; i < kc; ++i)
                       (*g)[r * kc + i] += up * (probs[r * kc + i] - (i == tg[r] ? on : off));
                 });
}

Var dot(const Var& x, const Tensor& w) {
  require(x.shape() == w.shape(), "dot: shape mismatch " + shape_str(x.shape()) + " vs " +
                                      shape_str(w.shape()));
  double s = 0.0;
  for (I64 i = 0; i < w.numel(); ++i) s += x.value()[i] * w[i];
  return make_op(Tensor({1}, s), {x}, [x, w](Node& self) {
    Tensor* g = grad_of(x);
    for (I64 i = 0; i < w.numel(); ++i) (*g)[i] += self.grad[0] * w[i];
  });
}

}  // namespace spotfast::ops

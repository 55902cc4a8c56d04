#include "lensctr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#ifdef LENSCTR_HAVE_CBLAS
#include <cblas.h>
#endif

namespace lensctr::num {
namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

constexpr std::size_t kBlasMinWork = 16384;

// C[m,n] (+)= op(A) * op(B). Plain loops ordered for unit-stride inner access.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n, bool trans_a,
          bool trans_b) {
#ifdef LENSCTR_HAVE_CBLAS
  // Small products stay on the loops below; BLAS call overhead dominates there.
  if (m * n * k >= kBlasMinWork) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a,
                static_cast<int>(trans_a ? m : k), b, static_cast<int>(trans_b ? k : n), 1.0, c, static_cast<int>(n));
    return;
  }
#endif
  if (!trans_a && !trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = c + i * n;
      const double* arow = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = arow[p];
        if (av == 0.0) continue;
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!trans_a && trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = a + i * k;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double* brow = b + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
        crow[j] += s;
      }
    }
  } else if (trans_a && !trans_b) {
    // A stored [k, m].
    for (std::size_t p = 0; p < k; ++p) {
      const double* arow = a + p * m;
      const double* brow = b + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const double av = arow[i];
        if (av == 0.0) continue;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    // A stored [k, m], B stored [n, k].
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[j * k + p];
        c[i * n + j] += s;
      }
    }
  }
}

// Iterates an output shape against an operand broadcast to it. The callback
// receives (out_offset, operand_offset, run_length, operand_step) for each
// contiguous run along the last axis.
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride;  // operand stride per out axis, 0 when broadcast

  BroadcastPlan(const char* op, const Shape& out_shape, const Shape& operand) : out(out_shape) {
    if (operand.size() > out.size()) shape_error(op, out_shape, operand);
    const std::size_t pad = out.size() - operand.size();
    stride.assign(out.size(), 0);
    std::size_t s = 1;
    for (std::size_t ax = out.size(); ax-- > 0;) {
      const std::size_t od = ax >= pad ? operand[ax - pad] : 1;
      if (od != out[ax] && od != 1) shape_error(op, out_shape, operand);
      stride[ax] = (od == 1 && out[ax] != 1) ? 0 : s;
      if (ax >= pad) s *= od;
    }
  }

  template <class F>
  void for_each(F&& f) const {
    if (out.empty()) {
      f(std::size_t{0}, std::size_t{0}, std::size_t{1}, std::size_t{0});
      return;
    }
    const std::size_t rank = out.size();
    const std::size_t inner = out[rank - 1];
    const std::size_t inner_step = stride[rank - 1];
    const std::size_t total = shape_numel(out);
    if (total == 0) return;
    std::vector<std::size_t> idx(rank - 1, 0);
    std::size_t b_off = 0;
    for (std::size_t o = 0; o < total; o += inner) {
      f(o, b_off, inner, inner_step);
      for (std::size_t ax = rank - 1; ax-- > 0;) {
        if (++idx[ax] < out[ax]) {
          b_off += stride[ax];
          break;
        }
        b_off -= stride[ax] * (out[ax] - 1);
        idx[ax] = 0;
      }
    }
  }
};

enum class BinOp { kAdd, kSub, kMul };

// Sums a gradient laid out like `plan.out` back into the operand layout.
void reduce_into(const BroadcastPlan& plan, std::span<const double> g, std::span<double> dst,
                 const double* scale_by = nullptr) {
  plan.for_each([&](std::size_t o, std::size_t bo, std::size_t n, std::size_t step) {
    if (scale_by) {
      for (std::size_t j = 0; j < n; ++j) dst[bo + j * step] += g[o + j] * scale_by[o + j];
    } else {
      for (std::size_t j = 0; j < n; ++j) dst[bo + j * step] += g[o + j];
    }
  });
}

Var binary(const char* name, Var a, Var b, BinOp op) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  BroadcastPlan plan(name, av.shape(), bv.shape());
  Tensor out = Tensor::uninitialized(av.shape());
  const double* pa = av.ptr();
  const double* pb = bv.ptr();
  double* po = out.ptr();
  plan.for_each([&](std::size_t o, std::size_t bo, std::size_t n, std::size_t step) {
    switch (op) {
      case BinOp::kAdd:
        for (std::size_t j = 0; j < n; ++j) po[o + j] = pa[o + j] + pb[bo + j * step];
        break;
      case BinOp::kSub:
        for (std::size_t j = 0; j < n; ++j) po[o + j] = pa[o + j] - pb[bo + j * step];
        break;
      case BinOp::kMul:
        for (std::size_t j = 0; j < n; ++j) po[o + j] = pa[o + j] * pb[bo + j * step];
        break;
    }
  });
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, plan, op](Tape& t, std::uint32_t self) {
    auto g = t.grad(self);
    if (t.needs_grad(ia)) {
      auto ga = t.grad(ia);
      if (op == BinOp::kMul) {
        const double* pb = t.value(ib).ptr();
        plan.for_each([&](std::size_t o, std::size_t bo, std::size_t n, std::size_t step) {
          for (std::size_t j = 0; j < n; ++j) ga[o + j] += g[o + j] * pb[bo + j * step];
        });
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
    }
    if (t.needs_grad(ib)) {
      auto gb = t.grad(ib);
      if (op == BinOp::kMul) {
        reduce_into(plan, g, gb, t.value(ia).ptr());
      } else if (op == BinOp::kAdd) {
        reduce_into(plan, g, gb);
      } else {
        std::vector<double> neg(g.begin(), g.end());
        for (double& v : neg) v = -v;
        reduce_into(plan, neg, gb);
      }
    }
  });
}

template <class Fwd, class Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  const Tensor& av = a.value();
  Tensor out = Tensor::uninitialized(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = fwd(av[i]);
  const auto ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, deriv](Tape& t, std::uint32_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(ia);
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
  });
}

// Views a shape as [outer, n, inner] around `axis`.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
  AxisSplit(const Shape& s, std::size_t axis) {
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    n = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  }
};

void check_axis(const char* op, const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                                shape_str(s));
  }
}

}  // namespace

Var matmul(Var a, Var b, bool transpose_b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Shape& as = av.shape();
  const Shape& bs = bv.shape();
  if (as.size() < 2 || bs.size() < 2) shape_error("matmul", as, bs);
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  const bool shared = bs.size() == 2;
  if (!shared) {
    if (bs.size() != as.size() || !std::equal(as.begin(), as.end() - 2, bs.begin())) shape_error("matmul", as, bs);
  }
  const std::size_t bk = transpose_b ? bs.back() : bs[bs.size() - 2];
  const std::size_t n = transpose_b ? bs[bs.size() - 2] : bs.back();
  if (bk != k) shape_error("matmul", as, bs);
  const std::size_t batch = av.numel() / std::max<std::size_t>(m * k, 1);

  Shape os(as.begin(), as.end() - 1);
  os.push_back(n);
  Tensor out(os);
  if (shared) {
    gemm(av.ptr(), bv.ptr(), out.ptr(), batch * m, k, n, false, transpose_b);
  } else {
    for (std::size_t bi = 0; bi < batch; ++bi) {
      gemm(av.ptr() + bi * m * k, bv.ptr() + bi * k * n, out.ptr() + bi * m * n, m, k, n, false, transpose_b);
    }
  }
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b},
                         [ia, ib, m, k, n, batch, shared, transpose_b](Tape& t, std::uint32_t self) {
                           const double* g = t.grad(self).data();
                           const double* pa = t.value(ia).ptr();
                           const double* pb = t.value(ib).ptr();
                           if (t.needs_grad(ia)) {
                             double* ga = t.grad(ia).data();
                             // dA = dC * op(B)^T
                             if (shared) {
                               gemm(g, pb, ga, batch * m, n, k, false, !transpose_b);
                             } else {
                               for (std::size_t bi = 0; bi < batch; ++bi) {
                                 gemm(g + bi * m * n, pb + bi * k * n, ga + bi * m * k, m, n, k, false, !transpose_b);
                               }
                             }
                           }
                           if (t.needs_grad(ib)) {
                             double* gb = t.grad(ib).data();
                             // dB = A^T dC, or dC^T A when B is stored transposed.
                             const std::size_t rows = shared ? batch * m : m;
                             const std::size_t reps = shared ? 1 : batch;
                             for (std::size_t bi = 0; bi < reps; ++bi) {
                               const double* ab = pa + bi * m * k;
                               const double* gc = g + bi * m * n;
                               double* gbb = gb + bi * k * n;
                               if (transpose_b) {
                                 gemm(gc, ab, gbb, n, rows, k, true, false);
                               } else {
                                 gemm(ab, gc, gbb, k, rows, n, true, false);
                               }
                             }
                           }
                         });
}

Var add(Var a, Var b) { return binary("add", a, b, BinOp::kAdd); }
Var sub(Var a, Var b) { return binary("sub", a, b, BinOp::kSub); }
Var mul(Var a, Var b) { return binary("mul", a, b, BinOp::kMul); }

Var scale(Var a, double factor) {
  return unary(a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary(a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = x.value();
  if (xv.rank() == 0) shape_error("layer_norm", xv.shape(), gamma.shape());
  const std::size_t d = xv.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) shape_error("layer_norm", xv.shape(), gamma.shape());
  const std::size_t rows = xv.numel() / std::max<std::size_t>(d, 1);
  Tensor out = Tensor::uninitialized(xv.shape());
  std::vector<double> xhat(xv.numel());
  std::vector<double> inv_std(rows);
  const double* pg = gamma.value().ptr();
  const double* pb = beta.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* px = xv.ptr() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += px[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (px[j] - mu) * (px[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (px[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * pg[j] + pb[j];
    }
  }
  const auto ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [ix, ig, ib, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::uint32_t self) {
        auto g = t.grad(self);
        if (t.needs_grad(ig)) {
          auto gg = t.grad(ig);
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % d] += g[i] * xhat[i];
        }
        if (t.needs_grad(ib)) {
          auto gb = t.grad(ib);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
        }
        if (t.needs_grad(ix)) {
          auto gx = t.grad(ix);
          const double* pg = t.value(ig).ptr();
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[r * d + j] * pg[j];
              m1 += dh;
              m2 += dh * xhat[r * d + j];
            }
            m1 *= inv_d;
            m2 *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[r * d + j] * pg[j];
              gx[r * d + j] += inv_std[r] * (dh - m1 - xhat[r * d + j] * m2);
            }
          }
        }
      });
}

Var sum(Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  check_axis("sum", xv.shape(), axis);
  const AxisSplit sp(xv.shape(), axis);
  Shape os = xv.shape();
  os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(os);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.n; ++i)
      for (std::size_t j = 0; j < sp.inner; ++j) out[o * sp.inner + j] += xv[(o * sp.n + i) * sp.inner + j];
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, sp](Tape& t, std::uint32_t self) {
    auto g = t.grad(self);
    auto gx = t.grad(ix);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.n; ++i)
        for (std::size_t j = 0; j < sp.inner; ++j) gx[(o * sp.n + i) * sp.inner + j] += g[o * sp.inner + j];
  });
}

Var mean(Var x, std::size_t axis) {
  check_axis("mean", x.shape(), axis);
  const std::size_t n = x.shape()[axis];
  if (n == 0) throw std::invalid_argument("mean over an empty axis of shape " + shape_str(x.shape()));
  return scale(sum(x, axis), 1.0 / static_cast<double>(n));
}

Var sum_all(Var x) {
  const Tensor& xv = x.value();
  double s = 0.0;
  for (double v : xv.values()) s += v;
  const auto ix = x.id();
  return x.tape().record(Tensor::scalar(s), {x}, [ix](Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad(ix)) v += g;
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  const Shape& first = parts[0].shape();
  check_axis("concat", first, axis);
  Shape os = first;
  os[axis] = 0;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) shape_error("concat", first, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) shape_error("concat", first, s);
    }
    os[axis] += s[axis];
    widths.push_back(s[axis]);
  }
  const AxisSplit sp(os, axis);
  Tensor out = Tensor::uninitialized(os);
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const Tensor& pv = parts[pi].value();
    const std::size_t chunk = widths[pi] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(pv.ptr() + o * chunk, chunk, out.ptr() + o * sp.n * sp.inner + offset);
    }
    offset += chunk;
  }
  std::vector<std::uint32_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return parts[0].tape().record(std::move(out), parts, [ids, widths, sp](Tape& t, std::uint32_t self) {
    auto g = t.grad(self);
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < ids.size(); ++pi) {
      const std::size_t chunk = widths[pi] * sp.inner;
      if (t.needs_grad(ids[pi])) {
        auto gp = t.grad(ids[pi]);
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const double* src = g.data() + o * sp.n * sp.inner + offset;
          double* dst = gp.data() + o * chunk;
          for (std::size_t j = 0; j < chunk; ++j) dst[j] += src[j];
        }
      }
      offset += chunk;
    }
  });
}

Var reshape(Var x, Shape shape) {
  if (shape_numel(shape) != x.numel()) shape_error("reshape", x.shape(), shape);
  const Tensor& xv = x.value();
  Tensor out = Tensor::uninitialized(std::move(shape));
  std::copy_n(xv.ptr(), xv.numel(), out.ptr());
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix](Tape& t, std::uint32_t self) {
    auto g = t.grad(self);
    auto gx = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  check_axis("slice", xv.shape(), axis);
  if (begin > end || end > xv.shape()[axis]) {
    throw std::invalid_argument("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                ") out of bounds for shape " + shape_str(xv.shape()));
  }
  const AxisSplit sp(xv.shape(), axis);
  Shape os = xv.shape();
  os[axis] = end - begin;
  Tensor out = Tensor::uninitialized(os);
  const std::size_t chunk = (end - begin) * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(xv.ptr() + (o * sp.n + begin) * sp.inner, chunk, out.ptr() + o * chunk);
  }
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, sp, begin, chunk](Tape& t, std::uint32_t self) {
    auto g = t.grad(self);
    auto gx = t.grad(ix);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      double* dst = gx.data() + (o * sp.n + begin) * sp.inner;
      const double* src = g.data() + o * chunk;
      for (std::size_t j = 0; j < chunk; ++j) dst[j] += src[j];
    }
  });
}

Var permute(Var x, const std::vector<std::size_t>& order) {
  const Tensor& xv = x.value();
  const Shape& s = xv.shape();
  if (order.size() != s.size()) shape_error("permute", s, Shape(order.begin(), order.end()));
  std::vector<bool> seen(s.size(), false);
  for (std::size_t ax : order) {
    if (ax >= s.size() || seen[ax]) shape_error("permute", s, Shape(order.begin(), order.end()));
    seen[ax] = true;
  }
  std::vector<std::size_t> in_stride(s.size(), 1);
  for (std::size_t ax = s.size(); ax-- > 1;) in_stride[ax - 1] = in_stride[ax] * s[ax];
  Shape os(s.size());
  std::vector<std::size_t> src_stride(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    os[i] = s[order[i]];
    src_stride[i] = in_stride[order[i]];
  }
  // Trailing axes left in place form contiguous runs of `inner` values.
  std::size_t lead = s.size(), inner = 1;
  while (lead > 0 && order[lead - 1] == lead - 1) inner *= s[--lead];
  // map[out_run] = in_offset of that run
  std::vector<std::size_t> map(inner ? xv.numel() / inner : 0);
  {
    std::vector<std::size_t> idx(lead, 0);
    std::size_t src = 0;
    for (std::size_t o = 0; o < map.size(); ++o) {
      map[o] = src;
      for (std::size_t ax = lead; ax-- > 0;) {
        if (++idx[ax] < os[ax]) {
          src += src_stride[ax];
          break;
        }
        src -= src_stride[ax] * (os[ax] - 1);
        idx[ax] = 0;
      }
    }
  }
  Tensor out = Tensor::uninitialized(os);
  for (std::size_t o = 0; o < map.size(); ++o) std::copy_n(xv.ptr() + map[o], inner, out.ptr() + o * inner);
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, inner, map = std::move(map)](Tape& t, std::uint32_t self) {
    auto g = t.grad(self);
    auto gx = t.grad(ix);
    for (std::size_t o = 0; o < map.size(); ++o) {
      const double* src = g.data() + o * inner;
      double* dst = gx.data() + map[o];
      for (std::size_t j = 0; j < inner; ++j) dst[j] += src[j];
    }
  });
}

Var broadcast_to(Var x, Shape shape) {
  BroadcastPlan plan("broadcast_to", shape, x.shape());
  Tensor out = Tensor::uninitialized(shape);
  const double* px = x.value().ptr();
  plan.for_each([&](std::size_t o, std::size_t bo, std::size_t n, std::size_t step) {
    for (std::size_t j = 0; j < n; ++j) out[o + j] = px[bo + j * step];
  });
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, plan](Tape& t, std::uint32_t self) {
    reduce_into(plan, t.grad(self), t.grad(ix));
  });
}

Tensor softmax_masked(const Tensor& logits, const Mask& valid) {
  if (valid.size() != logits.numel()) {
    throw std::invalid_argument("softmax_masked: mask of " + std::to_string(valid.size()) +
                                " entries for logits of shape " + shape_str(logits.shape()));
  }
  if (logits.rank() == 0) throw std::invalid_argument("softmax_masked: scalar input");
  const std::size_t cols = logits.shape().back();
  const std::size_t rows = cols ? logits.numel() / cols : 0;
  Tensor out = Tensor::uninitialized(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = logits.ptr() + r * cols;
    const std::uint8_t* mk = valid.data() + r * cols;
    double* y = out.ptr() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j)
      if (mk[j]) mx = std::max(mx, x[j]);
    if (mx == -std::numeric_limits<double>::infinity()) throw std::invalid_argument("empty attention row");
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      y[j] = mk[j] ? std::exp(x[j] - mx) : 0.0;
      z += y[j];
    }
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
  }
  return out;
}

Var softmax_masked(Var logits, const Mask& valid) {
  Tensor out = softmax_masked(logits.value(), valid);
  const std::size_t cols = out.shape().back();
  const auto ix = logits.id();
  return logits.tape().record(std::move(out), {logits}, [ix, cols](Tape& t, std::uint32_t self) {
    auto g = t.grad(self);
    auto gx = t.grad(ix);
    const Tensor& y = t.value(self);
    const std::size_t rows = cols ? y.numel() / cols : 0;
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += y[r * cols + j] * g[r * cols + j];
      for (std::size_t j = 0; j < cols; ++j) gx[r * cols + j] += y[r * cols + j] * (g[r * cols + j] - dot);
    }
  });
}

Var gather_rows(Var table, std::span<const std::int64_t> rows, Shape leading) {
  const Tensor& tv = table.value();
  if (tv.rank() != 2) throw std::invalid_argument("gather_rows: table must be 2-D, got " + shape_str(tv.shape()));
  if (shape_numel(leading) != rows.size()) {
    throw std::invalid_argument("gather_rows: " + std::to_string(rows.size()) + " indices for leading shape " +
                                shape_str(leading));
  }
  const std::size_t vocab = tv.shape()[0];
  const std::size_t d = tv.shape()[1];
  Shape os = leading;
  os.push_back(d);
  Tensor out(os);
  std::vector<std::int64_t> idx(rows.begin(), rows.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0) continue;
    if (static_cast<std::size_t>(idx[i]) >= vocab) {
      throw std::out_of_range("gather_rows: index " + std::to_string(idx[i]) + " outside table of " +
                              std::to_string(vocab) + " rows");
    }
    std::copy_n(tv.ptr() + static_cast<std::size_t>(idx[i]) * d, d, out.ptr() + i * d);
  }
  const auto it = table.id();
  return table.tape().record(std::move(out), {table}, [it, d, idx = std::move(idx)](Tape& t, std::uint32_t self) {
    auto g = t.grad(self);
    auto gt = t.grad(it);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0) continue;
      double* dst = gt.data() + static_cast<std::size_t>(idx[i]) * d;
      const double* src = g.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

Var bce_with_logits(Var logits, std::span<const double> labels) {
  const Tensor& z = logits.value();
  if (z.numel() != labels.size()) {
    throw std::invalid_argument("bce_with_logits: " + std::to_string(labels.size()) + " labels for logits of shape " +
                                shape_str(z.shape()));
  }
  if (labels.empty()) throw std::invalid_argument("bce_with_logits: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double x = z[i];
    total += std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))) - labels[i] * x;
  }
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  std::vector<double> y(labels.begin(), labels.end());
  const auto iz = logits.id();
  return logits.tape().record(Tensor::scalar(total * inv_n), {logits},
                              [iz, inv_n, y = std::move(y)](Tape& t, std::uint32_t self) {
                                const double g = t.grad(self)[0];
                                auto gz = t.grad(iz);
                                const Tensor& zv = t.value(iz);
                                for (std::size_t i = 0; i < y.size(); ++i) {
                                  const double x = zv[i];
                                  const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                                          : std::exp(x) / (1.0 + std::exp(x));
                                  gz[i] += g * (s - y[i]) * inv_n;
                                }
                              });
}

}  // namespace lensctr::num

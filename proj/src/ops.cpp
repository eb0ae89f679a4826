#include "tinyformer/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "tinyformer/box.hpp"

namespace tinyformer {

namespace {

thread_local std::uint64_t g_macs = 0;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

template <typename T>
void same_tape(Var<T> a, Var<T> b, const char* op) {
  require(a.tape != nullptr && a.tape == b.tape, std::string(op) + ": operands live on different tapes");
}

template <typename T>
void same_shape(Var<T> a, Var<T> b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + a.shape().str() +
                                      " vs " + b.shape().str());
}

std::size_t rows_of(const Shape& s) { return s.n * s.c * s.h; }

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

}  // namespace

std::uint64_t mac_count() { return g_macs; }
void reset_mac_count() { g_macs = 0; }

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  same_tape(a, b, "add");
  same_shape(a, b, "add");
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return a.tape->record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    for (std::size_t id : {ia, ib}) {
      auto s = t.grad_sink(id);
      for (std::size_t i = 0; i < s.size(); ++i) s[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  same_tape(a, b, "sub");
  same_shape(a, b, "sub");
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return a.tape->record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    auto sa = t.grad_sink(ia);
    for (std::size_t i = 0; i < sa.size(); ++i) sa[i] += g[i];
    auto sb = t.grad_sink(ib);
    for (std::size_t i = 0; i < sb.size(); ++i) sb[i] -= g[i];
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  same_tape(a, b, "mul");
  same_shape(a, b, "mul");
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape->record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    const auto& av = t.value(ia);
    const auto& bv = t.value(ib);
    auto sa = t.grad_sink(ia);
    for (std::size_t i = 0; i < sa.size(); ++i) sa[i] += g[i] * bv[i];
    auto sb = t.grad_sink(ib);
    for (std::size_t i = 0; i < sb.size(); ++i) sb[i] += g[i] * av[i];
  });
}

template <typename T>
Var<T> scale(Var<T> a, double factor) {
  const auto& av = a.value();
  Tensor<T> out(av.shape());
  const T f = static_cast<T>(factor);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * f;
  return a.tape->record(std::move(out), {a.id}, [ia = a.id, f](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    auto s = t.grad_sink(ia);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += g[i] * f;
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  double total = 0.0;
  for (T x : a.value().data()) total += x;
  Tensor<T> out(Shape{1, 1, 1, 1});
  out[0] = static_cast<T>(total);
  return a.tape->record(std::move(out), {a.id}, [ia = a.id](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    for (T& s : t.grad_sink(ia)) s += g;
  });
}

template <typename T>
Var<T> weighted_sum(Var<T> a, const Tensor<T>& weights) {
  require(weights.shape() == a.shape(), "weighted_sum: weight shape mismatch");
  const auto& av = a.value();
  double total = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) total += static_cast<double>(av[i]) * weights[i];
  Tensor<T> out(Shape{1, 1, 1, 1});
  out[0] = static_cast<T>(total);
  return a.tape->record(std::move(out), {a.id}, [ia = a.id, weights](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    auto s = t.grad_sink(ia);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += g * weights[i];
  });
}

template <typename T>
Var<T> abs(Var<T> a) {
  const auto& av = a.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(av[i]);
  return a.tape->record(std::move(out), {a.id}, [ia = a.id](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    const auto& av = t.value(ia);
    auto s = t.grad_sink(ia);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] += av[i] > T(0) ? g[i] : (av[i] < T(0) ? -g[i] : T(0));
    }
  });
}

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> parts) {
  require(!parts.empty(), "concat_channels: no inputs");
  const Shape first = parts[0].shape();
  std::size_t channels = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    same_tape(parts[0], p, "concat_channels");
    const Shape s = p.shape();
    require(s.n == first.n && s.h == first.h && s.w == first.w,
            "concat_channels: spatial/batch mismatch " + s.str() + " vs " + first.str());
    channels += s.c;
    ids.push_back(p.id);
    widths.push_back(s.c);
  }
  const std::size_t plane = first.h * first.w;
  Tensor<T> out(Shape{first.n, channels, first.h, first.w});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    const std::size_t block = v.shape().c * plane;
    for (std::size_t n = 0; n < first.n; ++n) {
      std::copy_n(v.data().begin() + n * block, block,
                  out.data().begin() + (n * channels + offset) * plane);
    }
    offset += v.shape().c;
  }
  auto* tape = parts[0].tape;
  return tape->record(std::move(out), std::span<const std::size_t>(ids),
                      [ids, widths, channels, plane, batch = first.n](Tape<T>& t, std::size_t self) {
                        auto g = t.grad(self);
                        std::size_t offset = 0;
                        for (std::size_t k = 0; k < ids.size(); ++k) {
                          auto s = t.grad_sink(ids[k]);
                          const std::size_t block = widths[k] * plane;
                          if (!s.empty()) {
                            for (std::size_t n = 0; n < batch; ++n) {
                              const T* src = g.data() + (n * channels + offset) * plane;
                              T* dst = s.data() + n * block;
                              for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                            }
                          }
                          offset += widths[k];
                        }
                      });
}

template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t count) {
  const Shape s = x.shape();
  require(begin + count <= s.c, "slice_channels: range exceeds channel extent");
  const std::size_t plane = s.h * s.w;
  Tensor<T> out(Shape{s.n, count, s.h, s.w});
  const auto& xv = x.value();
  for (std::size_t n = 0; n < s.n; ++n) {
    std::copy_n(xv.data().begin() + (n * s.c + begin) * plane, count * plane,
                out.data().begin() + n * count * plane);
  }
  return x.tape->record(std::move(out), {x.id}, [ix = x.id, s, begin, count, plane](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    auto dst = t.grad_sink(ix);
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* src = g.data() + n * count * plane;
      T* d = dst.data() + (n * s.c + begin) * plane;
      for (std::size_t i = 0; i < count * plane; ++i) d[i] += src[i];
    }
  });
}

template <typename T>
std::vector<Var<T>> split_channels(Var<T> x, std::span<const std::size_t> sizes) {
  std::size_t total = 0;
  for (std::size_t s : sizes) total += s;
  require(total == x.shape().c, "split_channels: sizes sum to " + std::to_string(total) +
                                    " but tensor has " + std::to_string(x.shape().c) + " channels");
  std::vector<Var<T>> parts;
  std::size_t begin = 0;
  for (std::size_t s : sizes) {
    parts.push_back(slice_channels(x, begin, s));
    begin += s;
  }
  return parts;
}

template <typename T>
Var<T> matmul2d(Var<T> a, Var<T> b) {
  same_tape(a, b, "matmul2d");
  const Shape sa = a.shape(), sb = b.shape();
  require(sa.n == 1 && sa.c == 1 && sb.n == 1 && sb.c == 1, "matmul2d: expects (1, 1, r, k) operands");
  require(sa.w == sb.h, "matmul2d: inner dimensions differ (" + std::to_string(sa.w) + " vs " +
                            std::to_string(sb.h) + ")");
  const std::size_t r = sa.h, k = sa.w, s = sb.w;
  Tensor<T> out(Shape{1, 1, r, s});
  MatMap<T>(out.data().data(), r, s).noalias() =
      ConstMatMap<T>(a.value().data().data(), r, k) * ConstMatMap<T>(b.value().data().data(), k, s);
  g_macs += r * k * s;
  return a.tape->record(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id, r, k, s](Tape<T>& t, std::size_t self) {
    ConstMatMap<T> g(t.grad(self).data(), r, s);
    auto da = t.grad_sink(ia);
    if (!da.empty()) {
      MatMap<T>(da.data(), r, k).noalias() += g * ConstMatMap<T>(t.value(ib).data().data(), k, s).transpose();
    }
    auto db = t.grad_sink(ib);
    if (!db.empty()) {
      MatMap<T>(db.data(), k, s).noalias() += ConstMatMap<T>(t.value(ia).data().data(), r, k).transpose() * g;
    }
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, std::optional<Var<T>> bias) {
  same_tape(x, weight, "linear");
  const Shape sx = x.shape(), sw = weight.shape();
  require(sw.n == 1 && sw.c == 1, "linear: weight must be (1, 1, in, out)");
  require(sx.w == sw.h, "linear: input width " + std::to_string(sx.w) + " != weight rows " +
                            std::to_string(sw.h));
  const std::size_t rows = rows_of(sx), in = sw.h, outw = sw.w;
  if (bias) require(bias->shape() == Shape{1, 1, 1, outw}, "linear: bias must be (1, 1, 1, out)");
  Tensor<T> out(Shape{sx.n, sx.c, sx.h, outw});
  MatMap<T> y(out.data().data(), rows, outw);
  y.noalias() = ConstMatMap<T>(x.value().data().data(), rows, in) *
                ConstMatMap<T>(weight.value().data().data(), in, outw);
  if (bias) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias->value().data().data(), outw);
    y.rowwise() += b;
  }
  g_macs += rows * in * outw;
  std::vector<std::size_t> ids{x.id, weight.id};
  if (bias) ids.push_back(bias->id);
  return x.tape->record(std::move(out), std::span<const std::size_t>(ids),
                        [ids, rows, in, outw](Tape<T>& t, std::size_t self) {
                          ConstMatMap<T> g(t.grad(self).data(), rows, outw);
                          auto dx = t.grad_sink(ids[0]);
                          if (!dx.empty()) {
                            MatMap<T>(dx.data(), rows, in).noalias() +=
                                g * ConstMatMap<T>(t.value(ids[1]).data().data(), in, outw).transpose();
                          }
                          auto dw = t.grad_sink(ids[1]);
                          if (!dw.empty()) {
                            MatMap<T>(dw.data(), in, outw).noalias() +=
                                ConstMatMap<T>(t.value(ids[0]).data().data(), rows, in).transpose() * g;
                          }
                          if (ids.size() > 2) {
                            auto db = t.grad_sink(ids[2]);
                            if (!db.empty()) {
                              Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(db.data(), outw) +=
                                  g.colwise().sum();
                            }
                          }
                        });
}

template <typename T>
Var<T> add_row(Var<T> x, Var<T> row) {
  same_tape(x, row, "add_row");
  const Shape sx = x.shape();
  require(row.shape() == Shape{1, 1, 1, sx.w}, "add_row: row must be (1, 1, 1, w)");
  const std::size_t rows = rows_of(sx), w = sx.w;
  Tensor<T> out = x.value();
  out.drop_grad();
  const auto& rv = row.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] += rv[j];
  return x.tape->record(std::move(out), {x.id, row.id}, [ix = x.id, ir = row.id, rows, w](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    auto dx = t.grad_sink(ix);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i];
    auto dr = t.grad_sink(ir);
    if (!dr.empty()) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j) dr[j] += g[r * w + j];
    }
  });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, std::optional<Var<T>> bias, std::size_t stride, std::size_t pad) {
  same_tape(x, weight, "conv2d");
  const Shape sx = x.shape(), sw = weight.shape();
  require(sw.h == sw.w && sw.h >= 1, "conv2d: kernel must be square");
  require(sx.c == sw.c, "conv2d: input has " + std::to_string(sx.c) + " channels, weight expects " +
                            std::to_string(sw.c));
  require(stride >= 1, "conv2d: stride must be positive");
  const std::size_t k = sw.h;
  require(sx.h + 2 * pad >= k && sx.w + 2 * pad >= k, "conv2d: input smaller than kernel");
  const std::size_t cout = sw.n, cin = sx.c;
  if (bias) require(bias->shape() == Shape{1, 1, 1, cout}, "conv2d: bias must be (1, 1, 1, c_out)");
  const std::size_t ho = (sx.h + 2 * pad - k) / stride + 1;
  const std::size_t wo = (sx.w + 2 * pad - k) / stride + 1;
  const std::size_t plane = ho * wo;
  const std::size_t cols = sx.n * plane;
  const std::size_t ckk = cin * k * k;

  // im2col: row (ci, ky, kx), column (n, oy, ox).
  AlignedVector<T> col(ckk * cols, T(0));
  const auto& xv = x.value();
  for (std::size_t ci = 0; ci < cin; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* dst = col.data() + ((ci * k + ky) * k + kx) * cols;
        for (std::size_t n = 0; n < sx.n; ++n) {
          const T* src = xv.data().data() + (n * cin + ci) * sx.h * sx.w;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
            T* row = dst + n * plane + oy * wo;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(sx.h)) continue;
            const T* srow = src + iy * sx.w;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(sx.w)) row[ox] = srow[ix];
            }
          }
        }
      }
    }
  }

  RowMat<T> y = ConstMatMap<T>(weight.value().data().data(), cout, ckk) * ConstMatMap<T>(col.data(), ckk, cols);
  g_macs += cout * ckk * cols;
  Tensor<T> out(Shape{sx.n, cout, ho, wo});
  for (std::size_t n = 0; n < sx.n; ++n) {
    for (std::size_t co = 0; co < cout; ++co) {
      const T b = bias ? bias->value()[co] : T(0);
      const T* src = y.data() + co * cols + n * plane;
      T* dst = out.data().data() + (n * cout + co) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + b;
    }
  }

  std::vector<std::size_t> ids{x.id, weight.id};
  if (bias) ids.push_back(bias->id);
  return x.tape->record(
      std::move(out), std::span<const std::size_t>(ids),
      [ids, col = std::move(col), sx, cout, cin, k, stride, pad, ho, wo, plane, cols, ckk](Tape<T>& t, std::size_t self) {
        auto g = t.grad(self);
        RowMat<T> gm(cout, cols);
        for (std::size_t n = 0; n < sx.n; ++n)
          for (std::size_t co = 0; co < cout; ++co)
            std::copy_n(g.data() + (n * cout + co) * plane, plane, gm.data() + co * cols + n * plane);

        auto dw = t.grad_sink(ids[1]);
        if (!dw.empty()) {
          MatMap<T>(dw.data(), cout, ckk).noalias() += gm * ConstMatMap<T>(col.data(), ckk, cols).transpose();
        }
        if (ids.size() > 2) {
          auto db = t.grad_sink(ids[2]);
          if (!db.empty()) {
            for (std::size_t co = 0; co < cout; ++co) db[co] += gm.row(co).sum();
          }
        }
        auto dx = t.grad_sink(ids[0]);
        if (!dx.empty()) {
          RowMat<T> dcol = ConstMatMap<T>(t.value(ids[1]).data().data(), cout, ckk).transpose() * gm;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                const T* src = dcol.data() + ((ci * k + ky) * k + kx) * cols;
                for (std::size_t n = 0; n < sx.n; ++n) {
                  T* dst = dx.data() + (n * cin + ci) * sx.h * sx.w;
                  for (std::size_t oy = 0; oy < ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(sx.h)) continue;
                    const T* row = src + n * plane + oy * wo;
                    T* drow = dst + iy * sx.w;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                      const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                      if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(sx.w)) drow[ix] += row[ox];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> batch_norm_train(Var<T> x, Var<T> gamma, Var<T> beta, double eps, BatchStats* stats) {
  same_tape(x, gamma, "batch_norm_train");
  const Shape s = x.shape();
  require(gamma.shape() == Shape{1, 1, 1, s.c} && beta.shape() == Shape{1, 1, 1, s.c},
          "batch_norm: gamma/beta must be (1, 1, 1, c)");
  const std::size_t plane = s.h * s.w;
  const std::size_t count = s.n * plane;
  require(count > 0, "batch_norm: empty batch");
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  std::vector<T> xhat(xv.size());
  std::vector<double> invstd(s.c);
  Tensor<T> out(s);
  if (stats) {
    stats->mean.assign(s.c, 0.0);
    stats->var.assign(s.c, 0.0);
    stats->count = count;
  }
  for (std::size_t c = 0; c < s.c; ++c) {
    double mean = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* p = xv.data().data() + (n * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) mean += p[i];
    }
    mean /= static_cast<double>(count);
    double var = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* p = xv.data().data() + (n * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mean) * (p[i] - mean);
    }
    var /= static_cast<double>(count);
    invstd[c] = 1.0 / std::sqrt(var + eps);
    if (stats) {
      stats->mean[c] = mean;
      stats->var[c] = var;
    }
    for (std::size_t n = 0; n < s.n; ++n) {
      const std::size_t base = (n * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T xh = static_cast<T>((xv[base + i] - mean) * invstd[c]);
        xhat[base + i] = xh;
        out[base + i] = gv[c] * xh + bv[c];
      }
    }
  }
  return x.tape->record(
      std::move(out), {x.id, gamma.id, beta.id},
      [ix = x.id, ig = gamma.id, ib = beta.id, s, plane, count, xhat = std::move(xhat), invstd = std::move(invstd)](
          Tape<T>& t, std::size_t self) {
        auto g = t.grad(self);
        const auto& gv = t.value(ig);
        auto dx = t.grad_sink(ix);
        auto dg = t.grad_sink(ig);
        auto db = t.grad_sink(ib);
        for (std::size_t c = 0; c < s.c; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t n = 0; n < s.n; ++n) {
            const std::size_t base = (n * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_g += g[base + i];
              sum_gx += static_cast<double>(g[base + i]) * xhat[base + i];
            }
          }
          if (!dg.empty()) dg[c] += static_cast<T>(sum_gx);
          if (!db.empty()) db[c] += static_cast<T>(sum_g);
          if (dx.empty()) continue;
          const double m = static_cast<double>(count);
          const double k = gv[c] * invstd[c] / m;
          for (std::size_t n = 0; n < s.n; ++n) {
            const std::size_t base = (n * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              dx[base + i] += static_cast<T>(k * (m * g[base + i] - sum_g - xhat[base + i] * sum_gx));
            }
          }
        }
      });
}

template <typename T>
Var<T> batch_norm_infer(Var<T> x, Var<T> gamma, Var<T> beta, std::span<const T> mean, std::span<const T> var,
                        double eps) {
  same_tape(x, gamma, "batch_norm_infer");
  const Shape s = x.shape();
  require(gamma.shape() == Shape{1, 1, 1, s.c} && beta.shape() == Shape{1, 1, 1, s.c},
          "batch_norm: gamma/beta must be (1, 1, 1, c)");
  require(mean.size() == s.c && var.size() == s.c, "batch_norm: running statistics have wrong length");
  const std::size_t plane = s.h * s.w;
  std::vector<T> mu(mean.begin(), mean.end());
  std::vector<T> invstd(s.c);
  for (std::size_t c = 0; c < s.c; ++c) invstd[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var[c]) + eps));
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  Tensor<T> out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t base = (n * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[base + i] = gv[c] * (xv[base + i] - mu[c]) * invstd[c] + bv[c];
    }
  return x.tape->record(std::move(out), {x.id, gamma.id, beta.id},
                        [ix = x.id, ig = gamma.id, ib = beta.id, s, plane, mu = std::move(mu),
                         invstd = std::move(invstd)](Tape<T>& t, std::size_t self) {
                          auto g = t.grad(self);
                          const auto& xv = t.value(ix);
                          const auto& gv = t.value(ig);
                          auto dx = t.grad_sink(ix);
                          auto dg = t.grad_sink(ig);
                          auto db = t.grad_sink(ib);
                          for (std::size_t n = 0; n < s.n; ++n)
                            for (std::size_t c = 0; c < s.c; ++c) {
                              const std::size_t base = (n * s.c + c) * plane;
                              for (std::size_t i = 0; i < plane; ++i) {
                                const T gi = g[base + i];
                                if (!dx.empty()) dx[base + i] += gi * gv[c] * invstd[c];
                                if (!dg.empty()) dg[c] += gi * (xv[base + i] - mu[c]) * invstd[c];
                                if (!db.empty()) db[c] += gi;
                              }
                            }
                        });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, double eps) {
  same_tape(x, gamma, "layer_norm");
  const Shape s = x.shape();
  const std::size_t w = s.w, rows = rows_of(s);
  require(gamma.shape() == Shape{1, 1, 1, w} && beta.shape() == Shape{1, 1, 1, w},
          "layer_norm: gamma/beta must be (1, 1, 1, w)");
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  std::vector<T> xhat(xv.size());
  std::vector<double> invstd(rows);
  Tensor<T> out(s);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* p = xv.data().data() + r * w;
    double mean = 0.0;
    for (std::size_t j = 0; j < w; ++j) mean += p[j];
    mean /= static_cast<double>(w);
    double var = 0.0;
    for (std::size_t j = 0; j < w; ++j) var += (p[j] - mean) * (p[j] - mean);
    var /= static_cast<double>(w);
    invstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < w; ++j) {
      const T xh = static_cast<T>((p[j] - mean) * invstd[r]);
      xhat[r * w + j] = xh;
      out[r * w + j] = gv[j] * xh + bv[j];
    }
  }
  return x.tape->record(std::move(out), {x.id, gamma.id, beta.id},
                        [ix = x.id, ig = gamma.id, ib = beta.id, rows, w, xhat = std::move(xhat),
                         invstd = std::move(invstd)](Tape<T>& t, std::size_t self) {
                          auto g = t.grad(self);
                          const auto& gv = t.value(ig);
                          auto dx = t.grad_sink(ix);
                          auto dg = t.grad_sink(ig);
                          auto db = t.grad_sink(ib);
                          for (std::size_t r = 0; r < rows; ++r) {
                            double sum_d = 0.0, sum_dx = 0.0;
                            for (std::size_t j = 0; j < w; ++j) {
                              const double d = static_cast<double>(g[r * w + j]) * gv[j];
                              sum_d += d;
                              sum_dx += d * xhat[r * w + j];
                              if (!dg.empty()) dg[j] += g[r * w + j] * xhat[r * w + j];
                              if (!db.empty()) db[j] += g[r * w + j];
                            }
                            if (dx.empty()) continue;
                            const double m = static_cast<double>(w);
                            for (std::size_t j = 0; j < w; ++j) {
                              const double d = static_cast<double>(g[r * w + j]) * gv[j];
                              dx[r * w + j] += static_cast<T>(invstd[r] / m * (m * d - sum_d - xhat[r * w + j] * sum_dx));
                            }
                          }
                        });
}

namespace {

template <typename T, typename F, typename D>
Var<T> unary(Var<T> x, F f, D df) {
  const auto& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return x.tape->record(std::move(out), {x.id}, [ix = x.id, df](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    const auto& xv = t.value(ix);
    auto dx = t.grad_sink(ix);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * df(xv[i]);
  });
}

template <typename T>
T logistic(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace

template <typename T>
Var<T> silu(Var<T> x) {
  return unary(
      x, [](T v) { return v * logistic(v); },
      [](T v) {
        const T s = logistic(v);
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2 / pi)
  return unary(
      x,
      [](T v) {
        const double u = k * (v + 0.044715 * v * v * v);
        return static_cast<T>(0.5 * v * (1.0 + std::tanh(u)));
      },
      [](T v) {
        const double u = k * (v + 0.044715 * v * v * v);
        const double th = std::tanh(u);
        return static_cast<T>(0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * k * (1.0 + 3.0 * 0.044715 * v * v));
      });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return unary(
      x, [](T v) { return logistic(v); },
      [](T v) {
        const T s = logistic(v);
        return s * (T(1) - s);
      });
}

namespace {

struct Taps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

Taps bilinear_taps(std::size_t in) {
  Taps taps;
  const std::size_t out = 2 * in;
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) / 2.0 - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    taps.lo.push_back(lo);
    taps.hi.push_back(std::min(lo + 1, in - 1));
    taps.frac.push_back(src - static_cast<double>(lo));
  }
  return taps;
}

}  // namespace

template <typename T>
Var<T> upsample_bilinear_x2(Var<T> x) {
  const Shape s = x.shape();
  require(s.h >= 1 && s.w >= 1, "upsample_bilinear_x2: empty spatial extent");
  const Taps ty = bilinear_taps(s.h), tx = bilinear_taps(s.w);
  const std::size_t oh = 2 * s.h, ow = 2 * s.w;
  Tensor<T> out(Shape{s.n, s.c, oh, ow});
  const auto& xv = x.value();
  for (std::size_t p = 0; p < s.n * s.c; ++p) {
    const T* src = xv.data().data() + p * s.h * s.w;
    T* dst = out.data().data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const double fy = ty.frac[y];
      const T* r0 = src + ty.lo[y] * s.w;
      const T* r1 = src + ty.hi[y] * s.w;
      for (std::size_t xo = 0; xo < ow; ++xo) {
        const double fx = tx.frac[xo];
        const double top = (1.0 - fx) * r0[tx.lo[xo]] + fx * r0[tx.hi[xo]];
        const double bot = (1.0 - fx) * r1[tx.lo[xo]] + fx * r1[tx.hi[xo]];
        dst[y * ow + xo] = static_cast<T>((1.0 - fy) * top + fy * bot);
      }
    }
  }
  return x.tape->record(std::move(out), {x.id}, [ix = x.id, s, ty, tx, oh, ow](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    auto dx = t.grad_sink(ix);
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
      const T* src = g.data() + p * oh * ow;
      T* dst = dx.data() + p * s.h * s.w;
      for (std::size_t y = 0; y < oh; ++y) {
        const double fy = ty.frac[y];
        T* r0 = dst + ty.lo[y] * s.w;
        T* r1 = dst + ty.hi[y] * s.w;
        for (std::size_t xo = 0; xo < ow; ++xo) {
          const double fx = tx.frac[xo];
          const double gv = src[y * ow + xo];
          r0[tx.lo[xo]] += static_cast<T>((1.0 - fy) * (1.0 - fx) * gv);
          r0[tx.hi[xo]] += static_cast<T>((1.0 - fy) * fx * gv);
          r1[tx.lo[xo]] += static_cast<T>(fy * (1.0 - fx) * gv);
          r1[tx.hi[xo]] += static_cast<T>(fy * fx * gv);
        }
      }
    }
  });
}

template <typename T>
Var<T> attention_core(Var<T> q, Var<T> k, Var<T> v, std::size_t n_heads) {
  same_tape(q, k, "attention_core");
  same_tape(q, v, "attention_core");
  const Shape sq = q.shape(), sk = k.shape();
  require(sq.c == 1 && sk.c == 1, "attention_core: expects (n, 1, T, d) token matrices");
  require(k.shape() == v.shape(), "attention_core: key/value shapes differ");
  require(sq.n == sk.n && sq.w == sk.w, "attention_core: batch or width mismatch");
  require(n_heads >= 1 && sq.w % n_heads == 0,
          "attention_core: width " + std::to_string(sq.w) + " not divisible by " + std::to_string(n_heads) + " heads");
  const std::size_t batch = sq.n, tq = sq.h, tk = sk.h, d = sq.w, dh = d / n_heads;
  require(tk >= 1, "attention_core: no keys");
  const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  AlignedVector<T> probs(batch * n_heads * tq * tk);
  Tensor<T> out(sq);
  const T* qd = q.value().data().data();
  const T* kd = k.value().data().data();
  const T* vd = v.value().data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      ConstStridedMap<T> qh(qd + b * tq * d + h * dh, tq, dh, Eigen::OuterStride<>(d));
      ConstStridedMap<T> kh(kd + b * tk * d + h * dh, tk, dh, Eigen::OuterStride<>(d));
      ConstStridedMap<T> vh(vd + b * tk * d + h * dh, tk, dh, Eigen::OuterStride<>(d));
      MatMap<T> p(probs.data() + (b * n_heads + h) * tq * tk, tq, tk);
      p.noalias() = (qh * kh.transpose()) * inv;
      for (std::size_t r = 0; r < tq; ++r) {
        const T mx = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - mx).exp();
        p.row(r) /= p.row(r).sum();
      }
      StridedMap<T> oh(out.data().data() + b * tq * d + h * dh, tq, dh, Eigen::OuterStride<>(d));
      oh.noalias() = p * vh;
    }
  }
  g_macs += 2 * batch * tq * tk * d;
  return q.tape->record(
      std::move(out), {q.id, k.id, v.id},
      [iq = q.id, ik = k.id, iv = v.id, probs = std::move(probs), batch, n_heads, tq, tk, d, dh, inv](
          Tape<T>& t, std::size_t self) {
        auto g = t.grad(self);
        const T* qd = t.value(iq).data().data();
        const T* kd = t.value(ik).data().data();
        const T* vd = t.value(iv).data().data();
        auto dq = t.grad_sink(iq);
        auto dk = t.grad_sink(ik);
        auto dv = t.grad_sink(iv);
        RowMat<T> dp(tq, tk);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < n_heads; ++h) {
            const std::size_t qoff = b * tq * d + h * dh, koff = b * tk * d + h * dh;
            ConstStridedMap<T> go(g.data() + qoff, tq, dh, Eigen::OuterStride<>(d));
            ConstStridedMap<T> qh(qd + qoff, tq, dh, Eigen::OuterStride<>(d));
            ConstStridedMap<T> kh(kd + koff, tk, dh, Eigen::OuterStride<>(d));
            ConstStridedMap<T> vh(vd + koff, tk, dh, Eigen::OuterStride<>(d));
            ConstMatMap<T> p(probs.data() + (b * n_heads + h) * tq * tk, tq, tk);
            if (!dv.empty()) {
              StridedMap<T>(dv.data() + koff, tk, dh, Eigen::OuterStride<>(d)).noalias() += p.transpose() * go;
            }
            dp.noalias() = go * vh.transpose();
            // softmax backward: dS = P * (dP - rowsum(dP * P))
            for (std::size_t r = 0; r < tq; ++r) {
              const T dot = (dp.row(r).array() * p.row(r).array()).sum();
              dp.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
            }
            dp *= inv;
            if (!dq.empty()) {
              StridedMap<T>(dq.data() + qoff, tq, dh, Eigen::OuterStride<>(d)).noalias() += dp * kh;
            }
            if (!dk.empty()) {
              StridedMap<T>(dk.data() + koff, tk, dh, Eigen::OuterStride<>(d)).noalias() += dp.transpose() * qh;
            }
          }
        }
      });
}

template <typename T>
Var<T> to_tokens(Var<T> x) {
  const Shape s = x.shape();
  const std::size_t plane = s.h * s.w;
  Tensor<T> out(Shape{s.n, 1, plane, s.c});
  const auto& xv = x.value();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t p = 0; p < plane; ++p) out[(n * plane + p) * s.c + c] = xv[(n * s.c + c) * plane + p];
  return x.tape->record(std::move(out), {x.id}, [ix = x.id, s, plane](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    auto dx = t.grad_sink(ix);
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c)
        for (std::size_t p = 0; p < plane; ++p) dx[(n * s.c + c) * plane + p] += g[(n * plane + p) * s.c + c];
  });
}

template <typename T>
Var<T> from_tokens(Var<T> x, std::size_t h, std::size_t w) {
  const Shape s = x.shape();
  require(s.c == 1 && s.h == h * w, "from_tokens: token count " + std::to_string(s.h) + " != " +
                                        std::to_string(h) + "x" + std::to_string(w));
  const std::size_t plane = h * w, c = s.w;
  Tensor<T> out(Shape{s.n, c, h, w});
  const auto& xv = x.value();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < plane; ++p) out[(n * c + ch) * plane + p] = xv[(n * plane + p) * c + ch];
  return x.tape->record(std::move(out), {x.id}, [ix = x.id, n = s.n, c, plane](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    auto dx = t.grad_sink(ix);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < plane; ++p) dx[(b * plane + p) * c + ch] += g[(b * c + ch) * plane + p];
  });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const Shape first = parts[0].shape();
  std::size_t total = 0;
  std::vector<std::size_t> ids, counts;
  for (const auto& p : parts) {
    same_tape(parts[0], p, "concat_rows");
    const Shape s = p.shape();
    require(s.c == 1 && s.n == first.n && s.w == first.w, "concat_rows: expects (n, 1, T, d) with equal n, d");
    total += s.h;
    ids.push_back(p.id);
    counts.push_back(s.h);
  }
  const std::size_t d = first.w;
  Tensor<T> out(Shape{first.n, 1, total, d});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    const std::size_t rows = v.shape().h;
    for (std::size_t n = 0; n < first.n; ++n) {
      std::copy_n(v.data().begin() + n * rows * d, rows * d, out.data().begin() + (n * total + offset) * d);
    }
    offset += rows;
  }
  return parts[0].tape->record(std::move(out), std::span<const std::size_t>(ids),
                               [ids, counts, total, d, batch = first.n](Tape<T>& t, std::size_t self) {
                                 auto g = t.grad(self);
                                 std::size_t offset = 0;
                                 for (std::size_t k = 0; k < ids.size(); ++k) {
                                   auto s = t.grad_sink(ids[k]);
                                   if (!s.empty()) {
                                     for (std::size_t n = 0; n < batch; ++n) {
                                       const T* src = g.data() + (n * total + offset) * d;
                                       T* dst = s.data() + n * counts[k] * d;
                                       for (std::size_t i = 0; i < counts[k] * d; ++i) dst[i] += src[i];
                                     }
                                   }
                                   offset += counts[k];
                                 }
                               });
}

template <typename T>
Var<T> broadcast_batch(Var<T> x, std::size_t n) {
  const Shape s = x.shape();
  require(s.n == 1, "broadcast_batch: expects a single batch element");
  const std::size_t block = s.c * s.h * s.w;
  Tensor<T> out(Shape{n, s.c, s.h, s.w});
  for (std::size_t b = 0; b < n; ++b) std::copy_n(x.value().data().begin(), block, out.data().begin() + b * block);
  return x.tape->record(std::move(out), {x.id}, [ix = x.id, n, block](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    auto dx = t.grad_sink(ix);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < block; ++i) dx[i] += g[b * block + i];
  });
}

template <typename T>
Var<T> gather_rows(Var<T> x, std::size_t batch, std::span<const std::size_t> rows) {
  const Shape s = x.shape();
  require(s.c == 1 && batch < s.n, "gather_rows: bad batch index or layout");
  const std::size_t d = s.w;
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Tensor<T> out(Shape{1, 1, idx.size(), d});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    require(idx[r] < s.h, "gather_rows: row index out of range");
    std::copy_n(x.value().data().begin() + (batch * s.h + idx[r]) * d, d, out.data().begin() + r * d);
  }
  return x.tape->record(std::move(out), {x.id}, [ix = x.id, idx, batch, s, d](Tape<T>& t, std::size_t self) {
    auto g = t.grad(self);
    auto dx = t.grad_sink(ix);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) dx[(batch * s.h + idx[r]) * d + j] += g[r * d + j];
  });
}

template <typename T>
Var<T> sigmoid_focal_loss(Var<T> logits, const Tensor<T>& targets, double alpha, double gamma) {
  require(targets.shape() == logits.shape(), "sigmoid_focal_loss: target shape mismatch");
  const auto& xv = logits.value();
  std::vector<T> dloss(xv.size());
  double total = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double x = xv[i], t = targets[i];
    const double p = 1.0 / (1.0 + std::exp(-x));
    const double ce = t * softplus(-x) + (1.0 - t) * softplus(x);
    const double pt = p * t + (1.0 - p) * (1.0 - t);
    const double at = alpha * t + (1.0 - alpha) * (1.0 - t);
    const double mod = std::pow(1.0 - pt, gamma);
    total += at * mod * ce;
    const double dmod = -gamma * std::pow(1.0 - pt, gamma - 1.0) * (2.0 * t - 1.0) * p * (1.0 - p);
    dloss[i] = static_cast<T>(at * (dmod * ce + mod * (p - t)));
  }
  Tensor<T> out(Shape{1, 1, 1, 1});
  out[0] = static_cast<T>(total);
  return logits.tape->record(std::move(out), {logits.id}, [ix = logits.id, dloss = std::move(dloss)](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    auto dx = t.grad_sink(ix);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * dloss[i];
  });
}

template <typename T>
Var<T> giou_loss(Var<T> boxes, const Tensor<T>& targets) {
  const Shape s = boxes.shape();
  require(s.n == 1 && s.c == 1 && s.w == 4, "giou_loss: boxes must be (1, 1, k, 4)");
  require(targets.shape() == s, "giou_loss: target shape mismatch");
  const auto& bv = boxes.value();
  std::vector<T> dloss(bv.size());
  double total = 0.0;
  for (std::size_t r = 0; r < s.h; ++r) {
    const Box a{bv[r * 4], bv[r * 4 + 1], bv[r * 4 + 2], bv[r * 4 + 3]};
    const Box b{targets[r * 4], targets[r * 4 + 1], targets[r * 4 + 2], targets[r * 4 + 3]};
    validate_box(b);
    std::array<double, 4> grad{};
    total += 1.0 - giou_and_grad(a, b, grad);
    for (std::size_t j = 0; j < 4; ++j) dloss[r * 4 + j] = static_cast<T>(-grad[j]);
  }
  Tensor<T> out(Shape{1, 1, 1, 1});
  out[0] = static_cast<T>(total);
  return boxes.tape->record(std::move(out), {boxes.id}, [ix = boxes.id, dloss = std::move(dloss)](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    auto dx = t.grad_sink(ix);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * dloss[i];
  });
}

#define TINYFORMER_INSTANTIATE_OPS(T)                                                                      \
  template Var<T> add(Var<T>, Var<T>);                                                                     \
  template Var<T> sub(Var<T>, Var<T>);                                                                     \
  template Var<T> mul(Var<T>, Var<T>);                                                                     \
  template Var<T> scale(Var<T>, double);                                                                   \
  template Var<T> sum(Var<T>);                                                                             \
  template Var<T> weighted_sum(Var<T>, const Tensor<T>&);                                                  \
  template Var<T> abs(Var<T>);                                                                             \
  template Var<T> concat_channels(std::span<const Var<T>>);                                                \
  template Var<T> slice_channels(Var<T>, std::size_t, std::size_t);                                        \
  template std::vector<Var<T>> split_channels(Var<T>, std::span<const std::size_t>);                       \
  template Var<T> matmul2d(Var<T>, Var<T>);                                                                \
  template Var<T> linear(Var<T>, Var<T>, std::optional<Var<T>>);                                           \
  template Var<T> add_row(Var<T>, Var<T>);                                                                 \
  template Var<T> conv2d(Var<T>, Var<T>, std::optional<Var<T>>, std::size_t, std::size_t);                 \
  template Var<T> batch_norm_train(Var<T>, Var<T>, Var<T>, double, BatchStats*);                           \
  template Var<T> batch_norm_infer(Var<T>, Var<T>, Var<T>, std::span<const T>, std::span<const T>, double); \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, double);                                              \
  template Var<T> silu(Var<T>);                                                                            \
  template Var<T> gelu(Var<T>);                                                                            \
  template Var<T> sigmoid(Var<T>);                                                                         \
  template Var<T> upsample_bilinear_x2(Var<T>);                                                            \
  template Var<T> attention_core(Var<T>, Var<T>, Var<T>, std::size_t);                                     \
  template Var<T> to_tokens(Var<T>);                                                                       \
  template Var<T> from_tokens(Var<T>, std::size_t, std::size_t);                                           \
  template Var<T> concat_rows(std::span<const Var<T>>);                                                    \
  template Var<T> broadcast_batch(Var<T>, std::size_t);                                                    \
  template Var<T> gather_rows(Var<T>, std::size_t, std::span<const std::size_t>);                          \
  template Var<T> sigmoid_focal_loss(Var<T>, const Tensor<T>&, double, double);                            \
  template Var<T> giou_loss(Var<T>, const Tensor<T>&);

TINYFORMER_INSTANTIATE_OPS(float)
TINYFORMER_INSTANTIATE_OPS(double)

}  // namespace tinyformer

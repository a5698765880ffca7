#include "tensor/ops.hpp"

#include "core/error.hpp"
#include "tensor/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>

namespace sgti {

namespace {

std::atomic<bool> g_matmul_fault{false};

using detail::Node;

[[noreturn]] void shape_fail(const char *op, const Shape &a, const Shape &b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) +
                   " and " + shape_str(b));
}

void require_rank(const char *op, const Tensor &t, std::size_t rank) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " +
                     std::to_string(rank) + ", got shape " +
                     shape_str(t.shape()));
}

// Gradient buffer of parent i, or an empty span when it needs no gradient.
std::span<float> pgrad(Node &self, std::size_t i) {
  auto &p = *self.parents.at(i);
  if (!p.requires_grad)
    return {};
  return p.grad_buffer();
}

std::int64_t last_dim(const Tensor &t) {
  if (t.rank() == 0)
    throw ShapeError("expected at least rank 1, got a scalar");
  return t.shape().back();
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor &a, const char *name, Fwd fwd, Deriv deriv) {
  auto x = a.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = static_cast<float>(fwd(static_cast<double>(x[i])));
  return make_op_result(a.shape(), std::move(out), name, {a},
                        [deriv](Node &self) {
                          auto ga = pgrad(self, 0);
                          if (ga.empty())
                            return;
                          const auto &x = self.parents[0]->data;
                          for (std::size_t i = 0; i < x.size(); ++i)
                            ga[i] += static_cast<float>(
                                self.grad[i] *
                                deriv(static_cast<double>(x[i]),
                                      static_cast<double>(self.data[i])));
                        });
}

} // namespace

namespace fault {
void set_matmul_adjoint_fault(bool enabled) { g_matmul_fault = enabled; }
} // namespace fault

namespace ops {

Tensor matmul(const Tensor &a, const Tensor &b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    shape_fail("matmul", a.shape(), b.shape());
  std::vector<float> out(m * n);
  kernels::gemm(a.data().data(), b.data().data(), out.data(), m, k, n, false);
  return make_op_result({m, n}, std::move(out), "matmul", {a, b},
                        [m, k, n](Node &self) {
                          const auto &A = self.parents[0]->data;
                          const auto &B = self.parents[1]->data;
                          if (auto ga = pgrad(self, 0); !ga.empty()) {
                            std::vector<float> bt(n * k);
                            kernels::transpose(B.data(), bt.data(), k, n);
                            kernels::gemm(self.grad.data(), bt.data(),
                                          ga.data(), m, n, k, true);
                          }
                          if (auto gb = pgrad(self, 1); !gb.empty()) {
                            std::vector<float> at(k * m);
                            kernels::transpose(A.data(), at.data(), m, k);
                            if (g_matmul_fault.load()) {
                              // Fault fixture: drop the transpose.
                              kernels::gemm(A.data(), self.grad.data(),
                                            gb.data(), k, m, n, true);
                            } else {
                              kernels::gemm(at.data(), self.grad.data(),
                                            gb.data(), k, m, n, true);
                            }
                          }
                        });
}

Tensor add(const Tensor &a, const Tensor &b) {
  if (a.shape() != b.shape())
    shape_fail("add", a.shape(), b.shape());
  std::vector<float> out(a.numel());
  for (std::int64_t i = 0; i < a.numel(); ++i)
    out[i] = a.data()[i] + b.data()[i];
  return make_op_result(a.shape(), std::move(out), "add", {a, b},
                        [](Node &self) {
                          for (std::size_t p = 0; p < 2; ++p)
                            if (auto g = pgrad(self, p); !g.empty())
                              for (std::size_t i = 0; i < g.size(); ++i)
                                g[i] += self.grad[i];
                        });
}

Tensor sub(const Tensor &a, const Tensor &b) {
  if (a.shape() != b.shape())
    shape_fail("sub", a.shape(), b.shape());
  std::vector<float> out(a.numel());
  for (std::int64_t i = 0; i < a.numel(); ++i)
    out[i] = a.data()[i] - b.data()[i];
  return make_op_result(a.shape(), std::move(out), "sub", {a, b},
                        [](Node &self) {
                          if (auto g = pgrad(self, 0); !g.empty())
                            for (std::size_t i = 0; i < g.size(); ++i)
                              g[i] += self.grad[i];
                          if (auto g = pgrad(self, 1); !g.empty())
                            for (std::size_t i = 0; i < g.size(); ++i)
                              g[i] -= self.grad[i];
                        });
}

Tensor mul(const Tensor &a, const Tensor &b) {
  if (a.shape() != b.shape())
    shape_fail("mul", a.shape(), b.shape());
  std::vector<float> out(a.numel());
  for (std::int64_t i = 0; i < a.numel(); ++i)
    out[i] = a.data()[i] * b.data()[i];
  return make_op_result(a.shape(), std::move(out), "mul", {a, b},
                        [](Node &self) {
                          const auto &A = self.parents[0]->data;
                          const auto &B = self.parents[1]->data;
                          if (auto g = pgrad(self, 0); !g.empty())
                            for (std::size_t i = 0; i < g.size(); ++i)
                              g[i] += self.grad[i] * B[i];
                          if (auto g = pgrad(self, 1); !g.empty())
                            for (std::size_t i = 0; i < g.size(); ++i)
                              g[i] += self.grad[i] * A[i];
                        });
}

Tensor scale(const Tensor &a, float factor) {
  std::vector<float> out(a.numel());
  for (std::int64_t i = 0; i < a.numel(); ++i)
    out[i] = a.data()[i] * factor;
  return make_op_result(a.shape(), std::move(out), "scale", {a},
                        [factor](Node &self) {
                          if (auto g = pgrad(self, 0); !g.empty())
                            for (std::size_t i = 0; i < g.size(); ++i)
                              g[i] += self.grad[i] * factor;
                        });
}

Tensor add_bias(const Tensor &a, const Tensor &bias) {
  require_rank("add_bias", bias, 1);
  const auto n = bias.dim(0);
  if (last_dim(a) != n)
    shape_fail("add_bias", a.shape(), bias.shape());
  const auto rows = a.numel() / std::max<std::int64_t>(n, 1);
  std::vector<float> out(a.data().begin(), a.data().end());
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < n; ++j)
      out[r * n + j] += bias.data()[j];
  return make_op_result(a.shape(), std::move(out), "add_bias", {a, bias},
                        [rows, n](Node &self) {
                          if (auto g = pgrad(self, 0); !g.empty())
                            for (std::size_t i = 0; i < g.size(); ++i)
                              g[i] += self.grad[i];
                          if (auto g = pgrad(self, 1); !g.empty()) {
                            for (std::int64_t j = 0; j < n; ++j) {
                              double s = 0.0;
                              for (std::int64_t r = 0; r < rows; ++r)
                                s += self.grad[r * n + j];
                              g[j] += static_cast<float>(s);
                            }
                          }
                        });
}

Tensor linear(const Tensor &x, const Tensor &weight, const Tensor &bias) {
  return add_bias(matmul(x, weight), bias);
}

Tensor sum(const Tensor &a) {
  double s = 0.0;
  for (float v : a.data())
    s += v;
  return make_op_result({}, {static_cast<float>(s)}, "sum", {a},
                        [](Node &self) {
                          if (auto g = pgrad(self, 0); !g.empty())
                            for (auto &gi : g)
                              gi += self.grad[0];
                        });
}

Tensor mean(const Tensor &a) {
  if (a.numel() == 0)
    throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (float v : a.data())
    s += v;
  const double n = static_cast<double>(a.numel());
  return make_op_result({}, {static_cast<float>(s / n)}, "mean", {a},
                        [n](Node &self) {
                          if (auto g = pgrad(self, 0); !g.empty()) {
                            const float share =
                                static_cast<float>(self.grad[0] / n);
                            for (auto &gi : g)
                              gi += share;
                          }
                        });
}

Tensor softmax(const Tensor &a) {
  const auto n = last_dim(a);
  const auto rows = n ? a.numel() / n : 0;
  std::vector<float> out(a.numel());
  const auto x = a.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const float *xr = x.data() + r * n;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::int64_t j = 0; j < n; ++j)
      mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (std::int64_t j = 0; j < n; ++j)
      z += std::exp(static_cast<double>(xr[j]) - mx);
    for (std::int64_t j = 0; j < n; ++j)
      out[r * n + j] =
          static_cast<float>(std::exp(static_cast<double>(xr[j]) - mx) / z);
  }
  return make_op_result(a.shape(), std::move(out), "softmax", {a},
                        [rows, n](Node &self) {
                          auto g = pgrad(self, 0);
                          if (g.empty())
                            return;
                          for (std::int64_t r = 0; r < rows; ++r) {
                            const float *y = self.data.data() + r * n;
                            const float *gy = self.grad.data() + r * n;
                            double s = 0.0;
                            for (std::int64_t j = 0; j < n; ++j)
                              s += static_cast<double>(y[j]) * gy[j];
                            for (std::int64_t j = 0; j < n; ++j)
                              g[r * n + j] +=
                                  static_cast<float>(y[j] * (gy[j] - s));
                          }
                        });
}

Tensor log_softmax(const Tensor &a) {
  const auto n = last_dim(a);
  const auto rows = n ? a.numel() / n : 0;
  std::vector<float> out(a.numel());
  const auto x = a.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const float *xr = x.data() + r * n;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::int64_t j = 0; j < n; ++j)
      mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (std::int64_t j = 0; j < n; ++j)
      z += std::exp(static_cast<double>(xr[j]) - mx);
    const double lse = mx + std::log(z);
    for (std::int64_t j = 0; j < n; ++j)
      out[r * n + j] = static_cast<float>(xr[j] - lse);
  }
  return make_op_result(a.shape(), std::move(out), "log_softmax", {a},
                        [rows, n](Node &self) {
                          auto g = pgrad(self, 0);
                          if (g.empty())
                            return;
                          for (std::int64_t r = 0; r < rows; ++r) {
                            const float *y = self.data.data() + r * n;
                            const float *gy = self.grad.data() + r * n;
                            double s = 0.0;
                            for (std::int64_t j = 0; j < n; ++j)
                              s += gy[j];
                            for (std::int64_t j = 0; j < n; ++j)
                              g[r * n + j] += static_cast<float>(
                                  gy[j] - std::exp(static_cast<double>(y[j])) * s);
                          }
                        });
}

Tensor layer_norm(const Tensor &x, const Tensor &gamma, const Tensor &beta,
                  float eps) {
  const auto n = last_dim(x);
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n})
    shape_fail("layer_norm", x.shape(), gamma.shape());
  const auto rows = x.numel() / n;
  std::vector<float> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> rstd(rows);
  const auto xs = x.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const float *xr = xs.data() + r * n;
    double mu = 0.0;
    for (std::int64_t j = 0; j < n; ++j)
      mu += xr[j];
    mu /= n;
    double var = 0.0;
    for (std::int64_t j = 0; j < n; ++j)
      var += (xr[j] - mu) * (xr[j] - mu);
    var /= n;
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::int64_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (xr[j] - mu) * rstd[r];
      out[r * n + j] = static_cast<float>(gamma.data()[j] * xhat[r * n + j] +
                                          beta.data()[j]);
    }
  }
  return make_op_result(
      x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
      [rows, n, xhat = std::move(xhat), rstd = std::move(rstd)](Node &self) {
        const auto &gam = self.parents[1]->data;
        const float *gy = self.grad.data();
        if (auto gx = pgrad(self, 0); !gx.empty()) {
          for (std::int64_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::int64_t j = 0; j < n; ++j) {
              const double d = static_cast<double>(gy[r * n + j]) * gam[j];
              m1 += d;
              m2 += d * xhat[r * n + j];
            }
            m1 /= n;
            m2 /= n;
            for (std::int64_t j = 0; j < n; ++j) {
              const double d = static_cast<double>(gy[r * n + j]) * gam[j];
              gx[r * n + j] += static_cast<float>(
                  rstd[r] * (d - m1 - xhat[r * n + j] * m2));
            }
          }
        }
        auto gg = pgrad(self, 1);
        auto gb = pgrad(self, 2);
        for (std::int64_t j = 0; j < n; ++j) {
          double sg = 0.0, sb = 0.0;
          for (std::int64_t r = 0; r < rows; ++r) {
            sg += gy[r * n + j] * xhat[r * n + j];
            sb += gy[r * n + j];
          }
          if (!gg.empty())
            gg[j] += static_cast<float>(sg);
          if (!gb.empty())
            gb[j] += static_cast<float>(sb);
        }
      });
}

Tensor gelu(const Tensor &a) {
  constexpr double kC = 0.7978845608028654; // sqrt(2/pi)
  constexpr double kA = 0.044715;
  return unary(
      a, "gelu",
      [](double x) {
        return 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
      },
      [](double x, double) {
        const double t = std::tanh(kC * (x + kA * x * x * x));
        return 0.5 * (1.0 + t) +
               0.5 * x * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * x * x);
      });
}

Tensor relu(const Tensor &a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor &a) {
  return unary(
      a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor &a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor abs(const Tensor &a) {
  return unary(
      a, "abs", [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor &a) {
  return unary(
      a, "square", [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Tensor embedding(const Tensor &table, std::span<const std::int64_t> ids) {
  require_rank("embedding", table, 2);
  const auto vocab = table.dim(0), d = table.dim(1);
  const auto n = static_cast<std::int64_t>(ids.size());
  std::vector<float> out(n * d);
  for (std::int64_t r = 0; r < n; ++r) {
    if (ids[r] < 0 || ids[r] >= vocab)
      throw ShapeError("embedding: index " + std::to_string(ids[r]) +
                       " out of range for table " + shape_str(table.shape()));
    std::copy_n(table.data().data() + ids[r] * d, d, out.data() + r * d);
  }
  std::vector<std::int64_t> idx(ids.begin(), ids.end());
  return make_op_result({n, d}, std::move(out), "embedding", {table},
                        [idx = std::move(idx), d](Node &self) {
                          auto g = pgrad(self, 0);
                          if (g.empty())
                            return;
                          for (std::size_t r = 0; r < idx.size(); ++r)
                            for (std::int64_t j = 0; j < d; ++j)
                              g[idx[r] * d + j] += self.grad[r * d + j];
                        });
}

Tensor sum_rows(const Tensor &x, const RowLists &lists) {
  require_rank("sum_rows", x, 2);
  const auto src_rows = x.dim(0), d = x.dim(1);
  const auto n = lists.rows();
  std::vector<float> out(n * d, 0.0f);
  for (std::int64_t r = 0; r < n; ++r) {
    for (auto i : lists.row(r)) {
      if (i < 0 || i >= src_rows)
        throw ShapeError("sum_rows: index " + std::to_string(i) +
                         " out of range for " + shape_str(x.shape()));
    }
    for (std::int64_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (auto i : lists.row(r))
        s += x.data()[i * d + j];
      out[r * d + j] = static_cast<float>(s);
    }
  }
  return make_op_result({n, d}, std::move(out), "sum_rows", {x},
                        [lists, d](Node &self) {
                          auto g = pgrad(self, 0);
                          if (g.empty())
                            return;
                          for (std::int64_t r = 0; r < lists.rows(); ++r)
                            for (auto i : lists.row(r))
                              for (std::int64_t j = 0; j < d; ++j)
                                g[i * d + j] += self.grad[r * d + j];
                        });
}

Tensor reshape(const Tensor &a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    shape_fail("reshape", a.shape(), shape);
  std::vector<float> out(a.data().begin(), a.data().end());
  return make_op_result(std::move(shape), std::move(out), "reshape", {a},
                        [](Node &self) {
                          if (auto g = pgrad(self, 0); !g.empty())
                            for (std::size_t i = 0; i < g.size(); ++i)
                              g[i] += self.grad[i];
                        });
}

Tensor transpose(const Tensor &a) {
  require_rank("transpose", a, 2);
  const auto r = a.dim(0), c = a.dim(1);
  std::vector<float> out(a.numel());
  kernels::transpose(a.data().data(), out.data(), r, c);
  return make_op_result({c, r}, std::move(out), "transpose", {a},
                        [r, c](Node &self) {
                          auto g = pgrad(self, 0);
                          if (g.empty())
                            return;
                          for (std::int64_t i = 0; i < r; ++i)
                            for (std::int64_t j = 0; j < c; ++j)
                              g[i * c + j] += self.grad[j * r + i];
                        });
}

Tensor concat_rows(const std::vector<Tensor> &parts) {
  if (parts.empty())
    throw ShapeError("concat_rows: no operands");
  const auto d = parts[0].rank() == 2 ? parts[0].dim(1) : -1;
  std::int64_t rows = 0;
  for (const auto &p : parts) {
    if (p.rank() != 2 || p.dim(1) != d)
      shape_fail("concat_rows", parts[0].shape(), p.shape());
    rows += p.dim(0);
  }
  std::vector<float> out;
  out.reserve(rows * d);
  std::vector<std::int64_t> starts;
  for (const auto &p : parts) {
    starts.push_back(static_cast<std::int64_t>(out.size()));
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return make_op_result({rows, d}, std::move(out), "concat_rows", parts,
                        [starts = std::move(starts)](Node &self) {
                          for (std::size_t p = 0; p < starts.size(); ++p)
                            if (auto g = pgrad(self, p); !g.empty())
                              for (std::size_t i = 0; i < g.size(); ++i)
                                g[i] += self.grad[starts[p] + i];
                        });
}

Tensor concat_cols(const Tensor &a, const Tensor &b) {
  require_rank("concat_cols", a, 2);
  require_rank("concat_cols", b, 2);
  if (a.dim(0) != b.dim(0))
    shape_fail("concat_cols", a.shape(), b.shape());
  const auto rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  std::vector<float> out(rows * (ca + cb));
  for (std::int64_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().data() + r * ca, ca, out.data() + r * (ca + cb));
    std::copy_n(b.data().data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
  }
  return make_op_result({rows, ca + cb}, std::move(out), "concat_cols", {a, b},
                        [rows, ca, cb](Node &self) {
                          auto ga = pgrad(self, 0);
                          auto gb = pgrad(self, 1);
                          for (std::int64_t r = 0; r < rows; ++r) {
                            const float *g = self.grad.data() + r * (ca + cb);
                            if (!ga.empty())
                              for (std::int64_t j = 0; j < ca; ++j)
                                ga[r * ca + j] += g[j];
                            if (!gb.empty())
                              for (std::int64_t j = 0; j < cb; ++j)
                                gb[r * cb + j] += g[ca + j];
                          }
                        });
}

Tensor slice_cols(const Tensor &a, std::int64_t start, std::int64_t count) {
  require_rank("slice_cols", a, 2);
  const auto rows = a.dim(0), cols = a.dim(1);
  if (start < 0 || count < 0 || start + count > cols)
    shape_fail("slice_cols", a.shape(), Shape{start, count});
  std::vector<float> out(rows * count);
  for (std::int64_t r = 0; r < rows; ++r)
    std::copy_n(a.data().data() + r * cols + start, count,
                out.data() + r * count);
  return make_op_result({rows, count}, std::move(out), "slice_cols", {a},
                        [rows, cols, start, count](Node &self) {
                          auto g = pgrad(self, 0);
                          if (g.empty())
                            return;
                          for (std::int64_t r = 0; r < rows; ++r)
                            for (std::int64_t j = 0; j < count; ++j)
                              g[r * cols + start + j] +=
                                  self.grad[r * count + j];
                        });
}

Tensor masked_fill(const Tensor &a, std::span<const std::uint8_t> mask,
                   float value) {
  const auto n = a.numel();
  const auto cols = last_dim(a);
  const bool per_column = static_cast<std::int64_t>(mask.size()) == cols &&
                          static_cast<std::int64_t>(mask.size()) != n;
  if (!per_column && static_cast<std::int64_t>(mask.size()) != n)
    throw ShapeError("masked_fill: mask of " + std::to_string(mask.size()) +
                     " entries for tensor " + shape_str(a.shape()));
  std::vector<std::uint8_t> full(n);
  for (std::int64_t i = 0; i < n; ++i)
    full[i] = per_column ? mask[i % cols] : mask[i];
  std::vector<float> out(a.data().begin(), a.data().end());
  for (std::int64_t i = 0; i < n; ++i)
    if (full[i])
      out[i] = value;
  return make_op_result(a.shape(), std::move(out), "masked_fill", {a},
                        [full = std::move(full)](Node &self) {
                          auto g = pgrad(self, 0);
                          if (g.empty())
                            return;
                          for (std::size_t i = 0; i < g.size(); ++i)
                            if (!full[i])
                              g[i] += self.grad[i];
                        });
}

Tensor cross_entropy(const Tensor &logits,
                     std::span<const std::int64_t> targets) {
  require_rank("cross_entropy", logits, 2);
  const auto rows = logits.dim(0), n = logits.dim(1);
  if (static_cast<std::int64_t>(targets.size()) != rows)
    shape_fail("cross_entropy", logits.shape(),
               Shape{static_cast<std::int64_t>(targets.size())});
  if (rows == 0)
    throw ShapeError("cross_entropy: no rows");
  std::vector<double> probs(rows * n);
  double total = 0.0;
  for (std::int64_t r = 0; r < rows; ++r) {
    if (targets[r] < 0 || targets[r] >= n)
      throw ShapeError("cross_entropy: target " + std::to_string(targets[r]) +
                       " out of range for " + shape_str(logits.shape()));
    const float *x = logits.data().data() + r * n;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::int64_t j = 0; j < n; ++j)
      mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      probs[r * n + j] = std::exp(static_cast<double>(x[j]) - mx);
      z += probs[r * n + j];
    }
    for (std::int64_t j = 0; j < n; ++j)
      probs[r * n + j] /= z;
    total += (mx + std::log(z)) - x[targets[r]];
  }
  std::vector<std::int64_t> tgt(targets.begin(), targets.end());
  return make_op_result(
      {}, {static_cast<float>(total / rows)}, "cross_entropy", {logits},
      [rows, n, probs = std::move(probs), tgt = std::move(tgt)](Node &self) {
        auto g = pgrad(self, 0);
        if (g.empty())
          return;
        const double up = self.grad[0] / static_cast<double>(rows);
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t j = 0; j < n; ++j) {
            const double d = probs[r * n + j] - (j == tgt[r] ? 1.0 : 0.0);
            g[r * n + j] += static_cast<float>(up * d);
          }
      });
}

Tensor straight_through(const Tensor &input, const Tensor &values) {
  if (input.shape() != values.shape())
    shape_fail("straight_through", input.shape(), values.shape());
  std::vector<float> out(values.data().begin(), values.data().end());
  return make_op_result(input.shape(), std::move(out), "straight_through",
                        {input}, [](Node &self) {
                          if (auto g = pgrad(self, 0); !g.empty())
                            for (std::size_t i = 0; i < g.size(); ++i)
                              g[i] += self.grad[i];
                        });
}

namespace {

struct ConvGeom {
  std::int64_t batch, in_c, h, w, out_c, ksize, out_h, out_w;
  int stride, pad;
  std::int64_t col_rows() const { return in_c * ksize * ksize; }
  std::int64_t col_cols() const { return out_h * out_w; }
};

void im2col(const float *img, float *col, const ConvGeom &g) {
  for (std::int64_t c = 0; c < g.in_c; ++c)
    for (std::int64_t ky = 0; ky < g.ksize; ++ky)
      for (std::int64_t kx = 0; kx < g.ksize; ++kx) {
        const std::int64_t row = (c * g.ksize + ky) * g.ksize + kx;
        float *dst = col + row * g.col_cols();
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            dst[oy * g.out_w + ox] =
                (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w)
                    ? img[(c * g.h + iy) * g.w + ix]
                    : 0.0f;
          }
        }
      }
}

void col2im_add(const float *col, float *img, const ConvGeom &g) {
  for (std::int64_t c = 0; c < g.in_c; ++c)
    for (std::int64_t ky = 0; ky < g.ksize; ++ky)
      for (std::int64_t kx = 0; kx < g.ksize; ++kx) {
        const std::int64_t row = (c * g.ksize + ky) * g.ksize + kx;
        const float *src = col + row * g.col_cols();
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h)
            continue;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w)
              img[(c * g.h + iy) * g.w + ix] += src[oy * g.out_w + ox];
          }
        }
      }
}

} // namespace

Tensor conv2d(const Tensor &x, const Tensor &weight, const Tensor &bias,
              int stride, int padding) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", weight, 4);
  if (stride < 1 || padding < 0)
    throw ShapeError("conv2d: stride must be >= 1 and padding >= 0");
  ConvGeom g{};
  g.batch = x.dim(0);
  g.in_c = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.out_c = weight.dim(0);
  g.ksize = weight.dim(2);
  g.stride = stride;
  g.pad = padding;
  if (weight.dim(1) != g.in_c || weight.dim(3) != g.ksize)
    shape_fail("conv2d", x.shape(), weight.shape());
  if (bias.shape() != Shape{g.out_c})
    shape_fail("conv2d", weight.shape(), bias.shape());
  g.out_h = (g.h + 2 * padding - g.ksize) / stride + 1;
  g.out_w = (g.w + 2 * padding - g.ksize) / stride + 1;
  if (g.out_h <= 0 || g.out_w <= 0)
    shape_fail("conv2d", x.shape(), weight.shape());

  const auto in_size = g.in_c * g.h * g.w;
  const auto out_size = g.out_c * g.out_h * g.out_w;
  std::vector<float> cols(g.batch * g.col_rows() * g.col_cols());
  std::vector<float> out(g.batch * out_size);
  for (std::int64_t b = 0; b < g.batch; ++b) {
    float *col = cols.data() + b * g.col_rows() * g.col_cols();
    im2col(x.data().data() + b * in_size, col, g);
    float *o = out.data() + b * out_size;
    kernels::gemm(weight.data().data(), col, o, g.out_c, g.col_rows(),
                  g.col_cols(), false);
    for (std::int64_t c = 0; c < g.out_c; ++c)
      for (std::int64_t p = 0; p < g.col_cols(); ++p)
        o[c * g.col_cols() + p] += bias.data()[c];
  }
  return make_op_result(
      {g.batch, g.out_c, g.out_h, g.out_w}, std::move(out), "conv2d",
      {x, weight, bias}, [g, cols = std::move(cols)](Node &self) {
        const auto in_size = g.in_c * g.h * g.w;
        const auto out_size = g.out_c * g.out_h * g.out_w;
        const auto cr = g.col_rows(), cc = g.col_cols();
        auto gx = pgrad(self, 0);
        auto gw = pgrad(self, 1);
        auto gb = pgrad(self, 2);
        const auto &W = self.parents[1]->data;
        std::vector<float> wt;
        if (!gx.empty()) {
          wt.resize(cr * g.out_c);
          kernels::transpose(W.data(), wt.data(), g.out_c, cr);
        }
        std::vector<float> scratch(std::max(cr * cc, cc * cr));
        for (std::int64_t b = 0; b < g.batch; ++b) {
          const float *go = self.grad.data() + b * out_size;
          const float *col = cols.data() + b * cr * cc;
          if (!gw.empty()) {
            kernels::transpose(col, scratch.data(), cr, cc);
            kernels::gemm(go, scratch.data(), gw.data(), g.out_c, cc, cr,
                          true);
          }
          if (!gb.empty())
            for (std::int64_t c = 0; c < g.out_c; ++c) {
              double s = 0.0;
              for (std::int64_t p = 0; p < cc; ++p)
                s += go[c * cc + p];
              gb[c] += static_cast<float>(s);
            }
          if (!gx.empty()) {
            kernels::gemm(wt.data(), go, scratch.data(), cr, g.out_c, cc,
                          false);
            col2im_add(scratch.data(), gx.data() + b * in_size, g);
          }
        }
      });
}

Tensor upsample_nearest2x(const Tensor &x) {
  require_rank("upsample_nearest2x", x, 4);
  const auto planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<float> out(planes * 4 * h * w);
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t y = 0; y < 2 * h; ++y)
      for (std::int64_t xx = 0; xx < 2 * w; ++xx)
        out[(p * 2 * h + y) * 2 * w + xx] =
            x.data()[(p * h + y / 2) * w + xx / 2];
  return make_op_result({x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(out),
                        "upsample_nearest2x", {x},
                        [planes, h, w](Node &self) {
                          auto g = pgrad(self, 0);
                          if (g.empty())
                            return;
                          for (std::int64_t p = 0; p < planes; ++p)
                            for (std::int64_t y = 0; y < 2 * h; ++y)
                              for (std::int64_t xx = 0; xx < 2 * w; ++xx)
                                g[(p * h + y / 2) * w + xx / 2] +=
                                    self.grad[(p * 2 * h + y) * 2 * w + xx];
                        });
}

Tensor nchw_to_rows(const Tensor &x) {
  require_rank("nchw_to_rows", x, 4);
  const auto b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<float> out(x.numel());
  for (std::int64_t i = 0; i < b; ++i)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t p = 0; p < hw; ++p)
        out[(i * hw + p) * c + ch] = x.data()[(i * c + ch) * hw + p];
  return make_op_result({b * hw, c}, std::move(out), "nchw_to_rows", {x},
                        [b, c, hw](Node &self) {
                          auto g = pgrad(self, 0);
                          if (g.empty())
                            return;
                          for (std::int64_t i = 0; i < b; ++i)
                            for (std::int64_t ch = 0; ch < c; ++ch)
                              for (std::int64_t p = 0; p < hw; ++p)
                                g[(i * c + ch) * hw + p] +=
                                    self.grad[(i * hw + p) * c + ch];
                        });
}

Tensor rows_to_nchw(const Tensor &x, std::int64_t batch, std::int64_t height,
                    std::int64_t width) {
  require_rank("rows_to_nchw", x, 2);
  const auto c = x.dim(1), hw = height * width;
  if (x.dim(0) != batch * hw)
    shape_fail("rows_to_nchw", x.shape(), Shape{batch, c, height, width});
  std::vector<float> out(x.numel());
  for (std::int64_t i = 0; i < batch; ++i)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t p = 0; p < hw; ++p)
        out[(i * c + ch) * hw + p] = x.data()[(i * hw + p) * c + ch];
  return make_op_result({batch, c, height, width}, std::move(out),
                        "rows_to_nchw", {x}, [batch, c, hw](Node &self) {
                          auto g = pgrad(self, 0);
                          if (g.empty())
                            return;
                          for (std::int64_t i = 0; i < batch; ++i)
                            for (std::int64_t ch = 0; ch < c; ++ch)
                              for (std::int64_t p = 0; p < hw; ++p)
                                g[(i * hw + p) * c + ch] +=
                                    self.grad[(i * c + ch) * hw + p];
                        });
}

Tensor head_sum(const Tensor &x, int heads) {
  require_rank("head_sum", x, 2);
  const auto rows = x.dim(0), d = x.dim(1);
  if (heads <= 0 || d % heads != 0)
    throw ShapeError("head_sum: width " + std::to_string(d) +
                     " not divisible by " + std::to_string(heads) + " heads");
  const auto dk = d / heads;
  std::vector<float> out(rows * heads);
  for (std::int64_t r = 0; r < rows; ++r)
    for (int h = 0; h < heads; ++h) {
      double s = 0.0;
      for (std::int64_t j = 0; j < dk; ++j)
        s += x.data()[r * d + h * dk + j];
      out[r * heads + h] = static_cast<float>(s);
    }
  return make_op_result({rows, heads}, std::move(out), "head_sum", {x},
                        [rows, d, dk, heads](Node &self) {
                          auto g = pgrad(self, 0);
                          if (g.empty())
                            return;
                          for (std::int64_t r = 0; r < rows; ++r)
                            for (int h = 0; h < heads; ++h)
                              for (std::int64_t j = 0; j < dk; ++j)
                                g[r * d + h * dk + j] +=
                                    self.grad[r * heads + h];
                        });
}

namespace {
void check_offsets(const char *op, std::span<const std::int64_t> offsets,
                   std::int64_t rows) {
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != rows)
    throw ShapeError(std::string(op) + ": segment offsets do not cover " +
                     std::to_string(rows) + " rows");
  for (std::size_t s = 1; s < offsets.size(); ++s)
    if (offsets[s] < offsets[s - 1])
      throw ShapeError(std::string(op) + ": segment offsets decrease");
}
} // namespace

Tensor segment_softmax(const Tensor &logits,
                       std::span<const std::int64_t> offsets) {
  require_rank("segment_softmax", logits, 2);
  const auto rows = logits.dim(0), cols = logits.dim(1);
  check_offsets("segment_softmax", offsets, rows);
  std::vector<float> out(rows * cols);
  const auto x = logits.data();
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const auto lo = offsets[s], hi = offsets[s + 1];
    for (std::int64_t c = 0; c < cols; ++c) {
      float mx = -std::numeric_limits<float>::infinity();
      for (auto r = lo; r < hi; ++r)
        mx = std::max(mx, x[r * cols + c]);
      double z = 0.0;
      for (auto r = lo; r < hi; ++r)
        z += std::exp(static_cast<double>(x[r * cols + c]) - mx);
      for (auto r = lo; r < hi; ++r)
        out[r * cols + c] = static_cast<float>(
            std::exp(static_cast<double>(x[r * cols + c]) - mx) / z);
    }
  }
  std::vector<std::int64_t> offs(offsets.begin(), offsets.end());
  return make_op_result({rows, cols}, std::move(out), "segment_softmax",
                        {logits}, [cols, offs = std::move(offs)](Node &self) {
                          auto g = pgrad(self, 0);
                          if (g.empty())
                            return;
                          const auto &y = self.data;
                          const auto &gy = self.grad;
                          for (std::size_t s = 0; s + 1 < offs.size(); ++s)
                            for (std::int64_t c = 0; c < cols; ++c) {
                              double dotp = 0.0;
                              for (auto r = offs[s]; r < offs[s + 1]; ++r)
                                dotp += static_cast<double>(y[r * cols + c]) *
                                        gy[r * cols + c];
                              for (auto r = offs[s]; r < offs[s + 1]; ++r)
                                g[r * cols + c] += static_cast<float>(
                                    y[r * cols + c] * (gy[r * cols + c] - dotp));
                            }
                        });
}

Tensor segment_weighted_sum(const Tensor &weights, const Tensor &values,
                            std::span<const std::int64_t> offsets) {
  require_rank("segment_weighted_sum", weights, 2);
  require_rank("segment_weighted_sum", values, 2);
  const auto rows = values.dim(0), d = values.dim(1);
  const auto heads = weights.dim(1);
  if (weights.dim(0) != rows || heads == 0 || d % heads != 0)
    shape_fail("segment_weighted_sum", weights.shape(), values.shape());
  check_offsets("segment_weighted_sum", offsets, rows);
  const auto dk = d / heads;
  const auto segs = static_cast<std::int64_t>(offsets.size()) - 1;
  std::vector<float> out(segs * d, 0.0f);
  for (std::int64_t s = 0; s < segs; ++s)
    for (std::int64_t h = 0; h < heads; ++h)
      for (std::int64_t j = 0; j < dk; ++j) {
        double acc = 0.0;
        for (auto r = offsets[s]; r < offsets[s + 1]; ++r)
          acc += static_cast<double>(weights.data()[r * heads + h]) *
                 values.data()[r * d + h * dk + j];
        out[s * d + h * dk + j] = static_cast<float>(acc);
      }
  std::vector<std::int64_t> offs(offsets.begin(), offsets.end());
  return make_op_result(
      {segs, d}, std::move(out), "segment_weighted_sum", {weights, values},
      [d, heads, dk, offs = std::move(offs)](Node &self) {
        const auto &wt = self.parents[0]->data;
        const auto &val = self.parents[1]->data;
        auto gw = pgrad(self, 0);
        auto gv = pgrad(self, 1);
        for (std::size_t s = 0; s + 1 < offs.size(); ++s)
          for (auto r = offs[s]; r < offs[s + 1]; ++r)
            for (std::int64_t h = 0; h < heads; ++h) {
              const float *go = self.grad.data() + s * d + h * dk;
              if (!gw.empty()) {
                double acc = 0.0;
                for (std::int64_t j = 0; j < dk; ++j)
                  acc += static_cast<double>(go[j]) * val[r * d + h * dk + j];
                gw[r * heads + h] += static_cast<float>(acc);
              }
              if (!gv.empty())
                for (std::int64_t j = 0; j < dk; ++j)
                  gv[r * d + h * dk + j] += wt[r * heads + h] * go[j];
            }
      });
}

Tensor sparse_attention(const Tensor &q, const Tensor &k, const Tensor &v,
                        int heads, const RowLists &keys) {
  require_rank("sparse_attention", q, 2);
  require_rank("sparse_attention", k, 2);
  require_rank("sparse_attention", v, 2);
  const auto nq = q.dim(0), nk = k.dim(0), d = q.dim(1);
  if (k.dim(1) != d || v.shape() != k.shape())
    shape_fail("sparse_attention", q.shape(), k.shape());
  if (heads <= 0 || d % heads != 0)
    throw ShapeError("sparse_attention: width " + std::to_string(d) +
                     " not divisible by " + std::to_string(heads) + " heads");
  if (keys.rows() != nq)
    throw ShapeError("sparse_attention: " + std::to_string(keys.rows()) +
                     " key lists for " + std::to_string(nq) + " queries");
  for (auto j : keys.items)
    if (j < 0 || j >= nk)
      throw ShapeError("sparse_attention: key index " + std::to_string(j) +
                       " out of range for " + shape_str(k.shape()));
  const auto dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const float *Q = q.data().data();
  const float *K = k.data().data();
  const float *V = v.data().data();
  // probs laid out per (entry, head)
  std::vector<double> probs(keys.items.size() * heads);
  std::vector<float> out(nq * d, 0.0f);
  std::vector<double> acc(dk);
  for (std::int64_t r = 0; r < nq; ++r) {
    const auto lo = keys.offsets[r], hi = keys.offsets[r + 1];
    if (lo == hi)
      continue;
    for (int h = 0; h < heads; ++h) {
      const float *qr = Q + r * d + h * dk;
      double mx = -std::numeric_limits<double>::infinity();
      for (auto e = lo; e < hi; ++e) {
        const float *kr = K + keys.items[e] * d + h * dk;
        double s = 0.0;
        for (std::int64_t j = 0; j < dk; ++j)
          s += static_cast<double>(qr[j]) * kr[j];
        s *= scale;
        probs[e * heads + h] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (auto e = lo; e < hi; ++e) {
        probs[e * heads + h] = std::exp(probs[e * heads + h] - mx);
        z += probs[e * heads + h];
      }
      std::fill(acc.begin(), acc.end(), 0.0);
      for (auto e = lo; e < hi; ++e) {
        probs[e * heads + h] /= z;
        const double p = probs[e * heads + h];
        const float *vr = V + keys.items[e] * d + h * dk;
        for (std::int64_t j = 0; j < dk; ++j)
          acc[j] += p * vr[j];
      }
      for (std::int64_t j = 0; j < dk; ++j)
        out[r * d + h * dk + j] = static_cast<float>(acc[j]);
    }
  }
  return make_op_result(
      {nq, d}, std::move(out), "sparse_attention", {q, k, v},
      [keys, heads, d, dk, scale, probs = std::move(probs)](Node &self) {
        const float *Q = self.parents[0]->data.data();
        const float *K = self.parents[1]->data.data();
        const float *V = self.parents[2]->data.data();
        auto gq = pgrad(self, 0);
        auto gk = pgrad(self, 1);
        auto gv = pgrad(self, 2);
        std::vector<double> dp;
        std::vector<double> dq(dk);
        for (std::int64_t r = 0; r < keys.rows(); ++r) {
          const auto lo = keys.offsets[r], hi = keys.offsets[r + 1];
          if (lo == hi)
            continue;
          dp.resize(hi - lo);
          for (int h = 0; h < heads; ++h) {
            const float *go = self.grad.data() + r * d + h * dk;
            double sum_pdp = 0.0;
            for (auto e = lo; e < hi; ++e) {
              const auto j = keys.items[e];
              const double p = probs[e * heads + h];
              const float *vr = V + j * d + h * dk;
              double s = 0.0;
              for (std::int64_t t = 0; t < dk; ++t)
                s += static_cast<double>(go[t]) * vr[t];
              dp[e - lo] = s;
              sum_pdp += p * s;
              if (!gv.empty())
                for (std::int64_t t = 0; t < dk; ++t)
                  gv[j * d + h * dk + t] += static_cast<float>(p * go[t]);
            }
            std::fill(dq.begin(), dq.end(), 0.0);
            const float *qr = Q + r * d + h * dk;
            for (auto e = lo; e < hi; ++e) {
              const auto j = keys.items[e];
              const double ds =
                  probs[e * heads + h] * (dp[e - lo] - sum_pdp) * scale;
              const float *kr = K + j * d + h * dk;
              for (std::int64_t t = 0; t < dk; ++t)
                dq[t] += ds * kr[t];
              if (!gk.empty())
                for (std::int64_t t = 0; t < dk; ++t)
                  gk[j * d + h * dk + t] += static_cast<float>(ds * qr[t]);
            }
            if (!gq.empty())
              for (std::int64_t t = 0; t < dk; ++t)
                gq[r * d + h * dk + t] += static_cast<float>(dq[t]);
          }
        }
      });
}

} // namespace ops

} // namespace sgti

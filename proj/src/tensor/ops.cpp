// Copyright 2026 The SparseInst-Desk Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "spin/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "spin/kernels.hpp"

namespace spin {

namespace {

template <typename T>
using StoragePtr = std::shared_ptr<TensorStorage<T>>;

template <typename T>
Tape<T>* Recording(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = Tape<T>::Active();
  if (tape == nullptr) return nullptr;
  for (const Tensor<T>* t : inputs) {
    if (t->defined() && t->requires_grad()) return tape;
  }
  return nullptr;
}

// Output tensor that participates in the graph when `tape` is non-null.
template <typename T>
Tensor<T> MakeOutput(Shape shape, Tape<T>* tape) {
  Tensor<T> out(std::move(shape));
  if (tape != nullptr) out.set_requires_grad(true);
  return out;
}

template <typename T>
bool Wants(const StoragePtr<T>& s) {
  return s != nullptr && s->requires_grad;
}

[[noreturn]] void Reject(const std::string& op, const std::string& what) {
  throw std::invalid_argument(op + ": " + what);
}

void RequireRank(const std::string& op, const char* name, const Shape& shape,
                 int rank) {
  if (static_cast<int>(shape.size()) != rank) {
    Reject(op, std::string(name) + " must have rank " + std::to_string(rank) +
                   ", got shape " + ShapeString(shape));
  }
}

// Index maps for broadcasting a and b into a common output shape.
struct BroadcastPlan {
  Shape out;
  std::vector<std::uint32_t> a_index;
  std::vector<std::uint32_t> b_index;
};

BroadcastPlan PlanBroadcast(const std::string& op, const Shape& a,
                            const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1);
  Shape pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + (rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + (rank - b.size()));
  BroadcastPlan plan;
  plan.out.resize(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    if (pa[d] != pb[d] && pa[d] != 1 && pb[d] != 1) {
      Reject(op, "dimension " + std::to_string(d) + " mismatch: " +
                     ShapeString(a) + " vs " + ShapeString(b));
    }
    plan.out[d] = std::max(pa[d], pb[d]);
  }
  const std::size_t n = ShapeNumel(plan.out);
  plan.a_index.resize(n);
  plan.b_index.resize(n);
  std::vector<std::size_t> sa(rank), sb(rank);
  std::size_t ra = 1, rb = 1;
  for (std::size_t d = rank; d-- > 0;) {
    sa[d] = pa[d] == 1 ? 0 : ra;
    sb[d] = pb[d] == 1 ? 0 : rb;
    ra *= pa[d];
    rb *= pb[d];
  }
  std::vector<int> idx(rank, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t ia = 0, ib = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      ia += idx[d] * sa[d];
      ib += idx[d] * sb[d];
    }
    plan.a_index[i] = static_cast<std::uint32_t>(ia);
    plan.b_index[i] = static_cast<std::uint32_t>(ib);
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < plan.out[d]) break;
      idx[d] = 0;
    }
  }
  return plan;
}

enum class BinaryKind { kAdd, kSub, kMul, kDiv };

template <typename T>
inline T ApplyBinary(BinaryKind kind, T x, T y) {
  switch (kind) {
    case BinaryKind::kAdd: return x + y;
    case BinaryKind::kSub: return x - y;
    case BinaryKind::kMul: return x * y;
    case BinaryKind::kDiv: return x / y;
  }
  return T(0);
}

// Partial derivatives of the binary op w.r.t. each operand.
template <typename T>
inline void BinaryPartials(BinaryKind kind, T x, T y, T* dx, T* dy) {
  switch (kind) {
    case BinaryKind::kAdd: *dx = 1; *dy = 1; return;
    case BinaryKind::kSub: *dx = 1; *dy = -1; return;
    case BinaryKind::kMul: *dx = y; *dy = x; return;
    case BinaryKind::kDiv: *dx = T(1) / y; *dy = -x / (y * y); return;
  }
}

template <typename T>
Tensor<T> Binary(const std::string& op, BinaryKind kind, const Tensor<T>& a,
                 const Tensor<T>& b) {
  Tape<T>* tape = Recording<T>({&a, &b});
  const auto& ad = a.data();
  const auto& bd = b.data();
  if (a.shape() == b.shape()) {
    Tensor<T> out = MakeOutput<T>(a.shape(), tape);
    auto od = out.mutable_data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = ApplyBinary(kind, ad[i], bd[i]);
    if (tape) {
      tape->Record([kind, sa = a.storage(), sb = b.storage(), so = out.storage()] {
        if (so->grad.empty()) return;
        const bool wa = Wants<T>(sa), wb = Wants<T>(sb);
        if (wa) sa->EnsureGrad();
        if (wb) sb->EnsureGrad();
        for (std::size_t i = 0; i < so->grad.size(); ++i) {
          T dx = 0, dy = 0;
          BinaryPartials(kind, sa->data[i], sb->data[i], &dx, &dy);
          if (wa) sa->grad[i] += so->grad[i] * dx;
          if (wb) sb->grad[i] += so->grad[i] * dy;
        }
      });
    }
    return out;
  }
  auto plan = std::make_shared<BroadcastPlan>(PlanBroadcast(op, a.shape(), b.shape()));
  Tensor<T> out = MakeOutput<T>(plan->out, tape);
  auto od = out.mutable_data();
  for (std::size_t i = 0; i < od.size(); ++i) {
    od[i] = ApplyBinary(kind, ad[plan->a_index[i]], bd[plan->b_index[i]]);
  }
  if (tape) {
    tape->Record([kind, plan, sa = a.storage(), sb = b.storage(), so = out.storage()] {
      if (so->grad.empty()) return;
      const bool wa = Wants<T>(sa), wb = Wants<T>(sb);
      if (wa) sa->EnsureGrad();
      if (wb) sb->EnsureGrad();
      for (std::size_t i = 0; i < so->grad.size(); ++i) {
        const auto ia = plan->a_index[i];
        const auto ib = plan->b_index[i];
        T dx = 0, dy = 0;
        BinaryPartials(kind, sa->data[ia], sb->data[ib], &dx, &dy);
        if (wa) sa->grad[ia] += so->grad[i] * dx;
        if (wb) sb->grad[ib] += so->grad[i] * dy;
      }
    });
  }
  return out;
}

// Unary elementwise op given forward f(x) and derivative df(x, y).
template <typename T, typename F, typename DF>
Tensor<T> Unary(const Tensor<T>& x, F f, DF df) {
  Tape<T>* tape = Recording<T>({&x});
  Tensor<T> out = MakeOutput<T>(x.shape(), tape);
  auto od = out.mutable_data();
  const auto xd = x.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = f(xd[i]);
  if (tape) {
    tape->Record([df, sx = x.storage(), so = out.storage()] {
      if (so->grad.empty()) return;
      sx->EnsureGrad();
      for (std::size_t i = 0; i < so->grad.size(); ++i) {
        sx->grad[i] += so->grad[i] * df(sx->data[i], so->data[i]);
      }
    });
  }
  return out;
}

// Splits a shape around `axis` into (outer, extent, inner) element counts.
struct AxisSplit {
  std::size_t outer = 1;
  int extent = 1;
  std::size_t inner = 1;
};

AxisSplit SplitAt(const Shape& shape, int axis) {
  AxisSplit s;
  for (int d = 0; d < axis; ++d) s.outer *= shape[d];
  s.extent = shape[axis];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) s.inner *= shape[d];
  return s;
}

int NormalizeAxis(const std::string& op, int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    Reject(op, "unsupported axis " + std::to_string(axis) + " for rank " +
                   std::to_string(rank));
  }
  return a;
}

}  // namespace

template <typename T>
Tensor<T> Add(const Tensor<T>& a, const Tensor<T>& b) {
  return Binary("add", BinaryKind::kAdd, a, b);
}

template <typename T>
Tensor<T> Sub(const Tensor<T>& a, const Tensor<T>& b) {
  return Binary("sub", BinaryKind::kSub, a, b);
}

template <typename T>
Tensor<T> Mul(const Tensor<T>& a, const Tensor<T>& b) {
  return Binary("mul", BinaryKind::kMul, a, b);
}

template <typename T>
Tensor<T> Div(const Tensor<T>& a, const Tensor<T>& b) {
  return Binary("div", BinaryKind::kDiv, a, b);
}

template <typename T>
Tensor<T> AddScalar(const Tensor<T>& a, T s) {
  return Unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> MulScalar(const Tensor<T>& a, T s) {
  return Unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> Sigmoid(const Tensor<T>& x) {
  return Unary(
      x,
      [](T v) {
        // Split by sign so exp never overflows.
        if (v >= 0) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> Relu(const Tensor<T>& x) {
  return Unary(
      x, [](T v) { return v > 0 ? v : T(0); },
      [](T v, T) { return v > 0 ? T(1) : T(0); });
}

template <typename T>
Tensor<T> Log(const Tensor<T>& x) {
  static constexpr T kClamp = static_cast<T>(kLogClamp);
  return Unary(
      x, [](T v) { return std::log(std::max(v, kClamp)); },
      [](T v, T) { return v > kClamp ? T(1) / v : T(0); });
}

template <typename T>
Tensor<T> Sqrt(const Tensor<T>& x) {
  static constexpr T kClamp = static_cast<T>(kLogClamp);
  return Unary(
      x, [](T v) { return std::sqrt(std::max(v, kClamp)); },
      [](T v, T y) { return v > kClamp ? T(0.5) / y : T(0); });
}

template <typename T>
Tensor<T> Pow(const Tensor<T>& x, T exponent) {
  return Unary(
      x, [exponent](T v) { return std::pow(v, exponent); },
      [exponent](T v, T) {
        if (exponent == T(0)) return T(0);
        return exponent * std::pow(v, exponent - T(1));
      });
}

template <typename T>
Tensor<T> Softmax(const Tensor<T>& x, int axis) {
  const int ax = NormalizeAxis("softmax", axis, x.rank());
  const AxisSplit sp = SplitAt(x.shape(), ax);
  Tape<T>* tape = Recording<T>({&x});
  Tensor<T> out = MakeOutput<T>(x.shape(), tape);
  auto od = out.mutable_data();
  const auto xd = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.extent * sp.inner + in;
      T mx = xd[base];
      for (int e = 1; e < sp.extent; ++e) mx = std::max(mx, xd[base + e * sp.inner]);
      T s = 0;
      for (int e = 0; e < sp.extent; ++e) {
        const T v = std::exp(xd[base + e * sp.inner] - mx);
        od[base + e * sp.inner] = v;
        s += v;
      }
      for (int e = 0; e < sp.extent; ++e) od[base + e * sp.inner] /= s;
    }
  }
  if (tape) {
    tape->Record([sp, sx = x.storage(), so = out.storage()] {
      if (so->grad.empty()) return;
      sx->EnsureGrad();
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t in = 0; in < sp.inner; ++in) {
          const std::size_t base = o * sp.extent * sp.inner + in;
          T dot = 0;
          for (int e = 0; e < sp.extent; ++e) {
            const std::size_t i = base + e * sp.inner;
            dot += so->grad[i] * so->data[i];
          }
          for (int e = 0; e < sp.extent; ++e) {
            const std::size_t i = base + e * sp.inner;
            sx->grad[i] += so->data[i] * (so->grad[i] - dot);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> MatMul(const Tensor<T>& a, const Tensor<T>& b) {
  RequireRank("matmul", "lhs", a.shape(), 2);
  RequireRank("matmul", "rhs", b.shape(), 2);
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    Reject("matmul", "inner dimension mismatch: lhs dim 1 = " +
                         std::to_string(k) + ", rhs dim 0 = " +
                         std::to_string(b.dim(0)));
  }
  Tape<T>* tape = Recording<T>({&a, &b});
  Tensor<T> out = MakeOutput<T>({m, n}, tape);
  kernels::gemm(m, n, k, a.data().data(), k, b.data().data(), n,
                out.mutable_data().data(), n, false);
  if (tape) {
    tape->Record([m, n, k, sa = a.storage(), sb = b.storage(), so = out.storage()] {
      if (so->grad.empty()) return;
      if (Wants<T>(sa)) {
        sa->EnsureGrad();
        std::vector<T> bt(static_cast<std::size_t>(n) * k);
        kernels::transpose(k, n, sb->data.data(), bt.data());
        kernels::gemm(m, k, n, so->grad.data(), n, bt.data(), k,
                      sa->grad.data(), k, true);
      }
      if (Wants<T>(sb)) {
        sb->EnsureGrad();
        std::vector<T> at(static_cast<std::size_t>(k) * m);
        kernels::transpose(m, k, sa->data.data(), at.data());
        kernels::gemm(k, n, m, at.data(), m, so->grad.data(), n,
                      sb->grad.data(), n, true);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Transpose(const Tensor<T>& x) {
  RequireRank("transpose", "input", x.shape(), 2);
  const int m = x.dim(0), n = x.dim(1);
  Tape<T>* tape = Recording<T>({&x});
  Tensor<T> out = MakeOutput<T>({n, m}, tape);
  kernels::transpose(m, n, x.data().data(), out.mutable_data().data());
  if (tape) {
    tape->Record([m, n, sx = x.storage(), so = out.storage()] {
      if (so->grad.empty()) return;
      sx->EnsureGrad();
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          sx->grad[static_cast<std::size_t>(i) * n + j] +=
              so->grad[static_cast<std::size_t>(j) * m + i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Linear(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
  RequireRank("linear", "input", x.shape(), 2);
  RequireRank("linear", "weight", weight.shape(), 2);
  const int rows = x.dim(0), in = x.dim(1), outf = weight.dim(0);
  if (weight.dim(1) != in) {
    Reject("linear", "weight dim 1 = " + std::to_string(weight.dim(1)) +
                         " does not match input dim 1 = " + std::to_string(in));
  }
  if (bias.defined() && (bias.numel() != static_cast<std::size_t>(outf))) {
    Reject("linear", "bias length " + std::to_string(bias.numel()) +
                         " does not match weight dim 0 = " + std::to_string(outf));
  }
  Tape<T>* tape = Recording<T>({&x, &weight, &bias});
  Tensor<T> out = MakeOutput<T>({rows, outf}, tape);
  std::vector<T> wt(static_cast<std::size_t>(in) * outf);
  kernels::transpose(outf, in, weight.data().data(), wt.data());
  auto od = out.mutable_data();
  kernels::gemm(rows, outf, in, x.data().data(), in, wt.data(), outf, od.data(),
                outf, false);
  if (bias.defined()) {
    const auto bd = bias.data();
    for (int r = 0; r < rows; ++r) {
      for (int o = 0; o < outf; ++o) od[static_cast<std::size_t>(r) * outf + o] += bd[o];
    }
  }
  if (tape) {
    StoragePtr<T> sb = bias.defined() ? bias.storage() : nullptr;
    tape->Record([rows, in, outf, sx = x.storage(), sw = weight.storage(), sb,
                  so = out.storage()] {
      if (so->grad.empty()) return;
      const T* gy = so->grad.data();
      if (Wants<T>(sx)) {
        sx->EnsureGrad();
        kernels::gemm(rows, in, outf, gy, outf, sw->data.data(), in,
                      sx->grad.data(), in, true);
      }
      if (Wants<T>(sw)) {
        sw->EnsureGrad();
        std::vector<T> gyt(static_cast<std::size_t>(outf) * rows);
        kernels::transpose(rows, outf, gy, gyt.data());
        kernels::gemm(outf, in, rows, gyt.data(), rows, sx->data.data(), in,
                      sw->grad.data(), in, true);
      }
      if (Wants<T>(sb)) {
        sb->EnsureGrad();
        for (int r = 0; r < rows; ++r) {
          for (int o = 0; o < outf; ++o) sb->grad[o] += gy[static_cast<std::size_t>(r) * outf + o];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, int stride, int groups) {
  RequireRank("conv2d", "input", input.shape(), 3);
  RequireRank("conv2d", "weight", weight.shape(), 4);
  if (stride != 1 && stride != 2) {
    Reject("conv2d", "stride must be 1 or 2, got " + std::to_string(stride));
  }
  if (groups <= 0) Reject("conv2d", "groups must be positive");
  kernels::ConvGeometry g;
  g.in_channels = input.dim(0);
  g.in_h = input.dim(1);
  g.in_w = input.dim(2);
  g.out_channels = weight.dim(0);
  g.stride = stride;
  g.groups = groups;
  if (g.in_channels % groups != 0) {
    Reject("conv2d", "input channels (dim 0) = " + std::to_string(g.in_channels) +
                         " not divisible by groups = " + std::to_string(groups));
  }
  if (g.out_channels % groups != 0) {
    Reject("conv2d", "weight dim 0 (out channels) = " +
                         std::to_string(g.out_channels) +
                         " not divisible by groups = " + std::to_string(groups));
  }
  if (weight.dim(1) != g.in_per_group()) {
    Reject("conv2d", "weight dim 1 = " + std::to_string(weight.dim(1)) +
                         " but input channels / groups = " +
                         std::to_string(g.in_per_group()));
  }
  if (weight.dim(2) != 3 || weight.dim(3) != 3) {
    Reject("conv2d", "kernel dims 2,3 must be 3x3, got " +
                         ShapeString(weight.shape()));
  }
  if (bias.defined() && bias.numel() != static_cast<std::size_t>(g.out_channels)) {
    Reject("conv2d", "bias length " + std::to_string(bias.numel()) +
                         " does not match weight dim 0 = " +
                         std::to_string(g.out_channels));
  }
  Tape<T>* tape = Recording<T>({&input, &weight, &bias});
  Tensor<T> out = MakeOutput<T>({g.out_channels, g.out_h(), g.out_w()}, tape);
  kernels::conv2d_forward(g, input.data().data(), weight.data().data(),
                          bias.defined() ? bias.data().data() : nullptr,
                          out.mutable_data().data());
  if (tape) {
    StoragePtr<T> sb = bias.defined() ? bias.storage() : nullptr;
    tape->Record([g, sx = input.storage(), sw = weight.storage(), sb,
                  so = out.storage()] {
      if (so->grad.empty()) return;
      T* gx = nullptr;
      T* gw = nullptr;
      T* gb = nullptr;
      if (Wants<T>(sx)) { sx->EnsureGrad(); gx = sx->grad.data(); }
      if (Wants<T>(sw)) { sw->EnsureGrad(); gw = sw->grad.data(); }
      if (Wants<T>(sb)) { sb->EnsureGrad(); gb = sb->grad.data(); }
      kernels::conv2d_backward(g, sx->data.data(), sw->data.data(),
                               so->grad.data(), gx, gw, gb);
    });
  }
  return out;
}

template <typename T>
Tensor<T> BilinearResize(const Tensor<T>& x, int out_h, int out_w) {
  RequireRank("bilinear_resize", "input", x.shape(), 3);
  if (out_h <= 0 || out_w <= 0) Reject("bilinear_resize", "output size must be positive");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tape<T>* tape = Recording<T>({&x});
  Tensor<T> out = MakeOutput<T>({c, out_h, out_w}, tape);
  kernels::bilinear_resize_forward(c, h, w, out_h, out_w, x.data().data(),
                                   out.mutable_data().data());
  if (tape) {
    tape->Record([c, h, w, out_h, out_w, sx = x.storage(), so = out.storage()] {
      if (so->grad.empty()) return;
      sx->EnsureGrad();
      kernels::bilinear_resize_backward(c, h, w, out_h, out_w, so->grad.data(),
                                        sx->grad.data());
    });
  }
  return out;
}

template <typename T>
Tensor<T> BilinearUpsample(const Tensor<T>& x, int factor) {
  if (factor < 2) {
    Reject("bilinear_upsample", "factor must be >= 2, got " + std::to_string(factor));
  }
  RequireRank("bilinear_upsample", "input", x.shape(), 3);
  return BilinearResize(x, x.dim(1) * factor, x.dim(2) * factor);
}

template <typename T>
Tensor<T> AdaptiveAvgPool(const Tensor<T>& x, int k) {
  RequireRank("adaptive_avg_pool", "input", x.shape(), 3);
  if (k <= 0) Reject("adaptive_avg_pool", "output size must be positive");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto bin = [](int i, int in, int k) {
    const int lo = (i * in) / k;
    const int hi = ((i + 1) * in + k - 1) / k;
    return std::pair<int, int>(lo, hi);
  };
  Tape<T>* tape = Recording<T>({&x});
  Tensor<T> out = MakeOutput<T>({c, k, k}, tape);
  auto od = out.mutable_data();
  const auto xd = x.data();
  for (int ch = 0; ch < c; ++ch) {
    for (int oy = 0; oy < k; ++oy) {
      const auto [y0, y1] = bin(oy, h, k);
      for (int ox = 0; ox < k; ++ox) {
        const auto [x0, x1] = bin(ox, w, k);
        T s = 0;
        for (int y = y0; y < y1; ++y) {
          for (int xx = x0; xx < x1; ++xx) s += xd[(static_cast<std::size_t>(ch) * h + y) * w + xx];
        }
        od[(static_cast<std::size_t>(ch) * k + oy) * k + ox] = s / T((y1 - y0) * (x1 - x0));
      }
    }
  }
  if (tape) {
    tape->Record([c, h, w, k, bin, sx = x.storage(), so = out.storage()] {
      if (so->grad.empty()) return;
      sx->EnsureGrad();
      for (int ch = 0; ch < c; ++ch) {
        for (int oy = 0; oy < k; ++oy) {
          const auto [y0, y1] = bin(oy, h, k);
          for (int ox = 0; ox < k; ++ox) {
            const auto [x0, x1] = bin(ox, w, k);
            const T g = so->grad[(static_cast<std::size_t>(ch) * k + oy) * k + ox] /
                        T((y1 - y0) * (x1 - x0));
            for (int y = y0; y < y1; ++y) {
              for (int xx = x0; xx < x1; ++xx) sx->grad[(static_cast<std::size_t>(ch) * h + y) * w + xx] += g;
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> MaxPool2x2(const Tensor<T>& x) {
  RequireRank("max_pool2x2", "input", x.shape(), 3);
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h < 2 || w < 2) Reject("max_pool2x2", "spatial dims must be >= 2, got " + ShapeString(x.shape()));
  const int oh = h / 2, ow = w / 2;
  Tape<T>* tape = Recording<T>({&x});
  Tensor<T> out = MakeOutput<T>({c, oh, ow}, tape);
  auto od = out.mutable_data();
  const auto xd = x.data();
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(od.size());
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx) {
        std::size_t best = (static_cast<std::size_t>(ch) * h + 2 * y) * w + 2 * xx;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t i = (static_cast<std::size_t>(ch) * h + 2 * y + dy) * w + 2 * xx + dx;
            if (xd[i] > xd[best]) best = i;
          }
        }
        const std::size_t o = (static_cast<std::size_t>(ch) * oh + y) * ow + xx;
        od[o] = xd[best];
        (*argmax)[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  if (tape) {
    tape->Record([argmax, sx = x.storage(), so = out.storage()] {
      if (so->grad.empty()) return;
      sx->EnsureGrad();
      for (std::size_t o = 0; o < so->grad.size(); ++o) sx->grad[(*argmax)[o]] += so->grad[o];
    });
  }
  return out;
}

template <typename T>
Tensor<T> Concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) Reject("concat", "no inputs");
  const int rank = parts[0].rank();
  const int ax = NormalizeAxis("concat", axis, rank);
  Shape shape = parts[0].shape();
  shape[ax] = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    if (parts[p].rank() != rank) Reject("concat", "rank mismatch at input " + std::to_string(p));
    for (int d = 0; d < rank; ++d) {
      if (d != ax && parts[p].dim(d) != parts[0].dim(d)) {
        Reject("concat", "dimension " + std::to_string(d) + " mismatch at input " +
                             std::to_string(p) + ": " + ShapeString(parts[p].shape()) +
                             " vs " + ShapeString(parts[0].shape()));
      }
    }
    shape[ax] += parts[p].dim(ax);
  }
  Tape<T>* tape = nullptr;
  if (Tape<T>::Active() != nullptr) {
    for (const auto& p : parts) {
      if (p.requires_grad()) tape = Tape<T>::Active();
    }
  }
  Tensor<T> out = MakeOutput<T>(shape, tape);
  const AxisSplit os = SplitAt(shape, ax);
  auto od = out.mutable_data();
  std::size_t offset = 0;  // along axis, in units of inner
  std::vector<StoragePtr<T>> storages;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    const AxisSplit ps = SplitAt(p.shape(), ax);
    const std::size_t chunk = ps.extent * ps.inner;
    const auto pd = p.data();
    for (std::size_t o = 0; o < os.outer; ++o) {
      std::copy(pd.begin() + o * chunk, pd.begin() + (o + 1) * chunk,
                od.begin() + o * os.extent * os.inner + offset);
    }
    storages.push_back(p.storage());
    offsets.push_back(offset);
    offset += chunk;
  }
  if (tape) {
    tape->Record([os, storages, offsets, so = out.storage()] {
      if (so->grad.empty()) return;
      for (std::size_t p = 0; p < storages.size(); ++p) {
        const auto& sp = storages[p];
        if (!sp->requires_grad) continue;
        sp->EnsureGrad();
        const std::size_t chunk = sp->data.size() / os.outer;
        for (std::size_t o = 0; o < os.outer; ++o) {
          const T* src = so->grad.data() + o * os.extent * os.inner + offsets[p];
          T* dst = sp->grad.data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Reshape(const Tensor<T>& x, Shape shape) {
  if (ShapeNumel(shape) != x.numel()) {
    Reject("reshape", "cannot reshape " + ShapeString(x.shape()) + " to " +
                          ShapeString(shape));
  }
  Tape<T>* tape = Recording<T>({&x});
  Tensor<T> out = MakeOutput<T>(std::move(shape), tape);
  std::copy(x.data().begin(), x.data().end(), out.mutable_data().begin());
  if (tape) {
    tape->Record([sx = x.storage(), so = out.storage()] {
      if (so->grad.empty()) return;
      sx->EnsureGrad();
      for (std::size_t i = 0; i < so->grad.size(); ++i) sx->grad[i] += so->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> RowSum(const Tensor<T>& x) {
  RequireRank("row_sum", "input", x.shape(), 2);
  const int r = x.dim(0), c = x.dim(1);
  Tape<T>* tape = Recording<T>({&x});
  Tensor<T> out = MakeOutput<T>({r, 1}, tape);
  auto od = out.mutable_data();
  const auto xd = x.data();
  for (int i = 0; i < r; ++i) {
    T s = 0;
    for (int j = 0; j < c; ++j) s += xd[static_cast<std::size_t>(i) * c + j];
    od[i] = s;
  }
  if (tape) {
    tape->Record([r, c, sx = x.storage(), so = out.storage()] {
      if (so->grad.empty()) return;
      sx->EnsureGrad();
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) sx->grad[static_cast<std::size_t>(i) * c + j] += so->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Sum(const Tensor<T>& x) {
  Tape<T>* tape = Recording<T>({&x});
  Tensor<T> out = MakeOutput<T>({1}, tape);
  T s = 0;
  for (T v : x.data()) s += v;
  out.mutable_data()[0] = s;
  if (tape) {
    tape->Record([sx = x.storage(), so = out.storage()] {
      if (so->grad.empty()) return;
      sx->EnsureGrad();
      for (auto& g : sx->grad) g += so->grad[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> Mean(const Tensor<T>& x) {
  return MulScalar(Sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> SliceRows(const Tensor<T>& x, int begin, int end) {
  if (x.rank() < 1 || begin < 0 || end > x.dim(0) || begin >= end) {
    Reject("slice_rows", "range [" + std::to_string(begin) + "," +
                             std::to_string(end) + ") invalid for dim 0 of " +
                             ShapeString(x.shape()));
  }
  std::vector<int> rows(end - begin);
  for (int i = begin; i < end; ++i) rows[i - begin] = i;
  return GatherRows(x, std::span<const int>(rows));
}

template <typename T>
Tensor<T> GatherRows(const Tensor<T>& x, std::span<const int> rows) {
  if (x.rank() < 1) Reject("gather_rows", "input must have rank >= 1");
  if (rows.empty()) Reject("gather_rows", "empty row list");
  const std::size_t row_len = x.numel() / x.dim(0);
  for (int r : rows) {
    if (r < 0 || r >= x.dim(0)) {
      Reject("gather_rows", "row " + std::to_string(r) + " out of range for dim 0 = " +
                                std::to_string(x.dim(0)));
    }
  }
  Shape shape = x.shape();
  shape[0] = static_cast<int>(rows.size());
  Tape<T>* tape = Recording<T>({&x});
  Tensor<T> out = MakeOutput<T>(shape, tape);
  auto od = out.mutable_data();
  const auto xd = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(xd.begin() + rows[i] * row_len, xd.begin() + (rows[i] + 1) * row_len,
              od.begin() + i * row_len);
  }
  if (tape) {
    std::vector<int> idx(rows.begin(), rows.end());
    tape->Record([idx, row_len, sx = x.storage(), so = out.storage()] {
      if (so->grad.empty()) return;
      sx->EnsureGrad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < row_len; ++j) {
          sx->grad[idx[i] * row_len + j] += so->grad[i * row_len + j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> NormalizeRows(const Tensor<T>& x, T eps) {
  RequireRank("normalize_rows", "input", x.shape(), 2);
  const int r = x.dim(0), c = x.dim(1);
  Tape<T>* tape = Recording<T>({&x});
  Tensor<T> out = MakeOutput<T>(x.shape(), tape);
  auto od = out.mutable_data();
  const auto xd = x.data();
  // Per-row denominator; zero marks a fallback row.
  auto denom = std::make_shared<std::vector<T>>(r, T(0));
  for (int i = 0; i < r; ++i) {
    const T* row = xd.data() + static_cast<std::size_t>(i) * c;
    T s = 0;
    for (int j = 0; j < c; ++j) s += row[j];
    T* orow = od.data() + static_cast<std::size_t>(i) * c;
    if (s < eps) {
      std::fill(orow, orow + c, T(1) / static_cast<T>(c));
    } else {
      const T d = s + eps;
      (*denom)[i] = d;
      for (int j = 0; j < c; ++j) orow[j] = row[j] / d;
    }
  }
  if (tape) {
    tape->Record([r, c, denom, sx = x.storage(), so = out.storage()] {
      if (so->grad.empty()) return;
      sx->EnsureGrad();
      for (int i = 0; i < r; ++i) {
        const T d = (*denom)[i];
        if (d == T(0)) continue;
        const T* gy = so->grad.data() + static_cast<std::size_t>(i) * c;
        const T* y = so->data.data() + static_cast<std::size_t>(i) * c;
        T dot = 0;
        for (int j = 0; j < c; ++j) dot += gy[j] * y[j];
        T* gx = sx->grad.data() + static_cast<std::size_t>(i) * c;
        for (int j = 0; j < c; ++j) gx[j] += (gy[j] - dot) / d;
      }
    });
  }
  return out;
}

#define SPIN_INSTANTIATE_OPS(T)                                                     \
  template Tensor<T> Add<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> Sub<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> Mul<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> Div<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> AddScalar<T>(const Tensor<T>&, T);                             \
  template Tensor<T> MulScalar<T>(const Tensor<T>&, T);                             \
  template Tensor<T> Sigmoid<T>(const Tensor<T>&);                                  \
  template Tensor<T> Relu<T>(const Tensor<T>&);                                     \
  template Tensor<T> Log<T>(const Tensor<T>&);                                      \
  template Tensor<T> Sqrt<T>(const Tensor<T>&);                                     \
  template Tensor<T> Pow<T>(const Tensor<T>&, T);                                   \
  template Tensor<T> Softmax<T>(const Tensor<T>&, int);                             \
  template Tensor<T> MatMul<T>(const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> Transpose<T>(const Tensor<T>&);                                \
  template Tensor<T> Linear<T>(const Tensor<T>&, const Tensor<T>&,                  \
                               const Tensor<T>&);                                   \
  template Tensor<T> Conv2d<T>(const Tensor<T>&, const Tensor<T>&,                  \
                               const Tensor<T>&, int, int);                         \
  template Tensor<T> BilinearResize<T>(const Tensor<T>&, int, int);                 \
  template Tensor<T> BilinearUpsample<T>(const Tensor<T>&, int);                    \
  template Tensor<T> AdaptiveAvgPool<T>(const Tensor<T>&, int);                     \
  template Tensor<T> MaxPool2x2<T>(const Tensor<T>&);                               \
  template Tensor<T> Concat<T>(const std::vector<Tensor<T>>&, int);                 \
  template Tensor<T> Reshape<T>(const Tensor<T>&, Shape);                           \
  template Tensor<T> RowSum<T>(const Tensor<T>&);                                   \
  template Tensor<T> Sum<T>(const Tensor<T>&);                                      \
  template Tensor<T> Mean<T>(const Tensor<T>&);                                     \
  template Tensor<T> SliceRows<T>(const Tensor<T>&, int, int);                      \
  template Tensor<T> GatherRows<T>(const Tensor<T>&, std::span<const int>);         \
  template Tensor<T> NormalizeRows<T>(const Tensor<T>&, T);

SPIN_INSTANTIATE_OPS(float)
SPIN_INSTANTIATE_OPS(double)

#undef SPIN_INSTANTIATE_OPS

}  // namespace spin

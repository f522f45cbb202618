#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "maanet/tensor.hpp"

// Differentiable primitives. Each free function computes its output eagerly
// and, when a Graph is active and any input is tracked, appends a backward
// rule to the tape. Loop nests are fixed and accumulation is sequential so
// seeded runs are bitwise reproducible.

namespace maanet {

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapM = Eigen::Map<MatRM<S>>;
template <typename S>
using CMapM = Eigen::Map<const MatRM<S>>;

namespace detail {

template <typename S>
inline void check_finite(const char* op, const Tensor<S>& t) {
  if (!t.values().allFinite())
    throw NumericError(std::string(op) + ": non-finite value in output");
}

template <typename S>
inline void require(bool cond, const char* op, const std::string& msg) {
  if (!cond) throw ShapeError(std::string(op) + ": " + msg);
}

// Marks `out` as produced by the active tape and guarantees grad buffers on
// every tensor gradient will be accumulated into.
template <typename S>
inline bool begin_record(std::initializer_list<const Tensor<S>*> inputs, Tensor<S>& out) {
  auto* g = Graph<S>::active();
  if (!g) return false;
  bool any = false;
  for (const Tensor<S>* t : inputs)
    if (t->valid() && tracked(*t)) any = true;
  if (!any) return false;
  for (const Tensor<S>* t : inputs) {
    if (!t->valid() || !tracked(*t)) continue;
    auto s = t->storage();
    if (s->grad.size() != s->values.size()) {
      s->grad.resize(s->values.size());
      s->grad.setZero();
    }
    if (s->requires_grad) g->note_leaf(s);
  }
  auto so = out.storage();
  so->tape_serial = g->serial();
  so->grad.resize(so->values.size());
  so->grad.setZero();
  return true;
}

template <typename S>
inline std::vector<std::uint64_t> ids_of(std::initializer_list<const Tensor<S>*> inputs) {
  std::vector<std::uint64_t> ids;
  for (const Tensor<S>* t : inputs)
    if (t->valid()) ids.push_back(t->id());
  return ids;
}

// im2col: dst is (C*kh*kw) x (oh*ow) row-major, one column per output pixel.
template <typename S>
inline void im2col(const S* src, int C, int H, int W, int kh, int kw, int stride, int pad,
                   int oh, int ow, S* dst) {
  int row = 0;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++row) {
        S* drow = dst + static_cast<std::size_t>(row) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          S* dptr = drow + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= H) {
            std::fill(dptr, dptr + ow, S(0));
            continue;
          }
          const S* srow = src + (static_cast<std::size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            dptr[ox] = (ix >= 0 && ix < W) ? srow[ix] : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
inline void col2im_add(const S* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                       int oh, int ow, S* dst) {
  int row = 0;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++row) {
        const S* crow = col + static_cast<std::size_t>(row) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          S* drow = dst + (static_cast<std::size_t>(c) * H + iy) * W;
          const S* cptr = crow + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) drow[ix] += cptr[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution. Weight layout outC x inC x kH x kW; zero padding; output size
// floor((in + 2p - k)/s) + 1. Bias may be an invalid (default) tensor.
// ---------------------------------------------------------------------------
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias, int stride,
                 int pad) {
  detail::require<S>(x.valid() && x.shape().rank == 4, "conv2d",
                     "input must be rank 4, got " + (x.valid() ? x.shape().str() : "invalid"));
  detail::require<S>(w.valid() && w.shape().rank == 4, "conv2d",
                     "weight must be rank 4 (outCxinCxkHxkW), got " +
                         (w.valid() ? w.shape().str() : "invalid"));
  const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const int outC = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  if (w.shape()[1] != C)
    throw ShapeError("conv2d: input dims " + x.shape().str() + " incompatible with weight dims " +
                     w.shape().str());
  detail::require<S>(stride >= 1, "conv2d", "stride must be >= 1");
  detail::require<S>(pad >= 0, "conv2d", "padding must be >= 0");
  const int oh = (H + 2 * pad - kh) / stride + 1;
  const int ow = (W + 2 * pad - kw) / stride + 1;
  detail::require<S>(oh > 0 && ow > 0, "conv2d",
                     "kernel " + w.shape().str() + " larger than padded input " + x.shape().str());
  if (bias.valid())
    detail::require<S>(bias.shape().rank == 1 && bias.shape()[0] == outC, "conv2d",
                       "bias dims " + bias.shape().str() + " vs out channels " +
                           std::to_string(outC));

  const int colRows = C * kh * kw;
  const int colCols = oh * ow;
  auto col = std::make_shared<ArrayX<S>>(static_cast<std::int64_t>(N) * colRows * colCols);

  Tensor<S> y = Tensor<S>::uninit({N, outC, oh, ow});
  CMapM<S> wm(w.data(), outC, colRows);
  for (int n = 0; n < N; ++n) {
    S* colp = col->data() + static_cast<std::size_t>(n) * colRows * colCols;
    detail::im2col(x.data() + static_cast<std::size_t>(n) * C * H * W, C, H, W, kh, kw, stride,
                   pad, oh, ow, colp);
    MapM<S> yn(y.data() + static_cast<std::size_t>(n) * outC * colCols, outC, colCols);
    yn.noalias() = wm * CMapM<S>(colp, colRows, colCols);
    if (bias.valid())
      for (int oc = 0; oc < outC; ++oc) yn.row(oc).array() += bias.data()[oc];
  }
  detail::check_finite("conv2d", y);

  if (detail::begin_record<S>({&x, &w, &bias}, y)) {
    auto sx = x.storage();
    auto sw = w.storage();
    auto sb = bias.valid() ? bias.storage() : nullptr;
    auto sy = y.storage();
    const bool gx = tracked(x), gw = tracked(w);
    const bool gb = sb && tracked(bias);
    Graph<S>::active()->push(
        "conv2d", detail::ids_of<S>({&x, &w, &bias}), sy,
        [=]() {
          CMapM<S> wmat(sw->values.data(), outC, colRows);
          ArrayX<S> dcol;
          if (gx) dcol.resize(static_cast<std::int64_t>(colRows) * colCols);
          for (int n = 0; n < N; ++n) {
            CMapM<S> dyn(sy->grad.data() + static_cast<std::size_t>(n) * outC * colCols, outC,
                         colCols);
            const S* colp = col->data() + static_cast<std::size_t>(n) * colRows * colCols;
            if (gw) {
              MapM<S> dw(sw->grad.data(), outC, colRows);
              dw.noalias() += dyn * CMapM<S>(colp, colRows, colCols).transpose();
            }
            if (gb) {
              for (int oc = 0; oc < outC; ++oc) sb->grad[oc] += dyn.row(oc).sum();
            }
            if (gx) {
              MapM<S> dc(dcol.data(), colRows, colCols);
              dc.noalias() = wmat.transpose() * dyn;
              detail::col2im_add(dcol.data(), C, H, W, kh, kw, stride, pad, oh, ow,
                                 sx->grad.data() + static_cast<std::size_t>(n) * C * H * W);
            }
          }
        });
  }
  return y;
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, int stride, int pad) {
  return conv2d(x, w, Tensor<S>(), stride, pad);
}

// ---------------------------------------------------------------------------
// Fully connected: y = x * w^T + b with x: N x F, w: O x F, b: O.
// ---------------------------------------------------------------------------
template <typename S>
Tensor<S> affine(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  detail::require<S>(x.valid() && x.shape().rank == 2, "affine", "input must be rank 2");
  detail::require<S>(w.valid() && w.shape().rank == 2, "affine", "weight must be rank 2");
  const int N = x.shape()[0], F = x.shape()[1], O = w.shape()[0];
  if (w.shape()[1] != F)
    throw ShapeError("affine: input dims " + x.shape().str() + " incompatible with weight dims " +
                     w.shape().str());
  detail::require<S>(b.valid() && b.shape().rank == 1 && b.shape()[0] == O, "affine",
                     "bias must be rank 1 of size out features");

  Tensor<S> y = Tensor<S>::uninit({N, O});
  CMapM<S> xm(x.data(), N, F), wm(w.data(), O, F);
  MapM<S> ym(y.data(), N, O);
  ym.noalias() = xm * wm.transpose();
  for (int o = 0; o < O; ++o) ym.col(o).array() += b.data()[o];
  detail::check_finite("affine", y);

  if (detail::begin_record<S>({&x, &w, &b}, y)) {
    auto sx = x.storage(), sw = w.storage(), sb = b.storage(), sy = y.storage();
    const bool gx = tracked(x), gw = tracked(w), gb = tracked(b);
    Graph<S>::active()->push("affine", detail::ids_of<S>({&x, &w, &b}), sy, [=]() {
      CMapM<S> dy(sy->grad.data(), N, O);
      if (gw) {
        MapM<S> dw(sw->grad.data(), O, F);
        dw.noalias() += dy.transpose() * CMapM<S>(sx->values.data(), N, F);
      }
      if (gb)
        for (int o = 0; o < O; ++o) sb->grad[o] += dy.col(o).sum();
      if (gx) {
        MapM<S> dx(sx->grad.data(), N, F);
        dx.noalias() += dy * CMapM<S>(sw->values.data(), O, F);
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic.
// ---------------------------------------------------------------------------
namespace detail {
template <typename S>
inline void require_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": dims " + a.shape().str() + " vs " + b.shape().str());
}
}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape("add", a, b);
  Tensor<S> y = Tensor<S>::uninit(a.shape());
  y.values() = a.values() + b.values();
  detail::check_finite("add", y);
  if (detail::begin_record<S>({&a, &b}, y)) {
    auto sa = a.storage(), sb = b.storage(), sy = y.storage();
    const bool ga = tracked(a), gb = tracked(b);
    Graph<S>::active()->push("add", detail::ids_of<S>({&a, &b}), sy, [=]() {
      if (ga) sa->grad += sy->grad;
      if (gb) sb->grad += sy->grad;
    });
  }
  return y;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape("sub", a, b);
  Tensor<S> y = Tensor<S>::uninit(a.shape());
  y.values() = a.values() - b.values();
  detail::check_finite("sub", y);
  if (detail::begin_record<S>({&a, &b}, y)) {
    auto sa = a.storage(), sb = b.storage(), sy = y.storage();
    const bool ga = tracked(a), gb = tracked(b);
    Graph<S>::active()->push("sub", detail::ids_of<S>({&a, &b}), sy, [=]() {
      if (ga) sa->grad += sy->grad;
      if (gb) sb->grad -= sy->grad;
    });
  }
  return y;
}

// Elementwise product. Also accepts a mask b of dims N x 1 x H x W against
// a of dims N x C x H x W (channel broadcast), the attention-filtering case.
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  const bool broadcast = a.shape().rank == 4 && b.shape().rank == 4 && b.shape()[1] == 1 &&
                         a.shape()[1] != 1 && a.shape()[0] == b.shape()[0] &&
                         a.shape()[2] == b.shape()[2] && a.shape()[3] == b.shape()[3];
  if (!broadcast) detail::require_same_shape("mul", a, b);

  Tensor<S> y = Tensor<S>::uninit(a.shape());
  const int N = a.shape().rank == 4 ? a.shape()[0] : 1;
  const int C = a.shape().rank == 4 ? a.shape()[1] : 1;
  const std::int64_t hw = broadcast ? a.shape()[2] * static_cast<std::int64_t>(a.shape()[3]) : 0;
  if (broadcast) {
    for (int n = 0; n < N; ++n) {
      const auto mseg = b.values().segment(n * hw, hw);
      for (int c = 0; c < C; ++c) {
        const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * hw;
        y.values().segment(off, hw) = a.values().segment(off, hw) * mseg;
      }
    }
  } else {
    y.values() = a.values() * b.values();
  }
  detail::check_finite("mul", y);

  if (detail::begin_record<S>({&a, &b}, y)) {
    auto sa = a.storage(), sb = b.storage(), sy = y.storage();
    const bool ga = tracked(a), gb = tracked(b);
    Graph<S>::active()->push("mul", detail::ids_of<S>({&a, &b}), sy, [=]() {
      if (!broadcast) {
        if (ga) sa->grad += sy->grad * sb->values;
        if (gb) sb->grad += sy->grad * sa->values;
        return;
      }
      for (int n = 0; n < N; ++n) {
        const auto mseg = sb->values.segment(n * hw, hw);
        for (int c = 0; c < C; ++c) {
          const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * hw;
          if (ga) sa->grad.segment(off, hw) += sy->grad.segment(off, hw) * mseg;
          if (gb)
            sb->grad.segment(n * hw, hw) +=
                sy->grad.segment(off, hw) * sa->values.segment(off, hw);
        }
      }
    });
  }
  return y;
}

// Elementwise quotient (used on per-sample reductions in the Dice loss).
template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape("div", a, b);
  Tensor<S> y = Tensor<S>::uninit(a.shape());
  y.values() = a.values() / b.values();
  detail::check_finite("div", y);
  if (detail::begin_record<S>({&a, &b}, y)) {
    auto sa = a.storage(), sb = b.storage(), sy = y.storage();
    const bool ga = tracked(a), gb = tracked(b);
    Graph<S>::active()->push("div", detail::ids_of<S>({&a, &b}), sy, [=]() {
      if (ga) sa->grad += sy->grad / sb->values;
      if (gb) sb->grad -= sy->grad * sa->values / (sb->values * sb->values);
    });
  }
  return y;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S k) {
  Tensor<S> y = Tensor<S>::uninit(a.shape());
  y.values() = a.values() * k;
  detail::check_finite("scale", y);
  if (detail::begin_record<S>({&a}, y)) {
    auto sa = a.storage(), sy = y.storage();
    Graph<S>::active()->push("scale", detail::ids_of<S>({&a}), sy,
                             [=]() { sa->grad += sy->grad * k; });
  }
  return y;
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S k) {
  Tensor<S> y = Tensor<S>::uninit(a.shape());
  y.values() = a.values() + k;
  detail::check_finite("add_scalar", y);
  if (detail::begin_record<S>({&a}, y)) {
    auto sa = a.storage(), sy = y.storage();
    Graph<S>::active()->push("add_scalar", detail::ids_of<S>({&a}), sy,
                             [=]() { sa->grad += sy->grad; });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities.
// ---------------------------------------------------------------------------
template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  Tensor<S> y = Tensor<S>::uninit(a.shape());
  y.values() = a.values().max(S(0));
  detail::check_finite("relu", y);
  if (detail::begin_record<S>({&a}, y)) {
    auto sa = a.storage(), sy = y.storage();
    Graph<S>::active()->push("relu", detail::ids_of<S>({&a}), sy, [=]() {
      sa->grad += (sa->values > S(0)).template cast<S>() * sy->grad;
    });
  }
  return y;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  Tensor<S> y = Tensor<S>::uninit(a.shape());
  // logistic via tanh, stable for large |x|
  y.values() = S(0.5) + S(0.5) * (a.values() * S(0.5)).tanh();
  detail::check_finite("sigmoid", y);
  if (detail::begin_record<S>({&a}, y)) {
    auto sa = a.storage(), sy = y.storage();
    Graph<S>::active()->push("sigmoid", detail::ids_of<S>({&a}), sy, [=]() {
      sa->grad += sy->grad * sy->values * (S(1) - sy->values);
    });
  }
  return y;
}

template <typename S>
Tensor<S> exp(const Tensor<S>& a) {
  Tensor<S> y = Tensor<S>::uninit(a.shape());
  y.values() = a.values().exp();
  detail::check_finite("exp", y);
  if (detail::begin_record<S>({&a}, y)) {
    auto sa = a.storage(), sy = y.storage();
    Graph<S>::active()->push("exp", detail::ids_of<S>({&a}), sy,
                             [=]() { sa->grad += sy->grad * sy->values; });
  }
  return y;
}

template <typename S>
Tensor<S> log(const Tensor<S>& a) {
  Tensor<S> y = Tensor<S>::uninit(a.shape());
  y.values() = a.values().log();
  detail::check_finite("log", y);
  if (detail::begin_record<S>({&a}, y)) {
    auto sa = a.storage(), sy = y.storage();
    Graph<S>::active()->push("log", detail::ids_of<S>({&a}), sy,
                             [=]() { sa->grad += sy->grad / sa->values; });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Reductions and layout ops.
// ---------------------------------------------------------------------------

// Global average pool: N x C x H x W -> N x C.
template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  detail::require<S>(x.valid() && x.shape().rank == 4, "global_avg_pool", "input must be rank 4");
  const int N = x.shape()[0], C = x.shape()[1];
  const std::int64_t hw = x.shape()[2] * static_cast<std::int64_t>(x.shape()[3]);
  Tensor<S> y = Tensor<S>::uninit({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      y.values()[n * C + c] =
          x.values().segment((static_cast<std::int64_t>(n) * C + c) * hw, hw).mean();
  detail::check_finite("global_avg_pool", y);
  if (detail::begin_record<S>({&x}, y)) {
    auto sx = x.storage(), sy = y.storage();
    Graph<S>::active()->push("global_avg_pool", detail::ids_of<S>({&x}), sy, [=]() {
      const S inv = S(1) / static_cast<S>(hw);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
          sx->grad.segment((static_cast<std::int64_t>(n) * C + c) * hw, hw) +=
              sy->grad[n * C + c] * inv;
    });
  }
  return y;
}

// Concatenate rank-2 tensors along the feature (column) axis.
template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts) {
  detail::require<S>(!parts.empty(), "concat", "needs at least one input");
  const int N = parts[0].shape()[0];
  int total = 0;
  for (const auto& p : parts) {
    detail::require<S>(p.shape().rank == 2, "concat", "inputs must be rank 2");
    if (p.shape()[0] != N)
      throw ShapeError("concat: dims " + p.shape().str() + " vs " + parts[0].shape().str());
    total += p.shape()[1];
  }
  Tensor<S> y = Tensor<S>::uninit({N, total});
  int colOff = 0;
  for (const auto& p : parts) {
    const int F = p.shape()[1];
    for (int n = 0; n < N; ++n)
      y.values().segment(static_cast<std::int64_t>(n) * total + colOff, F) =
          p.values().segment(static_cast<std::int64_t>(n) * F, F);
    colOff += F;
  }
  detail::check_finite("concat", y);

  auto* g = Graph<S>::active();
  bool any = false;
  for (const auto& p : parts)
    if (tracked(p)) any = true;
  if (g && any) {
    std::vector<std::uint64_t> ids;
    std::vector<std::shared_ptr<TensorStorage<S>>> ss;
    std::vector<bool> want;
    for (const auto& p : parts) {
      ids.push_back(p.id());
      ss.push_back(p.storage());
      want.push_back(tracked(p));
      if (tracked(p)) {
        auto s = p.storage();
        if (s->grad.size() != s->values.size()) {
          s->grad.resize(s->values.size());
          s->grad.setZero();
        }
        if (s->requires_grad) g->note_leaf(s);
      }
    }
    auto sy = y.storage();
    sy->tape_serial = g->serial();
    sy->grad.resize(sy->values.size());
    sy->grad.setZero();
    g->push("concat", std::move(ids), sy, [=]() {
      int off = 0;
      for (std::size_t i = 0; i < ss.size(); ++i) {
        const int F = static_cast<int>(ss[i]->values.size()) / N;
        if (want[i])
          for (int n = 0; n < N; ++n)
            ss[i]->grad.segment(static_cast<std::int64_t>(n) * F, F) +=
                sy->grad.segment(static_cast<std::int64_t>(n) * total + off, F);
        off += F;
      }
    });
  }
  return y;
}

// View of one channel: N x C x H x W -> N x 1 x H x W.
template <typename S>
Tensor<S> channel_slice(const Tensor<S>& x, int c) {
  detail::require<S>(x.valid() && x.shape().rank == 4, "channel_slice", "input must be rank 4");
  const int N = x.shape()[0], C = x.shape()[1];
  detail::require<S>(c >= 0 && c < C, "channel_slice", "channel index out of range");
  const std::int64_t hw = x.shape()[2] * static_cast<std::int64_t>(x.shape()[3]);
  Tensor<S> y = Tensor<S>::uninit({N, 1, x.shape()[2], x.shape()[3]});
  for (int n = 0; n < N; ++n)
    y.values().segment(n * hw, hw) =
        x.values().segment((static_cast<std::int64_t>(n) * C + c) * hw, hw);
  detail::check_finite("channel_slice", y);
  if (detail::begin_record<S>({&x}, y)) {
    auto sx = x.storage(), sy = y.storage();
    Graph<S>::active()->push("channel_slice", detail::ids_of<S>({&x}), sy, [=]() {
      for (int n = 0; n < N; ++n)
        sx->grad.segment((static_cast<std::int64_t>(n) * C + c) * hw, hw) +=
            sy->grad.segment(n * hw, hw);
    });
  }
  return y;
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
  Tensor<S> y = Tensor<S>::uninit({1});
  y.values()[0] = x.values().sum();
  detail::check_finite("sum_all", y);
  if (detail::begin_record<S>({&x}, y)) {
    auto sx = x.storage(), sy = y.storage();
    Graph<S>::active()->push("sum_all", detail::ids_of<S>({&x}), sy,
                             [=]() { sx->grad += sy->grad[0]; });
  }
  return y;
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& x) {
  Tensor<S> y = Tensor<S>::uninit({1});
  y.values()[0] = x.values().mean();
  detail::check_finite("mean_all", y);
  if (detail::begin_record<S>({&x}, y)) {
    auto sx = x.storage(), sy = y.storage();
    const S inv = S(1) / static_cast<S>(x.numel());
    Graph<S>::active()->push("mean_all", detail::ids_of<S>({&x}), sy,
                             [=]() { sx->grad += sy->grad[0] * inv; });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Binary cross-entropy on logits, elementwise, in the stable form
// max(x,0) - x*t + log(1 + exp(-|x|)). Targets receive no gradient.
// ---------------------------------------------------------------------------
template <typename S>
Tensor<S> bce_logits(const Tensor<S>& logits, const Tensor<S>& targets) {
  detail::require_same_shape("bce_logits", logits, targets);
  Tensor<S> y = Tensor<S>::uninit(logits.shape());
  const auto& x = logits.values();
  const auto& t = targets.values();
  y.values() = x.max(S(0)) - x * t + (S(1) + (-x.abs()).exp()).log();
  detail::check_finite("bce_logits", y);
  if (detail::begin_record<S>({&logits}, y)) {
    auto sx = logits.storage(), st = targets.storage(), sy = y.storage();
    Graph<S>::active()->push("bce_logits", detail::ids_of<S>({&logits, &targets}), sy, [=]() {
      // d/dx = sigmoid(x) - t
      sx->grad +=
          sy->grad * (S(0.5) + S(0.5) * (sx->values * S(0.5)).tanh() - st->values);
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Batch normalization over N,H,W per channel. Train mode uses batch
// statistics (biased variance) and updates running stats in place with the
// unbiased variance; eval mode uses running statistics only.
// ---------------------------------------------------------------------------
template <typename S>
Tensor<S> batch_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     Tensor<S>& running_mean, Tensor<S>& running_var, bool training, S momentum,
                     S eps) {
  detail::require<S>(x.valid() && x.shape().rank == 4, "batch_norm", "input must be rank 4");
  const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  detail::require<S>(gamma.shape().rank == 1 && gamma.shape()[0] == C, "batch_norm",
                     "gamma dims " + gamma.shape().str() + " vs channels " + std::to_string(C));
  if (training && N < 2)
    throw ContractError("batch_norm: train mode requires batch size >= 2, got " +
                        std::to_string(N));

  const std::int64_t hw = static_cast<std::int64_t>(H) * W;
  const std::int64_t m = static_cast<std::int64_t>(N) * hw;
  Tensor<S> y = Tensor<S>::uninit(x.shape());

  auto xhat = std::make_shared<ArrayX<S>>(x.numel());
  auto invstd = std::make_shared<ArrayX<S>>(C);

  for (int c = 0; c < C; ++c) {
    S mean, var;
    if (training) {
      S sum = 0;
      for (int n = 0; n < N; ++n)
        sum += x.values().segment((static_cast<std::int64_t>(n) * C + c) * hw, hw).sum();
      mean = sum / static_cast<S>(m);
      S sq = 0;
      for (int n = 0; n < N; ++n)
        sq += (x.values().segment((static_cast<std::int64_t>(n) * C + c) * hw, hw) - mean)
                  .square()
                  .sum();
      var = sq / static_cast<S>(m);  // biased, used for normalization
      const S unbiased = m > 1 ? sq / static_cast<S>(m - 1) : var;
      running_mean.values()[c] = (S(1) - momentum) * running_mean.values()[c] + momentum * mean;
      running_var.values()[c] = (S(1) - momentum) * running_var.values()[c] + momentum * unbiased;
    } else {
      mean = running_mean.values()[c];
      var = running_var.values()[c];
    }
    const S istd = S(1) / std::sqrt(var + eps);
    (*invstd)[c] = istd;
    for (int n = 0; n < N; ++n) {
      const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * hw;
      xhat->segment(off, hw) = (x.values().segment(off, hw) - mean) * istd;
      y.values().segment(off, hw) =
          xhat->segment(off, hw) * gamma.values()[c] + beta.values()[c];
    }
  }
  detail::check_finite("batch_norm", y);

  if (detail::begin_record<S>({&x, &gamma, &beta}, y)) {
    auto sx = x.storage(), sg = gamma.storage(), sb = beta.storage(), sy = y.storage();
    const bool gx = tracked(x), gg = tracked(gamma), gb = tracked(beta);
    Graph<S>::active()->push(
        "batch_norm", detail::ids_of<S>({&x, &gamma, &beta}), sy, [=]() {
          for (int c = 0; c < C; ++c) {
            S sum_dy = 0, sum_dy_xhat = 0;
            for (int n = 0; n < N; ++n) {
              const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * hw;
              sum_dy += sy->grad.segment(off, hw).sum();
              sum_dy_xhat += (sy->grad.segment(off, hw) * xhat->segment(off, hw)).sum();
            }
            if (gg) sg->grad[c] += sum_dy_xhat;
            if (gb) sb->grad[c] += sum_dy;
            if (!gx) continue;
            const S g = sg->values[c];
            const S istd = (*invstd)[c];
            if (training) {
              const S invm = S(1) / static_cast<S>(m);
              for (int n = 0; n < N; ++n) {
                const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * hw;
                sx->grad.segment(off, hw) +=
                    g * istd *
                    (sy->grad.segment(off, hw) - invm * sum_dy -
                     xhat->segment(off, hw) * (invm * sum_dy_xhat));
              }
            } else {
              for (int n = 0; n < N; ++n) {
                const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * hw;
                sx->grad.segment(off, hw) += g * istd * sy->grad.segment(off, hw);
              }
            }
          }
        });
  }
  return y;
}

}  // namespace maanet

#pragma once

#include <cmath>
#include <cstring>

#include "maanet/common.hpp"
#include "maanet/grad_check.hpp"
#include "maanet/tensor.hpp"

namespace maanet::testutil {

template <typename S>
Tensor<S> random_tensor(const Shape& shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<S> t = Tensor<S>::uninit(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t.values()[i] = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

// Uniform in [-hi,-margin] U [margin,hi]; keeps finite differences away from
// the ReLU kink.
template <typename S>
Tensor<S> random_tensor_margin(const Shape& shape, RngStream& rng, double margin = 0.2,
                               double hi = 1.5) {
  Tensor<S> t = Tensor<S>::uninit(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    const double mag = rng.uniform(margin, hi);
    t.values()[i] = static_cast<S>(rng.bernoulli(0.5) ? mag : -mag);
  }
  return t;
}

template <typename S>
Tensor<S> random_binary(const Shape& shape, RngStream& rng, double p = 0.5) {
  Tensor<S> t = Tensor<S>::uninit(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t.values()[i] = rng.bernoulli(p) ? S(1) : S(0);
  return t;
}

inline bool bits_equal(float a, float b) {
  std::uint32_t x = 0, y = 0;
  std::memcpy(&x, &a, 4);
  std::memcpy(&y, &b, 4);
  return x == y;
}

// Copies float tensor values into a double twin, exactly (promotion is
// lossless), so both closures evaluate at the same point.
inline void promote_values(const Tensor<float>& src, Tensor<double>& dst) {
  if (src.numel() != dst.numel())
    throw ContractError("promote_values: element count mismatch");
  for (std::int64_t i = 0; i < src.numel(); ++i)
    dst.values()[i] = static_cast<double>(src.values()[i]);
}

// Finite-difference check for 32-bit composites: the gradient under test is
// the float reverse-mode one, the oracle is central differences of a
// double-precision twin closure evaluated at the identical point. fp32
// forward noise would otherwise drown the 1e-3 tolerance for small-gradient
// elements; the oracle stays plain finite differences, just in 64-bit.
template <typename FnF, typename FnD>
GradCheckReport grad_check_cross(FnF&& f32, std::vector<Tensor<float>> in32, FnD&& f64,
                                 std::vector<Tensor<double>> in64, double step,
                                 double tolerance) {
  if (in32.size() != in64.size()) throw ContractError("grad_check_cross: input count mismatch");
  for (size_t i = 0; i < in32.size(); ++i) promote_values(in32[i], in64[i]);

  const float v1 = f32().item();
  const float v2 = f32().item();
  if (!(v1 == v2)) throw OracleError("grad_check_cross: float closure not deterministic");

  std::vector<ArrayX<float>> ad;
  {
    for (auto& t : in32) {
      t.set_requires_grad(true);
      t.zero_grad();
    }
    Graph<float> tape;
    auto loss = f32();
    tape.backward(loss);
    for (auto& t : in32) ad.push_back(t.grad());
  }

  GradCheckReport report;
  report.tolerance = tolerance;
  for (size_t i = 0; i < in64.size(); ++i) {
    auto& vals = in64[i].values();
    for (std::int64_t j = 0; j < vals.size(); ++j) {
      const double saved = vals[j];
      vals[j] = saved + step;
      const double fp = f64().item();
      vals[j] = saved - step;
      const double fm = f64().item();
      vals[j] = saved;
      const double g_fd = (fp - fm) / (2.0 * step);
      const double g_ad = static_cast<double>(ad[i][j]);
      const double denom = std::max({std::abs(g_ad), std::abs(g_fd), 1e-8});
      report.max_rel_error = std::max(report.max_rel_error, std::abs(g_ad - g_fd) / denom);
      ++report.elements_checked;
    }
  }
  report.pass = report.max_rel_error < tolerance;
  return report;
}

}  // namespace maanet::testutil

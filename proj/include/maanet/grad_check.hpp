#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include "maanet/tensor.hpp"

namespace maanet {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::int64_t elements_checked = 0;
  bool pass = false;
};

// Central finite differences against the recorded gradient. The closure must
// be a deterministic scalar function of `inputs` (checked by evaluating it
// twice). Relative error per element is |g_ad - g_fd| / max(|g_ad|, |g_fd|,
// 1e-8). This is the verification oracle for every differentiable path in
// the stack; it must never call into the tape it is checking.
template <typename Scalar, typename Fn>
GradCheckReport grad_check(Fn&& closure, std::vector<Tensor<Scalar>> inputs, double step,
                           double tolerance) {
  if (step <= 0) throw ContractError("grad_check: step must be positive");

  for (auto& t : inputs) t.set_requires_grad(true);

  const Scalar v1 = closure().item();
  const Scalar v2 = closure().item();
  if (!(v1 == v2))
    throw OracleError("grad_check: closure is not deterministic (two evaluations disagree)");

  // Reverse-mode gradient.
  std::vector<ArrayX<Scalar>> ad;
  {
    for (auto& t : inputs) t.zero_grad();
    Graph<Scalar> tape;
    Tensor<Scalar> loss = closure();
    tape.backward(loss);
    for (auto& t : inputs) ad.push_back(t.grad());
  }

  GradCheckReport report;
  report.tolerance = tolerance;
  const Scalar h = static_cast<Scalar>(step);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto& vals = inputs[i].values();
    for (std::int64_t j = 0; j < vals.size(); ++j) {
      const Scalar saved = vals[j];
      vals[j] = saved + h;
      const double fp = static_cast<double>(closure().item());
      vals[j] = saved - h;
      const double fm = static_cast<double>(closure().item());
      vals[j] = saved;
      const double g_fd = (fp - fm) / (2.0 * static_cast<double>(h));
      const double g_ad = static_cast<double>(ad[i][j]);
      const double denom = std::max({std::abs(g_ad), std::abs(g_fd), 1e-8});
      report.max_rel_error = std::max(report.max_rel_error, std::abs(g_ad - g_fd) / denom);
      ++report.elements_checked;
    }
  }
  report.pass = report.max_rel_error < tolerance;
  return report;
}

}  // namespace maanet

#include "core/grad_check.hpp"

#include <cmath>

namespace prnet {

template <class S>
double grad_check(const std::function<TensorT<S>()>& f,
                  const std::vector<TensorT<S>>& inputs, double eps) {
  if (eps <= 0) fail_invalid("grad_check: eps must be positive");
  for (const auto& t : inputs)
    if (!t.requires_grad())
      fail_invalid("grad_check: all inputs must require grad");

  for (auto t : inputs) t.zero_grad();
  TensorT<S> y = f();
  if (y.numel() != 1)
    fail_invalid("grad_check: f must be scalar-valued, got " +
                 y.shape().str());
  if (!std::isfinite(static_cast<double>(y.data()[0])))
    throw std::runtime_error("grad_check: non-finite output from f");
  y.backward();

  std::vector<std::vector<S>> analytic;
  for (const auto& t : inputs) analytic.push_back(t.grad_vec());

  auto eval = [&]() -> double {
    NoGradGuard ng;
    TensorT<S> out = f();
    const double v = static_cast<double>(out.data()[0]);
    if (!std::isfinite(v))
      throw std::runtime_error("grad_check: non-finite output from f");
    return v;
  };

  double max_rel = 0.0;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    TensorT<S> t = inputs[ti];
    S* d = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) {
      const S saved = d[i];
      d[i] = saved + static_cast<S>(eps);
      const double yp = eval();
      d[i] = saved - static_cast<S>(eps);
      const double ym = eval();
      d[i] = saved;
      const double numeric = (yp - ym) / (2.0 * eps);
      const double a = static_cast<double>(analytic[ti][i]);
      const double rel =
          std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

template double grad_check(const std::function<TensorT<float>()>&,
                           const std::vector<TensorT<float>>&, double);
template double grad_check(const std::function<TensorT<double>()>&,
                           const std::vector<TensorT<double>>&, double);

}  // namespace prnet

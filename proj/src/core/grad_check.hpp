#pragma once

#include <functional>
#include <vector>

#include "core/tensor.hpp"

namespace prnet {

// Compares reverse-mode gradients against central finite differences.
//
// f must rebuild its graph on every call, close over `inputs`, and return a
// scalar (1x1x1x1) tensor whose value is a deterministic function of the
// input data. Returns the max over all input coordinates of
// |analytic - numeric| / max(1, |numeric|).
//
// Run with S = double; single-precision round-off alone exceeds any useful
// tolerance.
template <class S>
double grad_check(const std::function<TensorT<S>()>& f,
                  const std::vector<TensorT<S>>& inputs, double eps);

}  // namespace prnet

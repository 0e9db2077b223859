#pragma once

#include <string>
#include <vector>

#include "core/ops.hpp"

namespace prnet {

// Named view over a model's tensors: learnables for the optimizer and
// checkpoints, running-stat buffers for checkpoints only, plus the batchnorm
// states for train/eval mode switching. Holds pointers into the owning
// module structs, so the owner must not move after collection.
template <class S>
struct ParamSetT {
  struct NamedTensor {
    std::string name;
    TensorT<S> tensor;
  };
  struct NamedBuffer {
    std::string name;
    std::vector<S>* values;
  };

  std::vector<NamedTensor> learnables;
  std::vector<NamedBuffer> buffers;
  std::vector<BatchNormStateT<S>*> bn_states;

  void add(const std::string& name, const TensorT<S>& t) {
    learnables.push_back({name, t});
  }

  void add_bn(const std::string& prefix, BatchNormStateT<S>& bn) {
    add(prefix + ".gamma", bn.gamma);
    add(prefix + ".beta", bn.beta);
    buffers.push_back({prefix + ".running_mean", &bn.running_mean});
    buffers.push_back({prefix + ".running_var", &bn.running_var});
    bn_states.push_back(&bn);
  }

  void add_conv(const std::string& prefix, const ConvWeightsT<S>& w) {
    add(prefix + ".weight", w.values);
    if (w.has_bias()) add(prefix + ".bias", w.bias);
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& p : learnables) n += p.tensor.numel();
    return n;
  }

  int64_t param_count_prefix(const std::string& prefix) const {
    int64_t n = 0;
    for (const auto& p : learnables)
      if (p.name.rfind(prefix, 0) == 0) n += p.tensor.numel();
    return n;
  }

  void set_training(bool training) {
    for (auto* bn : bn_states) bn->training = training;
  }

  void zero_grad() {
    for (auto& p : learnables) p.tensor.zero_grad();
  }
};

using ParamSet = ParamSetT<float>;

}  // namespace prnet

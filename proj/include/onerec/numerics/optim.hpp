#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "onerec/numerics/tensor.hpp"

namespace onerec {

// A trainable tensor plus its gradient and Adam state.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor adamM;
  Tensor adamV;
  int64_t stepCount = 0;

  Parameter() = default;
  Parameter(std::string n, Tensor v);

  void zeroGrad();
  void resetOptimizerState();
};

struct AdamConfig {
  Real learningRate = 2e-4;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
};

// Bias-corrected Adam update over all parameters; gradients are zeroed
// after the step.
void adamStep(const std::vector<Parameter*>& params, const AdamConfig& cfg);

// Plain SGD step (used by a couple of diagnostic probes); zeroes gradients.
void sgdStep(const std::vector<Parameter*>& params, Real learningRate);

}  // namespace onerec

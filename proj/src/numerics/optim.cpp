#include "onerec/numerics/optim.hpp"

#include <cmath>

namespace onerec {

Parameter::Parameter(std::string n, Tensor v)
    : name(std::move(n)),
      value(std::move(v)),
      grad(Tensor::zeros(value.shape())),
      adamM(Tensor::zeros(value.shape())),
      adamV(Tensor::zeros(value.shape())) {}

void Parameter::zeroGrad() { grad.fill(Real(0)); }

void Parameter::resetOptimizerState() {
  adamM.fill(Real(0));
  adamV.fill(Real(0));
  stepCount = 0;
}

void adamStep(const std::vector<Parameter*>& params, const AdamConfig& cfg) {
  for (Parameter* p : params) {
    p->stepCount += 1;
    const Real t = static_cast<Real>(p->stepCount);
    const Real corr1 = Real(1) - std::pow(cfg.beta1, t);
    const Real corr2 = Real(1) - std::pow(cfg.beta2, t);
    const int64_t n = p->value.size();
    for (int64_t i = 0; i < n; ++i) {
      const Real g = p->grad[i];
      p->adamM[i] = cfg.beta1 * p->adamM[i] + (Real(1) - cfg.beta1) * g;
      p->adamV[i] = cfg.beta2 * p->adamV[i] + (Real(1) - cfg.beta2) * g * g;
      const Real mHat = p->adamM[i] / corr1;
      const Real vHat = p->adamV[i] / corr2;
      p->value[i] -= cfg.learningRate * mHat / (std::sqrt(vHat) + cfg.eps);
    }
    p->zeroGrad();
  }
}

void sgdStep(const std::vector<Parameter*>& params, Real learningRate) {
  for (Parameter* p : params) {
    const int64_t n = p->value.size();
    for (int64_t i = 0; i < n; ++i) p->value[i] -= learningRate * p->grad[i];
    p->zeroGrad();
  }
}

}  // namespace onerec

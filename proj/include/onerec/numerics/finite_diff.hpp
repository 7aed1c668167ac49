#pragma once

#include <functional>
#include <string>
#include <vector>

#include "onerec/numerics/optim.hpp"

namespace onerec {

struct FiniteDiffReport {
  Real maxRelError = 0;
  std::string worstParam;
  int64_t worstIndex = -1;
  Real worstAnalytic = 0;
  Real worstNumeric = 0;
  int64_t coordinatesChecked = 0;

  bool pass(Real tolerance) const { return maxRelError < tolerance; }
  std::string summary() const;
};

// Compares analytic gradients against central finite differences.
//
// `lossFn` must be a deterministic scalar function of the parameter values
// (evaluated forward-only). Analytic gradients are computed by the caller
// beforehand or via `gradFn`; here we take the common route: the function is
// evaluated under a fresh tape per call, so we only need the loss closure and
// the parameters.
//
// maxCoordinatesPerParam <= 0 checks every coordinate; otherwise a
// deterministic stride subsample is used for large tensors.
FiniteDiffReport finiteDiffCheck(const std::function<Real()>& lossFn,
                                 const std::function<void()>& computeGradients,
                                 const std::vector<Parameter*>& params,
                                 Real h = Real(1e-5),
                                 int64_t maxCoordinatesPerParam = 0);

Real relError(Real analytic, Real numeric);

}  // namespace onerec

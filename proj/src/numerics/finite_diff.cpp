#include "onerec/numerics/finite_diff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace onerec {

Real relError(Real analytic, Real numeric) {
  const Real denom = std::max({Real(1e-3), std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

std::string FiniteDiffReport::summary() const {
  std::ostringstream os;
  os << "max rel error " << maxRelError << " over " << coordinatesChecked << " coordinates";
  if (!worstParam.empty()) {
    os << " (worst: " << worstParam << "[" << worstIndex << "] analytic=" << worstAnalytic
       << " numeric=" << worstNumeric << ")";
  }
  return os.str();
}

FiniteDiffReport finiteDiffCheck(const std::function<Real()>& lossFn,
                                 const std::function<void()>& computeGradients,
                                 const std::vector<Parameter*>& params,
                                 Real h, int64_t maxCoordinatesPerParam) {
  for (Parameter* p : params) p->zeroGrad();
  computeGradients();

  // Snapshot analytic gradients, then probe coordinates.
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  FiniteDiffReport report;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    const int64_t n = p->value.size();
    int64_t stride = 1;
    if (maxCoordinatesPerParam > 0 && n > maxCoordinatesPerParam) {
      stride = (n + maxCoordinatesPerParam - 1) / maxCoordinatesPerParam;
    }
    for (int64_t i = 0; i < n; i += stride) {
      const Real orig = p->value[i];
      p->value[i] = orig + h;
      const Real fPlus = lossFn();
      p->value[i] = orig - h;
      const Real fMinus = lossFn();
      p->value[i] = orig;
      const Real numeric = (fPlus - fMinus) / (Real(2) * h);
      const Real a = analytic[pi][i];
      const Real err = relError(a, numeric);
      ++report.coordinatesChecked;
      if (err > report.maxRelError) {
        report.maxRelError = err;
        report.worstParam = p->name;
        report.worstIndex = i;
        report.worstAnalytic = a;
        report.worstNumeric = numeric;
      }
    }
  }
  for (Parameter* p : params) p->zeroGrad();
  return report;
}

}  // namespace onerec

#include "onerec/numerics/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace onerec {

namespace {

constexpr Real kSqrt2Pi = Real(2.5066282746310002);

inline Real sigmoidScalar(Real x) {
  if (x >= Real(0)) {
    return Real(1) / (Real(1) + std::exp(-x));
  }
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

inline Real softplusScalar(Real t) {
  // max(t,0) + log1p(exp(-|t|))
  return std::max(t, Real(0)) + std::log1p(std::exp(-std::abs(t)));
}

#if !defined(NDEBUG) || defined(ONEREC_CHECK_FINITE)
constexpr bool kCheckFinite = true;
#else
constexpr bool kCheckFinite = false;
#endif

}  // namespace

void mmNN(const Real* a, const Real* b, Real* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const Real* ai = a + static_cast<size_t>(i) * static_cast<size_t>(k);
    Real* ci = c + static_cast<size_t>(i) * static_cast<size_t>(n);
    for (int p = 0; p < k; ++p) {
      const Real av = ai[p];
      const Real* bp = b + static_cast<size_t>(p) * static_cast<size_t>(n);
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void mmNT(const Real* a, const Real* b, Real* c, int m, int k, int n) {
  // c[i,j] += dot(a_row_i, b_row_j); four accumulators for throughput.
  for (int i = 0; i < m; ++i) {
    const Real* ai = a + static_cast<size_t>(i) * static_cast<size_t>(k);
    Real* ci = c + static_cast<size_t>(i) * static_cast<size_t>(n);
    for (int j = 0; j < n; ++j) {
      const Real* bj = b + static_cast<size_t>(j) * static_cast<size_t>(k);
      Real s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      int p = 0;
      for (; p + 4 <= k; p += 4) {
        s0 += ai[p] * bj[p];
        s1 += ai[p + 1] * bj[p + 1];
        s2 += ai[p + 2] * bj[p + 2];
        s3 += ai[p + 3] * bj[p + 3];
      }
      for (; p < k; ++p) s0 += ai[p] * bj[p];
      ci[j] += (s0 + s1) + (s2 + s3);
    }
  }
}

void mmTN(const Real* a, const Real* b, Real* c, int m, int k, int n) {
  // a is [k,m]; c[i,j] += sum_p a[p,i] * b[p,j]
  for (int p = 0; p < k; ++p) {
    const Real* ap = a + static_cast<size_t>(p) * static_cast<size_t>(m);
    const Real* bp = b + static_cast<size_t>(p) * static_cast<size_t>(n);
    for (int i = 0; i < m; ++i) {
      const Real av = ap[i];
      Real* ci = c + static_cast<size_t>(i) * static_cast<size_t>(n);
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

Tape::Tape(bool gradEnabled) : gradEnabled_(gradEnabled) {}

VarId Tape::push(Tensor value, std::function<void()> backward) {
  if (kCheckFinite && !value.allFinite()) {
    throw ContractError("non-finite values produced at tape node " + std::to_string(nodes_.size()));
  }
  Node n;
  n.value = std::move(value);
  if (gradEnabled_) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return static_cast<VarId>(nodes_.size() - 1);
}

Tape::Node& Tape::node(VarId id) {
  checkValid(id);
  return nodes_[static_cast<size_t>(id)];
}

const Tape::Node& Tape::node(VarId id) const {
  checkValid(id);
  return nodes_[static_cast<size_t>(id)];
}

void Tape::checkValid(VarId id) const {
  if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) {
    throw IndexError("invalid tape variable id " + std::to_string(id));
  }
}

Tensor& Tape::ensureGrad(VarId id) {
  Node& n = node(id);
  if (!n.gradAllocated) {
    n.grad = Tensor::zeros(n.value.shape());
    n.gradAllocated = true;
  }
  return n.grad;
}

void Tape::addGrad(VarId id, const Real* g, int64_t n) {
  Tensor& dst = ensureGrad(id);
  if (dst.size() != n) throw DimensionError("gradient size mismatch");
  Real* d = dst.data();
  for (int64_t i = 0; i < n; ++i) d[i] += g[i];
  node(id).touched = true;
}

void Tape::accumulate(VarId id, const Tensor& g) { addGrad(id, g.data(), g.size()); }

VarId Tape::input(Tensor value) { return push(std::move(value)); }

VarId Tape::param(Parameter& p) {
  auto it = paramIndex_.find(&p);
  if (it != paramIndex_.end()) return it->second;
  VarId id = push(p.value);
  paramIndex_.emplace(&p, id);
  if (gradEnabled_) bindings_.emplace_back(&p, id);
  return id;
}

const Tensor& Tape::value(VarId id) const { return node(id).value; }

Tensor& Tape::grad(VarId id) { return ensureGrad(id); }

VarId Tape::add(VarId a, VarId b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (!av.sameShape(bv)) {
    throw DimensionError("add shape mismatch " + av.shapeStr() + " vs " + bv.shapeStr());
  }
  Tensor out = av;
  for (int64_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return push(std::move(out), [this, a, b, out = VarId(nodes_.size())]() {
    const Tensor& g = node(out).grad;
    accumulate(a, g);
    accumulate(b, g);
  });
}

VarId Tape::sub(VarId a, VarId b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (!av.sameShape(bv)) {
    throw DimensionError("sub shape mismatch " + av.shapeStr() + " vs " + bv.shapeStr());
  }
  Tensor out = av;
  for (int64_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return push(std::move(out), [this, a, b, out = VarId(nodes_.size())]() {
    const Tensor& g = node(out).grad;
    accumulate(a, g);
    Tensor& gb = ensureGrad(b);
    for (int64_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    node(b).touched = true;
  });
}

VarId Tape::mul(VarId a, VarId b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (!av.sameShape(bv)) {
    throw DimensionError("mul shape mismatch " + av.shapeStr() + " vs " + bv.shapeStr());
  }
  Tensor out = av;
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return push(std::move(out), [this, a, b, out = VarId(nodes_.size())]() {
    const Tensor& g = node(out).grad;
    const Tensor& avv = node(a).value;
    const Tensor& bvv = node(b).value;
    Tensor& ga = ensureGrad(a);
    Tensor& gb = ensureGrad(b);
    for (int64_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * bvv[i];
      gb[i] += g[i] * avv[i];
    }
    node(a).touched = true;
    node(b).touched = true;
  });
}

VarId Tape::scale(VarId a, Real s) {
  Tensor out = value(a);
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= s;
  return push(std::move(out), [this, a, s, out = VarId(nodes_.size())]() {
    const Tensor& g = node(out).grad;
    Tensor& ga = ensureGrad(a);
    for (int64_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    node(a).touched = true;
  });
}

VarId Tape::addScalar(VarId a, Real c) {
  Tensor out = value(a);
  for (int64_t i = 0; i < out.size(); ++i) out[i] += c;
  return push(std::move(out), [this, a, out = VarId(nodes_.size())]() {
    accumulate(a, node(out).grad);
  });
}

VarId Tape::addBias(VarId a, VarId bias) {
  const Tensor& av = value(a);
  const Tensor& bv = value(bias);
  const int rows = av.rows();
  const int cols = av.cols();
  if (bv.size() != cols) {
    throw DimensionError("addBias: bias " + bv.shapeStr() + " does not match columns of " + av.shapeStr());
  }
  Tensor out = av;
  for (int r = 0; r < rows; ++r) {
    Real* o = out.data() + static_cast<size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) o[c] += bv[c];
  }
  return push(std::move(out), [this, a, bias, rows, cols, out = VarId(nodes_.size())]() {
    const Tensor& g = node(out).grad;
    accumulate(a, g);
    Tensor& gb = ensureGrad(bias);
    for (int r = 0; r < rows; ++r) {
      const Real* gr = g.data() + static_cast<size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) gb[c] += gr[c];
    }
    node(bias).touched = true;
  });
}

VarId Tape::mulColumn(VarId a, VarId col) {
  const Tensor& av = value(a);
  const Tensor& cv = value(col);
  const int rows = av.rows();
  const int cols = av.cols();
  if (cv.size() != rows) {
    throw DimensionError("mulColumn: column " + cv.shapeStr() + " does not match rows of " + av.shapeStr());
  }
  Tensor out = av;
  for (int r = 0; r < rows; ++r) {
    Real* o = out.data() + static_cast<size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) o[c] *= cv[r];
  }
  return push(std::move(out), [this, a, col, rows, cols, out = VarId(nodes_.size())]() {
    const Tensor& g = node(out).grad;
    const Tensor& avv = node(a).value;
    const Tensor& cvv = node(col).value;
    Tensor& ga = ensureGrad(a);
    Tensor& gc = ensureGrad(col);
    for (int r = 0; r < rows; ++r) {
      const Real* gr = g.data() + static_cast<size_t>(r) * cols;
      const Real* ar = avv.data() + static_cast<size_t>(r) * cols;
      Real* gar = ga.data() + static_cast<size_t>(r) * cols;
      Real s = 0;
      for (int c = 0; c < cols; ++c) {
        gar[c] += gr[c] * cvv[r];
        s += gr[c] * ar[c];
      }
      gc[r] += s;
    }
    node(a).touched = true;
    node(col).touched = true;
  });
}

VarId Tape::concatCols(std::span<const VarId> parts) {
  if (parts.empty()) throw ArgumentError("concatCols needs at least one input");
  const int rows = value(parts[0]).rows();
  int totalCols = 0;
  for (VarId p : parts) {
    const Tensor& t = value(p);
    if (t.rows() != rows) throw DimensionError("concatCols row mismatch");
    totalCols += t.cols();
  }
  Tensor out({rows, totalCols});
  int off = 0;
  for (VarId p : parts) {
    const Tensor& t = value(p);
    const int c = t.cols();
    for (int r = 0; r < rows; ++r) {
      const Real* src = t.data() + static_cast<size_t>(r) * c;
      Real* dst = out.data() + static_cast<size_t>(r) * totalCols + off;
      std::copy(src, src + c, dst);
    }
    off += c;
  }
  std::vector<VarId> ids(parts.begin(), parts.end());
  return push(std::move(out), [this, ids = std::move(ids), rows, totalCols, out = VarId(nodes_.size())]() {
    const Tensor& g = node(out).grad;
    int off = 0;
    for (VarId p : ids) {
      const int c = node(p).value.cols();
      Tensor& gp = ensureGrad(p);
      for (int r = 0; r < rows; ++r) {
        const Real* src = g.data() + static_cast<size_t>(r) * totalCols + off;
        Real* dst = gp.data() + static_cast<size_t>(r) * c;
        for (int j = 0; j < c; ++j) dst[j] += src[j];
      }
      node(p).touched = true;
      off += c;
    }
  });
}

VarId Tape::concatCols(VarId a, VarId b) {
  const VarId parts[2] = {a, b};
  return concatCols(std::span<const VarId>(parts, 2));
}

VarId Tape::sliceCols(VarId a, int begin, int len) {
  const Tensor& av = value(a);
  const int rows = av.rows();
  const int cols = av.cols();
  if (begin < 0 || len <= 0 || begin + len > cols) {
    throw IndexError("sliceCols range [" + std::to_string(begin) + "," + std::to_string(begin + len) +
                     ") out of bounds for " + av.shapeStr());
  }
  Tensor out({rows, len});
  for (int r = 0; r < rows; ++r) {
    const Real* src = av.data() + static_cast<size_t>(r) * cols + begin;
    std::copy(src, src + len, out.data() + static_cast<size_t>(r) * len);
  }
  return push(std::move(out), [this, a, begin, len, rows, cols, out = VarId(nodes_.size())]() {
    const Tensor& g = node(out).grad;
    Tensor& ga = ensureGrad(a);
    for (int r = 0; r < rows; ++r) {
      const Real* src = g.data() + static_cast<size_t>(r) * len;
      Real* dst = ga.data() + static_cast<size_t>(r) * cols + begin;
      for (int j = 0; j < len; ++j) dst[j] += src[j];
    }
    node(a).touched = true;
  });
}

VarId Tape::gatherRows(VarId a, std::vector<int> rows) {
  const Tensor& av = value(a);
  const int srcRows = av.rows();
  const int cols = av.cols();
  for (int r : rows) {
    if (r < 0 || r >= srcRows) {
      throw IndexError("gatherRows index " + std::to_string(r) + " out of range [0," + std::to_string(srcRows) + ")");
    }
  }
  const int n = static_cast<int>(rows.size());
  if (n == 0) throw ArgumentError("gatherRows needs at least one row");
  Tensor out({n, cols});
  for (int i = 0; i < n; ++i) {
    const Real* src = av.data() + static_cast<size_t>(rows[static_cast<size_t>(i)]) * cols;
    std::copy(src, src + cols, out.data() + static_cast<size_t>(i) * cols);
  }
  return push(std::move(out), [this, a, rows = std::move(rows), cols, out = VarId(nodes_.size())]() {
    const Tensor& g = node(out).grad;
    Tensor& ga = ensureGrad(a);
    for (size_t i = 0; i < rows.size(); ++i) {
      const Real* src = g.data() + i * static_cast<size_t>(cols);
      Real* dst = ga.data() + static_cast<size_t>(rows[i]) * cols;
      for (int j = 0; j < cols; ++j) dst[j] += src[j];
    }
    node(a).touched = true;
  });
}

VarId Tape::scatterAddRows(VarId src, std::vector<int> rows, int numRows) {
  const Tensor& sv = value(src);
  const int cols = sv.cols();
  if (static_cast<int>(rows.size()) != sv.rows()) {
    throw DimensionError("scatterAddRows: index count does not match source rows");
  }
  for (int r : rows) {
    if (r < 0 || r >= numRows) throw IndexError("scatterAddRows index out of range");
  }
  Tensor out({numRows, cols});
  for (size_t i = 0; i < rows.size(); ++i) {
    const Real* s = sv.data() + i * static_cast<size_t>(cols);
    Real* d = out.data() + static_cast<size_t>(rows[i]) * cols;
    for (int j = 0; j < cols; ++j) d[j] += s[j];
  }
  return push(std::move(out), [this, src, rows = std::move(rows), cols, out = VarId(nodes_.size())]() {
    const Tensor& g = node(out).grad;
    Tensor& gs = ensureGrad(src);
    for (size_t i = 0; i < rows.size(); ++i) {
      const Real* s = g.data() + static_cast<size_t>(rows[i]) * cols;
      Real* d = gs.data() + i * static_cast<size_t>(cols);
      for (int j = 0; j < cols; ++j) d[j] += s[j];
    }
    node(src).touched = true;
  });
}

VarId Tape::transpose(VarId a) {
  const Tensor& av = value(a);
  const int rows = av.rows();
  const int cols = av.cols();
  Tensor out({cols, rows});
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) out[static_cast<int64_t>(c) * rows + r] = av[static_cast<int64_t>(r) * cols + c];
  }
  return push(std::move(out), [this, a, rows, cols, out = VarId(nodes_.size())]() {
    const Tensor& g = node(out).grad;
    Tensor& ga = ensureGrad(a);
    for (int c = 0; c < cols; ++c) {
      for (int r = 0; r < rows; ++r) ga[static_cast<int64_t>(r) * cols + c] += g[static_cast<int64_t>(c) * rows + r];
    }
    node(a).touched = true;
  });
}

VarId Tape::reshape(VarId a, std::vector<int> shape) {
  const Tensor& av = value(a);
  if (shapeNumel(shape) != av.size()) {
    throw DimensionError("reshape to " + onerec::shapeStr(shape) + " changes element count of " + av.shapeStr());
  }
  Tensor out(std::move(shape), std::vector<Real>(av.data(), av.data() + av.size()));
  return push(std::move(out), [this, a, out = VarId(nodes_.size())]() {
    const Tensor& g = node(out).grad;
    addGrad(a, g.data(), g.size());
  });
}

VarId Tape::matmul(VarId a, VarId b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.rank() != 2 || bv.rank() != 2) {
    throw DimensionError("matmul requires rank-2 tensors, got " + av.shapeStr() + " and " + bv.shapeStr());
  }
  const int m = av.dim(0), k = av.dim(1);
  const int k2 = bv.dim(0), n = bv.dim(1);
  if (k != k2) {
    throw DimensionError("matmul inner dimensions differ: " + av.shapeStr() + " vs " + bv.shapeStr());
  }
  Tensor out({m, n});
  mmNN(av.data(), bv.data(), out.data(), m, k, n);
  return push(std::move(out), [this, a, b, m, k, n, out = VarId(nodes_.size())]() {
    const Tensor& g = node(out).grad;
    const Tensor& avv = node(a).value;
    const Tensor& bvv = node(b).value;
    Tensor& ga = ensureGrad(a);
    Tensor& gb = ensureGrad(b);
    mmNT(g.data(), bvv.data(), ga.data(), m, n, k);  // dA = G * B^T
    mmTN(avv.data(), g.data(), gb.data(), k, m, n);  // dB = A^T * G
    node(a).touched = true;
    node(b).touched = true;
  });
}

VarId Tape::softmax(VarId a, int axis) {
  const Tensor& av = value(a);
  if (av.rank() > 2) throw DimensionError("softmax supports rank-1/2 tensors");
  const int rows = av.rows();
  const int cols = av.cols();
  int ax = axis;
  if (ax < 0) ax += av.rank();
  if (ax < 0 || ax >= av.rank()) throw DimensionError("softmax axis out of range");
  const bool overCols = (av.rank() == 1) || (ax == 1);

  Tensor out = av;
  auto softmaxStrided = [](const Real* x, Real* y, int n, int stride) {
    Real mx = x[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, x[static_cast<size_t>(i) * stride]);
    Real sum = 0;
    for (int i = 0; i < n; ++i) {
      const Real e = std::exp(x[static_cast<size_t>(i) * stride] - mx);
      y[static_cast<size_t>(i) * stride] = e;
      sum += e;
    }
    const Real inv = Real(1) / sum;
    for (int i = 0; i < n; ++i) y[static_cast<size_t>(i) * stride] *= inv;
  };
  if (overCols) {
    for (int r = 0; r < rows; ++r) {
      softmaxStrided(av.data() + static_cast<size_t>(r) * cols, out.data() + static_cast<size_t>(r) * cols, cols, 1);
    }
  } else {
    for (int c = 0; c < cols; ++c) softmaxStrided(av.data() + c, out.data() + c, rows, cols);
  }
  return push(std::move(out), [this, a, rows, cols, overCols, out = VarId(nodes_.size())]() {
    const Tensor& g = node(out).grad;
    const Tensor& y = node(out).value;
    Tensor& ga = ensureGrad(a);
    auto backStrided = [](const Real* gp, const Real* yp, Real* gap, int n, int stride) {
      Real dot = 0;
      for (int i = 0; i < n; ++i) dot += gp[static_cast<size_t>(i) * stride] * yp[static_cast<size_t>(i) * stride];
      for (int i = 0; i < n; ++i) {
        const size_t o = static_cast<size_t>(i) * stride;
        gap[o] += yp[o] * (gp[o] - dot);
      }
    };
    if (overCols) {
      for (int r = 0; r < rows; ++r) {
        const size_t off = static_cast<size_t>(r) * cols;
        backStrided(g.data() + off, y.data() + off, ga.data() + off, cols, 1);
      }
    } else {
      for (int c = 0; c < cols; ++c) backStrided(g.data() + c, y.data() + c, ga.data() + c, rows, cols);
    }
    node(a).touched = true;
  });
}

VarId Tape::layerNorm(VarId x, VarId gamma, VarId beta, Real eps) {
  const Tensor& xv = value(x);
  const Tensor& gv = value(gamma);
  const Tensor& bv = value(beta);
  const int rows = xv.rows();
  const int cols = xv.cols();
  if (gv.size() != cols || bv.size() != cols) {
    throw DimensionError("layerNorm gamma/beta must match feature dimension " + std::to_string(cols));
  }
  Tensor out({rows, cols});
  for (int r = 0; r < rows; ++r) {
    const Real* xr = xv.data() + static_cast<size_t>(r) * cols;
    Real* o = out.data() + static_cast<size_t>(r) * cols;
    Real mean = 0;
    for (int c = 0; c < cols; ++c) mean += xr[c];
    mean /= cols;
    Real var = 0;
    for (int c = 0; c < cols; ++c) {
      const Real d = xr[c] - mean;
      var += d * d;
    }
    var /= cols;
    const Real inv = Real(1) / std::sqrt(var + eps);
    for (int c = 0; c < cols; ++c) o[c] = (xr[c] - mean) * inv * gv[c] + bv[c];
  }
  return push(std::move(out), [this, x, gamma, beta, rows, cols, eps, out = VarId(nodes_.size())]() {
    const Tensor& g = node(out).grad;
    const Tensor& xv = node(x).value;
    const Tensor& gv = node(gamma).value;
    Tensor& gx = ensureGrad(x);
    Tensor& gg = ensureGrad(gamma);
    Tensor& gb = ensureGrad(beta);
    std::vector<Real> xhat(static_cast<size_t>(cols));
    std::vector<Real> dxhat(static_cast<size_t>(cols));
    for (int r = 0; r < rows; ++r) {
      const Real* xr = xv.data() + static_cast<size_t>(r) * cols;
      const Real* gr = g.data() + static_cast<size_t>(r) * cols;
      Real* gxr = gx.data() + static_cast<size_t>(r) * cols;
      Real mean = 0;
      for (int c = 0; c < cols; ++c) mean += xr[c];
      mean /= cols;
      Real var = 0;
      for (int c = 0; c < cols; ++c) {
        const Real d = xr[c] - mean;
        var += d * d;
      }
      var /= cols;
      const Real inv = Real(1) / std::sqrt(var + eps);
      Real meanDxhat = 0, meanDxhatXhat = 0;
      for (int c = 0; c < cols; ++c) {
        xhat[static_cast<size_t>(c)] = (xr[c] - mean) * inv;
        dxhat[static_cast<size_t>(c)] = gr[c] * gv[c];
        meanDxhat += dxhat[static_cast<size_t>(c)];
        meanDxhatXhat += dxhat[static_cast<size_t>(c)] * xhat[static_cast<size_t>(c)];
        gg[c] += gr[c] * xhat[static_cast<size_t>(c)];
        gb[c] += gr[c];
      }
      meanDxhat /= cols;
      meanDxhatXhat /= cols;
      for (int c = 0; c < cols; ++c) {
        gxr[c] += inv * (dxhat[static_cast<size_t>(c)] - meanDxhat - xhat[static_cast<size_t>(c)] * meanDxhatXhat);
      }
    }
    node(x).touched = true;
    node(gamma).touched = true;
    node(beta).touched = true;
  });
}

VarId Tape::gelu(VarId a) {
  const Tensor& av = value(a);
  Tensor out = av;
  constexpr Real invSqrt2 = Real(0.7071067811865475);
  for (int64_t i = 0; i < out.size(); ++i) {
    const Real x = av[i];
    out[i] = Real(0.5) * x * (Real(1) + std::erf(x * invSqrt2));
  }
  return push(std::move(out), [this, a, out = VarId(nodes_.size())]() {
    const Tensor& g = node(out).grad;
    const Tensor& xv = node(a).value;
    Tensor& ga = ensureGrad(a);
    constexpr Real invSqrt2 = Real(0.7071067811865475);
    const Real invSqrt2Pi = Real(1) / kSqrt2Pi;
    for (int64_t i = 0; i < g.size(); ++i) {
      const Real x = xv[i];
      const Real cdf = Real(0.5) * (Real(1) + std::erf(x * invSqrt2));
      const Real pdf = std::exp(Real(-0.5) * x * x) * invSqrt2Pi;
      ga[i] += g[i] * (cdf + x * pdf);
    }
    node(a).touched = true;
  });
}

VarId Tape::sigmoid(VarId a) {
  const Tensor& av = value(a);
  Tensor out = av;
  for (int64_t i = 0; i < out.size(); ++i) out[i] = sigmoidScalar(av[i]);
  return push(std::move(out), [this, a, out = VarId(nodes_.size())]() {
    const Tensor& g = node(out).grad;
    const Tensor& y = node(out).value;
    Tensor& ga = ensureGrad(a);
    for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (Real(1) - y[i]);
    node(a).touched = true;
  });
}

VarId Tape::negLogSigmoid(VarId a) {
  const Tensor& av = value(a);
  Tensor out = av;
  for (int64_t i = 0; i < out.size(); ++i) out[i] = softplusScalar(-av[i]);
  return push(std::move(out), [this, a, out = VarId(nodes_.size())]() {
    const Tensor& g = node(out).grad;
    const Tensor& xv = node(a).value;
    Tensor& ga = ensureGrad(a);
    for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (sigmoidScalar(xv[i]) - Real(1));
    node(a).touched = true;
  });
}

VarId Tape::sumAll(VarId a) {
  const Tensor& av = value(a);
  Real s = 0;
  for (int64_t i = 0; i < av.size(); ++i) s += av[i];
  return push(Tensor::scalar(s), [this, a, out = VarId(nodes_.size())]() {
    const Real g = node(out).grad[0];
    Tensor& ga = ensureGrad(a);
    for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
    node(a).touched = true;
  });
}

VarId Tape::meanAll(VarId a) {
  const int64_t n = value(a).size();
  return scale(sumAll(a), Real(1) / static_cast<Real>(n));
}

VarId Tape::sumRows(VarId a) {
  const Tensor& av = value(a);
  const int rows = av.rows();
  const int cols = av.cols();
  Tensor out({1, cols});
  for (int r = 0; r < rows; ++r) {
    const Real* src = av.data() + static_cast<size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) out[c] += src[c];
  }
  return push(std::move(out), [this, a, rows, cols, out = VarId(nodes_.size())]() {
    const Tensor& g = node(out).grad;
    Tensor& ga = ensureGrad(a);
    for (int r = 0; r < rows; ++r) {
      Real* dst = ga.data() + static_cast<size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) dst[c] += g[c];
    }
    node(a).touched = true;
  });
}

VarId Tape::sliceLogProbSum(VarId logits, std::vector<LogProbSpec> specs) {
  const Tensor& lv = value(logits);
  const int rows = lv.rows();
  const int cols = lv.cols();
  for (const auto& s : specs) {
    if (s.row < 0 || s.row >= rows) throw IndexError("sliceLogProbSum row out of range");
    if (s.sliceBegin < 0 || s.sliceLen <= 0 || s.sliceBegin + s.sliceLen > cols) {
      throw IndexError("sliceLogProbSum slice out of range");
    }
    if (s.targetInSlice < 0 || s.targetInSlice >= s.sliceLen) {
      throw IndexError("sliceLogProbSum target " + std::to_string(s.targetInSlice) +
                       " outside slice of length " + std::to_string(s.sliceLen));
    }
  }
  Real total = 0;
  for (const auto& s : specs) {
    const Real* x = lv.data() + static_cast<size_t>(s.row) * cols + s.sliceBegin;
    Real mx = x[0];
    for (int j = 1; j < s.sliceLen; ++j) mx = std::max(mx, x[j]);
    Real sum = 0;
    for (int j = 0; j < s.sliceLen; ++j) sum += std::exp(x[j] - mx);
    const Real lse = mx + std::log(sum);
    total += s.weight * (x[s.targetInSlice] - lse);
  }
  return push(Tensor::scalar(total), [this, logits, specs = std::move(specs), cols, out = VarId(nodes_.size())]() {
    const Real g = node(out).grad[0];
    const Tensor& lv = node(logits).value;
    Tensor& gl = ensureGrad(logits);
    for (const auto& s : specs) {
      const Real* x = lv.data() + static_cast<size_t>(s.row) * cols + s.sliceBegin;
      Real* gx = gl.data() + static_cast<size_t>(s.row) * cols + s.sliceBegin;
      Real mx = x[0];
      for (int j = 1; j < s.sliceLen; ++j) mx = std::max(mx, x[j]);
      Real sum = 0;
      for (int j = 0; j < s.sliceLen; ++j) sum += std::exp(x[j] - mx);
      const Real inv = Real(1) / sum;
      const Real gw = g * s.weight;
      for (int j = 0; j < s.sliceLen; ++j) {
        const Real p = std::exp(x[j] - mx) * inv;
        gx[j] += gw * ((j == s.targetInSlice ? Real(1) : Real(0)) - p);
      }
    }
    node(logits).touched = true;
  });
}

VarId Tape::crossEntropyFromLogits(VarId logits, std::span<const int> targets,
                                   std::span<const uint8_t> mask) {
  const Tensor& lv = value(logits);
  const int rows = lv.rows();
  const int cols = lv.cols();
  if (static_cast<int>(targets.size()) != rows) {
    throw DimensionError("crossEntropyFromLogits: targets size must equal row count");
  }
  if (!mask.empty() && static_cast<int>(mask.size()) != rows) {
    throw DimensionError("crossEntropyFromLogits: mask size must equal row count");
  }
  std::vector<LogProbSpec> specs;
  for (int r = 0; r < rows; ++r) {
    if (!mask.empty() && !mask[static_cast<size_t>(r)]) continue;
    const int t = targets[static_cast<size_t>(r)];
    if (t < 0 || t >= cols) {
      throw IndexError("crossEntropyFromLogits: target " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(cols));
    }
    specs.push_back({r, 0, cols, t, Real(1)});
  }
  if (specs.empty()) throw ContractError("crossEntropyFromLogits: no unmasked positions");
  const Real invCount = Real(1) / static_cast<Real>(specs.size());
  return scale(sliceLogProbSum(logits, std::move(specs)), -invCount);
}

VarId Tape::bceWithLogitsSum(VarId logits, std::vector<Real> labels) {
  const Tensor& lv = value(logits);
  if (static_cast<int64_t>(labels.size()) != lv.size()) {
    throw DimensionError("bceWithLogitsSum: labels size must match logits");
  }
  Real total = 0;
  for (int64_t i = 0; i < lv.size(); ++i) {
    const Real z = lv[i];
    const Real y = labels[static_cast<size_t>(i)];
    total += std::max(z, Real(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  return push(Tensor::scalar(total), [this, logits, labels = std::move(labels), out = VarId(nodes_.size())]() {
    const Real g = node(out).grad[0];
    const Tensor& lv = node(logits).value;
    Tensor& gl = ensureGrad(logits);
    for (int64_t i = 0; i < lv.size(); ++i) {
      gl[i] += g * (sigmoidScalar(lv[i]) - labels[static_cast<size_t>(i)]);
    }
    node(logits).touched = true;
  });
}

void Tape::backward(VarId loss) {
  if (!gradEnabled_) throw ContractError("backward on a gradient-disabled tape");
  if (backwardDone_) throw ContractError("backward already run on this tape");
  backwardDone_ = true;
  Node& lossNode = node(loss);
  if (!lossNode.value.isScalar()) {
    throw ContractError("backward requires a scalar loss, got shape " + lossNode.value.shapeStr());
  }
  ensureGrad(loss)[0] = Real(1);
  lossNode.touched = true;
  for (int64_t i = static_cast<int64_t>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.touched && n.backward) n.backward();
  }
  for (auto& [p, id] : bindings_) {
    const Node& n = node(id);
    if (!n.touched) continue;
    for (int64_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
  }
}

}  // namespace onerec

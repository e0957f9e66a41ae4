#include "hppo/grad/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

#include "hppo/errors.hpp"

namespace hppo::grad {
namespace {

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + " expects a 2-D tensor, got " + shape_str(t.shape()));
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// outer x len x inner decomposition of `shape` around `axis`.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  if (axis < 0) axis += static_cast<int>(shape.size());
  if (axis < 0 || axis >= static_cast<int>(shape.size())) {
    throw ShapeError("axis out of range for shape " + shape_str(shape));
  }
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= static_cast<std::size_t>(shape[i]);
  s.len = static_cast<std::size_t>(shape[axis]);
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) {
    s.inner *= static_cast<std::size_t>(shape[i]);
  }
  return s;
}

void check_finite(std::span<const double> xs, const char* op) {
  for (double x : xs) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

}  // namespace

Var Tape::push(Tensor value, bool requires_grad, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw ContractError("variable is not on this tape");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

double* Tape::gbuf(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad.assign(value(Var{id}).size(), 0.0);
  return n.grad.data();
}

Var Tape::constant(Tensor t) { return push(std::move(t), false, nullptr); }

Var Tape::leaf(Tensor t) { return push(std::move(t), true, nullptr); }

Var Tape::param(Tensor& p) {
  Node n;
  n.external = &p;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::value(Var v) const {
  const Node& n = node(v);
  return n.external ? *n.external : n.value;
}

std::vector<double> Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) return std::vector<double>(value(v).size(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (value(loss).size() != 1) {
    throw ContractError("backward() needs a scalar loss, got " + shape_str(value(loss).shape()));
  }
  for (Node& n : nodes_) n.grad.clear();
  if (!needs(loss)) return;
  gbuf(loss.id)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
  for (Node& n : nodes_) {
    if (!n.external || n.grad.empty()) continue;
    std::vector<double>& g = n.external->grad();
    if (g.empty()) g.assign(n.grad.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  }
}

// ---------------------------------------------------------------------------
// matmul

Var Tape::matmul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require_rank2(A, "matmul");
  require_rank2(B, "matmul");
  const int m = A.dim(0), k = A.dim(1), n = B.dim(1);
  if (B.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(A.shape()) + " x " +
                     shape_str(B.shape()));
  }
  Tensor C({m, n});
  const double* pa = A.data().data();
  const double* pb = B.data().data();
  double* pc = C.data().data();
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double aip = pa[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = pb + static_cast<std::size_t>(p) * n;
      double* crow = pc + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return push(std::move(C), needs(a) || needs(b), [a, b, m, k, n](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    const double* pa = t.value(a).data().data();
    const double* pb = t.value(b).data().data();
    if (double* ga = t.gbuf(a.id)) {
      for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
          double s = 0.0;
          for (int j = 0; j < n; ++j) s += g[static_cast<std::size_t>(i) * n + j] * pb[p * n + j];
          ga[i * k + p] += s;
        }
      }
    }
    if (double* gb = t.gbuf(b.id)) {
      for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
          const double aip = pa[i * k + p];
          if (aip == 0.0) continue;
          for (int j = 0; j < n; ++j) gb[p * n + j] += aip * g[static_cast<std::size_t>(i) * n + j];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// elementwise

Var Tape::add(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require_same(A, B, "add");
  Tensor C = A;
  C.clear_grad();
  for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
  return push(std::move(C), needs(a) || needs(b), [a, b](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    for (Var v : {a, b}) {
      if (double* gv = t.gbuf(v.id)) {
        for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
      }
    }
  });
}

Var Tape::sub(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require_same(A, B, "sub");
  Tensor C = A;
  C.clear_grad();
  for (std::size_t i = 0; i < C.size(); ++i) C[i] -= B[i];
  return push(std::move(C), needs(a) || needs(b), [a, b](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    if (double* ga = t.gbuf(a.id)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (double* gb = t.gbuf(b.id)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require_same(A, B, "mul");
  Tensor C = A;
  C.clear_grad();
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[i];
  return push(std::move(C), needs(a) || needs(b), [a, b](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    if (double* ga = t.gbuf(a.id)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
    }
    if (double* gb = t.gbuf(b.id)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
    }
  });
}

Var Tape::add_row(Var a, Var row) {
  const Tensor& A = value(a);
  const Tensor& R = value(row);
  require_rank2(A, "add_row");
  const int m = A.dim(0), n = A.dim(1);
  if (static_cast<int>(R.size()) != n) {
    throw ShapeError("add_row: row " + shape_str(R.shape()) + " does not broadcast over " +
                     shape_str(A.shape()));
  }
  Tensor C = A;
  C.clear_grad();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) C.at(i, j) += R[static_cast<std::size_t>(j)];
  }
  return push(std::move(C), needs(a) || needs(row), [a, row, m, n](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    if (double* ga = t.gbuf(a.id)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (double* gr = t.gbuf(row.id)) {
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) gr[j] += g[static_cast<std::size_t>(i) * n + j];
      }
    }
  });
}

Var Tape::mul_row(Var a, Var row) {
  const Tensor& A = value(a);
  const Tensor& R = value(row);
  require_rank2(A, "mul_row");
  const int m = A.dim(0), n = A.dim(1);
  if (static_cast<int>(R.size()) != n) {
    throw ShapeError("mul_row: row " + shape_str(R.shape()) + " does not broadcast over " +
                     shape_str(A.shape()));
  }
  Tensor C = A;
  C.clear_grad();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) C.at(i, j) *= R[static_cast<std::size_t>(j)];
  }
  return push(std::move(C), needs(a) || needs(row), [a, row, m, n](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    const Tensor& A = t.value(a);
    const Tensor& R = t.value(row);
    if (double* ga = t.gbuf(a.id)) {
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          ga[i * n + j] += g[static_cast<std::size_t>(i) * n + j] * R[static_cast<std::size_t>(j)];
        }
      }
    }
    if (double* gr = t.gbuf(row.id)) {
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) gr[j] += g[static_cast<std::size_t>(i) * n + j] * A.at(i, j);
      }
    }
  });
}

Var Tape::scale(Var a, double s) {
  Tensor C = value(a);
  C.clear_grad();
  for (double& x : C.data()) x *= s;
  return push(std::move(C), needs(a), [a, s](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    if (double* ga = t.gbuf(a.id)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    }
  });
}

Var Tape::add_scalar(Var a, double s) {
  Tensor C = value(a);
  C.clear_grad();
  for (double& x : C.data()) x += s;
  return push(std::move(C), needs(a), [a](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    if (double* ga = t.gbuf(a.id)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
  });
}

Var Tape::relu(Var a) {
  Tensor C = value(a);
  C.clear_grad();
  for (double& x : C.data()) {
    note_branch(x > 0.0);
    x = x > 0.0 ? x : 0.0;
  }
  return push(std::move(C), needs(a), [a](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    const Tensor& A = t.value(a);
    if (double* ga = t.gbuf(a.id)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (A[i] > 0.0) ga[i] += g[i];
      }
    }
  });
}

Var Tape::tanh(Var a) {
  Tensor C = value(a);
  C.clear_grad();
  for (double& x : C.data()) x = std::tanh(x);
  return push(std::move(C), needs(a), [a](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    const Tensor& Y = t.value(Var{self});
    if (double* ga = t.gbuf(a.id)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - Y[i] * Y[i]);
    }
  });
}

Var Tape::exp(Var a) {
  Tensor C = value(a);
  C.clear_grad();
  for (double& x : C.data()) x = std::exp(x);
  return push(std::move(C), needs(a), [a](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    const Tensor& Y = t.value(Var{self});
    if (double* ga = t.gbuf(a.id)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * Y[i];
    }
  });
}

Var Tape::log(Var a) {
  Tensor C = value(a);
  C.clear_grad();
  for (double& x : C.data()) {
    if (!(x > 0.0)) throw NumericError("log of non-positive value");
    x = std::log(x);
  }
  return push(std::move(C), needs(a), [a](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    const Tensor& A = t.value(a);
    if (double* ga = t.gbuf(a.id)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / A[i];
    }
  });
}

Var Tape::square(Var a) {
  Tensor C = value(a);
  C.clear_grad();
  for (double& x : C.data()) x = x * x;
  return push(std::move(C), needs(a), [a](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    const Tensor& A = t.value(a);
    if (double* ga = t.gbuf(a.id)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * A[i] * g[i];
    }
  });
}

Var Tape::clamp(Var a, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  Tensor C = value(a);
  C.clear_grad();
  for (double& x : C.data()) {
    note_branch(x < lo);
    note_branch(x > hi);
    x = std::clamp(x, lo, hi);
  }
  return push(std::move(C), needs(a), [a, lo, hi](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    const Tensor& A = t.value(a);
    if (double* ga = t.gbuf(a.id)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (A[i] >= lo && A[i] <= hi) ga[i] += g[i];
      }
    }
  });
}

Var Tape::minimum(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require_same(A, B, "minimum");
  Tensor C = A;
  C.clear_grad();
  for (std::size_t i = 0; i < C.size(); ++i) {
    note_branch(A[i] <= B[i]);
    C[i] = std::min(A[i], B[i]);
  }
  return push(std::move(C), needs(a) || needs(b), [a, b](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    double* ga = t.gbuf(a.id);
    double* gb = t.gbuf(b.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (A[i] <= B[i]) {
        if (ga) ga[i] += g[i];
      } else if (gb) {
        gb[i] += g[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// reductions

Var Tape::sum(Var a) {
  const Tensor& A = value(a);
  const double s = std::accumulate(A.data().begin(), A.data().end(), 0.0);
  return push(Tensor::scalar(s), needs(a), [a](Tape& t, int self) {
    const double g = t.out_grad(self)[0];
    if (double* ga = t.gbuf(a.id)) {
      const std::size_t n = t.value(a).size();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g;
    }
  });
}

Var Tape::mean(Var a) {
  const std::size_t n = value(a).size();
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var Tape::group_mean_rows(Var a, int rows_per_group, std::span<const std::uint8_t> row_mask) {
  const Tensor& A = value(a);
  require_rank2(A, "group_mean_rows");
  const int rows = A.dim(0), n = A.dim(1);
  if (rows_per_group < 1 || rows % rows_per_group != 0) {
    throw ShapeError("group_mean_rows: " + std::to_string(rows) + " rows not divisible into groups of " +
                     std::to_string(rows_per_group));
  }
  if (!row_mask.empty() && static_cast<int>(row_mask.size()) != rows) {
    throw ShapeError("group_mean_rows: mask length differs from row count");
  }
  const int groups = rows / rows_per_group;
  std::vector<double> weight(static_cast<std::size_t>(rows), 0.0);
  for (int gi = 0; gi < groups; ++gi) {
    int valid = 0;
    for (int r = 0; r < rows_per_group; ++r) {
      const int row = gi * rows_per_group + r;
      if (row_mask.empty() || row_mask[static_cast<std::size_t>(row)]) ++valid;
    }
    for (int r = 0; r < rows_per_group && valid > 0; ++r) {
      const int row = gi * rows_per_group + r;
      if (row_mask.empty() || row_mask[static_cast<std::size_t>(row)]) {
        weight[static_cast<std::size_t>(row)] = 1.0 / valid;
      }
    }
  }
  Tensor C({groups, n});
  for (int row = 0; row < rows; ++row) {
    const double w = weight[static_cast<std::size_t>(row)];
    if (w == 0.0) continue;
    for (int j = 0; j < n; ++j) C.at(row / rows_per_group, j) += w * A.at(row, j);
  }
  return push(std::move(C), needs(a),
              [a, rows, n, rows_per_group, weight = std::move(weight)](Tape& t, int self) {
                const std::vector<double>& g = t.out_grad(self);
                if (double* ga = t.gbuf(a.id)) {
                  for (int row = 0; row < rows; ++row) {
                    const double w = weight[static_cast<std::size_t>(row)];
                    if (w == 0.0) continue;
                    const std::size_t go = static_cast<std::size_t>(row / rows_per_group) * n;
                    for (int j = 0; j < n; ++j) ga[static_cast<std::size_t>(row) * n + j] += w * g[go + j];
                  }
                }
              });
}

// ---------------------------------------------------------------------------
// normalization

Var Tape::softmax(Var a, int axis) {
  const Tensor& A = value(a);
  check_finite(A.values(), "softmax");
  const AxisSplit s = split_axis(A.shape(), axis);
  Tensor Y = A;
  Y.clear_grad();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, Y[base + l * s.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        double& y = Y[base + l * s.inner];
        y = std::exp(y - mx);
        z += y;
      }
      for (std::size_t l = 0; l < s.len; ++l) Y[base + l * s.inner] /= z;
    }
  }
  return push(std::move(Y), needs(a), [a, s](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    const Tensor& Y = t.value(Var{self});
    double* ga = t.gbuf(a.id);
    if (!ga) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double dot = 0.0;
        for (std::size_t l = 0; l < s.len; ++l) dot += g[base + l * s.inner] * Y[base + l * s.inner];
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t i = base + l * s.inner;
          ga[i] += Y[i] * (g[i] - dot);
        }
      }
    }
  });
}

Var Tape::log_softmax(Var a, int axis) {
  const Tensor& A = value(a);
  check_finite(A.values(), "log_softmax");
  const AxisSplit s = split_axis(A.shape(), axis);
  Tensor Y = A;
  Y.clear_grad();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, Y[base + l * s.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) z += std::exp(Y[base + l * s.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t l = 0; l < s.len; ++l) Y[base + l * s.inner] -= lse;
    }
  }
  return push(std::move(Y), needs(a), [a, s](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    const Tensor& Y = t.value(Var{self});
    double* ga = t.gbuf(a.id);
    if (!ga) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double gsum = 0.0;
        for (std::size_t l = 0; l < s.len; ++l) gsum += g[base + l * s.inner];
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t i = base + l * s.inner;
          ga[i] += g[i] - std::exp(Y[i]) * gsum;
        }
      }
    }
  });
}

Var Tape::layer_norm_rows(Var a, double eps) {
  const Tensor& A = value(a);
  require_rank2(A, "layer_norm_rows");
  const int m = A.dim(0), n = A.dim(1);
  Tensor Y({m, n});
  std::vector<double> inv_std(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += A.at(i, j);
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (A.at(i, j) - mu) * (A.at(i, j) - mu);
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = is;
    for (int j = 0; j < n; ++j) Y.at(i, j) = (A.at(i, j) - mu) * is;
  }
  return push(std::move(Y), needs(a), [a, m, n, inv_std = std::move(inv_std)](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    const Tensor& Y = t.value(Var{self});
    double* ga = t.gbuf(a.id);
    if (!ga) return;
    for (int i = 0; i < m; ++i) {
      double gmean = 0.0, gymean = 0.0;
      for (int j = 0; j < n; ++j) {
        const double gij = g[static_cast<std::size_t>(i) * n + j];
        gmean += gij;
        gymean += gij * Y.at(i, j);
      }
      gmean /= n;
      gymean /= n;
      for (int j = 0; j < n; ++j) {
        const double gij = g[static_cast<std::size_t>(i) * n + j];
        ga[i * n + j] += inv_std[static_cast<std::size_t>(i)] * (gij - gmean - Y.at(i, j) * gymean);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// shape manipulation

Var Tape::transpose(Var a) {
  const Tensor& A = value(a);
  require_rank2(A, "transpose");
  const int m = A.dim(0), n = A.dim(1);
  Tensor C({n, m});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) C.at(j, i) = A.at(i, j);
  }
  return push(std::move(C), needs(a), [a, m, n](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    if (double* ga = t.gbuf(a.id)) {
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) ga[i * n + j] += g[static_cast<std::size_t>(j) * m + i];
      }
    }
  });
}

Var Tape::reshape(Var a, Shape shape) {
  Tensor C = value(a).reshaped(std::move(shape));
  return push(std::move(C), needs(a), [a](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    if (double* ga = t.gbuf(a.id)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
  });
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const int m = value(parts[0]).rank() == 2 ? value(parts[0]).dim(0) : 0;
  std::vector<Var> vars(parts.begin(), parts.end());
  std::vector<int> widths;
  int total = 0;
  bool any = false;
  for (Var v : vars) {
    const Tensor& P = value(v);
    require_rank2(P, "concat_cols");
    if (P.dim(0) != m) {
      throw ShapeError("concat_cols: row counts differ, " + shape_str(value(parts[0]).shape()) + " vs " +
                       shape_str(P.shape()));
    }
    widths.push_back(P.dim(1));
    total += P.dim(1);
    any = any || needs(v);
  }
  Tensor C({m, total});
  int off = 0;
  for (std::size_t k = 0; k < vars.size(); ++k) {
    const Tensor& P = value(vars[k]);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < widths[k]; ++j) C.at(i, off + j) = P.at(i, j);
    }
    off += widths[k];
  }
  return push(std::move(C), any, [vars, widths, m, total](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    int off = 0;
    for (std::size_t k = 0; k < vars.size(); ++k) {
      if (double* gv = t.gbuf(vars[k].id)) {
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < widths[k]; ++j) {
            gv[i * widths[k] + j] += g[static_cast<std::size_t>(i) * total + off + j];
          }
        }
      }
      off += widths[k];
    }
  });
}

Var Tape::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  std::vector<Var> vars(parts.begin(), parts.end());
  const Tensor& first = value(vars[0]);
  require_rank2(first, "concat_rows");
  const int n = first.dim(1);
  int rows = 0;
  bool any = false;
  for (Var v : vars) {
    const Tensor& P = value(v);
    require_rank2(P, "concat_rows");
    if (P.dim(1) != n) {
      throw ShapeError("concat_rows: column counts differ, " + shape_str(first.shape()) + " vs " +
                       shape_str(P.shape()));
    }
    rows += P.dim(0);
    any = any || needs(v);
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(rows) * n);
  for (Var v : vars) {
    const auto& d = value(v).data();
    out.insert(out.end(), d.begin(), d.end());
  }
  return push(Tensor({rows, n}, std::move(out)), any, [vars](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    std::size_t off = 0;
    for (Var v : vars) {
      const std::size_t len = t.value(v).size();
      if (double* gv = t.gbuf(v.id)) {
        for (std::size_t i = 0; i < len; ++i) gv[i] += g[off + i];
      }
      off += len;
    }
  });
}

Var Tape::slice_cols(Var a, int begin, int end) {
  const Tensor& A = value(a);
  require_rank2(A, "slice_cols");
  const int m = A.dim(0), n = A.dim(1);
  if (begin < 0 || end > n || begin >= end) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + shape_str(A.shape()));
  }
  const int w = end - begin;
  Tensor C({m, w});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < w; ++j) C.at(i, j) = A.at(i, begin + j);
  }
  return push(std::move(C), needs(a), [a, m, n, w, begin](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    if (double* ga = t.gbuf(a.id)) {
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < w; ++j) ga[i * n + begin + j] += g[static_cast<std::size_t>(i) * w + j];
      }
    }
  });
}

Var Tape::gather_cols(Var a, std::span<const int> index) {
  const Tensor& A = value(a);
  require_rank2(A, "gather_cols");
  const int m = A.dim(0), n = A.dim(1);
  if (static_cast<int>(index.size()) != m) throw ShapeError("gather_cols: one index per row required");
  std::vector<int> idx(index.begin(), index.end());
  Tensor C({m, 1});
  for (int i = 0; i < m; ++i) {
    if (idx[static_cast<std::size_t>(i)] < 0 || idx[static_cast<std::size_t>(i)] >= n) {
      throw ShapeError("gather_cols: index out of range");
    }
    C[static_cast<std::size_t>(i)] = A.at(i, idx[static_cast<std::size_t>(i)]);
  }
  return push(std::move(C), needs(a), [a, n, idx = std::move(idx)](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    if (double* ga = t.gbuf(a.id)) {
      for (std::size_t i = 0; i < idx.size(); ++i) ga[i * n + idx[i]] += g[i];
    }
  });
}

// ---------------------------------------------------------------------------
// convolution

Var Tape::conv2d(Var input, Var kernels, int stride, int padding) {
  const Tensor& X = value(input);
  const Tensor& K = value(kernels);
  if (X.rank() != 3 || K.rank() != 4) {
    throw ShapeError("conv2d expects input [c x h x w] and kernels [o x c x kh x kw], got " +
                     shape_str(X.shape()) + " and " + shape_str(K.shape()));
  }
  if (stride < 1 || padding < 0) throw ContractError("conv2d: stride must be >= 1 and padding >= 0");
  const int c = X.dim(0), h = X.dim(1), w = X.dim(2);
  const int o = K.dim(0), kh = K.dim(2), kw = K.dim(3);
  if (K.dim(1) != c) {
    throw ShapeError("conv2d: kernel channels " + shape_str(K.shape()) + " vs input " + shape_str(X.shape()));
  }
  if (kh > h + 2 * padding || kw > w + 2 * padding) {
    throw ShapeError("conv2d: kernel " + shape_str(K.shape()) + " larger than padded input " +
                     shape_str(X.shape()));
  }
  const int oh = (h + 2 * padding - kh) / stride + 1;
  const int ow = (w + 2 * padding - kw) / stride + 1;
  Tensor Y({o, oh, ow});
  const double* px = X.data().data();
  const double* pk = K.data().data();
  double* py = Y.data().data();
  for (int oc = 0; oc < o; ++oc) {
    for (int ic = 0; ic < c; ++ic) {
      const double* kbase = pk + (static_cast<std::size_t>(oc) * c + ic) * kh * kw;
      const double* xbase = px + static_cast<std::size_t>(ic) * h * w;
      for (int r = 0; r < oh; ++r) {
        double* yrow = py + (static_cast<std::size_t>(oc) * oh + r) * ow;
        for (int ki = 0; ki < kh; ++ki) {
          const int ir = r * stride - padding + ki;
          if (ir < 0 || ir >= h) continue;
          const double* xrow = xbase + static_cast<std::size_t>(ir) * w;
          for (int kj = 0; kj < kw; ++kj) {
            const double kv = kbase[ki * kw + kj];
            for (int q = 0; q < ow; ++q) {
              const int ic2 = q * stride - padding + kj;
              if (ic2 < 0 || ic2 >= w) continue;
              yrow[q] += kv * xrow[ic2];
            }
          }
        }
      }
    }
  }
  return push(std::move(Y), needs(input) || needs(kernels),
              [input, kernels, c, h, w, o, kh, kw, oh, ow, stride, padding](Tape& t, int self) {
                const std::vector<double>& g = t.out_grad(self);
                const double* px = t.value(input).data().data();
                const double* pk = t.value(kernels).data().data();
                double* gx = t.gbuf(input.id);
                double* gk = t.gbuf(kernels.id);
                for (int oc = 0; oc < o; ++oc) {
                  for (int ic = 0; ic < c; ++ic) {
                    const std::size_t kofs = (static_cast<std::size_t>(oc) * c + ic) * kh * kw;
                    const std::size_t xofs = static_cast<std::size_t>(ic) * h * w;
                    for (int r = 0; r < oh; ++r) {
                      const double* grow = g.data() + (static_cast<std::size_t>(oc) * oh + r) * ow;
                      for (int ki = 0; ki < kh; ++ki) {
                        const int ir = r * stride - padding + ki;
                        if (ir < 0 || ir >= h) continue;
                        const std::size_t xrow = xofs + static_cast<std::size_t>(ir) * w;
                        for (int kj = 0; kj < kw; ++kj) {
                          const double kv = pk[kofs + ki * kw + kj];
                          double acc = 0.0;
                          for (int q = 0; q < ow; ++q) {
                            const int icol = q * stride - padding + kj;
                            if (icol < 0 || icol >= w) continue;
                            acc += grow[q] * px[xrow + icol];
                            if (gx) gx[xrow + icol] += grow[q] * kv;
                          }
                          if (gk) gk[kofs + ki * kw + kj] += acc;
                        }
                      }
                    }
                  }
                }
              });
}

Var Tape::add_channel_bias(Var a, Var bias) {
  const Tensor& A = value(a);
  const Tensor& B = value(bias);
  if (A.rank() != 3 || static_cast<int>(B.size()) != A.dim(0)) {
    throw ShapeError("add_channel_bias: bias " + shape_str(B.shape()) + " vs feature map " +
                     shape_str(A.shape()));
  }
  const int o = A.dim(0);
  const std::size_t plane = static_cast<std::size_t>(A.dim(1)) * A.dim(2);
  Tensor C = A;
  C.clear_grad();
  for (int ch = 0; ch < o; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) C[ch * plane + i] += B[static_cast<std::size_t>(ch)];
  }
  return push(std::move(C), needs(a) || needs(bias), [a, bias, o, plane](Tape& t, int self) {
    const std::vector<double>& g = t.out_grad(self);
    if (double* ga = t.gbuf(a.id)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (double* gb = t.gbuf(bias.id)) {
      for (int ch = 0; ch < o; ++ch) {
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += g[ch * plane + i];
        gb[ch] += s;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// attention

Var Tape::attention(Var q, Var k, Var v, int heads, int groups, std::span<const std::uint8_t> key_mask) {
  const Tensor& Q = value(q);
  const Tensor& K = value(k);
  const Tensor& V = value(v);
  require_rank2(Q, "attention");
  require_rank2(K, "attention");
  require_rank2(V, "attention");
  if (K.dim(0) != V.dim(0)) {
    throw ShapeError("attention: key/value lengths differ, K " + shape_str(K.shape()) + " vs V " +
                     shape_str(V.shape()));
  }
  if (Q.dim(1) != K.dim(1)) {
    throw ShapeError("attention: query/key widths differ, Q " + shape_str(Q.shape()) + " vs K " +
                     shape_str(K.shape()));
  }
  if (heads < 1 || groups < 1 || Q.dim(1) % heads != 0 || V.dim(1) % heads != 0 ||
      Q.dim(0) % groups != 0 || K.dim(0) % groups != 0) {
    throw ShapeError("attention: widths/lengths not divisible by heads/groups");
  }
  if (!key_mask.empty() && static_cast<int>(key_mask.size()) != K.dim(0)) {
    throw ShapeError("attention: key mask length differs from key count");
  }
  const int tq = Q.dim(0) / groups, tk = K.dim(0) / groups;
  const int dk = Q.dim(1) / heads, dv = V.dim(1) / heads;
  const int qw = Q.dim(1), vw = V.dim(1);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<std::uint8_t> mask(key_mask.begin(), key_mask.end());

  // weights[g][h][i][j], flattened
  std::vector<double> P(static_cast<std::size_t>(groups) * heads * tq * tk, 0.0);
  Tensor O({Q.dim(0), vw});
  std::vector<double> row(static_cast<std::size_t>(tk));
  for (int gi = 0; gi < groups; ++gi) {
    for (int hd = 0; hd < heads; ++hd) {
      for (int i = 0; i < tq; ++i) {
        const int qi = gi * tq + i;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < tk; ++j) {
          const int kj = gi * tk + j;
          if (!mask.empty() && !mask[static_cast<std::size_t>(kj)]) {
            row[static_cast<std::size_t>(j)] = -std::numeric_limits<double>::infinity();
            continue;
          }
          double s = 0.0;
          for (int d = 0; d < dk; ++d) s += Q.at(qi, hd * dk + d) * K.at(kj, hd * dk + d);
          s *= inv_sqrt;
          row[static_cast<std::size_t>(j)] = s;
          mx = std::max(mx, s);
        }
        if (!std::isfinite(mx)) continue;  // every key masked
        double z = 0.0;
        for (int j = 0; j < tk; ++j) {
          double& r = row[static_cast<std::size_t>(j)];
          r = std::isfinite(r) ? std::exp(r - mx) : 0.0;
          z += r;
        }
        double* prow = P.data() + ((static_cast<std::size_t>(gi) * heads + hd) * tq + i) * tk;
        for (int j = 0; j < tk; ++j) prow[j] = row[static_cast<std::size_t>(j)] / z;
        for (int j = 0; j < tk; ++j) {
          if (prow[j] == 0.0) continue;
          const int kj = gi * tk + j;
          for (int d = 0; d < dv; ++d) O.at(qi, hd * dv + d) += prow[j] * V.at(kj, hd * dv + d);
        }
      }
    }
  }
  const bool req = needs(q) || needs(k) || needs(v);
  return push(std::move(O), req,
              [q, k, v, heads, groups, tq, tk, dk, dv, qw, vw, inv_sqrt, P = std::move(P)](Tape& t, int self) {
                const std::vector<double>& g = t.out_grad(self);
                const Tensor& Q = t.value(q);
                const Tensor& K = t.value(k);
                const Tensor& V = t.value(v);
                double* gq = t.gbuf(q.id);
                double* gk = t.gbuf(k.id);
                double* gv = t.gbuf(v.id);
                std::vector<double> dP(static_cast<std::size_t>(tk));
                for (int gi = 0; gi < groups; ++gi) {
                  for (int hd = 0; hd < heads; ++hd) {
                    for (int i = 0; i < tq; ++i) {
                      const int qi = gi * tq + i;
                      const double* prow = P.data() + ((static_cast<std::size_t>(gi) * heads + hd) * tq + i) * tk;
                      const double* go = g.data() + static_cast<std::size_t>(qi) * vw + hd * dv;
                      double dot = 0.0;
                      for (int j = 0; j < tk; ++j) {
                        const int kj = gi * tk + j;
                        double s = 0.0;
                        for (int d = 0; d < dv; ++d) s += go[d] * V.at(kj, hd * dv + d);
                        dP[static_cast<std::size_t>(j)] = s;
                        dot += s * prow[j];
                        if (gv && prow[j] != 0.0) {
                          for (int d = 0; d < dv; ++d) gv[static_cast<std::size_t>(kj) * vw + hd * dv + d] += prow[j] * go[d];
                        }
                      }
                      for (int j = 0; j < tk; ++j) {
                        if (prow[j] == 0.0) continue;
                        const int kj = gi * tk + j;
                        const double ds = prow[j] * (dP[static_cast<std::size_t>(j)] - dot) * inv_sqrt;
                        for (int d = 0; d < dk; ++d) {
                          if (gq) gq[static_cast<std::size_t>(qi) * qw + hd * dk + d] += ds * K.at(kj, hd * dk + d);
                          if (gk) gk[static_cast<std::size_t>(kj) * qw + hd * dk + d] += ds * Q.at(qi, hd * dk + d);
                        }
                      }
                    }
                  }
                }
              });
}

}  // namespace hppo::grad

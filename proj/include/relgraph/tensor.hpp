#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "relgraph/errors.hpp"

namespace relgraph {

using Dims = std::vector<std::size_t>;

inline std::string dims_to_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
  os << ']';
  return os.str();
}

inline std::size_t dims_product(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major tensor of 64-bit floats.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Dims dims) : dims_(std::move(dims)), data_(dims_product(dims_), 0.0) { validate_dims(); }

  Tensor(Dims dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
    validate_dims();
    if (dims_product(dims_) != data_.size())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match dims " +
                       dims_to_string(dims_));
  }

  static Tensor zeros(Dims dims) { return Tensor(std::move(dims)); }

  static Tensor filled(Dims dims, double value) {
    Tensor t(std::move(dims));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const {
    if (axis >= dims_.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + dims_to_string(dims_));
    return dims_[axis];
  }
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t i, std::size_t j) {
    assert(rank() == 2 && i < dims_[0] && j < dims_[1]);
    return data_[i * dims_[1] + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    assert(rank() == 2 && i < dims_[0] && j < dims_[1]);
    return data_[i * dims_[1] + j];
  }

  std::span<double> row(std::size_t i) { return std::span<double>(data_).subspan(i * cols(), cols()); }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(data_).subspan(i * cols(), cols());
  }

  Tensor reshaped(Dims dims) const {
    if (dims_product(dims) != data_.size())
      throw ShapeError("cannot reshape " + dims_to_string(dims_) + " to " + dims_to_string(dims));
    return Tensor(std::move(dims), data_);
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  bool same_shape(const Tensor& other) const noexcept { return dims_ == other.dims_; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void validate_dims() const {
    for (auto d : dims_)
      if (d == 0) throw ShapeError("tensor dims must be positive, got " + dims_to_string(dims_));
  }

  Dims dims_;
  std::vector<double> data_;
};

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     dims_to_string(t.dims()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape mismatch " + dims_to_string(a.dims()) + " vs " +
                     dims_to_string(b.dims()));
}

/// Forward value plus the vector-Jacobian product back to the operands.
template <class Cotangents>
struct Adjoint {
  Tensor value;
  std::function<Cotangents(const Tensor&)> pullback;
};

// ---------------------------------------------------------------------------
// Products

/// a·b for a [m×k], b [k×n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dims differ, lhs " + dims_to_string(a.dims()) + " has " +
                     std::to_string(a.cols()) + " columns but rhs " + dims_to_string(b.dims()) + " has " +
                     std::to_string(b.rows()) + " rows");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    auto crow = c.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      auto brow = b.row(p);
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

/// aᵀ·b for a [k×m], b [k×n].
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_tn lhs");
  require_rank(b, 2, "matmul_tn rhs");
  if (a.rows() != b.rows())
    throw ShapeError("matmul_tn: row counts differ, " + dims_to_string(a.dims()) + " vs " + dims_to_string(b.dims()));
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  Tensor c({m, n});
  for (std::size_t p = 0; p < k; ++p) {
    auto arow = a.row(p);
    auto brow = b.row(p);
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      auto crow = c.row(i);
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

/// a·bᵀ for a [m×k], b [n×k].
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt lhs");
  require_rank(b, 2, "matmul_nt rhs");
  if (a.cols() != b.cols())
    throw ShapeError("matmul_nt: column counts differ, " + dims_to_string(a.dims()) + " vs " + dims_to_string(b.dims()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    auto arow = a.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      auto brow = b.row(j);
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c(i, j) = acc;
    }
  }
  return c;
}

inline Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  Tensor t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// ---------------------------------------------------------------------------
// Elementwise

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.data()) v = sigmoid(v);
  return y;
}

/// ReLU; the derivative at exactly zero is taken as zero.
inline Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

inline Tensor scale(const Tensor& x, double alpha) {
  Tensor y = x;
  for (auto& v : y.data()) v *= alpha;
  return y;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
  return y;
}

inline Tensor subtract(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "subtract");
  Tensor y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b[i];
  return y;
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b[i];
  return y;
}

/// y += alpha·x
inline void axpy(double alpha, const Tensor& x, Tensor& y) {
  require_same_shape(x, y, "axpy");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

// ---------------------------------------------------------------------------
// Row-wise reductions

/// Per-row exp-normalisation with max subtraction.
inline Tensor row_softmax(const Tensor& x) {
  require_rank(x, 2, "row_softmax");
  Tensor y = x;
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto r = y.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double sum = 0.0;
    for (auto& v : r) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : r) v /= sum;
  }
  return y;
}

/// z_i = mean over the columns of row i.
inline Tensor channel_mean(const Tensor& x) {
  require_rank(x, 2, "channel_mean");
  Tensor z({x.rows()});
  const double inv = 1.0 / static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (double v : x.row(i)) s += v;
    z[i] = s * inv;
  }
  return z;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Stack two matrices with equal column counts.
inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "concat_rows lhs");
  require_rank(b, 2, "concat_rows rhs");
  if (a.cols() != b.cols())
    throw ShapeError("concat_rows: column counts differ, " + dims_to_string(a.dims()) + " vs " + dims_to_string(b.dims()));
  std::vector<double> data(a.values());
  data.insert(data.end(), b.values().begin(), b.values().end());
  return Tensor({a.rows() + b.rows(), a.cols()}, std::move(data));
}

/// Inverse of concat_rows: first `top_rows` rows and the remainder.
inline std::pair<Tensor, Tensor> split_rows(const Tensor& x, std::size_t top_rows) {
  require_rank(x, 2, "split_rows");
  if (top_rows == 0 || top_rows >= x.rows())
    throw ShapeError("split_rows: cannot split " + dims_to_string(x.dims()) + " at row " + std::to_string(top_rows));
  const auto mid = x.values().begin() + static_cast<std::ptrdiff_t>(top_rows * x.cols());
  return {Tensor({top_rows, x.cols()}, std::vector<double>(x.values().begin(), mid)),
          Tensor({x.rows() - top_rows, x.cols()}, std::vector<double>(mid, x.values().end()))};
}

inline double max_abs(const Tensor& x) {
  double m = 0.0;
  for (double v : x.data()) m = std::max(m, std::abs(v));
  return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Adjoint-carrying forms

namespace ad {

using Pair = std::pair<Tensor, Tensor>;

inline Adjoint<Pair> matmul(const Tensor& a, const Tensor& b) {
  return {relgraph::matmul(a, b),
          [a, b](const Tensor& dc) -> Pair { return {matmul_nt(dc, b), matmul_tn(a, dc)}; }};
}

inline Adjoint<Tensor> sigmoid(const Tensor& x) {
  Tensor y = relgraph::sigmoid(x);
  return {y, [y](const Tensor& dy) {
            require_same_shape(dy, y, "sigmoid pullback");
            Tensor dx = dy;
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= y[i] * (1.0 - y[i]);
            return dx;
          }};
}

inline Adjoint<Tensor> relu(const Tensor& x) {
  return {relgraph::relu(x), [x](const Tensor& dy) {
            require_same_shape(dy, x, "relu pullback");
            Tensor dx = dy;
            for (std::size_t i = 0; i < dx.size(); ++i)
              if (!(x[i] > 0.0)) dx[i] = 0.0;
            return dx;
          }};
}

inline Adjoint<Tensor> row_softmax(const Tensor& x) {
  Tensor y = relgraph::row_softmax(x);
  return {y, [y](const Tensor& dy) {
            require_same_shape(dy, y, "row_softmax pullback");
            Tensor dx(y.dims());
            for (std::size_t i = 0; i < y.rows(); ++i) {
              const double inner = dot(dy.row(i), y.row(i));
              for (std::size_t j = 0; j < y.cols(); ++j) dx(i, j) = y(i, j) * (dy(i, j) - inner);
            }
            return dx;
          }};
}

inline Adjoint<Tensor> channel_mean(const Tensor& x) {
  return {relgraph::channel_mean(x), [dims = x.dims()](const Tensor& dz) {
            Tensor dx(dims);
            const double inv = 1.0 / static_cast<double>(dims[1]);
            for (std::size_t i = 0; i < dims[0]; ++i)
              for (std::size_t j = 0; j < dims[1]; ++j) dx(i, j) = dz[i] * inv;
            return dx;
          }};
}

inline Adjoint<Tensor> reshape(const Tensor& x, Dims dims) {
  return {x.reshaped(std::move(dims)), [orig = x.dims()](const Tensor& dy) { return dy.reshaped(orig); }};
}

inline Adjoint<Tensor> scale(const Tensor& x, double alpha) {
  return {relgraph::scale(x, alpha), [alpha](const Tensor& dy) { return relgraph::scale(dy, alpha); }};
}

inline Adjoint<Pair> add(const Tensor& a, const Tensor& b) {
  return {relgraph::add(a, b), [](const Tensor& dy) -> Pair { return {dy, dy}; }};
}

inline Adjoint<Pair> concat_rows(const Tensor& a, const Tensor& b) {
  return {relgraph::concat_rows(a, b), [top = a.rows()](const Tensor& dy) { return split_rows(dy, top); }};
}

}  // namespace ad

}  // namespace relgraph

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <type_traits>
#include <utility>
#include <vector>

namespace gist {

using IndexSet = std::vector<std::size_t>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace detail

// Row-major dense matrix. Float for training, double for theory/eigen work.
template <typename T>
class DenseMatrix {
  static_assert(std::is_arithmetic_v<T>);

 public:
  using value_type = T;

  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_{rows}, cols_{cols}, data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_{rows}, cols_{cols}, data_{std::move(data)} {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("DenseMatrix: data length " + std::to_string(data_.size()) +
                           " does not match " + detail::shape_str(rows_, cols_));
    }
  }

  static DenseMatrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    DenseMatrix out(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("DenseMatrix::from_rows: ragged rows");
      std::copy(row.begin(), row.end(), out.row(i++).begin());
    }
    return out;
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix out(n, n);
    for (std::size_t i = 0; i < n; ++i) out(i, i) = T{1};
    return out;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  template <typename U>
  DenseMatrix<U> cast() const {
    DenseMatrix<U> out(rows_, cols_);
    std::transform(data_.begin(), data_.end(), out.values().begin(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

// CSR matrix. Used only for aggregation operators.
template <typename T>
class SparseMatrix {
 public:
  using value_type = T;

  SparseMatrix() : row_ptr_(1, 0) {}
  SparseMatrix(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_ptr,
               std::vector<std::size_t> col_idx, std::vector<T> values)
      : rows_{rows},
        cols_{cols},
        row_ptr_{std::move(row_ptr)},
        col_idx_{std::move(col_idx)},
        values_{std::move(values)} {
    validate();
  }

  // Entries are (row, col, value); duplicates are summed.
  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols,
                                    std::vector<std::tuple<std::size_t, std::size_t, T>> triplets) {
    std::sort(triplets.begin(), triplets.end(), [](const auto& a, const auto& b) {
      return std::get<0>(a) != std::get<0>(b) ? std::get<0>(a) < std::get<0>(b)
                                              : std::get<1>(a) < std::get<1>(b);
    });
    std::vector<std::size_t> row_ptr(rows + 1, 0);
    std::vector<std::size_t> col_idx;
    std::vector<T> values;
    col_idx.reserve(triplets.size());
    values.reserve(triplets.size());
    std::size_t last_r = rows, last_c = cols;
    for (const auto& [r, c, v] : triplets) {
      if (r >= rows || c >= cols) throw DimensionError("SparseMatrix::from_triplets: index out of range");
      if (r == last_r && c == last_c) {
        values.back() += v;
        continue;
      }
      col_idx.push_back(c);
      values.push_back(v);
      ++row_ptr[r + 1];
      last_r = r;
      last_c = c;
    }
    for (std::size_t r = 0; r < rows; ++r) row_ptr[r + 1] += row_ptr[r];
    return SparseMatrix(rows, cols, std::move(row_ptr), std::move(col_idx), std::move(values));
  }

  static SparseMatrix identity(std::size_t n) {
    std::vector<std::size_t> row_ptr(n + 1), col_idx(n);
    for (std::size_t i = 0; i <= n; ++i) row_ptr[i] = i;
    for (std::size_t i = 0; i < n; ++i) col_idx[i] = i;
    return SparseMatrix(n, n, std::move(row_ptr), std::move(col_idx), std::vector<T>(n, T{1}));
  }

  static SparseMatrix from_dense(const DenseMatrix<T>& d) {
    std::vector<std::size_t> row_ptr(d.rows() + 1, 0), col_idx;
    std::vector<T> values;
    for (std::size_t r = 0; r < d.rows(); ++r) {
      for (std::size_t c = 0; c < d.cols(); ++c) {
        if (d(r, c) != T{}) {
          col_idx.push_back(c);
          values.push_back(d(r, c));
        }
      }
      row_ptr[r + 1] = col_idx.size();
    }
    return SparseMatrix(d.rows(), d.cols(), std::move(row_ptr), std::move(col_idx), std::move(values));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t nnz() const noexcept { return col_idx_.size(); }

  std::span<const std::size_t> row_ptr() const noexcept { return row_ptr_; }
  std::span<const std::size_t> col_idx() const noexcept { return col_idx_; }
  std::span<const T> values() const noexcept { return values_; }

  // Value at (r, c), zero when not stored.
  T at(std::size_t r, std::size_t c) const {
    const auto first = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[r]);
    const auto last = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[r + 1]);
    const auto it = std::lower_bound(first, last, c);
    return (it != last && *it == c) ? values_[static_cast<std::size_t>(it - col_idx_.begin())] : T{};
  }

  DenseMatrix<T> to_dense() const {
    DenseMatrix<T> out(rows_, cols_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) out(r, col_idx_[k]) = values_[k];
    return out;
  }

  template <typename U>
  SparseMatrix<U> cast() const {
    std::vector<U> v(values_.size());
    std::transform(values_.begin(), values_.end(), v.begin(), [](T x) { return static_cast<U>(x); });
    return SparseMatrix<U>(rows_, cols_, row_ptr_, col_idx_, std::move(v));
  }

  friend bool operator==(const SparseMatrix&, const SparseMatrix&) = default;

 private:
  void validate() const {
    if (row_ptr_.size() != rows_ + 1) throw DimensionError("SparseMatrix: row_ptr length must be rows+1");
    if (row_ptr_.front() != 0 || row_ptr_.back() != col_idx_.size() || col_idx_.size() != values_.size())
      throw DimensionError("SparseMatrix: row_ptr[rows] must equal nnz");
    for (std::size_t r = 0; r < rows_; ++r) {
      if (row_ptr_[r] > row_ptr_[r + 1]) throw DimensionError("SparseMatrix: row_ptr decreasing");
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
        if (col_idx_[k] >= cols_) throw DimensionError("SparseMatrix: column index out of range");
        if (k > row_ptr_[r] && col_idx_[k] <= col_idx_[k - 1])
          throw DimensionError("SparseMatrix: column indices must be strictly increasing per row");
      }
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_ptr_;
  std::vector<std::size_t> col_idx_;
  std::vector<T> values_;
};

// Transposed CSR copy; keeps column order strictly increasing.
template <typename T>
SparseMatrix<T> transpose(const SparseMatrix<T>& a) {
  std::vector<std::size_t> row_ptr(a.cols() + 1, 0);
  for (auto c : a.col_idx()) ++row_ptr[c + 1];
  for (std::size_t c = 0; c < a.cols(); ++c) row_ptr[c + 1] += row_ptr[c];
  std::vector<std::size_t> col_idx(a.nnz());
  std::vector<T> values(a.nnz());
  std::vector<std::size_t> fill(row_ptr.begin(), row_ptr.end() - 1);
  const auto rp = a.row_ptr();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t k = rp[r]; k < rp[r + 1]; ++k) {
      const std::size_t dst = fill[a.col_idx()[k]]++;
      col_idx[dst] = r;
      values[dst] = a.values()[k];
    }
  }
  return SparseMatrix<T>(a.cols(), a.rows(), std::move(row_ptr), std::move(col_idx), std::move(values));
}

template <typename T>
DenseMatrix<T> transpose(const DenseMatrix<T>& a) {
  DenseMatrix<T> out(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
  return out;
}

// a * b. Zero entries of a are skipped, which makes sparse feature matrices cheap.
template <typename T>
DenseMatrix<T> matmul(const DenseMatrix<T>& a, const DenseMatrix<T>& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: " + detail::shape_str(a.rows(), a.cols()) + " x " +
                         detail::shape_str(b.rows(), b.cols()));
  DenseMatrix<T> out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    const auto src = a.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T v = src[k];
      if (v == T{}) continue;
      const auto brow = b.row(k);
      for (std::size_t j = 0; j < brow.size(); ++j) dst[j] += v * brow[j];
    }
  }
  return out;
}

// aᵀ * b without materialising the transpose.
template <typename T>
DenseMatrix<T> matmul_tn(const DenseMatrix<T>& a, const DenseMatrix<T>& b) {
  if (a.rows() != b.rows())
    throw DimensionError("matmul_tn: " + detail::shape_str(a.rows(), a.cols()) + "^T x " +
                         detail::shape_str(b.rows(), b.cols()));
  DenseMatrix<T> out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const auto arow = a.row(k);
    const auto brow = b.row(k);
    for (std::size_t i = 0; i < arow.size(); ++i) {
      const T v = arow[i];
      if (v == T{}) continue;
      auto dst = out.row(i);
      for (std::size_t j = 0; j < brow.size(); ++j) dst[j] += v * brow[j];
    }
  }
  return out;
}

// a * bᵀ.
template <typename T>
DenseMatrix<T> matmul_nt(const DenseMatrix<T>& a, const DenseMatrix<T>& b) {
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: " + detail::shape_str(a.rows(), a.cols()) + " x " +
                         detail::shape_str(b.rows(), b.cols()) + "^T");
  DenseMatrix<T> out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto brow = b.row(j);
      T acc{};
      for (std::size_t k = 0; k < arow.size(); ++k) acc += arow[k] * brow[k];
      out(i, j) = acc;
    }
  }
  return out;
}

template <typename T>
DenseMatrix<T> spmm(const SparseMatrix<T>& a, const DenseMatrix<T>& b) {
  if (a.cols() != b.rows())
    throw DimensionError("spmm: " + detail::shape_str(a.rows(), a.cols()) + " x " +
                         detail::shape_str(b.rows(), b.cols()));
  DenseMatrix<T> out(a.rows(), b.cols());
  const auto rp = a.row_ptr();
  const auto ci = a.col_idx();
  const auto av = a.values();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto dst = out.row(r);
    for (std::size_t k = rp[r]; k < rp[r + 1]; ++k) {
      const T v = av[k];
      const auto brow = b.row(ci[k]);
      for (std::size_t j = 0; j < brow.size(); ++j) dst[j] += v * brow[j];
    }
  }
  return out;
}

template <typename T>
DenseMatrix<T> slice(const DenseMatrix<T>& a, std::span<const std::size_t> row_idx,
                     std::span<const std::size_t> col_idx) {
  for (auto r : row_idx)
    if (r >= a.rows()) throw DimensionError("slice: row index " + std::to_string(r) + " out of range");
  for (auto c : col_idx)
    if (c >= a.cols()) throw DimensionError("slice: column index " + std::to_string(c) + " out of range");
  DenseMatrix<T> out(row_idx.size(), col_idx.size());
  for (std::size_t i = 0; i < row_idx.size(); ++i) {
    const auto src = a.row(row_idx[i]);
    auto dst = out.row(i);
    for (std::size_t j = 0; j < col_idx.size(); ++j) dst[j] = src[col_idx[j]];
  }
  return out;
}

template <typename T>
DenseMatrix<T> slice_cols(const DenseMatrix<T>& a, std::span<const std::size_t> col_idx) {
  IndexSet rows(a.rows());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return slice(a, rows, col_idx);
}

template <typename T>
DenseMatrix<T> slice_rows(const DenseMatrix<T>& a, std::span<const std::size_t> row_idx) {
  IndexSet cols(a.cols());
  for (std::size_t i = 0; i < cols.size(); ++i) cols[i] = i;
  return slice(a, row_idx, cols);
}

template <typename T>
void scatter(DenseMatrix<T>& dst, std::span<const std::size_t> row_idx, std::span<const std::size_t> col_idx,
             const DenseMatrix<T>& src) {
  if (src.rows() != row_idx.size() || src.cols() != col_idx.size())
    throw DimensionError("scatter: source " + detail::shape_str(src.rows(), src.cols()) +
                         " does not match index sets " + detail::shape_str(row_idx.size(), col_idx.size()));
  for (auto r : row_idx)
    if (r >= dst.rows()) throw DimensionError("scatter: row index " + std::to_string(r) + " out of range");
  for (auto c : col_idx)
    if (c >= dst.cols()) throw DimensionError("scatter: column index " + std::to_string(c) + " out of range");
  for (std::size_t i = 0; i < row_idx.size(); ++i) {
    const auto s = src.row(i);
    auto d = dst.row(row_idx[i]);
    for (std::size_t j = 0; j < col_idx.size(); ++j) d[col_idx[j]] = s[j];
  }
}

template <typename T, typename F>
DenseMatrix<T> map(const DenseMatrix<T>& a, F&& f) {
  DenseMatrix<T> out(a.rows(), a.cols());
  std::transform(a.values().begin(), a.values().end(), out.values().begin(), std::forward<F>(f));
  return out;
}

template <typename T>
DenseMatrix<T> relu(const DenseMatrix<T>& a) {
  return map(a, [](T v) { return v > T{} ? v : T{}; });
}

// Derivative mask of ReLU; the subgradient at exactly zero is zero.
template <typename T>
DenseMatrix<T> relu_mask(const DenseMatrix<T>& a) {
  return map(a, [](T v) { return v > T{} ? T{1} : T{}; });
}

template <typename T>
DenseMatrix<T> hadamard(const DenseMatrix<T>& a, const DenseMatrix<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("hadamard: shape mismatch");
  DenseMatrix<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] * b.values()[i];
  return out;
}

template <typename T>
void add_inplace(DenseMatrix<T>& a, const DenseMatrix<T>& b, T scale = T{1}) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("add_inplace: shape mismatch");
  auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) av[i] += scale * bv[i];
}

template <typename T>
void scale_inplace(DenseMatrix<T>& a, T s) {
  for (auto& v : a.values()) v *= s;
}

// Row-wise softmax, max-shifted.
template <typename T>
DenseMatrix<T> softmax_rows(const DenseMatrix<T>& a) {
  DenseMatrix<T> out(a.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto src = a.row(r);
    auto dst = out.row(r);
    if (src.empty()) continue;
    const T mx = *std::max_element(src.begin(), src.end());
    T sum{};
    for (std::size_t c = 0; c < src.size(); ++c) sum += dst[c] = std::exp(src[c] - mx);
    for (auto& v : dst) v /= sum;
  }
  return out;
}

template <typename T>
T frobenius_norm(const DenseMatrix<T>& a) {
  T acc{};
  for (T v : a.values()) acc += v * v;
  return std::sqrt(acc);
}

// Concatenates columns: [a | b].
template <typename T>
DenseMatrix<T> hconcat(const DenseMatrix<T>& a, const DenseMatrix<T>& b) {
  if (a.rows() != b.rows()) throw DimensionError("hconcat: row counts differ");
  DenseMatrix<T> out(a.rows(), a.cols() + b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto dst = out.row(r);
    std::copy(a.row(r).begin(), a.row(r).end(), dst.begin());
    std::copy(b.row(r).begin(), b.row(r).end(), dst.begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return out;
}

}  // namespace gist

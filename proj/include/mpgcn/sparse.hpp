#pragma once

#include <algorithm>
#include <cstddef>
#include <tuple>
#include <vector>

#include "mpgcn/errors.hpp"
#include "mpgcn/tensor.hpp"

namespace mpgcn {

struct SparseEntry {
  std::size_t row = 0;
  std::size_t col = 0;
  double value = 0.0;
};

// COO sparse matrix with sorted, deduplicated, nonzero entries and a CSR
// row index for multiplication. Immutable after construction.
class SparseMatrix {
 public:
  SparseMatrix() = default;

  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols,
                                    std::vector<SparseEntry> triplets,
                                    bool symmetric = false) {
    for (const auto& e : triplets) {
      if (e.row >= rows || e.col >= cols)
        throw ShapeError("sparse entry (" + std::to_string(e.row) + "," +
                         std::to_string(e.col) + ") out of bounds for " +
                         std::to_string(rows) + "x" + std::to_string(cols));
    }
    std::sort(triplets.begin(), triplets.end(), [](const SparseEntry& a, const SparseEntry& b) {
      return std::tie(a.row, a.col) < std::tie(b.row, b.col);
    });
    // Merge duplicates, drop exact zeros.
    std::vector<SparseEntry> merged;
    merged.reserve(triplets.size());
    for (const auto& e : triplets) {
      if (!merged.empty() && merged.back().row == e.row && merged.back().col == e.col)
        merged.back().value += e.value;
      else
        merged.push_back(e);
    }
    merged.erase(std::remove_if(merged.begin(), merged.end(),
                                [](const SparseEntry& e) { return e.value == 0.0; }),
                 merged.end());
    SparseMatrix m;
    m.rows_ = rows;
    m.cols_ = cols;
    m.entries_ = std::move(merged);
    m.symmetric_ = symmetric;
    m.build_row_ptr();
    return m;
  }

  static SparseMatrix identity(std::size_t n) {
    std::vector<SparseEntry> t;
    t.reserve(n);
    for (std::size_t i = 0; i < n; ++i) t.push_back({i, i, 1.0});
    return from_triplets(n, n, std::move(t), true);
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t nnz() const { return entries_.size(); }
  bool symmetric() const { return symmetric_; }
  const std::vector<SparseEntry>& entries() const { return entries_; }

  // Entries of one row (CSR slice).
  std::pair<const SparseEntry*, const SparseEntry*> row(std::size_t i) const {
    return {entries_.data() + row_ptr_[i], entries_.data() + row_ptr_[i + 1]};
  }

  double value_at(std::size_t i, std::size_t j) const {
    auto [b, e] = row(i);
    for (const SparseEntry* p = b; p != e; ++p)
      if (p->col == j) return p->value;
    return 0.0;
  }

  Tensor densify() const {
    Tensor d({rows_, cols_});
    for (const auto& e : entries_) d.at(e.row, e.col) = e.value;
    return d;
  }

  SparseMatrix transposed() const {
    std::vector<SparseEntry> t;
    t.reserve(entries_.size());
    for (const auto& e : entries_) t.push_back({e.col, e.row, e.value});
    return from_triplets(cols_, rows_, std::move(t), symmetric_);
  }

  // Row sums (used for degree computations).
  std::vector<double> row_sums() const {
    std::vector<double> s(rows_, 0.0);
    for (const auto& e : entries_) s[e.row] += e.value;
    return s;
  }

 private:
  void build_row_ptr() {
    row_ptr_.assign(rows_ + 1, 0);
    for (const auto& e : entries_) ++row_ptr_[e.row + 1];
    for (std::size_t i = 0; i < rows_; ++i) row_ptr_[i + 1] += row_ptr_[i];
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<SparseEntry> entries_;
  std::vector<std::size_t> row_ptr_{0};
  bool symmetric_ = false;
};

// Sparse-dense product s * d where d's leading extent equals s.cols().
// d may have any rank >= 1; trailing axes are treated as flattened columns.
inline Tensor spmm(const SparseMatrix& s, const Tensor& d) {
  if (d.rank() < 1 || d.extent(0) != s.cols())
    throw ShapeError("spmm: sparse " + std::to_string(s.rows()) + "x" +
                     std::to_string(s.cols()) + " vs dense " + shape_str(d.shape()));
  Shape out_shape = d.shape();
  out_shape[0] = s.rows();
  Tensor out(out_shape);
  const std::size_t width = d.numel() / d.extent(0);
  const double* src = d.data();
  double* dst = out.data();
  for (const auto& e : s.entries()) {
    const double v = e.value;
    const double* in = src + e.col * width;
    double* o = dst + e.row * width;
    for (std::size_t j = 0; j < width; ++j) o[j] += v * in[j];
  }
  return out;
}

// s^T * d without materializing the transpose (used by the tape's backward).
inline Tensor spmm_transpose(const SparseMatrix& s, const Tensor& d) {
  if (d.rank() < 1 || d.extent(0) != s.rows())
    throw ShapeError("spmm_transpose: sparse " + std::to_string(s.rows()) + "x" +
                     std::to_string(s.cols()) + " vs dense " + shape_str(d.shape()));
  Shape out_shape = d.shape();
  out_shape[0] = s.cols();
  Tensor out(out_shape);
  const std::size_t width = d.numel() / d.extent(0);
  const double* src = d.data();
  double* dst = out.data();
  for (const auto& e : s.entries()) {
    const double v = e.value;
    const double* in = src + e.row * width;
    double* o = dst + e.col * width;
    for (std::size_t j = 0; j < width; ++j) o[j] += v * in[j];
  }
  return out;
}

}  // namespace mpgcn

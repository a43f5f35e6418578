#include "duch/matrix.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "duch/errors.hpp"

namespace duch {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap view(const Matrix& m) { return ConstMap(m.data(), m.rows(), m.cols()); }
MutMap view(Matrix& m) { return MutMap(m.data(), m.rows(), m.cols()); }

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(values.begin(), values.end()) {
  if (values_.size() != rows * cols) {
    throw DimensionError(fmt::format("matrix {}x{} given {} values", rows, cols, values_.size()));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  values_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("ragged matrix literal");
    values_.insert(values_.end(), r.begin(), r.end());
  }
}

bool Matrix::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::string Matrix::shape_string() const { return fmt::format("{}x{}", rows_, cols_); }

void Matrix::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

Matrix zeros_like(const Matrix& m) { return Matrix(m.rows(), m.cols()); }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError(fmt::format("matmul: lhs {} vs rhs {}", a.shape_string(), b.shape_string()));
  }
  Matrix out(a.rows(), b.cols());
  view(out).noalias() = view(a) * view(b);
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError(
        fmt::format("matmul_tn: lhs {} vs rhs {}", a.shape_string(), b.shape_string()));
  }
  Matrix out(a.cols(), b.cols());
  view(out).noalias() = view(a).transpose() * view(b);
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError(
        fmt::format("matmul_nt: lhs {} vs rhs {}", a.shape_string(), b.shape_string()));
  }
  Matrix out(a.rows(), b.rows());
  view(out).noalias() = view(a) * view(b).transpose();
  return out;
}

void axpy(Matrix& dst, const Matrix& src, double scale) {
  require_same_shape(dst, src, "dst", "src");
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += scale * s[i];
}

Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m.rows()) {
      throw DimensionError(fmt::format("row {} out of range for {}", rows[i], m.shape_string()));
    }
    std::copy_n(m.row(rows[i]).data(), m.cols(), out.row(i).data());
  }
  return out;
}

Matrix vstack(const Matrix& top, const Matrix& bottom) {
  if (top.cols() != bottom.cols()) {
    throw DimensionError(
        fmt::format("vstack: top {} vs bottom {}", top.shape_string(), bottom.shape_string()));
  }
  Matrix out(top.rows() + bottom.rows(), top.cols());
  std::copy_n(top.data(), top.size(), out.data());
  std::copy_n(bottom.data(), bottom.size(), out.data() + top.size());
  return out;
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* a_name, const char* b_name) {
  if (!a.same_shape(b)) {
    throw DimensionError(
        fmt::format("shape mismatch: {} is {} but {} is {}", a_name, a.shape_string(), b_name,
                    b.shape_string()));
  }
}

}  // namespace duch

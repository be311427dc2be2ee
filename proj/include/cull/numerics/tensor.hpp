#pragma once

#include <Eigen/Core>

#include <string>

#include "cull/error.hpp"

namespace cull {

/// Row-major dense matrix. Every tensor in the library is two-dimensional;
/// vectors are stored as 1 x n rows.
template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Tensor = Matrix<float>;

inline std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

template <class Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* op) {
  if (!m.allFinite()) {
    throw NumericError(std::string(op) + ": non-finite value produced");
  }
}

/// Plain product a * b with eager inner-dimension check.
template <class Scalar>
Matrix<Scalar> matmul(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.rows(), a.cols()) +
                         " x " + shape_string(b.rows(), b.cols()));
  }
  Matrix<Scalar> out(a.rows(), b.cols());
  out.noalias() = a * b;
  require_finite(out, "matmul");
  return out;
}

}  // namespace cull

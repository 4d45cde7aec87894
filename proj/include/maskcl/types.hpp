#pragma once

#include <Eigen/Dense>

namespace maskcl {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// One sample per row. Banks, feature sets and distance inputs all use this.
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using RowMatrixXd = RowMatrix<double>;
using VectorXd = Vector<double>;

// Pixel planes are stored as (H*W) x C matrices, pixel index = row * W + col.
using ImagePlanes = Matrix<double>;

}  // namespace maskcl

#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace hosar {

using Index = Eigen::Index;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Column-compressed; every weight matrix is finalized in this layout.
template <typename Scalar>
using SpMat = Eigen::SparseMatrix<Scalar, Eigen::ColMajor>;

using VectorXd = Vec<double>;
using MatrixXd = Mat<double>;
using SparseXd = SpMat<double>;

}  // namespace hosar

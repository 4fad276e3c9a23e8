#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ipf {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXr = RowMatrix<double>;
using VectorXr = Vector<double>;

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape or extent mismatch between operands.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Malformed file, record or argument supplied by the caller.
class InputError : public Error {
public:
    using Error::Error;
};

/// A non-finite value appeared in a computation.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace ipf

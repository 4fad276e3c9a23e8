#pragma once

#include "ipformer/common.hpp"

#include <cmath>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace ipf {

using Shape = std::vector<Index>;

inline std::string shape_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline Index shape_product(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

/// Dense row-major n-dimensional array. Slices are materialized copies.
template <typename Scalar = double>
class Tensor {
public:
    using scalar_type = Scalar;
    using Matrix = RowMatrix<Scalar>;

    Tensor() = default;

    /// Zero-filled tensor of the given shape.
    explicit Tensor(Shape shape) : shape_(std::move(shape))
    {
        validate_shape(shape_);
        data_ = Vector<Scalar>::Zero(shape_product(shape_));
    }

    Tensor(Shape shape, std::span<const Scalar> values) : shape_(std::move(shape))
    {
        validate_shape(shape_);
        if (static_cast<Index>(values.size()) != shape_product(shape_)) {
            throw DimensionError("tensor data length " + std::to_string(values.size()) +
                                 " does not match shape " + shape_string(shape_));
        }
        data_ = Eigen::Map<const Vector<Scalar>>(values.data(), static_cast<Index>(values.size()));
    }

    Tensor(Shape shape, std::initializer_list<Scalar> values)
        : Tensor(std::move(shape), std::span<const Scalar>(values.begin(), values.size()))
    {
    }

    template <typename Derived>
    static Tensor from_matrix(const Eigen::MatrixBase<Derived>& m)
    {
        Tensor t(Shape{m.rows(), m.cols()});
        t.matrix() = m.template cast<Scalar>();
        return t;
    }

    static Tensor constant(Shape shape, Scalar value)
    {
        Tensor t(std::move(shape));
        t.data_.setConstant(value);
        return t;
    }

    const Shape& shape() const noexcept { return shape_; }
    Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
    Index size() const noexcept { return data_.size(); }
    Index extent(Index axis) const
    {
        if (axis < 0 || axis >= rank()) {
            throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                                 shape_string(shape_));
        }
        return shape_[static_cast<std::size_t>(axis)];
    }

    std::span<const Scalar> values() const noexcept { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
    std::span<Scalar> values() noexcept { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
    const Vector<Scalar>& flat() const noexcept { return data_; }
    Vector<Scalar>& flat() noexcept { return data_; }

    Scalar operator()(Index i, Index j) const { return data_[i * shape_[1] + j]; }
    Scalar& operator()(Index i, Index j) { return data_[i * shape_[1] + j]; }
    Scalar operator()(Index i, Index j, Index k) const { return data_[(i * shape_[1] + j) * shape_[2] + k]; }
    Scalar& operator()(Index i, Index j, Index k) { return data_[(i * shape_[1] + j) * shape_[2] + k]; }

    /// Rank-2 view of the storage.
    Eigen::Map<const Matrix> matrix() const
    {
        require_rank(2);
        return Eigen::Map<const Matrix>(data_.data(), shape_[0], shape_[1]);
    }
    Eigen::Map<Matrix> matrix()
    {
        require_rank(2);
        return Eigen::Map<Matrix>(data_.data(), shape_[0], shape_[1]);
    }

    Tensor reshaped(Shape shape) const
    {
        validate_shape(shape);
        if (shape_product(shape) != size()) {
            throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        }
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    /// Copy of the sub-tensor at position `i` of the leading axis.
    Tensor at(Index i) const
    {
        if (rank() < 2) throw DimensionError("at() needs rank >= 2, got " + shape_string(shape_));
        if (i < 0 || i >= shape_[0]) {
            throw DimensionError("index " + std::to_string(i) + " out of range for " + shape_string(shape_));
        }
        Shape sub(shape_.begin() + 1, shape_.end());
        const Index stride = shape_product(sub);
        Tensor t(sub);
        t.data_ = data_.segment(i * stride, stride);
        return t;
    }

    /// Copy of leading-axis positions [first, first + count).
    Tensor range(Index first, Index count) const
    {
        if (rank() < 1 || first < 0 || count < 1 || first + count > shape_[0]) {
            throw DimensionError("range [" + std::to_string(first) + ", +" + std::to_string(count) +
                                 ") out of range for " + shape_string(shape_));
        }
        Shape sub = shape_;
        sub[0] = count;
        const Index stride = size() / shape_[0];
        Tensor t(sub);
        t.data_ = data_.segment(first * stride, count * stride);
        return t;
    }

    template <typename Other>
    Tensor<Other> cast() const
    {
        Tensor<Other> t(shape_);
        t.flat() = data_.template cast<Other>();
        return t;
    }

    bool all_finite() const { return data_.allFinite(); }

    friend bool operator==(const Tensor& a, const Tensor& b)
    {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    static void validate_shape(const Shape& shape)
    {
        for (Index e : shape) {
            if (e < 1) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
        }
    }

    void require_rank(Index r) const
    {
        if (rank() != r) {
            throw DimensionError("expected rank " + std::to_string(r) + ", got " + shape_string(shape_));
        }
    }

    Shape shape_;
    Vector<Scalar> data_;
};

// ---------------------------------------------------------------------------
// Forward operations

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b)
{
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
        throw DimensionError("matmul shape mismatch: " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
    }
    return Tensor<Scalar>::from_matrix(a.matrix() * b.matrix());
}

/// Row-wise softmax with max subtraction.
template <typename Derived>
RowMatrix<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& a)
{
    using Scalar = typename Derived::Scalar;
    RowMatrix<Scalar> out = (a.colwise() - a.rowwise().maxCoeff()).array().exp().matrix();
    out.array().colwise() /= out.rowwise().sum().array();
    return out;
}

template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& a)
{
    return Tensor<Scalar>::from_matrix(softmax_rows(a.matrix()));
}

/// x * Phi(x), exact erf form.
template <typename Scalar>
Scalar gelu(Scalar x)
{
    return Scalar(0.5) * x * (Scalar(1) + std::erf(x / std::sqrt(Scalar(2))));
}

/// d/dx of x * Phi(x).
template <typename Scalar>
Scalar gelu_derivative(Scalar x)
{
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x / std::sqrt(Scalar(2))));
    const Scalar pdf = Scalar(inv_sqrt_2pi) * std::exp(Scalar(-0.5) * x * x);
    return cdf + x * pdf;
}

template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& a)
{
    Tensor<Scalar> out = a;
    out.flat() = a.flat().unaryExpr([](Scalar x) { return gelu(x); });
    return out;
}

/// Arithmetic mean along `axis`; the output drops that axis.
template <typename Scalar>
Tensor<Scalar> mean_over_axis(const Tensor<Scalar>& a, Index axis)
{
    if (axis < 0 || axis >= a.rank()) {
        throw DimensionError("mean_over_axis: axis " + std::to_string(axis) + " out of range for " +
                             shape_string(a.shape()));
    }
    const Shape& s = a.shape();
    Index outer = 1, inner = 1;
    for (Index i = 0; i < axis; ++i) outer *= s[i];
    for (Index i = axis + 1; i < a.rank(); ++i) inner *= s[i];
    const Index n = s[axis];

    Shape out_shape;
    for (Index i = 0; i < a.rank(); ++i) {
        if (i != axis) out_shape.push_back(s[i]);
    }
    if (out_shape.empty()) out_shape.push_back(1);

    Tensor<Scalar> out(out_shape);
    // Each outer block is an n x inner row-major matrix; average its rows.
    for (Index o = 0; o < outer; ++o) {
        Eigen::Map<const RowMatrix<Scalar>> block(a.flat().data() + o * n * inner, n, inner);
        out.flat().segment(o * inner, inner) = block.colwise().mean().transpose();
    }
    return out;
}

} // namespace ipf

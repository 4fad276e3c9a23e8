#pragma once

// Reverse-mode differentiation over rank-2 values. The op set is exactly what
// the alignment block needs; nothing here aims to be a general framework.

#include "ipformer/common.hpp"
#include "ipformer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace ipf::ad {

template <typename Scalar>
class Tape;

/// Handle to a node recorded on a Tape.
template <typename Scalar>
class Var {
public:
    using Matrix = RowMatrix<Scalar>;

    Var() = default;
    Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape<Scalar>& tape() const { return *tape_; }
    std::size_t id() const noexcept { return id_; }
    const Matrix& value() const { return tape_->value(id_); }
    const Matrix& grad() const { return tape_->grad(id_); }
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }

private:
    Tape<Scalar>* tape_ = nullptr;
    std::size_t id_ = 0;
};

template <typename Scalar>
class Tape {
public:
    using Matrix = RowMatrix<Scalar>;
    using Backward = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<Scalar> leaf(Matrix value) { return record(std::move(value), nullptr); }

    Var<Scalar> record(Matrix value, Backward backward)
    {
        nodes_.push_back(Node{std::move(value), Matrix(), std::move(backward)});
        return Var<Scalar>(this, nodes_.size() - 1);
    }

    const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
    const Matrix& grad(std::size_t id) const { return nodes_.at(id).grad; }
    Matrix& grad(std::size_t id) { return nodes_.at(id).grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Seeds d(output)/d(output) = 1 and replays the tape in reverse
    /// recording order, which is a reverse topological order.
    void backward(const Var<Scalar>& output)
    {
        const Matrix& out = value(output.id());
        if (out.rows() != 1 || out.cols() != 1) {
            throw DimensionError("backward needs a scalar output, got " + std::to_string(out.rows()) + "x" +
                                 std::to_string(out.cols()));
        }
        for (Node& n : nodes_) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
        nodes_[output.id()].grad(0, 0) = Scalar(1);
        for (std::size_t i = output.id() + 1; i-- > 0;) {
            if (nodes_[i].backward) nodes_[i].backward(*this, i);
        }
    }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        Backward backward;
    };
    std::vector<Node> nodes_;
};

namespace detail {

template <typename Scalar>
void require_same_tape(const Var<Scalar>& a, const Var<Scalar>& b)
{
    if (&a.tape() != &b.tape()) throw Error("operands recorded on different tapes");
}

inline std::string dims(Index r, Index c) { return std::to_string(r) + "x" + std::to_string(c); }

} // namespace detail

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b)
{
    detail::require_same_tape(a, b);
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul shape mismatch: " + detail::dims(a.rows(), a.cols()) + " x " +
                             detail::dims(b.rows(), b.cols()));
    }
    const auto ia = a.id(), ib = b.id();
    return a.tape().record(a.value() * b.value(), [ia, ib](Tape<Scalar>& t, std::size_t self) {
        const auto& g = t.grad(self);
        t.grad(ia).noalias() += g * t.value(ib).transpose();
        t.grad(ib).noalias() += t.value(ia).transpose() * g;
    });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b)
{
    detail::require_same_tape(a, b);
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError("add shape mismatch: " + detail::dims(a.rows(), a.cols()) + " + " +
                             detail::dims(b.rows(), b.cols()));
    }
    const auto ia = a.id(), ib = b.id();
    return a.tape().record(a.value() + b.value(), [ia, ib](Tape<Scalar>& t, std::size_t self) {
        t.grad(ia) += t.grad(self);
        t.grad(ib) += t.grad(self);
    });
}

template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b)
{
    detail::require_same_tape(a, b);
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError("sub shape mismatch: " + detail::dims(a.rows(), a.cols()) + " - " +
                             detail::dims(b.rows(), b.cols()));
    }
    const auto ia = a.id(), ib = b.id();
    return a.tape().record(a.value() - b.value(), [ia, ib](Tape<Scalar>& t, std::size_t self) {
        t.grad(ia) += t.grad(self);
        t.grad(ib) -= t.grad(self);
    });
}

/// a + 1 x n bias broadcast over rows.
template <typename Scalar>
Var<Scalar> add_row(const Var<Scalar>& a, const Var<Scalar>& bias)
{
    detail::require_same_tape(a, bias);
    if (bias.rows() != 1 || bias.cols() != a.cols()) {
        throw DimensionError("add_row: bias " + detail::dims(bias.rows(), bias.cols()) + " for input " +
                             detail::dims(a.rows(), a.cols()));
    }
    const auto ia = a.id(), ib = bias.id();
    RowMatrix<Scalar> out = a.value().rowwise() + bias.value().row(0);
    return a.tape().record(std::move(out), [ia, ib](Tape<Scalar>& t, std::size_t self) {
        t.grad(ia) += t.grad(self);
        t.grad(ib) += t.grad(self).colwise().sum();
    });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s)
{
    const auto ia = a.id();
    return a.tape().record(a.value() * s, [ia, s](Tape<Scalar>& t, std::size_t self) {
        t.grad(ia) += t.grad(self) * s;
    });
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& a)
{
    const auto ia = a.id();
    return a.tape().record(a.value().transpose(), [ia](Tape<Scalar>& t, std::size_t self) {
        t.grad(ia) += t.grad(self).transpose();
    });
}

template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& a)
{
    const auto ia = a.id();
    return a.tape().record(ipf::softmax_rows(a.value()), [ia](Tape<Scalar>& t, std::size_t self) {
        const auto& y = t.value(self);
        const auto& g = t.grad(self);
        const Vector<Scalar> dot = (g.array() * y.array()).rowwise().sum();
        t.grad(ia).array() += y.array() * (g.array().colwise() - dot.array());
    });
}

template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& a)
{
    const auto ia = a.id();
    RowMatrix<Scalar> out = a.value().unaryExpr([](Scalar x) { return ipf::gelu(x); });
    return a.tape().record(std::move(out), [ia](Tape<Scalar>& t, std::size_t self) {
        t.grad(ia).array() +=
            t.grad(self).array() * t.value(ia).unaryExpr([](Scalar x) { return gelu_derivative(x); }).array();
    });
}

/// Per-row (x - mean) / sqrt(var + eps), population variance, no affine.
template <typename Scalar>
Var<Scalar> layer_norm_rows(const Var<Scalar>& a, Scalar eps)
{
    const auto ia = a.id();
    const auto& x = a.value();
    const Index n = x.cols();
    RowMatrix<Scalar> centered = x.colwise() - x.rowwise().mean();
    Vector<Scalar> inv_std = ((centered.array().square().rowwise().sum() / Scalar(n)) + eps).rsqrt();
    RowMatrix<Scalar> y = centered.array().colwise() * inv_std.array();
    return a.tape().record(std::move(y), [ia, inv_std](Tape<Scalar>& t, std::size_t self) {
        const auto& y = t.value(self);
        const auto& g = t.grad(self);
        const Vector<Scalar> g_mean = g.rowwise().mean();
        const Vector<Scalar> gy_mean = (g.array() * y.array()).rowwise().mean();
        RowMatrix<Scalar> dx = (g.colwise() - g_mean).array() - y.array().colwise() * gy_mean.array();
        t.grad(ia).array() += dx.array().colwise() * inv_std.array();
    });
}

/// Columns [start, start + count) as a new node.
template <typename Scalar>
Var<Scalar> columns(const Var<Scalar>& a, Index start, Index count)
{
    if (start < 0 || count < 1 || start + count > a.cols()) {
        throw DimensionError("columns [" + std::to_string(start) + ", +" + std::to_string(count) +
                             ") out of range for " + detail::dims(a.rows(), a.cols()));
    }
    const auto ia = a.id();
    RowMatrix<Scalar> out = a.value().middleCols(start, count);
    return a.tape().record(std::move(out), [ia, start, count](Tape<Scalar>& t, std::size_t self) {
        t.grad(ia).middleCols(start, count) += t.grad(self);
    });
}

template <typename Scalar>
Var<Scalar> concat_columns(std::span<const Var<Scalar>> parts)
{
    if (parts.empty()) throw DimensionError("concat_columns needs at least one part");
    const Index rows = parts.front().rows();
    Index total = 0;
    for (const auto& p : parts) {
        detail::require_same_tape(parts.front(), p);
        if (p.rows() != rows) throw DimensionError("concat_columns: row count mismatch");
        total += p.cols();
    }
    RowMatrix<Scalar> out(rows, total);
    std::vector<std::pair<std::size_t, Index>> layout;
    Index offset = 0;
    for (const auto& p : parts) {
        out.middleCols(offset, p.cols()) = p.value();
        layout.emplace_back(p.id(), offset);
        offset += p.cols();
    }
    return parts.front().tape().record(std::move(out), [layout](Tape<Scalar>& t, std::size_t self) {
        for (const auto& [id, off] : layout) {
            t.grad(id) += t.grad(self).middleCols(off, t.value(id).cols());
        }
    });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a)
{
    const auto ia = a.id();
    RowMatrix<Scalar> out(1, 1);
    out(0, 0) = a.value().sum();
    return a.tape().record(std::move(out), [ia](Tape<Scalar>& t, std::size_t self) {
        t.grad(ia).array() += t.grad(self)(0, 0);
    });
}

/// mean((a - target)^2) as a 1 x 1 node; target is a constant.
template <typename Scalar>
Var<Scalar> mean_squared_error(const Var<Scalar>& a, const RowMatrix<Scalar>& target)
{
    if (a.rows() != target.rows() || a.cols() != target.cols()) {
        throw DimensionError("mean_squared_error: " + detail::dims(a.rows(), a.cols()) + " vs target " +
                             detail::dims(target.rows(), target.cols()));
    }
    const auto ia = a.id();
    RowMatrix<Scalar> diff = a.value() - target;
    RowMatrix<Scalar> out(1, 1);
    out(0, 0) = diff.squaredNorm() / Scalar(diff.size());
    return a.tape().record(std::move(out), [ia, diff = std::move(diff)](Tape<Scalar>& t, std::size_t self) {
        t.grad(ia) += diff * (Scalar(2) * t.grad(self)(0, 0) / Scalar(diff.size()));
    });
}

/// Maximum over coordinates of |fd - ad| / max(1, |fd|, |ad|), where fd is
/// the central difference (f(x + h e) - f(x - h e)) / 2h and ad the tape
/// gradient. `f` maps a leaf Var to a 1 x 1 Var on the same tape.
template <typename Scalar, typename Fn>
Scalar grad_check(Fn&& f, const RowMatrix<Scalar>& x, Scalar step)
{
    if (!(step > Scalar(0))) throw InputError("grad_check: step must be positive");

    RowMatrix<Scalar> analytic;
    {
        Tape<Scalar> tape;
        auto leaf = tape.leaf(x);
        Var<Scalar> out = f(leaf);
        tape.backward(out);
        analytic = leaf.grad();
    }

    auto eval = [&](const RowMatrix<Scalar>& point) {
        Tape<Scalar> tape;
        Var<Scalar> out = f(tape.leaf(point));
        return out.value()(0, 0);
    };

    Scalar worst = 0;
    RowMatrix<Scalar> probe = x;
    for (Index i = 0; i < x.size(); ++i) {
        const Scalar saved = probe.data()[i];
        probe.data()[i] = saved + step;
        const Scalar up = eval(probe);
        probe.data()[i] = saved - step;
        const Scalar down = eval(probe);
        probe.data()[i] = saved;
        const Scalar fd = (up - down) / (Scalar(2) * step);
        const Scalar ad = analytic.data()[i];
        const Scalar denom = std::max({Scalar(1), std::abs(fd), std::abs(ad)});
        worst = std::max(worst, std::abs(fd - ad) / denom);
    }
    return worst;
}

template <typename Scalar, typename Fn>
Scalar grad_check(Fn&& f, const Tensor<Scalar>& x, Scalar step)
{
    return grad_check<Scalar>(std::forward<Fn>(f), RowMatrix<Scalar>(x.matrix()), step);
}

} // namespace ipf::ad

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace trsgd {

/** Column-major dense matrix; column-linear order agrees with the tensor multi-index. */
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using index_t = std::size_t;

/** Extents (I_1, ..., I_N) of an N-way tensor, N >= 2. */
class Shape {
public:
    Shape() = default;

    explicit Shape(std::vector<index_t> dims) : dims_(std::move(dims)) {
        if (dims_.size() < 2)
            throw std::invalid_argument("Shape: tensor order must be at least 2, got " +
                                        std::to_string(dims_.size()));
        for (std::size_t k = 0; k < dims_.size(); ++k)
            if (dims_[k] == 0)
                throw std::invalid_argument("Shape: extent of axis " + std::to_string(k) +
                                            " must be positive");
    }

    Shape(std::initializer_list<index_t> dims) : Shape(std::vector<index_t>(dims)) {}

    [[nodiscard]] std::size_t order() const noexcept { return dims_.size(); }
    [[nodiscard]] index_t operator[](std::size_t k) const { return dims_.at(k); }
    [[nodiscard]] const std::vector<index_t>& dims() const noexcept { return dims_; }

    [[nodiscard]] index_t numel() const noexcept {
        return std::accumulate(dims_.begin(), dims_.end(), index_t{1}, std::multiplies<>{});
    }

    /** Product of all extents except axis n (J_n). */
    [[nodiscard]] index_t numel_except(std::size_t n) const {
        check_axis(n);
        return numel() / dims_[n];
    }

    void check_axis(std::size_t n) const {
        if (n >= dims_.size())
            throw std::out_of_range("mode " + std::to_string(n) + " out of range for order-" +
                                    std::to_string(dims_.size()) + " tensor");
    }

    friend bool operator==(const Shape&, const Shape&) = default;

private:
    std::vector<index_t> dims_;
};

/**
 * Linear position of a (zero-based) index tuple, first index fastest:
 *   i_1 + i_2 I_1 + i_3 I_1 I_2 + ...
 */
inline index_t multi_index(std::span<const index_t> idx, const Shape& shape) {
    if (idx.size() != shape.order())
        throw std::invalid_argument("multi_index: expected " + std::to_string(shape.order()) +
                                    " indices, got " + std::to_string(idx.size()));
    index_t lin = 0;
    index_t stride = 1;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] >= shape[k])
            throw std::out_of_range("multi_index: index " + std::to_string(idx[k]) +
                                    " out of range on axis " + std::to_string(k) + " (extent " +
                                    std::to_string(shape[k]) + ")");
        lin += idx[k] * stride;
        stride *= shape[k];
    }
    return lin;
}

inline index_t multi_index(std::initializer_list<index_t> idx, const Shape& shape) {
    return multi_index(std::span<const index_t>(idx.begin(), idx.size()), shape);
}

/** Inverse of multi_index. */
inline std::vector<index_t> unravel_index(index_t lin, const Shape& shape) {
    if (lin >= shape.numel())
        throw std::out_of_range("unravel_index: linear index out of range");
    std::vector<index_t> idx(shape.order());
    for (std::size_t k = 0; k < shape.order(); ++k) {
        idx[k] = lin % shape[k];
        lin /= shape[k];
    }
    return idx;
}

/** Dense N-way tensor of doubles stored in multi-index order. */
class DenseTensor {
public:
    DenseTensor() = default;

    explicit DenseTensor(Shape shape) : shape_(std::move(shape)), data_(shape_.numel(), 0.0) {}

    DenseTensor(Shape shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_.numel())
            throw std::invalid_argument("DenseTensor: data length " + std::to_string(data_.size()) +
                                        " does not match shape (" +
                                        std::to_string(shape_.numel()) + " entries)");
    }

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t order() const noexcept { return shape_.order(); }
    [[nodiscard]] index_t size() const noexcept { return data_.size(); }

    [[nodiscard]] std::span<double> data() noexcept { return data_; }
    [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
    [[nodiscard]] const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](index_t lin) { return data_[lin]; }
    double operator[](index_t lin) const { return data_[lin]; }

    [[nodiscard]] double at(std::span<const index_t> idx) const {
        return data_[multi_index(idx, shape_)];
    }
    [[nodiscard]] double at(std::initializer_list<index_t> idx) const {
        return data_[multi_index(idx, shape_)];
    }

    /** Mode-1 unfolding without a copy. */
    [[nodiscard]] Eigen::Map<const Matrix> as_matrix() const {
        return {data_.data(), Eigen::Index(shape_[0]), Eigen::Index(shape_.numel() / shape_[0])};
    }

    friend bool operator==(const DenseTensor&, const DenseTensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

namespace detail {

// Column strides for an unfolding that keeps `row_axis` as rows and orders the
// remaining axes as listed in `col_axes` (first listed axis fastest).
inline std::vector<index_t> column_strides(const Shape& shape, std::span<const std::size_t> col_axes) {
    std::vector<index_t> strides(shape.order(), 0);
    index_t s = 1;
    for (auto ax : col_axes) {
        strides[ax] = s;
        s *= shape[ax];
    }
    return strides;
}

template <class Visit>
void for_each_index(const Shape& shape, Visit&& visit) {
    std::vector<index_t> idx(shape.order(), 0);
    const index_t total = shape.numel();
    for (index_t lin = 0; lin < total; ++lin) {
        visit(lin, std::as_const(idx));
        for (std::size_t k = 0; k < idx.size(); ++k) {
            if (++idx[k] < shape[k])
                break;
            idx[k] = 0;
        }
    }
}

inline std::vector<std::size_t> cyclic_axes_after(std::size_t n, std::size_t order) {
    std::vector<std::size_t> axes;
    axes.reserve(order - 1);
    for (std::size_t k = 1; k < order; ++k)
        axes.push_back((n + k) % order);
    return axes;
}

inline std::vector<std::size_t> natural_axes_without(std::size_t n, std::size_t order) {
    std::vector<std::size_t> axes;
    axes.reserve(order - 1);
    for (std::size_t k = 0; k < order; ++k)
        if (k != n)
            axes.push_back(k);
    return axes;
}

inline Matrix unfold(const DenseTensor& x, std::size_t n, std::span<const std::size_t> col_axes) {
    const auto& shape = x.shape();
    const auto strides = column_strides(shape, col_axes);
    Matrix out(Eigen::Index(shape[n]), Eigen::Index(shape.numel_except(n)));
    for_each_index(shape, [&](index_t lin, const std::vector<index_t>& idx) {
        index_t col = 0;
        for (auto ax : col_axes)
            col += idx[ax] * strides[ax];
        out(Eigen::Index(idx[n]), Eigen::Index(col)) = x[lin];
    });
    return out;
}

inline DenseTensor fold(const Matrix& m, const Shape& shape, std::size_t n,
                        std::span<const std::size_t> col_axes) {
    if (m.rows() != Eigen::Index(shape[n]) || m.cols() != Eigen::Index(shape.numel_except(n)))
        throw std::invalid_argument("fold: matrix size does not match shape");
    const auto strides = column_strides(shape, col_axes);
    DenseTensor x(shape);
    for_each_index(shape, [&](index_t lin, const std::vector<index_t>& idx) {
        index_t col = 0;
        for (auto ax : col_axes)
            col += idx[ax] * strides[ax];
        x[lin] = m(Eigen::Index(idx[n]), Eigen::Index(col));
    });
    return x;
}

} // namespace detail

/**
 * Mode-n unfolding X_[n] (zero-based n): an I_n x J_n matrix whose columns run
 * over the cyclically rotated axes n+1, ..., N, 1, ..., n-1 (axis n+1 fastest).
 */
inline Matrix mode_n_unfolding(const DenseTensor& x, std::size_t n) {
    x.shape().check_axis(n);
    const auto axes = detail::cyclic_axes_after(n, x.order());
    return detail::unfold(x, n, axes);
}

/** Classical mode-n unfolding X_(n): columns run over axes 1, ..., n-1, n+1, ..., N. */
inline Matrix classical_mode_n_unfolding(const DenseTensor& x, std::size_t n) {
    x.shape().check_axis(n);
    const auto axes = detail::natural_axes_without(n, x.order());
    return detail::unfold(x, n, axes);
}

/** Exact inverse of mode_n_unfolding. */
inline DenseTensor fold_mode_n(const Matrix& m, const Shape& shape, std::size_t n) {
    shape.check_axis(n);
    const auto axes = detail::cyclic_axes_after(n, shape.order());
    return detail::fold(m, shape, n, axes);
}

/** Exact inverse of classical_mode_n_unfolding. */
inline DenseTensor fold_classical_mode_n(const Matrix& m, const Shape& shape, std::size_t n) {
    shape.check_axis(n);
    const auto axes = detail::natural_axes_without(n, shape.order());
    return detail::fold(m, shape, n, axes);
}

/** Frobenius norm with a fixed sequential summation order. */
inline double frobenius_norm(std::span<const double> values) {
    double sum = 0.0;
    for (double v : values)
        sum += v * v;
    return std::sqrt(sum);
}

inline double frobenius_norm(const DenseTensor& x) { return frobenius_norm(x.data()); }

inline double frobenius_norm(const Matrix& m) {
    return frobenius_norm(std::span<const double>(m.data(), std::size_t(m.size())));
}

} // namespace trsgd

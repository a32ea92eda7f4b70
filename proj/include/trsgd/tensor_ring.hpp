#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "tensor.hpp"

namespace trsgd {

/**
 * Third-order tensor d1 x d2 x d3 in multi-index order. TR-cores and subchain
 * tensors are both stored this way; the middle axis indexes lateral slices.
 */
class Tensor3 {
public:
    using SliceMap = Eigen::Map<Matrix, 0, Eigen::OuterStride<>>;
    using ConstSliceMap = Eigen::Map<const Matrix, 0, Eigen::OuterStride<>>;

    Tensor3() = default;

    Tensor3(index_t d1, index_t d2, index_t d3) : d1_(d1), d2_(d2), d3_(d3), data_(d1 * d2 * d3, 0.0) {
        if (d1 == 0 || d2 == 0 || d3 == 0)
            throw std::invalid_argument("Tensor3: all extents must be positive");
    }

    Tensor3(index_t d1, index_t d2, index_t d3, std::vector<double> data)
        : d1_(d1), d2_(d2), d3_(d3), data_(std::move(data)) {
        if (d1 == 0 || d2 == 0 || d3 == 0)
            throw std::invalid_argument("Tensor3: all extents must be positive");
        if (data_.size() != d1 * d2 * d3)
            throw std::invalid_argument("Tensor3: data length does not match extents");
    }

    [[nodiscard]] index_t dim1() const noexcept { return d1_; }
    [[nodiscard]] index_t dim2() const noexcept { return d2_; }
    [[nodiscard]] index_t dim3() const noexcept { return d3_; }

    /// TR-core view of the extents: R_n x I_n x R_{n+1}.
    [[nodiscard]] index_t left_rank() const noexcept { return d1_; }
    [[nodiscard]] index_t mode_dim() const noexcept { return d2_; }
    [[nodiscard]] index_t right_rank() const noexcept { return d3_; }

    [[nodiscard]] std::vector<double>& values() noexcept { return data_; }
    [[nodiscard]] const std::vector<double>& values() const noexcept { return data_; }

    double& operator()(index_t a, index_t j, index_t c) { return data_[a + d1_ * (j + d2_ * c)]; }
    double operator()(index_t a, index_t j, index_t c) const { return data_[a + d1_ * (j + d2_ * c)]; }

    /** Lateral slice T(:, j, :) as a d1 x d3 strided view. */
    [[nodiscard]] SliceMap slice(index_t j) {
        return {data_.data() + j * d1_, Eigen::Index(d1_), Eigen::Index(d3_),
                Eigen::OuterStride<>(Eigen::Index(d1_ * d2_))};
    }
    [[nodiscard]] ConstSliceMap slice(index_t j) const {
        return {data_.data() + j * d1_, Eigen::Index(d1_), Eigen::Index(d3_),
                Eigen::OuterStride<>(Eigen::Index(d1_ * d2_))};
    }

    friend bool operator==(const Tensor3&, const Tensor3&) = default;

private:
    index_t d1_ = 0, d2_ = 0, d3_ = 0;
    std::vector<double> data_;
};

using TRCore = Tensor3;

/** Ordered TR-cores with cyclically chained ranks (R_{N+1} = R_1). */
class TRDecomposition {
public:
    TRDecomposition() = default;

    explicit TRDecomposition(std::vector<TRCore> cores) : cores_(std::move(cores)) {
        if (cores_.size() < 2)
            throw std::invalid_argument("TRDecomposition: need at least 2 cores");
        for (std::size_t n = 0; n < cores_.size(); ++n) {
            const auto& next = cores_[(n + 1) % cores_.size()];
            if (cores_[n].right_rank() != next.left_rank())
                throw std::invalid_argument("TRDecomposition: right rank of core " + std::to_string(n) +
                                            " does not match left rank of core " +
                                            std::to_string((n + 1) % cores_.size()));
        }
    }

    [[nodiscard]] std::size_t order() const noexcept { return cores_.size(); }
    [[nodiscard]] const TRCore& core(std::size_t n) const { return cores_.at(n); }
    [[nodiscard]] TRCore& core(std::size_t n) { return cores_.at(n); }
    [[nodiscard]] const std::vector<TRCore>& cores() const noexcept { return cores_; }

    /** TR-ranks (R_1, ..., R_N) where R_n is the left rank of core n. */
    [[nodiscard]] std::vector<index_t> ranks() const {
        std::vector<index_t> r;
        r.reserve(cores_.size());
        for (const auto& c : cores_)
            r.push_back(c.left_rank());
        return r;
    }

    [[nodiscard]] Shape shape() const {
        std::vector<index_t> d;
        d.reserve(cores_.size());
        for (const auto& c : cores_)
            d.push_back(c.mode_dim());
        return Shape(std::move(d));
    }

    friend bool operator==(const TRDecomposition&, const TRDecomposition&) = default;

private:
    std::vector<TRCore> cores_;
};

/** A (I1 x J1 x K) and B (K x J2 x I2) -> I1 x (J1 J2) x I2 with slice (j1 + j2 J1) = A(j1) B(j2). */
inline Tensor3 subchain_product(const Tensor3& a, const Tensor3& b) {
    if (a.dim3() != b.dim1())
        throw std::invalid_argument("subchain_product: inner dimensions differ (" +
                                    std::to_string(a.dim3()) + " vs " + std::to_string(b.dim1()) + ")");
    const index_t j1n = a.dim2(), j2n = b.dim2();
    Tensor3 out(a.dim1(), j1n * j2n, b.dim3());
    for (index_t j2 = 0; j2 < j2n; ++j2)
        for (index_t j1 = 0; j1 < j1n; ++j1)
            out.slice(j1 + j2 * j1n).noalias() = a.slice(j1) * b.slice(j2);
    return out;
}

/** A (I1 x J x K) and B (K x J x I2) -> I1 x J x I2 with slice j = A(j) B(j). */
inline Tensor3 slices_hadamard(const Tensor3& a, const Tensor3& b) {
    if (a.dim2() != b.dim2())
        throw std::invalid_argument("slices_hadamard: middle extents differ");
    if (a.dim3() != b.dim1())
        throw std::invalid_argument("slices_hadamard: inner dimensions differ");
    Tensor3 out(a.dim1(), a.dim2(), b.dim3());
    for (index_t j = 0; j < a.dim2(); ++j)
        out.slice(j).noalias() = a.slice(j) * b.slice(j);
    return out;
}

/**
 * Subchain tensor G^{!=n}: the chained subchain product of all cores after n,
 * wrapping around. Shape R_{n+1} x J_n x R_n.
 */
inline Tensor3 subchain_tensor(const TRDecomposition& dec, std::size_t n) {
    const std::size_t order = dec.order();
    if (n >= order)
        throw std::out_of_range("subchain_tensor: mode out of range");
    Tensor3 acc = dec.core((n + 1) % order);
    for (std::size_t k = 2; k < order; ++k)
        acc = subchain_product(acc, dec.core((n + k) % order));
    return acc;
}

/** Mode-2 unfolding T_[2]: d2 x (d3 d1), entry (j, c + a d3) = T(a, j, c). */
inline Matrix mode2_unfolding(const Tensor3& t) {
    Matrix out(Eigen::Index(t.dim2()), Eigen::Index(t.dim1() * t.dim3()));
    for (index_t a = 0; a < t.dim1(); ++a)
        for (index_t c = 0; c < t.dim3(); ++c)
            for (index_t j = 0; j < t.dim2(); ++j)
                out(Eigen::Index(j), Eigen::Index(c + a * t.dim3())) = t(a, j, c);
    return out;
}

/** Classical mode-2 unfolding T_(2): d2 x (d1 d3), entry (j, a + c d1) = T(a, j, c). */
inline Matrix classical_mode2_unfolding(const Tensor3& t) {
    Matrix out(Eigen::Index(t.dim2()), Eigen::Index(t.dim1() * t.dim3()));
    for (index_t c = 0; c < t.dim3(); ++c)
        for (index_t a = 0; a < t.dim1(); ++a)
            for (index_t j = 0; j < t.dim2(); ++j)
                out(Eigen::Index(j), Eigen::Index(a + c * t.dim1())) = t(a, j, c);
    return out;
}

/** Inverse of classical_mode2_unfolding. */
inline Tensor3 fold_classical_mode2(const Matrix& m, index_t d1, index_t d3) {
    if (m.cols() != Eigen::Index(d1 * d3))
        throw std::invalid_argument("fold_classical_mode2: column count does not match d1*d3");
    Tensor3 t(d1, index_t(m.rows()), d3);
    for (index_t c = 0; c < d3; ++c)
        for (index_t a = 0; a < d1; ++a)
            for (index_t j = 0; j < t.dim2(); ++j)
                t(a, j, c) = m(Eigen::Index(j), Eigen::Index(a + c * d1));
    return t;
}

/// G_{n(2)}: I_n x R_n R_{n+1}.
inline Matrix core_unfolding(const TRCore& core) { return classical_mode2_unfolding(core); }

inline void assign_core_unfolding(TRCore& core, const Matrix& m) {
    core = fold_classical_mode2(m, core.left_rank(), core.right_rank());
}

/// G^{!=n}_{[2]}: J_n x R_n R_{n+1}.
inline Matrix subchain_unfolding(const TRDecomposition& dec, std::size_t n) {
    return mode2_unfolding(subchain_tensor(dec, n));
}

/** Reconstruction through X_[1] = G_{1(2)} (G^{!=1}_{[2]})^T. */
inline DenseTensor tr_reconstruct(const TRDecomposition& dec) {
    const Shape shape = dec.shape();
    const Matrix x1 = core_unfolding(dec.core(0)) * subchain_unfolding(dec, 0).transpose();
    return DenseTensor(shape, std::vector<double>(x1.data(), x1.data() + x1.size()));
}

/** Element-wise reconstruction X(i) = trace(G_1(i_1) ... G_N(i_N)). */
inline DenseTensor tr_reconstruct_trace(const TRDecomposition& dec) {
    const Shape shape = dec.shape();
    DenseTensor x(shape);
    Matrix prod, tmp;
    detail::for_each_index(shape, [&](index_t lin, const std::vector<index_t>& idx) {
        prod = dec.core(0).slice(idx[0]);
        for (std::size_t k = 1; k < dec.order(); ++k) {
            tmp.noalias() = prod * dec.core(k).slice(idx[k]);
            prod.swap(tmp);
        }
        x[lin] = prod.trace();
    });
    return x;
}

} // namespace trsgd

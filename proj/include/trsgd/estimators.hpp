#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Cholesky>

#include "sampling.hpp"
#include "tensor.hpp"
#include "tensor_ring.hpp"

namespace trsgd {

/**
 * Partial gradient of f(Y) = 1/2 ||TR(Y) - X||_F^2 with respect to G_{n(2)}:
 *   G_{n(2)} S^T S - X_[n] S,   S = G^{!=n}_{[2]}.
 */
inline Matrix full_gradient(const TRDecomposition& dec, const Matrix& x_unfolded, std::size_t n) {
    const Matrix s = subchain_unfolding(dec, n);
    if (x_unfolded.rows() != Eigen::Index(dec.core(n).mode_dim()) || x_unfolded.cols() != s.rows())
        throw std::invalid_argument("full_gradient: unfolding size mismatch");
    const Matrix g = core_unfolding(dec.core(n));
    return g * (s.transpose() * s) - x_unfolded * s;
}

inline Matrix full_gradient(const TRDecomposition& dec, const DenseTensor& x, std::size_t n) {
    return full_gradient(dec, mode_n_unfolding(x, n), n);
}

/** Objective f(Y) = 1/2 ||TR(Y) - X||_F^2. */
inline double objective(const TRDecomposition& dec, const DenseTensor& x) {
    const auto y = tr_reconstruct(dec);
    double s = 0.0;
    for (index_t i = 0; i < x.size(); ++i) {
        const double d = y[i] - x[i];
        s += d * d;
    }
    return 0.5 * s;
}

/**
 * Two scalings of the sampled gradient.
 *   EqLiteral:       (1/(|F| J_n)) (G S^T D S - X_S D S), D = diag(1/p)
 *   ProofNormalized: J_n times that, an unbiased estimate of the full gradient.
 * Solvers step with EqLiteral; the constant J_n is absorbed by the step size.
 */
enum class GradientNormalization { EqLiteral, ProofNormalized };

struct GradientEstimate {
    Matrix value;
    GradientNormalization normalization = GradientNormalization::EqLiteral;
    index_t rows_total = 0; ///< J_n

    [[nodiscard]] GradientEstimate as(GradientNormalization target) const {
        if (target == normalization)
            return *this;
        GradientEstimate out = *this;
        out.normalization = target;
        out.value = target == GradientNormalization::ProofNormalized ? Matrix(value * double(rows_total))
                                                                     : Matrix(value / double(rows_total));
        return out;
    }
};

namespace detail {

inline Vector inverse_probabilities(const Vector& p) {
    Vector d(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (!(p(i) > 0.0))
            throw std::domain_error("sampled probability must be positive, got " + std::to_string(p(i)));
        d(i) = 1.0 / p(i);
    }
    return d;
}

} // namespace detail

/** Sampled gradient for core `batch.mode` from an SSDTP batch. */
inline GradientEstimate stochastic_gradient(const TRDecomposition& dec, const SampleBatch& batch,
                                            GradientNormalization normalization = GradientNormalization::EqLiteral) {
    const std::size_t n = batch.mode;
    const Matrix s = batch.subchain_rows();
    const Vector d = detail::inverse_probabilities(batch.p);
    const index_t jn = dec.shape().numel_except(n);
    const Matrix g = core_unfolding(dec.core(n));
    // (G S^T - X_S) D S
    Matrix resid = g * s.transpose() - batch.sampled_fibers;
    resid = resid * d.asDiagonal();
    GradientEstimate out;
    out.rows_total = jn;
    out.value = (resid * s) * (1.0 / (double(batch.count) * double(jn)));
    return out.as(normalization);
}

/**
 * Small factor of the sampled Hessian, (1/(|H| J_n)) S_H^T D S_H + damping I.
 * The Kronecker factor with I_{I_n} is implicit.
 */
struct HessianEstimate {
    Matrix value;
    double damping = 0.0;
};

inline HessianEstimate stochastic_hessian(const SampleBatch& batch, index_t rows_total, double damping = 0.0) {
    if (damping < 0.0)
        throw std::invalid_argument("stochastic_hessian: damping must be nonnegative");
    const Matrix s = batch.subchain_rows();
    const Vector d = detail::inverse_probabilities(batch.p);
    HessianEstimate h;
    h.value = (s.transpose() * d.asDiagonal() * s) * (1.0 / (double(batch.count) * double(rows_total)));
    h.value = Matrix(0.5 * (h.value + h.value.transpose()));
    h.value.diagonal().array() += damping;
    h.damping = damping;
    return h;
}

/** Gram matrix S^T S of the full subchain unfolding: the small factor of the block Hessian. */
inline Matrix subchain_gram(const TRDecomposition& dec, std::size_t n) {
    const Matrix s = subchain_unfolding(dec, n);
    return s.transpose() * s;
}

struct SingularPreconditioner : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/**
 * Solves dir * h = -g for dir with a Cholesky factorization of the symmetric h.
 * When the factorization fails and `allow_fallback` is set, retries once with
 * extra damping max(damping, 1e-12 trace(h) / dim).
 */
inline Matrix right_solve_spd(const Matrix& g, const Matrix& h, double damping, bool allow_fallback = true) {
    if (h.rows() != h.cols() || h.cols() != g.cols())
        throw std::invalid_argument("right_solve_spd: size mismatch");
    Eigen::LLT<Matrix> llt(h);
    if (llt.info() == Eigen::Success)
        return -llt.solve(g.transpose()).transpose();
    if (allow_fallback) {
        const double extra = std::max(damping, 1e-12 * h.trace() / double(h.rows()));
        if (extra > 0.0) {
            Matrix hd = h;
            hd.diagonal().array() += extra;
            Eigen::LLT<Matrix> retry(hd);
            if (retry.info() == Eigen::Success)
                return -retry.solve(g.transpose()).transpose();
        }
    }
    throw SingularPreconditioner("preconditioner is singular; use a positive damping parameter");
}

/** -g (plain) or -g h^{-1} (scaled), the latter via an SPD solve. */
inline Matrix search_direction(const GradientEstimate& g, const HessianEstimate* h = nullptr,
                               bool allow_fallback = true) {
    if (h == nullptr)
        return -g.value;
    return right_solve_spd(g.value, h->value, h->damping, allow_fallback);
}

// ---------------------------------------------------------------------------
// Step sizes

struct ConstantStep {
    double alpha = 1e-3;
};

/// alpha_t = alpha0 / (t + 1)^gamma with gamma in (0.5, 1].
struct RobbinsMonroStep {
    double alpha0 = 1e-2;
    double gamma = 1.0;
};

/// Per-entry eta / (b + sum of squared directions)^(1/2 + eps).
struct AdaGradStep {
    double eta = 1e-2;
    double b = 0.0;
    double eps = 0.0;
};

using StepSchedule = std::variant<ConstantStep, RobbinsMonroStep, AdaGradStep>;

inline void validate(const StepSchedule& s) {
    if (const auto* c = std::get_if<ConstantStep>(&s)) {
        if (!(c->alpha >= 0.0))
            throw std::invalid_argument("constant step must be nonnegative");
    } else if (const auto* r = std::get_if<RobbinsMonroStep>(&s)) {
        if (!(r->alpha0 > 0.0))
            throw std::invalid_argument("Robbins-Monro alpha0 must be positive");
        if (!(r->gamma > 0.5 && r->gamma <= 1.0))
            throw std::invalid_argument("Robbins-Monro exponent must lie in (0.5, 1]");
    } else if (const auto* a = std::get_if<AdaGradStep>(&s)) {
        if (!(a->eta > 0.0) || a->b < 0.0 || a->eps < 0.0)
            throw std::invalid_argument("AdaGrad requires eta > 0, b >= 0, eps >= 0");
    }
}

/** Scalar step alpha_t for the constant and Robbins-Monro schedules. */
inline double step_size(const StepSchedule& s, long long t) {
    if (const auto* c = std::get_if<ConstantStep>(&s))
        return c->alpha;
    if (const auto* r = std::get_if<RobbinsMonroStep>(&s))
        return r->alpha0 / std::pow(double(t + 1), r->gamma);
    throw std::logic_error("step_size: AdaGrad steps are per entry, use adagrad_update");
}

/** Per-core accumulators of squared search-direction entries. */
struct AdaGradState {
    std::vector<Matrix> accum;

    AdaGradState() = default;
    explicit AdaGradState(const TRDecomposition& dec) {
        for (const auto& c : dec.cores())
            accum.push_back(Matrix::Zero(Eigen::Index(c.mode_dim()), Eigen::Index(c.left_rank() * c.right_rank())));
    }
};

/**
 * Accumulates the squared entries of `direction` into core n's accumulator and
 * returns the entrywise step eta / (b + acc)^(1/2 + eps). Entries with
 * b + acc == 0 get step eta; their direction entry is zero anyway.
 */
inline Matrix adagrad_update(AdaGradState& state, std::size_t n, const Matrix& direction, const AdaGradStep& p) {
    auto& acc = state.accum.at(n);
    if (acc.rows() != direction.rows() || acc.cols() != direction.cols())
        throw std::invalid_argument("adagrad_update: state does not match core shape");
    acc.array() += direction.array().square();
    Matrix step(acc.rows(), acc.cols());
    const double power = 0.5 + p.eps;
    for (Eigen::Index j = 0; j < acc.cols(); ++j)
        for (Eigen::Index i = 0; i < acc.rows(); ++i) {
            const double denom = p.b + acc(i, j);
            if (!(denom > 0.0))
                step(i, j) = p.eta;
            else
                step(i, j) = p.eps == 0.0 ? p.eta / std::sqrt(denom) : p.eta / std::pow(denom, power);
        }
    return step;
}

} // namespace trsgd

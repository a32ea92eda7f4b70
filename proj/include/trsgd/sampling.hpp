#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/SVD>

#include "random.hpp"
#include "tensor.hpp"
#include "tensor_ring.hpp"

namespace trsgd {

/** Nonnegative weights over a finite index set summing to one. */
class ProbVector {
public:
    static constexpr double kSumTolerance = 1e-12;

    ProbVector() = default;

    explicit ProbVector(std::vector<double> probs) : probs_(std::move(probs)) {
        if (probs_.empty())
            throw std::invalid_argument("ProbVector: empty");
        double sum = 0.0;
        for (double p : probs_) {
            if (!(p >= 0.0) || !std::isfinite(p))
                throw std::invalid_argument("ProbVector: entries must be finite and nonnegative");
            sum += p;
        }
        if (std::abs(sum - 1.0) > kSumTolerance)
            throw std::invalid_argument("ProbVector: entries sum to " + std::to_string(sum));
    }

    /** Normalizes nonnegative weights; throws if they are all zero. */
    static ProbVector from_weights(std::span<const double> w) {
        double sum = 0.0;
        for (double v : w) {
            if (!(v >= 0.0) || !std::isfinite(v))
                throw std::invalid_argument("ProbVector: weights must be finite and nonnegative");
            sum += v;
        }
        if (!(sum > 0.0))
            throw std::domain_error("ProbVector: all weights are zero, distribution undefined");
        std::vector<double> p(w.size());
        for (std::size_t i = 0; i < w.size(); ++i)
            p[i] = w[i] / sum;
        return ProbVector(std::move(p));
    }

    static ProbVector uniform(std::size_t n) {
        if (n == 0)
            throw std::invalid_argument("ProbVector::uniform: empty");
        return ProbVector(std::vector<double>(n, 1.0 / double(n)));
    }

    [[nodiscard]] std::size_t size() const noexcept { return probs_.size(); }
    double operator[](std::size_t i) const { return probs_[i]; }
    [[nodiscard]] std::span<const double> values() const noexcept { return probs_; }

private:
    std::vector<double> probs_;
};

enum class SamplingKind { Uniform, Leverage, Euclidean, OptimalOracle };

enum class RefreshPolicy { EveryIteration, EverySweep };

struct SamplingSpec {
    SamplingKind kind = SamplingKind::Uniform;
    RefreshPolicy refresh = RefreshPolicy::EveryIteration;
};

inline std::string_view to_string(SamplingKind k) {
    switch (k) {
    case SamplingKind::Uniform: return "uniform";
    case SamplingKind::Leverage: return "leverage";
    case SamplingKind::Euclidean: return "euclidean";
    case SamplingKind::OptimalOracle: return "optimal";
    }
    return "unknown";
}

inline SamplingKind sampling_kind_from_string(std::string_view s) {
    if (s == "uniform" || s == "U") return SamplingKind::Uniform;
    if (s == "leverage" || s == "L") return SamplingKind::Leverage;
    if (s == "euclidean" || s == "E") return SamplingKind::Euclidean;
    if (s == "optimal") return SamplingKind::OptimalOracle;
    throw std::invalid_argument("unknown sampling kind '" + std::string(s) + "'");
}

/// One-letter suffix used in result tables (U, L, E, O).
inline char sampling_suffix(SamplingKind k) {
    switch (k) {
    case SamplingKind::Uniform: return 'U';
    case SamplingKind::Leverage: return 'L';
    case SamplingKind::Euclidean: return 'E';
    case SamplingKind::OptimalOracle: return 'O';
    }
    return '?';
}

struct LeverageScores {
    Vector scores;
    index_t rank = 0;
};

/**
 * Leverage scores of the rows of `m`: squared row norms of an orthonormal basis
 * of its column space, taken from a thin SVD. Singular values at or below
 * `rank_tol` are treated as zero; a negative tolerance selects
 * max(rows, cols) * eps * sigma_max.
 */
inline LeverageScores leverage_scores(const Matrix& m, double rank_tol = -1.0) {
    if (m.rows() == 0)
        throw std::invalid_argument("leverage_scores: matrix has no rows");
    LeverageScores out;
    out.scores = Vector::Zero(m.rows());
    if (m.cols() == 0)
        return out;
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    const double smax = sv.size() > 0 ? sv(0) : 0.0;
    if (rank_tol < 0.0)
        rank_tol = double(std::max(m.rows(), m.cols())) * std::numeric_limits<double>::epsilon() * smax;
    index_t rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > rank_tol)
            ++rank;
    out.rank = rank;
    if (rank > 0)
        out.scores = svd.matrixU().leftCols(Eigen::Index(rank)).rowwise().squaredNorm();
    return out;
}

inline ProbVector core_dist_uniform(const TRCore& core) { return ProbVector::uniform(core.mode_dim()); }

/** p(i) = l_i(G_(2)) / rank(G_(2)). */
inline ProbVector core_dist_leverage(const TRCore& core) {
    const auto lev = leverage_scores(core_unfolding(core));
    if (lev.rank == 0)
        throw std::domain_error("core_dist_leverage: core unfolding has rank zero");
    std::vector<double> p(std::size_t(lev.scores.size()));
    for (std::size_t i = 0; i < p.size(); ++i)
        p[i] = lev.scores(Eigen::Index(i)) / double(lev.rank);
    // Scores sum to the rank only up to rounding; renormalize.
    return ProbVector::from_weights(p);
}

/** p(i) = ||G(:, i, :)||_F^2 / ||G||_F^2. */
inline ProbVector core_dist_euclidean(const TRCore& core) {
    std::vector<double> w(core.mode_dim());
    for (index_t i = 0; i < core.mode_dim(); ++i)
        w[i] = core.slice(i).squaredNorm();
    return ProbVector::from_weights(w);
}

/** Per-core distribution for a practical sampling kind. */
inline ProbVector core_distribution(SamplingKind kind, const TRCore& core) {
    switch (kind) {
    case SamplingKind::Uniform: return core_dist_uniform(core);
    case SamplingKind::Leverage: return core_dist_leverage(core);
    case SamplingKind::Euclidean: return core_dist_euclidean(core);
    case SamplingKind::OptimalOracle: break;
    }
    throw std::invalid_argument("core_distribution: the optimal distribution is not a per-core product");
}

/**
 * Product distribution q^{!=n} over [J_n] with q(j) = prod_{k != n} p_k(i_k),
 * where j enumerates (i_{n+1}, ..., i_N, i_1, ..., i_{n-1}) with i_{n+1} fastest.
 * `dists` is indexed by core; entry n is ignored.
 */
inline std::vector<double> product_distribution(std::span<const ProbVector> dists, const Shape& shape,
                                                std::size_t n) {
    const std::size_t order = shape.order();
    std::vector<double> q{1.0};
    for (std::size_t c = 1; c < order; ++c) {
        const std::size_t k = (n + c) % order;
        const auto& pk = dists[k];
        if (pk.size() != shape[k])
            throw std::invalid_argument("product_distribution: distribution size mismatch for core " +
                                        std::to_string(k));
        std::vector<double> next(q.size() * pk.size());
        for (std::size_t i = 0; i < pk.size(); ++i)
            for (std::size_t j = 0; j < q.size(); ++j)
                next[j + i * q.size()] = q[j] * pk[i];
        q = std::move(next);
    }
    return q;
}

/**
 * Rows of G^{!=n}_{[2]} and the matching mode-n fibers of X, with the
 * probabilities they were drawn with.
 */
struct SampleBatch {
    std::size_t mode = 0;
    std::size_t order = 0;
    index_t count = 0;
    /// count x (order-1), row-major; column c holds the slice index of core (mode + 1 + c) % order.
    std::vector<index_t> idxs;
    /// Column of X_[n] (equivalently row of G^{!=n}_{[2]}) hit by each sample.
    std::vector<index_t> columns;
    Tensor3 sampled_subchain; ///< R_{n+1} x count x R_n
    Matrix sampled_fibers;    ///< I_n x count
    Vector p;                 ///< realized row probabilities

    [[nodiscard]] index_t idx(index_t f, std::size_t c) const { return idxs[f * (order - 1) + c]; }

    /// Sampled rows of G^{!=n}_{[2]}: count x R_n R_{n+1}.
    [[nodiscard]] Matrix subchain_rows() const { return mode2_unfolding(sampled_subchain); }
};

namespace detail {

// Natural strides of the tensor and the rotated-order strides of the X_[n] columns.
struct FiberLayout {
    std::vector<index_t> natural;
    std::vector<index_t> column;

    FiberLayout(const Shape& shape, std::size_t n) : natural(shape.order()), column(shape.order(), 0) {
        index_t s = 1;
        for (std::size_t k = 0; k < shape.order(); ++k) {
            natural[k] = s;
            s *= shape[k];
        }
        index_t c = 1;
        for (std::size_t r = 1; r < shape.order(); ++r) {
            const std::size_t k = (n + r) % shape.order();
            column[k] = c;
            c *= shape[k];
        }
    }
};

inline void check_batch_inputs(const TRDecomposition& dec, const DenseTensor& x, std::size_t n) {
    if (dec.shape() != x.shape())
        throw std::invalid_argument("sampling: decomposition shape does not match tensor");
    if (n >= dec.order())
        throw std::out_of_range("sampling: mode out of range");
}

// Builds the batch contents once idxs and p are filled in.
inline void assemble_batch(SampleBatch& b, const TRDecomposition& dec, const DenseTensor& x) {
    const std::size_t n = b.mode, order = b.order;
    const auto& shape = x.shape();
    const FiberLayout layout(shape, n);
    const index_t rn1 = dec.core((n + 1) % order).left_rank();

    b.columns.assign(b.count, 0);
    Tensor3 acc(rn1, b.count, rn1);
    for (index_t f = 0; f < b.count; ++f)
        acc.slice(f).setIdentity();
    for (std::size_t c = 0; c + 1 < order; ++c) {
        const std::size_t k = (n + 1 + c) % order;
        const auto& core = dec.core(k);
        Tensor3 picked(core.left_rank(), b.count, core.right_rank());
        for (index_t f = 0; f < b.count; ++f) {
            picked.slice(f) = core.slice(b.idx(f, c));
            b.columns[f] += b.idx(f, c) * layout.column[k];
        }
        acc = slices_hadamard(acc, picked);
    }
    b.sampled_subchain = std::move(acc);

    const index_t in = shape[n];
    b.sampled_fibers.resize(Eigen::Index(in), Eigen::Index(b.count));
    for (index_t f = 0; f < b.count; ++f) {
        index_t base = 0;
        for (std::size_t c = 0; c + 1 < order; ++c)
            base += b.idx(f, c) * layout.natural[(n + 1 + c) % order];
        for (index_t i = 0; i < in; ++i)
            b.sampled_fibers(Eigen::Index(i), Eigen::Index(f)) = x[base + i * layout.natural[n]];
    }
}

} // namespace detail

/**
 * Sampled subchain and data tensor with probabilities (SSDTP).
 *
 * Draws `count` slice indices with replacement for every core k != n from
 * dists[k], accumulates the sampled subchain by slices-Hadamard products
 * starting from identity slices, gathers the matching mode-n fibers of X and
 * the realized probabilities prod_k p_k(i_k). `stream_for_core(k)` supplies
 * the random stream used for core k.
 */
template <class StreamForCore>
    requires std::invocable<StreamForCore&, std::size_t>
SampleBatch ssdtp(const TRDecomposition& dec, const DenseTensor& x, std::size_t n, index_t count,
                  std::span<const ProbVector> dists, StreamForCore&& stream_for_core) {
    detail::check_batch_inputs(dec, x, n);
    if (count == 0)
        throw std::invalid_argument("ssdtp: batch size must be at least 1");
    if (dists.size() != dec.order())
        throw std::invalid_argument("ssdtp: expected one distribution per core");
    SampleBatch b;
    b.mode = n;
    b.order = dec.order();
    b.count = count;
    b.idxs.assign(count * (b.order - 1), 0);
    b.p = Vector::Ones(Eigen::Index(count));
    for (std::size_t c = 0; c + 1 < b.order; ++c) {
        const std::size_t k = (n + 1 + c) % b.order;
        const auto& pk = dists[k];
        if (pk.size() != dec.core(k).mode_dim())
            throw std::invalid_argument("ssdtp: distribution for core " + std::to_string(k) +
                                        " has wrong length");
        const CategoricalSampler sampler(pk.values());
        RandomStream& rng = stream_for_core(k);
        for (index_t f = 0; f < count; ++f) {
            const index_t i = sampler(rng);
            b.idxs[f * (b.order - 1) + c] = i;
            b.p(Eigen::Index(f)) *= pk[i];
        }
    }
    detail::assemble_batch(b, dec, x);
    return b;
}

/** SSDTP drawing every core from one stream, cores in order n+1, ..., n-1. */
inline SampleBatch ssdtp(const TRDecomposition& dec, const DenseTensor& x, std::size_t n, index_t count,
                         std::span<const ProbVector> dists, RandomStream& rng) {
    return ssdtp(dec, x, n, count, dists, [&rng](std::size_t) -> RandomStream& { return rng; });
}

/**
 * Draws rows of G^{!=n}_{[2]} directly from a joint distribution q over [J_n].
 * Used for the optimal-distribution diagnostics, where q is not a product.
 */
inline SampleBatch sample_from_joint(const TRDecomposition& dec, const DenseTensor& x, std::size_t n,
                                     index_t count, const ProbVector& q, RandomStream& rng) {
    detail::check_batch_inputs(dec, x, n);
    const auto& shape = x.shape();
    if (q.size() != shape.numel_except(n))
        throw std::invalid_argument("sample_from_joint: distribution length must equal J_n");
    if (count == 0)
        throw std::invalid_argument("sample_from_joint: batch size must be at least 1");
    SampleBatch b;
    b.mode = n;
    b.order = dec.order();
    b.count = count;
    b.idxs.assign(count * (b.order - 1), 0);
    b.p.resize(Eigen::Index(count));
    const CategoricalSampler sampler(q.values());
    for (index_t f = 0; f < count; ++f) {
        index_t j = sampler(rng);
        b.p(Eigen::Index(f)) = q[j];
        for (std::size_t c = 0; c + 1 < b.order; ++c) {
            const index_t ik = shape[(n + 1 + c) % b.order];
            b.idxs[f * (b.order - 1) + c] = j % ik;
            j /= ik;
        }
    }
    detail::assemble_batch(b, dec, x);
    return b;
}

/**
 * Diagnostic batch that enumerates every row of G^{!=n}_{[2]} exactly once,
 * each tagged with its uniform probability prod_{k != n} 1/I_k.
 */
inline SampleBatch complete_sample(const TRDecomposition& dec, const DenseTensor& x, std::size_t n) {
    detail::check_batch_inputs(dec, x, n);
    const auto& shape = x.shape();
    SampleBatch b;
    b.mode = n;
    b.order = dec.order();
    b.count = shape.numel_except(n);
    b.idxs.assign(b.count * (b.order - 1), 0);
    double p = 1.0;
    for (std::size_t c = 0; c + 1 < b.order; ++c)
        p *= 1.0 / double(shape[(n + 1 + c) % b.order]);
    b.p = Vector::Constant(Eigen::Index(b.count), p);
    for (index_t f = 0; f < b.count; ++f) {
        index_t j = f;
        for (std::size_t c = 0; c + 1 < b.order; ++c) {
            const index_t ik = shape[(n + 1 + c) % b.order];
            b.idxs[f * (b.order - 1) + c] = j % ik;
            j /= ik;
        }
    }
    detail::assemble_batch(b, dec, x);
    return b;
}

namespace detail {

inline std::vector<double> oracle_weights(const Matrix& residual, const Matrix& subchain) {
    if (residual.cols() != subchain.rows())
        throw std::invalid_argument("optimal distribution: residual columns must match subchain rows");
    std::vector<double> w(std::size_t(residual.cols()));
    for (Eigen::Index j = 0; j < residual.cols(); ++j)
        w[std::size_t(j)] = residual.col(j).norm() * subchain.row(j).norm();
    return w;
}

} // namespace detail

/**
 * Variance-minimizing row distribution q(j) proportional to
 * ||R(:, j)||_2 ||G^{!=n}_{[2]}(j, :)||_2, where R = X^t_[n] - X_[n].
 * Needs the full residual, so it is only meant for diagnostics.
 */
inline ProbVector optimal_distribution_oracle(const Matrix& residual, const Matrix& subchain) {
    const auto w = detail::oracle_weights(residual, subchain);
    return ProbVector::from_weights(w);
}

/**
 * Expected squared error of the unbiased stochastic gradient with batch size
 * `batch` under row distribution q:
 *   (1/|F|) sum_j ||R(:,j)||^2 ||G(j,:)||^2 / q_j - (1/|F|) ||R G||_F^2.
 */
inline double variance_functional(const Matrix& residual, const Matrix& subchain, const ProbVector& q,
                                  index_t batch) {
    if (batch == 0)
        throw std::invalid_argument("variance_functional: batch size must be at least 1");
    if (q.size() != std::size_t(subchain.rows()))
        throw std::invalid_argument("variance_functional: distribution length must equal J_n");
    const auto w = detail::oracle_weights(residual, subchain);
    double sum = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        if (w[j] == 0.0)
            continue;
        if (!(q[j] > 0.0))
            throw std::domain_error("variance_functional: zero probability on row " + std::to_string(j) +
                                    " with nonzero weight");
        sum += w[j] * w[j] / q[j];
    }
    const double grad_sq = (residual * subchain).squaredNorm();
    return (sum - grad_sq) / double(batch);
}

/** Closed-form minimum of variance_functional: ((sum_j w_j)^2 - ||R G||^2) / |F|. */
inline double optimal_variance(const Matrix& residual, const Matrix& subchain, index_t batch) {
    const auto w = detail::oracle_weights(residual, subchain);
    double s = 0.0;
    for (double v : w)
        s += v;
    return (s * s - (residual * subchain).squaredNorm()) / double(batch);
}

} // namespace trsgd

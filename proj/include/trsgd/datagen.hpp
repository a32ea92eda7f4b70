#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/QR>

#include "random.hpp"
#include "tensor.hpp"
#include "tensor_ring.hpp"

namespace trsgd {

enum class SynthKind { GaussianCores, IllConditioned };

/** Synthetic TR model with N cores of size R_true x I x R_true. */
struct SynthSpec {
    std::size_t order = 3;
    index_t dim = 20;
    index_t true_rank = 3;
    SynthKind kind = SynthKind::GaussianCores;
    double kappa = 1.0; ///< condition number of every G_{n(2)} (IllConditioned only)
    std::uint64_t seed = 0;
    /// Refuse to materialize tensors with more entries than this.
    index_t max_entries = index_t(1) << 28;
};

// Stream keys, kept apart so that generators never share draws.
namespace stream_key {
inline constexpr std::uint64_t gaussian_core = 1;
inline constexpr std::uint64_t orthonormal_u = 2;
inline constexpr std::uint64_t shared_v = 3;
inline constexpr std::uint64_t init = 4;
} // namespace stream_key

/** Core with i.i.d. N(0, sigma^2) entries drawn from `rng`. */
inline TRCore gaussian_core(index_t r_left, index_t dim, index_t r_right, double sigma, RandomStream& rng) {
    TRCore c(r_left, dim, r_right);
    for (auto& v : c.values())
        v = sigma * rng.normal();
    return c;
}

/** Independent Gaussian cores with the given ranks; core n uses its own stream. */
inline TRDecomposition random_decomposition(const Shape& shape, const std::vector<index_t>& ranks, double sigma,
                                            std::uint64_t seed, std::uint64_t key = stream_key::init) {
    if (ranks.size() != shape.order())
        throw std::invalid_argument("random_decomposition: need one rank per mode");
    std::vector<TRCore> cores;
    for (std::size_t n = 0; n < shape.order(); ++n) {
        if (ranks[n] == 0)
            throw std::invalid_argument("random_decomposition: ranks must be positive");
        auto rng = RandomStream::derive(seed, key, n);
        cores.push_back(gaussian_core(ranks[n], shape[n], ranks[(n + 1) % shape.order()], sigma, rng));
    }
    return TRDecomposition(std::move(cores));
}

inline TRDecomposition gaussian_cores(const SynthSpec& spec) {
    if (spec.kind != SynthKind::GaussianCores)
        throw std::invalid_argument("gaussian_cores: spec kind is not GaussianCores");
    if (spec.order < 2 || spec.dim == 0 || spec.true_rank == 0)
        throw std::invalid_argument("gaussian_cores: infeasible spec");
    return random_decomposition(Shape(std::vector<index_t>(spec.order, spec.dim)),
                                std::vector<index_t>(spec.order, spec.true_rank), 1.0, spec.seed,
                                stream_key::gaussian_core);
}

/**
 * m x k matrix with orthonormal columns: Q from the QR factorization of a
 * Gaussian matrix, with column signs chosen so that diag(R) > 0.
 */
inline Matrix random_orthonormal(index_t m, index_t k, RandomStream& rng) {
    if (k > m)
        throw std::invalid_argument("random_orthonormal: need k <= m");
    Matrix a(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
    for (Eigen::Index j = 0; j < a.cols(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            a(i, j) = rng.normal();
    Eigen::HouseholderQR<Matrix> qr(a);
    Matrix q = qr.householderQ() * Matrix::Identity(a.rows(), a.cols());
    const Matrix r = qr.matrixQR().topRows(a.cols()).template triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < q.cols(); ++j)
        if (r(j, j) < 0.0)
            q.col(j) *= -1.0;
    return q;
}

/// s_i = kappa^{-i/(m-1)}, i = 0..m-1, so s_0 = 1 and s_{m-1} = 1/kappa.
inline Vector geometric_spectrum(index_t m, double kappa) {
    Vector s(static_cast<Eigen::Index>(m));
    for (index_t i = 0; i < m; ++i)
        s(Eigen::Index(i)) = m == 1 ? 1.0 : std::pow(kappa, -double(i) / double(m - 1));
    return s;
}

/**
 * Cores with G_{n(2)} = U_n S V^T: U_n fresh I x R^2 orthonormal per core,
 * S geometric from 1 down to 1/kappa, V one R^2 x R^2 orthogonal matrix shared
 * by all cores.
 */
inline TRDecomposition ill_conditioned_cores(const SynthSpec& spec) {
    if (spec.kind != SynthKind::IllConditioned)
        throw std::invalid_argument("ill_conditioned_cores: spec kind is not IllConditioned");
    const index_t r = spec.true_rank, r2 = r * r;
    if (spec.order < 2 || r == 0)
        throw std::invalid_argument("ill_conditioned_cores: infeasible spec");
    if (spec.dim < r2)
        throw std::invalid_argument("ill_conditioned_cores: need I >= R_true^2 (I = " + std::to_string(spec.dim) +
                                    ", R_true^2 = " + std::to_string(r2) + ")");
    if (!(spec.kappa >= 1.0))
        throw std::invalid_argument("ill_conditioned_cores: kappa must be at least 1");
    auto vrng = RandomStream::derive(spec.seed, stream_key::shared_v);
    const Matrix v = random_orthonormal(r2, r2, vrng);
    const Vector s = geometric_spectrum(r2, spec.kappa);
    const Matrix sv = s.asDiagonal() * v.transpose();
    std::vector<TRCore> cores;
    for (std::size_t n = 0; n < spec.order; ++n) {
        auto urng = RandomStream::derive(spec.seed, stream_key::orthonormal_u, n);
        const Matrix u = random_orthonormal(spec.dim, r2, urng);
        cores.push_back(fold_classical_mode2(u * sv, r, r));
    }
    return TRDecomposition(std::move(cores));
}

inline TRDecomposition synth_cores(const SynthSpec& spec) {
    return spec.kind == SynthKind::GaussianCores ? gaussian_cores(spec) : ill_conditioned_cores(spec);
}

struct SynthData {
    DenseTensor tensor;
    TRDecomposition truth;
};

/** Ground-truth cores and their reconstruction. */
inline SynthData synth_tensor(const SynthSpec& spec) {
    double entries = 1.0;
    for (std::size_t n = 0; n < spec.order; ++n)
        entries *= double(spec.dim);
    if (entries > double(spec.max_entries))
        throw std::length_error("synth_tensor: " + std::to_string(entries) + " entries exceed the configured cap");
    auto truth = synth_cores(spec);
    auto x = tr_reconstruct(truth);
    return {std::move(x), std::move(truth)};
}

} // namespace trsgd

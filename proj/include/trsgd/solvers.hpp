#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/QR>
#include <spdlog/spdlog.h>

#include "datagen.hpp"
#include "estimators.hpp"
#include "metrics.hpp"
#include "sampling.hpp"
#include "tensor.hpp"
#include "tensor_ring.hpp"
#include "trace.hpp"

namespace trsgd {

struct StoppingCriteria {
    long long max_iters = 1000;                                   ///< T
    double max_seconds = std::numeric_limits<double>::infinity(); ///< MT
    double rse_tol = 0.0;                                         ///< stop once RSE < tol
};

struct SolverConfig {
    std::vector<index_t> ranks; ///< target TR-ranks (R_1, ..., R_N)
    StepSchedule step = ConstantStep{1e-3};
    index_t batch_grad = 200; ///< |F_n|; also the row budget of TR-ALS-Sampled
    index_t batch_hess = 200; ///< |H_n|
    /// Draw the Hessian rows from the gradient batch instead of an independent one.
    bool share_batches = false;
    double damping = 0.0; ///< eta^t, added to the (sampled) Gram matrix
    bool damping_fallback = true;
    SamplingSpec sampling{};
    StoppingCriteria stopping{};
    /// RSE cadence in iterations; 0 picks 1 below 1e6 tensor entries, else 100.
    long long eval_every = 0;
    std::uint64_t seed = 0;
    double init_sigma = 1.0;
    /// Starting point; random Gaussian cores with init_sigma when empty.
    std::optional<TRDecomposition> initial;
    bool time_includes_eval = false;
    double divergence_threshold = 1e8;
    /// Permits the optimal-distribution oracle, which materializes full residuals.
    bool diagnostic = false;
    /// Called at every evaluation point.
    std::function<void(const TraceRecord&)> on_eval;
};

struct SolveResult {
    TRDecomposition decomposition;
    RunTrace trace;
};

/** Flat JSON rendering of the numeric configuration, stored in RunTrace::config. */
inline std::string describe(const SolverConfig& c) {
    std::ostringstream os;
    os << "{\"ranks\":[";
    for (std::size_t i = 0; i < c.ranks.size(); ++i)
        os << (i ? "," : "") << c.ranks[i];
    os << "],";
    if (const auto* s = std::get_if<ConstantStep>(&c.step))
        os << "\"step\":{\"kind\":\"constant\",\"alpha\":" << format_double(s->alpha) << "},";
    else if (const auto* r = std::get_if<RobbinsMonroStep>(&c.step))
        os << "\"step\":{\"kind\":\"robbins_monro\",\"alpha0\":" << format_double(r->alpha0)
           << ",\"gamma\":" << format_double(r->gamma) << "},";
    else if (const auto* a = std::get_if<AdaGradStep>(&c.step))
        os << "\"step\":{\"kind\":\"adagrad\",\"eta\":" << format_double(a->eta) << ",\"b\":" << format_double(a->b)
           << ",\"eps\":" << format_double(a->eps) << "},";
    os << "\"batch_grad\":" << c.batch_grad << ",\"batch_hess\":" << c.batch_hess
       << ",\"share_batches\":" << (c.share_batches ? "true" : "false") << ",\"damping\":" << format_double(c.damping)
       << ",\"sampling\":\"" << to_string(c.sampling.kind) << "\",\"refresh\":\""
       << (c.sampling.refresh == RefreshPolicy::EveryIteration ? "iteration" : "sweep") << "\""
       << ",\"max_iters\":" << c.stopping.max_iters << ",\"max_seconds\":";
    if (std::isfinite(c.stopping.max_seconds))
        os << format_double(c.stopping.max_seconds);
    else
        os << "null";
    os << ",\"rse_tol\":" << format_double(c.stopping.rse_tol) << ",\"eval_every\":" << c.eval_every
       << ",\"seed\":" << c.seed << ",\"init_sigma\":" << format_double(c.init_sigma) << "}";
    return os.str();
}

namespace detail {

// Keys separating the random streams a solver consumes at one iteration.
enum class Purpose : std::uint64_t { Mode = 1, Gradient = 2, Hessian = 3, Joint = 4, AlsSample = 5 };

inline RandomStream solver_stream(std::uint64_t seed, long long t, Purpose p, std::uint64_t k = 0) {
    return RandomStream::derive(seed, std::uint64_t(t), (std::uint64_t(p) << 32) | k);
}

inline TRDecomposition initial_decomposition(const DenseTensor& x, const SolverConfig& c) {
    if (c.initial) {
        if (c.initial->shape() != x.shape())
            throw std::invalid_argument("solver: initial decomposition does not match tensor shape");
        return *c.initial;
    }
    if (c.ranks.size() != x.order())
        throw std::invalid_argument("solver: need one target rank per mode");
    return random_decomposition(x.shape(), c.ranks, c.init_sigma, c.seed);
}

inline void validate_config(const SolverConfig& c) {
    validate(c.step);
    if (c.batch_grad == 0 || c.batch_hess == 0)
        throw std::invalid_argument("solver: batch sizes must be at least 1");
    if (c.damping < 0.0)
        throw std::invalid_argument("solver: damping must be nonnegative");
    if (c.stopping.max_iters < 0 || std::isnan(c.stopping.max_seconds))
        throw std::invalid_argument("solver: invalid stopping criteria");
    if (c.stopping.max_iters == std::numeric_limits<long long>::max() && !std::isfinite(c.stopping.max_seconds) &&
        !(c.stopping.rse_tol > 0.0))
        throw std::invalid_argument("solver: at least one stopping criterion must be finite");
    if (c.sampling.kind == SamplingKind::OptimalOracle && !c.diagnostic)
        throw std::invalid_argument("solver: the optimal distribution is only available in diagnostic mode");
}

inline double max_core_norm(const TRDecomposition& dec) {
    double m = 0.0;
    for (const auto& c : dec.cores())
        m = std::max(m, frobenius_norm(c.values()));
    return m;
}

/**
 * Shared outer loop: evaluates RSE at iteration 0 and every `eval_every`
 * iterations (and whenever a budget runs out), checking tol, then T, then MT.
 */
template <class Step>
SolveResult run_solver(const std::string& name, const std::string& sampling, const DenseTensor& x,
                       const SolverConfig& config, TRDecomposition dec, Step&& step) {
    using clock = std::chrono::steady_clock;
    RunTrace trace;
    trace.algorithm = name;
    trace.sampling = sampling;
    trace.config = describe(config);

    const auto& stop = config.stopping;
    long long eval_every = config.eval_every;
    if (eval_every <= 0)
        eval_every = x.size() < 1'000'000 ? 1 : 100;

    double elapsed = 0.0;
    const auto evaluate = [&](long long t) -> std::optional<TerminalReason> {
        const auto t0 = clock::now();
        const double r = rse(dec, x);
        const double norm = max_core_norm(dec);
        if (config.time_includes_eval)
            elapsed += std::chrono::duration<double>(clock::now() - t0).count();
        TraceRecord rec{t, elapsed, r};
        trace.records.push_back(rec);
        if (config.on_eval)
            config.on_eval(rec);
        if (!(norm <= config.divergence_threshold)) {
            if (!trace.diverged)
                spdlog::warn("{}: iterate norm {:.3e} exceeds {:.1e} at iteration {}", name, norm,
                             config.divergence_threshold, t);
            trace.diverged = true;
        }
        if (!std::isfinite(r)) {
            trace.diverged = true;
            return TerminalReason::Diverged;
        }
        if (r < stop.rse_tol)
            return TerminalReason::Tol;
        if (t >= stop.max_iters)
            return TerminalReason::MaxIters;
        if (elapsed >= stop.max_seconds)
            return TerminalReason::MaxTime;
        return std::nullopt;
    };

    auto reason = evaluate(0);
    for (long long t = 0; !reason; ++t) {
        const auto t0 = clock::now();
        step(dec, t);
        elapsed += std::chrono::duration<double>(clock::now() - t0).count();
        const long long done = t + 1;
        if (done % eval_every == 0 || done >= stop.max_iters || elapsed >= stop.max_seconds)
            reason = evaluate(done);
    }
    trace.terminal_reason = *reason;
    return {std::move(dec), std::move(trace)};
}

// G_{n(2)} += step * direction, with per-entry AdaGrad steps when configured.
inline void apply_direction(TRCore& core, const Matrix& direction, const StepSchedule& schedule, long long t,
                            AdaGradState& adagrad, std::size_t n) {
    Matrix g = core_unfolding(core);
    if (const auto* a = std::get_if<AdaGradStep>(&schedule))
        g.array() += adagrad_update(adagrad, n, direction, *a).array() * direction.array();
    else
        g += step_size(schedule, t) * direction;
    assign_core_unfolding(core, g);
}

inline std::vector<Matrix> all_unfoldings(const DenseTensor& x) {
    std::vector<Matrix> out;
    for (std::size_t n = 0; n < x.order(); ++n)
        out.push_back(mode_n_unfolding(x, n));
    return out;
}

} // namespace detail

/**
 * One exact ALS update of core n: G_{n(2)} = argmin_Z ||S Z^T - X_[n]^T||_F
 * solved with a complete orthogonal decomposition (minimum-norm when S is
 * rank deficient). Returns false when S is rank deficient.
 */
inline bool als_update_core(TRDecomposition& dec, const Matrix& x_unfolded, std::size_t n) {
    const Matrix s = subchain_unfolding(dec, n);
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(s);
    const Matrix zt = cod.solve(x_unfolded.transpose());
    assign_core_unfolding(dec.core(n), zt.transpose());
    return cod.rank() == s.cols();
}

inline SolveResult tr_als(const DenseTensor& x, const SolverConfig& config) {
    detail::validate_config(config);
    const auto xn = detail::all_unfoldings(x);
    bool warned = false;
    return detail::run_solver("tr-als", "", x, config, detail::initial_decomposition(x, config),
                              [&](TRDecomposition& dec, long long) {
                                  for (std::size_t n = 0; n < dec.order(); ++n)
                                      if (!als_update_core(dec, xn[n], n) && !warned) {
                                          spdlog::warn("tr-als: rank-deficient subchain for mode {}, "
                                                       "using the minimum-norm solution",
                                                       n);
                                          warned = true;
                                      }
                              });
}

/**
 * Sampled ALS: each core solves the least-squares problem restricted to
 * `batch_grad` rows drawn by SSDTP, rows reweighted by 1/sqrt(|F| p).
 */
inline SolveResult tr_als_sampled(const DenseTensor& x, const SolverConfig& config) {
    detail::validate_config(config);
    if (config.sampling.kind == SamplingKind::OptimalOracle)
        throw std::invalid_argument("tr-als-sampled: optimal distribution not supported");
    const auto kind = config.sampling.kind;
    return detail::run_solver(
        "tr-als-sampled", std::string(to_string(kind)), x, config, detail::initial_decomposition(x, config),
        [&](TRDecomposition& dec, long long t) {
            const std::size_t order = dec.order();
            for (std::size_t n = 0; n < order; ++n) {
                std::vector<ProbVector> dists(order);
                for (std::size_t k = 0; k < order; ++k)
                    if (k != n)
                        dists[k] = core_distribution(kind, dec.core(k));
                std::vector<RandomStream> streams;
                for (std::size_t k = 0; k < order; ++k)
                    streams.push_back(detail::solver_stream(config.seed, t, detail::Purpose::AlsSample, k + n * order));
                const auto batch = ssdtp(dec, x, n, config.batch_grad, dists,
                                         [&](std::size_t k) -> RandomStream& { return streams[k]; });
                Vector w(batch.p.size());
                for (Eigen::Index f = 0; f < w.size(); ++f)
                    w(f) = 1.0 / std::sqrt(double(batch.count) * batch.p(f));
                const Matrix s = w.asDiagonal() * batch.subchain_rows();
                const Matrix rhs = w.asDiagonal() * batch.sampled_fibers.transpose();
                Eigen::CompleteOrthogonalDecomposition<Matrix> cod(s);
                assign_core_unfolding(dec.core(n), cod.solve(rhs).transpose());
            }
        });
}

inline SolveResult tr_gd(const DenseTensor& x, const SolverConfig& config) {
    detail::validate_config(config);
    const auto xn = detail::all_unfoldings(x);
    auto dec0 = detail::initial_decomposition(x, config);
    AdaGradState adagrad(dec0);
    return detail::run_solver("tr-gd", "", x, config, std::move(dec0), [&](TRDecomposition& dec, long long t) {
        std::vector<Matrix> dirs;
        for (std::size_t n = 0; n < dec.order(); ++n)
            dirs.push_back(-full_gradient(dec, xn[n], n));
        for (std::size_t n = 0; n < dec.order(); ++n)
            detail::apply_direction(dec.core(n), dirs[n], config.step, t, adagrad, n);
    });
}

/** -grad_n ((G^{!=n})^T G^{!=n} + damping I)^{-1} for every core, all at the current iterate. */
inline std::vector<Matrix> scaled_gd_directions(const TRDecomposition& dec, const std::vector<Matrix>& xn,
                                                double damping, bool allow_fallback = true) {
    std::vector<Matrix> dirs;
    for (std::size_t n = 0; n < dec.order(); ++n) {
        Matrix gram = subchain_gram(dec, n);
        gram.diagonal().array() += damping;
        dirs.push_back(right_solve_spd(full_gradient(dec, xn[n], n), gram, damping, allow_fallback));
    }
    return dirs;
}

inline SolveResult tr_scaled_gd(const DenseTensor& x, const SolverConfig& config) {
    detail::validate_config(config);
    const auto xn = detail::all_unfoldings(x);
    auto dec0 = detail::initial_decomposition(x, config);
    AdaGradState adagrad(dec0);
    return detail::run_solver("tr-scaled-gd", "", x, config, std::move(dec0),
                              [&](TRDecomposition& dec, long long t) {
                                  const auto dirs = scaled_gd_directions(dec, xn, config.damping,
                                                                         config.damping_fallback);
                                  for (std::size_t n = 0; n < dec.order(); ++n)
                                      detail::apply_direction(dec.core(n), dirs[n], config.step, t, adagrad, n);
                              });
}

/**
 * One ScaledGD step in the stacked form vec(Y) - alpha H^{-1} grad f(Y) with
 * H = blockdiag((G^{!=n})^T G^{!=n} kron I_{I_n}) + damping I, assembled
 * explicitly. Reference path for small instances.
 */
inline TRDecomposition scaled_gd_step_vectorized(const TRDecomposition& dec, const DenseTensor& x, double alpha,
                                                 double damping = 0.0) {
    const std::size_t order = dec.order();
    std::vector<Eigen::Index> offsets{0};
    for (const auto& c : dec.cores())
        offsets.push_back(offsets.back() + Eigen::Index(c.mode_dim() * c.left_rank() * c.right_rank()));
    const Eigen::Index total = offsets.back();
    Matrix h = Matrix::Zero(total, total);
    Vector grad(total), y(total);
    for (std::size_t n = 0; n < order; ++n) {
        const Matrix g = full_gradient(dec, x, n);
        const Matrix gn = core_unfolding(dec.core(n));
        grad.segment(offsets[n], g.size()) = g.reshaped();
        y.segment(offsets[n], gn.size()) = gn.reshaped();
        const Matrix gram = subchain_gram(dec, n);
        const Eigen::Index in = g.rows();
        for (Eigen::Index a = 0; a < gram.rows(); ++a)
            for (Eigen::Index b = 0; b < gram.cols(); ++b)
                for (Eigen::Index i = 0; i < in; ++i)
                    h(offsets[n] + a * in + i, offsets[n] + b * in + i) = gram(a, b);
    }
    h.diagonal().array() += damping;
    const Vector step = h.ldlt().solve(grad);
    y -= alpha * step;
    TRDecomposition out = dec;
    for (std::size_t n = 0; n < order; ++n) {
        const auto& c = dec.core(n);
        const Eigen::Index rows = Eigen::Index(c.mode_dim()), cols = Eigen::Index(c.left_rank() * c.right_rank());
        assign_core_unfolding(out.core(n), y.segment(offsets[n], rows * cols).reshaped(rows, cols));
    }
    return out;
}

namespace detail {

// Per-core distribution cache: entries are recomputed lazily after the core
// changes (EveryIteration) or once per sweep of N iterations (EverySweep).
class DistributionCache {
public:
    DistributionCache(SamplingSpec spec, std::size_t order) : spec_(spec), cache_(order) {}

    void begin_iteration(long long t) {
        if (spec_.refresh == RefreshPolicy::EverySweep && t % (long long)cache_.size() == 0)
            for (auto& c : cache_)
                c.reset();
    }

    void core_updated(std::size_t n) {
        if (spec_.refresh == RefreshPolicy::EveryIteration)
            cache_[n].reset();
    }

    std::vector<ProbVector> for_mode(const TRDecomposition& dec, std::size_t n) {
        std::vector<ProbVector> out(dec.order());
        for (std::size_t k = 0; k < dec.order(); ++k) {
            if (k == n)
                continue;
            if (!cache_[k])
                cache_[k] = core_distribution(spec_.kind, dec.core(k));
            out[k] = *cache_[k];
        }
        return out;
    }

private:
    SamplingSpec spec_;
    std::vector<std::optional<ProbVector>> cache_;
};

inline SampleBatch draw_batch(const TRDecomposition& dec, const DenseTensor& x, const std::vector<Matrix>& xn,
                              std::size_t n, index_t count, const SolverConfig& config, DistributionCache& dists,
                              long long t, Purpose purpose) {
    if (config.sampling.kind == SamplingKind::OptimalOracle) {
        const Matrix s = subchain_unfolding(dec, n);
        const Matrix resid = core_unfolding(dec.core(n)) * s.transpose() - xn[n];
        const auto q = optimal_distribution_oracle(resid, s);
        auto rng = solver_stream(config.seed, t, Purpose::Joint, std::uint64_t(purpose));
        return sample_from_joint(dec, x, n, count, q, rng);
    }
    const auto d = dists.for_mode(dec, n);
    std::vector<RandomStream> streams;
    for (std::size_t k = 0; k < dec.order(); ++k)
        streams.push_back(solver_stream(config.seed, t, purpose, k));
    return ssdtp(dec, x, n, count, d, [&](std::size_t k) -> RandomStream& { return streams[k]; });
}

inline SolveResult block_randomized(const DenseTensor& x, const SolverConfig& config, bool scaled) {
    validate_config(config);
    std::vector<Matrix> xn;
    if (config.sampling.kind == SamplingKind::OptimalOracle)
        xn = all_unfoldings(x);
    auto dec0 = initial_decomposition(x, config);
    AdaGradState adagrad(dec0);
    DistributionCache dists(config.sampling, dec0.order());
    const std::string name = scaled ? "tr-scaled-brsgd" : "tr-brsgd";
    return run_solver(name, std::string(to_string(config.sampling.kind)), x, config, std::move(dec0),
                      [&](TRDecomposition& dec, long long t) {
                          dists.begin_iteration(t);
                          auto mode_rng = solver_stream(config.seed, t, Purpose::Mode);
                          const std::size_t n = std::size_t(mode_rng.below(dec.order()));
                          const auto batch =
                              draw_batch(dec, x, xn, n, config.batch_grad, config, dists, t, Purpose::Gradient);
                          const auto g = stochastic_gradient(dec, batch);
                          Matrix dir;
                          if (scaled) {
                              const index_t jn = x.shape().numel_except(n);
                              const auto h =
                                  config.share_batches
                                      ? stochastic_hessian(batch, jn, config.damping)
                                      : stochastic_hessian(draw_batch(dec, x, xn, n, config.batch_hess, config, dists,
                                                                      t, Purpose::Hessian),
                                                           jn, config.damping);
                              dir = search_direction(g, &h, config.damping_fallback);
                          } else {
                              dir = search_direction(g);
                          }
                          apply_direction(dec.core(n), dir, config.step, t, adagrad, n);
                          dists.core_updated(n);
                      });
}

} // namespace detail

/** Block-randomized SGD: one uniformly drawn core per iteration, sampled gradient step. */
inline SolveResult tr_brsgd(const DenseTensor& x, const SolverConfig& config) {
    return detail::block_randomized(x, config, false);
}

/** TR-BRSGD with the direction preconditioned by the damped sampled Hessian. */
inline SolveResult tr_scaled_brsgd(const DenseTensor& x, const SolverConfig& config) {
    return detail::block_randomized(x, config, true);
}

enum class Algorithm { Als, AlsSampled, Gd, ScaledGd, Brsgd, ScaledBrsgd };

inline std::string_view to_string(Algorithm a) {
    switch (a) {
    case Algorithm::Als: return "tr-als";
    case Algorithm::AlsSampled: return "tr-als-sampled";
    case Algorithm::Gd: return "tr-gd";
    case Algorithm::ScaledGd: return "tr-scaled-gd";
    case Algorithm::Brsgd: return "tr-brsgd";
    case Algorithm::ScaledBrsgd: return "tr-scaled-brsgd";
    }
    return "unknown";
}

inline Algorithm algorithm_from_string(std::string_view s) {
    for (auto a : {Algorithm::Als, Algorithm::AlsSampled, Algorithm::Gd, Algorithm::ScaledGd, Algorithm::Brsgd,
                   Algorithm::ScaledBrsgd})
        if (s == to_string(a))
            return a;
    throw std::invalid_argument("unknown algorithm '" + std::string(s) + "'");
}

/// Whether the algorithm draws samples (and so has a sampling variant).
inline bool is_sampled(Algorithm a) {
    return a == Algorithm::AlsSampled || a == Algorithm::Brsgd || a == Algorithm::ScaledBrsgd;
}

inline SolveResult solve(Algorithm a, const DenseTensor& x, const SolverConfig& config) {
    switch (a) {
    case Algorithm::Als: return tr_als(x, config);
    case Algorithm::AlsSampled: return tr_als_sampled(x, config);
    case Algorithm::Gd: return tr_gd(x, config);
    case Algorithm::ScaledGd: return tr_scaled_gd(x, config);
    case Algorithm::Brsgd: return tr_brsgd(x, config);
    case Algorithm::ScaledBrsgd: return tr_scaled_brsgd(x, config);
    }
    throw std::invalid_argument("solve: unknown algorithm");
}

} // namespace trsgd

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"

using namespace trsgd;
using testutil::random_dec;
using testutil::random_tensor;
using testutil::rel_err;

namespace {

SynthData gaussian_problem(index_t dim, index_t rank, std::uint64_t seed, std::size_t order = 3) {
    SynthSpec s;
    s.order = order;
    s.dim = dim;
    s.true_rank = rank;
    s.seed = seed;
    return synth_tensor(s);
}

SolverConfig base_config(index_t rank, std::size_t order = 3) {
    SolverConfig c;
    c.ranks.assign(order, rank);
    c.seed = 5;
    return c;
}

bool same_rse(const RunTrace& a, const RunTrace& b) {
    if (a.records.size() != b.records.size())
        return false;
    for (std::size_t i = 0; i < a.records.size(); ++i)
        if (a.records[i].iteration != b.records[i].iteration || a.records[i].rse != b.records[i].rse)
            return false;
    return true;
}

} // namespace

// Fixed start that recovers; random starts can stall in a local minimum.
TEST(TrAls, ExactRecovery) {
    const auto data = gaussian_problem(20, 3, 1);
    auto c = base_config(3);
    c.stopping.max_iters = 50;
    c.stopping.rse_tol = 1e-8;
    const auto r = tr_als(data.tensor, c);
    EXPECT_EQ(r.trace.terminal_reason, TerminalReason::Tol);
    EXPECT_LT(r.trace.last().rse, 1e-8);
    EXPECT_LE(r.trace.last().iteration, 50);
    r.trace.validate();
}

TEST(TrAls, TruthIsFixedPoint) {
    const auto data = gaussian_problem(8, 2, 2);
    auto c = base_config(2);
    c.initial = data.truth;
    c.stopping.max_iters = 3;
    const auto r = tr_als(data.tensor, c);
    for (const auto& rec : r.trace.records)
        EXPECT_LT(rec.rse, 1e-12);
}

TEST(TrAls, ObjectiveNonIncreasingPerCoreUpdate) {
    for (std::uint64_t inst = 0; inst < 10; ++inst) {
        const std::vector<index_t> dims{4 + inst % 3, 5, 3 + inst % 2};
        const auto x = random_tensor(dims, 40 + inst);
        auto dec = random_dec(dims, {2, 3, 2}, 60 + inst);
        const double f0 = objective(dec, x);
        double prev = f0;
        for (int sweep = 0; sweep < 5; ++sweep)
            for (std::size_t n = 0; n < 3; ++n) {
                als_update_core(dec, mode_n_unfolding(x, n), n);
                const double f = objective(dec, x);
                EXPECT_LE(f, prev + 1e-12 * f0) << "instance " << inst << " sweep " << sweep << " core " << n;
                prev = f;
            }
    }
}

TEST(TrAls, MonotoneTraceOnPlantedProblem) {
    const auto data = gaussian_problem(20, 3, 3);
    auto c = base_config(3);
    c.stopping.max_iters = 15;
    const auto r = tr_als(data.tensor, c);
    for (std::size_t i = 1; i < r.trace.records.size(); ++i)
        EXPECT_LE(r.trace.records[i].rse, r.trace.records[i - 1].rse * (1 + 1e-10) + 1e-15);
}

TEST(TrAls, RankDeficientSubchainUsesMinimumNorm) {
    const auto x = random_tensor({2, 2, 2}, 1);
    auto dec = random_dec({2, 2, 2}, {3, 3, 3}, 2);
    EXPECT_FALSE(als_update_core(dec, mode_n_unfolding(x, 0), 0));
    auto c = base_config(3);
    c.stopping.max_iters = 3;
    EXPECT_NO_THROW(tr_als(x, c));
}

TEST(TrGd, ZeroStepKeepsIterates) {
    const auto data = gaussian_problem(6, 2, 4);
    auto c = base_config(2);
    c.step = ConstantStep{0.0};
    c.stopping.max_iters = 4;
    const auto init = random_dec({6, 6, 6}, {2, 2, 2}, 9);
    c.initial = init;
    EXPECT_EQ(tr_gd(data.tensor, c).decomposition, init);
}

TEST(TrGd, ZeroResidualStartStaysFixed) {
    const auto data = gaussian_problem(6, 2, 4);
    auto c = base_config(2);
    c.step = ConstantStep{1e-2};
    c.stopping.max_iters = 4;
    c.initial = data.truth;
    const auto r = tr_gd(data.tensor, c);
    for (std::size_t n = 0; n < 3; ++n)
        EXPECT_LT(rel_err(core_unfolding(r.decomposition.core(n)), core_unfolding(data.truth.core(n))), 1e-12);
}

TEST(TrGd, RseDecreasesWithTunedStep) {
    const auto data = gaussian_problem(8, 2, 5);
    auto c = base_config(2);
    c.init_sigma = 0.5;
    c.step = ConstantStep{2e-3};
    c.stopping.max_iters = 100;
    const auto r = tr_gd(data.tensor, c);
    EXPECT_LT(r.trace.last().rse, 0.9 * r.trace.records.front().rse);
}

TEST(TrScaledGd, OrthonormalSubchainMatchesGdStep) {
    // N = 2: the subchain of core 0 is core 1, whose mode-2 unfolding is orthonormal here
    auto rng = RandomStream::derive(3, 3);
    const Matrix q = random_orthonormal(6, 4, rng);
    Tensor3 core1(2, 6, 2);
    for (index_t a = 0; a < 2; ++a)
        for (index_t j = 0; j < 6; ++j)
            for (index_t c = 0; c < 2; ++c)
                core1(a, j, c) = q(Eigen::Index(j), Eigen::Index(c + a * 2));
    auto rng2 = RandomStream::derive(4, 4);
    const TRDecomposition dec({gaussian_core(2, 5, 2, 1.0, rng2), core1});
    ASSERT_TRUE(subchain_gram(dec, 0).isIdentity(1e-13));
    const auto x = random_tensor({5, 6}, 2);
    const std::vector<Matrix> xn{mode_n_unfolding(x, 0), mode_n_unfolding(x, 1)};
    const auto dirs = scaled_gd_directions(dec, xn, 0.0);
    EXPECT_LT(rel_err(dirs[0], Matrix(-full_gradient(dec, x, 0))), 1e-12);
}

TEST(TrScaledGd, MatrixFormEqualsVectorizedForm) {
    const auto dec = random_dec({4, 5, 3}, {2, 3, 2}, 8);
    const auto x = random_tensor({4, 5, 3}, 9);
    for (double damping : {0.0, 0.5}) {
        const double alpha = 0.3;
        const auto vec = scaled_gd_step_vectorized(dec, x, alpha, damping);
        std::vector<Matrix> xn;
        for (std::size_t n = 0; n < 3; ++n)
            xn.push_back(mode_n_unfolding(x, n));
        const auto dirs = scaled_gd_directions(dec, xn, damping);
        for (std::size_t n = 0; n < 3; ++n) {
            const Matrix expected = core_unfolding(dec.core(n)) + alpha * dirs[n];
            EXPECT_LT((core_unfolding(vec.core(n)) - expected).cwiseAbs().maxCoeff(), 1e-10);
        }
    }
}

TEST(TrScaledGd, SingularGramWithoutDampingThrows) {
    const auto x = random_tensor({3, 3, 3}, 1);
    auto c = base_config(2);
    c.initial = TRDecomposition({TRCore(2, 3, 2), TRCore(2, 3, 2), TRCore(2, 3, 2)});
    c.stopping.max_iters = 1;
    EXPECT_THROW(tr_scaled_gd(x, c), SingularPreconditioner);
}

TEST(TrScaledGd, FasterThanGdOnIllConditionedProblem) {
    SynthSpec s;
    s.order = 3;
    s.dim = 9;
    s.true_rank = 3;
    s.kind = SynthKind::IllConditioned;
    s.kappa = 1e4;
    s.seed = 3;
    const auto data = synth_tensor(s);
    const auto iterations_to = [&](Algorithm a, double alpha) {
        auto c = base_config(3);
        c.init_sigma = 0.5;
        c.step = ConstantStep{alpha};
        c.damping = 1e-9;
        c.stopping.max_iters = 3000;
        c.stopping.rse_tol = 1e-3;
        const auto r = solve(a, data.tensor, c);
        return r.trace.terminal_reason == TerminalReason::Tol ? r.trace.last().iteration
                                                             : std::numeric_limits<long long>::max();
    };
    long long best_gd = std::numeric_limits<long long>::max(), best_scaled = best_gd;
    for (double a : {0.03, 0.1, 0.3, 1.0})
        best_gd = std::min(best_gd, iterations_to(Algorithm::Gd, a));
    for (double a : {0.1, 0.3, 0.5, 1.0})
        best_scaled = std::min(best_scaled, iterations_to(Algorithm::ScaledGd, a));
    EXPECT_LT(best_scaled, best_gd);
}

TEST(TrBrsgd, DeterministicForFixedSeed) {
    const auto data = gaussian_problem(10, 2, 6);
    for (const auto kind : {SamplingKind::Uniform, SamplingKind::Leverage, SamplingKind::Euclidean}) {
        auto c = base_config(2);
        c.sampling.kind = kind;
        c.step = ConstantStep{0.05};
        c.batch_grad = 20;
        c.stopping.max_iters = 60;
        const auto a = tr_brsgd(data.tensor, c);
        const auto b = tr_brsgd(data.tensor, c);
        EXPECT_EQ(a.decomposition, b.decomposition);
        EXPECT_TRUE(same_rse(a.trace, b.trace));
        c.step = ConstantStep{0.3};
        c.damping = 1e-6;
        const auto sa = tr_scaled_brsgd(data.tensor, c);
        const auto sb = tr_scaled_brsgd(data.tensor, c);
        EXPECT_EQ(sa.decomposition, sb.decomposition);
        EXPECT_TRUE(same_rse(sa.trace, sb.trace));
        c.seed = 6;
        EXPECT_FALSE(tr_scaled_brsgd(data.tensor, c).decomposition == sa.decomposition);
    }
}

TEST(TrBrsgd, UpdatesOnlyOneCorePerIteration) {
    const auto data = gaussian_problem(6, 2, 7);
    auto c = base_config(2);
    c.step = ConstantStep{0.01};
    c.stopping.max_iters = 1;
    const auto init = random_dec({6, 6, 6}, {2, 2, 2}, 3);
    c.initial = init;
    const auto r = tr_brsgd(data.tensor, c);
    int changed = 0;
    for (std::size_t n = 0; n < 3; ++n)
        changed += r.decomposition.core(n) == init.core(n) ? 0 : 1;
    EXPECT_EQ(changed, 1);
}

TEST(TrBrsgd, ReachesOnePercentOnWellConditionedProblem) {
    const auto data = gaussian_problem(20, 3, 8);
    auto c = base_config(3);
    c.init_sigma = 0.5;
    c.step = ConstantStep{0.02};
    c.batch_grad = 200;
    c.stopping.max_iters = 4000;
    c.stopping.rse_tol = 1e-2;
    c.eval_every = 50;
    const auto r = tr_brsgd(data.tensor, c);
    EXPECT_LT(r.trace.last().rse, 1e-2) << "iterations " << r.trace.last().iteration;
}

TEST(TrScaledBrsgd, HeavyDampingTracksPlainBrsgd) {
    const auto data = gaussian_problem(8, 2, 9);
    auto c = base_config(2);
    c.batch_grad = 30;
    c.batch_hess = 30;
    c.stopping.max_iters = 25;
    c.init_sigma = 0.5;
    c.step = ConstantStep{0.02};
    const auto plain = tr_brsgd(data.tensor, c);
    const double eta = 1e9;
    c.damping = eta;
    c.step = ConstantStep{0.02 * eta};
    const auto scaled = tr_scaled_brsgd(data.tensor, c);
    for (std::size_t n = 0; n < 3; ++n) {
        const Matrix a = core_unfolding(plain.decomposition.core(n));
        const Matrix b = core_unfolding(scaled.decomposition.core(n));
        EXPECT_LT(rel_err(b, a), 1e-5);
    }
}

TEST(TrScaledBrsgd, SharedAndIndependentBatchesBothRun) {
    const auto data = gaussian_problem(10, 2, 10);
    auto c = base_config(2);
    c.step = ConstantStep{0.3};
    c.damping = 1e-6;
    c.batch_grad = 30;
    c.stopping.max_iters = 300;
    c.sampling.kind = SamplingKind::Leverage;
    const auto independent = tr_scaled_brsgd(data.tensor, c);
    c.share_batches = true;
    const auto shared = tr_scaled_brsgd(data.tensor, c);
    EXPECT_LT(independent.trace.last().rse, independent.trace.records.front().rse);
    EXPECT_LT(shared.trace.last().rse, shared.trace.records.front().rse);
    EXPECT_FALSE(same_rse(independent.trace, shared.trace));
}

TEST(TrScaledBrsgd, SweepRefreshAndOptimalDiagnostic) {
    const auto data = gaussian_problem(8, 2, 11);
    auto c = base_config(2);
    c.step = ConstantStep{0.3};
    c.damping = 1e-6;
    c.batch_grad = 20;
    c.stopping.max_iters = 100;
    c.sampling = {SamplingKind::Leverage, RefreshPolicy::EverySweep};
    EXPECT_LT(tr_scaled_brsgd(data.tensor, c).trace.last().rse, 1.0);
    c.sampling = {SamplingKind::OptimalOracle, RefreshPolicy::EveryIteration};
    EXPECT_THROW(tr_scaled_brsgd(data.tensor, c), std::invalid_argument);
    c.diagnostic = true;
    const auto r = tr_scaled_brsgd(data.tensor, c);
    EXPECT_EQ(r.trace.sampling, "optimal");
}

TEST(TrBrsgd, AdaGradSteps) {
    const auto data = gaussian_problem(10, 2, 12);
    auto c = base_config(2);
    c.step = AdaGradStep{0.05, 0.0, 0.0};
    c.batch_grad = 50;
    c.stopping.max_iters = 500;
    c.init_sigma = 0.5;
    const auto r = tr_brsgd(data.tensor, c);
    EXPECT_LT(r.trace.last().rse, r.trace.records.front().rse);
}

TEST(TrAlsSampled, ConvergesWithLeverageSampling) {
    const auto data = gaussian_problem(20, 3, 13);
    auto c = base_config(3);
    c.sampling.kind = SamplingKind::Leverage;
    c.batch_grad = 100;
    c.stopping.max_iters = 40;
    const auto r = tr_als_sampled(data.tensor, c);
    EXPECT_LT(r.trace.last().rse, 1e-6);
    EXPECT_EQ(display_name(r.trace), "TR-ALS-Sampled");
}

TEST(Stopping, ZeroTimeBudget) {
    const auto data = gaussian_problem(6, 2, 1);
    for (const auto a : {Algorithm::Als, Algorithm::Gd, Algorithm::Brsgd}) {
        auto c = base_config(2);
        c.stopping.max_seconds = 0.0;
        const auto r = solve(a, data.tensor, c);
        EXPECT_EQ(r.trace.terminal_reason, TerminalReason::MaxTime);
        ASSERT_EQ(r.trace.records.size(), 1u);
        EXPECT_EQ(r.trace.records[0].iteration, 0);
    }
}

TEST(Stopping, IterationBudgetAndCadence) {
    const auto data = gaussian_problem(6, 2, 1);
    auto c = base_config(2);
    c.stopping.max_iters = 5;
    c.step = ConstantStep{0.01};
    auto r = tr_brsgd(data.tensor, c);
    EXPECT_EQ(r.trace.terminal_reason, TerminalReason::MaxIters);
    EXPECT_EQ(r.trace.records.size(), 6u);
    EXPECT_EQ(r.trace.last().iteration, 5);
    c.stopping.max_iters = 23;
    c.eval_every = 10;
    std::vector<long long> seen;
    c.on_eval = [&](const TraceRecord& rec) { seen.push_back(rec.iteration); };
    r = tr_brsgd(data.tensor, c);
    EXPECT_EQ(seen, (std::vector<long long>{0, 10, 20, 23}));
    r.trace.validate();
}

TEST(Stopping, ToleranceCheckedBeforeIterations) {
    const auto data = gaussian_problem(6, 2, 1);
    auto c = base_config(2);
    c.initial = data.truth;
    c.stopping.max_iters = 0;
    c.stopping.rse_tol = 1e-6;
    EXPECT_EQ(tr_als(data.tensor, c).trace.terminal_reason, TerminalReason::Tol);
}

TEST(Stopping, DivergenceIsFlagged) {
    const auto data = gaussian_problem(6, 2, 1);
    auto c = base_config(2);
    c.step = ConstantStep{10.0};
    c.stopping.max_iters = 200;
    const auto r = tr_gd(data.tensor, c);
    EXPECT_TRUE(r.trace.diverged);
}

TEST(SolverConfig, Validation) {
    const auto data = gaussian_problem(6, 2, 1);
    auto c = base_config(2);
    c.batch_grad = 0;
    EXPECT_THROW(tr_brsgd(data.tensor, c), std::invalid_argument);
    c = base_config(2);
    c.ranks = {2, 2};
    EXPECT_THROW(tr_als(data.tensor, c), std::invalid_argument);
    c = base_config(2);
    c.step = RobbinsMonroStep{0.1, 0.3};
    EXPECT_THROW(tr_gd(data.tensor, c), std::invalid_argument);
    c = base_config(2);
    c.stopping.max_iters = std::numeric_limits<long long>::max();
    EXPECT_THROW(tr_gd(data.tensor, c), std::invalid_argument);
}

TEST(SolverConfig, RobbinsMonroScheduleRuns) {
    const auto data = gaussian_problem(8, 2, 2);
    auto c = base_config(2);
    c.step = RobbinsMonroStep{0.05, 0.6};
    c.batch_grad = 40;
    c.stopping.max_iters = 300;
    c.init_sigma = 0.5;
    const auto r = tr_brsgd(data.tensor, c);
    EXPECT_LT(r.trace.last().rse, r.trace.records.front().rse);
    EXPECT_NE(r.trace.config.find("robbins_monro"), std::string::npos);
}

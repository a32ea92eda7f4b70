// trsgd: synthetic data, single decompositions, benchmark grids and reports.
//
//   trsgd synth --order 3 --dim 20 --true-rank 3 --out x.trt
//   trsgd decompose --input x.trt --algorithm tr-scaled-brsgd --sampling leverage --ranks 3,3,3
//   trsgd benchmark --config grid.json --out results/
//   trsgd report --dir results/

#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#if __has_include(<CLI11.hpp>)
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif
#include <spdlog/spdlog.h>

#include "trsgd/experiment.hpp"
#include "trsgd/trsgd.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

struct SynthOptions {
    trsgd::SynthSpec spec;
    std::string kind = "gaussian";
    std::string out;
    std::string cores_out;
};

struct DecomposeOptions {
    std::string input;
    std::string config;
    std::string algorithm = "tr-als";
    std::string sampling;
    std::vector<trsgd::index_t> ranks;
    std::string step_kind;
    double alpha = -1, alpha0 = -1, gamma = -1, eta = -1, b = -1, eps = -1;
    long long batch = 0, batch_hess = 0;
    double damping = -1;
    long long max_iters = -1;
    double max_seconds = -1;
    double rse_tol = -1;
    long long eval_every = -1;
    long long seed = -1;
    bool share_batches = false;
    bool time_includes_eval = false;
    std::string cores_out;
    std::string trace_out;
};

struct BenchmarkOptions {
    std::string config;
    std::string out = "results";
    long long trials = -1;
    long long seed = -1;
    long long threads = -1;
    bool time_includes_eval = false;
};

struct ReportOptions {
    std::string dir;
    std::string format = "md";
};

int run_synth(SynthOptions& o) {
    o.spec.kind = trsgd::detail::synth_kind_from_string(o.kind);
    const auto data = trsgd::synth_tensor(o.spec);
    trsgd::save_tensor(o.out, data.tensor);
    if (!o.cores_out.empty())
        trsgd::save_cores(o.cores_out, data.truth);
    spdlog::info("wrote {} ({} entries)", o.out, data.tensor.size());
    return kExitOk;
}

// Flags given on the command line override the optional JSON solver section.
trsgd::SolverConfig decompose_config(const DecomposeOptions& o) {
    trsgd::SolverConfig c;
    if (!o.config.empty()) {
        std::ifstream is(o.config);
        if (!is)
            throw trsgd::ConfigError("cannot open config file " + o.config);
        nlohmann::json j;
        try {
            is >> j;
        } catch (const std::exception& e) {
            throw trsgd::ConfigError("config " + o.config + ": " + e.what());
        }
        trsgd::detail::apply_solver_json(c, j.contains("solver") ? j.at("solver") : j);
    }
    if (!o.ranks.empty())
        c.ranks = o.ranks;
    if (!o.sampling.empty())
        c.sampling.kind = trsgd::sampling_kind_from_string(o.sampling);
    nlohmann::json step;
    if (!o.step_kind.empty())
        step["kind"] = o.step_kind;
    const auto put = [&](const char* k, double v) {
        if (v >= 0)
            step[k] = v;
    };
    put("alpha", o.alpha);
    put("alpha0", o.alpha0);
    put("gamma", o.gamma);
    put("eta", o.eta);
    put("b", o.b);
    put("eps", o.eps);
    if (!step.empty())
        c.step = trsgd::detail::parse_step(step);
    if (o.batch > 0)
        c.batch_grad = trsgd::index_t(o.batch);
    if (o.batch_hess > 0)
        c.batch_hess = trsgd::index_t(o.batch_hess);
    if (o.damping >= 0)
        c.damping = o.damping;
    if (o.max_iters >= 0)
        c.stopping.max_iters = o.max_iters;
    if (o.max_seconds >= 0)
        c.stopping.max_seconds = o.max_seconds;
    if (o.rse_tol >= 0)
        c.stopping.rse_tol = o.rse_tol;
    if (o.eval_every >= 0)
        c.eval_every = o.eval_every;
    if (o.seed >= 0)
        c.seed = std::uint64_t(o.seed);
    if (o.share_batches)
        c.share_batches = true;
    if (o.time_includes_eval)
        c.time_includes_eval = true;
    return c;
}

int run_decompose(const DecomposeOptions& o) {
    const auto x = trsgd::load_tensor(o.input);
    const auto algo = trsgd::algorithm_from_string(o.algorithm);
    auto config = decompose_config(o);
    if (config.ranks.empty())
        throw trsgd::ConfigError("decompose: --ranks is required");
    if (config.ranks.size() == 1)
        config.ranks.assign(x.order(), config.ranks.front());
    if (config.sampling.kind == trsgd::SamplingKind::OptimalOracle)
        config.diagnostic = true;
    const auto result = trsgd::solve(algo, x, config);
    if (!o.cores_out.empty())
        trsgd::save_cores(o.cores_out, result.decomposition);
    if (!o.trace_out.empty()) {
        trsgd::write_file_atomic(o.trace_out,
                                 [&](std::ostream& os) { trsgd::write_trace_csv(os, result.trace); });
    } else {
        trsgd::write_trace_csv(std::cout, result.trace);
    }
    const auto& last = result.trace.last();
    spdlog::info("{}: rse {:.3e} after {} iterations, {:.3f} s ({})", trsgd::display_name(result.trace), last.rse,
                 last.iteration, last.elapsed, trsgd::to_string(result.trace.terminal_reason));
    return result.trace.diverged ? kExitDiverged : kExitOk;
}

int run_benchmark(const BenchmarkOptions& o) {
    auto config = trsgd::load_experiment(o.config);
    if (o.trials > 0)
        config.trials = std::size_t(o.trials);
    if (o.seed >= 0)
        config.seed = std::uint64_t(o.seed);
    if (o.threads > 0)
        config.threads = std::size_t(o.threads);
    if (o.time_includes_eval)
        config.solver.time_includes_eval = true;
    const auto result = trsgd::run_experiment(config, o.out);
    std::cout << trsgd::emit_summary(result.traces);
    if (result.any_diverged)
        spdlog::warn("at least one run exceeded the divergence threshold");
    return result.any_diverged ? kExitDiverged : kExitOk;
}

int run_report(const ReportOptions& o) {
    const auto traces = trsgd::load_trace_directory(o.dir);
    if (traces.empty())
        throw trsgd::ConfigError("report: no trace files in " + o.dir);
    std::cout << (o.format == "csv" ? trsgd::emit_summary_csv(traces) : trsgd::emit_summary(traces));
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    spdlog::set_pattern("[%l] %v");
    CLI::App app{"Tensor ring decomposition with block-randomized stochastic gradient methods"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");

    SynthOptions so;
    auto* synth = app.add_subcommand("synth", "Write a synthetic TR tensor");
    synth->add_option("--order", so.spec.order, "Tensor order N")->check(CLI::Range(2, 64));
    synth->add_option("--dim", so.spec.dim, "Common mode dimension I")->check(CLI::PositiveNumber);
    synth->add_option("--true-rank", so.spec.true_rank, "True TR-rank")->check(CLI::PositiveNumber);
    synth->add_option("--kind", so.kind, "gaussian | ill_conditioned")
        ->check(CLI::IsMember({"gaussian", "ill_conditioned"}));
    synth->add_option("--kappa", so.spec.kappa, "Condition number of each core unfolding");
    synth->add_option("--seed", so.spec.seed, "Seed");
    synth->add_option("--max-entries", so.spec.max_entries, "Refuse larger tensors");
    synth->add_option("-o,--out", so.out, "Tensor file (TRT1)")->required();
    synth->add_option("--cores-out", so.cores_out, "Also write the ground-truth cores");

    DecomposeOptions dopt;
    auto* dec = app.add_subcommand("decompose", "Fit one algorithm to one tensor");
    dec->add_option("-i,--input", dopt.input, "Tensor file (TRT1)")->required()->check(CLI::ExistingFile);
    dec->add_option("-c,--config", dopt.config, "JSON solver settings (flags override)");
    dec->add_option("-a,--algorithm", dopt.algorithm, "tr-als | tr-als-sampled | tr-gd | tr-scaled-gd | tr-brsgd | "
                                                      "tr-scaled-brsgd");
    dec->add_option("-s,--sampling", dopt.sampling, "uniform | leverage | euclidean | optimal");
    dec->add_option("-r,--ranks", dopt.ranks, "TR-ranks, one per mode or a single value")->delimiter(',');
    dec->add_option("--step", dopt.step_kind, "constant | robbins_monro | adagrad");
    dec->add_option("--alpha", dopt.alpha, "Constant step");
    dec->add_option("--alpha0", dopt.alpha0, "Robbins-Monro initial step");
    dec->add_option("--gamma", dopt.gamma, "Robbins-Monro exponent");
    dec->add_option("--eta", dopt.eta, "AdaGrad eta");
    dec->add_option("--b", dopt.b, "AdaGrad b");
    dec->add_option("--eps", dopt.eps, "AdaGrad epsilon");
    dec->add_option("--batch", dopt.batch, "Gradient batch size");
    dec->add_option("--batch-hess", dopt.batch_hess, "Hessian batch size");
    dec->add_flag("--share-batches", dopt.share_batches, "Reuse the gradient batch for the Hessian");
    dec->add_option("--damping", dopt.damping, "Preconditioner damping");
    dec->add_option("--max-iters", dopt.max_iters, "Iteration budget T");
    dec->add_option("--max-seconds", dopt.max_seconds, "Time budget MT");
    dec->add_option("--tol", dopt.rse_tol, "Stop once RSE < tol");
    dec->add_option("--eval-every", dopt.eval_every, "RSE evaluation cadence (0 = auto)");
    dec->add_option("--seed", dopt.seed, "Seed");
    dec->add_flag("--time-includes-eval", dopt.time_includes_eval, "Count RSE evaluation in elapsed time");
    dec->add_option("--cores-out", dopt.cores_out, "Write fitted cores");
    dec->add_option("--trace-out", dopt.trace_out, "Write trace CSV (default stdout)");

    BenchmarkOptions bo;
    auto* bench = app.add_subcommand("benchmark", "Run a JSON-configured grid");
    bench->add_option("-c,--config", bo.config, "Experiment JSON")->required()->check(CLI::ExistingFile);
    bench->add_option("-o,--out", bo.out, "Output directory");
    bench->add_option("--trials", bo.trials, "Override trials");
    bench->add_option("--seed", bo.seed, "Override seed");
    bench->add_option("--threads", bo.threads, "Trials run concurrently");
    bench->add_flag("--time-includes-eval", bo.time_includes_eval, "Count RSE evaluation in elapsed time");

    ReportOptions ro;
    auto* report = app.add_subcommand("report", "Summarize a directory of traces");
    report->add_option("-d,--dir", ro.dir, "Trace directory")->required()->check(CLI::ExistingDirectory);
    report->add_option("--format", ro.format, "md | csv")->check(CLI::IsMember({"md", "csv"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }
    if (verbose)
        spdlog::set_level(spdlog::level::debug);

    try {
        if (*synth)
            return run_synth(so);
        if (*dec)
            return run_decompose(dopt);
        if (*bench)
            return run_benchmark(bo);
        return run_report(ro);
    } catch (const trsgd::ConfigError& e) {
        spdlog::error("{}", e.what());
        return kExitConfig;
    } catch (const trsgd::SingularPreconditioner& e) {
        spdlog::error("{}", e.what());
        return kExitDiverged;
    } catch (const std::invalid_argument& e) {
        spdlog::error("{}", e.what());
        return kExitConfig;
    } catch (const std::length_error& e) {
        spdlog::error("{}", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
}

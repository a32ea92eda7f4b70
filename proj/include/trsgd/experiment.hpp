#pragma once

// JSON-configured benchmark grids. Requires nlohmann/json on the include path.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "datagen.hpp"
#include "solvers.hpp"
#include "tensor_io.hpp"
#include "trace.hpp"

namespace trsgd {

/// Invalid or infeasible experiment configuration.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TensorSource {
    std::optional<SynthSpec> synth;
    std::filesystem::path file;
};

struct ExperimentConfig {
    TensorSource tensor;
    std::vector<Algorithm> algorithms;
    std::vector<SamplingKind> sampling{SamplingKind::Uniform};
    SolverConfig solver;
    /// Keyed by "algo" or "algo:sampling"; the latter wins.
    std::map<std::string, nlohmann::json> overrides;
    std::size_t trials = 1;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
};

namespace detail {

inline SynthKind synth_kind_from_string(const std::string& s) {
    if (s == "gaussian")
        return SynthKind::GaussianCores;
    if (s == "ill_conditioned")
        return SynthKind::IllConditioned;
    throw ConfigError("unknown synthetic tensor kind '" + s + "' (expected gaussian or ill_conditioned)");
}

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const char* where) {
    if (!j.is_object())
        throw ConfigError(std::string(where) + ": expected an object");
    for (const auto& [k, v] : j.items())
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
            throw ConfigError(std::string(where) + ": unknown key '" + k + "'");
}

inline StepSchedule parse_step(const nlohmann::json& j) {
    check_keys(j, {"kind", "alpha", "alpha0", "gamma", "eta", "b", "eps"}, "solver.step");
    const auto kind = j.value("kind", std::string("constant"));
    if (kind == "constant")
        return ConstantStep{j.value("alpha", 1e-3)};
    if (kind == "robbins_monro")
        return RobbinsMonroStep{j.value("alpha0", 1e-2), j.value("gamma", 1.0)};
    if (kind == "adagrad")
        return AdaGradStep{j.value("eta", 1e-2), j.value("b", 0.0), j.value("eps", 0.0)};
    throw ConfigError("solver.step: unknown kind '" + kind + "'");
}

inline void apply_solver_json(SolverConfig& c, const nlohmann::json& j) {
    check_keys(j,
               {"ranks", "step", "batch_grad", "batch_hess", "share_batches", "damping", "damping_fallback",
                "refresh", "max_iters", "max_seconds", "rse_tol", "eval_every", "init_sigma", "time_includes_eval",
                "divergence_threshold", "sampling", "diagnostic"},
               "solver");
    if (j.contains("ranks"))
        c.ranks = j.at("ranks").get<std::vector<index_t>>();
    if (j.contains("step"))
        c.step = parse_step(j.at("step"));
    if (j.contains("batch_grad"))
        c.batch_grad = j.at("batch_grad").get<index_t>();
    if (j.contains("batch_hess"))
        c.batch_hess = j.at("batch_hess").get<index_t>();
    if (j.contains("share_batches"))
        c.share_batches = j.at("share_batches").get<bool>();
    if (j.contains("damping"))
        c.damping = j.at("damping").get<double>();
    if (j.contains("damping_fallback"))
        c.damping_fallback = j.at("damping_fallback").get<bool>();
    if (j.contains("refresh")) {
        const auto r = j.at("refresh").get<std::string>();
        if (r == "iteration")
            c.sampling.refresh = RefreshPolicy::EveryIteration;
        else if (r == "sweep")
            c.sampling.refresh = RefreshPolicy::EverySweep;
        else
            throw ConfigError("solver.refresh: expected iteration or sweep");
    }
    if (j.contains("sampling"))
        c.sampling.kind = sampling_kind_from_string(j.at("sampling").get<std::string>());
    if (j.contains("max_iters"))
        c.stopping.max_iters = j.at("max_iters").get<long long>();
    if (j.contains("max_seconds")) {
        const auto& v = j.at("max_seconds");
        c.stopping.max_seconds = v.is_null() ? std::numeric_limits<double>::infinity() : v.get<double>();
    }
    if (j.contains("rse_tol"))
        c.stopping.rse_tol = j.at("rse_tol").get<double>();
    if (j.contains("eval_every"))
        c.eval_every = j.at("eval_every").get<long long>();
    if (j.contains("init_sigma"))
        c.init_sigma = j.at("init_sigma").get<double>();
    if (j.contains("time_includes_eval"))
        c.time_includes_eval = j.at("time_includes_eval").get<bool>();
    if (j.contains("divergence_threshold"))
        c.divergence_threshold = j.at("divergence_threshold").get<double>();
    if (j.contains("diagnostic"))
        c.diagnostic = j.at("diagnostic").get<bool>();
}

} // namespace detail

/** Parses and validates a JSON experiment document. Throws ConfigError. */
inline ExperimentConfig parse_experiment(const nlohmann::json& j) {
    try {
        detail::check_keys(j, {"tensor", "algorithms", "sampling", "solver", "overrides", "trials", "seed", "threads"},
                           "config");
        ExperimentConfig c;
        c.seed = j.value("seed", std::uint64_t(0));
        c.trials = j.value("trials", std::size_t(1));
        c.threads = j.value("threads", std::size_t(1));
        if (c.trials == 0)
            throw ConfigError("config: trials must be at least 1");

        const auto& t = j.at("tensor");
        detail::check_keys(t, {"synth", "file"}, "tensor");
        if (t.contains("synth") == t.contains("file"))
            throw ConfigError("tensor: give exactly one of synth or file");
        if (t.contains("file")) {
            c.tensor.file = t.at("file").get<std::string>();
        } else {
            const auto& s = t.at("synth");
            detail::check_keys(s, {"order", "dim", "true_rank", "kind", "kappa", "seed", "max_entries"}, "tensor.synth");
            SynthSpec spec;
            spec.order = s.value("order", spec.order);
            spec.dim = s.value("dim", spec.dim);
            spec.true_rank = s.value("true_rank", spec.true_rank);
            spec.kind = detail::synth_kind_from_string(s.value("kind", std::string("gaussian")));
            spec.kappa = s.value("kappa", spec.kappa);
            spec.seed = s.value("seed", c.seed);
            spec.max_entries = s.value("max_entries", spec.max_entries);
            c.tensor.synth = spec;
        }

        for (const auto& a : j.at("algorithms"))
            c.algorithms.push_back(algorithm_from_string(a.get<std::string>()));
        if (c.algorithms.empty())
            throw ConfigError("config: no algorithms requested");
        if (j.contains("sampling")) {
            c.sampling.clear();
            for (const auto& s : j.at("sampling"))
                c.sampling.push_back(sampling_kind_from_string(s.get<std::string>()));
            if (c.sampling.empty())
                throw ConfigError("config: empty sampling list");
        }
        if (j.contains("solver"))
            detail::apply_solver_json(c.solver, j.at("solver"));
        if (j.contains("overrides")) {
            for (const auto& [key, v] : j.at("overrides").items()) {
                SolverConfig probe = c.solver;
                detail::apply_solver_json(probe, v);
                c.overrides[key] = v;
            }
        }
        return c;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is)
        throw ConfigError("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return parse_experiment(j);
}

/** One (algorithm, sampling, trial) run of a grid. */
struct GridCell {
    Algorithm algorithm;
    std::optional<SamplingKind> sampling; ///< empty for deterministic algorithms
    std::size_t trial = 0;

    [[nodiscard]] std::string stem() const {
        return std::string(to_string(algorithm)) + "-" +
               (sampling ? std::string(to_string(*sampling)) : std::string("full")) + "-t" + std::to_string(trial);
    }
};

/**
 * Expands the grid. Deterministic algorithms run once per trial; TR-ALS-Sampled
 * also runs once, with leverage sampling unless its override names another.
 */
inline std::vector<GridCell> expand_grid(const ExperimentConfig& c) {
    std::vector<GridCell> cells;
    for (const auto a : c.algorithms) {
        std::vector<std::optional<SamplingKind>> kinds{std::nullopt};
        if (a == Algorithm::AlsSampled) {
            kinds = {SamplingKind::Leverage};
            if (auto it = c.overrides.find("tr-als-sampled"); it != c.overrides.end() && it->second.contains("sampling"))
                kinds = {sampling_kind_from_string(it->second.at("sampling").get<std::string>())};
        } else if (is_sampled(a)) {
            kinds.assign(c.sampling.begin(), c.sampling.end());
        }
        for (const auto& k : kinds)
            for (std::size_t t = 0; t < c.trials; ++t)
                cells.push_back({a, k, t});
    }
    return cells;
}

/**
 * Effective solver configuration for a cell. Trial t uses seed derived from
 * (config seed, t), so every algorithm sees the same initialization in a trial.
 */
inline SolverConfig cell_config(const ExperimentConfig& c, const GridCell& cell) {
    SolverConfig s = c.solver;
    if (cell.sampling)
        s.sampling.kind = *cell.sampling;
    const std::string algo(to_string(cell.algorithm));
    if (auto it = c.overrides.find(algo); it != c.overrides.end())
        detail::apply_solver_json(s, it->second);
    if (cell.sampling)
        if (auto it = c.overrides.find(algo + ":" + std::string(to_string(*cell.sampling))); it != c.overrides.end())
            detail::apply_solver_json(s, it->second);
    s.seed = RandomStream::derive(c.seed, 0x7472'6961'6cULL, cell.trial)();
    return s;
}

inline DenseTensor load_source(const TensorSource& src) {
    if (src.synth)
        return synth_tensor(*src.synth).tensor;
    return load_tensor(src.file);
}

struct ExperimentResult {
    std::vector<RunTrace> traces;
    bool any_diverged = false;
};

namespace detail {

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, [&](std::ostream& os) { os << text; });
}

} // namespace detail

/**
 * Runs every grid cell and writes, into `out_dir`:
 *   {algo}-{sampling}-t{trial}.csv         iteration,rse (seed-deterministic)
 *   {algo}-{sampling}-t{trial}.timing.csv  iteration,elapsed_s
 *   summary.md, summary.csv                means over trials
 *   run_meta.json                          timestamps, timing policy, terminal reasons
 */
inline ExperimentResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
    const DenseTensor x = load_source(config.tensor);
    for (const auto a : config.algorithms) {
        const auto r = cell_config(config, {a, std::nullopt, 0}).ranks;
        if (r.size() != x.order())
            throw ConfigError("solver.ranks: need " + std::to_string(x.order()) + " ranks");
    }
    std::filesystem::create_directories(out_dir);
    const std::string started = detail::utc_timestamp();

    const auto cells = expand_grid(config);
    std::vector<RunTrace> traces(cells.size());
    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::exception_ptr error;

    const auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            try {
                const auto& cell = cells[i];
                auto result = solve(cell.algorithm, x, cell_config(config, cell));
                const auto stem = cell.stem();
                detail::write_text_atomic(out_dir / (stem + ".csv"), [&] {
                    std::ostringstream os;
                    write_trace_csv(os, result.trace, TraceColumns::NoTiming);
                    return os.str();
                }());
                detail::write_text_atomic(out_dir / (stem + ".timing.csv"), [&] {
                    std::ostringstream os;
                    write_trace_csv(os, result.trace, TraceColumns::TimingOnly);
                    return os.str();
                }());
                traces[i] = std::move(result.trace);
            } catch (...) {
                std::lock_guard lock(err_mutex);
                if (!error)
                    error = std::current_exception();
                next = cells.size();
            }
        }
    };
    const std::size_t nthreads = std::clamp<std::size_t>(config.threads, 1, std::max<std::size_t>(cells.size(), 1));
    if (nthreads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t k = 0; k < nthreads; ++k)
            pool.emplace_back(worker);
    }
    if (error)
        std::rethrow_exception(error);

    ExperimentResult out;
    out.traces = traces;
    nlohmann::json runs = nlohmann::json::array();
    for (std::size_t i = 0; i < cells.size(); ++i) {
        out.any_diverged = out.any_diverged || traces[i].diverged;
        runs.push_back({{"file", cells[i].stem() + ".csv"},
                        {"terminal_reason", std::string(to_string(traces[i].terminal_reason))},
                        {"diverged", traces[i].diverged},
                        {"config", nlohmann::json::parse(traces[i].config)}});
    }
    detail::write_text_atomic(out_dir / "summary.md", emit_summary(traces));
    detail::write_text_atomic(out_dir / "summary.csv", emit_summary_csv(traces));
    nlohmann::json meta{{"started_utc", started},
                        {"finished_utc", detail::utc_timestamp()},
                        {"time_includes_eval", config.solver.time_includes_eval},
                        {"trials", config.trials},
                        {"seed", config.seed},
                        {"runs", runs}};
    detail::write_text_atomic(out_dir / "run_meta.json", meta.dump(2) + "\n");
    return out;
}

/**
 * Rebuilds traces from a directory written by run_experiment, merging timing
 * sidecars when present. Algorithm and sampling come from the file names.
 */
inline std::vector<RunTrace> load_trace_directory(const std::filesystem::path& dir) {
    static const std::regex name(R"(^(tr-[a-z-]+?)-(uniform|leverage|euclidean|optimal|full)-t([0-9]+)\.csv$)");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file())
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<RunTrace> out;
    for (const auto& f : files) {
        std::smatch m;
        const std::string fname = f.filename().string();
        if (!std::regex_match(fname, m, name))
            continue;
        RunTrace t;
        t.algorithm = m[1];
        t.sampling = m[2] == "full" ? "" : std::string(m[2]);
        std::ifstream is(f);
        t.records = read_trace_csv(is);
        auto timing = f;
        timing.replace_extension(".timing.csv");
        if (std::filesystem::exists(timing)) {
            std::ifstream ts(timing);
            t.records = merge_timing(std::move(t.records), read_trace_csv(ts));
        }
        if (!t.records.empty())
            out.push_back(std::move(t));
    }
    return out;
}

} // namespace trsgd

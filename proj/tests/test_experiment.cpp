#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <trsgd/experiment.hpp>

using namespace trsgd;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json small_config() {
    return json::parse(R"({
        "tensor": {"synth": {"order": 3, "dim": 8, "true_rank": 2}},
        "algorithms": ["tr-als", "tr-brsgd", "tr-scaled-brsgd"],
        "sampling": ["uniform", "leverage"],
        "solver": {"ranks": [2, 2, 2], "step": {"kind": "constant", "alpha": 0.05},
                   "batch_grad": 30, "max_iters": 40, "eval_every": 10},
        "overrides": {"tr-scaled-brsgd": {"step": {"alpha": 0.3}, "damping": 1e-6}},
        "trials": 2,
        "seed": 17
    })");
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("trsgd_exp_" + name);
    fs::remove_all(p);
    return p;
}

} // namespace

TEST(ExperimentConfig, ParsesFullDocument) {
    const auto c = parse_experiment(small_config());
    EXPECT_EQ(c.algorithms.size(), 3u);
    EXPECT_EQ(c.sampling.size(), 2u);
    EXPECT_EQ(c.trials, 2u);
    ASSERT_TRUE(c.tensor.synth);
    EXPECT_EQ(c.tensor.synth->seed, 17u);
    EXPECT_EQ(c.solver.batch_grad, 30);
    EXPECT_DOUBLE_EQ(std::get<ConstantStep>(c.solver.step).alpha, 0.05);
}

TEST(ExperimentConfig, RejectsBadDocuments) {
    const auto expect_error = [](const std::function<void(json&)>& edit) {
        auto j = small_config();
        edit(j);
        EXPECT_THROW(parse_experiment(j), ConfigError) << j.dump();
    };
    expect_error([](json& j) { j["bogus"] = 1; });
    expect_error([](json& j) { j["solver"]["lr"] = 0.1; });
    expect_error([](json& j) { j["algorithms"] = json::array({"tr-sgd"}); });
    expect_error([](json& j) { j["algorithms"] = json::array(); });
    expect_error([](json& j) { j["sampling"] = json::array({"importance"}); });
    expect_error([](json& j) { j["solver"]["step"] = {{"kind", "adam"}}; });
    expect_error([](json& j) { j["solver"]["refresh"] = "epoch"; });
    expect_error([](json& j) { j["tensor"] = json::object(); });
    expect_error([](json& j) { j["tensor"]["file"] = "x.trt"; });
    expect_error([](json& j) { j["tensor"]["synth"]["kind"] = "lowrank"; });
    expect_error([](json& j) { j["trials"] = 0; });
    expect_error([](json& j) { j["overrides"]["tr-gd"] = {{"batchsize", 3}}; });
    expect_error([](json& j) { j["solver"]["max_iters"] = "many"; });
}

TEST(ExperimentGrid, ExpansionAndStems) {
    auto j = small_config();
    j["algorithms"] = json::array({"tr-als", "tr-als-sampled", "tr-brsgd"});
    const auto c = parse_experiment(j);
    const auto cells = expand_grid(c);
    std::vector<std::string> stems;
    for (const auto& cell : cells)
        stems.push_back(cell.stem());
    EXPECT_EQ(stems, (std::vector<std::string>{"tr-als-full-t0", "tr-als-full-t1", "tr-als-sampled-leverage-t0",
                                               "tr-als-sampled-leverage-t1", "tr-brsgd-uniform-t0",
                                               "tr-brsgd-uniform-t1", "tr-brsgd-leverage-t0",
                                               "tr-brsgd-leverage-t1"}));
}

TEST(ExperimentGrid, OverridesAndTrialSeeds) {
    auto j = small_config();
    j["overrides"]["tr-brsgd:leverage"] = {{"batch_grad", 7}};
    const auto c = parse_experiment(j);
    const auto a = cell_config(c, {Algorithm::Brsgd, SamplingKind::Leverage, 0});
    const auto b = cell_config(c, {Algorithm::Brsgd, SamplingKind::Uniform, 0});
    const auto s = cell_config(c, {Algorithm::ScaledBrsgd, SamplingKind::Uniform, 1});
    EXPECT_EQ(a.batch_grad, 7);
    EXPECT_EQ(b.batch_grad, 30);
    EXPECT_EQ(a.sampling.kind, SamplingKind::Leverage);
    EXPECT_DOUBLE_EQ(std::get<ConstantStep>(s.step).alpha, 0.3);
    EXPECT_DOUBLE_EQ(s.damping, 1e-6);
    EXPECT_EQ(a.seed, b.seed);
    EXPECT_NE(a.seed, s.seed);
}

TEST(RunExperiment, TraceFilesAreByteIdenticalAcrossRuns) {
    const auto c = parse_experiment(small_config());
    const auto d1 = scratch("rep1"), d2 = scratch("rep2");
    run_experiment(c, d1);
    auto c2 = c;
    c2.threads = 3;
    run_experiment(c2, d2);
    std::size_t compared = 0;
    for (const auto& e : fs::directory_iterator(d1)) {
        const auto name = e.path().filename().string();
        if (name.ends_with(".timing.csv") || !name.ends_with(".csv") || name.starts_with("summary"))
            continue;
        EXPECT_EQ(slurp(e.path()), slurp(d2 / name)) << name;
        ++compared;
    }
    EXPECT_EQ(compared, 2u * (1 + 2 + 2));
    EXPECT_TRUE(fs::exists(d1 / "summary.md"));
    EXPECT_TRUE(fs::exists(d1 / "run_meta.json"));
    const auto meta = json::parse(slurp(d1 / "run_meta.json"));
    EXPECT_EQ(meta.at("runs").size(), 10u);
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST(RunExperiment, ReportRebuildsSummary) {
    const auto c = parse_experiment(small_config());
    const auto dir = scratch("report");
    const auto result = run_experiment(c, dir);
    const auto loaded = load_trace_directory(dir);
    ASSERT_EQ(loaded.size(), result.traces.size());
    const auto a = summarize(result.traces), b = summarize(loaded);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].algorithm, b[i].algorithm);
        EXPECT_EQ(a[i].rse, b[i].rse);
        EXPECT_EQ(a[i].iterations, b[i].iterations);
        EXPECT_NEAR(a[i].time, b[i].time, 1e-12 * (1 + a[i].time));
    }
    fs::remove_all(dir);
}

TEST(RunExperiment, AlsReachesToleranceAndZeroBudgetStopsAtOnce) {
    auto j = small_config();
    j["tensor"]["synth"] = {{"order", 3}, {"dim", 20}, {"true_rank", 3}};
    j["algorithms"] = json::array({"tr-als"});
    j["trials"] = 1;
    j["solver"]["ranks"] = json::array({3, 3, 3});
    j["solver"]["rse_tol"] = 1e-8;
    j["solver"]["max_iters"] = 100;
    auto dir = scratch("tol");
    auto r = run_experiment(parse_experiment(j), dir);
    ASSERT_EQ(r.traces.size(), 1u);
    EXPECT_EQ(r.traces[0].terminal_reason, TerminalReason::Tol);
    fs::remove_all(dir);

    j["algorithms"] = json::array({"tr-brsgd"});
    j["solver"]["max_seconds"] = 0;
    dir = scratch("mt0");
    r = run_experiment(parse_experiment(j), dir);
    for (const auto& t : r.traces) {
        EXPECT_EQ(t.terminal_reason, TerminalReason::MaxTime);
        EXPECT_EQ(t.records.size(), 1u);
    }
    fs::remove_all(dir);
}

TEST(RunExperiment, RankCountMismatchIsConfigError) {
    auto j = small_config();
    j["solver"]["ranks"] = json::array({2, 2});
    EXPECT_THROW(run_experiment(parse_experiment(j), scratch("ranks")), ConfigError);
}

TEST(RunExperiment, TensorFromFile) {
    SynthSpec s;
    s.order = 3;
    s.dim = 6;
    s.true_rank = 2;
    const auto dir = scratch("file");
    fs::create_directories(dir);
    save_tensor(dir / "x.trt", synth_tensor(s).tensor);
    auto j = small_config();
    j["tensor"] = {{"file", (dir / "x.trt").string()}};
    j["algorithms"] = json::array({"tr-als"});
    j["trials"] = 1;
    const auto r = run_experiment(parse_experiment(j), dir / "out");
    EXPECT_EQ(r.traces.size(), 1u);
    fs::remove_all(dir);
}

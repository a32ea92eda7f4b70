#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace trsgd {

enum class TerminalReason { Tol, MaxIters, MaxTime, Diverged };

inline std::string_view to_string(TerminalReason r) {
    switch (r) {
    case TerminalReason::Tol: return "tol";
    case TerminalReason::MaxIters: return "max_iters";
    case TerminalReason::MaxTime: return "max_time";
    case TerminalReason::Diverged: return "diverged";
    }
    return "unknown";
}

inline TerminalReason terminal_reason_from_string(std::string_view s) {
    if (s == "tol") return TerminalReason::Tol;
    if (s == "max_iters") return TerminalReason::MaxIters;
    if (s == "max_time") return TerminalReason::MaxTime;
    if (s == "diverged") return TerminalReason::Diverged;
    throw std::invalid_argument("unknown terminal reason '" + std::string(s) + "'");
}

struct TraceRecord {
    long long iteration = 0;
    double elapsed = 0.0;
    double rse = 0.0;

    friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

/** Evaluation points of one solver run plus how it ended. */
struct RunTrace {
    std::string algorithm;
    std::string sampling; ///< empty for deterministic algorithms
    std::string config;   ///< JSON snapshot of the solver configuration
    std::vector<TraceRecord> records;
    TerminalReason terminal_reason = TerminalReason::MaxIters;
    /// Some iterate exceeded the divergence threshold at an evaluation point.
    bool diverged = false;

    [[nodiscard]] const TraceRecord& last() const {
        if (records.empty())
            throw std::logic_error("RunTrace: no records");
        return records.back();
    }

    /// Throws unless iterations strictly increase and elapsed never decreases.
    void validate() const {
        for (std::size_t i = 1; i < records.size(); ++i) {
            if (records[i].iteration <= records[i - 1].iteration)
                throw std::logic_error("RunTrace: iterations must strictly increase");
            if (records[i].elapsed < records[i - 1].elapsed)
                throw std::logic_error("RunTrace: elapsed time decreased");
        }
    }
};

/** Shortest decimal rendering that is still 17 significant digits, i.e. round-trips. */
inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_double(std::string_view s) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        // from_chars does not accept "inf"/"nan" spelled by printf on every libstdc++.
        try {
            std::size_t used = 0;
            v = std::stod(std::string(s), &used);
            if (used != s.size())
                throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw std::invalid_argument("cannot parse number '" + std::string(s) + "'");
        }
    }
    return v;
}

enum class TraceColumns { All, NoTiming, TimingOnly };

/**
 * Writes the trace as CSV. `All` gives `iteration,elapsed_s,rse`; `NoTiming`
 * drops the wall-clock column so that seeded runs produce identical files;
 * `TimingOnly` is the matching `iteration,elapsed_s` sidecar.
 */
inline void write_trace_csv(std::ostream& os, const RunTrace& trace, TraceColumns cols = TraceColumns::All) {
    switch (cols) {
    case TraceColumns::All: os << "iteration,elapsed_s,rse\n"; break;
    case TraceColumns::NoTiming: os << "iteration,rse\n"; break;
    case TraceColumns::TimingOnly: os << "iteration,elapsed_s\n"; break;
    }
    for (const auto& r : trace.records) {
        os << r.iteration;
        if (cols != TraceColumns::NoTiming)
            os << ',' << format_double(r.elapsed);
        if (cols != TraceColumns::TimingOnly)
            os << ',' << format_double(r.rse);
        os << '\n';
    }
}

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos)
            break;
        start = pos + 1;
    }
    return out;
}

inline std::string_view trim_cr(std::string_view s) {
    if (!s.empty() && s.back() == '\r')
        s.remove_suffix(1);
    return s;
}

} // namespace detail

/**
 * Reads records from any of the three layouts written by write_trace_csv.
 * Missing columns are left at zero.
 */
inline std::vector<TraceRecord> read_trace_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line))
        throw std::invalid_argument("trace CSV: missing header");
    const auto header = detail::split_commas(detail::trim_cr(line));
    int it_col = -1, el_col = -1, rse_col = -1;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == "iteration") it_col = int(i);
        else if (header[i] == "elapsed_s") el_col = int(i);
        else if (header[i] == "rse") rse_col = int(i);
        else throw std::invalid_argument("trace CSV: unknown column '" + std::string(header[i]) + "'");
    }
    if (it_col < 0)
        throw std::invalid_argument("trace CSV: missing iteration column");
    std::vector<TraceRecord> out;
    while (std::getline(is, line)) {
        const auto row = detail::trim_cr(line);
        if (row.empty())
            continue;
        const auto fields = detail::split_commas(row);
        if (fields.size() != header.size())
            throw std::invalid_argument("trace CSV: wrong field count in '" + std::string(row) + "'");
        TraceRecord r;
        long long it = 0;
        const auto f = fields[std::size_t(it_col)];
        const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), it);
        if (ec != std::errc() || ptr != f.data() + f.size())
            throw std::invalid_argument("trace CSV: bad iteration '" + std::string(f) + "'");
        r.iteration = it;
        if (el_col >= 0) r.elapsed = parse_double(fields[std::size_t(el_col)]);
        if (rse_col >= 0) r.rse = parse_double(fields[std::size_t(rse_col)]);
        out.push_back(r);
    }
    return out;
}

/** Combines a NoTiming trace with its timing sidecar. */
inline std::vector<TraceRecord> merge_timing(std::vector<TraceRecord> rse, const std::vector<TraceRecord>& timing) {
    if (rse.size() != timing.size())
        throw std::invalid_argument("timing sidecar does not match trace length");
    for (std::size_t i = 0; i < rse.size(); ++i) {
        if (rse[i].iteration != timing[i].iteration)
            throw std::invalid_argument("timing sidecar iterations do not match trace");
        rse[i].elapsed = timing[i].elapsed;
    }
    return rse;
}

/** One row of a results table: means over trials of terminal values. */
struct SummaryRow {
    std::string algorithm; ///< display name, e.g. TR-ScaledBRSGD-L
    double rse = 0.0;
    double iterations = 0.0;
    double time = 0.0;
    std::size_t trials = 0;
};

/** Display name: "TR-BRSGD" plus "-U"/"-L"/"-E" for sampled algorithms. */
inline std::string display_name(const RunTrace& t) {
    static const std::map<std::string, std::string, std::less<>> names{
        {"tr-als", "TR-ALS"},
        {"tr-gd", "TR-GD"},
        {"tr-scaled-gd", "TR-ScaledGD"},
        {"tr-als-sampled", "TR-ALS-Sampled"},
        {"tr-brsgd", "TR-BRSGD"},
        {"tr-scaled-brsgd", "TR-ScaledBRSGD"},
    };
    const auto it = names.find(t.algorithm);
    std::string base = it != names.end() ? it->second : t.algorithm;
    if (t.sampling.empty() || t.algorithm == "tr-als-sampled")
        return base;
    char suffix = '?';
    if (t.sampling == "uniform") suffix = 'U';
    else if (t.sampling == "leverage") suffix = 'L';
    else if (t.sampling == "euclidean") suffix = 'E';
    else if (t.sampling == "optimal") suffix = 'O';
    return base + '-' + suffix;
}

namespace detail {

// Row rank in the results-table layout: deterministic baselines, the sampled
// ALS, then the stochastic methods with U, E, L sampling.
inline int table_rank(const RunTrace& t) {
    static const std::map<std::string, int, std::less<>> algo{
        {"tr-als", 0}, {"tr-gd", 1}, {"tr-scaled-gd", 2}, {"tr-als-sampled", 3}, {"tr-brsgd", 4},
        {"tr-scaled-brsgd", 5}};
    static const std::map<std::string, int, std::less<>> samp{
        {"", 0}, {"uniform", 0}, {"euclidean", 1}, {"leverage", 2}, {"optimal", 3}};
    const auto a = algo.find(t.algorithm);
    const auto s = samp.find(t.sampling);
    const int ar = a != algo.end() ? a->second : 100;
    const int sr = s != samp.end() ? s->second : 9;
    return ar * 10 + (t.algorithm == "tr-als-sampled" ? 0 : sr);
}

} // namespace detail

/**
 * Averages terminal RSE, iteration count and time per algorithm variant.
 * Rows follow the results-table order.
 */
inline std::vector<SummaryRow> summarize(const std::vector<RunTrace>& traces) {
    if (traces.empty())
        throw std::invalid_argument("summarize: no traces");
    struct Acc {
        int rank = 0;
        SummaryRow row;
    };
    std::map<std::string, Acc> groups;
    std::vector<std::string> first_seen;
    for (const auto& t : traces) {
        const auto name = display_name(t);
        auto [it, inserted] = groups.try_emplace(name);
        if (inserted) {
            it->second.rank = detail::table_rank(t);
            it->second.row.algorithm = name;
            first_seen.push_back(name);
        }
        const auto& last = t.last();
        it->second.row.rse += last.rse;
        it->second.row.iterations += double(last.iteration);
        it->second.row.time += last.elapsed;
        it->second.row.trials += 1;
    }
    std::stable_sort(first_seen.begin(), first_seen.end(),
                     [&](const auto& a, const auto& b) { return groups[a].rank < groups[b].rank; });
    std::vector<SummaryRow> rows;
    for (const auto& name : first_seen) {
        auto row = groups[name].row;
        const double n = double(row.trials);
        row.rse /= n;
        row.iterations /= n;
        row.time /= n;
        rows.push_back(row);
    }
    return rows;
}

inline std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

/** Markdown table with RSE / Iterations / Time columns. */
inline std::string emit_summary(const std::vector<RunTrace>& traces) {
    const auto rows = summarize(traces);
    std::ostringstream os;
    os << "| Method | RSE | Iterations | Time |\n";
    os << "|---|---|---|---|\n";
    for (const auto& r : rows)
        os << "| " << r.algorithm << " | " << sci(r.rse) << " | " << sci(r.iterations) << " | " << sci(r.time)
           << " |\n";
    return os.str();
}

inline std::string emit_summary_csv(const std::vector<RunTrace>& traces) {
    const auto rows = summarize(traces);
    std::ostringstream os;
    os << "method,rse,iterations,time_s,trials\n";
    for (const auto& r : rows)
        os << r.algorithm << ',' << format_double(r.rse) << ',' << format_double(r.iterations) << ','
           << format_double(r.time) << ',' << r.trials << '\n';
    return os.str();
}

} // namespace trsgd

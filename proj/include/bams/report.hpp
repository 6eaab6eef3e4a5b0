#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "bams/eval.hpp"

namespace bams::report {

struct LabeledResult {
    std::string run;
    eval::ProbeResult result;
};

/// Merges result sets. Identical rows collapse; the same key with a
/// different value is an error. Order: runs as first seen, then embedding,
/// level, task, split, seed.
inline std::vector<LabeledResult> merge(const std::vector<std::pair<std::string, std::vector<eval::ProbeResult>>>& inputs) {
    std::map<std::string, std::size_t> run_rank;
    for (const auto& [run, _] : inputs) run_rank.emplace(run, run_rank.size());
    using Key = std::tuple<std::size_t, std::string, int, std::string, std::string, std::uint64_t, std::string>;
    std::map<Key, LabeledResult> rows;
    for (const auto& [run, results] : inputs)
        for (const auto& r : results) {
            Key k{run_rank.at(run), r.embedding, static_cast<int>(r.level), r.task, r.split, r.seed, r.metric};
            auto [it, inserted] = rows.emplace(k, LabeledResult{run, r});
            if (!inserted && it->second.result.value != r.value)
                throw SchemaError("report: conflicting values for run " + run + ", task " + r.task + ", embedding " + r.embedding);
        }
    std::vector<LabeledResult> out;
    for (auto& [k, v] : rows) out.push_back(std::move(v));
    return out;
}

inline std::string merged_csv(const std::vector<LabeledResult>& rows) {
    std::string out = std::string("run,") + eval::kResultsHeader + "\n";
    for (const auto& lr : rows) {
        const auto& r = lr.result;
        out += lr.run + "," + r.task + "," + to_string(r.level) + "," + r.metric + "," + eval::format_value(r.value) + "," +
               r.embedding + "," + r.split + "," + std::to_string(r.seed) + "\n";
    }
    return out;
}

inline std::string marker(const std::string& metric) { return metric == "MSE" ? "(↓)" : "(↑)"; }
inline bool lower_is_better(const std::string& metric) { return metric == "MSE"; }

namespace detail {

inline std::size_t display_width(const std::string& s) {
    std::size_t w = 0;
    for (unsigned char c : s) w += (c & 0xC0) != 0x80;
    return w;
}

inline std::string pad(const std::string& s, std::size_t width, bool right) {
    const std::string fill(width - std::min(width, display_width(s)), ' ');
    return right ? fill + s : s + fill;
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::string render() const {
        std::vector<std::size_t> w(header.size(), 0);
        for (std::size_t c = 0; c < header.size(); ++c) w[c] = display_width(header[c]);
        for (const auto& r : rows)
            for (std::size_t c = 0; c < r.size(); ++c) w[c] = std::max(w[c], display_width(r[c]));
        std::string out;
        auto line = [&](const std::vector<std::string>& cells) {
            for (std::size_t c = 0; c < cells.size(); ++c) {
                out += pad(cells[c], w[c], c >= 2);
                out += c + 1 < cells.size() ? "  " : "\n";
            }
        };
        line(header);
        std::vector<std::string> rule;
        for (auto x : w) rule.emplace_back(x, '-');
        line(rule);
        for (const auto& r : rows) line(r);
        return out;
    }
};

struct Column {
    std::string task;
    std::string metric;
};

inline std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

/// One row per (run, embedding), one column per task; values averaged over
/// seeds and splits; best per column starred.
inline Table level_table(const std::vector<LabeledResult>& rows, TaskLevel level) {
    std::vector<std::pair<std::string, std::string>> row_keys;
    std::vector<Column> cols;
    std::map<std::tuple<std::string, std::string, std::string>, std::pair<double, std::size_t>> acc;
    for (const auto& lr : rows) {
        const auto& r = lr.result;
        if (r.level != level) continue;
        const std::pair<std::string, std::string> rk{lr.run, r.embedding};
        if (std::find(row_keys.begin(), row_keys.end(), rk) == row_keys.end()) row_keys.push_back(rk);
        if (std::none_of(cols.begin(), cols.end(), [&](const Column& c) { return c.task == r.task; }))
            cols.push_back({r.task, r.metric});
        auto& a = acc[{lr.run, r.embedding, r.task}];
        a.first += r.value;
        a.second += 1;
    }
    Table t;
    t.header = {"run", "embedding"};
    for (const auto& c : cols) t.header.push_back(c.task + " " + c.metric + " " + marker(c.metric));
    std::vector<std::optional<double>> best(cols.size());
    for (std::size_t c = 0; c < cols.size(); ++c)
        for (const auto& rk : row_keys)
            if (auto it = acc.find({rk.first, rk.second, cols[c].task}); it != acc.end()) {
                const double v = it->second.first / static_cast<double>(it->second.second);
                if (!best[c] || (lower_is_better(cols[c].metric) ? v < *best[c] : v > *best[c])) best[c] = v;
            }
    for (const auto& rk : row_keys) {
        std::vector<std::string> cells{rk.first, rk.second};
        for (std::size_t c = 0; c < cols.size(); ++c) {
            auto it = acc.find({rk.first, rk.second, cols[c].task});
            if (it == acc.end()) {
                cells.emplace_back("-");
                continue;
            }
            const double v = it->second.first / static_cast<double>(it->second.second);
            cells.push_back(fmt(v) + (best[c] && v == *best[c] ? "*" : " "));
        }
        t.rows.push_back(std::move(cells));
    }
    return t;
}

}  // namespace detail

/// Averages across tasks per (run, embedding): sequence MSE, sequence F1, frame F1.
struct SummaryRow {
    std::string run, embedding;
    std::optional<double> seq_mse, seq_f1, frame_f1;
};

inline std::vector<SummaryRow> summarize(const std::vector<LabeledResult>& rows) {
    std::vector<SummaryRow> out;
    std::map<std::pair<std::string, std::string>, std::map<std::string, std::pair<double, std::size_t>>> per_task;
    std::map<std::pair<std::string, std::string>, std::map<std::string, std::string>> task_group;
    for (const auto& lr : rows) {
        const auto& r = lr.result;
        const std::pair<std::string, std::string> key{lr.run, r.embedding};
        if (std::none_of(out.begin(), out.end(), [&](const SummaryRow& s) { return s.run == key.first && s.embedding == key.second; }))
            out.push_back({key.first, key.second, {}, {}, {}});
        auto& a = per_task[key][r.task];
        a.first += r.value;
        a.second += 1;
        task_group[key][r.task] = (r.level == TaskLevel::sequence ? "seq_" : "frame_") + r.metric;
    }
    for (auto& s : out) {
        std::map<std::string, std::pair<double, std::size_t>> groups;
        const auto key = std::make_pair(s.run, s.embedding);
        for (const auto& [task, a] : per_task[key]) {
            auto& g = groups[task_group[key][task]];
            g.first += a.first / static_cast<double>(a.second);
            g.second += 1;
        }
        auto avg = [&](const char* g) -> std::optional<double> {
            auto it = groups.find(g);
            if (it == groups.end()) return std::nullopt;
            return it->second.first / static_cast<double>(it->second.second);
        };
        s.seq_mse = avg("seq_MSE");
        s.seq_f1 = avg("seq_F1");
        s.frame_f1 = avg("frame_F1");
    }
    return out;
}

inline std::string summary_csv(const std::vector<SummaryRow>& rows) {
    auto cell = [](const std::optional<double>& v) { return v ? eval::format_value(*v) : std::string(); };
    std::string out = "run,embedding,seq_mse,seq_f1,frame_f1\n";
    for (const auto& r : rows) out += r.run + "," + r.embedding + "," + cell(r.seq_mse) + "," + cell(r.seq_f1) + "," + cell(r.frame_f1) + "\n";
    return out;
}

/// Aligned text: sequence-level table, frame-level table, averaged summary.
inline std::string render_text(const std::vector<LabeledResult>& rows) {
    std::string out;
    out += "Sequence-level tasks\n";
    const auto seq = detail::level_table(rows, TaskLevel::sequence);
    out += seq.rows.empty() ? "(no sequence-level results)\n" : seq.render();
    out += "\nFrame-level tasks\n";
    const auto frame = detail::level_table(rows, TaskLevel::frame);
    out += frame.rows.empty() ? "(no frame-level results)\n" : frame.render();

    const auto sum = summarize(rows);
    detail::Table t;
    t.header = {"run", "embedding", "Seq MSE (↓)", "Seq F1 (↑)", "Frame F1 (↑)"};
    std::optional<double> best_mse, best_sf1, best_ff1;
    for (const auto& r : sum) {
        if (r.seq_mse && (!best_mse || *r.seq_mse < *best_mse)) best_mse = r.seq_mse;
        if (r.seq_f1 && (!best_sf1 || *r.seq_f1 > *best_sf1)) best_sf1 = r.seq_f1;
        if (r.frame_f1 && (!best_ff1 || *r.frame_f1 > *best_ff1)) best_ff1 = r.frame_f1;
    }
    auto cell = [](const std::optional<double>& v, const std::optional<double>& best) {
        if (!v) return std::string("-");
        return detail::fmt(*v) + (best && *v == *best ? "*" : " ");
    };
    for (const auto& r : sum)
        t.rows.push_back({r.run, r.embedding, cell(r.seq_mse, best_mse), cell(r.seq_f1, best_sf1), cell(r.frame_f1, best_ff1)});
    out += "\nAveraged summary\n" + t.render();
    out += "\n* best in column. Sequence-level probes use the time-mean of per-frame pooled embeddings.\n";
    return out;
}

}  // namespace bams::report

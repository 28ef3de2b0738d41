#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hoitag/tag_metrics.hpp"

namespace hoitag {

/// One model's scores on one dataset, in the table's metric order.
struct ScoreRow {
    std::string dataset;
    std::string model;
    std::vector<double> values;
};

/// Judged (CoI, BMA, TDO) or rubric (coi_proxy, ...) results of several runs.
struct ScoreTable {
    std::vector<std::string> metrics;
    std::vector<ScoreRow> rows;
};

struct TagRow {
    std::string model;
    TagMetricsReport metrics;
};

struct RenderedReport {
    std::string text;
    std::string csv;
};

class ReportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace report_detail {

inline std::string fixed2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string shortest(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double parse_number(const std::string& s, const std::string& where) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ReportError(where + ": '" + s + "' is not a number");
    return v;
}

template <class T>
void push_unique(std::vector<T>& v, const T& x) {
    if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
}

/// "best <column>: <models> (<value>)" for the largest value of each column.
inline std::string best_lines(const std::vector<std::string>& columns, const std::vector<std::string>& models,
                              const std::vector<std::vector<std::optional<double>>>& cells) {
    std::string out;
    for (std::size_t c = 0; c < columns.size(); ++c) {
        std::optional<double> best;
        for (std::size_t r = 0; r < models.size(); ++r)
            if (cells[r][c] && (!best || *cells[r][c] > *best)) best = cells[r][c];
        if (!best) continue;
        std::string who;
        for (std::size_t r = 0; r < models.size(); ++r)
            if (cells[r][c] && *cells[r][c] == *best) who += (who.empty() ? "" : ", ") + models[r];
        out += "best " + columns[c] + ": " + who + " (" + fixed2(*best) + ")\n";
    }
    return out;
}

}  // namespace report_detail

/// Aligned comparison table with one column group per dataset (values
/// printed to two decimals, space separated), the best model per column,
/// and the same data as CSV "dataset,model,<metrics>".
inline RenderedReport build_report(const ScoreTable& t) {
    using namespace report_detail;
    if (t.rows.empty()) throw ReportError("report needs at least one run");
    if (t.metrics.empty()) throw ReportError("report needs at least one metric");
    std::vector<std::string> datasets, models;
    std::map<std::pair<std::string, std::string>, const ScoreRow*> at;
    for (const auto& r : t.rows) {
        if (r.values.size() != t.metrics.size())
            throw ReportError("row '" + r.model + "' has " + std::to_string(r.values.size()) + " values, expected " +
                              std::to_string(t.metrics.size()));
        push_unique(datasets, r.dataset);
        push_unique(models, r.model);
        at[{r.dataset, r.model}] = &r;
    }
    std::size_t model_w = 5;
    for (const auto& m : models) model_w = std::max(model_w, m.size());
    std::size_t cell_w = 4;
    for (const auto& m : t.metrics) cell_w = std::max(cell_w, m.size());

    auto group = [&](const std::vector<std::string>& cells) {
        std::string s;
        for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? " " : "") + (i + 1 < cells.size() ? pad(cells[i], cell_w) : cells[i]);
        return s;
    };
    const std::size_t values_w = cell_w * t.metrics.size() + t.metrics.size() - 1;
    std::vector<std::size_t> group_w;
    for (const auto& d : datasets) group_w.push_back(std::max(values_w, d.size()));

    std::string line1 = pad("Model", model_w), line2 = pad("", model_w);
    for (std::size_t g = 0; g < datasets.size(); ++g) {
        line1 += " | " + pad(datasets[g], group_w[g]);
        line2 += " | " + pad(group(t.metrics), group_w[g]);
    }
    const std::string rule(line1.size(), '-');
    for (auto* l : {&line1, &line2})
        while (!l->empty() && l->back() == ' ') l->pop_back();
    std::string text = line1 + "\n" + line2 + "\n" + rule + "\n";

    std::vector<std::string> columns;
    for (const auto& d : datasets)
        for (const auto& m : t.metrics) columns.push_back(d + "/" + m);
    std::vector<std::vector<std::optional<double>>> cells(models.size());
    for (std::size_t r = 0; r < models.size(); ++r) {
        std::string line = pad(models[r], model_w);
        for (std::size_t g = 0; g < datasets.size(); ++g) {
            const auto it = at.find({datasets[g], models[r]});
            std::vector<std::string> vals;
            for (std::size_t k = 0; k < t.metrics.size(); ++k) {
                if (it == at.end()) {
                    vals.push_back("-");
                    cells[r].push_back(std::nullopt);
                } else {
                    vals.push_back(fixed2(it->second->values[k]));
                    cells[r].push_back(it->second->values[k]);
                }
            }
            line += " | " + pad(group(vals), group_w[g]);
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        text += line + "\n";
    }
    text += "\n" + best_lines(columns, models, cells);

    std::string csv = "dataset,model";
    for (const auto& m : t.metrics) csv += "," + m;
    csv += "\n";
    for (const auto& r : t.rows) {
        csv += r.dataset + "," + r.model;
        for (double v : r.values) csv += "," + shortest(v);
        csv += "\n";
    }
    return {text, csv};
}

/// Tag-extraction comparison: "P/R/F1" cell, Jaccard and Top-1/3/5, each to
/// two decimals; F1 is printed as stored.
inline RenderedReport build_tag_report(const std::vector<TagRow>& rows) {
    using namespace report_detail;
    if (rows.empty()) throw ReportError("report needs at least one run");
    const std::vector<std::string> heads{"Precision/Recall/F1-score", "Jaccard", "Top-1", "Top-3", "Top-5"};
    std::vector<std::string> models;
    std::vector<std::vector<std::string>> body;
    std::vector<std::vector<std::optional<double>>> cells;
    for (const auto& r : rows) {
        const auto& m = r.metrics;
        auto top = [&](int k) {
            const auto it = m.top_k.find(k);
            return it == m.top_k.end() ? 0.0 : it->second;
        };
        models.push_back(r.model);
        body.push_back({fixed2(m.precision) + "/" + fixed2(m.recall) + "/" + fixed2(m.f1), fixed2(m.jaccard),
                        fixed2(top(1)), fixed2(top(3)), fixed2(top(5))});
        cells.push_back({m.precision, m.recall, m.f1, m.jaccard, top(1), top(3), top(5)});
    }
    std::size_t model_w = 5;
    for (const auto& m : models) model_w = std::max(model_w, m.size());
    std::vector<std::size_t> w;
    for (std::size_t c = 0; c < heads.size(); ++c) {
        std::size_t x = heads[c].size();
        for (const auto& b : body) x = std::max(x, b[c].size());
        w.push_back(x);
    }
    std::string header = pad("Model", model_w);
    for (std::size_t c = 0; c < heads.size(); ++c) header += " | " + pad(heads[c], w[c]);
    while (header.back() == ' ') header.pop_back();
    std::string text = header + "\n" + std::string(header.size(), '-') + "\n";
    for (std::size_t r = 0; r < body.size(); ++r) {
        std::string line = pad(models[r], model_w);
        for (std::size_t c = 0; c < heads.size(); ++c) line += " | " + pad(body[r][c], w[c]);
        while (line.back() == ' ') line.pop_back();
        text += line + "\n";
    }
    text += "\n" + best_lines({"precision", "recall", "f1", "jaccard", "top1", "top3", "top5"}, models, cells);

    std::string csv = "model,precision,recall,f1,jaccard,top1,top3,top5\n";
    for (std::size_t r = 0; r < rows.size(); ++r) {
        csv += models[r];
        for (const auto& v : cells[r]) csv += "," + shortest(*v);
        csv += "\n";
    }
    return {text, csv};
}

inline std::vector<std::vector<std::string>> read_csv_rows(const std::filesystem::path& path,
                                                           std::vector<std::string>& header) {
    std::ifstream in(path);
    if (!in) throw ReportError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ReportError(path.string() + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    header = report_detail::split_csv_line(line);
    std::vector<std::vector<std::string>> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = report_detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw ReportError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                              std::to_string(header.size()) + " fields, got " + std::to_string(cells.size()));
        rows.push_back(std::move(cells));
    }
    return rows;
}

/// CSV with header "dataset,model,<metric>..."; the metrics follow the header.
inline ScoreTable read_score_csv(const std::filesystem::path& path) {
    std::vector<std::string> header;
    const auto rows = read_csv_rows(path, header);
    if (header.size() < 3 || header[0] != "dataset" || header[1] != "model")
        throw ReportError(path.string() + ": header must start with dataset,model");
    ScoreTable t;
    t.metrics.assign(header.begin() + 2, header.end());
    for (const auto& r : rows) {
        ScoreRow s{r[0], r[1], {}};
        for (std::size_t k = 2; k < r.size(); ++k) s.values.push_back(report_detail::parse_number(r[k], path.string()));
        t.rows.push_back(std::move(s));
    }
    return t;
}

/// CSV with header "model,precision,recall,f1,jaccard,top1,top3,top5".
inline std::vector<TagRow> read_tag_csv(const std::filesystem::path& path) {
    std::vector<std::string> header;
    const auto rows = read_csv_rows(path, header);
    const std::vector<std::string> expect{"model", "precision", "recall", "f1", "jaccard", "top1", "top3", "top5"};
    if (header != expect) throw ReportError(path.string() + ": header must be model,precision,recall,f1,jaccard,top1,top3,top5");
    std::vector<TagRow> out;
    for (const auto& r : rows) {
        auto num = [&](std::size_t k) { return report_detail::parse_number(r[k], path.string()); };
        TagRow t;
        t.model = r[0];
        t.metrics.precision = num(1);
        t.metrics.recall = num(2);
        t.metrics.f1 = num(3);
        t.metrics.jaccard = num(4);
        t.metrics.top_k = {{1, num(5)}, {3, num(6)}, {5, num(7)}};
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace hoitag

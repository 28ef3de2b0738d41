#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "hoitag/vocab.hpp"

namespace hoitag {

struct TagMetricsReport {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double jaccard = 0.0;
    std::map<int, double> top_k;
    std::size_t n_samples = 0;
};

/// Canonical tag "<h_class>|<action>|<o_class>".
inline std::string canonical_tag(const std::string& h, const std::string& action, const std::string& o) {
    return h + "|" + action + "|" + o;
}

inline double f1_from(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

/// Macro-averaged precision, recall and Jaccard over samples, F1 from the
/// averaged P and R, and Top-K hit rates for K in {1, 3, 5}. `predicted`
/// lists each sample's tags best-first; repeated tags count once.
///
/// A sample with no predictions and no truth scores 1 on every measure; any
/// other 0/0 ratio scores 0.
inline TagMetricsReport tag_metrics(const std::vector<std::vector<std::string>>& predicted,
                                    const std::vector<std::set<std::string>>& truth) {
    if (predicted.size() != truth.size())
        throw std::invalid_argument("tag_metrics: " + std::to_string(predicted.size()) + " predictions for " +
                                    std::to_string(truth.size()) + " samples");
    if (predicted.empty()) throw std::invalid_argument("tag_metrics: no samples");
    TagMetricsReport rep;
    rep.n_samples = predicted.size();
    const int ks[] = {1, 3, 5};
    std::map<int, std::size_t> hits;
    double sp = 0.0, sr = 0.0, sj = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        std::vector<std::string> ranked;
        for (const auto& t : predicted[i])
            if (std::find(ranked.begin(), ranked.end(), t) == ranked.end()) ranked.push_back(t);
        const auto& tr = truth[i];
        if (ranked.empty() && tr.empty()) {
            sp += 1.0;
            sr += 1.0;
            sj += 1.0;
            for (int k : ks) ++hits[k];
            continue;
        }
        std::size_t tp = 0;
        for (const auto& t : ranked) tp += tr.count(t);
        const std::size_t fp = ranked.size() - tp, fn = tr.size() - tp;
        sp += ranked.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
        sr += tr.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
        sj += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
        for (int k : ks) {
            const std::size_t lim = std::min<std::size_t>(static_cast<std::size_t>(k), ranked.size());
            for (std::size_t j = 0; j < lim; ++j)
                if (tr.count(ranked[j])) {
                    ++hits[k];
                    break;
                }
        }
    }
    const auto n = static_cast<double>(predicted.size());
    rep.precision = sp / n;
    rep.recall = sr / n;
    rep.jaccard = sj / n;
    rep.f1 = f1_from(rep.precision, rep.recall);
    for (int k : ks) rep.top_k[k] = static_cast<double>(hits[k]) / n;
    return rep;
}

}  // namespace hoitag

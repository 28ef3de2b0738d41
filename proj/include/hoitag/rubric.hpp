#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "hoitag/caption.hpp"
#include "hoitag/scene.hpp"
#include "hoitag/vocab.hpp"

namespace hoitag {

/// Offline stand-ins for the three judged dimensions, each in [0,1].
struct RubricScore {
    double coi_proxy = 0.0;
    double bma_proxy = 0.0;
    double tdo_proxy = 0.0;
    friend bool operator==(const RubricScore&, const RubricScore&) = default;
};

using TripleName = std::tuple<std::string, std::string, std::string>;  // (h, action, o)

/// Set F1; two empty sets agree perfectly.
template <class T>
double set_f1(const std::set<T>& predicted, const std::set<T>& truth) {
    if (predicted.empty() && truth.empty()) return 1.0;
    std::size_t tp = 0;
    for (const auto& x : predicted) tp += truth.count(x);
    if (tp == 0) return 0.0;
    const double p = static_cast<double>(tp) / static_cast<double>(predicted.size());
    const double r = static_cast<double>(tp) / static_cast<double>(truth.size());
    return 2.0 * p * r / (p + r);
}

/// Entity class names occurring as words of `text`.
inline std::set<std::string> mentioned_entities(const std::string& text, const Vocabulary& vocab) {
    std::set<std::string> out;
    for (const auto& w : caption_words(text))
        if (vocab.entity_id(w).has_value()) out.insert(w);
    return out;
}

/// Triples stated by sentences of the form
/// "The <entity> <action> [and <action>]... the <entity> .".
inline std::set<TripleName> extract_triples(const std::string& text, const Vocabulary& vocab) {
    const auto w = caption_words(text);
    std::set<TripleName> out;
    auto is_entity = [&](std::size_t i) { return i < w.size() && vocab.entity_id(w[i]).has_value(); };
    auto is_action = [&](std::size_t i) { return i < w.size() && vocab.action_id(w[i]).has_value(); };
    for (std::size_t i = 0; i + 1 < w.size(); ++i) {
        if (w[i] != "The" || !is_entity(i + 1)) continue;
        std::size_t j = i + 2;
        std::vector<std::string> acts;
        if (!is_action(j)) continue;
        acts.push_back(w[j++]);
        while (j + 1 < w.size() && w[j] == "and" && is_action(j + 1)) {
            acts.push_back(w[j + 1]);
            j += 2;
        }
        if (j + 2 >= w.size() || w[j] != "the" || !is_entity(j + 1) || w[j + 2] != ".") continue;
        for (const auto& a : acts) out.emplace(w[i + 1], a, w[j + 1]);
    }
    return out;
}

inline std::set<TripleName> record_triples(const HoiPairRecord& r, const Vocabulary& vocab) {
    std::set<TripleName> out;
    for (const auto& t : r.triples) {
        const EntityRecord* h = r.entity(t.human_idx);
        const EntityRecord* o = r.entity(t.object_idx);
        if (!h || !o) continue;
        for (int a : t.action_ids)
            out.emplace(vocab.entities.at(static_cast<std::size_t>(h->class_id)),
                        vocab.actions.at(static_cast<std::size_t>(a)),
                        vocab.entities.at(static_cast<std::size_t>(o->class_id)));
    }
    return out;
}

/// coi: entity-mention F1. bma: F1 of triples extracted by the sentence
/// grammar. tdo: share of threat triples whose action and both entity names
/// all appear as words (1 when the scene has none).
inline RubricScore rubric_scores(const std::string& caption, const HoiPairRecord& r, const Vocabulary& vocab) {
    RubricScore s;
    std::set<std::string> classes;
    for (const auto& e : r.entities) classes.insert(vocab.entities.at(static_cast<std::size_t>(e.class_id)));
    s.coi_proxy = set_f1(mentioned_entities(caption, vocab), classes);
    const auto truth = record_triples(r, vocab);
    s.bma_proxy = set_f1(extract_triples(caption, vocab), truth);

    const auto words = caption_words(caption);
    const std::set<std::string> present(words.begin(), words.end());
    std::size_t threats = 0, covered = 0;
    for (const auto& [h, a, o] : truth) {
        if (!vocab.is_threat_action(vocab.action_id(a).value_or(-1))) continue;
        ++threats;
        covered += present.count(h) && present.count(a) && present.count(o);
    }
    s.tdo_proxy = threats == 0 ? 1.0 : static_cast<double>(covered) / static_cast<double>(threats);
    return s;
}

/// Mean of each proxy over a set of scores.
inline RubricScore mean_rubric(const std::vector<RubricScore>& scores) {
    RubricScore m;
    if (scores.empty()) return m;
    for (const auto& s : scores) {
        m.coi_proxy += s.coi_proxy;
        m.bma_proxy += s.bma_proxy;
        m.tdo_proxy += s.tdo_proxy;
    }
    const double n = static_cast<double>(scores.size());
    m.coi_proxy /= n;
    m.bma_proxy /= n;
    m.tdo_proxy /= n;
    return m;
}

}  // namespace hoitag

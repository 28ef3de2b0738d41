#pragma once

#include <algorithm>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hoitag/scene.hpp"
#include "hoitag/tokenizer.hpp"

namespace hoitag {

struct CaptionRecord {
    std::string image_id;
    std::string text;
    std::vector<int> token_ids;
    friend bool operator==(const CaptionRecord&, const CaptionRecord&) = default;
};

/// Whitespace words with trailing "," / "." split off as their own words.
inline std::vector<std::string> caption_words(std::string_view text) {
    std::vector<std::string> out;
    std::istringstream in{std::string(text)};
    std::string w;
    while (in >> w) {
        std::vector<std::string> tail;
        while (w.size() > 1 && (w.back() == ',' || w.back() == '.')) {
            tail.insert(tail.begin(), std::string(1, w.back()));
            w.pop_back();
        }
        out.push_back(w);
        for (auto& t : tail) out.push_back(t);
    }
    return out;
}

inline std::string join_list(const std::vector<std::string>& items) {
    std::string s;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i > 0) s += (i + 1 == items.size()) ? " and " : ", ";
        s += items[i];
    }
    return s;
}

/// One sentence per triple, "The <human> <action> [and <action>...] the <object>.",
/// wrapped by a preamble listing the entity classes and a threat verdict.
inline std::string caption_text(const HoiPairRecord& record, const Vocabulary& vocab) {
    std::set<int> classes;
    for (const auto& e : record.entities) classes.insert(e.class_id);
    std::vector<std::string> mentions;
    for (int c : classes) mentions.push_back("a " + vocab.entities.at(static_cast<std::size_t>(c)));
    std::string text = "The scene shows " + join_list(mentions) + ".";

    std::vector<HoiTripleGT> triples = record.triples;
    std::stable_sort(triples.begin(), triples.end(), [](const HoiTripleGT& a, const HoiTripleGT& b) {
        return std::pair(a.human_idx, a.object_idx) < std::pair(b.human_idx, b.object_idx);
    });
    for (const auto& t : triples) {
        const EntityRecord* h = record.entity(t.human_idx);
        const EntityRecord* o = record.entity(t.object_idx);
        if (!h || !o) continue;
        std::vector<int> acts = t.action_ids;
        std::sort(acts.begin(), acts.end());
        std::string verbs;
        for (std::size_t i = 0; i < acts.size(); ++i) {
            if (i > 0) verbs += " and ";
            verbs += vocab.actions.at(static_cast<std::size_t>(acts[i]));
        }
        text += " The " + vocab.entities.at(static_cast<std::size_t>(h->class_id)) + " " + verbs + " the " +
                vocab.entities.at(static_cast<std::size_t>(o->class_id)) + ".";
    }
    text += record.is_threat ? " A threat is detected." : " No threat is detected.";
    return text;
}

inline CaptionRecord align_caption(const HoiPairRecord& record, const Vocabulary& vocab, const Tokenizer& tok) {
    CaptionRecord c;
    c.image_id = record.image_id;
    c.text = caption_text(record, vocab);
    c.token_ids = tok.tokenize(c.text);
    return c;
}

/// Elements of the record's triples (entity class names and action names)
/// that do not occur as words of the caption. Empty means aligned.
inline std::vector<std::string> validate_alignment(const HoiPairRecord& record, const CaptionRecord& caption,
                                                   const Vocabulary& vocab) {
    const auto words = caption_words(caption.text);
    const std::set<std::string> present(words.begin(), words.end());
    std::vector<std::string> violations;
    std::set<std::string> reported;
    auto require = [&](const std::string& kind, const std::string& name) {
        if (present.count(name) || reported.count(kind + name)) return;
        reported.insert(kind + name);
        violations.push_back("missing " + kind + " '" + name + "'");
    };
    for (const auto& t : record.triples) {
        for (int idx : {t.human_idx, t.object_idx}) {
            const EntityRecord* e = record.entity(idx);
            if (!e) {
                violations.push_back("triple references missing entity " + std::to_string(idx));
                continue;
            }
            if (vocab.valid_entity(e->class_id)) require("entity", vocab.entities[static_cast<std::size_t>(e->class_id)]);
        }
        for (int a : t.action_ids)
            if (vocab.valid_action(a)) require("action", vocab.actions[static_cast<std::size_t>(a)]);
    }
    return violations;
}

}  // namespace hoitag

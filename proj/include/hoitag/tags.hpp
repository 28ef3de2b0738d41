#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <tuple>
#include <vector>

#include "hoitag/hoi_encoder.hpp"
#include "hoitag/scene.hpp"
#include "hoitag/tag_metrics.hpp"
#include "hoitag/tokenizer.hpp"
#include "hoitag/vocab.hpp"

namespace hoitag {

/// A decoded or ground-truth interaction named by vocabulary strings.
struct HoiTag {
    std::string h;
    std::string o;
    std::string action;
    double confidence = 1.0;
    friend bool operator==(const HoiTag&, const HoiTag&) = default;
};

using TagWarning = std::function<void(const std::string&)>;

/// Tags sorted by descending confidence, then by (h, action, o).
inline std::vector<HoiTag> ranked_tags(std::vector<HoiTag> tags) {
    std::stable_sort(tags.begin(), tags.end(), [](const HoiTag& a, const HoiTag& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        return std::tie(a.h, a.action, a.o) < std::tie(b.h, b.action, b.o);
    });
    return tags;
}

/// "[HOI] h a o [SEP] h a o [SEP] ..." over the ranked tags; at most
/// `max_tags` triples are kept. Unknown names become [UNK] and are reported
/// through `warn`.
inline std::vector<int> serialize_hoi_tags(const std::vector<HoiTag>& tags, const Tokenizer& tok,
                                           std::size_t max_tags = 8, const TagWarning& warn = {}) {
    std::vector<int> out{special::kHoi};
    const auto ranked = ranked_tags(tags);
    for (std::size_t i = 0; i < ranked.size() && i < max_tags; ++i) {
        for (const std::string* name : {&ranked[i].h, &ranked[i].action, &ranked[i].o}) {
            const int id = tok.id(*name);
            if (id == special::kUnk && warn) warn("tag name '" + *name + "' is not in the vocabulary; using [UNK]");
            out.push_back(id);
        }
        out.push_back(special::kSep);
    }
    return out;
}

/// Token groups of each serialized triple (the words between separators).
inline std::vector<std::vector<int>> tag_groups(const std::vector<int>& serialized) {
    std::vector<std::vector<int>> groups;
    std::vector<int> cur;
    for (std::size_t i = 1; i < serialized.size(); ++i) {
        if (serialized[i] == special::kSep) {
            if (!cur.empty()) groups.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(serialized[i]);
        }
    }
    if (!cur.empty()) groups.push_back(std::move(cur));
    return groups;
}

/// One tag per (triple, action) of a ground-truth record, confidence 1.
inline std::vector<HoiTag> ground_truth_tags(const HoiPairRecord& r, const Vocabulary& vocab) {
    std::vector<HoiTag> out;
    for (const auto& t : r.triples) {
        const EntityRecord* h = r.entity(t.human_idx);
        const EntityRecord* o = r.entity(t.object_idx);
        if (!h || !o) continue;
        for (int a : t.action_ids)
            out.push_back(HoiTag{vocab.entities.at(static_cast<std::size_t>(h->class_id)),
                                 vocab.entities.at(static_cast<std::size_t>(o->class_id)),
                                 vocab.actions.at(static_cast<std::size_t>(a)), 1.0});
    }
    return ranked_tags(std::move(out));
}

inline std::vector<HoiTag> tags_from_decoded(const std::vector<DecodedTriple>& d, const Vocabulary& vocab) {
    std::vector<HoiTag> out;
    for (const auto& t : d)
        out.push_back(HoiTag{vocab.entities.at(static_cast<std::size_t>(t.h_class)),
                             vocab.entities.at(static_cast<std::size_t>(t.o_class)),
                             vocab.actions.at(static_cast<std::size_t>(t.action)), t.confidence});
    return ranked_tags(std::move(out));
}

inline std::string canonical_tag(const HoiTag& t) { return canonical_tag(t.h, t.action, t.o); }

}  // namespace hoitag

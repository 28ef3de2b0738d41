#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hoitag/caption.hpp"
#include "hoitag/png_io.hpp"
#include "hoitag/scene.hpp"

namespace hoitag {

inline constexpr const char* kDatasetSchema = "td-hoi/1";

struct DatasetManifest {
    std::string split = "train";
    std::vector<std::pair<HoiPairRecord, CaptionRecord>> records;
    Vocabulary vocab = Vocabulary::standard();
    friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// Malformed dataset file. `line` is 1-based; `field` names the offending key.
class SchemaError : public std::runtime_error {
public:
    SchemaError(std::size_t line, std::string field, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": field '" + field + "': " + what),
          line_(line),
          field_(std::move(field)) {}
    std::size_t line() const { return line_; }
    const std::string& field() const { return field_; }

private:
    std::size_t line_;
    std::string field_;
};

inline bool valid_split_name(const std::string& s) { return s == "train" || s == "val" || s == "test"; }

inline nlohmann::ordered_json record_to_json(const HoiPairRecord& r, const CaptionRecord& c) {
    nlohmann::ordered_json j;
    j["image_id"] = r.image_id;
    j["scene_seed"] = r.scene_seed;
    auto ents = nlohmann::ordered_json::array();
    for (const auto& e : r.entities) {
        nlohmann::ordered_json je;
        je["id"] = e.id;
        je["class_id"] = e.class_id;
        je["box"] = {e.box.x_min, e.box.y_min, e.box.x_max, e.box.y_max};
        ents.push_back(std::move(je));
    }
    j["entities"] = std::move(ents);
    auto trips = nlohmann::ordered_json::array();
    for (const auto& t : r.triples) {
        nlohmann::ordered_json jt;
        jt["h"] = t.human_idx;
        jt["o"] = t.object_idx;
        jt["actions"] = t.action_ids;
        trips.push_back(std::move(jt));
    }
    j["triples"] = std::move(trips);
    j["is_threat"] = r.is_threat;
    j["caption"] = c.text;
    return j;
}

inline nlohmann::ordered_json header_json(const DatasetManifest& m) {
    nlohmann::ordered_json h;
    h["schema"] = kDatasetSchema;
    h["vocab_entities"] = m.vocab.entities;
    h["vocab_actions"] = m.vocab.actions;
    h["threat_actions"] = m.vocab.threat_actions;
    h["split"] = m.split;
    return h;
}

inline void serialize_dataset(const DatasetManifest& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << header_json(m).dump() << '\n';
    for (const auto& [r, c] : m.records) out << record_to_json(r, c).dump() << '\n';
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

namespace dataset_detail {

using json = nlohmann::json;

inline const json& require(const json& obj, const char* field, std::size_t line) {
    if (!obj.is_object()) throw SchemaError(line, field, "enclosing value is not an object");
    auto it = obj.find(field);
    if (it == obj.end()) throw SchemaError(line, field, "missing");
    return *it;
}

inline int as_int(const json& v, const char* field, std::size_t line) {
    if (!v.is_number_integer()) throw SchemaError(line, field, "expected integer");
    return v.get<int>();
}

inline std::vector<std::string> as_strings(const json& v, const char* field, std::size_t line) {
    if (!v.is_array()) throw SchemaError(line, field, "expected array of strings");
    std::vector<std::string> out;
    for (const auto& s : v) {
        if (!s.is_string()) throw SchemaError(line, field, "expected array of strings");
        out.push_back(s.get<std::string>());
    }
    return out;
}

}  // namespace dataset_detail

inline DatasetManifest load_dataset(const std::filesystem::path& path) {
    using namespace dataset_detail;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    DatasetManifest m;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    Tokenizer tok = Tokenizer::for_vocabulary(m.vocab);
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw SchemaError(lineno, "<line>", std::string("invalid JSON: ") + e.what());
        }
        if (!have_header) {
            const json& schema = require(j, "schema", lineno);
            if (!schema.is_string() || schema.get<std::string>() != kDatasetSchema)
                throw SchemaError(lineno, "schema", std::string("expected \"") + kDatasetSchema + "\"");
            m.vocab.entities = as_strings(require(j, "vocab_entities", lineno), "vocab_entities", lineno);
            m.vocab.actions = as_strings(require(j, "vocab_actions", lineno), "vocab_actions", lineno);
            m.vocab.threat_actions = as_strings(require(j, "threat_actions", lineno), "threat_actions", lineno);
            if (auto it = j.find("split"); it != j.end()) {
                if (!it->is_string() || !valid_split_name(it->get<std::string>()))
                    throw SchemaError(lineno, "split", "expected one of train, val, test");
                m.split = it->get<std::string>();
            }
            tok = Tokenizer::for_vocabulary(m.vocab);
            have_header = true;
            continue;
        }
        HoiPairRecord r;
        const json& id = require(j, "image_id", lineno);
        if (!id.is_string()) throw SchemaError(lineno, "image_id", "expected string");
        r.image_id = id.get<std::string>();
        const json& seed = require(j, "scene_seed", lineno);
        if (!seed.is_number_integer()) throw SchemaError(lineno, "scene_seed", "expected integer");
        r.scene_seed = seed.get<std::uint64_t>();
        const json& ents = require(j, "entities", lineno);
        if (!ents.is_array()) throw SchemaError(lineno, "entities", "expected array");
        for (const auto& je : ents) {
            EntityRecord e;
            e.id = as_int(require(je, "id", lineno), "id", lineno);
            e.class_id = as_int(require(je, "class_id", lineno), "class_id", lineno);
            const json& box = require(je, "box", lineno);
            if (!box.is_array() || box.size() != 4) throw SchemaError(lineno, "box", "expected 4 numbers");
            for (const auto& v : box)
                if (!v.is_number()) throw SchemaError(lineno, "box", "expected 4 numbers");
            e.box = Box{box[0].get<double>(), box[1].get<double>(), box[2].get<double>(), box[3].get<double>()};
            r.entities.push_back(e);
        }
        const json& trips = require(j, "triples", lineno);
        if (!trips.is_array()) throw SchemaError(lineno, "triples", "expected array");
        for (const auto& jt : trips) {
            HoiTripleGT t;
            t.human_idx = as_int(require(jt, "h", lineno), "h", lineno);
            t.object_idx = as_int(require(jt, "o", lineno), "o", lineno);
            const json& acts = require(jt, "actions", lineno);
            if (!acts.is_array()) throw SchemaError(lineno, "actions", "expected array of integers");
            for (const auto& a : acts) t.action_ids.push_back(as_int(a, "actions", lineno));
            r.triples.push_back(std::move(t));
        }
        const json& thr = require(j, "is_threat", lineno);
        if (!thr.is_boolean()) throw SchemaError(lineno, "is_threat", "expected boolean");
        r.is_threat = thr.get<bool>();
        const json& cap = require(j, "caption", lineno);
        if (!cap.is_string()) throw SchemaError(lineno, "caption", "expected string");
        CaptionRecord c{r.image_id, cap.get<std::string>(), {}};
        c.token_ids = tok.tokenize(c.text);
        m.records.emplace_back(std::move(r), std::move(c));
    }
    if (!have_header) throw SchemaError(lineno == 0 ? 1 : lineno, "schema", "missing header record");
    return m;
}

/// Record-level problems of a loaded manifest (invariants and alignment),
/// each prefixed with the record's image id.
inline std::vector<std::string> manifest_violations(const DatasetManifest& m) {
    std::vector<std::string> out;
    std::set<std::string> ids;
    for (const auto& [r, c] : m.records) {
        if (!ids.insert(r.image_id).second) out.push_back(r.image_id + ": duplicate image_id");
        for (const auto& v : record_violations(r, m.vocab)) out.push_back(r.image_id + ": " + v);
        for (const auto& v : validate_alignment(r, c, m.vocab)) out.push_back(r.image_id + ": " + v);
    }
    return out;
}

inline std::filesystem::path image_path(const std::filesystem::path& dir, const std::string& image_id) {
    return dir / (image_id + ".png");
}

struct SplitSizes {
    std::size_t train = 0, val = 0, test = 0;
};

/// Number of threat scenes for a split of n records.
inline std::size_t threat_count(std::size_t n, double ratio) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio + 1e-9));
}

/// Three disjoint manifests. Record k (counted across splits in train, val,
/// test order) uses seed derive_seed(master_seed, k); exactly
/// floor(n * threat_ratio) records of each split are generated as threats.
/// `on_image` receives every rendered scene.
inline std::vector<DatasetManifest> build_splits(SplitSizes sizes, double threat_ratio, std::uint64_t master_seed,
                                                 GeneratorConfig base = {},
                                                 const std::function<void(const SceneImage&)>& on_image = {}) {
    if (threat_ratio < 0.0 || threat_ratio > 1.0) throw std::invalid_argument("threat ratio outside [0,1]");
    check_generator_config(base);
    const Tokenizer tok = Tokenizer::for_vocabulary(base.vocab);
    const std::pair<const char*, std::size_t> plan[] = {{"train", sizes.train}, {"val", sizes.val}, {"test", sizes.test}};
    std::vector<DatasetManifest> out;
    std::set<std::string> seen;
    std::uint64_t global = 0;
    for (std::size_t s = 0; s < 3; ++s) {
        const auto [name, n] = plan[s];
        DatasetManifest m;
        m.split = name;
        m.vocab = base.vocab;
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        Rng pick(derive_seed(master_seed, 0xF00D0000ULL + s));
        pick.shuffle(order);
        std::vector<bool> threat(n, false);
        for (std::size_t i = 0; i < threat_count(n, threat_ratio); ++i) threat[order[i]] = true;
        for (std::size_t i = 0; i < n; ++i, ++global) {
            GeneratorConfig cfg = base;
            cfg.threat_ratio = threat[i] ? 1.0 : 0.0;
            auto [img, rec] = build_synthetic_scene(derive_seed(master_seed, global), cfg);
            if (!seen.insert(rec.image_id).second) throw std::runtime_error("image id collision: " + rec.image_id);
            if (on_image) on_image(img);
            CaptionRecord cap = align_caption(rec, base.vocab, tok);
            m.records.emplace_back(std::move(rec), std::move(cap));
        }
        out.push_back(std::move(m));
    }
    return out;
}

/// Re-renders a record's scene from its seed (bit-identical to the original).
inline SceneImage regenerate_image(const HoiPairRecord& r, const GeneratorConfig& base) {
    GeneratorConfig cfg = base;
    cfg.threat_ratio = r.is_threat ? 1.0 : 0.0;
    return build_synthetic_scene(r.scene_seed, cfg).first;
}

}  // namespace hoitag

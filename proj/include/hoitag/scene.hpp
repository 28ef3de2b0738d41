#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hoitag/rng.hpp"
#include "hoitag/vocab.hpp"

namespace hoitag {

/// Normalised [0,1] box, corner form.
struct Box {
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
    friend bool operator==(const Box&, const Box&) = default;
};

struct EntityRecord {
    int id = 0;
    int class_id = 0;
    Box box;
    friend bool operator==(const EntityRecord&, const EntityRecord&) = default;
};

struct HoiTripleGT {
    int human_idx = 0;
    int object_idx = 0;
    std::vector<int> action_ids;
    friend bool operator==(const HoiTripleGT&, const HoiTripleGT&) = default;
};

struct HoiPairRecord {
    std::string image_id;
    std::vector<EntityRecord> entities;
    std::vector<HoiTripleGT> triples;
    bool is_threat = false;
    std::uint64_t scene_seed = 0;
    friend bool operator==(const HoiPairRecord&, const HoiPairRecord&) = default;

    const EntityRecord* entity(int id) const {
        for (const auto& e : entities)
            if (e.id == id) return &e;
        return nullptr;
    }
};

/// H x W x 3 pixels in [0,1], row-major, channel-interleaved.
struct SceneImage {
    std::string image_id;
    int size = 0;
    std::vector<double> pixels;

    double at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * size + x) * 3 + c]; }
    double& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * size + x) * 3 + c]; }
    friend bool operator==(const SceneImage&, const SceneImage&) = default;
};

struct GeneratorConfig {
    int resolution = 64;
    int min_entities = 1;
    int max_entities = 5;
    double threat_ratio = 0.4;
    double target_mean_entities = 2.7;
    Vocabulary vocab = Vocabulary::standard();
};

/// Ground truth is decided by these rules: a contact marker straddling the
/// shared edge of two glyphs means the pair interacts, the marker colours
/// encode the action set, and the left glyph fills the human slot.
inline constexpr int kCellPixels = 16;
inline constexpr int kContactOverlap = 3;
inline constexpr int kMarkerPixels = 4;

/// Whether `record` is a threat scene: some triple carries a threat action.
inline bool has_threat_action(const HoiPairRecord& record, const Vocabulary& vocab) {
    for (const auto& t : record.triples)
        for (int a : t.action_ids)
            if (vocab.is_threat_action(a)) return true;
    return false;
}

/// Invariant violations of a record against a vocabulary, as messages.
inline std::vector<std::string> record_violations(const HoiPairRecord& r, const Vocabulary& vocab) {
    std::vector<std::string> out;
    if (r.entities.empty()) out.push_back("record has no entities");
    std::set<int> ids;
    for (const auto& e : r.entities) {
        if (!ids.insert(e.id).second) out.push_back("duplicate entity id " + std::to_string(e.id));
        if (!vocab.valid_entity(e.class_id)) out.push_back("entity class out of range: " + std::to_string(e.class_id));
        if (!(e.box.x_min < e.box.x_max && e.box.y_min < e.box.y_max))
            out.push_back("degenerate box for entity " + std::to_string(e.id));
    }
    for (const auto& t : r.triples) {
        if (t.human_idx == t.object_idx) out.push_back("triple relates an entity to itself");
        if (!ids.count(t.human_idx) || !ids.count(t.object_idx)) out.push_back("triple references a missing entity");
        if (t.action_ids.empty()) out.push_back("triple has no actions");
        std::set<int> acts(t.action_ids.begin(), t.action_ids.end());
        if (acts.size() != t.action_ids.size()) out.push_back("triple has duplicate actions");
        for (int a : t.action_ids)
            if (!vocab.valid_action(a)) out.push_back("action out of range: " + std::to_string(a));
    }
    if (r.is_threat != has_threat_action(r, vocab)) out.push_back("is_threat disagrees with triples");
    return out;
}

namespace scene_detail {

using Rgb = std::array<double, 3>;

struct PixelBox {
    int x0, y0, x1, y1;  // half-open
    bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

struct PlacedEntity {
    int class_id;
    PixelBox box;
};

struct Marker {
    int x0, y0;
    std::vector<int> actions;
};

struct PairTemplate {
    const char* human;
    const char* object;
    std::vector<const char*> actions;
};

inline const std::vector<PairTemplate>& pair_templates() {
    static const std::vector<PairTemplate> t = {
        {"person", "person", {"attack"}},        {"person", "person", {"stand_by"}},
        {"person", "knife", {"hold"}},           {"person", "knife", {"hold", "attack"}},
        {"person", "gun", {"hold"}},             {"person", "gun", {"hold", "shoot"}},
        {"person", "bag", {"carry"}},            {"person", "car", {"stand_by"}},
        {"person", "car", {"hijack"}},           {"car", "wall", {"hijack"}},
        {"person", "wall", {"stand_by"}},
    };
    return t;
}

struct ResolvedTemplate {
    int human, object;
    std::vector<int> actions;
    bool threat;
};

inline std::vector<ResolvedTemplate> resolve_templates(const Vocabulary& vocab) {
    std::vector<ResolvedTemplate> out;
    for (const auto& t : pair_templates()) {
        auto h = vocab.entity_id(t.human);
        auto o = vocab.entity_id(t.object);
        if (!h || !o) continue;
        ResolvedTemplate r{*h, *o, {}, false};
        bool ok = true;
        for (const char* a : t.actions) {
            auto id = vocab.action_id(a);
            if (!id) {
                ok = false;
                break;
            }
            r.actions.push_back(*id);
            r.threat = r.threat || vocab.is_threat_action(*id);
        }
        if (!ok) continue;
        std::sort(r.actions.begin(), r.actions.end());
        out.push_back(std::move(r));
    }
    return out;
}

/// Glyph width/height ranges in pixels, indexed by standard class name.
struct SizeRange {
    int w_lo, w_hi, h_lo, h_hi;
};

inline SizeRange size_for(const std::string& name) {
    if (name == "person") return {6, 8, 11, 14};
    if (name == "knife") return {8, 11, 4, 5};
    if (name == "gun") return {8, 11, 6, 8};
    if (name == "car") return {11, 13, 7, 9};
    if (name == "bag") return {7, 9, 7, 9};
    if (name == "wall") return {11, 13, 6, 8};
    return {7, 10, 7, 10};
}

inline Rgb class_color(const std::string& name) {
    if (name == "person") return {0.85, 0.15, 0.15};
    if (name == "knife") return {0.2, 0.8, 0.85};
    if (name == "gun") return {0.1, 0.1, 0.1};
    if (name == "car") return {0.15, 0.3, 0.85};
    if (name == "bag") return {0.9, 0.6, 0.1};
    if (name == "wall") return {0.55, 0.55, 0.55};
    return {0.4, 0.7, 0.3};
}

inline Rgb action_color(const std::string& name) {
    if (name == "hold") return {1.0, 1.0, 0.0};
    if (name == "carry") return {0.0, 0.7, 0.0};
    if (name == "stand_by") return {0.4, 0.0, 0.8};
    if (name == "attack") return {1.0, 0.0, 0.6};
    if (name == "shoot") return {0.0, 0.0, 0.4};
    if (name == "hijack") return {0.0, 0.5, 0.5};
    return {1.0, 1.0, 1.0};
}

inline double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

inline void put(SceneImage& img, int x, int y, const Rgb& c) {
    if (x < 0 || y < 0 || x >= img.size || y >= img.size) return;
    for (int k = 0; k < 3; ++k) img.at(y, x, k) = quantize(c[k]);
}

inline void draw_glyph(SceneImage& img, const std::string& cls, const PixelBox& b) {
    const Rgb col = class_color(cls);
    const int w = b.x1 - b.x0, h = b.y1 - b.y0;
    const Rgb dark = {col[0] * 0.6, col[1] * 0.6, col[2] * 0.6};
    for (int y = b.y0; y < b.y1; ++y)
        for (int x = b.x0; x < b.x1; ++x) {
            const double u = (x - b.x0 + 0.5) / w;  // [0,1] across
            const double v = (y - b.y0 + 0.5) / h;  // [0,1] down
            bool on = false;
            Rgb c = col;
            if (cls == "person") {
                const double head_r = 0.22;
                if (v < 0.3) {
                    const double dy = (v - 0.15) / 0.15, dx = (u - 0.5) / (head_r * 2.0);
                    on = dx * dx + dy * dy <= 1.0;
                    c = dark;
                } else {
                    const double dy = (v - 0.65) / 0.36, dx = (u - 0.5) / 0.5;
                    on = dx * dx + dy * dy <= 1.0;
                }
            } else if (cls == "knife") {
                if (u < 0.3) {
                    on = true;
                    c = dark;
                } else {
                    on = v >= (u - 0.3) / 0.7 * 0.8;
                }
            } else if (cls == "gun") {
                on = v < 0.45 || u < 0.35;
            } else if (cls == "car") {
                if (v < 0.7) {
                    on = true;
                } else {
                    on = (u > 0.1 && u < 0.35) || (u > 0.65 && u < 0.9);
                    c = {0.05, 0.05, 0.05};
                }
            } else if (cls == "bag") {
                if (v >= 0.3) {
                    on = true;
                } else {
                    on = u < 0.3 || u > 0.7 || v < 0.12;
                    on = on && u > 0.15 && u < 0.85;
                }
            } else if (cls == "wall") {
                on = true;
                const int row = y - b.y0;
                const bool mortar = row % 3 == 2 || ((x - b.x0 + (row / 3) * 2) % 5 == 4);
                if (mortar) c = {0.35, 0.35, 0.35};
            } else {
                on = true;
            }
            if (on) put(img, x, y, c);
        }
}

inline void draw_marker(SceneImage& img, const Marker& m, const Vocabulary& vocab) {
    for (int dy = 0; dy < kMarkerPixels; ++dy) {
        const std::size_t part = m.actions.size() <= 1 ? 0 : static_cast<std::size_t>(dy * m.actions.size() / kMarkerPixels);
        const Rgb c = action_color(vocab.actions[static_cast<std::size_t>(m.actions[part])]);
        for (int dx = 0; dx < kMarkerPixels; ++dx) put(img, m.x0 + dx, m.y0 + dy, c);
    }
}

}  // namespace scene_detail

/// Largest entity count the cell layout can always place at `resolution`.
inline int glyph_capacity(int resolution) {
    if (resolution < 2 * kCellPixels || resolution % kCellPixels != 0) return 0;
    const int cells = resolution / kCellPixels;
    return cells * cells;
}

inline void check_generator_config(const GeneratorConfig& cfg) {
    if (cfg.resolution < 2 * kCellPixels || cfg.resolution % kCellPixels != 0)
        throw std::invalid_argument("resolution must be a multiple of 16 and at least 32");
    if (cfg.min_entities < 1 || cfg.min_entities > cfg.max_entities)
        throw std::invalid_argument("entity count range must satisfy 1 <= min <= max");
    if (cfg.max_entities > glyph_capacity(cfg.resolution))
        throw std::invalid_argument("max entity count " + std::to_string(cfg.max_entities) +
                                    " exceeds glyph packing capacity " +
                                    std::to_string(glyph_capacity(cfg.resolution)) + " at resolution " +
                                    std::to_string(cfg.resolution));
    if (cfg.threat_ratio < 0.0 || cfg.threat_ratio > 1.0) throw std::invalid_argument("threat ratio outside [0,1]");
}

inline std::string image_id_for_seed(std::uint64_t seed) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%016llx", static_cast<unsigned long long>(seed));
    return buf;
}

/// Reads the interaction triples off a rendered layout: for each contact
/// marker, the two glyph boxes containing its centre form a pair, the left one
/// in the human slot.
inline std::vector<HoiTripleGT> derive_triples(const std::vector<scene_detail::PlacedEntity>& placed,
                                               const std::vector<scene_detail::Marker>& markers) {
    std::vector<HoiTripleGT> out;
    for (const auto& m : markers) {
        const int cx = m.x0 + kMarkerPixels / 2, cy = m.y0 + kMarkerPixels / 2;
        std::vector<int> hits;
        for (std::size_t i = 0; i < placed.size(); ++i)
            if (placed[i].box.contains(cx, cy)) hits.push_back(static_cast<int>(i));
        if (hits.size() != 2) throw std::logic_error("contact marker must touch exactly two glyphs");
        int h = hits[0], o = hits[1];
        if (placed[static_cast<std::size_t>(o)].box.x0 < placed[static_cast<std::size_t>(h)].box.x0) std::swap(h, o);
        std::vector<int> acts = m.actions;
        std::sort(acts.begin(), acts.end());
        out.push_back(HoiTripleGT{h, o, acts});
    }
    std::sort(out.begin(), out.end(), [](const HoiTripleGT& a, const HoiTripleGT& b) {
        return std::pair(a.human_idx, a.object_idx) < std::pair(b.human_idx, b.object_idx);
    });
    return out;
}

/// Deterministic synthetic scene: glyphs on a 16-pixel cell layout, with
/// ground truth read back from the layout.
inline std::pair<SceneImage, HoiPairRecord> build_synthetic_scene(std::uint64_t seed, const GeneratorConfig& cfg) {
    using namespace scene_detail;
    check_generator_config(cfg);
    const Vocabulary& vocab = cfg.vocab;
    const auto templates = resolve_templates(vocab);
    std::vector<const ResolvedTemplate*> threat_t, normal_t;
    for (const auto& t : templates) (t.threat ? threat_t : normal_t).push_back(&t);

    Rng rng(seed);
    const int cells = cfg.resolution / kCellPixels;
    int n = rng.uniform_int(cfg.min_entities, cfg.max_entities);
    const bool want_threat = rng.bernoulli(cfg.threat_ratio) && cfg.max_entities >= 2 && !threat_t.empty();
    if (want_threat && n < 2) n = 2;

    std::vector<const ResolvedTemplate*> pairs;
    int remaining = n;
    if (want_threat) {
        pairs.push_back(threat_t[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(threat_t.size()) - 1))]);
        remaining -= 2;
    }
    while (remaining >= 2 && rng.bernoulli(0.5)) {
        const auto& pool = (want_threat && rng.bernoulli(0.5)) ? threat_t : normal_t;
        if (pool.empty()) break;
        pairs.push_back(pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))]);
        remaining -= 2;
    }

    // Pair slots are aligned column pairs (0,1), (2,3), ...; singles take the leftover cells.
    std::vector<std::pair<int, int>> pair_slots;
    for (int r = 0; r < cells; ++r)
        for (int c = 0; c + 1 < cells; c += 2) pair_slots.emplace_back(r, c);
    rng.shuffle(pair_slots);
    std::vector<std::vector<bool>> used(static_cast<std::size_t>(cells), std::vector<bool>(static_cast<std::size_t>(cells)));

    auto jitter_size = [&](int cls) {
        const SizeRange s = size_for(vocab.entities[static_cast<std::size_t>(cls)]);
        return std::pair(rng.uniform_int(s.w_lo, s.w_hi), rng.uniform_int(s.h_lo, s.h_hi));
    };

    std::vector<PlacedEntity> placed;
    std::vector<Marker> markers;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        const auto [r, c] = pair_slots[p];
        used[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = true;
        used[static_cast<std::size_t>(r)][static_cast<std::size_t>(c + 1)] = true;
        const int edge = (c + 1) * kCellPixels;
        const int top = r * kCellPixels;
        const int my = top + kCellPixels / 2 + rng.uniform_int(-1, 1);
        auto place_vertical = [&](int h) {
            const int lo = std::max(top, my - h + 2);
            const int hi = std::min(my - 1, top + kCellPixels - h);
            return rng.uniform_int(lo, std::max(lo, hi));
        };
        auto [wh, hh] = jitter_size(pairs[p]->human);
        const int hy = place_vertical(hh);
        placed.push_back({pairs[p]->human, {edge + kContactOverlap - wh, hy, edge + kContactOverlap, hy + hh}});
        auto [wo, ho] = jitter_size(pairs[p]->object);
        const int oy = place_vertical(ho);
        placed.push_back({pairs[p]->object, {edge - kContactOverlap, oy, edge - kContactOverlap + wo, oy + ho}});
        markers.push_back({edge - kMarkerPixels / 2, my - kMarkerPixels / 2, pairs[p]->actions});
    }
    std::vector<std::pair<int, int>> free_cells;
    for (int r = 0; r < cells; ++r)
        for (int c = 0; c < cells; ++c)
            if (!used[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]) free_cells.emplace_back(r, c);
    rng.shuffle(free_cells);
    for (int s = 0; s < remaining; ++s) {
        const auto [r, c] = free_cells[static_cast<std::size_t>(s)];
        const int cls = rng.uniform_int(0, vocab.num_entities() - 1);
        auto [w, h] = jitter_size(cls);
        const int x0 = c * kCellPixels + rng.uniform_int(1, kCellPixels - 1 - w);
        const int y0 = r * kCellPixels + rng.uniform_int(1, kCellPixels - 1 - h);
        placed.push_back({cls, {x0, y0, x0 + w, y0 + h}});
    }

    // Entity ids follow reading order of the box corners.
    std::vector<std::size_t> order(placed.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::pair(placed[a].box.y0, placed[a].box.x0) < std::pair(placed[b].box.y0, placed[b].box.x0);
    });
    std::vector<PlacedEntity> sorted;
    for (std::size_t i : order) sorted.push_back(placed[i]);

    SceneImage img;
    img.size = cfg.resolution;
    img.image_id = image_id_for_seed(seed);
    img.pixels.resize(static_cast<std::size_t>(cfg.resolution) * cfg.resolution * 3);
    for (int y = 0; y < img.size; ++y)
        for (int x = 0; x < img.size; ++x) {
            const double noise = rng.uniform(-0.02, 0.02);
            put(img, x, y, {0.92 + noise, 0.92 + noise, 0.88 + noise});
        }
    for (const auto& e : sorted) draw_glyph(img, vocab.entities[static_cast<std::size_t>(e.class_id)], e.box);
    for (const auto& m : markers) draw_marker(img, m, vocab);

    HoiPairRecord rec;
    rec.image_id = img.image_id;
    rec.scene_seed = seed;
    const double res = cfg.resolution;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const auto& b = sorted[i].box;
        rec.entities.push_back(EntityRecord{static_cast<int>(i), sorted[i].class_id,
                                            Box{b.x0 / res, b.y0 / res, b.x1 / res, b.y1 / res}});
    }
    rec.triples = derive_triples(sorted, markers);
    rec.is_threat = has_threat_action(rec, vocab);
    return {std::move(img), std::move(rec)};
}

}  // namespace hoitag

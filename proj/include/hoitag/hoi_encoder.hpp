#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hoitag/autograd.hpp"
#include "hoitag/losses.hpp"
#include "hoitag/nn.hpp"
#include "hoitag/scene.hpp"

namespace hoitag {

struct HoiConfig {
    std::size_t resolution = 64;
    std::size_t patch = 8;
    std::size_t d = 64;
    std::size_t entity_queries = 8;       // M
    std::size_t interaction_queries = 8;  // K
    std::size_t num_classes = 6;          // C
    std::size_t num_actions = 6;          // gamma
    std::size_t depth = 2;
    std::size_t heads = 4;
    std::size_t ffn = 128;
    double tau = 0.1;
    double lambda_box = 1.0;
    bool box_loss = true;
    double no_entity_weight = 0.1;

    std::size_t grid() const { return resolution / patch; }
    friend bool operator==(const HoiConfig&, const HoiConfig&) = default;
};

struct BackboneFeatures {
    Var tokens;  // G^2 x d, row-major over the grid
    Matrix pos;  // G^2 x d position table travelling with the tokens
    std::size_t grid = 0;
};

struct EntityRepresentation {
    Var mu;            // M x d
    Var class_logits;  // M x (C+1); last column is "no entity"
    Var boxes;         // M x 4 corner boxes in [0,1]
};

struct BehaviorRepresentation {
    Var z;  // K x d
};

struct HoiPointerOutput {
    Var v_h, v_o;      // K x d
    Var sim_h, sim_o;  // K x M cosine similarities
    std::vector<std::size_t> c_hat_h, c_hat_o;
};

struct HoiPrediction {
    Matrix b_h, b_o;  // K x 4
    std::vector<int> h_class, o_class;
    std::vector<double> h_conf, o_conf;
    Var a_probs;  // K x gamma
};

struct HoiForward {
    BackboneFeatures features;
    EntityRepresentation entities;
    BehaviorRepresentation behaviors;
    HoiPointerOutput pointers;
    HoiPrediction prediction;
};

/// Row-wise argmax, ties to the lowest column.
inline std::vector<std::size_t> argmax_rows(const Matrix& m) {
    std::vector<std::size_t> out(m.rows(), 0);
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 1; c < m.cols(); ++c)
            if (m(r, c) > m(r, out[r])) out[r] = c;
    return out;
}

/// Cosine similarities of pointer vectors against entity slots and the
/// resulting argmax indices.
inline HoiPointerOutput pointers_from(const Var& v_h, const Var& v_o, const Var& mu) {
    if (v_h.cols() != mu.cols() || v_o.cols() != mu.cols()) throw ShapeError("compute_pointers: dimension mismatch");
    HoiPointerOutput p;
    p.v_h = v_h;
    p.v_o = v_o;
    p.sim_h = cosine_similarity(v_h, mu);
    p.sim_o = cosine_similarity(v_o, mu);
    p.c_hat_h = argmax_rows(p.sim_h.value());
    p.c_hat_o = argmax_rows(p.sim_o.value());
    return p;
}

/// Non-overlapping patches flattened as (dy, dx, channel), pixels centred on 0.
inline Matrix patchify(const SceneImage& img, std::size_t patch) {
    const auto size = static_cast<std::size_t>(img.size);
    const std::size_t g = size / patch;
    Matrix out(g * g, patch * patch * 3);
    for (std::size_t py = 0; py < g; ++py)
        for (std::size_t px = 0; px < g; ++px)
            for (std::size_t dy = 0; dy < patch; ++dy)
                for (std::size_t dx = 0; dx < patch; ++dx)
                    for (std::size_t c = 0; c < 3; ++c)
                        out(py * g + px, (dy * patch + dx) * 3 + c) =
                            img.at(static_cast<int>(py * patch + dy), static_cast<int>(px * patch + dx),
                                   static_cast<int>(c)) -
                            0.5;
    return out;
}

/// Pre-LN transformer decoder layer over a set of query slots.
struct QueryDecoderLayer {
    LayerNorm ln_self, ln_cross, ln_ffn;
    MultiHeadAttention self_attn, cross_attn;
    Mlp2 ffn;

    static QueryDecoderLayer create(ParamStore& s, const std::string& name, std::size_t d, std::size_t heads,
                                    std::size_t hidden, Rng& rng) {
        QueryDecoderLayer l;
        l.ln_self = LayerNorm::create(s, name + ".ln_self", d);
        l.ln_cross = LayerNorm::create(s, name + ".ln_cross", d);
        l.ln_ffn = LayerNorm::create(s, name + ".ln_ffn", d);
        l.self_attn = MultiHeadAttention::create(s, name + ".self_attn", d, heads, rng);
        l.cross_attn = MultiHeadAttention::create(s, name + ".cross_attn", d, heads, rng);
        l.ffn = Mlp2::create(s, name + ".ffn", d, hidden, d, rng);
        return l;
    }

    Var operator()(Graph& g, Var x, const Var& keys, const Var& values) const {
        const Var a = ln_self(g, x);
        x = add(x, self_attn(g, a, a, a));
        x = add(x, cross_attn(g, ln_cross(g, x), keys, values));
        return add(x, ffn(g, ln_ffn(g, x)));
    }
};

struct QueryDecoder {
    std::size_t queries = 0;
    std::vector<QueryDecoderLayer> layers;
    LayerNorm norm;

    static QueryDecoder create(ParamStore& s, const std::string& name, std::size_t n, const HoiConfig& cfg, Rng& rng) {
        QueryDecoder q;
        q.queries = s.add(name + ".queries", random_normal(n, cfg.d, 1.0, rng));
        for (std::size_t i = 0; i < cfg.depth; ++i)
            q.layers.push_back(
                QueryDecoderLayer::create(s, name + ".layers." + std::to_string(i), cfg.d, cfg.heads, cfg.ffn, rng));
        q.norm = LayerNorm::create(s, name + ".norm", cfg.d);
        return q;
    }

    Var operator()(Graph& g, const BackboneFeatures& f) const {
        const Var keys = add(f.tokens, constant(f.pos));
        Var x = g.param(queries);
        for (const auto& l : layers) x = l(g, x, keys, f.tokens);
        return norm(g, x);
    }
};

/// Set-prediction HOI detector. Parameters live in a caller-owned store under
/// the "hoi." prefix.
class HoiEncoder {
public:
    HoiEncoder(ParamStore& store, const HoiConfig& cfg, Rng& rng) : cfg_(cfg) {
        if (cfg.patch == 0 || cfg.resolution % cfg.patch != 0)
            throw std::invalid_argument("hoi config: resolution must be a multiple of the patch size");
        if (cfg.tau <= 0.0) throw std::invalid_argument("hoi config: tau must be positive");
        const std::size_t d = cfg.d;
        patch_embed_ = Linear::create(store, "hoi.backbone.patch", cfg.patch * cfg.patch * 3, d, rng);
        conv_ = Linear::create(store, "hoi.backbone.conv", 9 * d, d, rng);
        backbone_norm_ = LayerNorm::create(store, "hoi.backbone.norm", d);
        entity_decoder_ = QueryDecoder::create(store, "hoi.entity_decoder", cfg.entity_queries, cfg, rng);
        behavior_decoder_ = QueryDecoder::create(store, "hoi.behavior_decoder", cfg.interaction_queries, cfg, rng);
        class_head_ = Linear::create(store, "hoi.class_head", d, cfg.num_classes + 1, rng);
        box_head_ = Mlp2::create(store, "hoi.box_head", d, d, 4, rng);
        ffn_h_ = Mlp2::create(store, "hoi.ffn_h", d, d, d, rng);
        ffn_o_ = Mlp2::create(store, "hoi.ffn_o", d, d, d, rng);
        ffn_act_ = Mlp2::create(store, "hoi.ffn_act", d, d, cfg.num_actions, rng);
        pos_ = sinusoid_2d(cfg.grid(), d);
    }

    const HoiConfig& config() const { return cfg_; }

    BackboneFeatures encode_backbone(Graph& g, const SceneImage& img) const {
        if (img.size != static_cast<int>(cfg_.resolution) ||
            img.pixels.size() != cfg_.resolution * cfg_.resolution * 3)
            throw ShapeError("encode_backbone: expected " + std::to_string(cfg_.resolution) + "x" +
                             std::to_string(cfg_.resolution) + " image, got " + std::to_string(img.size));
        const Var x = relu(patch_embed_(g, constant(patchify(img, cfg_.patch))));
        const Var h = add(x, relu(conv_(g, im2col3x3(x, cfg_.grid()))));
        return BackboneFeatures{backbone_norm_(g, h), pos_, cfg_.grid()};
    }

    EntityRepresentation decode_entities(Graph& g, const BackboneFeatures& f) const {
        check_features(f);
        EntityRepresentation e;
        e.mu = entity_decoder_(g, f);
        e.class_logits = class_head_(g, e.mu);
        e.boxes = boxes_from_logits(box_head_(g, e.mu));
        return e;
    }

    BehaviorRepresentation decode_behaviors(Graph& g, const BackboneFeatures& f) const {
        check_features(f);
        return BehaviorRepresentation{behavior_decoder_(g, f)};
    }

    HoiPointerOutput compute_pointers(Graph& g, const BehaviorRepresentation& z, const EntityRepresentation& e) const {
        return pointers_from(ffn_h_(g, z.z), ffn_o_(g, z.z), e.mu);
    }

    HoiPrediction predict_triples(Graph& g, const HoiPointerOutput& p, const EntityRepresentation& e,
                                  const BehaviorRepresentation& z) const {
        return resolve_prediction(p, e, sigmoid(ffn_act_(g, z.z)));
    }

    HoiForward forward(Graph& g, const SceneImage& img) const {
        HoiForward f;
        f.features = encode_backbone(g, img);
        f.entities = decode_entities(g, f.features);
        f.behaviors = decode_behaviors(g, f.features);
        f.pointers = compute_pointers(g, f.behaviors, f.entities);
        f.prediction = predict_triples(g, f.pointers, f.entities, f.behaviors);
        return f;
    }

    /// Boxes and classes of the pointed entity slots, alongside given action probabilities.
    static HoiPrediction resolve_prediction(const HoiPointerOutput& p, const EntityRepresentation& e, Var a_probs) {
        const std::size_t k = p.c_hat_h.size();
        const Matrix& logits = e.class_logits.value();
        const std::size_t real = logits.cols() - 1;
        std::vector<int> cls(logits.rows());
        std::vector<double> conf(logits.rows());
        for (std::size_t j = 0; j < logits.rows(); ++j) {
            double mx = logits(j, 0);
            for (std::size_t c = 1; c < logits.cols(); ++c) mx = std::max(mx, logits(j, c));
            double z = 0.0;
            for (std::size_t c = 0; c < logits.cols(); ++c) z += std::exp(logits(j, c) - mx);
            std::size_t best = 0;
            for (std::size_t c = 1; c < real; ++c)
                if (logits(j, c) > logits(j, best)) best = c;
            cls[j] = static_cast<int>(best);
            conf[j] = std::exp(logits(j, best) - mx) / z;
        }
        HoiPrediction out;
        out.b_h = Matrix(k, 4);
        out.b_o = Matrix(k, 4);
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t jh = p.c_hat_h[i], jo = p.c_hat_o[i];
            for (std::size_t c = 0; c < 4; ++c) {
                out.b_h(i, c) = e.boxes.value()(jh, c);
                out.b_o(i, c) = e.boxes.value()(jo, c);
            }
            out.h_class.push_back(cls[jh]);
            out.o_class.push_back(cls[jo]);
            out.h_conf.push_back(conf[jh]);
            out.o_conf.push_back(conf[jo]);
        }
        out.a_probs = std::move(a_probs);
        return out;
    }

private:
    void check_features(const BackboneFeatures& f) const {
        if (f.tokens.cols() != cfg_.d || !f.pos.same_shape(f.tokens.value()))
            throw ShapeError("decoder: feature shape " + f.tokens.value().shape_str() + " does not match config");
    }

    HoiConfig cfg_;
    Linear patch_embed_, conv_;
    LayerNorm backbone_norm_;
    QueryDecoder entity_decoder_, behavior_decoder_;
    Linear class_head_;
    Mlp2 box_head_, ffn_h_, ffn_o_, ffn_act_;
    Matrix pos_;
};

struct DecodedTriple {
    int h_class = 0;
    int o_class = 0;
    int action = 0;
    double confidence = 0.0;
    friend bool operator==(const DecodedTriple&, const DecodedTriple&) = default;
};

/// Discrete (h, o, a) triples whose action probability and both entity
/// confidences clear their thresholds, deduplicated to the highest
/// confidence and sorted by descending confidence.
inline std::vector<DecodedTriple> decode_predictions(const HoiPrediction& p, double act_threshold = 0.5,
                                                     double entity_conf_threshold = 0.5) {
    if (!(act_threshold > 0.0 && act_threshold < 1.0) || !(entity_conf_threshold > 0.0 && entity_conf_threshold < 1.0))
        throw std::invalid_argument("decode_predictions: thresholds must lie in (0,1)");
    std::vector<DecodedTriple> out;
    const Matrix& a = p.a_probs.value();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        if (p.h_conf[i] < entity_conf_threshold || p.o_conf[i] < entity_conf_threshold) continue;
        const double ent = std::min(p.h_conf[i], p.o_conf[i]);
        for (std::size_t c = 0; c < a.cols(); ++c) {
            if (a(i, c) < act_threshold) continue;
            DecodedTriple t{p.h_class[i], p.o_class[i], static_cast<int>(c), a(i, c) * ent};
            auto it = std::find_if(out.begin(), out.end(), [&](const DecodedTriple& u) {
                return u.h_class == t.h_class && u.o_class == t.o_class && u.action == t.action;
            });
            if (it == out.end())
                out.push_back(t);
            else
                it->confidence = std::max(it->confidence, t.confidence);
        }
    }
    std::sort(out.begin(), out.end(), [](const DecodedTriple& x, const DecodedTriple& y) {
        if (x.confidence != y.confidence) return x.confidence > y.confidence;
        return std::tie(x.h_class, x.action, x.o_class) < std::tie(y.h_class, y.action, y.o_class);
    });
    return out;
}

}  // namespace hoitag

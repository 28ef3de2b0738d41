#pragma once

#include <string>
#include <vector>

#include "hoitag/autograd.hpp"
#include "hoitag/nn.hpp"
#include "hoitag/tags.hpp"

namespace hoitag {

struct FusionConfig {
    std::size_t visual_dim = 64;
    std::size_t grid = 8;
    std::size_t d_f = 128;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ffn = 256;
    std::size_t max_tags = 8;
    bool without_pos = false;
    friend bool operator==(const FusionConfig&, const FusionConfig&) = default;
};

struct FusedFeatures {
    Var tokens;  // (G^2 + T) x d_f: visual tokens followed by tag tokens
    std::size_t visual_tokens = 0;
    std::size_t tag_tokens = 0;
    std::vector<AttentionTrace> attention;  // one per fusion layer
};

/// Two linear maps with a ReLU between them, applied to every token.
struct Projector {
    Mlp2 mlp;

    static Projector create(ParamStore& s, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
        return Projector{Mlp2::create(s, name, in, out, out, rng)};
    }

    std::size_t in_dim() const { return mlp.first.in; }

    Var operator()(Graph& g, const Var& x) const {
        if (x.cols() != in_dim())
            throw ShapeError("project: expected dimension " + std::to_string(in_dim()) + ", got " +
                             std::to_string(x.cols()));
        return mlp(g, x);
    }
};

/// Adds the fixed 2D sinusoid table to a row-major grid of tokens; the
/// identity when `without_pos` is set.
inline Var embed_positions(const Var& tokens, std::size_t grid, bool without_pos) {
    if (without_pos) return tokens;
    if (tokens.rows() != grid * grid) throw ShapeError("embed_positions: token count is not grid^2");
    return add(tokens, constant(sinusoid_2d(grid, tokens.cols())));
}

/// Multi-head cross-attention of `queries` over `keys`/`values`.
inline Var cross_attend(Graph& g, const MultiHeadAttention& attn, const Var& queries, const Var& keys,
                        const Var& values, std::span<const std::uint8_t> keep = {}, AttentionTrace* trace = nullptr) {
    return attn(g, queries, keys, values, keep, trace);
}

struct FusionLayer {
    LayerNorm ln_q, ln_ffn;
    MultiHeadAttention attn;
    Mlp2 ffn;
};

/// Projects visual tokens and tag embeddings into the shared space; tag
/// tokens then gather visual context through cross-attention.
class Fusion {
public:
    Fusion(ParamStore& s, const FusionConfig& cfg, std::size_t token_dim, Rng& rng) : cfg_(cfg) {
        visual_proj_ = Projector::create(s, "fusion.visual_proj", cfg.visual_dim, cfg.d_f, rng);
        tag_proj_ = Projector::create(s, "fusion.tag_proj", token_dim, cfg.d_f, rng);
        tag_type_ = s.add("fusion.tag_type", random_normal(1, cfg.d_f, 0.02, rng));
        for (std::size_t i = 0; i < cfg.layers; ++i) {
            const std::string n = "fusion.layers." + std::to_string(i);
            layers_.push_back(FusionLayer{LayerNorm::create(s, n + ".ln_q", cfg.d_f),
                                          LayerNorm::create(s, n + ".ln_ffn", cfg.d_f),
                                          MultiHeadAttention::create(s, n + ".attn", cfg.d_f, cfg.heads, rng),
                                          Mlp2::create(s, n + ".ffn", cfg.d_f, cfg.ffn, cfg.d_f, rng)});
        }
        norm_ = LayerNorm::create(s, "fusion.norm", cfg.d_f);
    }

    const FusionConfig& config() const { return cfg_; }

    /// Tag embedding rows: the [HOI] token, then the mean of each triple's
    /// word embeddings, looked up in `embedding` (vocab x token_dim).
    static Var tag_embeddings(const Var& embedding, const std::vector<int>& serialized, std::size_t max_tags) {
        std::vector<Var> rows{gather_rows(embedding, {static_cast<std::size_t>(special::kHoi)})};
        auto groups = tag_groups(serialized);
        if (groups.size() > max_tags) groups.resize(max_tags);
        for (const auto& grp : groups) {
            std::vector<std::size_t> ids(grp.begin(), grp.end());
            rows.push_back(mean_rows(gather_rows(embedding, std::move(ids))));
        }
        return concat_rows(rows);
    }

    FusedFeatures fuse(Graph& g, const Var& visual, const Var& embedding, const std::vector<int>& serialized_tags,
                       bool record_attention = false) const {
        if (visual.rows() != cfg_.grid * cfg_.grid)
            throw ShapeError("fuse: expected " + std::to_string(cfg_.grid * cfg_.grid) + " visual tokens");
        const Var v = embed_positions(visual_proj_(g, visual), cfg_.grid, cfg_.without_pos);
        Var t = add_row(tag_proj_(g, tag_embeddings(embedding, serialized_tags, cfg_.max_tags)), g.param(tag_type_));
        FusedFeatures out;
        for (const auto& l : layers_) {
            AttentionTrace trace;
            t = add(t, cross_attend(g, l.attn, l.ln_q(g, t), v, v, {}, record_attention ? &trace : nullptr));
            t = add(t, l.ffn(g, l.ln_ffn(g, t)));
            if (record_attention) out.attention.push_back(std::move(trace));
        }
        out.visual_tokens = v.rows();
        out.tag_tokens = t.rows();
        out.tokens = norm_(g, concat_rows({v, t}));
        return out;
    }

    const Projector& visual_projector() const { return visual_proj_; }

private:
    FusionConfig cfg_;
    Projector visual_proj_, tag_proj_;
    std::size_t tag_type_ = 0;
    std::vector<FusionLayer> layers_;
    LayerNorm norm_;
};

}  // namespace hoitag

#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "hoitag/caption.hpp"
#include "hoitag/fusion.hpp"
#include "hoitag/losses.hpp"
#include "hoitag/nn.hpp"
#include "hoitag/tokenizer.hpp"

namespace hoitag {

struct CaptionConfig {
    std::size_t vocab_size = 31;
    std::size_t d_f = 128;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ffn = 512;
    std::size_t max_len = 64;
    FusionConfig fusion;
    bool without_hoi_tag = false;
    friend bool operator==(const CaptionConfig&, const CaptionConfig&) = default;
};

struct GenerationConfig {
    enum class Mode { Greedy, Beam };
    Mode mode = Mode::Greedy;
    std::size_t beam_width = 1;
    std::size_t max_len = 64;
    double length_penalty = 1.0;
};

struct CaptionLayer {
    LayerNorm ln_self, ln_cross, ln_ffn;
    MultiHeadAttention self_attn, cross_attn;
    Mlp2 ffn;
};

/// Tag-guided autoregressive caption decoder together with its fusion
/// encoder. Parameters live under "caption." and "fusion.".
class CaptionModel {
public:
    CaptionModel(ParamStore& s, const CaptionConfig& cfg, Rng& rng) : cfg_(cfg), fusion_(s, cfg.fusion, cfg.d_f, rng) {
        if (cfg.fusion.d_f != cfg.d_f) throw std::invalid_argument("caption config: fusion width differs from decoder width");
        if (cfg.vocab_size <= special::kCount) throw std::invalid_argument("caption config: vocabulary too small");
        embed_ = s.add("caption.embed", random_normal(cfg.vocab_size, cfg.d_f, 1.0, rng));
        for (std::size_t i = 0; i < cfg.layers; ++i) {
            const std::string n = "caption.layers." + std::to_string(i);
            layers_.push_back(CaptionLayer{LayerNorm::create(s, n + ".ln_self", cfg.d_f),
                                           LayerNorm::create(s, n + ".ln_cross", cfg.d_f),
                                           LayerNorm::create(s, n + ".ln_ffn", cfg.d_f),
                                           MultiHeadAttention::create(s, n + ".self_attn", cfg.d_f, cfg.heads, rng),
                                           MultiHeadAttention::create(s, n + ".cross_attn", cfg.d_f, cfg.heads, rng),
                                           Mlp2::create(s, n + ".ffn", cfg.d_f, cfg.ffn, cfg.d_f, rng)});
        }
        norm_ = LayerNorm::create(s, "caption.norm", cfg.d_f);
        head_ = Linear::create(s, "caption.head", cfg.d_f, cfg.vocab_size, rng);
        positions_ = sinusoid_1d(cfg.max_len, cfg.d_f);
    }

    const CaptionConfig& config() const { return cfg_; }
    const Fusion& fusion() const { return fusion_; }

    /// Parameter-name prefixes trained during the caption stage: the fusion
    /// encoder, every cross-attention sublayer, the final norm and the output
    /// head (plus the feed-forward sublayers when requested).
    static std::vector<std::string> trainable_prefixes(const CaptionConfig& cfg, bool train_ffn) {
        std::vector<std::string> out{"fusion.", "caption.norm.", "caption.head."};
        for (std::size_t i = 0; i < cfg.layers; ++i) {
            const std::string n = "caption.layers." + std::to_string(i);
            out.push_back(n + ".cross_attn.");
            out.push_back(n + ".ln_cross.");
            if (train_ffn) {
                out.push_back(n + ".ffn.");
                out.push_back(n + ".ln_ffn.");
            }
        }
        return out;
    }

    FusedFeatures encode(Graph& g, const Var& visual, const std::vector<int>& serialized_tags,
                         bool record_attention = false) const {
        const std::vector<int> bare{special::kHoi};
        return fusion_.fuse(g, visual, g.param(embed_), cfg_.without_hoi_tag ? bare : serialized_tags,
                            record_attention);
    }

    /// Logits (n x vocab) for an input prefix that starts with [BOS]; row t
    /// depends only on prefix tokens 0..t.
    Var teacher_forced_step(Graph& g, const FusedFeatures& ctx, const std::vector<int>& prefix) const {
        if (prefix.empty() || prefix.front() != special::kBos)
            throw std::invalid_argument("teacher_forced_step: prefix must start with [BOS]");
        if (prefix.size() > cfg_.max_len)
            throw std::invalid_argument("teacher_forced_step: prefix of " + std::to_string(prefix.size()) +
                                        " tokens exceeds max_len " + std::to_string(cfg_.max_len));
        std::vector<std::size_t> ids;
        for (int t : prefix) {
            if (t < 0 || static_cast<std::size_t>(t) >= cfg_.vocab_size) throw ShapeError("token id out of range");
            ids.push_back(static_cast<std::size_t>(t));
        }
        const std::size_t n = ids.size();
        Matrix pos(n, cfg_.d_f);
        std::copy(positions_.data(), positions_.data() + n * cfg_.d_f, pos.data());
        Var x = add(gather_rows(g.param(embed_), std::move(ids)), constant(std::move(pos)));
        const auto mask = causal_mask(n);
        for (const auto& l : layers_) {
            const Var a = l.ln_self(g, x);
            x = add(x, l.self_attn(g, a, a, a, mask));
            x = add(x, l.cross_attn(g, l.ln_cross(g, x), ctx.tokens, ctx.tokens));
            x = add(x, l.ffn(g, l.ln_ffn(g, x)));
        }
        return head_(g, norm_(g, x));
    }

    /// Logits predicting `targets` from [BOS] + targets[:-1].
    Var teacher_forced(Graph& g, const FusedFeatures& ctx, const std::vector<int>& targets) const {
        if (targets.empty()) throw std::invalid_argument("teacher_forced: empty target sequence");
        std::vector<int> prefix{special::kBos};
        prefix.insert(prefix.end(), targets.begin(), targets.end() - 1);
        return teacher_forced_step(g, ctx, prefix);
    }

    /// Greedy or length-penalised beam decoding. Argmax ties resolve to the
    /// lowest token id.
    std::vector<int> generate(Graph& g, const FusedFeatures& ctx, const GenerationConfig& gen) const {
        const std::size_t limit = std::min(gen.max_len, cfg_.max_len - 1);
        if (gen.mode == GenerationConfig::Mode::Greedy || gen.beam_width <= 1) return beam(g, ctx, 1, limit, gen);
        return beam(g, ctx, gen.beam_width, limit, gen);
    }

private:
    struct Hypothesis {
        std::vector<int> tokens;  // without [BOS]
        double logp = 0.0;
        bool done = false;
    };

    static double normalised(const Hypothesis& h, double penalty) {
        const double len = static_cast<double>(std::max<std::size_t>(1, h.tokens.size()));
        return h.logp / std::pow(len, penalty);
    }

    std::vector<double> next_log_probs(Graph& g, const FusedFeatures& ctx, const std::vector<int>& tokens) const {
        std::vector<int> prefix{special::kBos};
        prefix.insert(prefix.end(), tokens.begin(), tokens.end());
        const Var logits = teacher_forced_step(g, ctx, prefix);
        const std::size_t last = logits.rows() - 1, v = logits.cols();
        double mx = -INFINITY;
        for (std::size_t j = 0; j < v; ++j) mx = std::max(mx, logits(last, j));
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) z += std::exp(logits(last, j) - mx);
        std::vector<double> out(v);
        for (std::size_t j = 0; j < v; ++j) out[j] = logits(last, j) - mx - std::log(z);
        return out;
    }

    std::vector<int> beam(Graph& g, const FusedFeatures& ctx, std::size_t width, std::size_t limit,
                          const GenerationConfig& gen) const {
        NoGradGuard ng;
        std::vector<Hypothesis> beams{Hypothesis{}};
        for (std::size_t step = 0; step < limit; ++step) {
            struct Cand {
                double score;
                std::size_t beam;
                int token;
            };
            std::vector<Cand> cands;
            std::vector<Hypothesis> next;
            for (std::size_t b = 0; b < beams.size(); ++b) {
                if (beams[b].done) {
                    next.push_back(beams[b]);
                    continue;
                }
                const auto lp = next_log_probs(g, ctx, beams[b].tokens);
                for (std::size_t t = 0; t < lp.size(); ++t)
                    cands.push_back(Cand{beams[b].logp + lp[t], b, static_cast<int>(t)});
            }
            if (cands.empty()) break;
            std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
                if (a.score != b.score) return a.score > b.score;
                if (a.beam != b.beam) return a.beam < b.beam;
                return a.token < b.token;
            });
            for (std::size_t i = 0; i < cands.size() && next.size() < width; ++i) {
                Hypothesis h = beams[cands[i].beam];
                h.logp = cands[i].score;
                if (cands[i].token == special::kEos)
                    h.done = true;
                else
                    h.tokens.push_back(cands[i].token);
                next.push_back(std::move(h));
            }
            beams = std::move(next);
            if (std::all_of(beams.begin(), beams.end(), [](const Hypothesis& h) { return h.done; })) break;
        }
        std::size_t best = 0;
        for (std::size_t b = 1; b < beams.size(); ++b)
            if (normalised(beams[b], gen.length_penalty) > normalised(beams[best], gen.length_penalty)) best = b;
        return beams[best].tokens;
    }

    CaptionConfig cfg_;
    Fusion fusion_;
    std::size_t embed_ = 0;
    std::vector<CaptionLayer> layers_;
    LayerNorm norm_;
    Linear head_;
    Matrix positions_;
};

/// Fraction of non-[PAD] target positions whose argmax logit is the target.
inline double token_accuracy(const Matrix& logits, const std::vector<int>& targets) {
    std::size_t hit = 0, n = 0;
    for (std::size_t r = 0; r < targets.size(); ++r) {
        if (targets[r] == special::kPad) continue;
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c)
            if (logits(r, c) > logits(r, best)) best = c;
        hit += best == static_cast<std::size_t>(targets[r]);
        ++n;
    }
    return n == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(n);
}

/// Caption tokens followed by [EOS], the decoder's training target.
inline std::vector<int> caption_targets(const CaptionRecord& c) {
    std::vector<int> t = c.token_ids;
    t.push_back(special::kEos);
    return t;
}

}  // namespace hoitag

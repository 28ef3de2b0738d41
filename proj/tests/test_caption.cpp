#include <gtest/gtest.h>

#include <cmath>

#include "hoitag/caption_decoder.hpp"
#include "hoitag/optim.hpp"
#include "hoitag/scene.hpp"
#include "hoitag/tags.hpp"
#include "test_support.hpp"

using namespace hoitag;

namespace {

CaptionConfig tiny_config(std::size_t layers = 1) {
    CaptionConfig c;
    c.vocab_size = 31;
    c.d_f = 16;
    c.layers = layers;
    c.heads = 2;
    c.ffn = 32;
    c.max_len = 40;
    c.fusion.visual_dim = 8;
    c.fusion.grid = 2;
    c.fusion.d_f = 16;
    c.fusion.layers = 1;
    c.fusion.heads = 2;
    c.fusion.ffn = 32;
    return c;
}

double oracle_lm_loss(const Matrix& logits, const std::vector<int>& targets) {
    double total = 0;
    int n = 0;
    for (std::size_t r = 0; r < targets.size(); ++r) {
        if (targets[r] == special::kPad) continue;
        double z = 0;
        for (std::size_t j = 0; j < logits.cols(); ++j) z += std::exp(logits(r, j));
        total += -std::log(std::exp(logits(r, static_cast<std::size_t>(targets[r]))) / z);
        ++n;
    }
    return total / n;
}

}  // namespace

TEST(Tags, SerializationGrammar) {
    const Tokenizer tok = Tokenizer::for_vocabulary(Vocabulary::standard());
    EXPECT_EQ(serialize_hoi_tags({}, tok), std::vector<int>{special::kHoi});
    const auto one = serialize_hoi_tags({{"person", "gun", "shoot", 0.9}}, tok);
    EXPECT_EQ(one, (std::vector<int>{special::kHoi, tok.id("person"), tok.id("shoot"), tok.id("gun"), special::kSep}));
    const auto two = serialize_hoi_tags({{"person", "bag", "carry", 0.4}, {"car", "wall", "hijack", 0.8}}, tok);
    ASSERT_EQ(two.size(), 9u);
    EXPECT_EQ(two[1], tok.id("car"));
    EXPECT_EQ(two[5], tok.id("person"));

    std::vector<std::string> warnings;
    const auto unk = serialize_hoi_tags({{"person", "zebra", "hold", 1.0}}, tok, 8,
                                        [&](const std::string& w) { warnings.push_back(w); });
    EXPECT_EQ(unk[3], special::kUnk);
    ASSERT_EQ(warnings.size(), 1u);
    EXPECT_NE(warnings[0].find("zebra"), std::string::npos);

    std::vector<HoiTag> many(12, HoiTag{"person", "bag", "hold", 0.5});
    EXPECT_EQ(tag_groups(serialize_hoi_tags(many, tok, 8)).size(), 8u);
}

TEST(LmLoss, ClosedFormsAndOracle) {
    EXPECT_NEAR(lm_loss(constant(Matrix(3, 46)), {7, 8, 9}).item(), std::log(46.0), 1e-12);
    EXPECT_NEAR(lm_loss(constant(Matrix(1, 4)), {2}).item(), 1.3862943611198906, 1e-12);
    Matrix sharp(2, 5);
    sharp(0, 3) = 50;
    sharp(1, 1) = 50;
    EXPECT_LT(lm_loss(constant(sharp), {3, 1}).item(), 1e-9);

    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix logits = hoitag::testing::random_matrix(6, 9, rng, -3, 3);
        std::vector<int> targets;
        for (int i = 0; i < 6; ++i) targets.push_back(rng.uniform_int(0, 8));
        targets[0] = special::kPad;
        targets[1] = 7;
        const double want = oracle_lm_loss(logits, targets);
        EXPECT_NEAR(lm_loss(constant(logits), targets).item(), want, 1e-6 * want);
        EXPECT_LT(hoitag::testing::gradcheck([&](const auto& x) { return lm_loss(x[0], targets); }, {logits}), 1e-4);
    }
    EXPECT_THROW(lm_loss(constant(Matrix(2, 4)), {0, 0}), std::invalid_argument);
    EXPECT_THROW(lm_loss(constant(Matrix(2, 4)), {1}), ShapeError);
}

TEST(Decoder, CausalOverEveryPosition) {
    ParamStore s;
    Rng rng(2);
    const CaptionModel m(s, tiny_config(2), rng);
    Graph g(s);
    const auto ctx = m.encode(g, constant(hoitag::testing::random_matrix(4, 8, rng)), {special::kHoi, 6, 7, 8, 4});
    const std::vector<int> base{special::kBos, 6, 9, 10, 11, 12, 13, 14};
    const Matrix ref = m.teacher_forced_step(g, ctx, base).value();
    EXPECT_EQ(ref.rows(), 8u);
    EXPECT_EQ(ref.cols(), 31u);
    for (std::size_t t = 1; t < base.size(); ++t) {
        auto changed = base;
        changed[t] = 20;
        const Matrix out = m.teacher_forced_step(g, ctx, changed).value();
        for (std::size_t r = 0; r < t; ++r)
            for (std::size_t c = 0; c < 31; ++c) ASSERT_EQ(out(r, c), ref(r, c)) << "t=" << t << " r=" << r;
        double diff = 0;
        for (std::size_t c = 0; c < 31; ++c) diff += std::abs(out(t, c) - ref(t, c));
        EXPECT_GT(diff, 0.0);
    }
    EXPECT_EQ(m.teacher_forced_step(g, ctx, base).value(), ref);
}

TEST(Decoder, RejectsBadPrefixes) {
    ParamStore s;
    Rng rng(3);
    const CaptionModel m(s, tiny_config(), rng);
    Graph g(s);
    const auto ctx = m.encode(g, constant(Matrix(4, 8)), {special::kHoi});
    EXPECT_THROW(m.teacher_forced_step(g, ctx, {6, 7}), std::invalid_argument);
    EXPECT_THROW(m.teacher_forced_step(g, ctx, std::vector<int>(41, special::kBos)), std::invalid_argument);
    for (double v : m.teacher_forced_step(g, ctx, {special::kBos}).value().values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Decoder, WithoutHoiTagIgnoresTags) {
    ParamStore s;
    Rng rng(4);
    auto cfg = tiny_config();
    cfg.without_hoi_tag = true;
    const CaptionModel m(s, cfg, rng);
    Graph g(s);
    const Var vis = constant(hoitag::testing::random_matrix(4, 8, rng));
    const auto a = m.encode(g, vis, {special::kHoi, 6, 7, 8, 4});
    const auto b = m.encode(g, vis, {special::kHoi});
    EXPECT_EQ(a.tokens.value(), b.tokens.value());
    EXPECT_EQ(a.tag_tokens, 1u);
}

TEST(Decoder, BeamWidthOneEqualsGreedy) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        ParamStore s;
        Rng rng(seed);
        const CaptionModel m(s, tiny_config(), rng);
        Graph g(s);
        const auto ctx = m.encode(g, constant(hoitag::testing::random_matrix(4, 8, rng)), {special::kHoi});
        GenerationConfig greedy;
        greedy.max_len = 12;
        GenerationConfig beam1 = greedy;
        beam1.mode = GenerationConfig::Mode::Beam;
        beam1.beam_width = 1;
        ASSERT_EQ(m.generate(g, ctx, greedy), m.generate(g, ctx, beam1)) << "seed " << seed;
        GenerationConfig one = greedy;
        one.max_len = 1;
        EXPECT_LE(m.generate(g, ctx, one).size(), 1u);
        GenerationConfig wide = greedy;
        wide.mode = GenerationConfig::Mode::Beam;
        wide.beam_width = 3;
        EXPECT_LE(m.generate(g, ctx, wide).size(), 12u);
    }
}

TEST(Decoder, GreedyMatchesStepwiseArgmax) {
    ParamStore s;
    Rng rng(5);
    const CaptionModel m(s, tiny_config(), rng);
    Graph g(s);
    const auto ctx = m.encode(g, constant(hoitag::testing::random_matrix(4, 8, rng)), {special::kHoi});
    GenerationConfig gen;
    gen.max_len = 10;
    const auto out = m.generate(g, ctx, gen);
    std::vector<int> prefix{special::kBos};
    for (std::size_t step = 0; step < 10; ++step) {
        const Matrix logits = m.teacher_forced_step(g, ctx, prefix).value();
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c)
            if (logits(logits.rows() - 1, c) > logits(logits.rows() - 1, best)) best = c;
        if (static_cast<int>(best) == special::kEos) break;
        prefix.push_back(static_cast<int>(best));
    }
    EXPECT_EQ(out, std::vector<int>(prefix.begin() + 1, prefix.end()));
}

TEST(Decoder, OverfitsOneCaptionExactly) {
    const Vocabulary vocab = Vocabulary::standard();
    const Tokenizer tok = Tokenizer::for_vocabulary(vocab);
    HoiPairRecord r;
    r.entities = {{0, 0, {}}, {1, 1, {}}};
    r.triples = {{0, 1, {3}}};
    r.is_threat = true;
    const auto caption = align_caption(r, vocab, tok);
    const auto targets = caption_targets(caption);
    const auto tags = serialize_hoi_tags(ground_truth_tags(r, vocab), tok);

    ParamStore s;
    Rng rng(6);
    const CaptionModel m(s, tiny_config(), rng);
    const Matrix visual = hoitag::testing::random_matrix(4, 8, rng);
    AdamWConfig oc;
    oc.lr = 1e-2;
    oc.weight_decay = 0.0;
    AdamW opt(s, oc);
    double acc = 0;
    for (int step = 0; step < 300 && acc < 1.0; ++step) {
        Graph g(s);
        const auto ctx = m.encode(g, constant(visual), tags);
        const Var logits = m.teacher_forced(g, ctx, targets);
        backward(lm_loss(logits, targets));
        GradBuffer grads;
        g.accumulate(grads);
        opt.step(s, grads);
        acc = token_accuracy(logits.value(), targets);
    }
    Graph g(s);
    const auto ctx = m.encode(g, constant(visual), tags);
    EXPECT_EQ(tok.detokenize(m.generate(g, ctx, {})), caption.text);
    GenerationConfig beam;
    beam.mode = GenerationConfig::Mode::Beam;
    beam.beam_width = 3;
    EXPECT_EQ(tok.detokenize(m.generate(g, ctx, beam)), caption.text);
}

TEST(Decoder, TrainablePrefixesSelectCrossAttention) {
    const auto cfg = tiny_config(2);
    const auto p = CaptionModel::trainable_prefixes(cfg, false);
    ParamStore s;
    Rng rng(7);
    CaptionModel m(s, cfg, rng);
    s.set_trainable("", false);
    for (const auto& prefix : p) s.set_trainable(prefix, true);
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto& n = s.at(i).name;
        const bool want = n.rfind("fusion.", 0) == 0 || n.find("cross") != std::string::npos ||
                          n.rfind("caption.head.", 0) == 0 || n.rfind("caption.norm.", 0) == 0;
        EXPECT_EQ(s.at(i).trainable, want) << n;
    }
    EXPECT_GT(CaptionModel::trainable_prefixes(cfg, true).size(), p.size());
}

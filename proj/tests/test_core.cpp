#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "hoitag/nn.hpp"
#include "hoitag/optim.hpp"
#include "hoitag/rng.hpp"
#include "test_support.hpp"

using namespace hoitag;

TEST(Rng, DeterministicStreams) {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        const double x = a.uniform();
        EXPECT_EQ(x, b.uniform());
        EXPECT_GE(x, 0.0);
        EXPECT_LT(x, 1.0);
    }
    EXPECT_NE(Rng(42).uniform(), c.uniform());
}

TEST(Rng, DerivedSeedsAreDistinct) {
    std::set<std::uint64_t> seen;
    for (std::uint64_t m = 0; m < 10; ++m)
        for (std::uint64_t i = 0; i < 100; ++i) seen.insert(derive_seed(m, i));
    EXPECT_EQ(seen.size(), 1000u);
    EXPECT_EQ(derive_seed(7, 3), derive_seed(7, 3));
}

TEST(Rng, UniformIntCoversRangeAndShufflePermutes) {
    Rng r(1);
    std::set<int> seen;
    for (int i = 0; i < 500; ++i) {
        const int v = r.uniform_int(-2, 3);
        EXPECT_GE(v, -2);
        EXPECT_LE(v, 3);
        seen.insert(v);
    }
    EXPECT_EQ(seen.size(), 6u);
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    auto w = v;
    r.shuffle(w);
    EXPECT_NE(v, w);
    std::sort(w.begin(), w.end());
    EXPECT_EQ(v, w);
}

TEST(Rng, NormalMoments) {
    Rng r(5);
    double s = 0, s2 = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        s += x;
        s2 += x * x;
    }
    EXPECT_NEAR(s / n, 0.0, 0.03);
    EXPECT_NEAR(s2 / n, 1.0, 0.05);
}

TEST(Matrix, MatmulAgainstLoops) {
    Rng rng(3);
    const Matrix a = hoitag::testing::random_matrix(4, 5, rng), b = hoitag::testing::random_matrix(5, 3, rng);
    const Matrix c = matmul(a, b);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < 5; ++k) s += a(i, k) * b(k, j);
            EXPECT_NEAR(c(i, j), s, 1e-12);
        }
    const Matrix t = transpose(a);
    EXPECT_EQ(t.rows(), 5u);
    EXPECT_EQ(t(2, 3), a(3, 2));
    EXPECT_THROW(matmul(a, a), ShapeError);
    EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Params, StoreNamesAndFreezing) {
    ParamStore s;
    s.add("enc.w", Matrix(2, 2));
    s.add("enc.b", Matrix(1, 2));
    s.add("dec.w", Matrix(2, 3));
    EXPECT_THROW(s.add("enc.w", Matrix(1, 1)), std::invalid_argument);
    EXPECT_EQ(s.count_values(), 12u);
    s.set_trainable("enc.", false);
    EXPECT_FALSE(s.at(0).trainable);
    EXPECT_FALSE(s.at(1).trainable);
    EXPECT_TRUE(s.at(2).trainable);
    EXPECT_EQ(*s.find("dec.w"), 2u);
    EXPECT_FALSE(s.find("nope").has_value());
}

TEST(AdamW, FirstStepMovesByLearningRate) {
    ParamStore s;
    s.add("w", Matrix(1, 3, std::vector<double>{1.0, -2.0, 0.5}));
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.0;
    AdamW opt(s, cfg);
    GradBuffer g{Matrix(1, 3, std::vector<double>{3.0, -0.5, 0.0})};
    opt.step(s, g);
    EXPECT_NEAR(s.at(0).value[0], 0.9, 1e-7);
    EXPECT_NEAR(s.at(0).value[1], -1.9, 1e-7);
    EXPECT_NEAR(s.at(0).value[2], 0.5, 1e-12);
}

TEST(AdamW, DecoupledDecayAndFrozenParams) {
    ParamStore s;
    s.add("a", Matrix(1, 1, 2.0));
    s.add("b", Matrix(1, 1, 2.0));
    s.at(1).trainable = false;
    AdamWConfig cfg;
    cfg.lr = 0.5;
    cfg.weight_decay = 0.1;
    AdamW opt(s, cfg);
    opt.step(s, GradBuffer{Matrix(1, 1, 0.0), Matrix(1, 1, 1.0)});
    EXPECT_NEAR(s.at(0).value[0], 2.0 * (1 - 0.05), 1e-12);
    EXPECT_EQ(s.at(1).value[0], 2.0);
}

TEST(AdamW, ClipGradNorm) {
    ParamStore s;
    s.add("a", Matrix(1, 2));
    s.add("b", Matrix(1, 1));
    GradBuffer g{Matrix(1, 2, std::vector<double>{3.0, 0.0}), Matrix(1, 1, 4.0)};
    EXPECT_DOUBLE_EQ(clip_grad_norm(s, g, 1.0), 5.0);
    EXPECT_NEAR(grad_norm(s, g), 1.0, 1e-12);
    EXPECT_NEAR(g[0][0], 0.6, 1e-12);
    GradBuffer small{Matrix(1, 2, 0.1), Matrix(1, 1, 0.1)};
    clip_grad_norm(s, small, 1.0);
    EXPECT_EQ(small[1][0], 0.1);
}

TEST(Modules, LayerNormRowsAreStandardised) {
    ParamStore s;
    Rng rng(2);
    const auto ln = LayerNorm::create(s, "ln", 8);
    Graph g(s);
    const Matrix y = ln(g, constant(hoitag::testing::random_matrix(3, 8, rng, -4, 4))).value();
    for (std::size_t r = 0; r < 3; ++r) {
        double m = 0, v = 0;
        for (std::size_t c = 0; c < 8; ++c) m += y(r, c) / 8;
        for (std::size_t c = 0; c < 8; ++c) v += (y(r, c) - m) * (y(r, c) - m) / 8;
        EXPECT_NEAR(m, 0.0, 1e-12);
        EXPECT_NEAR(v, 1.0, 1e-3);
    }
}

TEST(Modules, CausalAttentionIgnoresTheFuture) {
    ParamStore s;
    Rng rng(4);
    const auto attn = MultiHeadAttention::create(s, "a", 8, 2, rng);
    Matrix x = hoitag::testing::random_matrix(5, 8, rng);
    const auto mask = causal_mask(5);
    AttentionTrace trace;
    Graph g(s);
    const Matrix y1 = attn(g, constant(x), constant(x), constant(x), mask, &trace).value();
    ASSERT_EQ(trace.heads.size(), 2u);
    for (const auto& p : trace.heads)
        for (std::size_t i = 0; i < 5; ++i) {
            double sum = 0;
            for (std::size_t j = 0; j < 5; ++j) {
                sum += p(i, j);
                if (j > i) {
                    EXPECT_EQ(p(i, j), 0.0);
                }
            }
            EXPECT_NEAR(sum, 1.0, 1e-12);
        }
    for (std::size_t c = 0; c < 8; ++c) x(4, c) += 1.0;
    Graph g2(s);
    const Matrix y2 = attn(g2, constant(x), constant(x), constant(x), mask).value();
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(y1(i, c), y2(i, c));
    EXPECT_THROW(MultiHeadAttention::create(s, "bad", 6, 4, rng), std::invalid_argument);
}

TEST(Modules, SinusoidTables) {
    const Matrix p = sinusoid_1d(4, 6);
    EXPECT_EQ(p(0, 0), 0.0);
    EXPECT_EQ(p(0, 1), 1.0);
    EXPECT_NEAR(p(3, 0), std::sin(3.0), 1e-15);
    EXPECT_NEAR(p(2, 3), std::cos(2.0 / std::pow(10000.0, 2.0 / 6.0)), 1e-15);
    const Matrix q = sinusoid_2d(3, 8);
    EXPECT_EQ(q.rows(), 9u);
    const Matrix axis = sinusoid_1d(3, 4);
    EXPECT_EQ(q(1 * 3 + 2, 0), axis(1, 0));
    EXPECT_EQ(q(1 * 3 + 2, 4), axis(2, 0));
    EXPECT_THROW(sinusoid_2d(3, 6), std::invalid_argument);
}

TEST(Modules, GraphAccumulatesOnlyTouchedParams) {
    ParamStore s;
    Rng rng(6);
    const auto a = Linear::create(s, "a", 3, 2, rng);
    Linear::create(s, "b", 3, 2, rng);
    Graph g(s);
    backward(sum(a(g, constant(Matrix(1, 3, 1.0)))));
    GradBuffer buf;
    g.accumulate(buf);
    g.accumulate(buf);
    ASSERT_EQ(buf.size(), s.size());
    EXPECT_FALSE(buf[*s.find("a.weight")].empty());
    EXPECT_TRUE(buf[*s.find("b.weight")].empty());
    EXPECT_EQ(buf[*s.find("a.bias")][0], 2.0);
}

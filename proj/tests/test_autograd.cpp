#include <gtest/gtest.h>

#include <cmath>

#include "hoitag/hoi_losses.hpp"
#include "hoitag/losses.hpp"
#include "hoitag/nn.hpp"
#include "test_support.hpp"

using namespace hoitag;
using hoitag::testing::gradcheck;
using hoitag::testing::random_matrix;

namespace {

constexpr double kGradTol = 1e-4;

TEST(Autograd, ElementwiseAndMatmulOps) {
    Rng rng(1);
    auto a = random_matrix(3, 4, rng), b = random_matrix(4, 2, rng), c = random_matrix(3, 4, rng);
    EXPECT_LT(gradcheck([](const auto& x) { return sum(matmul(x[0], x[1])); }, {a, b}), kGradTol);
    EXPECT_LT(gradcheck([](const auto& x) { return sum(mul(matmul_nt(x[0], x[1]), matmul_nt(x[0], x[1]))); },
                        {a, c}),
              kGradTol);
    EXPECT_LT(gradcheck([](const auto& x) { return sum(mul(sub(x[0], x[1]), relu(x[0]))); }, {a, c}), kGradTol);
    EXPECT_LT(gradcheck([](const auto& x) { return mean(sigmoid(scale(transpose(x[0]), 2.0))); }, {a}), kGradTol);
    auto bias = random_matrix(1, 4, rng);
    EXPECT_LT(gradcheck([](const auto& x) { return sum(mul(add_row(x[0], x[1]), x[0])); }, {a, bias}), kGradTol);
}

TEST(Autograd, StructuralOps) {
    Rng rng(2);
    auto a = random_matrix(3, 4, rng), b = random_matrix(3, 2, rng), c = random_matrix(2, 4, rng);
    auto w = random_matrix(6, 1, rng);
    EXPECT_LT(gradcheck(
                  [&](const auto& x) {
                      const Var cat = concat_cols({x[0], x[1]});
                      return sum(matmul(cat, constant(w)));
                  },
                  {a, b}),
              kGradTol);
    auto w2 = random_matrix(4, 5, rng);
    EXPECT_LT(gradcheck(
                  [&](const auto& x) {
                      const Var rows = concat_rows({x[0], x[1]});
                      const Var g = gather_rows(rows, {4, 0, 0, 2});
                      return sum(mul(matmul(g, constant(w2)), matmul(g, constant(w2))));
                  },
                  {a, c}),
              kGradTol);
    EXPECT_LT(gradcheck([](const auto& x) { return sum(mul(mean_rows(x[0]), mean_rows(slice_cols(x[0], 0, 4)))); }, {a}),
              kGradTol);
    EXPECT_LT(gradcheck([](const auto& x) { return add_all({sum(x[0]), mean(mul(x[0], x[0]))}); }, {a}), kGradTol);
}

TEST(Autograd, SoftmaxAndNormalisation) {
    Rng rng(3);
    auto a = random_matrix(3, 5, rng, -2, 2), w = random_matrix(3, 5, rng);
    EXPECT_LT(gradcheck([&](const auto& x) { return sum(mul(softmax_rows(x[0]), constant(w))); }, {a}), kGradTol);
    std::vector<std::uint8_t> keep(15, 1);
    keep[1] = keep[7] = keep[14] = 0;
    EXPECT_LT(gradcheck([&](const auto& x) { return sum(mul(softmax_rows(x[0], keep), constant(w))); }, {a}),
              kGradTol);
    EXPECT_LT(gradcheck([&](const auto& x) { return sum(mul(log_softmax_rows(x[0]), constant(w))); }, {a}),
              kGradTol);
    auto gamma = random_matrix(1, 5, rng), beta = random_matrix(1, 5, rng);
    EXPECT_LT(gradcheck([&](const auto& x) { return sum(mul(layer_norm(x[0], x[1], x[2]), constant(w))); },
                        {a, gamma, beta}),
              kGradTol);
}

TEST(Autograd, CosineAndIm2col) {
    Rng rng(4);
    auto a = random_matrix(3, 6, rng), b = random_matrix(4, 6, rng), w = random_matrix(3, 4, rng);
    EXPECT_LT(gradcheck([&](const auto& x) { return sum(mul(cosine_similarity(x[0], x[1]), constant(w))); }, {a, b}),
              kGradTol);
    auto grid = random_matrix(9, 2, rng), w2 = random_matrix(9, 18, rng);
    EXPECT_LT(gradcheck([&](const auto& x) { return sum(mul(im2col3x3(x[0], 3), constant(w2))); }, {grid}), kGradTol);
}

TEST(Autograd, MaskedSoftmaxZeroesMaskedEntries) {
    std::vector<std::uint8_t> keep{1, 0, 1};
    const Var p = softmax_rows(constant(Matrix(1, 3, 0.7)), keep);
    EXPECT_EQ(p(0, 1), 0.0);
    EXPECT_NEAR(p(0, 0) + p(0, 2), 1.0, 1e-12);
    std::vector<std::uint8_t> none{0, 0, 0};
    EXPECT_THROW(softmax_rows(constant(Matrix(1, 3)), none), std::invalid_argument);
}

TEST(Autograd, CosineZeroNormIsZero) {
    const Var s = cosine_similarity(constant(Matrix(1, 3)), constant(Matrix(1, 3, 1.0)));
    EXPECT_EQ(s(0, 0), 0.0);
}

TEST(Losses, BceGradient) {
    Rng rng(5);
    auto p = random_matrix(3, 4, rng, 0.05, 0.95);
    Matrix t(3, 4);
    t(0, 1) = t(2, 3) = t(1, 0) = 1.0;
    EXPECT_LT(gradcheck([&](const auto& x) { return sum(bce_rows(x[0], t)); }, {p}), kGradTol);
}

TEST(Losses, BceClosedForms) {
    Matrix one(1, 1, 1.0);
    EXPECT_NEAR(bce_rows(constant(Matrix(1, 1, 0.5)), one).item(), std::log(2.0), 1e-12);
    EXPECT_NEAR(bce_rows(constant(Matrix(1, 1, 1.0 - kProbEps)), one).item(), 0.0, 1e-6);
    Matrix t(1, 2);
    t(0, 0) = 1.0;
    EXPECT_NEAR(bce_rows(constant(Matrix(1, 2, 0.5)), t).item(), std::log(2.0), 1e-12);
    EXPECT_TRUE(std::isfinite(bce_rows(constant(Matrix(1, 1, 0.0)), one).item()));
}

TEST(Losses, LmLossGradientAndPadding) {
    Rng rng(6);
    auto logits = random_matrix(4, 7, rng, -2, 2);
    std::vector<int> targets{6, special::kPad, 3, 2};
    EXPECT_LT(gradcheck([&](const auto& x) { return lm_loss(x[0], targets); }, {logits}), kGradTol);
    EXPECT_THROW(lm_loss(constant(logits), std::vector<int>(4, special::kPad)), std::invalid_argument);
    EXPECT_NEAR(lm_loss(constant(Matrix(2, 4)), {1, 2}).item(), std::log(4.0), 1e-12);
}

TEST(Losses, WeightedCrossEntropyGradient) {
    Rng rng(7);
    auto logits = random_matrix(4, 3, rng, -2, 2);
    EXPECT_LT(gradcheck([&](const auto& x) { return weighted_cross_entropy(x[0], {0, 2, 2, 1}, {1, 0.1, 0.1, 1}); },
                        {logits}),
              kGradTol);
}

TEST(Losses, BoxLossGradientAndValues) {
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        Matrix pred(3, 4), gt(3, 4);
        for (std::size_t r = 0; r < 3; ++r) {
            for (Matrix* m : {&pred, &gt}) {
                const double x0 = rng.uniform(0, 0.6), y0 = rng.uniform(0, 0.6);
                (*m)(r, 0) = x0;
                (*m)(r, 1) = y0;
                (*m)(r, 2) = x0 + rng.uniform(0.05, 0.4);
                (*m)(r, 3) = y0 + rng.uniform(0.05, 0.4);
            }
        }
        EXPECT_LT(gradcheck([&](const auto& x) { return sum(box_loss_rows(x[0], gt)); }, {pred}), kGradTol);
    }
    Matrix same(1, 4);
    same(0, 0) = 0.1;
    same(0, 1) = 0.2;
    same(0, 2) = 0.5;
    same(0, 3) = 0.6;
    EXPECT_NEAR(box_loss_rows(constant(same), same).item(), 0.0, 1e-12);
    // Disjoint unit squares side by side with a gap of 1: IoU 0, enclosure 3, union 2.
    EXPECT_NEAR(giou(Box{0, 0, 1, 1}, Box{2, 0, 3, 1}), -1.0 / 3.0, 1e-12);
}

TEST(Losses, BoxesFromLogitsAreValid) {
    Rng rng(9);
    auto logits = random_matrix(5, 4, rng, -6, 6);
    const Var b = boxes_from_logits(constant(logits));
    for (std::size_t r = 0; r < 5; ++r) {
        EXPECT_GE(b(r, 0), 0.0);
        EXPECT_LT(b(r, 0), b(r, 2));
        EXPECT_LT(b(r, 1), b(r, 3));
        EXPECT_LE(b(r, 3), 1.0);
    }
    auto w = random_matrix(5, 4, rng);
    EXPECT_LT(gradcheck([&](const auto& x) { return sum(mul(boxes_from_logits(x[0]), constant(w))); }, {logits}),
              kGradTol);
}

TEST(Losses, LocalisationGradientWrtPointersAndEntities) {
    Rng rng(10);
    for (int trial = 0; trial < 5; ++trial) {
        auto vh = random_matrix(3, 8, rng), vo = random_matrix(3, 8, rng), mu = random_matrix(4, 8, rng);
        MatchAssignment a{{{0, 1}, {2, 0}}};
        std::vector<SlotTarget> targets{{1, 3}, {0, 2}};
        EXPECT_LT(gradcheck(
                      [&](const auto& x) {
                          return loss_loc(pointers_from(x[0], x[1], x[2]), a, targets, 0.5);
                      },
                      {vh, vo, mu}),
                  kGradTol);
    }
}

TEST(Losses, ActionLossGradient) {
    Rng rng(11);
    auto probs = random_matrix(1, 6, rng, 0.05, 0.95);
    Matrix t(1, 6);
    t(0, 2) = 1.0;
    EXPECT_LT(gradcheck([&](const auto& x) { return loss_act(x[0], t); }, {probs}), kGradTol);
}

}  // namespace

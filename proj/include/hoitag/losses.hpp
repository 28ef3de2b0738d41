#pragma once

// Fused loss primitives with analytic backward passes.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <span>
#include <utility>
#include <vector>

#include "hoitag/autograd.hpp"
#include "hoitag/scene.hpp"
#include "hoitag/tokenizer.hpp"

namespace hoitag {

inline constexpr double kProbEps = 1e-7;

/// Elements a(r, c) for the listed (r, c) positions, as an n x 1 column.
inline Var pick(const Var& a, std::vector<std::pair<std::size_t, std::size_t>> at) {
    Matrix out(at.size(), 1);
    for (std::size_t i = 0; i < at.size(); ++i) {
        if (at[i].first >= a.rows() || at[i].second >= a.cols()) throw ShapeError("pick: index out of range");
        out[i] = a.value()(at[i].first, at[i].second);
    }
    return detail::make_result(std::move(out), {a}, [at = std::move(at)](Node& self) {
        if (Matrix* ga = detail::grad_of(self, 0))
            for (std::size_t i = 0; i < at.size(); ++i) (*ga)(at[i].first, at[i].second) += self.grad[i];
    });
}

/// Per-row binary cross-entropy, averaged over columns: (n x k) -> (n x 1).
/// Probabilities are clamped to [eps, 1-eps]; clamped entries pass no gradient.
inline Var bce_rows(const Var& probs, const Matrix& targets, double eps = kProbEps) {
    probs.value().check_same(targets, "bce_rows");
    const std::size_t n = probs.rows(), k = probs.cols();
    Matrix out(n, 1);
    for (std::size_t r = 0; r < n; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double p = std::clamp(probs.value()(r, j), eps, 1.0 - eps);
            const double t = targets(r, j);
            s -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
        }
        out[r] = s / static_cast<double>(k);
    }
    return detail::make_result(std::move(out), {probs}, [targets, eps](Node& self) {
        Matrix* g = detail::grad_of(self, 0);
        if (!g) return;
        const Matrix& pv = self.parents[0]->value;
        const double k = static_cast<double>(pv.cols());
        for (std::size_t r = 0; r < pv.rows(); ++r)
            for (std::size_t j = 0; j < pv.cols(); ++j) {
                const double p = pv(r, j);
                if (p < eps || p > 1.0 - eps) continue;
                const double t = targets(r, j);
                (*g)(r, j) += self.grad[r] * (-(t / p) + (1.0 - t) / (1.0 - p)) / k;
            }
    });
}

/// Scalar binary cross-entropy of one probability row against a target row.
inline double bce_value(std::span<const double> probs, std::span<const double> targets, double eps = kProbEps) {
    double s = 0.0;
    for (std::size_t j = 0; j < probs.size(); ++j) {
        const double p = std::clamp(probs[j], eps, 1.0 - eps);
        s -= targets[j] * std::log(p) + (1.0 - targets[j]) * std::log(1.0 - p);
    }
    return probs.empty() ? 0.0 : s / static_cast<double>(probs.size());
}

/// Mean over non-[PAD] positions of -log softmax(logits[t])[targets[t]].
inline Var lm_loss(const Var& logits, const std::vector<int>& targets) {
    if (logits.rows() != targets.size()) throw ShapeError("lm_loss: logits/targets length mismatch");
    const std::size_t v = logits.cols();
    std::size_t count = 0;
    for (int t : targets) {
        if (t == special::kPad) continue;
        if (t < 0 || static_cast<std::size_t>(t) >= v) throw ShapeError("lm_loss: target id out of range");
        ++count;
    }
    if (count == 0) throw std::invalid_argument("lm_loss: every target position is padding");
    Matrix probs(logits.rows(), v);
    double loss = 0.0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        if (targets[r] == special::kPad) continue;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < v; ++j) mx = std::max(mx, logits.value()(r, j));
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
            probs(r, j) = std::exp(logits.value()(r, j) - mx);
            z += probs(r, j);
        }
        for (std::size_t j = 0; j < v; ++j) probs(r, j) /= z;
        loss -= logits.value()(r, static_cast<std::size_t>(targets[r])) - mx - std::log(z);
    }
    loss /= static_cast<double>(count);
    return detail::make_result(Matrix(1, 1, loss), {logits},
                               [probs = std::move(probs), targets, count](Node& self) {
                                   Matrix* g = detail::grad_of(self, 0);
                                   if (!g) return;
                                   const double s = self.grad[0] / static_cast<double>(count);
                                   for (std::size_t r = 0; r < probs.rows(); ++r) {
                                       if (targets[r] == special::kPad) continue;
                                       for (std::size_t j = 0; j < probs.cols(); ++j) (*g)(r, j) += s * probs(r, j);
                                       (*g)(r, static_cast<std::size_t>(targets[r])) -= s;
                                   }
                               });
}

/// Class-weighted cross-entropy: sum_i w_i * -log softmax(logits_i)[t_i] / sum_i w_i.
inline Var weighted_cross_entropy(const Var& logits, const std::vector<std::size_t>& targets,
                                  const std::vector<double>& weights) {
    if (logits.rows() != targets.size() || weights.size() != targets.size())
        throw ShapeError("weighted_cross_entropy: length mismatch");
    const std::size_t c = logits.cols();
    Matrix probs(logits.rows(), c);
    double wsum = 0.0, loss = 0.0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, logits.value()(r, j));
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            probs(r, j) = std::exp(logits.value()(r, j) - mx);
            z += probs(r, j);
        }
        for (std::size_t j = 0; j < c; ++j) probs(r, j) /= z;
        loss -= weights[r] * std::log(std::max(probs(r, targets[r]), 1e-300));
        wsum += weights[r];
    }
    if (wsum <= 0.0) throw std::invalid_argument("weighted_cross_entropy: weights sum to zero");
    loss /= wsum;
    return detail::make_result(Matrix(1, 1, loss), {logits},
                               [probs = std::move(probs), targets, weights, wsum](Node& self) {
                                   Matrix* g = detail::grad_of(self, 0);
                                   if (!g) return;
                                   for (std::size_t r = 0; r < probs.rows(); ++r) {
                                       const double s = self.grad[0] * weights[r] / wsum;
                                       for (std::size_t j = 0; j < probs.cols(); ++j) (*g)(r, j) += s * probs(r, j);
                                       (*g)(r, targets[r]) -= s;
                                   }
                               });
}

namespace box_detail {

struct GiouParts {
    double giou;
    double grad[4];  // d(1 - giou)/d(pred corner)
};

/// Generalised IoU of pred against gt (corner form) and the gradient of
/// (1 - GIoU) with respect to the predicted corners.
inline GiouParts giou_with_grad(const double* a, const double* b) {
    const double aw = a[2] - a[0], ah = a[3] - a[1];
    const double A = aw * ah;
    const double B = (b[2] - b[0]) * (b[3] - b[1]);
    const double ix0 = std::max(a[0], b[0]), ix1 = std::min(a[2], b[2]);
    const double iy0 = std::max(a[1], b[1]), iy1 = std::min(a[3], b[3]);
    const double iw = std::max(0.0, ix1 - ix0), ih = std::max(0.0, iy1 - iy0);
    const double I = iw * ih;
    const double U = A + B - I;
    const double cx0 = std::min(a[0], b[0]), cx1 = std::max(a[2], b[2]);
    const double cy0 = std::min(a[1], b[1]), cy1 = std::max(a[3], b[3]);
    const double cw = cx1 - cx0, ch = cy1 - cy0;
    const double C = cw * ch;
    GiouParts out{};
    out.giou = I / U - (C - U) / C;

    // loss = 2 - I/U - U/C with U = A + B - I
    const double dI = -(U + I) / (U * U) + 1.0 / C;
    const double dA = I / (U * U) - 1.0 / C;
    const double dC = U / (C * C);
    double g[4] = {0, 0, 0, 0};
    g[0] += dA * -ah;
    g[2] += dA * ah;
    g[1] += dA * -aw;
    g[3] += dA * aw;
    if (iw > 0.0 && ih > 0.0) {
        if (a[0] >= b[0]) g[0] += dI * -ih;
        if (a[2] <= b[2]) g[2] += dI * ih;
        if (a[1] >= b[1]) g[1] += dI * -iw;
        if (a[3] <= b[3]) g[3] += dI * iw;
    }
    if (a[0] <= b[0]) g[0] += dC * -ch;
    if (a[2] >= b[2]) g[2] += dC * ch;
    if (a[1] <= b[1]) g[1] += dC * -cw;
    if (a[3] >= b[3]) g[3] += dC * cw;
    for (int k = 0; k < 4; ++k) out.grad[k] = g[k];
    return out;
}

}  // namespace box_detail

inline double giou(const Box& a, const Box& b) {
    const double pa[4] = {a.x_min, a.y_min, a.x_max, a.y_max};
    const double pb[4] = {b.x_min, b.y_min, b.x_max, b.y_max};
    return box_detail::giou_with_grad(pa, pb).giou;
}

/// Per-row box regression loss: L1 distance over the four corners plus
/// (1 - GIoU). pred (n x 4, differentiable) against constant gt (n x 4).
inline Var box_loss_rows(const Var& pred, const Matrix& gt) {
    if (pred.cols() != 4 || !pred.value().same_shape(gt)) throw ShapeError("box_loss_rows: expected n x 4 boxes");
    const std::size_t n = pred.rows();
    Matrix out(n, 1);
    Matrix grads(n, 4);
    for (std::size_t r = 0; r < n; ++r) {
        const double* a = pred.value().data() + r * 4;
        const double* b = gt.data() + r * 4;
        const auto parts = box_detail::giou_with_grad(a, b);
        double l1 = 0.0;
        for (int k = 0; k < 4; ++k) {
            const double d = a[k] - b[k];
            l1 += std::abs(d);
            grads(r, static_cast<std::size_t>(k)) = parts.grad[k] + (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
        }
        out[r] = l1 + 1.0 - parts.giou;
    }
    return detail::make_result(std::move(out), {pred}, [grads = std::move(grads)](Node& self) {
        if (Matrix* g = detail::grad_of(self, 0))
            for (std::size_t r = 0; r < grads.rows(); ++r)
                for (std::size_t k = 0; k < 4; ++k) (*g)(r, k) += self.grad[r] * grads(r, k);
    });
}

/// Maps unconstrained (n x 4) logits to valid corner boxes inside [0,1]:
/// x0 = s(a), y0 = s(b), x1 = x0 + (1 - x0) s(c), y1 = y0 + (1 - y0) s(d).
inline Var boxes_from_logits(const Var& logits) {
    if (logits.cols() != 4) throw ShapeError("boxes_from_logits: expected n x 4");
    const std::size_t n = logits.rows();
    Matrix s(n, 4), out(n, 4);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t k = 0; k < 4; ++k) s(r, k) = sigmoid(logits.value()(r, k));
        out(r, 0) = s(r, 0);
        out(r, 1) = s(r, 1);
        out(r, 2) = s(r, 0) + (1.0 - s(r, 0)) * s(r, 2);
        out(r, 3) = s(r, 1) + (1.0 - s(r, 1)) * s(r, 3);
    }
    return detail::make_result(std::move(out), {logits}, [s = std::move(s)](Node& self) {
        Matrix* g = detail::grad_of(self, 0);
        if (!g) return;
        for (std::size_t r = 0; r < s.rows(); ++r) {
            const double gx0 = self.grad(r, 0), gy0 = self.grad(r, 1), gx1 = self.grad(r, 2), gy1 = self.grad(r, 3);
            auto ds = [&](std::size_t k) { return s(r, k) * (1.0 - s(r, k)); };
            (*g)(r, 0) += (gx0 + gx1 * (1.0 - s(r, 2))) * ds(0);
            (*g)(r, 1) += (gy0 + gy1 * (1.0 - s(r, 3))) * ds(1);
            (*g)(r, 2) += gx1 * (1.0 - s(r, 0)) * ds(2);
            (*g)(r, 3) += gy1 * (1.0 - s(r, 1)) * ds(3);
        }
    });
}

}  // namespace hoitag

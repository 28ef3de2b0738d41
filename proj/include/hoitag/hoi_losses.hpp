#pragma once

#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "hoitag/hoi_encoder.hpp"
#include "hoitag/hungarian.hpp"
#include "hoitag/losses.hpp"

namespace hoitag {

struct LossBreakdown {
    double loss_loc = 0.0;
    double loss_act = 0.0;
    double loss_box = 0.0;
    double loss_total = 0.0;
    double tau = 0.1;
};

struct HoiLoss {
    Var total;
    LossBreakdown parts;
    MatchAssignment assignment;
};

struct HoiLossConfig {
    double tau = 0.1;
    double lambda_box = 1.0;
    bool box_loss = true;
};

/// Entity slots targeted by a ground-truth triple.
struct SlotTarget {
    std::size_t human = 0;
    std::size_t object = 0;
};

namespace hoi_loss_detail {

inline void check_tau(double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
}

/// Per matched pair: -log softmax_h(target) - log softmax_o(target), as n x 1.
inline Var loc_terms(const Var& log_h, const Var& log_o, const MatchAssignment& a,
                     const std::vector<SlotTarget>& targets) {
    std::vector<std::pair<std::size_t, std::size_t>> at_h, at_o;
    for (const auto& [i, g] : a.pairs) {
        at_h.emplace_back(i, targets.at(g).human);
        at_o.emplace_back(i, targets.at(g).object);
    }
    return scale(add(pick(log_h, std::move(at_h)), pick(log_o, std::move(at_o))), -1.0);
}

}  // namespace hoi_loss_detail

/// Localisation loss averaged over matched pairs; the softmax runs over all
/// entity slots at temperature tau.
inline Var loss_loc(const HoiPointerOutput& p, const MatchAssignment& a, const std::vector<SlotTarget>& targets,
                    double tau) {
    hoi_loss_detail::check_tau(tau);
    if (a.pairs.empty()) return constant(Matrix(1, 1));
    const Var lh = log_softmax_rows(scale(p.sim_h, 1.0 / tau));
    const Var lo = log_softmax_rows(scale(p.sim_o, 1.0 / tau));
    return mean(hoi_loss_detail::loc_terms(lh, lo, a, targets));
}

/// Mean binary cross-entropy of one probability row against a multi-hot target.
inline Var loss_act(const Var& probs_row, const Matrix& target) { return sum(bce_rows(probs_row, target)); }

/// Multi-hot action targets of the ground-truth triples (G x gamma).
inline Matrix action_targets(const HoiPairRecord& gt, std::size_t num_actions) {
    Matrix t(gt.triples.size(), num_actions);
    for (std::size_t g = 0; g < gt.triples.size(); ++g)
        for (int a : gt.triples[g].action_ids) {
            if (a < 0 || static_cast<std::size_t>(a) >= num_actions)
                throw std::invalid_argument("ground truth action id out of range");
            t(g, static_cast<std::size_t>(a)) = 1.0;
        }
    return t;
}

/// Entity slots of each ground-truth triple, given the slot matched to each
/// ground-truth entity (indexed by position in gt.entities).
inline std::vector<SlotTarget> triple_slot_targets(const HoiPairRecord& gt, const std::vector<std::size_t>& entity_slots) {
    std::map<int, std::size_t> pos;
    for (std::size_t e = 0; e < gt.entities.size(); ++e) pos[gt.entities[e].id] = e;
    std::vector<SlotTarget> out;
    for (const auto& t : gt.triples) {
        auto h = pos.find(t.human_idx), o = pos.find(t.object_idx);
        if (h == pos.end() || o == pos.end()) throw std::invalid_argument("ground truth triple references a missing entity");
        out.push_back(SlotTarget{entity_slots.at(h->second), entity_slots.at(o->second)});
    }
    return out;
}

/// Matching cost: localisation term plus action term for each (slot, triple).
inline Matrix matching_cost(const Matrix& log_h, const Matrix& log_o, const Matrix& a_probs, const Matrix& targets,
                            const std::vector<SlotTarget>& slots) {
    Matrix cost(a_probs.rows(), slots.size());
    for (std::size_t i = 0; i < cost.rows(); ++i)
        for (std::size_t g = 0; g < cost.cols(); ++g)
            cost(i, g) = -log_h(i, slots[g].human) - log_o(i, slots[g].object) +
                         bce_value(a_probs.row_span(i), targets.row_span(g));
    return cost;
}

/// Hungarian loss: matched localisation and action terms, all-zero action
/// targets for unmatched slots, and the box term for matched pairs.
inline HoiLoss loss_hungarian(const HoiPrediction& pred, const HoiPointerOutput& p, const EntityRepresentation& ents,
                              const HoiPairRecord& gt, const std::vector<std::size_t>& entity_slots,
                              const HoiLossConfig& cfg = {}) {
    hoi_loss_detail::check_tau(cfg.tau);
    const std::size_t k = pred.a_probs.rows(), gamma = pred.a_probs.cols();
    const Matrix targets = action_targets(gt, gamma);
    const std::vector<SlotTarget> slots = triple_slot_targets(gt, entity_slots);
    const Var lh = log_softmax_rows(scale(p.sim_h, 1.0 / cfg.tau));
    const Var lo = log_softmax_rows(scale(p.sim_o, 1.0 / cfg.tau));

    HoiLoss out;
    out.assignment = hungarian_match(matching_cost(lh.value(), lo.value(), pred.a_probs.value(), targets, slots));

    Matrix slot_targets(k, gamma);
    for (const auto& [i, g] : out.assignment.pairs)
        for (std::size_t c = 0; c < gamma; ++c) slot_targets(i, c) = targets(g, c);
    const Var act = sum(bce_rows(pred.a_probs, slot_targets));
    std::vector<Var> terms{act};

    if (!out.assignment.pairs.empty()) {
        const Var loc = sum(hoi_loss_detail::loc_terms(lh, lo, out.assignment, slots));
        out.parts.loss_loc = loc.item();
        terms.push_back(loc);
        if (cfg.box_loss) {
            std::vector<std::size_t> rows;
            Matrix gt_boxes(2 * out.assignment.pairs.size(), 4);
            std::size_t r = 0;
            for (const auto& [i, g] : out.assignment.pairs) {
                for (const auto& [slot, id] : {std::pair(p.c_hat_h[i], gt.triples[g].human_idx),
                                               std::pair(p.c_hat_o[i], gt.triples[g].object_idx)}) {
                    rows.push_back(slot);
                    const Box& b = gt.entity(id)->box;
                    const double v[4] = {b.x_min, b.y_min, b.x_max, b.y_max};
                    for (std::size_t c = 0; c < 4; ++c) gt_boxes(r, c) = v[c];
                    ++r;
                }
            }
            const Var box = sum(box_loss_rows(gather_rows(ents.boxes, std::move(rows)), gt_boxes));
            out.parts.loss_box = box.item();
            terms.push_back(scale(box, cfg.lambda_box));
        }
    }
    out.parts.loss_act = act.item();
    out.parts.tau = cfg.tau;
    out.total = add_all(terms);
    out.parts.loss_total = out.parts.loss_loc + out.parts.loss_act + cfg.lambda_box * out.parts.loss_box;
    return out;
}

struct EntityMatch {
    Var loss;
    std::vector<std::size_t> slot_of;  // per gt entity position
};

/// Set-prediction loss for the entity decoder: class cross-entropy over all
/// slots (down-weighted "no entity" for unmatched slots) plus the box term
/// averaged over matched entities.
inline EntityMatch entity_set_loss(const EntityRepresentation& e, const HoiPairRecord& gt, double no_entity_weight = 0.1) {
    const std::size_t m = e.class_logits.rows(), none = e.class_logits.cols() - 1;
    const std::size_t n = gt.entities.size();
    if (n > m) throw std::invalid_argument("more ground-truth entities than entity slots");
    const Matrix& logits = e.class_logits.value();
    Matrix cost(m, n);
    for (std::size_t j = 0; j < m; ++j) {
        double mx = logits(j, 0);
        for (std::size_t c = 1; c <= none; ++c) mx = std::max(mx, logits(j, c));
        double z = 0.0;
        for (std::size_t c = 0; c <= none; ++c) z += std::exp(logits(j, c) - mx);
        const double* pb = e.boxes.value().data() + j * 4;
        for (std::size_t g = 0; g < n; ++g) {
            const auto& ge = gt.entities[g];
            if (ge.class_id < 0 || static_cast<std::size_t>(ge.class_id) >= none)
                throw std::invalid_argument("ground truth class id out of range");
            const double gb[4] = {ge.box.x_min, ge.box.y_min, ge.box.x_max, ge.box.y_max};
            double l1 = 0.0;
            for (int c = 0; c < 4; ++c) l1 += std::abs(pb[c] - gb[c]);
            const double prob = std::exp(logits(j, static_cast<std::size_t>(ge.class_id)) - mx) / z;
            cost(j, g) = -prob + l1 + 1.0 - box_detail::giou_with_grad(pb, gb).giou;
        }
    }
    const MatchAssignment a = hungarian_match(cost);
    EntityMatch out;
    out.slot_of.assign(n, 0);
    std::vector<std::size_t> cls(m, none);
    std::vector<double> w(m, no_entity_weight);
    std::vector<std::size_t> rows;
    Matrix gt_boxes(a.pairs.size(), 4);
    for (std::size_t r = 0; r < a.pairs.size(); ++r) {
        const auto [j, g] = a.pairs[r];
        out.slot_of[g] = j;
        cls[j] = static_cast<std::size_t>(gt.entities[g].class_id);
        w[j] = 1.0;
        rows.push_back(j);
        const Box& b = gt.entities[g].box;
        const double v[4] = {b.x_min, b.y_min, b.x_max, b.y_max};
        for (std::size_t c = 0; c < 4; ++c) gt_boxes(r, c) = v[c];
    }
    Var loss = weighted_cross_entropy(e.class_logits, cls, w);
    if (!rows.empty()) loss = add(loss, mean(box_loss_rows(gather_rows(e.boxes, std::move(rows)), gt_boxes)));
    out.loss = loss;
    return out;
}

}  // namespace hoitag

#pragma once

#include <cmath>
#include <vector>

#include "hoitag/nn.hpp"

namespace hoitag {

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Global L2 norm over the gradients of trainable parameters.
inline double grad_norm(const ParamStore& store, const GradBuffer& grads) {
    double s = 0.0;
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (grads[i].empty() || !store.at(i).trainable) continue;
        for (double g : grads[i].values()) s += g * g;
    }
    return std::sqrt(s);
}

/// Rescales gradients in place so their global norm is at most max_norm.
/// Returns the norm before clipping.
inline double clip_grad_norm(const ParamStore& store, GradBuffer& grads, double max_norm) {
    const double norm = grad_norm(store, grads);
    if (norm > max_norm && norm > 0.0) {
        const double f = max_norm / norm;
        for (auto& g : grads)
            for (auto& v : g.values()) v *= f;
    }
    return norm;
}

/// Adam with decoupled weight decay. Frozen parameters are never touched.
class AdamW {
public:
    AdamW(const ParamStore& store, AdamWConfig cfg) : cfg_(cfg), m_(store.size()), v_(store.size()) {}

    const AdamWConfig& config() const { return cfg_; }
    long steps() const { return t_; }

    void step(ParamStore& store, const GradBuffer& grads) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < store.size(); ++i) {
            Param& p = store.at(i);
            if (!p.trainable || i >= grads.size() || grads[i].empty()) continue;
            if (m_[i].empty()) {
                m_[i] = Matrix(p.value.rows(), p.value.cols());
                v_[i] = Matrix(p.value.rows(), p.value.cols());
            }
            auto& w = p.value.values();
            const auto& g = grads[i].values();
            auto& m = m_[i].values();
            auto& v = v_[i].values();
            for (std::size_t k = 0; k < w.size(); ++k) {
                w[k] -= cfg_.lr * cfg_.weight_decay * w[k];
                m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
                v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
                w[k] -= cfg_.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
            }
        }
    }

private:
    AdamWConfig cfg_;
    std::vector<Matrix> m_, v_;
    long t_ = 0;
};

}  // namespace hoitag

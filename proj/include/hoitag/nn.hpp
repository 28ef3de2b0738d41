#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "hoitag/autograd.hpp"
#include "hoitag/rng.hpp"

namespace hoitag {

struct Param {
    std::string name;
    Matrix value;
    bool trainable = true;
};

/// Named parameter tensors. Module objects keep indices into the store, so the
/// store is the single owner of weights and the unit of checkpointing.
class ParamStore {
public:
    std::size_t add(std::string name, Matrix init) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
        index_.emplace(name, params_.size());
        params_.push_back(Param{std::move(name), std::move(init), true});
        return params_.size() - 1;
    }

    std::size_t size() const { return params_.size(); }
    Param& at(std::size_t i) { return params_.at(i); }
    const Param& at(std::size_t i) const { return params_.at(i); }
    const std::vector<Param>& all() const { return params_; }

    std::optional<std::size_t> find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    /// Sets trainable = flag for every parameter whose name starts with prefix.
    void set_trainable(const std::string& prefix, bool flag) {
        for (auto& p : params_)
            if (p.name.rfind(prefix, 0) == 0) p.trainable = flag;
    }

    std::size_t count_values() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

private:
    std::vector<Param> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

using GradBuffer = std::vector<Matrix>;

/// Binds store parameters as graph leaves for one forward pass. Leaves are
/// cached, so reusing a Graph across repeated calls (e.g. decoding steps)
/// copies each weight once.
class Graph {
public:
    explicit Graph(const ParamStore& store) : store_(&store), bound_(store.size()) {}

    Var param(std::size_t i) {
        if (!bound_[i]) {
            const Param& p = store_->at(i);
            bound_[i] = leaf(p.value, p.trainable && grad_enabled());
        }
        return bound_[i];
    }

    /// Adds the gradients held by bound leaves into `out` (sized to the store).
    void accumulate(GradBuffer& out) const {
        if (out.size() != bound_.size()) out.resize(bound_.size());
        for (std::size_t i = 0; i < bound_.size(); ++i) {
            if (!bound_[i] || bound_[i].grad().empty()) continue;
            if (out[i].empty()) out[i] = Matrix(bound_[i].rows(), bound_[i].cols());
            out[i] += bound_[i].grad();
        }
    }

    const ParamStore& store() const { return *store_; }

private:
    const ParamStore* store_;
    std::vector<Var> bound_;
};

inline Matrix random_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    Matrix m(rows, cols);
    for (auto& v : m.values()) v = stddev * rng.normal();
    return m;
}

inline Matrix xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    return random_normal(fan_in, fan_out, std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)), rng);
}

struct Linear {
    std::size_t w = 0, b = 0;
    std::size_t in = 0, out = 0;

    static Linear create(ParamStore& s, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
        Linear l;
        l.in = in;
        l.out = out;
        l.w = s.add(name + ".weight", xavier(in, out, rng));
        l.b = s.add(name + ".bias", Matrix(1, out));
        return l;
    }

    Var operator()(Graph& g, const Var& x) const {
        if (x.cols() != in)
            throw ShapeError("Linear: expected input dim " + std::to_string(in) + ", got " + std::to_string(x.cols()));
        return add_row(matmul(x, g.param(w)), g.param(b));
    }
};

/// Two linear layers with a ReLU between them.
struct Mlp2 {
    Linear first, second;

    static Mlp2 create(ParamStore& s, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
                       Rng& rng) {
        return Mlp2{Linear::create(s, name + ".0", in, hidden, rng), Linear::create(s, name + ".1", hidden, out, rng)};
    }

    Var operator()(Graph& g, const Var& x) const { return second(g, relu(first(g, x))); }
};

struct LayerNorm {
    std::size_t gamma = 0, beta = 0;

    static LayerNorm create(ParamStore& s, const std::string& name, std::size_t dim) {
        return LayerNorm{s.add(name + ".gamma", Matrix(1, dim, 1.0)), s.add(name + ".beta", Matrix(1, dim))};
    }

    Var operator()(Graph& g, const Var& x) const { return layer_norm(x, g.param(gamma), g.param(beta)); }
};

/// Per-head attention probabilities recorded during a forward pass.
struct AttentionTrace {
    std::vector<Matrix> heads;
};

/// Keep-mask for causal self-attention over n positions.
inline std::vector<std::uint8_t> causal_mask(std::size_t n) {
    std::vector<std::uint8_t> keep(n * n, 0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) keep[i * n + j] = 1;
    return keep;
}

struct MultiHeadAttention {
    Linear q, k, v, o;
    std::size_t heads = 1;
    std::size_t dim = 0;

    static MultiHeadAttention create(ParamStore& s, const std::string& name, std::size_t dim, std::size_t heads,
                                     Rng& rng) {
        if (heads == 0 || dim % heads != 0) throw std::invalid_argument("attention: dim must be divisible by heads");
        MultiHeadAttention a;
        a.q = Linear::create(s, name + ".q", dim, dim, rng);
        a.k = Linear::create(s, name + ".k", dim, dim, rng);
        a.v = Linear::create(s, name + ".v", dim, dim, rng);
        a.o = Linear::create(s, name + ".o", dim, dim, rng);
        a.heads = heads;
        a.dim = dim;
        return a;
    }

    /// queries (n x d) attend over keys (m x d) / values (m x d). `keep` is an
    /// optional n x m 0/1 mask.
    Var operator()(Graph& g, const Var& queries, const Var& keys, const Var& values,
                   std::span<const std::uint8_t> keep = {}, AttentionTrace* trace = nullptr) const {
        if (keys.rows() == 0) throw ShapeError("attention: empty key set");
        if (keys.rows() != values.rows()) throw ShapeError("attention: key/value count mismatch");
        const Var qp = q(g, queries);
        const Var kp = k(g, keys);
        const Var vp = v(g, values);
        const std::size_t dh = dim / heads;
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        std::vector<Var> outs;
        outs.reserve(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            const Var qh = heads == 1 ? qp : slice_cols(qp, h * dh, (h + 1) * dh);
            const Var kh = heads == 1 ? kp : slice_cols(kp, h * dh, (h + 1) * dh);
            const Var vh = heads == 1 ? vp : slice_cols(vp, h * dh, (h + 1) * dh);
            const Var probs = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt), keep);
            if (trace) trace->heads.push_back(probs.value());
            outs.push_back(matmul(probs, vh));
        }
        return o(g, heads == 1 ? outs[0] : concat_cols(outs));
    }
};

/// Fixed sinusoid table: row p, column 2k -> sin(p / 10000^(2k/dim)),
/// column 2k+1 -> cos of the same angle.
inline Matrix sinusoid_1d(std::size_t positions, std::size_t dim) {
    Matrix pe(positions, dim);
    for (std::size_t p = 0; p < positions; ++p)
        for (std::size_t c = 0; c < dim; ++c) {
            const double k2 = static_cast<double>(c - c % 2);
            const double angle = static_cast<double>(p) / std::pow(10000.0, k2 / static_cast<double>(dim));
            pe(p, c) = (c % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    return pe;
}

/// 2D table over a grid x grid token layout (row-major tokens): the first
/// dim/2 channels encode the row index, the remaining channels the column.
inline Matrix sinusoid_2d(std::size_t grid, std::size_t dim) {
    if (dim % 4 != 0) throw std::invalid_argument("sinusoid_2d: dim must be a multiple of 4");
    const std::size_t half = dim / 2;
    const Matrix axis = sinusoid_1d(grid, half);
    Matrix pe(grid * grid, dim);
    for (std::size_t y = 0; y < grid; ++y)
        for (std::size_t x = 0; x < grid; ++x)
            for (std::size_t c = 0; c < half; ++c) {
                pe(y * grid + x, c) = axis(y, c);
                pe(y * grid + x, half + c) = axis(x, c);
            }
    return pe;
}

}  // namespace hoitag

#pragma once

// Tape-free reverse-mode autodiff over dense matrices. Every op returns a Var
// whose node remembers its parents and a closure that pushes the output
// gradient back into them. backward() walks the graph in reverse topological
// order.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hoitag/matrix.hpp"

namespace hoitag {

struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Matrix& ensure_grad() {
        if (grad.empty() && !value.empty()) grad = Matrix(value.rows(), value.cols());
        return grad;
    }
    bool has_grad() const { return !grad.empty(); }
};

namespace detail {
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Matrix& value() const { return node_->value; }
    Matrix& mutable_value() { return node_->value; }
    const Matrix& grad() const { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    std::size_t rows() const { return node_->value.rows(); }
    std::size_t cols() const { return node_->value.cols(); }
    double item() const { return node_->value[0]; }
    double operator()(std::size_t r, std::size_t c) const { return node_->value(r, c); }
    const std::shared_ptr<Node>& node() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

private:
    std::shared_ptr<Node> node_;
};

/// Leaf holding `value`; gradients accumulate into it when requires_grad.
inline Var leaf(Matrix value, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
}

inline Var constant(Matrix value) { return leaf(std::move(value), false); }

namespace detail {

inline Var make_result(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool any = false;
    if (grad_enabled()) {
        for (const auto& in : inputs) any = any || in.requires_grad();
    }
    if (any) {
        n->requires_grad = true;
        n->parents.reserve(inputs.size());
        for (auto& in : inputs) n->parents.push_back(in.node());
        n->backward_fn = std::move(fn);
    }
    return Var(std::move(n));
}

inline Matrix* grad_of(Node& self, std::size_t i) {
    Node& p = *self.parents[i];
    return p.requires_grad ? &p.ensure_grad() : nullptr;
}

}  // namespace detail

/// Accumulates d(root)/d(node) into every reachable node that requires grad.
/// `root` must be 1x1 unless `seed` is supplied.
inline void backward(const Var& root, const Matrix* seed = nullptr) {
    if (!root.requires_grad()) return;
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    Matrix& g = root.node()->ensure_grad();
    if (seed) {
        g += *seed;
    } else {
        if (g.size() != 1) throw ShapeError("backward: root must be scalar without a seed");
        g[0] += 1.0;
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(const Var& a, const Var& b) {
    Matrix out = matmul(a.value(), b.value());
    return detail::make_result(std::move(out), {a, b}, [](Node& self) {
        const Matrix& av = self.parents[0]->value;
        const Matrix& bv = self.parents[1]->value;
        if (Matrix* ga = detail::grad_of(self, 0)) kernel::gemm_nt(self.grad, bv, *ga);
        if (Matrix* gb = detail::grad_of(self, 1)) kernel::gemm_tn(av, self.grad, *gb);
    });
}

/// a * b^T
inline Var matmul_nt(const Var& a, const Var& b) {
    if (a.cols() != b.cols())
        throw ShapeError("matmul_nt: " + a.value().shape_str() + " * " + b.value().shape_str() + "^T");
    Matrix out(a.rows(), b.rows());
    kernel::gemm_nt(a.value(), b.value(), out);
    return detail::make_result(std::move(out), {a, b}, [](Node& self) {
        const Matrix& av = self.parents[0]->value;
        const Matrix& bv = self.parents[1]->value;
        if (Matrix* ga = detail::grad_of(self, 0)) kernel::gemm_nn(self.grad, bv, *ga);
        if (Matrix* gb = detail::grad_of(self, 1)) kernel::gemm_tn(self.grad, av, *gb);
    });
}

inline Var transpose(const Var& a) {
    return detail::make_result(transpose(a.value()), {a}, [](Node& self) {
        if (Matrix* ga = detail::grad_of(self, 0)) *ga += transpose(self.grad);
    });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
    a.value().check_same(b.value(), "add");
    Matrix out = a.value();
    out += b.value();
    return detail::make_result(std::move(out), {a, b}, [](Node& self) {
        if (Matrix* ga = detail::grad_of(self, 0)) *ga += self.grad;
        if (Matrix* gb = detail::grad_of(self, 1)) *gb += self.grad;
    });
}

inline Var sub(const Var& a, const Var& b) {
    a.value().check_same(b.value(), "sub");
    Matrix out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return detail::make_result(std::move(out), {a, b}, [](Node& self) {
        if (Matrix* ga = detail::grad_of(self, 0)) *ga += self.grad;
        if (Matrix* gb = detail::grad_of(self, 1))
            for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] -= self.grad[i];
    });
}

/// Hadamard product.
inline Var mul(const Var& a, const Var& b) {
    a.value().check_same(b.value(), "mul");
    Matrix out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return detail::make_result(std::move(out), {a, b}, [](Node& self) {
        const Matrix& av = self.parents[0]->value;
        const Matrix& bv = self.parents[1]->value;
        if (Matrix* ga = detail::grad_of(self, 0))
            for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i] * bv[i];
        if (Matrix* gb = detail::grad_of(self, 1))
            for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += self.grad[i] * av[i];
    });
}

/// a (n x c) + bias (1 x c) broadcast over rows.
inline Var add_row(const Var& a, const Var& bias) {
    if (bias.rows() != 1 || bias.cols() != a.cols())
        throw ShapeError("add_row: " + a.value().shape_str() + " + " + bias.value().shape_str());
    Matrix out = a.value();
    const std::size_t c = a.cols();
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t j = 0; j < c; ++j) out(r, j) += bias.value()[j];
    return detail::make_result(std::move(out), {a, bias}, [](Node& self) {
        if (Matrix* ga = detail::grad_of(self, 0)) *ga += self.grad;
        if (Matrix* gb = detail::grad_of(self, 1)) {
            const std::size_t c = self.grad.cols();
            for (std::size_t r = 0; r < self.grad.rows(); ++r)
                for (std::size_t j = 0; j < c; ++j) (*gb)[j] += self.grad(r, j);
        }
    });
}

inline Var scale(const Var& a, double s) {
    Matrix out = a.value();
    for (auto& v : out.values()) v *= s;
    return detail::make_result(std::move(out), {a}, [s](Node& self) {
        if (Matrix* ga = detail::grad_of(self, 0))
            for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += s * self.grad[i];
    });
}

inline Var relu(const Var& a) {
    Matrix out = a.value();
    for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
    return detail::make_result(std::move(out), {a}, [](Node& self) {
        if (Matrix* ga = detail::grad_of(self, 0)) {
            const Matrix& x = self.parents[0]->value;
            for (std::size_t i = 0; i < ga->size(); ++i)
                if (x[i] > 0.0) (*ga)[i] += self.grad[i];
        }
    });
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Var sigmoid(const Var& a) {
    Matrix out = a.value();
    for (auto& v : out.values()) v = sigmoid(v);
    return detail::make_result(std::move(out), {a}, [](Node& self) {
        if (Matrix* ga = detail::grad_of(self, 0))
            for (std::size_t i = 0; i < ga->size(); ++i) {
                const double s = self.value[i];
                (*ga)[i] += self.grad[i] * s * (1.0 - s);
            }
    });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    return detail::make_result(Matrix(1, 1, s), {a}, [](Node& self) {
        if (Matrix* ga = detail::grad_of(self, 0))
            for (auto& v : ga->values()) v += self.grad[0];
    });
}

inline Var mean(const Var& a) {
    const double n = static_cast<double>(a.value().size());
    return scale(sum(a), 1.0 / n);
}

/// Sum of a list of scalars.
inline Var add_all(const std::vector<Var>& terms) {
    double s = 0.0;
    for (const auto& t : terms) s += t.item();
    return detail::make_result(Matrix(1, 1, s), terms, [](Node& self) {
        for (std::size_t i = 0; i < self.parents.size(); ++i)
            if (Matrix* g = detail::grad_of(self, i)) (*g)[0] += self.grad[0];
    });
}

// ---------------------------------------------------------------------------
// Reshaping

inline Var slice_cols(const Var& a, std::size_t c0, std::size_t c1) {
    if (c0 > c1 || c1 > a.cols()) throw ShapeError("slice_cols: bad range");
    Matrix out(a.rows(), c1 - c0);
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t j = c0; j < c1; ++j) out(r, j - c0) = a.value()(r, j);
    return detail::make_result(std::move(out), {a}, [c0](Node& self) {
        if (Matrix* ga = detail::grad_of(self, 0))
            for (std::size_t r = 0; r < self.grad.rows(); ++r)
                for (std::size_t j = 0; j < self.grad.cols(); ++j) (*ga)(r, j + c0) += self.grad(r, j);
    });
}

inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty");
    const std::size_t rows = parts[0].rows();
    std::size_t cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
        cols += p.cols();
    }
    Matrix out(rows, cols);
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < p.cols(); ++j) out(r, off + j) = p.value()(r, j);
        off += p.cols();
    }
    return detail::make_result(std::move(out), parts, [](Node& self) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
            const std::size_t pc = self.parents[i]->value.cols();
            if (Matrix* g = detail::grad_of(self, i))
                for (std::size_t r = 0; r < self.grad.rows(); ++r)
                    for (std::size_t j = 0; j < pc; ++j) (*g)(r, j) += self.grad(r, off + j);
            off += pc;
        }
    });
}

inline Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: empty");
    const std::size_t cols = parts[0].cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
        rows += p.rows();
    }
    Matrix out(rows, cols);
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.value().values().begin(), p.value().values().end(), out.data() + off * cols);
        off += p.rows();
    }
    return detail::make_result(std::move(out), parts, [](Node& self) {
        std::size_t off = 0;
        const std::size_t cols = self.grad.cols();
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
            const std::size_t pr = self.parents[i]->value.rows();
            if (Matrix* g = detail::grad_of(self, i))
                for (std::size_t k = 0; k < pr * cols; ++k) (*g)[k] += self.grad[off * cols + k];
            off += pr;
        }
    });
}

/// Rows of `a` selected by index (indices may repeat).
inline Var gather_rows(const Var& a, std::vector<std::size_t> idx) {
    const std::size_t cols = a.cols();
    Matrix out(idx.size(), cols);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= a.rows()) throw ShapeError("gather_rows: index out of range");
        for (std::size_t j = 0; j < cols; ++j) out(i, j) = a.value()(idx[i], j);
    }
    return detail::make_result(std::move(out), {a}, [idx = std::move(idx)](Node& self) {
        if (Matrix* ga = detail::grad_of(self, 0))
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < self.grad.cols(); ++j) (*ga)(idx[i], j) += self.grad(i, j);
    });
}

/// Arithmetic mean over rows: (n x c) -> (1 x c).
inline Var mean_rows(const Var& a) {
    const std::size_t n = a.rows(), c = a.cols();
    if (n == 0) throw ShapeError("mean_rows: no rows");
    Matrix out(1, c);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) out[j] += a.value()(r, j);
    for (auto& v : out.values()) v /= static_cast<double>(n);
    return detail::make_result(std::move(out), {a}, [](Node& self) {
        if (Matrix* ga = detail::grad_of(self, 0)) {
            const double inv = 1.0 / static_cast<double>(ga->rows());
            for (std::size_t r = 0; r < ga->rows(); ++r)
                for (std::size_t j = 0; j < ga->cols(); ++j) (*ga)(r, j) += self.grad[j] * inv;
        }
    });
}

// ---------------------------------------------------------------------------
// Normalisation

/// Row-wise softmax. `keep`, when non-empty, is a row-major 0/1 mask of the
/// same shape; masked entries get probability exactly 0. A fully masked row is
/// a ShapeError.
inline Var softmax_rows(const Var& a, std::span<const std::uint8_t> keep = {}) {
    const std::size_t n = a.rows(), c = a.cols();
    if (!keep.empty() && keep.size() != n * c) throw ShapeError("softmax_rows: mask shape mismatch");
    Matrix out(n, c);
    for (std::size_t r = 0; r < n; ++r) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j < c; ++j)
            if (keep.empty() || keep[r * c + j]) mx = std::max(mx, a.value()(r, j));
        if (mx == -INFINITY) throw ShapeError("softmax_rows: row has no unmasked entries");
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            if (!keep.empty() && !keep[r * c + j]) continue;
            const double e = std::exp(a.value()(r, j) - mx);
            out(r, j) = e;
            z += e;
        }
        for (std::size_t j = 0; j < c; ++j) out(r, j) /= z;
    }
    return detail::make_result(std::move(out), {a}, [](Node& self) {
        if (Matrix* ga = detail::grad_of(self, 0)) {
            const std::size_t c = self.value.cols();
            for (std::size_t r = 0; r < self.value.rows(); ++r) {
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += self.grad(r, j) * self.value(r, j);
                for (std::size_t j = 0; j < c; ++j)
                    (*ga)(r, j) += self.value(r, j) * (self.grad(r, j) - dot);
            }
        }
    });
}

inline Var log_softmax_rows(const Var& a) {
    const std::size_t n = a.rows(), c = a.cols();
    Matrix out(n, c);
    for (std::size_t r = 0; r < n; ++r) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, a.value()(r, j));
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(a.value()(r, j) - mx);
        const double lz = mx + std::log(z);
        for (std::size_t j = 0; j < c; ++j) out(r, j) = a.value()(r, j) - lz;
    }
    return detail::make_result(std::move(out), {a}, [](Node& self) {
        if (Matrix* ga = detail::grad_of(self, 0)) {
            const std::size_t c = self.value.cols();
            for (std::size_t r = 0; r < self.value.rows(); ++r) {
                double gs = 0.0;
                for (std::size_t j = 0; j < c; ++j) gs += self.grad(r, j);
                for (std::size_t j = 0; j < c; ++j)
                    (*ga)(r, j) += self.grad(r, j) - std::exp(self.value(r, j)) * gs;
            }
        }
    });
}

/// Row-wise layer normalisation with affine gamma/beta (1 x c each).
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
    const std::size_t n = x.rows(), c = x.cols();
    if (gamma.cols() != c || beta.cols() != c) throw ShapeError("layer_norm: affine shape mismatch");
    Matrix out(n, c);
    Matrix xhat(n, c);
    std::vector<double> inv_std(n);
    for (std::size_t r = 0; r < n; ++r) {
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += x.value()(r, j);
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = x.value()(r, j) - mu;
            var += d * d;
        }
        var /= static_cast<double>(c);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            xhat(r, j) = (x.value()(r, j) - mu) * inv_std[r];
            out(r, j) = xhat(r, j) * gamma.value()[j] + beta.value()[j];
        }
    }
    return detail::make_result(
        std::move(out), {x, gamma, beta},
        [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
            const std::size_t n = self.grad.rows(), c = self.grad.cols();
            const Matrix& g = self.parents[1]->value;
            if (Matrix* gx = detail::grad_of(self, 0)) {
                for (std::size_t r = 0; r < n; ++r) {
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                        const double dy = self.grad(r, j) * g[j];
                        s1 += dy;
                        s2 += dy * xhat(r, j);
                    }
                    const double cn = static_cast<double>(c);
                    for (std::size_t j = 0; j < c; ++j) {
                        const double dy = self.grad(r, j) * g[j];
                        (*gx)(r, j) += inv_std[r] * (dy - s1 / cn - xhat(r, j) * s2 / cn);
                    }
                }
            }
            if (Matrix* gg = detail::grad_of(self, 1))
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t j = 0; j < c; ++j) (*gg)[j] += self.grad(r, j) * xhat(r, j);
            if (Matrix* gb = detail::grad_of(self, 2))
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t j = 0; j < c; ++j) (*gb)[j] += self.grad(r, j);
        });
}

// ---------------------------------------------------------------------------
// Similarity

/// Pairwise cosine similarity: rows of a (n x d) against rows of b (m x d).
/// A pair involving a zero-norm row has similarity 0 and zero gradient.
inline Var cosine_similarity(const Var& a, const Var& b) {
    if (a.cols() != b.cols()) throw ShapeError("cosine_similarity: dimension mismatch");
    const std::size_t n = a.rows(), m = b.rows(), d = a.cols();
    auto norms = [d](const Matrix& x) {
        std::vector<double> out(x.rows());
        for (std::size_t r = 0; r < x.rows(); ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += x(r, j) * x(r, j);
            out[r] = std::sqrt(s);
        }
        return out;
    };
    std::vector<double> na = norms(a.value()), nb = norms(b.value());
    Matrix dots(n, m);
    kernel::gemm_nt(a.value(), b.value(), dots);
    Matrix out(n, m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const double den = na[i] * nb[j];
            out(i, j) = den > 0.0 ? std::clamp(dots(i, j) / den, -1.0, 1.0) : 0.0;
        }
    return detail::make_result(std::move(out), {a, b}, [na = std::move(na), nb = std::move(nb)](Node& self) {
        const Matrix& av = self.parents[0]->value;
        const Matrix& bv = self.parents[1]->value;
        const std::size_t n = av.rows(), m = bv.rows(), d = av.cols();
        Matrix* ga = detail::grad_of(self, 0);
        Matrix* gb = detail::grad_of(self, 1);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                const double g = self.grad(i, j);
                if (g == 0.0 || na[i] == 0.0 || nb[j] == 0.0) continue;
                const double s = self.value(i, j);
                const double inv = 1.0 / (na[i] * nb[j]);
                for (std::size_t k = 0; k < d; ++k) {
                    if (ga) (*ga)(i, k) += g * (bv(j, k) * inv - s * av(i, k) / (na[i] * na[i]));
                    if (gb) (*gb)(j, k) += g * (av(i, k) * inv - s * bv(j, k) / (nb[j] * nb[j]));
                }
            }
    });
}

// ---------------------------------------------------------------------------
// Spatial

/// 3x3 neighbourhood gather over a square token grid with zero padding:
/// (G*G x c) -> (G*G x 9c), column block k = offset (k/3-1, k%3-1).
inline Var im2col3x3(const Var& x, std::size_t grid) {
    if (x.rows() != grid * grid) throw ShapeError("im2col3x3: token count is not grid^2");
    const std::size_t c = x.cols();
    Matrix out(grid * grid, 9 * c);
    for (std::size_t y = 0; y < grid; ++y)
        for (std::size_t xx = 0; xx < grid; ++xx)
            for (std::size_t k = 0; k < 9; ++k) {
                const long sy = static_cast<long>(y) + static_cast<long>(k / 3) - 1;
                const long sx = static_cast<long>(xx) + static_cast<long>(k % 3) - 1;
                if (sy < 0 || sx < 0 || sy >= static_cast<long>(grid) || sx >= static_cast<long>(grid)) continue;
                const std::size_t src = static_cast<std::size_t>(sy) * grid + static_cast<std::size_t>(sx);
                for (std::size_t j = 0; j < c; ++j) out(y * grid + xx, k * c + j) = x.value()(src, j);
            }
    return detail::make_result(std::move(out), {x}, [grid, c](Node& self) {
        Matrix* gx = detail::grad_of(self, 0);
        if (!gx) return;
        for (std::size_t y = 0; y < grid; ++y)
            for (std::size_t xx = 0; xx < grid; ++xx)
                for (std::size_t k = 0; k < 9; ++k) {
                    const long sy = static_cast<long>(y) + static_cast<long>(k / 3) - 1;
                    const long sx = static_cast<long>(xx) + static_cast<long>(k % 3) - 1;
                    if (sy < 0 || sx < 0 || sy >= static_cast<long>(grid) || sx >= static_cast<long>(grid))
                        continue;
                    const std::size_t src = static_cast<std::size_t>(sy) * grid + static_cast<std::size_t>(sx);
                    for (std::size_t j = 0; j < c; ++j) (*gx)(src, j) += self.grad(y * grid + xx, k * c + j);
                }
    });
}

}  // namespace hoitag

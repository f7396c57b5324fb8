#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "scenegate/common.hpp"
#include "scenegate/rng.hpp"

namespace scenegate {

// Additive attention-mask sentinel standing in for -inf. Added to logits
// before softmax; exp() underflows to zero and the resulting weights are
// clamped to exactly 0 below kWeightClamp.
inline constexpr double kMaskedBias = -1e9;
inline constexpr double kWeightClamp = 1e-12;

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << " x ";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

// Dense row-major tensor of 64-bit floats. A Tensor is a cheap handle to a
// shared node; node values are immutable once built except through the
// explicit mutation points used by initializers and the optimizer.
class Tensor {
public:
    struct Node {
        std::vector<std::size_t> shape;
        std::vector<double> value;
        std::vector<double> grad;  // empty until a backward pass populates it
        std::vector<double> adj;   // per-backward scratch adjoint, owned by Tape
        bool requires_grad = false;
    };
    using NodePtr = std::shared_ptr<Node>;

    Tensor() = default;

    Tensor(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<Node>()) {
        validate_shape(shape);
        if (numel_of(shape) != data.size()) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        }
        for (double v : data) {
            if (!std::isfinite(v)) throw ContractError("tensor construction with non-finite value");
        }
        node_->shape = std::move(shape);
        node_->value = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
        return filled(std::move(shape), 0.0, requires_grad);
    }

    static Tensor ones(std::vector<std::size_t> shape, bool requires_grad = false) {
        return filled(std::move(shape), 1.0, requires_grad);
    }

    static Tensor filled(std::vector<std::size_t> shape, double v, bool requires_grad = false) {
        std::size_t n = numel_of(shape);
        return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return Tensor({1}, {v}, requires_grad);
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                         bool requires_grad = false) {
        return Tensor({rows, cols}, std::move(data), requires_grad);
    }

    // Internal factory for op outputs; skips the finite check on the fast path.
    static Tensor uninit(std::vector<std::size_t> shape, bool requires_grad) {
        validate_shape(shape);
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->value.resize(numel_of(shape));
        t.node_->shape = std::move(shape);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return check().shape; }
    std::size_t rank() const { return check().shape.size(); }
    std::size_t numel() const { return check().value.size(); }
    std::size_t extent(std::size_t axis) const { return check().shape.at(axis); }

    const std::vector<double>& value() const { return check().value; }
    // Mutation point for initializers, optimizers and checkpoint loading.
    std::vector<double>& mutable_value() { return check().value; }

    bool requires_grad() const { return check().requires_grad; }
    void set_requires_grad(bool rg) { check().requires_grad = rg; }

    bool has_grad() const { return defined() && !node_->grad.empty(); }
    const std::vector<double>& grad() const {
        if (!has_grad()) throw ContractError("tensor has no gradient populated");
        return node_->grad;
    }
    void zero_grad() {
        if (defined()) node_->grad.clear();
    }

    double item() const {
        if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
        return check().value[0];
    }

    double at(std::size_t i) const { return check().value.at(i); }
    double at(std::size_t i, std::size_t j) const {
        const Node& n = check();
        if (n.shape.size() != 2) throw ShapeError("2-d indexing on tensor " + shape_str(n.shape));
        return n.value.at(i * n.shape[1] + j);
    }

    NodePtr node() const { return node_; }
    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    static std::size_t numel_of(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t e : shape) n *= e;
        return n;
    }

private:
    static void validate_shape(const std::vector<std::size_t>& shape) {
        if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
        for (std::size_t e : shape) {
            if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
        }
    }

    Node& check() const {
        if (!node_) throw ContractError("use of undefined tensor");
        return *node_;
    }

    NodePtr node_;
};

// Records the forward ops in execution order and replays them in exact
// reverse order on backward(). Adjoints live in per-node scratch buffers for
// the duration of one backward pass and are flushed additively into .grad at
// the end, so a second backward from the same loss adds the same gradient
// again. Single-threaded; independent tapes may run in parallel.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(Tensor::NodePtr out, std::function<void(Tape&)> backward) {
        if (recording_) ops_.push_back({std::move(out), std::move(backward)});
    }

    // Forward-only mode for evaluation; recorded rules are dropped.
    void set_recording(bool on) { recording_ = on; }
    bool recording() const { return recording_; }

    // Scratch adjoint buffer for a node, zero-initialized on first touch
    // within the current backward pass.
    std::vector<double>& adj(const Tensor::NodePtr& n) {
        if (n->adj.size() != n->value.size()) {
            n->adj.assign(n->value.size(), 0.0);
            touched_.push_back(n);
        }
        return n->adj;
    }

    void backward(const Tensor& loss) {
        if (loss.numel() != 1) {
            throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
        }
        adj(loss.node())[0] = 1.0;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
            it->backward(*this);
        }
        for (auto& n : touched_) {
            if (n->requires_grad) {
                if (n->grad.empty()) n->grad.assign(n->value.size(), 0.0);
                for (std::size_t i = 0; i < n->adj.size(); ++i) n->grad[i] += n->adj[i];
            }
            n->adj.clear();
        }
        touched_.clear();
    }

    void clear() {
        ops_.clear();
        touched_.clear();
    }

    std::size_t size() const { return ops_.size(); }

private:
    struct OpRecord {
        Tensor::NodePtr out;
        std::function<void(Tape&)> backward;
    };
    std::vector<OpRecord> ops_;
    std::vector<Tensor::NodePtr> touched_;
    bool recording_ = true;
};

namespace detail {

// c[m x n] += a[m x k] * b[k x n]
inline void mm_nn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                      std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            const double* brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

// c[m x n] += a[m x k] * b[n x k]^T
inline void mm_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                      std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double s = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
            crow[j] += s;
        }
    }
}

// c[k x n] += a[m x k]^T * b[m x n]
inline void mm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                      std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            double* crow = c + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

inline void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + " expects a rank-2 tensor, got " + shape_str(t.shape()));
    }
}

inline bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts) {
        if (t->requires_grad()) return true;
    }
    return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Differentiable ops. Each op computes its forward value eagerly and, when any
// input participates in gradients, records a reverse rule on the tape.
// ---------------------------------------------------------------------------

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    const std::size_t m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
    if (k != k2) {
        throw ShapeError("matmul inner dimensions differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const bool rg = detail::any_requires_grad({&a, &b});
    Tensor out = Tensor::uninit({m, n}, rg);
    std::fill(out.node()->value.begin(), out.node()->value.end(), 0.0);
    detail::mm_nn_acc(a.value().data(), b.value().data(), out.node()->value.data(), m, k, n);
    if (rg) {
        auto an = a.node(), bn = b.node(), on = out.node();
        tape.record(on, [an, bn, on, m, k, n](Tape& t) {
            const std::vector<double>& go = t.adj(on);
            if (an->requires_grad) {
                detail::mm_nt_acc(go.data(), bn->value.data(), t.adj(an).data(), m, n, k);
            }
            if (bn->requires_grad) {
                detail::mm_tn_acc(an->value.data(), go.data(), t.adj(bn).data(), m, k, n);
            }
        });
    }
    return out;
}

inline Tensor transpose(Tape& tape, const Tensor& a) {
    detail::require_rank2(a, "transpose");
    const std::size_t m = a.extent(0), n = a.extent(1);
    Tensor out = Tensor::uninit({n, m}, a.requires_grad());
    const auto& av = a.value();
    auto& ov = out.node()->value;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) ov[j * m + i] = av[i * n + j];
    }
    if (a.requires_grad()) {
        auto an = a.node(), on = out.node();
        tape.record(on, [an, on, m, n](Tape& t) {
            const auto& go = t.adj(on);
            auto& ga = t.adj(an);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += go[j * m + i];
            }
        });
    }
    return out;
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add shapes differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const bool rg = detail::any_requires_grad({&a, &b});
    Tensor out = Tensor::uninit(a.shape(), rg);
    const auto& av = a.value();
    const auto& bv = b.value();
    auto& ov = out.node()->value;
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    if (rg) {
        auto an = a.node(), bn = b.node(), on = out.node();
        tape.record(on, [an, bn, on](Tape& t) {
            const auto& go = t.adj(on);
            if (an->requires_grad) {
                auto& ga = t.adj(an);
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (bn->requires_grad) {
                auto& gb = t.adj(bn);
                for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
            }
        });
    }
    return out;
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("mul shapes differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const bool rg = detail::any_requires_grad({&a, &b});
    Tensor out = Tensor::uninit(a.shape(), rg);
    const auto& av = a.value();
    const auto& bv = b.value();
    auto& ov = out.node()->value;
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    if (rg) {
        auto an = a.node(), bn = b.node(), on = out.node();
        tape.record(on, [an, bn, on](Tape& t) {
            const auto& go = t.adj(on);
            if (an->requires_grad) {
                auto& ga = t.adj(an);
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                auto& gb = t.adj(bn);
                for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * an->value[i];
            }
        });
    }
    return out;
}

inline Tensor scale(Tape& tape, const Tensor& a, double c) {
    Tensor out = Tensor::uninit(a.shape(), a.requires_grad());
    const auto& av = a.value();
    auto& ov = out.node()->value;
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
    if (a.requires_grad()) {
        auto an = a.node(), on = out.node();
        tape.record(on, [an, on, c](Tape& t) {
            const auto& go = t.adj(on);
            auto& ga = t.adj(an);
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * c;
        });
    }
    return out;
}

inline Tensor sum(Tape& tape, const Tensor& a) {
    Tensor out = Tensor::uninit({1}, a.requires_grad());
    double s = 0.0;
    for (double v : a.value()) s += v;
    out.node()->value[0] = s;
    if (a.requires_grad()) {
        auto an = a.node(), on = out.node();
        tape.record(on, [an, on](Tape& t) {
            const double g = t.adj(on)[0];
            auto& ga = t.adj(an);
            for (double& v : ga) v += g;
        });
    }
    return out;
}

inline Tensor reshape(Tape& tape, const Tensor& a, std::vector<std::size_t> new_shape) {
    if (Tensor::numel_of(new_shape) != a.numel()) {
        throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(new_shape) +
                         " changes element count");
    }
    Tensor out = Tensor::uninit(std::move(new_shape), a.requires_grad());
    out.node()->value = a.value();
    if (a.requires_grad()) {
        auto an = a.node(), on = out.node();
        tape.record(on, [an, on](Tape& t) {
            const auto& go = t.adj(on);
            auto& ga = t.adj(an);
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        });
    }
    return out;
}

inline Tensor slice_rows(Tape& tape, const Tensor& a, std::size_t row0, std::size_t nrows) {
    detail::require_rank2(a, "slice_rows");
    const std::size_t m = a.extent(0), n = a.extent(1);
    if (row0 + nrows > m || nrows == 0) {
        throw ShapeError("slice_rows [" + std::to_string(row0) + ", " +
                         std::to_string(row0 + nrows) + ") out of range for " +
                         shape_str(a.shape()));
    }
    Tensor out = Tensor::uninit({nrows, n}, a.requires_grad());
    std::copy(a.value().begin() + row0 * n, a.value().begin() + (row0 + nrows) * n,
              out.node()->value.begin());
    if (a.requires_grad()) {
        auto an = a.node(), on = out.node();
        tape.record(on, [an, on, row0, n](Tape& t) {
            const auto& go = t.adj(on);
            auto& ga = t.adj(an);
            for (std::size_t i = 0; i < go.size(); ++i) ga[row0 * n + i] += go[i];
        });
    }
    return out;
}

inline Tensor slice_cols(Tape& tape, const Tensor& a, std::size_t col0, std::size_t ncols) {
    detail::require_rank2(a, "slice_cols");
    const std::size_t m = a.extent(0), n = a.extent(1);
    if (col0 + ncols > n || ncols == 0) {
        throw ShapeError("slice_cols [" + std::to_string(col0) + ", " +
                         std::to_string(col0 + ncols) + ") out of range for " +
                         shape_str(a.shape()));
    }
    Tensor out = Tensor::uninit({m, ncols}, a.requires_grad());
    const auto& av = a.value();
    auto& ov = out.node()->value;
    for (std::size_t i = 0; i < m; ++i) {
        std::copy(av.begin() + i * n + col0, av.begin() + i * n + col0 + ncols,
                  ov.begin() + i * ncols);
    }
    if (a.requires_grad()) {
        auto an = a.node(), on = out.node();
        tape.record(on, [an, on, m, n, col0, ncols](Tape& t) {
            const auto& go = t.adj(on);
            auto& ga = t.adj(an);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < ncols; ++j) ga[i * n + col0 + j] += go[i * ncols + j];
            }
        });
    }
    return out;
}

inline Tensor concat_rows(Tape& tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows needs at least one tensor");
    const std::size_t n = parts[0].extent(1);
    std::size_t m = 0;
    bool rg = false;
    for (const Tensor& p : parts) {
        detail::require_rank2(p, "concat_rows");
        if (p.extent(1) != n) {
            throw ShapeError("concat_rows column mismatch: " + shape_str(parts[0].shape()) +
                             " vs " + shape_str(p.shape()));
        }
        m += p.extent(0);
        rg = rg || p.requires_grad();
    }
    Tensor out = Tensor::uninit({m, n}, rg);
    auto& ov = out.node()->value;
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        std::copy(p.value().begin(), p.value().end(), ov.begin() + off);
        off += p.numel();
    }
    if (rg) {
        std::vector<Tensor::NodePtr> nodes;
        nodes.reserve(parts.size());
        for (const Tensor& p : parts) nodes.push_back(p.node());
        auto on = out.node();
        tape.record(on, [nodes, on](Tape& t) {
            const auto& go = t.adj(on);
            std::size_t off = 0;
            for (const auto& pn : nodes) {
                const std::size_t sz = pn->value.size();
                if (pn->requires_grad) {
                    auto& gp = t.adj(pn);
                    for (std::size_t i = 0; i < sz; ++i) gp[i] += go[off + i];
                }
                off += sz;
            }
        });
    }
    return out;
}

inline Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols needs at least one tensor");
    const std::size_t m = parts[0].extent(0);
    std::size_t n = 0;
    bool rg = false;
    for (const Tensor& p : parts) {
        detail::require_rank2(p, "concat_cols");
        if (p.extent(0) != m) {
            throw ShapeError("concat_cols row mismatch: " + shape_str(parts[0].shape()) + " vs " +
                             shape_str(p.shape()));
        }
        n += p.extent(1);
        rg = rg || p.requires_grad();
    }
    Tensor out = Tensor::uninit({m, n}, rg);
    auto& ov = out.node()->value;
    std::size_t col_off = 0;
    for (const Tensor& p : parts) {
        const std::size_t pc = p.extent(1);
        const auto& pv = p.value();
        for (std::size_t i = 0; i < m; ++i) {
            std::copy(pv.begin() + i * pc, pv.begin() + (i + 1) * pc,
                      ov.begin() + i * n + col_off);
        }
        col_off += pc;
    }
    if (rg) {
        std::vector<Tensor::NodePtr> nodes;
        std::vector<std::size_t> widths;
        for (const Tensor& p : parts) {
            nodes.push_back(p.node());
            widths.push_back(p.extent(1));
        }
        auto on = out.node();
        tape.record(on, [nodes, widths, on, m, n](Tape& t) {
            const auto& go = t.adj(on);
            std::size_t col_off = 0;
            for (std::size_t p = 0; p < nodes.size(); ++p) {
                const std::size_t pc = widths[p];
                if (nodes[p]->requires_grad) {
                    auto& gp = t.adj(nodes[p]);
                    for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < pc; ++j) {
                            gp[i * pc + j] += go[i * n + col_off + j];
                        }
                    }
                }
                col_off += pc;
            }
        });
    }
    return out;
}

// out[:, j] = a[:, idx[j]]; indices may repeat.
inline Tensor gather_cols(Tape& tape, const Tensor& a, const std::vector<std::size_t>& idx) {
    detail::require_rank2(a, "gather_cols");
    const std::size_t m = a.extent(0), n = a.extent(1);
    if (idx.empty()) throw ShapeError("gather_cols needs at least one index");
    for (std::size_t j : idx) {
        if (j >= n) throw ContractError("gather_cols index " + std::to_string(j) + " out of range");
    }
    Tensor out = Tensor::uninit({m, idx.size()}, a.requires_grad());
    const auto& av = a.value();
    auto& ov = out.node()->value;
    const std::size_t k = idx.size();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < k; ++j) ov[i * k + j] = av[i * n + idx[j]];
    }
    if (a.requires_grad()) {
        auto an = a.node(), on = out.node();
        tape.record(on, [an, on, idx, m, n, k](Tape& t) {
            const auto& go = t.adj(on);
            auto& ga = t.adj(an);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < k; ++j) ga[i * n + idx[j]] += go[i * k + j];
            }
        });
    }
    return out;
}

// x[... x in] * w[in x out] + b[out], broadcast over leading axes.
inline Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
    detail::require_rank2(w, "linear weight");
    if (b.rank() != 1) throw ShapeError("linear bias must be rank 1, got " + shape_str(b.shape()));
    const std::size_t in = w.extent(0), out_dim = w.extent(1);
    if (x.shape().back() != in) {
        throw ShapeError("linear input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(w.shape()));
    }
    if (b.extent(0) != out_dim) {
        throw ShapeError("linear bias " + shape_str(b.shape()) + " does not match weight " +
                         shape_str(w.shape()));
    }
    const std::size_t rows = x.numel() / in;
    std::vector<std::size_t> out_shape = x.shape();
    out_shape.back() = out_dim;
    const bool rg = detail::any_requires_grad({&x, &w, &b});
    Tensor out = Tensor::uninit(std::move(out_shape), rg);
    auto& ov = out.node()->value;
    const auto& bv = b.value();
    for (std::size_t i = 0; i < rows; ++i) {
        std::copy(bv.begin(), bv.end(), ov.begin() + i * out_dim);
    }
    detail::mm_nn_acc(x.value().data(), w.value().data(), ov.data(), rows, in, out_dim);
    if (rg) {
        auto xn = x.node(), wn = w.node(), bn = b.node(), on = out.node();
        tape.record(on, [xn, wn, bn, on, rows, in, out_dim](Tape& t) {
            const auto& go = t.adj(on);
            if (xn->requires_grad) {
                detail::mm_nt_acc(go.data(), wn->value.data(), t.adj(xn).data(), rows, out_dim, in);
            }
            if (wn->requires_grad) {
                detail::mm_tn_acc(xn->value.data(), go.data(), t.adj(wn).data(), rows, in, out_dim);
            }
            if (bn->requires_grad) {
                auto& gb = t.adj(bn);
                for (std::size_t i = 0; i < rows; ++i) {
                    for (std::size_t j = 0; j < out_dim; ++j) gb[j] += go[i * out_dim + j];
                }
            }
        });
    }
    return out;
}

// Per-last-axis normalization to zero mean / unit (population) variance,
// then affine scale-shift.
inline Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
    if (gamma.rank() != 1 || beta.rank() != 1) {
        throw ShapeError("layer_norm gamma/beta must be rank 1");
    }
    const std::size_t d = x.shape().back();
    if (gamma.extent(0) != d || beta.extent(0) != d) {
        throw ShapeError("layer_norm parameter size does not match last axis of " +
                         shape_str(x.shape()));
    }
    const std::size_t rows = x.numel() / d;
    const bool rg = detail::any_requires_grad({&x, &gamma, &beta});
    Tensor out = Tensor::uninit(x.shape(), rg);
    // xhat is needed by the backward rule; shared via the closure.
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    const auto& xv = x.value();
    const auto& gv = gamma.value();
    const auto& bv = beta.value();
    auto& ov = out.node()->value;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = xr[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = inv;
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (xr[j] - mean) * inv;
            (*xhat)[r * d + j] = xh;
            ov[r * d + j] = gv[j] * xh + bv[j];
        }
    }
    if (rg) {
        auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
        tape.record(on, [xn, gn, bn, on, xhat, inv_std, rows, d](Tape& t) {
            const auto& go = t.adj(on);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gor = go.data() + r * d;
                const double* xh = xhat->data() + r * d;
                if (xn->requires_grad) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double gg = gor[j] * gn->value[j];
                        m1 += gg;
                        m2 += gg * xh[j];
                    }
                    m1 /= static_cast<double>(d);
                    m2 /= static_cast<double>(d);
                    auto& gx = t.adj(xn);
                    const double inv = (*inv_std)[r];
                    for (std::size_t j = 0; j < d; ++j) {
                        const double gg = gor[j] * gn->value[j];
                        gx[r * d + j] += (gg - m1 - xh[j] * m2) * inv;
                    }
                }
                if (gn->requires_grad) {
                    auto& gg = t.adj(gn);
                    for (std::size_t j = 0; j < d; ++j) gg[j] += gor[j] * xh[j];
                }
                if (bn->requires_grad) {
                    auto& gb = t.adj(bn);
                    for (std::size_t j = 0; j < d; ++j) gb[j] += gor[j];
                }
            }
        });
    }
    return out;
}

inline constexpr double kInvSqrt2 = std::numbers::sqrt2 / 2.0;
inline const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);

inline Tensor gelu(Tape& tape, const Tensor& x) {
    Tensor out = Tensor::uninit(x.shape(), x.requires_grad());
    const auto& xv = x.value();
    auto& ov = out.node()->value;
    for (std::size_t i = 0; i < ov.size(); ++i) {
        ov[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * kInvSqrt2));
    }
    if (x.requires_grad()) {
        auto xn = x.node(), on = out.node();
        tape.record(on, [xn, on](Tape& t) {
            const auto& go = t.adj(on);
            auto& gx = t.adj(xn);
            for (std::size_t i = 0; i < go.size(); ++i) {
                const double v = xn->value[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                const double pdf = std::exp(-0.5 * v * v) * kInvSqrt2Pi;
                gx[i] += go[i] * (cdf + v * pdf);
            }
        });
    }
    return out;
}

// Deterministic inverted dropout: the keep mask is a pure function of
// (seed, element index). rate 0 is the identity (no tape entry).
inline Tensor dropout_det(Tape& tape, const Tensor& x, double rate, std::uint64_t seed) {
    if (rate < 0.0 || rate >= 1.0) {
        throw ContractError("dropout rate must be in [0, 1), got " + std::to_string(rate));
    }
    if (rate == 0.0) return x;
    Tensor out = Tensor::uninit(x.shape(), x.requires_grad());
    auto mask = std::make_shared<std::vector<double>>(x.numel());
    CounterRng rng(seed);
    const double scale = 1.0 / (1.0 - rate);
    const auto& xv = x.value();
    auto& ov = out.node()->value;
    for (std::size_t i = 0; i < ov.size(); ++i) {
        const double keep = CounterRng::to_unit(rng.at(i)) >= rate ? scale : 0.0;
        (*mask)[i] = keep;
        ov[i] = xv[i] * keep;
    }
    if (x.requires_grad()) {
        auto xn = x.node(), on = out.node();
        tape.record(on, [xn, on, mask](Tape& t) {
            const auto& go = t.adj(on);
            auto& gx = t.adj(xn);
            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * (*mask)[i];
        });
    }
    return out;
}

// rows of softmax(logits + bias) over the last axis. Bias entries are 0 or
// the kMaskedBias sentinel; masked positions come out exactly 0 and rows are
// normalized over the surviving entries. A fully masked row is an error.
inline Tensor softmax_biased(Tape& tape, const Tensor& logits, const Tensor& bias) {
    if (logits.shape() != bias.shape()) {
        throw ShapeError("softmax_biased shapes differ: " + shape_str(logits.shape()) + " vs " +
                         shape_str(bias.shape()));
    }
    const std::size_t n = logits.shape().back();
    const std::size_t rows = logits.numel() / n;
    const bool rg = detail::any_requires_grad({&logits, &bias});
    Tensor out = Tensor::uninit(logits.shape(), rg);
    const auto& lv = logits.value();
    const auto& bv = bias.value();
    auto& ov = out.node()->value;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* lr = lv.data() + r * n;
        const double* br = bv.data() + r * n;
        bool any_open = false;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            if (br[j] > kMaskedBias * 0.5) {
                any_open = true;
                mx = std::max(mx, lr[j] + br[j]);
            }
        }
        if (!any_open) {
            throw MaskError("softmax_biased row " + std::to_string(r) +
                            " has every position masked");
        }
        double denom = 0.0;
        double* orow = ov.data() + r * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double e = std::exp(lr[j] + br[j] - mx);
            orow[j] = e;
            denom += e;
        }
        for (std::size_t j = 0; j < n; ++j) {
            double p = orow[j] / denom;
            if (p < kWeightClamp) p = 0.0;
            orow[j] = p;
        }
    }
    if (rg) {
        auto ln = logits.node(), bn = bias.node(), on = out.node();
        tape.record(on, [ln, bn, on, rows, n](Tape& t) {
            const auto& go = t.adj(on);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* p = on->value.data() + r * n;
                const double* g = go.data() + r * n;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += g[j] * p[j];
                if (ln->requires_grad) {
                    auto& gl = t.adj(ln);
                    for (std::size_t j = 0; j < n; ++j) gl[r * n + j] += p[j] * (g[j] - dot);
                }
                if (bn->requires_grad) {
                    auto& gb = t.adj(bn);
                    for (std::size_t j = 0; j < n; ++j) gb[r * n + j] += p[j] * (g[j] - dot);
                }
            }
        });
    }
    return out;
}

// Rows of table selected by index; gradients scatter-add back into the table.
inline Tensor embedding_lookup(Tape& tape, const Tensor& table, const std::vector<int>& indices) {
    detail::require_rank2(table, "embedding_lookup");
    if (indices.empty()) throw ContractError("embedding_lookup with empty index list");
    const std::size_t v = table.extent(0), d = table.extent(1);
    for (int ix : indices) {
        if (ix < 0 || static_cast<std::size_t>(ix) >= v) {
            throw ContractError("embedding index " + std::to_string(ix) +
                                " out of range for table " + shape_str(table.shape()));
        }
    }
    Tensor out = Tensor::uninit({indices.size(), d}, table.requires_grad());
    const auto& tv = table.value();
    auto& ov = out.node()->value;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        std::copy(tv.begin() + indices[i] * d, tv.begin() + (indices[i] + 1) * d,
                  ov.begin() + i * d);
    }
    if (table.requires_grad()) {
        auto tn = table.node(), on = out.node();
        tape.record(on, [tn, on, indices, d](Tape& t) {
            const auto& go = t.adj(on);
            auto& gt = t.adj(tn);
            for (std::size_t i = 0; i < indices.size(); ++i) {
                for (std::size_t j = 0; j < d; ++j) {
                    gt[indices[i] * d + j] += go[i * d + j];
                }
            }
        });
    }
    return out;
}

// Softmax cross-entropy of a single score vector against one target index.
inline Tensor cross_entropy(Tape& tape, const Tensor& logits, std::size_t target) {
    const std::size_t n = logits.numel();
    if (logits.rank() > 2 || (logits.rank() == 2 && logits.extent(0) != 1)) {
        throw ShapeError("cross_entropy expects a single score vector, got " +
                         shape_str(logits.shape()));
    }
    if (target >= n) {
        throw ContractError("cross_entropy target " + std::to_string(target) +
                            " out of range for " + std::to_string(n) + " classes");
    }
    const auto& lv = logits.value();
    double mx = lv[0];
    for (double v : lv) mx = std::max(mx, v);
    double denom = 0.0;
    for (double v : lv) denom += std::exp(v - mx);
    const double logsum = std::log(denom) + mx;
    Tensor out = Tensor::uninit({1}, logits.requires_grad());
    out.node()->value[0] = logsum - lv[target];
    if (logits.requires_grad()) {
        auto ln = logits.node(), on = out.node();
        tape.record(on, [ln, on, target, mx, denom](Tape& t) {
            const double g = t.adj(on)[0];
            auto& gl = t.adj(ln);
            for (std::size_t j = 0; j < gl.size(); ++j) {
                const double p = std::exp(ln->value[j] - mx) / denom;
                gl[j] += g * (p - (j == target ? 1.0 : 0.0));
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

using TensorFn = std::function<Tensor(Tape&, const Tensor&)>;

// Central-difference check of d f / d x against the tape gradient.
// Returns max_i |analytic_i - numeric_i| / max(1, |analytic_i|).
inline double grad_check(const TensorFn& f, const Tensor& x, double h) {
    if (!(h > 0.0) || h > 1e-2) {
        throw ContractError("grad_check step must be in (0, 1e-2], got " + std::to_string(h));
    }
    // Forward-only evaluation used for determinism probing and differencing.
    Tensor probe(x.shape(), x.value(), false);
    auto eval = [&](const std::vector<double>& values) {
        probe.mutable_value() = values;
        Tape t;
        Tensor y = f(t, probe);
        if (y.numel() != 1) {
            throw ContractError("grad_check function must be scalar-valued, got " +
                                shape_str(y.shape()));
        }
        return y.item();
    };
    const double f1 = eval(x.value());
    const double f2 = eval(x.value());
    if (f1 != f2) {
        throw DeterminismError("grad_check function is not deterministic: " +
                               std::to_string(f1) + " vs " + std::to_string(f2));
    }

    Tensor gx(x.shape(), x.value(), true);
    Tape tape;
    Tensor y = f(tape, gx);
    if (y.numel() != 1) {
        throw ContractError("grad_check function must be scalar-valued, got " +
                            shape_str(y.shape()));
    }
    tape.backward(y);
    const std::vector<double> analytic =
        gx.has_grad() ? gx.grad() : std::vector<double>(x.numel(), 0.0);

    double max_rel = 0.0;
    std::vector<double> values = x.value();
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + h;
        const double fp = eval(values);
        values[i] = saved - h;
        const double fm = eval(values);
        values[i] = saved;
        const double numeric = (fp - fm) / (2.0 * h);
        const double rel = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace scenegate

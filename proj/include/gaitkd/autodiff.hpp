#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gaitkd/tensor.hpp"

namespace gaitkd::grad {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape() const { return tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

    const Tensor& value() const;
    const Tensor& grad() const;

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = static_cast<std::size_t>(-1);
};

// Records primitive operations in topological order; backward replays the
// adjoint rules in reverse. Single-owner during construction and backward.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Var input(Tensor v) { return push(std::move(v), {}, nullptr, true); }

    Var constant(Tensor v) { return push(std::move(v), {}, nullptr, false); }

    // Extension point: record a node with an explicit adjoint rule. The rule
    // receives the tape and the node's own id and must accumulate into the
    // parents' grads via accumulate().
    Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn fn) {
        bool rg = false;
        for (auto p : parents) rg = rg || nodes_[p].requires_grad;
        return push(std::move(value), std::move(parents), rg ? std::move(fn) : nullptr, rg);
    }

    const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }

    const Tensor& grad_of(std::size_t id) const {
        const Node& n = nodes_[id];
        if (n.grad.numel() == 0 || !n.grad.same_shape(n.value)) {
            // touched lazily; expose zeros for nodes backward never reached
            const_cast<Node&>(n).grad = zeros_like(n.value);
        }
        return n.grad;
    }

    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    const std::vector<std::size_t>& parents_of(std::size_t id) const { return nodes_[id].parents; }

    void accumulate(std::size_t id, const Tensor& g) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return;
        if (!n.grad_alive) {
            n.grad = zeros_like(n.value);
            n.grad_alive = true;
        }
        require(n.grad.same_shape(g), ErrorCode::shape, "gradient shape mismatch");
        double* dst = n.grad.data();
        const double* src = g.data();
        for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
    }

    // Scalar-loss reverse pass. Leaves' grads hold d loss / d leaf afterward.
    void backward(Var loss) {
        require(loss.tape() == this, ErrorCode::config, "backward: var from another tape");
        Node& top = nodes_[loss.id()];
        require(top.value.numel() == 1, ErrorCode::config, "backward requires a scalar loss");
        require(top.value.all_finite(), ErrorCode::numeric, "backward on non-finite loss");
        for (auto& n : nodes_) {
            n.grad_alive = false;
        }
        top.grad = Tensor::full(top.value.shape(), 1.0);
        top.grad_alive = true;
        for (std::size_t i = loss.id() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || !n.grad_alive || !n.backward) continue;
            n.backward(*this, i);
        }
        // make leaf grads readable even when the loss did not depend on them
        for (auto& n : nodes_) {
            if (n.requires_grad && !n.grad_alive) {
                n.grad = zeros_like(n.value);
                n.grad_alive = true;
            }
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> parents;
        BackwardFn backward;
        bool requires_grad = false;
        bool grad_alive = false;
    };

    Var push(Tensor value, std::vector<std::size_t> parents, BackwardFn fn, bool rg) {
        require(value.all_finite(), ErrorCode::numeric, "non-finite value recorded on tape");
        Node n;
        n.value = std::move(value);
        n.parents = std::move(parents);
        n.backward = std::move(fn);
        n.requires_grad = rg;
        nodes_.push_back(std::move(n));
        return Var(this, nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value_of(id_); }
inline const Tensor& Var::grad() const { return tape_->grad_of(id_); }

namespace detail {

inline Tape& tape_of(Var a) {
    require(a.valid(), ErrorCode::config, "operation on empty Var");
    return *a.tape();
}

inline void check_same_tape(Var a, Var b) {
    require(a.tape() == b.tape(), ErrorCode::config, "operands from different tapes");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
    detail::check_same_tape(a, b);
    Tape& t = detail::tape_of(a);
    require(a.value().same_shape(b.value()), ErrorCode::shape,
            "add: " + shape_str(a.value().shape()) + " vs " + shape_str(b.value().shape()));
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
    return t.record(std::move(out), {a.id(), b.id()}, [](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        t.accumulate(t.parents_of(self)[0], g);
        t.accumulate(t.parents_of(self)[1], g);
    });
}

inline Var sub(Var a, Var b) {
    detail::check_same_tape(a, b);
    Tape& t = detail::tape_of(a);
    require(a.value().same_shape(b.value()), ErrorCode::shape, "sub: shape mismatch");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
    return t.record(std::move(out), {a.id(), b.id()}, [](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        t.accumulate(t.parents_of(self)[0], g);
        Tensor ng = g;
        for (std::size_t i = 0; i < ng.numel(); ++i) ng[i] = -ng[i];
        t.accumulate(t.parents_of(self)[1], ng);
    });
}

inline Var mul(Var a, Var b) {
    detail::check_same_tape(a, b);
    Tape& t = detail::tape_of(a);
    require(a.value().same_shape(b.value()), ErrorCode::shape, "mul: shape mismatch");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
    return t.record(std::move(out), {a.id(), b.id()}, [](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        std::size_t pa = t.parents_of(self)[0], pb = t.parents_of(self)[1];
        if (t.requires_grad(pa)) {
            Tensor ga = g;
            for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] *= t.value_of(pb)[i];
            t.accumulate(pa, ga);
        }
        if (t.requires_grad(pb)) {
            Tensor gb = g;
            for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] *= t.value_of(pa)[i];
            t.accumulate(pb, gb);
        }
    });
}

inline Var div(Var a, Var b) {
    detail::check_same_tape(a, b);
    Tape& t = detail::tape_of(a);
    require(a.value().same_shape(b.value()), ErrorCode::shape, "div: shape mismatch");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) {
        require(b.value()[i] != 0.0, ErrorCode::numeric, "div: zero denominator");
        out[i] /= b.value()[i];
    }
    return t.record(std::move(out), {a.id(), b.id()}, [](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        std::size_t pa = t.parents_of(self)[0], pb = t.parents_of(self)[1];
        const Tensor& bv = t.value_of(pb);
        if (t.requires_grad(pa)) {
            Tensor ga = g;
            for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] /= bv[i];
            t.accumulate(pa, ga);
        }
        if (t.requires_grad(pb)) {
            Tensor gb = g;
            const Tensor& yv = t.value_of(self);
            for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] *= -yv[i] / bv[i];
            t.accumulate(pb, gb);
        }
    });
}

// ---------------------------------------------------------------------------
// scalar and unary
// ---------------------------------------------------------------------------

inline Var add_scalar(Var a, double c) {
    Tape& t = detail::tape_of(a);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += c;
    return t.record(std::move(out), {a.id()}, [](Tape& t, std::size_t self) {
        t.accumulate(t.parents_of(self)[0], t.grad_of(self));
    });
}

inline Var mul_scalar(Var a, double c) {
    Tape& t = detail::tape_of(a);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c;
    return t.record(std::move(out), {a.id()}, [c](Tape& t, std::size_t self) {
        Tensor g = t.grad_of(self);
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= c;
        t.accumulate(t.parents_of(self)[0], g);
    });
}

inline Var neg(Var a) { return mul_scalar(a, -1.0); }

// out = c - a
inline Var rsub_scalar(double c, Var a) { return add_scalar(neg(a), c); }

inline Var exp_(Var a) {
    Tape& t = detail::tape_of(a);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
    return t.record(std::move(out), {a.id()}, [](Tape& t, std::size_t self) {
        Tensor g = t.grad_of(self);
        const Tensor& y = t.value_of(self);
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= y[i];
        t.accumulate(t.parents_of(self)[0], g);
    });
}

inline Var log_(Var a) {
    Tape& t = detail::tape_of(a);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) {
        require(out[i] > 0.0, ErrorCode::numeric, "log of non-positive value");
        out[i] = std::log(out[i]);
    }
    return t.record(std::move(out), {a.id()}, [](Tape& t, std::size_t self) {
        Tensor g = t.grad_of(self);
        const Tensor& x = t.value_of(t.parents_of(self)[0]);
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] /= x[i];
        t.accumulate(t.parents_of(self)[0], g);
    });
}

// log(max(x, eps)): clamped below eps with zero slope there. Underflow guard
// for masked-softmax probabilities.
inline Var log_guarded(Var a, double eps = 1e-12) {
    Tape& t = detail::tape_of(a);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::log(std::max(out[i], eps));
    return t.record(std::move(out), {a.id()}, [eps](Tape& t, std::size_t self) {
        Tensor g = t.grad_of(self);
        const Tensor& x = t.value_of(t.parents_of(self)[0]);
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] = x[i] > eps ? g[i] / x[i] : 0.0;
        t.accumulate(t.parents_of(self)[0], g);
    });
}

inline Var relu(Var a) {
    Tape& t = detail::tape_of(a);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::max(out[i], 0.0);
    return t.record(std::move(out), {a.id()}, [](Tape& t, std::size_t self) {
        Tensor g = t.grad_of(self);
        const Tensor& x = t.value_of(t.parents_of(self)[0]);
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (x[i] <= 0.0) g[i] = 0.0;  // subgradient 0 at the hinge
        t.accumulate(t.parents_of(self)[0], g);
    });
}

inline Var tanh_(Var a) {
    Tape& t = detail::tape_of(a);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
    return t.record(std::move(out), {a.id()}, [](Tape& t, std::size_t self) {
        Tensor g = t.grad_of(self);
        const Tensor& y = t.value_of(self);
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= 1.0 - y[i] * y[i];
        t.accumulate(t.parents_of(self)[0], g);
    });
}

inline Var square(Var a) {
    Tape& t = detail::tape_of(a);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= out[i];
    return t.record(std::move(out), {a.id()}, [](Tape& t, std::size_t self) {
        Tensor g = t.grad_of(self);
        const Tensor& x = t.value_of(t.parents_of(self)[0]);
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= 2.0 * x[i];
        t.accumulate(t.parents_of(self)[0], g);
    });
}

// sqrt with the adjoint denominator clamped away from zero; sqrt(0) itself is
// a legal value (distance of identical embeddings).
inline Var sqrt_(Var a, double grad_eps = 1e-12) {
    Tape& t = detail::tape_of(a);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) {
        require(out[i] >= 0.0, ErrorCode::numeric, "sqrt of negative value");
        out[i] = std::sqrt(out[i]);
    }
    return t.record(std::move(out), {a.id()}, [grad_eps](Tape& t, std::size_t self) {
        Tensor g = t.grad_of(self);
        const Tensor& y = t.value_of(self);
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] /= 2.0 * std::max(y[i], grad_eps);
        t.accumulate(t.parents_of(self)[0], g);
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Var sum_all(Var a) {
    Tape& t = detail::tape_of(a);
    double s = 0.0;
    for (std::size_t i = 0; i < a.value().numel(); ++i) s += a.value()[i];
    return t.record(Tensor::scalar(s), {a.id()}, [](Tape& t, std::size_t self) {
        const double g = t.grad_of(self)[0];
        Tensor gp = zeros_like(t.value_of(t.parents_of(self)[0]));
        for (std::size_t i = 0; i < gp.numel(); ++i) gp[i] = g;
        t.accumulate(t.parents_of(self)[0], gp);
    });
}

inline Var mean_all(Var a) { return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.value().numel())); }

namespace detail {
inline std::pair<std::size_t, std::size_t> rows_cols(const Tensor& v) {
    require(v.rank() >= 1, ErrorCode::shape, "last-dim op on scalar");
    std::size_t cols = v.dim(v.rank() - 1);
    return {v.numel() / cols, cols};
}
inline Shape drop_last(const Shape& s) { return Shape(s.begin(), s.end() - 1); }
}  // namespace detail

inline Var sum_lastdim(Var a) {
    Tape& t = detail::tape_of(a);
    auto [rows, cols] = detail::rows_cols(a.value());
    Tensor out(detail::drop_last(a.value().shape()));
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += a.value()[r * cols + c];
        out[r] = s;
    }
    return t.record(std::move(out), {a.id()}, [](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& x = t.value_of(t.parents_of(self)[0]);
        auto [rows, cols] = detail::rows_cols(x);
        Tensor gp = zeros_like(x);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gp[r * cols + c] = g[r];
        t.accumulate(t.parents_of(self)[0], gp);
    });
}

// subgradient routed to the first maximal entry of each row
inline Var max_lastdim(Var a) {
    Tape& t = detail::tape_of(a);
    auto [rows, cols] = detail::rows_cols(a.value());
    Tensor out(detail::drop_last(a.value().shape()));
    for (std::size_t r = 0; r < rows; ++r) {
        double m = a.value()[r * cols];
        for (std::size_t c = 1; c < cols; ++c) m = std::max(m, a.value()[r * cols + c]);
        out[r] = m;
    }
    return t.record(std::move(out), {a.id()}, [](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& x = t.value_of(t.parents_of(self)[0]);
        auto [rows, cols] = detail::rows_cols(x);
        Tensor gp = zeros_like(x);
        for (std::size_t r = 0; r < rows; ++r) {
            std::size_t arg = 0;
            for (std::size_t c = 1; c < cols; ++c)
                if (x[r * cols + c] > x[r * cols + arg]) arg = c;
            gp[r * cols + arg] = g[r];
        }
        t.accumulate(t.parents_of(self)[0], gp);
    });
}

// ---------------------------------------------------------------------------
// structured ops
// ---------------------------------------------------------------------------

// Numerically stable row softmax: exp(x - rowmax) normalized.
inline Var softmax_lastdim(Var a) {
    Tape& t = detail::tape_of(a);
    auto [rows, cols] = detail::rows_cols(a.value());
    Tensor out = a.value();
    for (std::size_t r = 0; r < rows; ++r) {
        double* p = out.data() + r * cols;
        double m = p[0];
        for (std::size_t c = 1; c < cols; ++c) m = std::max(m, p[c]);
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            p[c] = std::exp(p[c] - m);
            s += p[c];
        }
        for (std::size_t c = 0; c < cols; ++c) p[c] /= s;
    }
    return t.record(std::move(out), {a.id()}, [](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& y = t.value_of(self);
        auto [rows, cols] = detail::rows_cols(y);
        Tensor gp = zeros_like(y);
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
            for (std::size_t c = 0; c < cols; ++c)
                gp[r * cols + c] = y[r * cols + c] * (g[r * cols + c] - dot);
        }
        t.accumulate(t.parents_of(self)[0], gp);
    });
}

inline Var l2_normalize_lastdim(Var a, double min_norm = 1e-12) {
    Tape& t = detail::tape_of(a);
    auto [rows, cols] = detail::rows_cols(a.value());
    Tensor out = a.value();
    for (std::size_t r = 0; r < rows; ++r) {
        double* p = out.data() + r * cols;
        double n2 = 0.0;
        for (std::size_t c = 0; c < cols; ++c) n2 += p[c] * p[c];
        double n = std::sqrt(n2);
        require(n > min_norm, ErrorCode::numeric,
                "l2_normalize: near-zero norm at row " + std::to_string(r));
        for (std::size_t c = 0; c < cols; ++c) p[c] /= n;
    }
    return t.record(std::move(out), {a.id()}, [](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& y = t.value_of(self);
        const Tensor& x = t.value_of(t.parents_of(self)[0]);
        auto [rows, cols] = detail::rows_cols(y);
        Tensor gp = zeros_like(y);
        for (std::size_t r = 0; r < rows; ++r) {
            double n2 = 0.0, dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
                n2 += x[r * cols + c] * x[r * cols + c];
                dot += g[r * cols + c] * y[r * cols + c];
            }
            double n = std::sqrt(n2);
            for (std::size_t c = 0; c < cols; ++c)
                gp[r * cols + c] = (g[r * cols + c] - y[r * cols + c] * dot) / n;
        }
        t.accumulate(t.parents_of(self)[0], gp);
    });
}

namespace detail {
// C(n x m) += / = A(n x k) * B(k x m); shared by plain and tape paths so both
// produce bit-identical values.
inline void matmul_kernel(const double* A, const double* B, double* C, std::size_t n, std::size_t k,
                          std::size_t m) {
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (std::size_t l = 0; l < k; ++l) acc += A[i * k + l] * B[l * m + j];
            C[i * m + j] = acc;
        }
}
inline void matmul_acc_nt(const double* A, const double* B, double* C, std::size_t n, std::size_t k,
                          std::size_t m) {
    // C(n x k) += A(n x m) * B(k x m)^T
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            double acc = 0.0;
            for (std::size_t l = 0; l < m; ++l) acc += A[i * m + l] * B[j * m + l];
            C[i * k + j] += acc;
        }
}
inline void matmul_acc_tn(const double* A, const double* B, double* C, std::size_t n, std::size_t k,
                          std::size_t m) {
    // C(k x m) += A(n x k)^T * B(n x m)
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (std::size_t l = 0; l < n; ++l) acc += A[l * k + i] * B[l * m + j];
            C[i * m + j] += acc;
        }
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
    detail::check_same_tape(a, b);
    Tape& t = detail::tape_of(a);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0), ErrorCode::shape,
            "matmul: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    Tensor out(Shape{av.dim(0), bv.dim(1)});
    detail::matmul_kernel(av.data(), bv.data(), out.data(), av.dim(0), av.dim(1), bv.dim(1));
    return t.record(std::move(out), {a.id(), b.id()}, [](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        std::size_t pa = t.parents_of(self)[0], pb = t.parents_of(self)[1];
        const Tensor& av = t.value_of(pa);
        const Tensor& bv = t.value_of(pb);
        const std::size_t n = av.dim(0), k = av.dim(1), m = bv.dim(1);
        if (t.requires_grad(pa)) {
            Tensor ga = zeros_like(av);
            detail::matmul_acc_nt(g.data(), bv.data(), ga.data(), n, k, m);
            t.accumulate(pa, ga);
        }
        if (t.requires_grad(pb)) {
            Tensor gb = zeros_like(bv);
            detail::matmul_acc_tn(av.data(), g.data(), gb.data(), n, k, m);
            t.accumulate(pb, gb);
        }
    });
}

// vec (n) -> (rows, n); adjoint sums over rows
inline Var broadcast_rows(Var v, std::size_t rows) {
    Tape& t = detail::tape_of(v);
    require(v.value().rank() == 1, ErrorCode::shape, "broadcast_rows expects a vector");
    const std::size_t n = v.value().dim(0);
    Tensor out(Shape{rows, n});
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < n; ++c) out(r, c) = v.value()[c];
    return t.record(std::move(out), {v.id()}, [](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& x = t.value_of(t.parents_of(self)[0]);
        Tensor gp = zeros_like(x);
        for (std::size_t r = 0; r < g.dim(0); ++r)
            for (std::size_t c = 0; c < g.dim(1); ++c) gp[c] += g(r, c);
        t.accumulate(t.parents_of(self)[0], gp);
    });
}

// (B, K, P) -> (B, K) slice at part p; adjoint scatters back
inline Var slice_part(Var a, std::size_t p) {
    Tape& t = detail::tape_of(a);
    const Tensor& v = a.value();
    require(v.rank() == 3, ErrorCode::shape, "slice_part expects a rank-3 tensor");
    require(p < v.dim(2), ErrorCode::index,
            "part index " + std::to_string(p) + " out of range for " + shape_str(v.shape()));
    Tensor out(Shape{v.dim(0), v.dim(1)});
    for (std::size_t i = 0; i < v.dim(0); ++i)
        for (std::size_t j = 0; j < v.dim(1); ++j) out(i, j) = v(i, j, p);
    return t.record(std::move(out), {a.id()}, [p](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& x = t.value_of(t.parents_of(self)[0]);
        Tensor gp = zeros_like(x);
        for (std::size_t i = 0; i < g.dim(0); ++i)
            for (std::size_t j = 0; j < g.dim(1); ++j) gp(i, j, p) = g(i, j);
        t.accumulate(t.parents_of(self)[0], gp);
    });
}

// list of (B, K) matrices -> (B, K, P)
inline Var stack_parts(std::span<const Var> parts) {
    require(!parts.empty(), ErrorCode::shape, "stack_parts on empty list");
    Tape& t = detail::tape_of(parts[0]);
    const std::size_t B = parts[0].value().dim(0), K = parts[0].value().dim(1);
    std::vector<std::size_t> ids;
    ids.reserve(parts.size());
    Tensor out(Shape{B, K, parts.size()});
    for (std::size_t p = 0; p < parts.size(); ++p) {
        detail::check_same_tape(parts[0], parts[p]);
        const Tensor& v = parts[p].value();
        require(v.rank() == 2 && v.dim(0) == B && v.dim(1) == K, ErrorCode::shape,
                "stack_parts: inconsistent slice shapes");
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t j = 0; j < K; ++j) out(i, j, p) = v(i, j);
        ids.push_back(parts[p].id());
    }
    return t.record(std::move(out), std::move(ids), [](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const auto& ps = t.parents_of(self);
        for (std::size_t p = 0; p < ps.size(); ++p) {
            if (!t.requires_grad(ps[p])) continue;
            Tensor gp(Shape{g.dim(0), g.dim(1)});
            for (std::size_t i = 0; i < g.dim(0); ++i)
                for (std::size_t j = 0; j < g.dim(1); ++j) gp(i, j) = g(i, j, p);
            t.accumulate(ps[p], gp);
        }
    });
}

// (B, K, P) -> (B, K, p_keep), first parts kept; adjoint scatters back
inline Var crop_parts(Var a, std::size_t p_keep) {
    Tape& t = detail::tape_of(a);
    const Tensor& v = a.value();
    require(v.rank() == 3, ErrorCode::shape, "crop_parts expects a rank-3 tensor");
    require(p_keep >= 1 && p_keep <= v.dim(2), ErrorCode::shape, "crop_parts: bad part count");
    if (p_keep == v.dim(2)) return a;
    Tensor out(Shape{v.dim(0), v.dim(1), p_keep});
    for (std::size_t i = 0; i < v.dim(0); ++i)
        for (std::size_t j = 0; j < v.dim(1); ++j)
            for (std::size_t p = 0; p < p_keep; ++p) out(i, j, p) = v(i, j, p);
    return t.record(std::move(out), {a.id()}, [](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& x = t.value_of(t.parents_of(self)[0]);
        Tensor gp = zeros_like(x);
        for (std::size_t i = 0; i < g.dim(0); ++i)
            for (std::size_t j = 0; j < g.dim(1); ++j)
                for (std::size_t p = 0; p < g.dim(2); ++p) gp(i, j, p) = g(i, j, p);
        t.accumulate(t.parents_of(self)[0], gp);
    });
}

// (B, D, P) -> (B, d_keep, P), first channels kept
inline Var crop_channels(Var a, std::size_t d_keep) {
    Tape& t = detail::tape_of(a);
    const Tensor& v = a.value();
    require(v.rank() == 3, ErrorCode::shape, "crop_channels expects a rank-3 tensor");
    require(d_keep >= 1 && d_keep <= v.dim(1), ErrorCode::shape, "crop_channels: bad channel count");
    if (d_keep == v.dim(1)) return a;
    Tensor out(Shape{v.dim(0), d_keep, v.dim(2)});
    for (std::size_t i = 0; i < v.dim(0); ++i)
        for (std::size_t j = 0; j < d_keep; ++j)
            for (std::size_t p = 0; p < v.dim(2); ++p) out(i, j, p) = v(i, j, p);
    return t.record(std::move(out), {a.id()}, [](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& x = t.value_of(t.parents_of(self)[0]);
        Tensor gp = zeros_like(x);
        for (std::size_t i = 0; i < g.dim(0); ++i)
            for (std::size_t j = 0; j < g.dim(1); ++j)
                for (std::size_t p = 0; p < g.dim(2); ++p) gp(i, j, p) = g(i, j, p);
        t.accumulate(t.parents_of(self)[0], gp);
    });
}

// elementwise sum of k same-shape vars as a single node
inline Var sum_vars(std::span<const Var> vs) {
    require(!vs.empty(), ErrorCode::shape, "sum_vars on empty list");
    Tape& t = detail::tape_of(vs[0]);
    Tensor out = vs[0].value();
    std::vector<std::size_t> ids{vs[0].id()};
    for (std::size_t k = 1; k < vs.size(); ++k) {
        detail::check_same_tape(vs[0], vs[k]);
        require(vs[k].value().same_shape(out), ErrorCode::shape, "sum_vars: shape mismatch");
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += vs[k].value()[i];
        ids.push_back(vs[k].id());
    }
    return t.record(std::move(out), std::move(ids), [](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        for (auto p : t.parents_of(self)) t.accumulate(p, g);
    });
}

// matrix (R, C) -> row i as a vector (C)
inline Var row(Var a, std::size_t i) {
    Tape& t = detail::tape_of(a);
    const Tensor& v = a.value();
    require(v.rank() == 2, ErrorCode::shape, "row expects a matrix");
    require(i < v.dim(0), ErrorCode::index, "row index out of range");
    Tensor out(Shape{v.dim(1)});
    for (std::size_t c = 0; c < v.dim(1); ++c) out[c] = v(i, c);
    return t.record(std::move(out), {a.id()}, [i](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        const Tensor& x = t.value_of(t.parents_of(self)[0]);
        Tensor gp = zeros_like(x);
        for (std::size_t c = 0; c < g.numel(); ++c) gp(i, c) = g[c];
        t.accumulate(t.parents_of(self)[0], gp);
    });
}

// ---------------------------------------------------------------------------
// finite-difference gradient checking
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;
    bool pass = true;
    std::size_t coords_checked = 0;
    std::string worst;  // "input#i[j]" of the worst coordinate
};

// Scalar-valued function of several tensor inputs, expressed on a tape.
using TapeFnMulti = std::function<Var(Tape&, std::span<const Var>)>;

// Compares the tape gradient of f at xs against central differences
// (f(x+eps e_d) - f(x-eps e_d)) / (2 eps), coordinate by coordinate.
// A coordinate passes if its relative error is within tol, or (absolute
// fallback for tiny gradients) its absolute error is within tol.
inline GradCheckReport check_gradient_multi(const TapeFnMulti& f, std::span<const Tensor> xs, double eps,
                                            double tol) {
    require(eps > 0.0, ErrorCode::config, "check_gradient: eps must be positive");
    auto eval = [&](std::span<const Tensor> points) {
        Tape t;
        std::vector<Var> vars;
        vars.reserve(points.size());
        for (const auto& p : points) vars.push_back(t.input(p));
        Var loss = f(t, vars);
        require(loss.value().numel() == 1, ErrorCode::config, "check_gradient: loss must be scalar");
        double v = loss.value().scalar_value();
        require(std::isfinite(v), ErrorCode::numeric, "check_gradient: non-finite evaluation");
        return v;
    };

    // analytic pass
    Tape t;
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(t.input(x));
    Var loss = f(t, vars);
    require(loss.value().numel() == 1, ErrorCode::config, "check_gradient: loss must be scalar");
    t.backward(loss);
    std::vector<Tensor> analytic;
    analytic.reserve(xs.size());
    for (auto& v : vars) analytic.push_back(v.grad());

    GradCheckReport rep;
    std::vector<Tensor> pert(xs.begin(), xs.end());
    for (std::size_t k = 0; k < xs.size(); ++k) {
        for (std::size_t d = 0; d < xs[k].numel(); ++d) {
            const double orig = pert[k][d];
            pert[k][d] = orig + eps;
            const double fp = eval(pert);
            pert[k][d] = orig - eps;
            const double fm = eval(pert);
            pert[k][d] = orig;
            const double fd = (fp - fm) / (2.0 * eps);
            const double an = analytic[k][d];
            const double abs_err = std::abs(an - fd);
            const double denom = std::max(std::abs(an), std::abs(fd));
            const double rel_err = denom > 0.0 ? abs_err / denom : 0.0;
            // absolute fallback excuses tiny gradients from the relative test
            const double effective_rel = abs_err <= tol ? 0.0 : rel_err;
            ++rep.coords_checked;
            rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
            if (effective_rel > rep.max_rel_err) {
                rep.max_rel_err = effective_rel;
                rep.worst = "input#" + std::to_string(k) + "[" + std::to_string(d) + "]";
            }
            if (effective_rel > tol) rep.pass = false;
        }
    }
    return rep;
}

using TapeFn = std::function<Var(Tape&, Var)>;

inline GradCheckReport check_gradient(const TapeFn& f, const Tensor& x, double eps, double tol) {
    TapeFnMulti g = [&f](Tape& t, std::span<const Var> vs) { return f(t, vs[0]); };
    return check_gradient_multi(g, std::span<const Tensor>(&x, 1), eps, tol);
}

}  // namespace gaitkd::grad

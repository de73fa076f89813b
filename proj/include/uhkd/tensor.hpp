#pragma once

// Dense f64 tensor with reverse-mode autodiff on a dynamic tape.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "uhkd/rng.hpp"

namespace uhkd {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

inline Shape row_major_strides(const Shape& s) {
    Shape st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericDomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> v;
    bool requires_grad = false; // leaf flag
    bool grad_path = false;     // participates in the active tape
    std::vector<double> g;

    void ensure_grad() {
        if (g.size() != v.size()) g.assign(v.size(), 0.0);
    }
};

inline void check_finite(const std::vector<double>& v, const char* who) {
    for (double x : v)
        if (!std::isfinite(x))
            throw NumericDomainError(std::string(who) + ": non-finite value produced");
}

} // namespace detail

class Tensor;

// Dynamic tape: ops append a backward closure in execution order; replaying
// in reverse visits each node once in valid topological order.
class Tape {
public:
    Tape() {
        prev_ = active_;
        active_ = this;
    }
    ~Tape() {
        if (active_ == this) active_ = prev_;
    }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_; }

    void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
    std::size_t size() const { return nodes_.size(); }

    void replay_backward() {
        for (std::size_t i = nodes_.size(); i-- > 0;) nodes_[i]();
        nodes_.clear();
    }

private:
    static inline thread_local Tape* active_ = nullptr;
    Tape* prev_ = nullptr;
    std::vector<std::function<void()>> nodes_;
};

// Temporarily disables tape recording (teacher paths, detached evals).
class NoGradGuard {
public:
    NoGradGuard() : saved_(enabled_) { enabled_ = false; }
    ~NoGradGuard() { enabled_ = saved_; }
    static bool enabled() { return enabled_; }

private:
    static inline thread_local bool enabled_ = true;
    bool saved_;
};

class Tensor {
public:
    Tensor() : p_(std::make_shared<detail::TensorImpl>()) {}

    explicit Tensor(Shape shape, double fill = 0.0)
        : p_(std::make_shared<detail::TensorImpl>()) {
        p_->shape = std::move(shape);
        p_->v.assign(numel(p_->shape), fill);
    }

    Tensor(Shape shape, std::vector<double> data)
        : p_(std::make_shared<detail::TensorImpl>()) {
        if (numel(shape) != data.size())
            throw DimensionError("Tensor: data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        detail::check_finite(data, "Tensor");
        p_->shape = std::move(shape);
        p_->v = std::move(data);
    }

    static Tensor scalar(double x) { return Tensor({}, std::vector<double>{x}); }
    static Tensor zeros(Shape s) { return Tensor(std::move(s), 0.0); }
    static Tensor ones(Shape s) { return Tensor(std::move(s), 1.0); }
    static Tensor full(Shape s, double x) { return Tensor(std::move(s), x); }

    static Tensor uniform(Shape s, double lo, double hi, Rng& rng) {
        Tensor t(std::move(s));
        for (auto& x : t.p_->v) x = rng.uniform(lo, hi);
        return t;
    }

    static Tensor normal(Shape s, double mean, double stddev, Rng& rng) {
        Tensor t(std::move(s));
        for (auto& x : t.p_->v) x = mean + stddev * rng.normal();
        return t;
    }

    const Shape& shape() const { return p_->shape; }
    std::size_t rank() const { return p_->shape.size(); }
    std::size_t size() const { return p_->v.size(); }
    std::size_t extent(std::size_t i) const { return p_->shape.at(i); }

    std::vector<double>& data() { return p_->v; }
    const std::vector<double>& data() const { return p_->v; }

    double item() const {
        if (p_->v.size() != 1)
            throw DimensionError("item(): tensor has " + std::to_string(p_->v.size()) + " elements");
        return p_->v[0];
    }

    double& at(std::initializer_list<std::size_t> idx) {
        return p_->v[flat_index(idx)];
    }
    double at(std::initializer_list<std::size_t> idx) const {
        return p_->v[flat_index(idx)];
    }

    Tensor& set_requires_grad(bool b = true) {
        p_->requires_grad = b;
        p_->grad_path = b;
        if (b) p_->ensure_grad();
        return *this;
    }
    bool requires_grad() const { return p_->requires_grad; }
    bool grad_path() const { return p_->grad_path; }

    bool has_grad() const { return !p_->g.empty(); }
    Tensor grad() const {
        Tensor g(p_->shape);
        if (!p_->g.empty()) g.p_->v = p_->g;
        return g;
    }
    std::vector<double>& grad_data() {
        p_->ensure_grad();
        return p_->g;
    }
    void zero_grad() {
        if (!p_->g.empty()) std::fill(p_->g.begin(), p_->g.end(), 0.0);
    }

    // Shares storage, severed from the tape.
    Tensor detach() const {
        Tensor t;
        t.p_ = std::make_shared<detail::TensorImpl>();
        t.p_->shape = p_->shape;
        t.p_->v = p_->v;
        return t;
    }

    Tensor clone() const { return detach(); }

    std::shared_ptr<detail::TensorImpl> impl() const { return p_; }

    static Tensor wrap(std::shared_ptr<detail::TensorImpl> p) {
        Tensor t;
        t.p_ = std::move(p);
        return t;
    }

private:
    std::size_t flat_index(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != p_->shape.size())
            throw DimensionError("at(): index rank mismatch");
        std::size_t flat = 0, i = 0;
        for (std::size_t k : idx) {
            if (k >= p_->shape[i]) throw DimensionError("at(): index out of range");
            flat = flat * p_->shape[i] + k;
            ++i;
        }
        return flat;
    }

    std::shared_ptr<detail::TensorImpl> p_;
};

namespace detail {

inline bool recording(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::active() || !NoGradGuard::enabled()) return false;
    for (auto* t : inputs)
        if (t->grad_path()) return true;
    return false;
}

inline void mark_output(Tensor& out, bool rec) {
    if (rec) {
        out.impl()->grad_path = true;
        out.impl()->ensure_grad();
    }
}

// Broadcast helper: b is broadcast against a's shape. Supported cases are
// same shape, scalar b, trailing suffix, and equal-rank axes of extent 1.
struct Broadcast {
    Shape bstrides; // aligned to a's rank, 0 on broadcast axes
    bool trivial;   // same shape
    explicit Broadcast(const Shape& ashape, const Shape& bshape) {
        trivial = (ashape == bshape);
        bstrides.assign(ashape.size(), 0);
        if (trivial) {
            bstrides = row_major_strides(ashape);
            return;
        }
        if (bshape.size() > ashape.size())
            throw DimensionError("broadcast: shape " + shape_str(bshape) +
                                 " not broadcastable to " + shape_str(ashape));
        const Shape bs = row_major_strides(bshape);
        const std::size_t off = ashape.size() - bshape.size();
        for (std::size_t i = 0; i < bshape.size(); ++i) {
            if (bshape[i] == ashape[off + i]) {
                bstrides[off + i] = bs[i];
            } else if (bshape[i] == 1) {
                bstrides[off + i] = 0;
            } else {
                throw DimensionError("broadcast: shape " + shape_str(bshape) +
                                     " not broadcastable to " + shape_str(ashape));
            }
        }
    }
};

// Iterates a's flat index together with the broadcast index into b.
template <class F>
inline void for_each_broadcast(const Shape& ashape, const Broadcast& bc, F&& f) {
    const std::size_t n = numel(ashape);
    if (bc.trivial) {
        for (std::size_t i = 0; i < n; ++i) f(i, i);
        return;
    }
    Shape idx(ashape.size(), 0);
    std::size_t bi = 0;
    for (std::size_t i = 0; i < n; ++i) {
        f(i, bi);
        for (std::size_t d = ashape.size(); d-- > 0;) {
            ++idx[d];
            bi += bc.bstrides[d];
            if (idx[d] < ashape[d]) break;
            bi -= bc.bstrides[d] * ashape[d];
            idx[d] = 0;
        }
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

namespace detail {

template <class F, class DA, class DB>
Tensor binary_op(const Tensor& a, const Tensor& b, F f, DA da, DB db, const char* name,
                 bool check_out = false) {
    Broadcast bc(a.shape(), b.shape());
    Tensor out(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for_each_broadcast(a.shape(), bc, [&](std::size_t i, std::size_t j) {
        ov[i] = f(av[i], bv[j]);
    });
    if (check_out) check_finite(ov, name);

    const bool rec = recording({&a, &b});
    mark_output(out, rec);
    if (rec) {
        auto ap = a.impl(), bp = b.impl(), op = out.impl();
        const bool aneeds = a.grad_path(), bneeds = b.grad_path();
        Tape::active()->record([ap, bp, op, bc, da, db, aneeds, bneeds]() {
            if (aneeds) ap->ensure_grad();
            if (bneeds) bp->ensure_grad();
            for_each_broadcast(ap->shape, bc, [&](std::size_t i, std::size_t j) {
                const double g = op->g[i];
                if (aneeds) ap->g[i] += g * da(ap->v[i], bp->v[j]);
                if (bneeds) bp->g[j] += g * db(ap->v[i], bp->v[j]);
            });
        });
    }
    return out;
}

template <class F, class DA>
Tensor unary_op(const Tensor& a, F f, DA da, const char* name, bool check_out = false) {
    Tensor out(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = f(av[i]);
    if (check_out) check_finite(ov, name);

    const bool rec = recording({&a});
    mark_output(out, rec);
    if (rec) {
        auto ap = a.impl(), op = out.impl();
        Tape::active()->record([ap, op, da]() {
            ap->ensure_grad();
            for (std::size_t i = 0; i < ap->v.size(); ++i)
                ap->g[i] += op->g[i] * da(ap->v[i], op->v[i]);
        });
    }
    return out;
}

} // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; }, "add");
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; }, "sub");
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op(
        a, b, [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; }, "mul");
}
inline Tensor div(const Tensor& a, const Tensor& b) {
    for (double y : b.data())
        if (y == 0.0) throw NumericDomainError("div: division by zero");
    return detail::binary_op(
        a, b, [](double x, double y) { return x / y; },
        [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); }, "div", true);
}

inline Tensor add(const Tensor& a, double c) { return add(a, Tensor::scalar(c)); }
inline Tensor sub(const Tensor& a, double c) { return sub(a, Tensor::scalar(c)); }
inline Tensor sub(double c, const Tensor& a) { return sub(Tensor::full(a.shape(), c), a); }
inline Tensor mul(const Tensor& a, double c) { return mul(a, Tensor::scalar(c)); }
inline Tensor div(const Tensor& a, double c) { return div(a, Tensor::scalar(c)); }

inline Tensor neg(const Tensor& a) { return mul(a, -1.0); }

inline Tensor exp(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::exp(x); },
        [](double, double y) { return y; }, "exp", true);
}
inline Tensor log(const Tensor& a) {
    for (double x : a.data())
        if (x <= 0.0) throw NumericDomainError("log: non-positive input");
    return detail::unary_op(
        a, [](double x) { return std::log(x); },
        [](double x, double) { return 1.0 / x; }, "log");
}
inline Tensor sqrt(const Tensor& a) {
    for (double x : a.data())
        if (x < 0.0) throw NumericDomainError("sqrt: negative input");
    return detail::unary_op(
        a, [](double x) { return std::sqrt(x); },
        [](double x, double y) { return x > 0.0 ? 0.5 / y : 0.0; }, "sqrt");
}
inline Tensor square(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return x * x; },
        [](double x, double) { return 2.0 * x; }, "square");
}
inline Tensor relu(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }, "relu");
}
inline Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return detail::unary_op(
        a, [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [=](double x, double) {
            return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) +
                   x * inv_sqrt2pi * std::exp(-0.5 * x * x);
        },
        "gelu");
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

enum class Reduce { Sum, Mean, Max };

inline Tensor reduce(Reduce op, const Tensor& a, std::vector<std::size_t> axes,
                     bool keepdim = false) {
    const Shape& as = a.shape();
    for (auto ax : axes)
        if (ax >= as.size())
            throw DimensionError("reduce: invalid axis " + std::to_string(ax) +
                                 " for shape " + shape_str(as));
    std::sort(axes.begin(), axes.end());
    axes.erase(std::unique(axes.begin(), axes.end()), axes.end());

    std::vector<bool> reduced(as.size(), false);
    for (auto ax : axes) reduced[ax] = true;

    Shape oshape_keep(as);
    std::size_t red_count = 1;
    for (auto ax : axes) {
        red_count *= as[ax];
        oshape_keep[ax] = 1;
    }
    Shape oshape;
    for (std::size_t d = 0; d < as.size(); ++d)
        if (!reduced[d]) oshape.push_back(as[d]);
    if (!keepdim && oshape.empty()) oshape = {}; // scalar

    const Shape ostrides_keep = row_major_strides(oshape_keep);
    const std::size_t n = a.size();
    const std::size_t onum = numel(oshape_keep);

    // map each input flat index to its output slot
    Tensor out(keepdim ? oshape_keep : oshape);
    auto& ov = out.data();
    if (op == Reduce::Max)
        std::fill(ov.begin(), ov.end(), -std::numeric_limits<double>::infinity());
    const auto& av = a.data();

    std::vector<std::size_t> argmax;
    if (op == Reduce::Max) argmax.assign(onum, std::size_t(-1));

    Shape idx(as.size(), 0);
    std::size_t oi = 0;
    for (std::size_t i = 0; i < n; ++i) {
        switch (op) {
            case Reduce::Sum:
            case Reduce::Mean:
                ov[oi] += av[i];
                break;
            case Reduce::Max:
                if (av[i] > ov[oi]) {
                    ov[oi] = av[i];
                    argmax[oi] = i;
                }
                break;
        }
        for (std::size_t d = as.size(); d-- > 0;) {
            ++idx[d];
            if (!reduced[d]) oi += ostrides_keep[d];
            if (idx[d] < as[d]) break;
            if (!reduced[d]) oi -= ostrides_keep[d] * as[d];
            idx[d] = 0;
        }
    }
    if (op == Reduce::Mean)
        for (auto& x : ov) x /= double(red_count);

    const bool rec = detail::recording({&a});
    detail::mark_output(out, rec);
    if (rec) {
        auto ap = a.impl(), opimpl = out.impl();
        const double scale = (op == Reduce::Mean) ? 1.0 / double(red_count) : 1.0;
        const Reduce kind = op;
        Tape::active()->record([ap, opimpl, reduced, ostrides_keep, scale, kind, argmax]() {
            ap->ensure_grad();
            const Shape& as2 = ap->shape;
            if (kind == Reduce::Max) {
                for (std::size_t o = 0; o < argmax.size(); ++o)
                    if (argmax[o] != std::size_t(-1)) ap->g[argmax[o]] += opimpl->g[o];
                return;
            }
            Shape idx2(as2.size(), 0);
            std::size_t oi2 = 0;
            for (std::size_t i = 0; i < ap->v.size(); ++i) {
                ap->g[i] += opimpl->g[oi2] * scale;
                for (std::size_t d = as2.size(); d-- > 0;) {
                    ++idx2[d];
                    if (!reduced[d]) oi2 += ostrides_keep[d];
                    if (idx2[d] < as2[d]) break;
                    if (!reduced[d]) oi2 -= ostrides_keep[d] * as2[d];
                    idx2[d] = 0;
                }
            }
        });
    }
    return out;
}

inline Tensor sum(const Tensor& a) {
    std::vector<std::size_t> axes(a.rank());
    std::iota(axes.begin(), axes.end(), 0);
    return reduce(Reduce::Sum, a, axes);
}
inline Tensor sum(const Tensor& a, std::vector<std::size_t> axes, bool keepdim = false) {
    return reduce(Reduce::Sum, a, std::move(axes), keepdim);
}
inline Tensor mean(const Tensor& a) {
    std::vector<std::size_t> axes(a.rank());
    std::iota(axes.begin(), axes.end(), 0);
    return reduce(Reduce::Mean, a, axes);
}
inline Tensor mean(const Tensor& a, std::vector<std::size_t> axes, bool keepdim = false) {
    return reduce(Reduce::Mean, a, std::move(axes), keepdim);
}
inline Tensor max(const Tensor& a, std::vector<std::size_t> axes, bool keepdim = false) {
    return reduce(Reduce::Max, a, std::move(axes), keepdim);
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape new_shape) {
    if (numel(new_shape) != a.size())
        throw DimensionError("reshape: element count mismatch " + shape_str(a.shape()) +
                             " -> " + shape_str(new_shape));
    Tensor out(new_shape, a.data());
    const bool rec = detail::recording({&a});
    detail::mark_output(out, rec);
    if (rec) {
        auto ap = a.impl(), op = out.impl();
        Tape::active()->record([ap, op]() {
            ap->ensure_grad();
            for (std::size_t i = 0; i < ap->g.size(); ++i) ap->g[i] += op->g[i];
        });
    }
    return out;
}

inline Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm) {
    const Shape& as = a.shape();
    if (perm.size() != as.size()) throw DimensionError("permute: rank mismatch");
    Shape oshape(perm.size());
    for (std::size_t d = 0; d < perm.size(); ++d) oshape[d] = as.at(perm[d]);

    const Shape astr = row_major_strides(as);
    const std::size_t n = a.size();

    // out flat index -> in flat index
    std::vector<std::size_t> src(n);
    Shape oidx(oshape.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t ai = 0;
        for (std::size_t d = 0; d < perm.size(); ++d) ai += oidx[d] * astr[perm[d]];
        src[i] = ai;
        for (std::size_t d = oshape.size(); d-- > 0;) {
            if (++oidx[d] < oshape[d]) break;
            oidx[d] = 0;
        }
    }

    Tensor out(oshape);
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < n; ++i) ov[i] = av[src[i]];

    const bool rec = detail::recording({&a});
    detail::mark_output(out, rec);
    if (rec) {
        auto ap = a.impl(), op = out.impl();
        Tape::active()->record([ap, op, src = std::move(src)]() {
            ap->ensure_grad();
            for (std::size_t i = 0; i < src.size(); ++i) ap->g[src[i]] += op->g[i];
        });
    }
    return out;
}

// GRID (B,C,H,W) -> SEQ (B, H*W, C); token n = h*W + w carries channel vector.
inline Tensor grid_to_seq(const Tensor& a) {
    if (a.rank() != 4) throw DimensionError("grid_to_seq: expected rank-4 GRID tensor");
    const Shape& s = a.shape();
    Tensor p = permute(a, {0, 2, 3, 1}); // (B,H,W,C)
    return reshape(p, {s[0], s[2] * s[3], s[1]});
}

// SEQ (B, H*W, C) -> GRID (B,C,H,W)
inline Tensor seq_to_grid(const Tensor& a, std::size_t H, std::size_t W) {
    if (a.rank() != 3 || a.extent(1) != H * W)
        throw DimensionError("seq_to_grid: shape mismatch");
    Tensor r = reshape(a, {a.extent(0), H, W, a.extent(2)});
    return permute(r, {0, 3, 1, 2});
}

// ---------------------------------------------------------------------------
// Matmul
// ---------------------------------------------------------------------------

namespace detail {

// c[m,n] += (transA ? a^T : a) * (transB ? b^T : b), plain row-major panels
inline void gemm_acc(const double* a, const double* b, double* c, std::size_t m,
                     std::size_t k, std::size_t n, bool transA, bool transB) {
    if (!transA && !transB) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                const double av = a[i * k + p];
                if (av == 0.0) continue;
                const double* brow = b + p * n;
                double* crow = c + i * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
    } else if (transA && !transB) { // a is (k,m)
        for (std::size_t p = 0; p < k; ++p)
            for (std::size_t i = 0; i < m; ++i) {
                const double av = a[p * m + i];
                if (av == 0.0) continue;
                const double* brow = b + p * n;
                double* crow = c + i * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
    } else if (!transA && transB) { // b is (n,k)
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                const double* arow = a + i * k;
                const double* brow = b + j * k;
                for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
                c[i * n + j] += acc;
            }
    } else {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[j * k + p];
                c[i * n + j] += acc;
            }
    }
}

} // namespace detail

// a: (..., m, k); b: (k, n) shared or (..., k, n) with identical batch dims.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() < 2 || bs.size() < 2)
        throw DimensionError("matmul: operands must have rank >= 2, got " +
                             shape_str(as) + " x " + shape_str(bs));
    const std::size_t m = as[as.size() - 2], k = as[as.size() - 1];
    const std::size_t bk = bs[bs.size() - 2], n = bs[bs.size() - 1];
    if (k != bk)
        throw DimensionError("matmul: inner extent mismatch " + shape_str(as) + " x " +
                             shape_str(bs));
    const bool shared_b = (bs.size() == 2);
    if (!shared_b && Shape(as.begin(), as.end() - 2) != Shape(bs.begin(), bs.end() - 2))
        throw DimensionError("matmul: batch extents differ " + shape_str(as) + " x " +
                             shape_str(bs));

    std::size_t batch = 1;
    for (std::size_t d = 0; d + 2 < as.size(); ++d) batch *= as[d];

    Shape oshape(as.begin(), as.end() - 2);
    oshape.push_back(m);
    oshape.push_back(n);
    Tensor out(oshape);

    const double* ad = a.data().data();
    const double* bd = b.data().data();
    double* od = out.data().data();
    for (std::size_t bt = 0; bt < batch; ++bt)
        detail::gemm_acc(ad + bt * m * k, shared_b ? bd : bd + bt * k * n,
                         od + bt * m * n, m, k, n, false, false);

    const bool rec = detail::recording({&a, &b});
    detail::mark_output(out, rec);
    if (rec) {
        auto ap = a.impl(), bp = b.impl(), op = out.impl();
        const bool aneeds = a.grad_path(), bneeds = b.grad_path();
        Tape::active()->record([ap, bp, op, m, k, n, batch, shared_b, aneeds, bneeds]() {
            const double* gv = op->g.data();
            if (aneeds) {
                ap->ensure_grad();
                for (std::size_t bt = 0; bt < batch; ++bt)
                    detail::gemm_acc(gv + bt * m * n,
                                     shared_b ? bp->v.data() : bp->v.data() + bt * k * n,
                                     ap->g.data() + bt * m * k, m, n, k, false, true);
            }
            if (bneeds) {
                bp->ensure_grad();
                for (std::size_t bt = 0; bt < batch; ++bt)
                    detail::gemm_acc(ap->v.data() + bt * m * k, gv + bt * m * n,
                                     shared_b ? bp->g.data() : bp->g.data() + bt * k * n,
                                     k, m, n, true, false);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

inline void backward(const Tensor& loss) {
    if (loss.size() != 1)
        throw DimensionError("backward: loss must be scalar, got " +
                             shape_str(loss.shape()));
    Tape* t = Tape::active();
    if (!t) throw std::logic_error("backward: no active tape");
    loss.impl()->ensure_grad();
    loss.impl()->g[0] = 1.0;
    t->replay_backward();
}

// ---------------------------------------------------------------------------
// Composite nn helpers
// ---------------------------------------------------------------------------

// log-softmax along the last axis, max-shifted for stability
inline Tensor log_softmax(const Tensor& z) {
    const std::size_t last = z.rank() - 1;
    Tensor m = max(z, {last}, true).detach();
    Tensor zs = sub(z, m);
    Tensor lse = log(sum(exp(zs), {last}, true));
    return sub(zs, lse);
}

inline Tensor softmax(const Tensor& z) { return exp(log_softmax(z)); }

// layer norm over the last axis with optional affine (gamma/beta over last axis)
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-10) {
    const std::size_t last = x.rank() - 1;
    Tensor mu = mean(x, {last}, true);
    Tensor xc = sub(x, mu);
    Tensor var = mean(square(xc), {last}, true);
    Tensor y = div(xc, sqrt(add(var, eps)));
    return add(mul(y, gamma), beta);
}

inline Tensor layer_norm(const Tensor& x, double eps = 1e-10) {
    const std::size_t last = x.rank() - 1;
    Tensor mu = mean(x, {last}, true);
    Tensor xc = sub(x, mu);
    Tensor var = mean(square(xc), {last}, true);
    return div(xc, sqrt(add(var, eps)));
}

// ---------------------------------------------------------------------------
// conv2d (stride s, zero padding p), direct loops with hand-rolled backward
// ---------------------------------------------------------------------------

// x: (B, Cin, H, W); w: (Cout, Cin, Kh, Kw); b: (Cout)
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                     std::size_t stride, std::size_t pad) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1])
        throw DimensionError("conv2d: shape mismatch " + shape_str(xs) + " w " +
                             shape_str(ws));
    const std::size_t B = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
    const std::size_t Cout = ws[0], Kh = ws[2], Kw = ws[3];
    const std::size_t Ho = (H + 2 * pad - Kh) / stride + 1;
    const std::size_t Wo = (W + 2 * pad - Kw) / stride + 1;

    Tensor out({B, Cout, Ho, Wo});
    const auto& xv = x.data();
    const auto& wv = w.data();
    const auto& bv = b.data();
    auto& ov = out.data();

    for (std::size_t bb = 0; bb < B; ++bb)
        for (std::size_t co = 0; co < Cout; ++co)
            for (std::size_t oy = 0; oy < Ho; ++oy)
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                    double acc = bv[co];
                    for (std::size_t ci = 0; ci < Cin; ++ci)
                        for (std::size_t ky = 0; ky < Kh; ++ky) {
                            const long iy = long(oy * stride + ky) - long(pad);
                            if (iy < 0 || iy >= long(H)) continue;
                            for (std::size_t kx = 0; kx < Kw; ++kx) {
                                const long ix = long(ox * stride + kx) - long(pad);
                                if (ix < 0 || ix >= long(W)) continue;
                                acc += xv[((bb * Cin + ci) * H + iy) * W + ix] *
                                       wv[((co * Cin + ci) * Kh + ky) * Kw + kx];
                            }
                        }
                    ov[((bb * Cout + co) * Ho + oy) * Wo + ox] = acc;
                }

    const bool rec = detail::recording({&x, &w, &b});
    detail::mark_output(out, rec);
    if (rec) {
        auto xp = x.impl(), wp = w.impl(), bp = b.impl(), op = out.impl();
        const bool xg = x.grad_path(), wg = w.grad_path(), bg = b.grad_path();
        Tape::active()->record([=]() {
            if (xg) xp->ensure_grad();
            if (wg) wp->ensure_grad();
            if (bg) bp->ensure_grad();
            const auto& gv = op->g;
            for (std::size_t bb = 0; bb < B; ++bb)
                for (std::size_t co = 0; co < Cout; ++co)
                    for (std::size_t oy = 0; oy < Ho; ++oy)
                        for (std::size_t ox = 0; ox < Wo; ++ox) {
                            const double g = gv[((bb * Cout + co) * Ho + oy) * Wo + ox];
                            if (g == 0.0) continue;
                            if (bg) bp->g[co] += g;
                            for (std::size_t ci = 0; ci < Cin; ++ci)
                                for (std::size_t ky = 0; ky < Kh; ++ky) {
                                    const long iy = long(oy * stride + ky) - long(pad);
                                    if (iy < 0 || iy >= long(H)) continue;
                                    for (std::size_t kx = 0; kx < Kw; ++kx) {
                                        const long ix =
                                            long(ox * stride + kx) - long(pad);
                                        if (ix < 0 || ix >= long(W)) continue;
                                        const std::size_t xi =
                                            ((bb * Cin + ci) * H + iy) * W + ix;
                                        const std::size_t wi =
                                            ((co * Cin + ci) * Kh + ky) * Kw + kx;
                                        if (xg) xp->g[xi] += g * wp->v[wi];
                                        if (wg) wp->g[wi] += g * xp->v[xi];
                                    }
                                }
                        }
        });
    }
    return out;
}

} // namespace uhkd

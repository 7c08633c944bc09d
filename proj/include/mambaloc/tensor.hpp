#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mambaloc/rng.hpp"

namespace mambaloc {

class ShapeError : public std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
class ValueError : public std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
class ConfigError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};
class DependencyError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};
class IoError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << " x ";
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

/// Global toggle for NaN/Inf assertions on op outputs. Off by default;
/// tests and the verification CLI turn it on.
inline bool& finite_checks() {
    static bool enabled = false;
    return enabled;
}

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad; // empty until gradient first flows
    bool requires_grad = false;
};

template <typename T>
class Tape;

/// Dense row-major tensor, value-semantics handle over a shared node.
/// Data is immutable once an op has consumed the tensor; only the grad
/// slot and explicit leaf mutation (optimizer steps, finite differences)
/// write after creation.
template <typename T>
class Tensor {
public:
    using Node = TensorNode<T>;

    Tensor() : node_(std::make_shared<Node>()) {}

    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
        : node_(std::make_shared<Node>()) {
        if (shape_numel(shape) != data.size()) {
            throw ShapeError("tensor: shape " + shape_str(shape) + " wants " +
                             std::to_string(shape_numel(shape)) +
                             " elements, got " + std::to_string(data.size()));
        }
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }

    static Tensor ones(Shape shape, bool requires_grad = false) {
        std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, T(1)), requires_grad);
    }

    static Tensor full(Shape shape, T v, bool requires_grad = false) {
        std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, v), requires_grad);
    }

    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    /// Uniform init in (-bound, bound), deterministic from rng.
    static Tensor uniform(Shape shape, Rng& rng, T bound, bool requires_grad = false) {
        std::size_t n = shape_numel(shape);
        std::vector<T> d(n);
        for (auto& v : d) v = static_cast<T>(rng.uniform(-double(bound), double(bound)));
        return Tensor(std::move(shape), std::move(d), requires_grad);
    }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->data.size(); }

    /// Row/col view: rank-1 tensors are treated as a single row.
    std::size_t rows() const {
        return rank() <= 1 ? 1 : shape_numel(node_->shape) / node_->shape.back();
    }
    std::size_t cols() const { return rank() == 0 ? 0 : node_->shape.back(); }

    std::vector<T>& data() { return node_->data; }
    const std::vector<T>& data() const { return node_->data; }
    std::vector<T>& grad() { return node_->grad; }
    const std::vector<T>& grad() const { return node_->grad; }

    T at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }
    T item() const {
        if (numel() != 1) {
            throw ShapeError("item: tensor is not scalar, shape " + shape_str(shape()));
        }
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    /// Allocates (if needed) and fills the grad slot with zeros.
    void zero_grad() { node_->grad.assign(node_->data.size(), T(0)); }

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

template <typename T>
inline void ensure_grad(TensorNode<T>& n) {
    if (n.grad.empty()) n.grad.assign(n.data.size(), T(0));
}

template <typename T>
inline void check_finite(const Tensor<T>& t, const char* op) {
    if (!finite_checks()) return;
    for (T v : t.data()) {
        if (!std::isfinite(double(v))) {
            throw ValueError(std::string("non-finite value produced by ") + op);
        }
    }
}

} // namespace detail

/// Ordered record of executed operations. Backward walks the record in
/// exact reverse execution order; gradients of repeated uses accumulate
/// additively. Gradients already sitting on leaf tensors (parameters,
/// inputs) are never cleared here -- zeroing is the caller's explicit job.
template <typename T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape*& active() {
        thread_local Tape* current = nullptr;
        return current;
    }

    void record(std::shared_ptr<TensorNode<T>> out, std::function<void()> backward_fn) {
        outputs_.push_back(std::move(out));
        fns_.push_back(std::move(backward_fn));
    }

    std::size_t size() const { return fns_.size(); }
    bool empty() const { return fns_.empty(); }

    void clear() {
        outputs_.clear();
        fns_.clear();
    }

    /// Seeds d(loss)/d(loss) = 1 and propagates through every recorded
    /// op in reverse. Grads of op outputs are reset per call so repeated
    /// backward calls accumulate only into leaves.
    void backward(const Tensor<T>& loss) {
        if (loss.numel() != 1) {
            throw ShapeError("backward: loss must be scalar, got shape " +
                             shape_str(loss.shape()));
        }
        if (fns_.empty()) {
            throw ValueError("backward: tape is empty");
        }
        for (auto& n : outputs_) {
            if (!n->grad.empty()) std::fill(n->grad.begin(), n->grad.end(), T(0));
        }
        detail::ensure_grad(*loss.node());
        loss.node()->grad[0] += T(1);
        for (auto it = fns_.rbegin(); it != fns_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::shared_ptr<TensorNode<T>>> outputs_;
    std::vector<std::function<void()>> fns_;
};

/// RAII activation of a tape on the current thread. Ops record onto the
/// innermost active tape; with no scope active they run forward-only.
template <typename T>
class TapeScope {
public:
    TapeScope() : previous_(Tape<T>::active()) { Tape<T>::active() = &tape_; }
    ~TapeScope() { Tape<T>::active() = previous_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

    Tape<T>& tape() { return tape_; }

private:
    Tape<T> tape_;
    Tape<T>* previous_;
};

namespace detail {

template <typename T>
inline bool recording(std::initializer_list<const Tensor<T>*> inputs) {
    if (Tape<T>::active() == nullptr) return false;
    for (const Tensor<T>* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

template <typename T>
inline Tensor<T> make_result(Shape shape, std::vector<T> data, bool recorded) {
    Tensor<T> out(std::move(shape), std::move(data), recorded);
    return out;
}

// Dense kernels. Row-major throughout; the ikj order keeps the inner
// loop contiguous in both operands.

template <typename T>
void mm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    std::fill(c, c + m * n, T(0));
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            const T* brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m x k] += a[m x n] * b^T, with b stored [k x n]
template <typename T>
void mm_nt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * n;
        T* crow = c + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T* brow = b + kk * n;
            T acc = T(0);
            for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
            crow[kk] += acc;
        }
    }
}

// c[k x n] += a^T * b, with a stored [m x k], b stored [m x n]
template <typename T>
void mm_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            if (av == T(0)) continue;
            T* crow = c + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
inline T stable_sigmoid(T x) {
    if (x >= T(0)) {
        return T(1) / (T(1) + std::exp(-x));
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
inline T stable_softplus(T x) {
    if (x > T(0)) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

// phi(z) = expm1(z)/z, the zero-order-hold input factor; phi(0) = 1.
template <typename T>
inline T zoh_phi_value(T z) {
    if (std::abs(double(z)) < 1e-4) {
        return T(1) + z / T(2) + z * z / T(6);
    }
    return std::expm1(z) / z;
}

template <typename T>
inline T zoh_phi_derivative(T z) {
    if (std::abs(double(z)) < 1e-4) {
        return T(0.5) + z / T(3) + z * z / T(8);
    }
    const T ez = std::exp(z);
    return (ez * (z - T(1)) + T(1)) / (z * z);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "add");
    std::vector<T> out(a.numel());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
    const bool rec = detail::recording<T>({&a, &b});
    Tensor<T> y = detail::make_result(a.shape(), std::move(out), rec);
    if (rec) {
        auto an = a.node(), bn = b.node(), yn = y.node();
        Tape<T>::active()->record(yn, [an, bn, yn] {
            if (yn->grad.empty()) return;
            if (an->requires_grad) {
                detail::ensure_grad(*an);
                for (std::size_t i = 0; i < yn->grad.size(); ++i) an->grad[i] += yn->grad[i];
            }
            if (bn->requires_grad) {
                detail::ensure_grad(*bn);
                for (std::size_t i = 0; i < yn->grad.size(); ++i) bn->grad[i] += yn->grad[i];
            }
        });
    }
    detail::check_finite(y, "add");
    return y;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "sub");
    std::vector<T> out(a.numel());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
    const bool rec = detail::recording<T>({&a, &b});
    Tensor<T> y = detail::make_result(a.shape(), std::move(out), rec);
    if (rec) {
        auto an = a.node(), bn = b.node(), yn = y.node();
        Tape<T>::active()->record(yn, [an, bn, yn] {
            if (yn->grad.empty()) return;
            if (an->requires_grad) {
                detail::ensure_grad(*an);
                for (std::size_t i = 0; i < yn->grad.size(); ++i) an->grad[i] += yn->grad[i];
            }
            if (bn->requires_grad) {
                detail::ensure_grad(*bn);
                for (std::size_t i = 0; i < yn->grad.size(); ++i) bn->grad[i] -= yn->grad[i];
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "mul");
    std::vector<T> out(a.numel());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
    const bool rec = detail::recording<T>({&a, &b});
    Tensor<T> y = detail::make_result(a.shape(), std::move(out), rec);
    if (rec) {
        auto an = a.node(), bn = b.node(), yn = y.node();
        Tape<T>::active()->record(yn, [an, bn, yn] {
            if (yn->grad.empty()) return;
            if (an->requires_grad) {
                detail::ensure_grad(*an);
                for (std::size_t i = 0; i < yn->grad.size(); ++i)
                    an->grad[i] += yn->grad[i] * bn->data[i];
            }
            if (bn->requires_grad) {
                detail::ensure_grad(*bn);
                for (std::size_t i = 0; i < yn->grad.size(); ++i)
                    bn->grad[i] += yn->grad[i] * an->data[i];
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    std::vector<T> out(a.numel());
    const auto& ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * c;
    const bool rec = detail::recording<T>({&a});
    Tensor<T> y = detail::make_result(a.shape(), std::move(out), rec);
    if (rec) {
        auto an = a.node();
        auto yn = y.node();
        Tape<T>::active()->record(yn, [an, yn, c] {
            if (yn->grad.empty() || !an->requires_grad) return;
            detail::ensure_grad(*an);
            for (std::size_t i = 0; i < yn->grad.size(); ++i) an->grad[i] += yn->grad[i] * c;
        });
    }
    return y;
}

namespace detail {

template <typename T>
inline void check_rowvec(const Tensor<T>& x, const Tensor<T>& v, const char* op) {
    if (v.numel() != x.cols() || v.rows() != 1) {
        throw ShapeError(std::string(op) + ": vector shape " + shape_str(v.shape()) +
                         " does not match row width of " + shape_str(x.shape()));
    }
}

} // namespace detail

/// x[R x C] + v[1 x C] broadcast over rows.
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
    detail::check_rowvec(x, v, "add_rowvec");
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<T> out(x.numel());
    const auto& xd = x.data();
    const auto& vd = v.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xd[i * c + j] + vd[j];
    const bool rec = detail::recording<T>({&x, &v});
    Tensor<T> y = detail::make_result(x.shape(), std::move(out), rec);
    if (rec) {
        auto xn = x.node(), vn = v.node(), yn = y.node();
        Tape<T>::active()->record(yn, [xn, vn, yn, r, c] {
            if (yn->grad.empty()) return;
            if (xn->requires_grad) {
                detail::ensure_grad(*xn);
                for (std::size_t i = 0; i < r * c; ++i) xn->grad[i] += yn->grad[i];
            }
            if (vn->requires_grad) {
                detail::ensure_grad(*vn);
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) vn->grad[j] += yn->grad[i * c + j];
            }
        });
    }
    return y;
}

/// x[R x C] * v[1 x C] broadcast over rows.
template <typename T>
Tensor<T> mul_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
    detail::check_rowvec(x, v, "mul_rowvec");
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<T> out(x.numel());
    const auto& xd = x.data();
    const auto& vd = v.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xd[i * c + j] * vd[j];
    const bool rec = detail::recording<T>({&x, &v});
    Tensor<T> y = detail::make_result(x.shape(), std::move(out), rec);
    if (rec) {
        auto xn = x.node(), vn = v.node(), yn = y.node();
        Tape<T>::active()->record(yn, [xn, vn, yn, r, c] {
            if (yn->grad.empty()) return;
            if (xn->requires_grad) {
                detail::ensure_grad(*xn);
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                        xn->grad[i * c + j] += yn->grad[i * c + j] * vn->data[j];
            }
            if (vn->requires_grad) {
                detail::ensure_grad(*vn);
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                        vn->grad[j] += yn->grad[i * c + j] * xn->data[i * c + j];
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeError("matmul: operands must be rank 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    }
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    const std::size_t k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2) {
        throw ShapeError("matmul: inner extents disagree, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
    }
    std::vector<T> out(m * n);
    detail::mm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    const bool rec = detail::recording<T>({&a, &b});
    Tensor<T> y = detail::make_result({m, n}, std::move(out), rec);
    if (rec) {
        auto an = a.node(), bn = b.node(), yn = y.node();
        Tape<T>::active()->record(yn, [an, bn, yn, m, k, n] {
            if (yn->grad.empty()) return;
            if (an->requires_grad) {
                detail::ensure_grad(*an);
                // dA += dY * B^T
                detail::mm_nt_acc(yn->grad.data(), bn->data.data(), an->grad.data(), m, n, k);
            }
            if (bn->requires_grad) {
                detail::ensure_grad(*bn);
                // dB += A^T * dY
                detail::mm_tn_acc(an->data.data(), yn->grad.data(), bn->grad.data(), m, k, n);
            }
        });
    }
    detail::check_finite(y, "matmul");
    return y;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    if (a.rank() != 2) {
        throw ShapeError("transpose: rank-2 required, got " + shape_str(a.shape()));
    }
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    std::vector<T> out(r * c);
    const auto& ad = a.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = ad[i * c + j];
    const bool rec = detail::recording<T>({&a});
    Tensor<T> y = detail::make_result({c, r}, std::move(out), rec);
    if (rec) {
        auto an = a.node();
        auto yn = y.node();
        Tape<T>::active()->record(yn, [an, yn, r, c] {
            if (yn->grad.empty() || !an->requires_grad) return;
            detail::ensure_grad(*an);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += yn->grad[j * r + i];
        });
    }
    return y;
}

/// Same data, new shape (element count preserved).
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
    }
    std::vector<T> out = a.data();
    const bool rec = detail::recording<T>({&a});
    Tensor<T> y = detail::make_result(std::move(shape), std::move(out), rec);
    if (rec) {
        auto an = a.node();
        auto yn = y.node();
        Tape<T>::active()->record(yn, [an, yn] {
            if (yn->grad.empty() || !an->requires_grad) return;
            detail::ensure_grad(*an);
            for (std::size_t i = 0; i < yn->grad.size(); ++i) an->grad[i] += yn->grad[i];
        });
    }
    return y;
}

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_elementwise(const Tensor<T>& a, Fwd f, Bwd dfdx, const char* name) {
    std::vector<T> out(a.numel());
    const auto& ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(ad[i]);
    const bool rec = detail::recording<T>({&a});
    Tensor<T> y = detail::make_result(a.shape(), std::move(out), rec);
    if (rec) {
        auto an = a.node();
        auto yn = y.node();
        Tape<T>::active()->record(yn, [an, yn, dfdx] {
            if (yn->grad.empty() || !an->requires_grad) return;
            detail::ensure_grad(*an);
            for (std::size_t i = 0; i < yn->grad.size(); ++i)
                an->grad[i] += yn->grad[i] * dfdx(an->data[i], yn->data[i]);
        });
    }
    detail::check_finite(y, name);
    return y;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
    return unary_elementwise(
        a, [](T x) { return x * detail::stable_sigmoid(x); },
        [](T x, T) {
            const T s = detail::stable_sigmoid(x);
            return s * (T(1) + x * (T(1) - s));
        },
        "silu");
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return unary_elementwise(
        a, [](T x) { return detail::stable_sigmoid(x); },
        [](T, T y) { return y * (T(1) - y); }, "sigmoid");
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
    return unary_elementwise(
        a, [](T x) { return detail::stable_softplus(x); },
        [](T x, T) { return detail::stable_sigmoid(x); }, "softplus");
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
    return unary_elementwise(
        a, [](T x) { return std::exp(x); }, [](T, T y) { return y; }, "exp");
}

/// expm1(z)/z, the ZOH input-coupling factor; smooth continuation 1 at z=0.
template <typename T>
Tensor<T> zoh_phi(const Tensor<T>& a) {
    return unary_elementwise(
        a, [](T x) { return detail::zoh_phi_value(x); },
        [](T x, T) { return detail::zoh_phi_derivative(x); }, "zoh_phi");
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
    return unary_elementwise(
        a, [](T x) { return std::sqrt(x); },
        [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); }, "sqrt");
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
    return unary_elementwise(
        a, [lo, hi](T x) { return std::min(hi, std::max(lo, x)); },
        [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); }, "clamp");
}

// ---------------------------------------------------------------------------
// Row-structured ops (last axis treated as the feature axis)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
    if (a.rank() == 0 || a.cols() == 0) {
        throw ShapeError("softmax: empty last axis in " + shape_str(a.shape()));
    }
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<T> out(a.numel());
    const auto& ad = a.data();
    for (std::size_t i = 0; i < r; ++i) {
        const T* row = ad.data() + i * c;
        T m = row[0];
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
        T sum = T(0);
        for (std::size_t j = 0; j < c; ++j) {
            out[i * c + j] = std::exp(row[j] - m);
            sum += out[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= sum;
    }
    const bool rec = detail::recording<T>({&a});
    Tensor<T> y = detail::make_result(a.shape(), std::move(out), rec);
    if (rec) {
        auto an = a.node();
        auto yn = y.node();
        Tape<T>::active()->record(yn, [an, yn, r, c] {
            if (yn->grad.empty() || !an->requires_grad) return;
            detail::ensure_grad(*an);
            for (std::size_t i = 0; i < r; ++i) {
                const T* yrow = yn->data.data() + i * c;
                const T* grow = yn->grad.data() + i * c;
                T dot = T(0);
                for (std::size_t j = 0; j < c; ++j) dot += grow[j] * yrow[j];
                for (std::size_t j = 0; j < c; ++j)
                    an->grad[i * c + j] += (grow[j] - dot) * yrow[j];
            }
        });
    }
    detail::check_finite(y, "softmax");
    return y;
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& a) {
    if (a.rank() == 0 || a.cols() == 0) {
        throw ShapeError("log_softmax: empty last axis in " + shape_str(a.shape()));
    }
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<T> out(a.numel());
    const auto& ad = a.data();
    for (std::size_t i = 0; i < r; ++i) {
        const T* row = ad.data() + i * c;
        T m = row[0];
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
        T sum = T(0);
        for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - m);
        const T lse = m + std::log(sum);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lse;
    }
    const bool rec = detail::recording<T>({&a});
    Tensor<T> y = detail::make_result(a.shape(), std::move(out), rec);
    if (rec) {
        auto an = a.node();
        auto yn = y.node();
        Tape<T>::active()->record(yn, [an, yn, r, c] {
            if (yn->grad.empty() || !an->requires_grad) return;
            detail::ensure_grad(*an);
            for (std::size_t i = 0; i < r; ++i) {
                const T* yrow = yn->data.data() + i * c;
                const T* grow = yn->grad.data() + i * c;
                T gsum = T(0);
                for (std::size_t j = 0; j < c; ++j) gsum += grow[j];
                for (std::size_t j = 0; j < c; ++j)
                    an->grad[i * c + j] += grow[j] - std::exp(yrow[j]) * gsum;
            }
        });
    }
    return y;
}

/// Per-last-axis standardization followed by the gamma/beta affine.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps) {
    const std::size_t c = x.cols();
    if (c == 0) throw ShapeError("layer_norm: empty last axis");
    if (eps <= T(0)) throw ValueError("layer_norm: eps must be positive");
    if (gamma.numel() != c || beta.numel() != c) {
        throw ShapeError("layer_norm: gamma/beta size must match last axis " +
                         std::to_string(c));
    }
    const std::size_t r = x.rows();
    std::vector<T> out(x.numel());
    std::vector<T> xhat(x.numel());
    std::vector<T> inv(r);
    const auto& xd = x.data();
    const auto& gd = gamma.data();
    const auto& bd = beta.data();
    for (std::size_t i = 0; i < r; ++i) {
        const T* row = xd.data() + i * c;
        T mean = T(0);
        for (std::size_t j = 0; j < c; ++j) mean += row[j];
        mean /= T(c);
        T var = T(0);
        for (std::size_t j = 0; j < c; ++j) {
            const T d = row[j] - mean;
            var += d * d;
        }
        var /= T(c);
        const T istd = T(1) / std::sqrt(var + eps);
        inv[i] = istd;
        for (std::size_t j = 0; j < c; ++j) {
            const T xh = (row[j] - mean) * istd;
            xhat[i * c + j] = xh;
            out[i * c + j] = gd[j] * xh + bd[j];
        }
    }
    const bool rec = detail::recording<T>({&x, &gamma, &beta});
    Tensor<T> y = detail::make_result(x.shape(), std::move(out), rec);
    if (rec) {
        auto xn = x.node(), gn = gamma.node(), bn = beta.node(), yn = y.node();
        Tape<T>::active()->record(
            yn, [xn, gn, bn, yn, r, c, xhat = std::move(xhat), inv = std::move(inv)] {
                if (yn->grad.empty()) return;
                for (std::size_t i = 0; i < r; ++i) {
                    const T* grow = yn->grad.data() + i * c;
                    const T* xh = xhat.data() + i * c;
                    if (xn->requires_grad) {
                        detail::ensure_grad(*xn);
                        T m1 = T(0), m2 = T(0);
                        for (std::size_t j = 0; j < c; ++j) {
                            const T dxh = grow[j] * gn->data[j];
                            m1 += dxh;
                            m2 += dxh * xh[j];
                        }
                        m1 /= T(c);
                        m2 /= T(c);
                        for (std::size_t j = 0; j < c; ++j) {
                            const T dxh = grow[j] * gn->data[j];
                            xn->grad[i * c + j] += (dxh - m1 - xh[j] * m2) * inv[i];
                        }
                    }
                    if (gn->requires_grad) {
                        detail::ensure_grad(*gn);
                        for (std::size_t j = 0; j < c; ++j) gn->grad[j] += grow[j] * xh[j];
                    }
                    if (bn->requires_grad) {
                        detail::ensure_grad(*bn);
                        for (std::size_t j = 0; j < c; ++j) bn->grad[j] += grow[j];
                    }
                }
            });
    }
    detail::check_finite(y, "layer_norm");
    return y;
}

/// Per-channel 1-D convolution of x[L x d] with kernel[w x d];
/// y[t][ch] = sum_j kernel[j][ch] * x[t-j][ch] (j is the lag).
/// Causal mode pads w-1 zeros on the left; otherwise padding is centred
/// so the output length stays L either way.
template <typename T>
Tensor<T> depthwise_conv1d(const Tensor<T>& x, const Tensor<T>& kernel,
                           bool causal_left_pad = true) {
    if (x.rank() != 2 || kernel.rank() != 2) {
        throw ShapeError("depthwise_conv1d: rank-2 operands required");
    }
    const std::size_t len = x.shape()[0], d = x.shape()[1];
    const std::size_t w = kernel.shape()[0];
    if (kernel.shape()[1] != d) {
        throw ShapeError("depthwise_conv1d: kernel channels " +
                         std::to_string(kernel.shape()[1]) + " != input channels " +
                         std::to_string(d));
    }
    if (w == 0) throw ShapeError("depthwise_conv1d: empty kernel");
    // Lag offset: causal aligns lag 0 with the current step; centred mode
    // shifts lags so the kernel straddles the step.
    const std::ptrdiff_t off = causal_left_pad ? 0 : static_cast<std::ptrdiff_t>((w - 1) / 2);
    std::vector<T> out(x.numel(), T(0));
    const auto& xd = x.data();
    const auto& kd = kernel.data();
    for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t j = 0; j < w; ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) -
                                       static_cast<std::ptrdiff_t>(j) + off;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
            const T* xrow = xd.data() + static_cast<std::size_t>(src) * d;
            const T* krow = kd.data() + j * d;
            T* orow = out.data() + t * d;
            for (std::size_t ch = 0; ch < d; ++ch) orow[ch] += krow[ch] * xrow[ch];
        }
    }
    const bool rec = detail::recording<T>({&x, &kernel});
    Tensor<T> y = detail::make_result(x.shape(), std::move(out), rec);
    if (rec) {
        auto xn = x.node(), kn = kernel.node(), yn = y.node();
        Tape<T>::active()->record(yn, [xn, kn, yn, len, d, w, off] {
            if (yn->grad.empty()) return;
            if (xn->requires_grad) detail::ensure_grad(*xn);
            if (kn->requires_grad) detail::ensure_grad(*kn);
            for (std::size_t t = 0; t < len; ++t) {
                for (std::size_t j = 0; j < w; ++j) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) -
                                               static_cast<std::ptrdiff_t>(j) + off;
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                    const std::size_t s = static_cast<std::size_t>(src);
                    const T* grow = yn->grad.data() + t * d;
                    for (std::size_t ch = 0; ch < d; ++ch) {
                        if (xn->requires_grad)
                            xn->grad[s * d + ch] += kn->data[j * d + ch] * grow[ch];
                        if (kn->requires_grad)
                            kn->grad[j * d + ch] += xn->data[s * d + ch] * grow[ch];
                    }
                }
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Reductions, slicing, stacking
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    T s = T(0);
    for (T v : a.data()) s += v;
    const bool rec = detail::recording<T>({&a});
    Tensor<T> y = detail::make_result(Shape{1}, std::vector<T>{s}, rec);
    if (rec) {
        auto an = a.node();
        auto yn = y.node();
        Tape<T>::active()->record(yn, [an, yn] {
            if (yn->grad.empty() || !an->requires_grad) return;
            detail::ensure_grad(*an);
            const T g = yn->grad[0];
            for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
        });
    }
    return y;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    return scale(sum_all(a), T(1) / T(a.numel()));
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& a) {
    const std::size_t r = a.rows(), c = a.cols();
    if (r == 0) throw ShapeError("mean_rows: no rows");
    std::vector<T> out(c, T(0));
    const auto& ad = a.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += ad[i * c + j];
    for (std::size_t j = 0; j < c; ++j) out[j] /= T(r);
    const bool rec = detail::recording<T>({&a});
    Tensor<T> y = detail::make_result({1, c}, std::move(out), rec);
    if (rec) {
        auto an = a.node();
        auto yn = y.node();
        Tape<T>::active()->record(yn, [an, yn, r, c] {
            if (yn->grad.empty() || !an->requires_grad) return;
            detail::ensure_grad(*an);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += yn->grad[j] / T(r);
        });
    }
    return y;
}

/// Coordinatewise max over rows; ties resolve to the lowest row index.
template <typename T>
Tensor<T> max_rows(const Tensor<T>& a) {
    const std::size_t r = a.rows(), c = a.cols();
    if (r == 0) throw ShapeError("max_rows: no rows");
    std::vector<T> out(c);
    std::vector<std::size_t> arg(c, 0);
    const auto& ad = a.data();
    for (std::size_t j = 0; j < c; ++j) out[j] = ad[j];
    for (std::size_t i = 1; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            const T v = ad[i * c + j];
            if (v > out[j]) {
                out[j] = v;
                arg[j] = i;
            }
        }
    }
    const bool rec = detail::recording<T>({&a});
    Tensor<T> y = detail::make_result({1, c}, std::move(out), rec);
    if (rec) {
        auto an = a.node();
        auto yn = y.node();
        Tape<T>::active()->record(yn, [an, yn, c, arg = std::move(arg)] {
            if (yn->grad.empty() || !an->requires_grad) return;
            detail::ensure_grad(*an);
            for (std::size_t j = 0; j < c; ++j) an->grad[arg[j] * c + j] += yn->grad[j];
        });
    }
    return y;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t r0, std::size_t r1) {
    const std::size_t r = a.rows(), c = a.cols();
    if (r0 >= r1 || r1 > r) {
        throw ShapeError("slice_rows: bad range [" + std::to_string(r0) + ", " +
                         std::to_string(r1) + ") for " + shape_str(a.shape()));
    }
    std::vector<T> out(a.data().begin() + static_cast<std::ptrdiff_t>(r0 * c),
                       a.data().begin() + static_cast<std::ptrdiff_t>(r1 * c));
    const bool rec = detail::recording<T>({&a});
    Tensor<T> y = detail::make_result({r1 - r0, c}, std::move(out), rec);
    if (rec) {
        auto an = a.node();
        auto yn = y.node();
        Tape<T>::active()->record(yn, [an, yn, r0, c] {
            if (yn->grad.empty() || !an->requires_grad) return;
            detail::ensure_grad(*an);
            for (std::size_t i = 0; i < yn->grad.size(); ++i)
                an->grad[r0 * c + i] += yn->grad[i];
        });
    }
    return y;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t c0, std::size_t c1) {
    const std::size_t r = a.rows(), c = a.cols();
    if (c0 >= c1 || c1 > c) {
        throw ShapeError("slice_cols: bad range for " + shape_str(a.shape()));
    }
    const std::size_t w = c1 - c0;
    std::vector<T> out(r * w);
    const auto& ad = a.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = ad[i * c + c0 + j];
    const bool rec = detail::recording<T>({&a});
    Tensor<T> y = detail::make_result({r, w}, std::move(out), rec);
    if (rec) {
        auto an = a.node();
        auto yn = y.node();
        Tape<T>::active()->record(yn, [an, yn, r, c, c0, w] {
            if (yn->grad.empty() || !an->requires_grad) return;
            detail::ensure_grad(*an);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    an->grad[i * c + c0 + j] += yn->grad[i * w + j];
        });
    }
    return y;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    const std::size_t c = parts[0].cols();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.cols() != c) throw ShapeError("concat_rows: column mismatch");
        total += p.rows();
    }
    std::vector<T> out;
    out.reserve(total * c);
    bool any_rg = false;
    for (const auto& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
        any_rg = any_rg || p.requires_grad();
    }
    const bool rec = Tape<T>::active() != nullptr && any_rg;
    Tensor<T> y = detail::make_result({total, c}, std::move(out), rec);
    if (rec) {
        std::vector<std::shared_ptr<TensorNode<T>>> nodes;
        nodes.reserve(parts.size());
        for (const auto& p : parts) nodes.push_back(p.node());
        auto yn = y.node();
        Tape<T>::active()->record(yn, [nodes = std::move(nodes), yn] {
            if (yn->grad.empty()) return;
            std::size_t offset = 0;
            for (const auto& n : nodes) {
                const std::size_t sz = n->data.size();
                if (n->requires_grad) {
                    detail::ensure_grad(*n);
                    for (std::size_t i = 0; i < sz; ++i) n->grad[i] += yn->grad[offset + i];
                }
                offset += sz;
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    const std::size_t r = parts[0].rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rows() != r) throw ShapeError("concat_cols: row mismatch");
        total += p.cols();
    }
    std::vector<T> out(r * total);
    bool any_rg = false;
    std::size_t coff = 0;
    for (const auto& p : parts) {
        const std::size_t pc = p.cols();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < pc; ++j)
                out[i * total + coff + j] = p.data()[i * pc + j];
        coff += pc;
        any_rg = any_rg || p.requires_grad();
    }
    const bool rec = Tape<T>::active() != nullptr && any_rg;
    Tensor<T> y = detail::make_result({r, total}, std::move(out), rec);
    if (rec) {
        std::vector<std::shared_ptr<TensorNode<T>>> nodes;
        std::vector<std::size_t> widths;
        for (const auto& p : parts) {
            nodes.push_back(p.node());
            widths.push_back(p.cols());
        }
        auto yn = y.node();
        Tape<T>::active()->record(
            yn, [nodes = std::move(nodes), widths = std::move(widths), yn, r, total] {
                if (yn->grad.empty()) return;
                std::size_t coff = 0;
                for (std::size_t k = 0; k < nodes.size(); ++k) {
                    const auto& n = nodes[k];
                    const std::size_t pc = widths[k];
                    if (n->requires_grad) {
                        detail::ensure_grad(*n);
                        for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < pc; ++j)
                                n->grad[i * pc + j] += yn->grad[i * total + coff + j];
                    }
                    coff += pc;
                }
            });
    }
    return y;
}

/// out[:, c*times + t] = x[:, c]  (each column repeated `times` times).
template <typename T>
Tensor<T> repeat_cols_interleave(const Tensor<T>& a, std::size_t times) {
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<T> out(r * c * times);
    const auto& ad = a.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            for (std::size_t t = 0; t < times; ++t)
                out[i * c * times + j * times + t] = ad[i * c + j];
    const bool rec = detail::recording<T>({&a});
    Tensor<T> y = detail::make_result({r, c * times}, std::move(out), rec);
    if (rec) {
        auto an = a.node();
        auto yn = y.node();
        Tape<T>::active()->record(yn, [an, yn, r, c, times] {
            if (yn->grad.empty() || !an->requires_grad) return;
            detail::ensure_grad(*an);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                    T acc = T(0);
                    for (std::size_t t = 0; t < times; ++t)
                        acc += yn->grad[i * c * times + j * times + t];
                    an->grad[i * c + j] += acc;
                }
        });
    }
    return y;
}

/// out[:, t*C + c] = x[:, c]  (whole block repeated `times` times).
template <typename T>
Tensor<T> tile_cols(const Tensor<T>& a, std::size_t times) {
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<T> out(r * c * times);
    const auto& ad = a.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t t = 0; t < times; ++t)
            for (std::size_t j = 0; j < c; ++j)
                out[i * c * times + t * c + j] = ad[i * c + j];
    const bool rec = detail::recording<T>({&a});
    Tensor<T> y = detail::make_result({r, c * times}, std::move(out), rec);
    if (rec) {
        auto an = a.node();
        auto yn = y.node();
        Tape<T>::active()->record(yn, [an, yn, r, c, times] {
            if (yn->grad.empty() || !an->requires_grad) return;
            detail::ensure_grad(*an);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                    T acc = T(0);
                    for (std::size_t t = 0; t < times; ++t)
                        acc += yn->grad[i * c * times + t * c + j];
                    an->grad[i * c + j] += acc;
                }
        });
    }
    return y;
}

/// out[:, c] = sum over `group` consecutive input columns starting at c*group.
template <typename T>
Tensor<T> sum_col_groups(const Tensor<T>& a, std::size_t group) {
    const std::size_t r = a.rows(), c = a.cols();
    if (group == 0 || c % group != 0) {
        throw ShapeError("sum_col_groups: group " + std::to_string(group) +
                         " does not divide " + std::to_string(c));
    }
    const std::size_t oc = c / group;
    std::vector<T> out(r * oc, T(0));
    const auto& ad = a.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < oc; ++j) {
            T acc = T(0);
            for (std::size_t s = 0; s < group; ++s) acc += ad[i * c + j * group + s];
            out[i * oc + j] = acc;
        }
    const bool rec = detail::recording<T>({&a});
    Tensor<T> y = detail::make_result({r, oc}, std::move(out), rec);
    if (rec) {
        auto an = a.node();
        auto yn = y.node();
        Tape<T>::active()->record(yn, [an, yn, r, c, oc, group] {
            if (yn->grad.empty() || !an->requires_grad) return;
            detail::ensure_grad(*an);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < oc; ++j)
                    for (std::size_t s = 0; s < group; ++s)
                        an->grad[i * c + j * group + s] += yn->grad[i * oc + j];
        });
    }
    return y;
}

template <typename T>
Tensor<T> pick_diag(const Tensor<T>& a) {
    if (a.rank() != 2 || a.shape()[0] != a.shape()[1]) {
        throw ShapeError("pick_diag: square matrix required, got " + shape_str(a.shape()));
    }
    const std::size_t n = a.shape()[0];
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i * n + i];
    const bool rec = detail::recording<T>({&a});
    Tensor<T> y = detail::make_result({1, n}, std::move(out), rec);
    if (rec) {
        auto an = a.node();
        auto yn = y.node();
        Tape<T>::active()->record(yn, [an, yn, n] {
            if (yn->grad.empty() || !an->requires_grad) return;
            detail::ensure_grad(*an);
            for (std::size_t i = 0; i < n; ++i) an->grad[i * n + i] += yn->grad[i];
        });
    }
    return y;
}

template <typename T>
Tensor<T> select_row(const Tensor<T>& a, std::size_t row) {
    const std::size_t r = a.rows(), c = a.cols();
    if (row >= r) throw ShapeError("select_row: index out of range");
    std::vector<T> out(a.data().begin() + static_cast<std::ptrdiff_t>(row * c),
                       a.data().begin() + static_cast<std::ptrdiff_t>((row + 1) * c));
    const bool rec = detail::recording<T>({&a});
    Tensor<T> y = detail::make_result({1, c}, std::move(out), rec);
    if (rec) {
        auto an = a.node();
        auto yn = y.node();
        Tape<T>::active()->record(yn, [an, yn, row, c] {
            if (yn->grad.empty() || !an->requires_grad) return;
            detail::ensure_grad(*an);
            for (std::size_t j = 0; j < c; ++j) an->grad[row * c + j] += yn->grad[j];
        });
    }
    return y;
}

/// Row-wise projection onto the unit sphere.
template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& a) {
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<T> out(a.numel());
    std::vector<T> inv(r);
    const auto& ad = a.data();
    for (std::size_t i = 0; i < r; ++i) {
        T s = T(0);
        for (std::size_t j = 0; j < c; ++j) s += ad[i * c + j] * ad[i * c + j];
        const T norm = std::sqrt(s);
        const T iv = norm > T(0) ? T(1) / norm : T(0);
        inv[i] = iv;
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = ad[i * c + j] * iv;
    }
    const bool rec = detail::recording<T>({&a});
    Tensor<T> y = detail::make_result(a.shape(), std::move(out), rec);
    if (rec) {
        auto an = a.node();
        auto yn = y.node();
        Tape<T>::active()->record(yn, [an, yn, r, c, inv = std::move(inv)] {
            if (yn->grad.empty() || !an->requires_grad) return;
            detail::ensure_grad(*an);
            for (std::size_t i = 0; i < r; ++i) {
                const T* yrow = yn->data.data() + i * c;
                const T* grow = yn->grad.data() + i * c;
                T dot = T(0);
                for (std::size_t j = 0; j < c; ++j) dot += grow[j] * yrow[j];
                for (std::size_t j = 0; j < c; ++j)
                    an->grad[i * c + j] += (grow[j] - yrow[j] * dot) * inv[i];
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
};

/// Ordered, name-unique collection of trainable tensors. Registration
/// order is the canonical serialization order.
template <typename T>
class ParamRegistry {
public:
    /// Returns a handle sharing the registered node (tensors are shared
    /// handles, so the copy aliases the stored parameter).
    Tensor<T> add(const std::string& name, Tensor<T> t) {
        for (const auto& p : params_) {
            if (p.name == name) throw ValueError("duplicate parameter name: " + name);
        }
        t.set_requires_grad(true);
        params_.push_back(Parameter<T>{name, t});
        return t;
    }

    Tensor<T> at(const std::string& name) {
        for (auto& p : params_) {
            if (p.name == name) return p.value;
        }
        throw ValueError("unknown parameter: " + name);
    }

    std::size_t size() const { return params_.size(); }
    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.numel();
        return n;
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    void zero_grad_all() {
        for (auto& p : params_) p.value.zero_grad();
    }

private:
    std::vector<Parameter<T>> params_;
};

/// y = x W + b with W[in x out], b[out].
template <typename T>
struct Affine {
    Tensor<T> weight;
    Tensor<T> bias;

    Affine() = default;

    Affine(ParamRegistry<T>& reg, const std::string& name, std::size_t in, std::size_t out,
           Rng& rng)
        : weight(reg.add(name + ".w",
                         Tensor<T>::uniform({in, out}, rng,
                                            static_cast<T>(std::sqrt(6.0 / double(in + out)))))),
          bias(reg.add(name + ".b", Tensor<T>::zeros({out}))) {}

    Tensor<T> operator()(const Tensor<T>& x) const {
        return add_rowvec(matmul(x, weight), bias);
    }
};

} // namespace mambaloc

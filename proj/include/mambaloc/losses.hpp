#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "mambaloc/tensor.hpp"

namespace mambaloc {

enum class ContrastiveMode {
    Symmetric, // CLIP form: one term over text candidates, one over cloud candidates
    Literal    // both terms normalized over text candidates
};

inline ContrastiveMode contrastive_mode_from_string(const std::string& s) {
    if (s == "symmetric") return ContrastiveMode::Symmetric;
    if (s == "literal") return ContrastiveMode::Literal;
    throw ConfigError("contrastive must be 'symmetric' or 'literal', got '" + s + "'");
}

/// Symmetric cross-entropy over the N x N similarity matrix of paired
/// unit-norm descriptors. Rows must be L2-normalized within 1e-4.
template <typename T>
Tensor<T> contrastive_loss(const Tensor<T>& cloud_desc, const Tensor<T>& text_desc, T tau,
                           ContrastiveMode mode = ContrastiveMode::Symmetric) {
    check_same_shape(cloud_desc, text_desc, "contrastive_loss");
    if (!(tau > T(0))) throw ValueError("contrastive_loss: temperature must be positive");
    const std::size_t n = cloud_desc.rows(), c = cloud_desc.cols();
    if (n < 1) throw ShapeError("contrastive_loss: empty batch");
    for (const Tensor<T>* m : {&cloud_desc, &text_desc}) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                const double v = double(m->at(i, j));
                s += v * v;
            }
            if (std::abs(std::sqrt(s) - 1.0) > 1e-4) {
                throw ValueError("contrastive_loss: row " + std::to_string(i) +
                                 " is not unit-norm (|v| = " + std::to_string(std::sqrt(s)) +
                                 ")");
            }
        }
    }
    Tensor<T> sims = scale(matmul(cloud_desc, transpose(text_desc)), T(1) / tau);
    Tensor<T> cloud_to_text = scale(sum_all(pick_diag(log_softmax(sims))), T(-1) / T(n));
    Tensor<T> second =
        mode == ContrastiveMode::Symmetric
            ? scale(sum_all(pick_diag(log_softmax(transpose(sims)))), T(-1) / T(n))
            : cloud_to_text;
    return add(cloud_to_text, second);
}

/// Standard Adam with bias correction. Moment buffers are keyed by
/// parameter name and updated in registry order, which keeps runs
/// bit-reproducible.
template <typename T>
class Adam {
public:
    explicit Adam(T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamRegistry<T>& params, T lr) {
        ++t_;
        const double b1t = 1.0 - std::pow(double(beta1_), double(t_));
        const double b2t = 1.0 - std::pow(double(beta2_), double(t_));
        for (auto& p : params) {
            auto& slot = slots_[p.name];
            auto& value = p.value.data();
            if (slot.m.empty()) {
                slot.m.assign(value.size(), T(0));
                slot.v.assign(value.size(), T(0));
            }
            const auto& grad = p.value.grad();
            for (std::size_t i = 0; i < value.size(); ++i) {
                const T g = grad.empty() ? T(0) : grad[i];
                slot.m[i] = beta1_ * slot.m[i] + (T(1) - beta1_) * g;
                slot.v[i] = beta2_ * slot.v[i] + (T(1) - beta2_) * g * g;
                const T mhat = static_cast<T>(double(slot.m[i]) / b1t);
                const T vhat = static_cast<T>(double(slot.v[i]) / b2t);
                value[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    struct Slot {
        std::vector<T> m;
        std::vector<T> v;
    };

    std::uint64_t step_count() const { return t_; }
    void set_step_count(std::uint64_t t) { t_ = t; }
    Slot& slot(const std::string& name) { return slots_[name]; }
    const std::map<std::string, Slot>& slots() const { return slots_; }

private:
    T beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::map<std::string, Slot> slots_;
};

/// Scales all gradients so their global L2 norm is at most `max_norm`.
template <typename T>
double clip_global_norm(ParamRegistry<T>& params, double max_norm) {
    double total = 0.0;
    for (auto& p : params) {
        for (T g : p.value.grad()) total += double(g) * double(g);
    }
    total = std::sqrt(total);
    if (total > max_norm && total > 0.0) {
        const T factor = static_cast<T>(max_norm / total);
        for (auto& p : params) {
            for (T& g : p.value.grad()) g *= factor;
        }
    }
    return total;
}

} // namespace mambaloc

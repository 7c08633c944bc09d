#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mambaloc/rng.hpp"
#include "mambaloc/tensor.hpp"

namespace mambaloc {

template <typename T>
struct MhaParams {
    std::size_t n_heads = 1;
    Affine<T> q_proj;
    Affine<T> k_proj;
    Affine<T> v_proj;
    Affine<T> o_proj;

    MhaParams() = default;

    MhaParams(ParamRegistry<T>& reg, const std::string& name, std::size_t d_model,
              std::size_t n_heads_, Rng& rng)
        : n_heads(n_heads_),
          q_proj(reg, name + ".q", d_model, d_model, rng),
          k_proj(reg, name + ".k", d_model, d_model, rng),
          v_proj(reg, name + ".v", d_model, d_model, rng),
          o_proj(reg, name + ".o", d_model, d_model, rng) {
        if (n_heads_ == 0 || d_model % n_heads_ != 0) {
            throw ValueError("mha: d_model " + std::to_string(d_model) +
                             " not divisible by heads " + std::to_string(n_heads_));
        }
    }
};

/// Scaled dot-product attention with per-head projections. Self form is
/// q_in == k_in == v_in; cross form feeds a different key/value side.
/// `causal` masks scores above the diagonal (requires Lq == Lk).
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q_in, const Tensor<T>& k_in,
                               const Tensor<T>& v_in, const MhaParams<T>& p,
                               bool causal = false) {
    const std::size_t lq = q_in.rows(), lk = k_in.rows();
    if (lk == 0) throw ValueError("attention: empty key/value context");
    if (v_in.rows() != lk) {
        throw ShapeError("attention: key rows " + std::to_string(lk) + " != value rows " +
                         std::to_string(v_in.rows()));
    }
    if (causal && lq != lk) throw ShapeError("attention: causal mask needs Lq == Lk");
    const std::size_t d = q_in.cols();
    const std::size_t dh = d / p.n_heads;

    Tensor<T> q = p.q_proj(q_in);
    Tensor<T> k = p.k_proj(k_in);
    Tensor<T> v = p.v_proj(v_in);

    Tensor<T> mask;
    if (causal) {
        std::vector<T> m(lq * lk, T(0));
        for (std::size_t i = 0; i < lq; ++i)
            for (std::size_t j = i + 1; j < lk; ++j) m[i * lk + j] = T(-1e9);
        mask = Tensor<T>({lq, lk}, std::move(m));
    }

    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(double(dh)));
    std::vector<Tensor<T>> heads;
    heads.reserve(p.n_heads);
    for (std::size_t h = 0; h < p.n_heads; ++h) {
        Tensor<T> qh = slice_cols(q, h * dh, (h + 1) * dh);
        Tensor<T> kh = slice_cols(k, h * dh, (h + 1) * dh);
        Tensor<T> vh = slice_cols(v, h * dh, (h + 1) * dh);
        Tensor<T> scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
        if (causal) scores = add(scores, mask);
        heads.push_back(matmul(softmax(scores), vh));
    }
    return p.o_proj(concat_cols(heads));
}

/// Two affine maps with SiLU between; hidden width 4x the model width.
template <typename T>
struct FfnParams {
    Affine<T> up;
    Affine<T> down;

    FfnParams() = default;

    FfnParams(ParamRegistry<T>& reg, const std::string& name, std::size_t d_model, Rng& rng)
        : up(reg, name + ".up", d_model, 4 * d_model, rng),
          down(reg, name + ".down", 4 * d_model, d_model, rng) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return down(silu(up(x))); }
};

template <typename T>
struct LayerNormParams {
    Tensor<T> gamma;
    Tensor<T> beta;

    LayerNormParams() = default;

    LayerNormParams(ParamRegistry<T>& reg, const std::string& name, std::size_t d)
        : gamma(reg.add(name + ".gamma", Tensor<T>::ones({d}))),
          beta(reg.add(name + ".beta", Tensor<T>::zeros({d}))) {}

    Tensor<T> operator()(const Tensor<T>& x) const {
        return layer_norm(x, gamma, beta, static_cast<T>(1e-5));
    }
};

/// Post-norm transformer layer:
///   Z  = AddNorm(x, MHA(x));  Z' = AddNorm(Z, FFN(Z)).
template <typename T>
struct TransformerLayer {
    MhaParams<T> mha;
    FfnParams<T> ffn;
    LayerNormParams<T> ln1;
    LayerNormParams<T> ln2;
    bool causal = false;

    TransformerLayer() = default;

    TransformerLayer(ParamRegistry<T>& reg, const std::string& name, std::size_t d_model,
                     std::size_t n_heads, Rng& rng, bool causal_ = false)
        : mha(reg, name + ".mha", d_model, n_heads, rng),
          ffn(reg, name + ".ffn", d_model, rng),
          ln1(reg, name + ".ln1", d_model),
          ln2(reg, name + ".ln2", d_model),
          causal(causal_) {}

    struct Pair {
        Tensor<T> z;       // after the attention sublayer
        Tensor<T> z_prime; // after the feed-forward sublayer
    };

    Pair forward_pair(const Tensor<T>& x) const {
        Tensor<T> z = ln1(add(x, multi_head_attention(x, x, x, mha, causal)));
        Tensor<T> zp = ln2(add(z, ffn(z)));
        return {std::move(z), std::move(zp)};
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return forward_pair(x).z_prime; }
};

/// Single hidden layer MLP with SiLU.
template <typename T>
struct Mlp {
    Affine<T> first;
    Affine<T> second;

    Mlp() = default;

    Mlp(ParamRegistry<T>& reg, const std::string& name, std::size_t in, std::size_t hidden,
        std::size_t out, Rng& rng)
        : first(reg, name + ".1", in, hidden, rng), second(reg, name + ".2", hidden, out, rng) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return second(silu(first(x))); }
};

} // namespace mambaloc

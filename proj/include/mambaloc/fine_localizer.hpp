#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "mambaloc/attention.hpp"
#include "mambaloc/ssm.hpp"
#include "mambaloc/tensor.hpp"

namespace mambaloc {

/// Guard band for the regressed offset, in meters (two cell radii).
inline constexpr double kOffsetGuard = 30.0;

/// Inputs to the fine stage: per-hint text vectors and per-instance
/// cloud vectors, both pre-pooling, from the frozen coarse encoders.
template <typename T>
struct FineInput {
    Tensor<T> text_tokens;  // [Lt x d]
    Tensor<T> cloud_tokens; // [Lc x d]
};

enum class CcamMode {
    Literal, // stage keys/values from the stage's own Mamba output
    TextKv   // stage keys/values re-projected from the text tokens
};

inline CcamMode ccam_mode_from_string(const std::string& s) {
    if (s == "literal") return CcamMode::Literal;
    if (s == "text_kv") return CcamMode::TextKv;
    throw ConfigError("ccam_mode must be 'literal' or 'text_kv', got '" + s + "'");
}

/// Initial fusion: cloud tokens query the text tokens, then the usual
/// post-norm feed-forward residual.
template <typename T>
struct FuseStage {
    MhaParams<T> cross;
    FfnParams<T> ffn;
    LayerNormParams<T> ln1;
    LayerNormParams<T> ln2;

    FuseStage() = default;

    FuseStage(ParamRegistry<T>& reg, const std::string& name, std::size_t d_model,
              std::size_t n_heads, Rng& rng)
        : cross(reg, name + ".cross", d_model, n_heads, rng),
          ffn(reg, name + ".ffn", d_model, rng),
          ln1(reg, name + ".ln1", d_model),
          ln2(reg, name + ".ln2", d_model) {}

    Tensor<T> operator()(const Tensor<T>& cloud, const Tensor<T>& text) const {
        Tensor<T> z1 = ln1(add(cloud, multi_head_attention(cloud, text, text, cross)));
        return ln2(add(z1, ffn(z1)));
    }
};

/// One cascade stage: a Mamba block generates fresh queries/keys/values,
/// cross-attention mixes them, and an AddNorm closes the stage.
template <typename T>
struct CcamStage {
    MambaBlockParams<T> mamba;
    Affine<T> q_proj;
    Affine<T> k_proj;
    Affine<T> v_proj;
    MhaParams<T> attn;
    LayerNormParams<T> ln;
    CcamMode mode = CcamMode::Literal;
    bool parallel_scan = false;

    CcamStage() = default;

    CcamStage(ParamRegistry<T>& reg, const std::string& name, std::size_t d_model,
              std::size_t d_state, std::size_t n_heads, std::size_t conv_width, Rng& rng,
              CcamMode mode_, bool gating, bool parallel_scan_)
        : mamba(reg, name + ".mamba", d_model, d_state, conv_width, rng, gating),
          q_proj(reg, name + ".q", d_model, d_model, rng),
          k_proj(reg, name + ".k", d_model, d_model, rng),
          v_proj(reg, name + ".v", d_model, d_model, rng),
          attn(reg, name + ".attn", d_model, n_heads, rng),
          ln(reg, name + ".ln", d_model),
          mode(mode_),
          parallel_scan(parallel_scan_) {}

    Tensor<T> operator()(const Tensor<T>& z, const Tensor<T>& text) const {
        Tensor<T> m = mamba_block(z, mamba, parallel_scan);
        Tensor<T> q = q_proj(m);
        Tensor<T> k = mode == CcamMode::Literal ? k_proj(m) : k_proj(text);
        Tensor<T> v = mode == CcamMode::Literal ? v_proj(m) : v_proj(text);
        return ln(add(m, multi_head_attention(q, k, v, attn)));
    }
};

template <typename T>
Tensor<T> ccam_cascade(const Tensor<T>& fused, const Tensor<T>& text,
                       const std::vector<CcamStage<T>>& stages) {
    if (stages.empty()) throw ValueError("ccam_cascade: needs at least one stage");
    Tensor<T> z = fused;
    for (const auto& stage : stages) z = stage(z, text);
    return z;
}

/// Planar offset prediction, cell-local meters.
struct OffsetPrediction {
    double x = 0.0;
    double y = 0.0;
};

/// Matching-free fine localizer: fuse, cascade, pool, regress, clamp.
template <typename T>
class FineLocalizer {
public:
    FineLocalizer() = default;

    FineLocalizer(ParamRegistry<T>& reg, Rng& rng, std::size_t d_model, std::size_t d_state,
                  std::size_t n_heads, std::size_t conv_width, std::size_t n_stages,
                  CcamMode mode, bool gating, bool parallel_scan)
        : fuse_(reg, "fine.fuse", d_model, n_heads, rng),
          head1_(reg, "fine.head1", d_model, d_model / 2, rng),
          head2_(reg, "fine.head2", d_model / 2, 2, rng) {
        stages_.reserve(n_stages);
        for (std::size_t i = 0; i < n_stages; ++i) {
            stages_.emplace_back(reg, "fine.ccam" + std::to_string(i), d_model, d_state,
                                 n_heads, conv_width, rng, mode, gating, parallel_scan);
        }
    }

    Tensor<T> fuse(const FineInput<T>& in) const {
        return fuse_(in.cloud_tokens, in.text_tokens);
    }

    Tensor<T> cascade(const Tensor<T>& fused, const Tensor<T>& text) const {
        return ccam_cascade(fused, text, stages_);
    }

    /// [1 x 2] offset tensor, clamped to the guard band.
    Tensor<T> forward(const FineInput<T>& in) const {
        Tensor<T> h = cascade(fuse(in), in.text_tokens);
        Tensor<T> out = head2_(silu(head1_(mean_rows(h))));
        return clamp(out, static_cast<T>(-kOffsetGuard), static_cast<T>(kOffsetGuard));
    }

    OffsetPrediction predict(const FineInput<T>& in) const {
        Tensor<T> out = forward(in);
        return OffsetPrediction{double(out.data()[0]), double(out.data()[1])};
    }

    std::vector<CcamStage<T>>& stages() { return stages_; }
    FuseStage<T>& fuse_stage() { return fuse_; }
    Affine<T>& head1() { return head1_; }
    Affine<T>& head2() { return head2_; }

private:
    FuseStage<T> fuse_;
    std::vector<CcamStage<T>> stages_;
    Affine<T> head1_;
    Affine<T> head2_;
};

/// Per-sample regression loss: the Euclidean offset error (the printed
/// objective), or its square behind the flag.
template <typename T>
Tensor<T> fine_loss(const Tensor<T>& pred_xy, const Tensor<T>& gt_xy, bool squared = false) {
    if (pred_xy.numel() != 2 || gt_xy.numel() != 2) {
        throw ShapeError("fine_loss: planar coordinates required");
    }
    Tensor<T> diff = sub(pred_xy, gt_xy);
    Tensor<T> sq = sum_all(mul(diff, diff));
    return squared ? sq : sqrt(sq);
}

/// Batch-mean regression loss.
template <typename T>
Tensor<T> fine_loss_batch(const std::vector<Tensor<T>>& preds,
                          const std::vector<Tensor<T>>& gts, bool squared = false) {
    if (preds.empty() || preds.size() != gts.size()) {
        throw ShapeError("fine_loss_batch: size mismatch");
    }
    Tensor<T> total = fine_loss(preds[0], gts[0], squared);
    for (std::size_t i = 1; i < preds.size(); ++i) {
        total = add(total, fine_loss(preds[i], gts[i], squared));
    }
    return scale(total, T(1) / T(preds.size()));
}

} // namespace mambaloc

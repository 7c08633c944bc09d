#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "mambaloc/attention.hpp"
#include "mambaloc/data.hpp"
#include "mambaloc/ssm.hpp"
#include "mambaloc/tensor.hpp"
#include "mambaloc/text_encoder.hpp"

namespace mambaloc {

/// Canonical instance order for the SSM stack: centroid x, then y, then
/// z, then instance id. Total and deterministic, so any stored order of
/// the same instance set encodes identically.
inline std::vector<ObjectInstance> order_instances(const Submap& s) {
    if (s.instances.empty()) throw ValueError("order_instances: empty submap");
    std::vector<ObjectInstance> ordered = s.instances;
    std::sort(ordered.begin(), ordered.end(),
              [](const ObjectInstance& a, const ObjectInstance& b) {
                  if (a.centroid[0] != b.centroid[0]) return a.centroid[0] < b.centroid[0];
                  if (a.centroid[1] != b.centroid[1]) return a.centroid[1] < b.centroid[1];
                  if (a.centroid[2] != b.centroid[2]) return a.centroid[2] < b.centroid[2];
                  return a.instance_id < b.instance_id;
              });
    return ordered;
}

/// Permutation-invariant per-instance encoder: a shared point MLP on
/// centroid-relative coordinates with coordinatewise max pooling, joined
/// with class, color and centroid embeddings.
///
/// Class and color-name embeddings are trainable projections of the same
/// frozen hashed token table the text branch reads, so "building" as a
/// word and building as an instance attribute start from one basis.
template <typename T>
struct InstanceEncoder {
    static constexpr std::size_t kPointHidden = 32;
    static constexpr std::size_t kPointFeat = 64;
    static constexpr std::size_t kAttrEmbed = 32;
    static constexpr std::size_t kMaxPoints = 256;

    Affine<T> point1;
    Affine<T> point2;
    Affine<T> class_proj; // token row -> attribute feature
    Affine<T> color_name_proj;
    Affine<T> color_rgb_proj;
    Affine<T> centroid_proj;
    Affine<T> out_proj;
    TokenEmbedder<T> tokens;

    InstanceEncoder() = default;

    InstanceEncoder(ParamRegistry<T>& reg, const std::string& name, std::size_t d_model,
                    std::size_t vocab_rows, std::size_t d_embed, Rng& rng)
        : point1(reg, name + ".pt1", 3, kPointHidden, rng),
          point2(reg, name + ".pt2", kPointHidden, kPointFeat, rng),
          class_proj(reg, name + ".class", d_embed, kAttrEmbed, rng),
          color_name_proj(reg, name + ".color_name", d_embed, kAttrEmbed, rng),
          color_rgb_proj(reg, name + ".color_rgb", 3, kAttrEmbed, rng),
          centroid_proj(reg, name + ".centroid", 3, kAttrEmbed, rng),
          out_proj(reg, name + ".out", kPointFeat + 4 * kAttrEmbed, d_model, rng),
          tokens(vocab_rows, d_embed) {}

    /// Canonical point selection: lexicographic sort, then an index
    /// stride down to kMaxPoints. Sorting first keeps the selection a
    /// pure function of the point multiset.
    static std::vector<std::array<double, 3>> canonical_points(const ObjectInstance& inst) {
        std::vector<std::array<double, 3>> pts = inst.points;
        std::sort(pts.begin(), pts.end());
        if (pts.size() <= kMaxPoints) return pts;
        std::vector<std::array<double, 3>> kept;
        kept.reserve(kMaxPoints);
        for (std::size_t i = 0; i < kMaxPoints; ++i) {
            kept.push_back(pts[i * pts.size() / kMaxPoints]);
        }
        return kept;
    }

    Tensor<T> operator()(const ObjectInstance& inst) const {
        if (inst.points.size() < 8) {
            throw ValueError("degenerate instance " + std::to_string(inst.instance_id) +
                             ": needs >= 8 points, has " + std::to_string(inst.points.size()));
        }
        const auto pts = canonical_points(inst);
        std::vector<T> rel(pts.size() * 3);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            for (int k = 0; k < 3; ++k)
                rel[i * 3 + k] = static_cast<T>(pts[i][k] - inst.centroid[k]);
        }
        Tensor<T> point_feats = max_rows(silu(point2(silu(point1(
            Tensor<T>({pts.size(), 3}, std::move(rel)))))));

        Tensor<T> cls = class_proj(tokens.embed_token(inst.class_label));
        Tensor<T> col_name =
            color_name_proj(tokens.embed_token(nearest_color(inst.color_rgb).name));
        Tensor<T> col_rgb = color_rgb_proj(Tensor<T>({1, 3},
                                                     {static_cast<T>(inst.color_rgb[0]),
                                                      static_cast<T>(inst.color_rgb[1]),
                                                      static_cast<T>(inst.color_rgb[2])}));
        Tensor<T> cen = centroid_proj(Tensor<T>({1, 3},
                                                {static_cast<T>(inst.centroid[0]),
                                                 static_cast<T>(inst.centroid[1]),
                                                 static_cast<T>(inst.centroid[2])}));
        std::vector<Tensor<T>> parts{point_feats, cls, col_name, col_rgb, cen};
        return out_proj(concat_cols(parts));
    }
};

/// Pure-SSM block over the ordered instance sequence:
///   M  = Linear(LN(x))
///   G1 = SiLU(SelectiveScan(SiLU(DwConv(M))))
///   G2 = SiLU(Linear(M))
///   y  = Linear(G1 + G2) + x
template <typename T>
struct PcmBlock {
    LayerNormParams<T> norm;
    Affine<T> lin_in;
    Tensor<T> conv_kernel;
    SsmParams<T> ssm;
    Affine<T> lin_direct;
    Affine<T> lin_out;
    bool parallel_scan = false;

    PcmBlock() = default;

    PcmBlock(ParamRegistry<T>& reg, const std::string& name, std::size_t d_model,
             std::size_t d_state, std::size_t conv_width, Rng& rng, bool parallel_scan_)
        : norm(reg, name + ".ln", d_model),
          lin_in(reg, name + ".in", d_model, d_model, rng),
          ssm(reg, name + ".ssm", d_model, d_state, rng),
          lin_direct(reg, name + ".direct", d_model, d_model, rng),
          lin_out(reg, name + ".out", d_model, d_model, rng),
          parallel_scan(parallel_scan_) {
        const T bound = static_cast<T>(1.0 / std::sqrt(double(conv_width)));
        conv_kernel = reg.add(name + ".conv", Tensor<T>::uniform({conv_width, d_model}, rng, bound));
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        Tensor<T> m = lin_in(norm(x));
        Tensor<T> g1 = silu(selective_scan(silu(depthwise_conv1d(m, conv_kernel, true)),
                                           ssm, parallel_scan));
        Tensor<T> g2 = silu(lin_direct(m));
        return add(lin_out(add(g1, g2)), x);
    }
};

/// Point-cloud branch: instance encodings in canonical order, a stack of
/// PCM blocks, mean pooling, and the unit-norm descriptor head.
template <typename T>
class CloudEncoder {
public:
    CloudEncoder() = default;

    CloudEncoder(ParamRegistry<T>& reg, Rng& rng, std::size_t d_model, std::size_t c_dim,
                 std::size_t n_blocks, std::size_t d_state, std::size_t conv_width,
                 std::size_t vocab_rows, std::size_t d_embed, bool parallel_scan)
        : instance_encoder_(reg, "cloud.inst", d_model, vocab_rows, d_embed, rng),
          pooled_norm_(reg, "cloud.pool_ln", d_model),
          head_(reg, "cloud.head", d_model, d_model, c_dim, rng) {
        blocks_.reserve(n_blocks);
        for (std::size_t i = 0; i < n_blocks; ++i) {
            blocks_.emplace_back(reg, "cloud.pcm" + std::to_string(i), d_model, d_state,
                                 conv_width, rng, parallel_scan);
        }
    }

    /// Ordered instance encodings after the PCM stack, before pooling.
    Tensor<T> encode_tokens(const Submap& s) const {
        if (s.instances.empty()) throw ValueError("empty submap " + std::to_string(s.cell_id));
        std::vector<Tensor<T>> rows;
        rows.reserve(s.instances.size());
        for (const auto& inst : order_instances(s)) rows.push_back(instance_encoder_(inst));
        Tensor<T> x = concat_rows(rows);
        for (const auto& block : blocks_) x = block(x);
        return x;
    }

    /// Unit-norm descriptor [1 x C], with the pooled vector
    /// re-standardized before the head (same reasoning as the text side).
    Tensor<T> encode(const Submap& s) const {
        return l2_normalize_rows(head_(pooled_norm_(mean_rows(encode_tokens(s)))));
    }

    InstanceEncoder<T>& instance_encoder() { return instance_encoder_; }
    std::vector<PcmBlock<T>>& blocks() { return blocks_; }

private:
    InstanceEncoder<T> instance_encoder_;
    std::vector<PcmBlock<T>> blocks_;
    LayerNormParams<T> pooled_norm_;
    Mlp<T> head_;
};

} // namespace mambaloc

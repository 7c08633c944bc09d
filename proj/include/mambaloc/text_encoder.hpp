#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <string>
#include <vector>

#include "mambaloc/attention.hpp"
#include "mambaloc/data.hpp"
#include "mambaloc/ssm.hpp"
#include "mambaloc/tensor.hpp"

namespace mambaloc {

/// Lowercase, split on anything that is not a letter or digit.
inline std::vector<std::string> tokenize(const std::string& hint) {
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : hint) {
        const unsigned char u = static_cast<unsigned char>(ch);
        if (std::isalnum(u)) {
            current.push_back(static_cast<char>(std::tolower(u)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

inline std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

/// Vocabulary-free frozen token embedding: a stable 64-bit hash selects a
/// row of a fixed pseudo-random table. The table never trains; only the
/// affine adapter that follows it does, which keeps the frontend's
/// fixed-parameters contract while staying desk-scale.
template <typename T>
class TokenEmbedder {
public:
    TokenEmbedder() = default;

    TokenEmbedder(std::size_t rows, std::size_t d_embed) : rows_(rows), d_embed_(d_embed) {
        Rng rng(0x7061726b6564ull); // fixed constant, independent of run seed
        const double bound = 1.0 / std::sqrt(double(d_embed));
        table_.resize(rows * d_embed);
        for (auto& v : table_) v = static_cast<T>(rng.uniform(-bound, bound));
    }

    std::size_t row_of(const std::string& token) const {
        return static_cast<std::size_t>(fnv1a64(token) % rows_);
    }

    /// [n_tokens x d_embed] constant tensor (no gradient).
    Tensor<T> embed(const std::vector<std::string>& tokens) const {
        if (tokens.empty()) throw ValueError("embed: no tokens");
        std::vector<T> out(tokens.size() * d_embed_);
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            const T* row = table_.data() + row_of(tokens[i]) * d_embed_;
            std::copy(row, row + d_embed_, out.data() + i * d_embed_);
        }
        return Tensor<T>({tokens.size(), d_embed_}, std::move(out));
    }

    /// The raw table row for one token, as a [1 x d_embed] constant.
    Tensor<T> embed_token(const std::string& token) const {
        std::vector<T> out(d_embed_);
        const T* row = table_.data() + row_of(token) * d_embed_;
        std::copy(row, row + d_embed_, out.data());
        return Tensor<T>({1, d_embed_}, std::move(out));
    }

    std::size_t d_embed() const { return d_embed_; }

private:
    std::size_t rows_ = 0;
    std::size_t d_embed_ = 0;
    std::vector<T> table_;
};

enum class Combiner { Sum, Gate };

inline Combiner combiner_from_string(const std::string& s) {
    if (s == "sum") return Combiner::Sum;
    if (s == "gate") return Combiner::Gate;
    throw ConfigError("combiner must be 'sum' or 'gate', got '" + s + "'");
}

/// One text layer: a causal post-norm transformer sublayer pair feeding
/// three branches -- causal convolution, selective scan, and a plain
/// linear read of the feed-forward output -- combined additively or as a
/// multiplicative gate.
template <typename T>
struct TamLayer {
    TransformerLayer<T> transformer;
    Mlp<T> mlp_z;
    Affine<T> lin_conv;
    Tensor<T> conv_kernel;
    Affine<T> lin_scan;
    SsmParams<T> ssm;
    Mlp<T> mlp_zp;
    Affine<T> lin_direct;
    Combiner combiner = Combiner::Sum;
    bool parallel_scan = false;

    TamLayer() = default;

    TamLayer(ParamRegistry<T>& reg, const std::string& name, std::size_t d_model,
             std::size_t d_state, std::size_t n_heads, std::size_t conv_width, Rng& rng,
             Combiner combiner_, bool parallel_scan_)
        : transformer(reg, name + ".tf", d_model, n_heads, rng, /*causal=*/true),
          mlp_z(reg, name + ".mlp_z", d_model, d_model, d_model, rng),
          lin_conv(reg, name + ".lin_conv", d_model, d_model, rng),
          lin_scan(reg, name + ".lin_scan", d_model, d_model, rng),
          ssm(reg, name + ".ssm", d_model, d_state, rng),
          mlp_zp(reg, name + ".mlp_zp", d_model, d_model, d_model, rng),
          lin_direct(reg, name + ".lin_direct", d_model, d_model, rng),
          combiner(combiner_),
          parallel_scan(parallel_scan_) {
        const T bound = static_cast<T>(1.0 / std::sqrt(double(conv_width)));
        conv_kernel = reg.add(name + ".conv", Tensor<T>::uniform({conv_width, d_model}, rng, bound));
    }

    struct Branches {
        Tensor<T> conv_path;
        Tensor<T> scan_path;
        Tensor<T> direct_path;
        Tensor<T> combined;
    };

    Branches forward_branches(const Tensor<T>& x) const {
        auto pair = transformer.forward_pair(x);
        Tensor<T> mz = mlp_z(pair.z);
        Tensor<T> h = silu(depthwise_conv1d(lin_conv(mz), conv_kernel, true));
        Tensor<T> g1 = silu(selective_scan(lin_scan(mz), ssm, parallel_scan));
        Tensor<T> g2 = silu(lin_direct(mlp_zp(pair.z_prime)));
        Tensor<T> hg = add(h, g1);
        Tensor<T> y = combiner == Combiner::Sum ? add(hg, g2) : mul(hg, g2);
        return {std::move(h), std::move(g1), std::move(g2), std::move(y)};
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return forward_branches(x).combined; }
};

/// Text branch of coarse localization. Word-level layers run per hint,
/// a transformer layer aggregates the hint set, and mean pooling plus a
/// final MLP yield the unit-norm descriptor.
///
/// Hints are canonically sorted before encoding: the hint set carries no
/// order, and the sort makes hint-permutation invariance exact rather
/// than approximate.
template <typename T>
class TextEncoder {
public:
    TextEncoder() = default;

    TextEncoder(ParamRegistry<T>& reg, Rng& rng, std::size_t vocab_rows, std::size_t d_embed,
                std::size_t d_model, std::size_t c_dim, std::size_t n_layers,
                std::size_t d_state, std::size_t n_heads, std::size_t conv_width,
                Combiner combiner, bool parallel_scan)
        : embedder_(vocab_rows, d_embed),
          adapter_(reg, "text.adapter", d_embed, d_model, rng),
          aggregator_(reg, "text.agg", d_model, n_heads, rng, /*causal=*/false),
          pooled_norm_(reg, "text.pool_ln", d_model),
          head_(reg, "text.head", d_model, d_model, c_dim, rng) {
        layers_.reserve(n_layers);
        for (std::size_t i = 0; i < n_layers; ++i) {
            layers_.emplace_back(reg, "text.tam" + std::to_string(i), d_model, d_state,
                                 n_heads, conv_width, rng, combiner, parallel_scan);
        }
    }

    /// Token sequence -> [L x d_model] after the word-level stack.
    Tensor<T> encode_hint_sequence(const std::vector<std::string>& tokens) const {
        Tensor<T> x = adapter_(embedder_.embed(tokens));
        for (const auto& layer : layers_) x = layer(x);
        return x;
    }

    /// One pooled vector per hint, canonically ordered. [H x d_model]
    Tensor<T> hint_vectors(const std::vector<std::string>& hints) const {
        std::vector<std::string> ordered(hints.begin(), hints.end());
        std::sort(ordered.begin(), ordered.end());
        std::vector<Tensor<T>> pooled;
        for (const auto& hint : ordered) {
            auto tokens = tokenize(hint);
            if (tokens.empty()) continue;
            pooled.push_back(mean_rows(encode_hint_sequence(tokens)));
        }
        if (pooled.empty()) throw ValueError("empty query: no hint survived tokenization");
        return concat_rows(pooled);
    }

    /// Per-hint vectors after the aggregation layer, before pooling.
    Tensor<T> encode_tokens(const std::vector<std::string>& hints) const {
        return aggregator_(hint_vectors(hints));
    }

    /// Unit-norm descriptor [1 x C]. The pooled vector is re-standardized
    /// before the head so the shared activation offset of the SiLU
    /// branches does not dominate the descriptor direction.
    Tensor<T> encode(const std::vector<std::string>& hints) const {
        return l2_normalize_rows(head_(pooled_norm_(mean_rows(encode_tokens(hints)))));
    }

    Tensor<T> encode(const TextQuery& q) const { return encode(q.hints); }

    const TokenEmbedder<T>& embedder() const { return embedder_; }
    std::vector<TamLayer<T>>& layers() { return layers_; }

private:
    TokenEmbedder<T> embedder_;
    Affine<T> adapter_;
    std::vector<TamLayer<T>> layers_;
    TransformerLayer<T> aggregator_;
    LayerNormParams<T> pooled_norm_;
    Mlp<T> head_;
};

} // namespace mambaloc

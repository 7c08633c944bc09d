#pragma once

#include <string>
#include <vector>

#include "mambaloc/cloud_encoder.hpp"
#include "mambaloc/fine_localizer.hpp"
#include "mambaloc/gradcheck.hpp"
#include "mambaloc/losses.hpp"
#include "mambaloc/text_encoder.hpp"

namespace mambaloc {

struct BlockCheck {
    std::string name;
    double max_rel_err = 0.0;
};

/// Central-difference verification of every block's reverse-mode
/// gradients, in double precision at small widths. Returns the worst
/// relative error per block over `n_seeds` random draws.
inline std::vector<BlockCheck> run_gradient_suite(std::size_t n_seeds = 5, double h = 1e-5) {
    constexpr std::size_t d = 8, n_state = 4, heads = 2, conv_w = 4;
    std::vector<BlockCheck> table;

    auto run = [&](const std::string& name, auto&& build_and_loss) {
        double worst = 0.0;
        for (std::uint64_t seed = 0; seed < n_seeds; ++seed) {
            worst = std::max(worst, build_and_loss(seed));
        }
        table.push_back({name, worst});
    };

    run("linear", [&](std::uint64_t seed) {
        Rng rng(seed + 11);
        ParamRegistry<double> reg;
        Affine<double> aff(reg, "aff", d, d, rng);
        auto x = reg.add("x", Tensor<double>::uniform({3, d}, rng, 1.0));
        auto f = [&]() { return sum_all(mul(aff(x), aff(x))); };
        return grad_check_all(f, reg, h);
    });

    run("layer_norm", [&](std::uint64_t seed) {
        Rng rng(seed + 23);
        ParamRegistry<double> reg;
        LayerNormParams<double> ln(reg, "ln", d);
        for (auto& v : ln.gamma.data()) v = rng.uniform(0.5, 1.5);
        for (auto& v : ln.beta.data()) v = rng.uniform(-0.5, 0.5);
        auto x = reg.add("x", Tensor<double>::uniform({3, d}, rng, 1.0));
        auto f = [&]() { return sum_all(mul(ln(x), ln(x))); };
        return grad_check_all(f, reg, h);
    });

    run("mha", [&](std::uint64_t seed) {
        Rng rng(seed + 37);
        ParamRegistry<double> reg;
        MhaParams<double> p(reg, "mha", d, heads, rng);
        auto x = reg.add("x", Tensor<double>::uniform({3, d}, rng, 1.0));
        auto f = [&]() {
            auto y = multi_head_attention(x, x, x, p);
            return sum_all(mul(y, y));
        };
        return grad_check_all(f, reg, h);
    });

    run("ffn", [&](std::uint64_t seed) {
        Rng rng(seed + 41);
        ParamRegistry<double> reg;
        FfnParams<double> p(reg, "ffn", d, rng);
        auto x = reg.add("x", Tensor<double>::uniform({3, d}, rng, 1.0));
        auto f = [&]() { return sum_all(mul(p(x), p(x))); };
        return grad_check_all(f, reg, h);
    });

    run("depthwise_conv", [&](std::uint64_t seed) {
        Rng rng(seed + 53);
        ParamRegistry<double> reg;
        auto k = reg.add("k", Tensor<double>::uniform({conv_w, d}, rng, 0.8));
        auto x = reg.add("x", Tensor<double>::uniform({5, d}, rng, 1.0));
        auto f = [&]() {
            auto y = depthwise_conv1d(x, k, true);
            return sum_all(mul(y, y));
        };
        return grad_check_all(f, reg, h);
    });

    run("selective_scan", [&](std::uint64_t seed) {
        Rng rng(seed + 67);
        ParamRegistry<double> reg;
        SsmParams<double> p(reg, "ssm", 2, n_state, rng);
        auto x = reg.add("x", Tensor<double>::uniform({8, 2}, rng, 1.0));
        auto f = [&]() { return sum_all(selective_scan_sequential(x, p)); };
        return grad_check_all(f, reg, h);
    });

    run("selective_scan_parallel", [&](std::uint64_t seed) {
        Rng rng(seed + 67);
        ParamRegistry<double> reg;
        SsmParams<double> p(reg, "ssm", 2, n_state, rng);
        auto x = reg.add("x", Tensor<double>::uniform({8, 2}, rng, 1.0));
        auto f = [&]() { return sum_all(selective_scan_parallel(x, p, 3)); };
        return grad_check_all(f, reg, h);
    });

    run("mamba_block", [&](std::uint64_t seed) {
        Rng rng(seed + 71);
        ParamRegistry<double> reg;
        MambaBlockParams<double> p(reg, "mb", 2, 2, conv_w, rng);
        auto x = reg.add("x", Tensor<double>::uniform({6, 2}, rng, 1.0));
        auto f = [&]() {
            auto y = mamba_block(x, p);
            return sum_all(mul(y, y));
        };
        return grad_check_all(f, reg, h);
    });

    run("tam_layer", [&](std::uint64_t seed) {
        Rng rng(seed + 83);
        ParamRegistry<double> reg;
        TamLayer<double> layer(reg, "tam", d, n_state, heads, conv_w, rng, Combiner::Sum,
                               false);
        auto x = reg.add("x", Tensor<double>::uniform({5, d}, rng, 1.0));
        auto f = [&]() {
            auto y = layer(x);
            return sum_all(mul(y, y));
        };
        return grad_check_all(f, reg, h);
    });

    run("pcm_block", [&](std::uint64_t seed) {
        Rng rng(seed + 89);
        ParamRegistry<double> reg;
        PcmBlock<double> block(reg, "pcm", d, n_state, conv_w, rng, false);
        auto x = reg.add("x", Tensor<double>::uniform({6, d}, rng, 1.0));
        auto f = [&]() {
            auto y = block(x);
            return sum_all(mul(y, y));
        };
        return grad_check_all(f, reg, h);
    });

    run("ccam_stage", [&](std::uint64_t seed) {
        Rng rng(seed + 97);
        ParamRegistry<double> reg;
        FuseStage<double> fuse(reg, "fuse", d, heads, rng);
        CcamStage<double> stage(reg, "st", d, n_state, heads, conv_w, rng,
                                CcamMode::Literal, true, false);
        auto cloud = reg.add("cloud", Tensor<double>::uniform({4, d}, rng, 1.0));
        auto text = reg.add("text", Tensor<double>::uniform({3, d}, rng, 1.0));
        auto f = [&]() {
            auto y = stage(fuse(cloud, text), text);
            return sum_all(mul(y, y));
        };
        return grad_check_all(f, reg, h);
    });

    run("contrastive_loss", [&](std::uint64_t seed) {
        Rng rng(seed + 101);
        ParamRegistry<double> reg;
        auto p = reg.add("p", Tensor<double>::uniform({4, d}, rng, 1.0));
        auto t = reg.add("t", Tensor<double>::uniform({4, d}, rng, 1.0));
        auto f = [&]() {
            return contrastive_loss(l2_normalize_rows(p), l2_normalize_rows(t), 0.5,
                                    ContrastiveMode::Symmetric);
        };
        return grad_check_all(f, reg, h);
    });

    run("fine_loss", [&](std::uint64_t seed) {
        Rng rng(seed + 103);
        ParamRegistry<double> reg;
        auto pred = reg.add("pred", Tensor<double>::uniform({1, 2}, rng, 5.0));
        Tensor<double> gt({1, 2}, {rng.uniform(6.0, 9.0), rng.uniform(6.0, 9.0)});
        auto f = [&]() { return fine_loss(pred, gt, false); };
        return grad_check_all(f, reg, h);
    });

    return table;
}

} // namespace mambaloc

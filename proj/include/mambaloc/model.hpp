#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "mambaloc/cloud_encoder.hpp"
#include "mambaloc/config.hpp"
#include "mambaloc/fine_localizer.hpp"
#include "mambaloc/text_encoder.hpp"

namespace mambaloc {

struct ModelConfig {
    std::size_t d_model = 128;
    std::size_t d_state = 16;
    std::size_t d_embed = 64;
    std::size_t vocab_rows = 16384;
    std::size_t c_dim = 128;
    std::size_t n_heads = 4;
    std::size_t tam_layers = 2;
    std::size_t pcm_blocks = 4;
    std::size_t ccam_stages = 2;
    std::size_t conv_width = 4;
    Combiner combiner = Combiner::Sum;
    CcamMode ccam_mode = CcamMode::Literal;
    bool gating = true;
    bool parallel_scan = false;

    static ModelConfig from_run_config(const RunConfig& cfg) {
        ModelConfig m;
        m.d_model = cfg.uint("d_model");
        m.d_state = cfg.uint("d_state");
        m.d_embed = cfg.uint("d_embed");
        m.vocab_rows = cfg.uint("vocab_rows");
        m.c_dim = cfg.uint("c_dim");
        m.n_heads = cfg.uint("n_heads");
        m.tam_layers = cfg.uint("tam_layers");
        m.pcm_blocks = cfg.uint("pcm_blocks");
        m.ccam_stages = cfg.uint("ccam_stages");
        m.conv_width = cfg.uint("conv_width");
        m.combiner = combiner_from_string(cfg.str("combiner"));
        m.ccam_mode = ccam_mode_from_string(cfg.str("ccam_mode"));
        m.gating = cfg.flag("mamba_gating");
        const std::string scan = cfg.str("scan");
        if (scan != "sequential" && scan != "parallel") {
            throw ConfigError("scan must be 'sequential' or 'parallel'");
        }
        m.parallel_scan = scan == "parallel";
        return m;
    }
};

/// Both coarse encoders behind one parameter registry, so the pair
/// trains, checkpoints and restores as a unit.
template <typename T>
struct CoarseModel {
    ParamRegistry<T> params;
    TextEncoder<T> text;
    CloudEncoder<T> cloud;

    CoarseModel(const ModelConfig& cfg, std::uint64_t init_seed) {
        Rng rng = Rng::derive(init_seed, 0xC0A5);
        text = TextEncoder<T>(params, rng, cfg.vocab_rows, cfg.d_embed, cfg.d_model,
                              cfg.c_dim, cfg.tam_layers, cfg.d_state, cfg.n_heads,
                              cfg.conv_width, cfg.combiner, cfg.parallel_scan);
        cloud = CloudEncoder<T>(params, rng, cfg.d_model, cfg.c_dim, cfg.pcm_blocks,
                                cfg.d_state, cfg.conv_width, cfg.vocab_rows, cfg.d_embed,
                                cfg.parallel_scan);
    }
};

template <typename T>
struct FineModel {
    ParamRegistry<T> params;
    FineLocalizer<T> localizer;

    FineModel(const ModelConfig& cfg, std::uint64_t init_seed) {
        Rng rng = Rng::derive(init_seed, 0xF13E);
        localizer = FineLocalizer<T>(params, rng, cfg.d_model, cfg.d_state, cfg.n_heads,
                                     cfg.conv_width, cfg.ccam_stages, cfg.ccam_mode,
                                     cfg.gating, cfg.parallel_scan);
    }
};

} // namespace mambaloc

#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mambaloc/scenegen.hpp"
#include "mambaloc/tensor.hpp"

namespace mambaloc {

/// Flat key=value run configuration. Every key has a declared default;
/// unknown keys are rejected. `lr` and `epochs` default to "auto", which
/// resolves per stage (coarse: 5e-4 / 20, fine: 3e-4 / 35).
class RunConfig {
public:
    RunConfig() : values_(defaults()) {}

    static const std::map<std::string, std::string>& defaults() {
        static const std::map<std::string, std::string> d = {
            // dataset
            {"seed", "17"},
            {"grid", "16"},
            {"stride", "10"},
            {"cell_size", "30"},
            {"instances_min", "6"},
            {"instances_max", "12"},
            {"points_min", "24"},
            {"points_max", "64"},
            {"hints_per_query", "3"},
            {"queries_per_cell", "4"},
            {"split_train", "0.6"},
            {"split_val", "0.2"},
            {"split_test", "0.2"},
            // model
            {"d_model", "128"},
            {"d_state", "16"},
            {"d_embed", "64"},
            {"vocab_rows", "16384"},
            {"c_dim", "128"},
            {"n_heads", "4"},
            {"tam_layers", "2"},
            {"pcm_blocks", "4"},
            {"ccam_stages", "2"},
            {"conv_width", "4"},
            {"combiner", "sum"},
            {"ccam_mode", "literal"},
            {"contrastive", "symmetric"},
            {"fine_loss", "norm"},
            {"scan", "sequential"},
            {"mamba_gating", "true"},
            // training
            {"stage", "coarse"},
            {"lr", "auto"},
            {"epochs", "auto"},
            {"batch_size", "32"},
            {"temperature", "0.07"},
            {"grad_clip", "1"},
            {"stop_after_epoch", "0"},
            {"aug_hint_drop", "0.25"},
            {"aug_instance_drop", "0.2"},
            {"aug_centroid_jitter", "1"},
            {"aug_color_jitter", "0.02"},
            // paths and run control
            {"data_dir", "data"},
            {"out", ""},
            {"coarse_ckpt", "coarse.ckpt"},
            {"fine_ckpt", ""},
            {"split", "val"},
            {"resume", ""},
            {"force", "false"},
            {"data_digest", ""},
        };
        return d;
    }

    void set(const std::string& key, const std::string& value) {
        if (values_.find(key) == values_.end()) {
            throw ConfigError("unknown config key: " + key);
        }
        values_[key] = value;
    }

    void load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            std::size_t b = line.find_first_not_of(" \t\r");
            if (b == std::string::npos) continue;
            std::size_t e = line.find_last_not_of(" \t\r");
            line = line.substr(b, e - b + 1);
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(path + ":" + std::to_string(line_no) +
                                  ": expected key=value");
            }
            auto strip = [](std::string s) {
                const auto b2 = s.find_first_not_of(" \t");
                if (b2 == std::string::npos) return std::string();
                const auto e2 = s.find_last_not_of(" \t");
                return s.substr(b2, e2 - b2 + 1);
            };
            set(strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
        }
    }

    const std::string& raw(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("unknown config key: " + key);
        return it->second;
    }

    std::string str(const std::string& key) const { return resolved_value(key); }

    double num(const std::string& key) const {
        const std::string v = resolved_value(key);
        try {
            std::size_t used = 0;
            const double d = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (...) {
            throw ConfigError("config key " + key + ": not a number: '" + v + "'");
        }
    }

    std::uint64_t uint(const std::string& key) const {
        const double d = num(key);
        if (d < 0 || d != double(std::uint64_t(d))) {
            throw ConfigError("config key " + key + ": not a non-negative integer");
        }
        return std::uint64_t(d);
    }

    bool flag(const std::string& key) const {
        const std::string v = resolved_value(key);
        if (v == "true" || v == "1" || v == "on") return true;
        if (v == "false" || v == "0" || v == "off") return false;
        throw ConfigError("config key " + key + ": not a boolean: '" + v + "'");
    }

    WorldConfig world_config() const {
        WorldConfig w;
        w.seed = uint("seed");
        w.grid = uint("grid");
        w.stride = num("stride");
        w.cell_size = num("cell_size");
        w.instances_min = uint("instances_min");
        w.instances_max = uint("instances_max");
        w.points_min = uint("points_min");
        w.points_max = uint("points_max");
        w.hints_per_query = uint("hints_per_query");
        w.queries_per_cell = uint("queries_per_cell");
        w.split_train = num("split_train");
        w.split_val = num("split_val");
        w.split_test = num("split_test");
        return w;
    }

    /// Canonical sorted key=value text with stage-dependent values
    /// resolved. This is what gets logged, digested, and checkpointed.
    std::string resolved_text() const {
        std::ostringstream os;
        for (const auto& [k, v] : values_) {
            os << k << '=' << resolved_value(k) << '\n';
        }
        return os.str();
    }

    std::string digest() const { return hex64(fnv1a64(resolved_text())); }

    /// Re-hydrates a config from checkpointed canonical text.
    static RunConfig from_text(const std::string& text) {
        RunConfig cfg;
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError("bad config line: " + line);
            cfg.set(line.substr(0, eq), line.substr(eq + 1));
        }
        return cfg;
    }

private:
    std::string resolved_value(const std::string& key) const {
        const std::string& v = raw(key);
        if (v == "auto") {
            const bool coarse = raw("stage") == "coarse";
            if (key == "lr") return coarse ? "5e-4" : "3e-4";
            if (key == "epochs") return coarse ? "20" : "35";
            throw ConfigError("config key " + key + " cannot be 'auto'");
        }
        return v;
    }

    std::map<std::string, std::string> values_;
};

} // namespace mambaloc

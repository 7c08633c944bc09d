#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mambaloc/tensor.hpp"

namespace mambaloc {

/// Side length of one map cell in meters. Cells overlap when the grid
/// stride is smaller than this.
inline constexpr double kCellSide = 30.0;

/// Closed class vocabulary for object instances.
inline const std::vector<std::string>& class_vocab() {
    static const std::vector<std::string> v{"building", "tree",    "pole",    "road",
                                            "sign",     "vehicle", "terrain", "fence"};
    return v;
}

inline std::size_t class_index(const std::string& label) {
    const auto& v = class_vocab();
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] == label) return i;
    }
    throw ValueError("unknown class label: " + label);
}

struct NamedColor {
    std::string name;
    std::array<double, 3> rgb;
};

/// Closed color vocabulary; instances carry the exact palette RGB.
inline const std::vector<NamedColor>& color_palette() {
    static const std::vector<NamedColor> palette{
        {"red", {0.80, 0.10, 0.10}},   {"green", {0.10, 0.60, 0.10}},
        {"blue", {0.15, 0.20, 0.80}},  {"gray", {0.50, 0.50, 0.50}},
        {"white", {0.95, 0.95, 0.95}}, {"black", {0.05, 0.05, 0.05}},
        {"yellow", {0.90, 0.80, 0.10}}, {"brown", {0.50, 0.30, 0.10}}};
    return palette;
}

/// Nearest palette entry (colors may carry small jitter).
inline const NamedColor& nearest_color(const std::array<double, 3>& rgb) {
    const NamedColor* best = nullptr;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& c : color_palette()) {
        double d = 0;
        for (int k = 0; k < 3; ++k) {
            const double diff = c.rgb[k] - rgb[k];
            d += diff * diff;
        }
        if (d < best_d) {
            best_d = d;
            best = &c;
        }
    }
    return *best;
}

/// One segmented object inside a cell. Point coordinates are cell-local
/// (origin at the cell center for x/y, ground plane for z).
struct ObjectInstance {
    std::uint64_t instance_id = 0;
    std::string class_label;
    std::array<double, 3> color_rgb{};
    std::vector<std::array<double, 3>> points;
    std::array<double, 3> centroid{};

    bool operator==(const ObjectInstance&) const = default;
};

/// One 30 x 30 m map cell with its object instances; the retrieval unit.
struct Submap {
    std::uint64_t cell_id = 0;
    std::array<double, 2> center_xy{};
    std::vector<ObjectInstance> instances;

    bool operator==(const Submap&) const = default;
};

/// One place description: a set of hint sentences plus the ground-truth
/// planar target in world coordinates.
struct TextQuery {
    std::uint64_t query_id = 0;
    std::uint64_t cell_id = 0;
    std::array<double, 2> target_xy{};
    std::vector<std::string> hints;
    std::string split; // train | val | test

    bool operator==(const TextQuery&) const = default;
};

struct World {
    std::vector<Submap> submaps;
    std::vector<TextQuery> queries;

    bool operator==(const World&) const = default;
};

inline void validate_instance(const ObjectInstance& inst) {
    if (inst.points.size() < 8) {
        throw ValueError("degenerate instance " + std::to_string(inst.instance_id) +
                         ": needs >= 8 points, has " + std::to_string(inst.points.size()));
    }
    std::array<double, 3> mean{0, 0, 0};
    for (const auto& p : inst.points) {
        for (int k = 0; k < 3; ++k) mean[k] += p[k];
    }
    for (int k = 0; k < 3; ++k) {
        mean[k] /= double(inst.points.size());
        if (std::abs(mean[k] - inst.centroid[k]) > 1e-9) {
            throw ValueError("instance " + std::to_string(inst.instance_id) +
                             ": centroid is not the point mean");
        }
    }
    const double half = kCellSide / 2.0;
    for (const auto& p : inst.points) {
        if (std::abs(p[0]) > half + 1e-9 || std::abs(p[1]) > half + 1e-9) {
            throw ValueError("instance " + std::to_string(inst.instance_id) +
                             ": point outside cell bounds");
        }
    }
}

inline void validate_submap(const Submap& s) {
    if (s.instances.empty() || s.instances.size() > 64) {
        throw ValueError("submap " + std::to_string(s.cell_id) +
                         ": instance count must be in [1, 64]");
    }
    for (const auto& inst : s.instances) validate_instance(inst);
}

} // namespace mambaloc

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mambaloc/data.hpp"
#include "mambaloc/rng.hpp"
#include "mambaloc/text_encoder.hpp" // fnv1a64, tokenize

namespace mambaloc {

struct WorldConfig {
    std::uint64_t seed = 17;
    std::size_t grid = 16;          // cells per side
    double stride = 10.0;           // meters between cell origins
    double cell_size = kCellSide;   // fixed 30 m extent
    std::size_t instances_min = 6;
    std::size_t instances_max = 12;
    std::size_t points_min = 24;
    std::size_t points_max = 64;
    std::size_t hints_per_query = 3;
    std::size_t queries_per_cell = 4;
    double split_train = 0.6;
    double split_val = 0.2;
    double split_test = 0.2;

    void validate() const {
        if (grid < 3) throw ConfigError("grid must be >= 3 to split into three regions");
        if (stride <= 0 || stride > cell_size) {
            throw ConfigError("stride must be in (0, cell_size]");
        }
        if (instances_min < 1 || instances_max < instances_min || instances_max > 64) {
            throw ConfigError("instance count range must satisfy 1 <= min <= max <= 64");
        }
        if (points_min < 8 || points_max < points_min) {
            throw ConfigError("point count range must satisfy 8 <= min <= max");
        }
        if (hints_per_query < 1 || hints_per_query > 12) {
            throw ConfigError("hints_per_query must be in [1, 12]");
        }
        if (queries_per_cell < 1) throw ConfigError("queries_per_cell must be >= 1");
        const double total = split_train + split_val + split_test;
        if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
        if (split_train <= 0 || split_val <= 0 || split_test <= 0) {
            throw ConfigError("all split fractions must be positive");
        }
    }

    std::array<double, 2> cell_center(std::size_t gx, std::size_t gy) const {
        return {double(gx) * stride + cell_size / 2.0, double(gy) * stride + cell_size / 2.0};
    }

    std::uint64_t cell_id(std::size_t gx, std::size_t gy) const { return gy * grid + gx; }
};

/// 8-way compass sector of (dx, dy) with +x east and +y north. Implemented
/// with slope comparisons against tan(22.5) and tan(67.5) so the result is
/// identical on every platform.
inline std::string compass_sector(double dx, double dy) {
    constexpr double kTanLo = 0.4142135623730950; // tan(22.5 deg)
    constexpr double kTanHi = 2.414213562373095;  // tan(67.5 deg)
    const double ax = std::abs(dx), ay = std::abs(dy);
    if (ay <= kTanLo * ax) return dx >= 0 ? "east" : "west";
    if (ay >= kTanHi * ax) return dy >= 0 ? "north" : "south";
    if (dx >= 0) return dy >= 0 ? "north-east" : "south-east";
    return dy >= 0 ? "north-west" : "south-west";
}

namespace detail {

inline std::string compose_hint(std::size_t template_idx, long long dist_m,
                                const std::string& direction, const std::string& color,
                                const std::string& cls) {
    std::ostringstream os;
    switch (template_idx % 3) {
    case 0:
        os << "The pose is " << dist_m << " meters " << direction << " of a " << color << ' '
           << cls << '.';
        break;
    case 1:
        os << "It is " << dist_m << " meters " << direction << " of the " << color << ' '
           << cls << '.';
        break;
    default:
        os << "The target lies " << dist_m << " meters " << direction << " of a " << color
           << ' ' << cls << '.';
        break;
    }
    return os.str();
}

inline std::string compose_beside_hint(const std::string& color, const std::string& cls) {
    return "The pose is right beside a " + color + ' ' + cls + '.';
}

} // namespace detail

enum class Split { Train, Val, Test };

inline std::string split_name(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    default: return "test";
    }
}

inline Split split_from_name(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw ValueError("unknown split name: " + s);
}

/// Contiguous column-block split of the cell grid. The seed permutes
/// which block takes which role; blocks stay spatially contiguous so
/// train and evaluation regions never interleave.
inline std::vector<Split> split_cells(const WorldConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::size_t g = cfg.grid;
    std::array<Split, 3> roles{Split::Train, Split::Val, Split::Test};
    Rng rng = Rng::derive(seed, 0x5011);
    rng.shuffle(roles);

    auto fraction_of = [&](Split s) {
        switch (s) {
        case Split::Train: return cfg.split_train;
        case Split::Val: return cfg.split_val;
        default: return cfg.split_test;
        }
    };
    // Column widths follow each role's fraction; every block stays
    // non-empty and they tile the grid exactly.
    std::array<std::size_t, 3> width{};
    width[0] = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(fraction_of(roles[0]) * double(g))));
    width[0] = std::min(width[0], g - 2);
    width[1] = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(fraction_of(roles[1]) * double(g))));
    width[1] = std::min(width[1], g - width[0] - 1);
    width[2] = g - width[0] - width[1];

    std::vector<Split> out(g * g);
    for (std::size_t gy = 0; gy < g; ++gy) {
        for (std::size_t gx = 0; gx < g; ++gx) {
            const std::size_t block = gx < width[0] ? 0 : (gx < width[0] + width[1] ? 1 : 2);
            out[cfg.cell_id(gx, gy)] = roles[block];
        }
    }
    return out;
}

/// Tags every query with its cell's split and returns the cell-id sets.
inline std::array<std::set<std::uint64_t>, 3> split_dataset(World& world,
                                                            const WorldConfig& cfg,
                                                            std::uint64_t seed) {
    const auto assignment = split_cells(cfg, seed);
    std::array<std::set<std::uint64_t>, 3> sets;
    for (const auto& s : world.submaps) {
        sets[static_cast<std::size_t>(assignment[s.cell_id])].insert(s.cell_id);
    }
    for (auto& q : world.queries) {
        q.split = split_name(assignment[q.cell_id]);
    }
    return sets;
}

/// Deterministic synthetic world: per-cell instance sets and rule-based
/// hint sentences whose direction and distance slots are computed from
/// the true geometry. A pure function of the config.
inline World generate_world(const WorldConfig& cfg) {
    cfg.validate();
    World world;
    const double half = cfg.cell_size / 2.0;
    const double margin = 1.5;      // keeps blob centers clear of the cell edge
    const double sigma = 1.0;       // point blob spread
    const auto& classes = class_vocab();
    const auto& palette = color_palette();

    for (std::size_t gy = 0; gy < cfg.grid; ++gy) {
        for (std::size_t gx = 0; gx < cfg.grid; ++gx) {
            const std::uint64_t cid = cfg.cell_id(gx, gy);
            Rng rng = Rng::derive(cfg.seed, cid);
            Submap cell;
            cell.cell_id = cid;
            cell.center_xy = cfg.cell_center(gx, gy);

            const std::size_t n_inst =
                cfg.instances_min + rng.below(cfg.instances_max - cfg.instances_min + 1);
            std::vector<std::size_t> color_of(n_inst);
            for (std::size_t i = 0; i < n_inst; ++i) {
                ObjectInstance inst;
                inst.instance_id = i;
                inst.class_label = classes[rng.below(classes.size())];
                color_of[i] = rng.below(palette.size());
                inst.color_rgb = palette[color_of[i]].rgb;
                const double cx = rng.uniform(-half + margin, half - margin);
                const double cy = rng.uniform(-half + margin, half - margin);
                const double cz = rng.uniform(0.5, 4.0);
                const std::size_t n_pts =
                    cfg.points_min + rng.below(cfg.points_max - cfg.points_min + 1);
                inst.points.reserve(n_pts);
                std::array<double, 3> sum{0, 0, 0};
                for (std::size_t p = 0; p < n_pts; ++p) {
                    std::array<double, 3> pt{
                        std::min(half, std::max(-half, cx + sigma * rng.gaussian())),
                        std::min(half, std::max(-half, cy + sigma * rng.gaussian())),
                        std::min(8.0, std::max(0.0, cz + sigma * rng.gaussian()))};
                    for (int k = 0; k < 3; ++k) sum[k] += pt[k];
                    inst.points.push_back(pt);
                }
                for (int k = 0; k < 3; ++k) inst.centroid[k] = sum[k] / double(n_pts);
                cell.instances.push_back(std::move(inst));
            }

            // Queries: targets sampled inside the nearest-center region of
            // this cell (slightly shrunk so the nearest cell is unique).
            for (std::size_t qi = 0; qi < cfg.queries_per_cell; ++qi) {
                TextQuery q;
                q.query_id = cid * 1000 + qi;
                q.cell_id = cid;
                const double limit = cfg.stride / 2.0 - 1e-6;
                const double tx = rng.uniform(-limit, limit);
                const double ty = rng.uniform(-limit, limit);
                q.target_xy = {cell.center_xy[0] + tx, cell.center_xy[1] + ty};

                std::vector<std::size_t> anchor_order(n_inst);
                for (std::size_t i = 0; i < n_inst; ++i) anchor_order[i] = i;
                rng.shuffle(anchor_order);
                const std::size_t n_hints = std::min(cfg.hints_per_query, n_inst);
                for (std::size_t h = 0; h < n_hints; ++h) {
                    const auto& anchor = cell.instances[anchor_order[h]];
                    const std::string& color = palette[color_of[anchor_order[h]]].name;
                    const double dx = tx - anchor.centroid[0];
                    const double dy = ty - anchor.centroid[1];
                    const double dist = std::sqrt(dx * dx + dy * dy);
                    const std::size_t tmpl = static_cast<std::size_t>(rng.below(3));
                    if (dist < 0.5) {
                        q.hints.push_back(
                            detail::compose_beside_hint(color, anchor.class_label));
                    } else {
                        q.hints.push_back(detail::compose_hint(tmpl, std::llround(dist),
                                                               compass_sector(dx, dy), color,
                                                               anchor.class_label));
                    }
                }
                world.queries.push_back(std::move(q));
            }
            world.submaps.push_back(std::move(cell));
        }
    }
    return world;
}

/// Re-parses one hint against the cell geometry: some instance with the
/// stated color and class must sit at the stated distance and bearing
/// from the target. Returns false when no instance is consistent.
inline bool validate_hint(const std::string& hint, const Submap& cell,
                          const std::array<double, 2>& target_world) {
    const auto tokens = tokenize(hint);
    if (tokens.size() < 2) return false;
    const std::string cls = tokens.back();
    const std::string color = tokens[tokens.size() - 2];

    const double tx = target_world[0] - cell.center_xy[0];
    const double ty = target_world[1] - cell.center_xy[1];

    const bool beside = hint.find("right beside") != std::string::npos;
    long long stated_dist = -1;
    std::string stated_dir;
    if (!beside) {
        for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
            if (tokens[i] == "meters") {
                try {
                    stated_dist = std::stoll(tokens[i - 1]);
                } catch (...) {
                    return false;
                }
                stated_dir = tokens[i + 1];
                // two-word sectors ("north-east" tokenizes to two tokens)
                if (i + 2 < tokens.size() &&
                    (tokens[i + 2] == "east" || tokens[i + 2] == "west")) {
                    stated_dir += "-" + tokens[i + 2];
                }
                break;
            }
        }
        if (stated_dist < 0) return false;
    }

    for (const auto& inst : cell.instances) {
        if (nearest_color(inst.color_rgb).name != color || inst.class_label != cls) continue;
        const double dx = tx - inst.centroid[0];
        const double dy = ty - inst.centroid[1];
        const double dist = std::sqrt(dx * dx + dy * dy);
        if (beside) {
            if (dist < 0.5) return true;
            continue;
        }
        if (std::llround(dist) == stated_dist && compass_sector(dx, dy) == stated_dir) {
            return true;
        }
    }
    return false;
}

/// Whole-dataset self-consistency: every hint validates, every target and
/// every instance point lies inside its cell.
inline void validate_world(const World& world) {
    std::map<std::uint64_t, const Submap*> by_id;
    for (const auto& s : world.submaps) {
        validate_submap(s);
        by_id[s.cell_id] = &s;
    }
    const double half = kCellSide / 2.0;
    for (const auto& q : world.queries) {
        auto it = by_id.find(q.cell_id);
        if (it == by_id.end()) {
            throw ValueError("query " + std::to_string(q.query_id) + ": unknown cell");
        }
        const Submap& cell = *it->second;
        if (std::abs(q.target_xy[0] - cell.center_xy[0]) > half ||
            std::abs(q.target_xy[1] - cell.center_xy[1]) > half) {
            throw ValueError("query " + std::to_string(q.query_id) + ": target outside cell");
        }
        for (const auto& hint : q.hints) {
            if (!validate_hint(hint, cell, q.target_xy)) {
                throw ValueError("query " + std::to_string(q.query_id) +
                                 ": hint inconsistent with geometry: " + hint);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// JSONL persistence
// ---------------------------------------------------------------------------

inline nlohmann::json submap_to_json(const Submap& s) {
    nlohmann::json rec;
    rec["kind"] = "submap";
    rec["cell_id"] = s.cell_id;
    rec["center"] = s.center_xy;
    nlohmann::json instances = nlohmann::json::array();
    for (const auto& inst : s.instances) {
        nlohmann::json j;
        j["id"] = inst.instance_id;
        j["class"] = inst.class_label;
        j["color"] = inst.color_rgb;
        j["centroid"] = inst.centroid;
        j["points"] = inst.points;
        instances.push_back(std::move(j));
    }
    rec["instances"] = std::move(instances);
    return rec;
}

inline nlohmann::json query_to_json(const TextQuery& q) {
    nlohmann::json rec;
    rec["kind"] = "query";
    rec["query_id"] = q.query_id;
    rec["cell_id"] = q.cell_id;
    rec["target"] = q.target_xy;
    rec["hints"] = q.hints;
    rec["split"] = q.split;
    return rec;
}

inline void append_record(World& world, const nlohmann::json& rec, std::size_t line_no) {
    if (!rec.contains("kind")) {
        throw IoError("line " + std::to_string(line_no) + ": record has no kind");
    }
    const std::string kind = rec.at("kind").get<std::string>();
    if (kind == "submap") {
        Submap s;
        s.cell_id = rec.at("cell_id").get<std::uint64_t>();
        s.center_xy = rec.at("center").get<std::array<double, 2>>();
        for (const auto& j : rec.at("instances")) {
            ObjectInstance inst;
            inst.instance_id = j.at("id").get<std::uint64_t>();
            inst.class_label = j.at("class").get<std::string>();
            inst.color_rgb = j.at("color").get<std::array<double, 3>>();
            inst.centroid = j.at("centroid").get<std::array<double, 3>>();
            inst.points = j.at("points").get<std::vector<std::array<double, 3>>>();
            s.instances.push_back(std::move(inst));
        }
        world.submaps.push_back(std::move(s));
    } else if (kind == "query") {
        TextQuery q;
        q.query_id = rec.at("query_id").get<std::uint64_t>();
        q.cell_id = rec.at("cell_id").get<std::uint64_t>();
        q.target_xy = rec.at("target").get<std::array<double, 2>>();
        q.hints = rec.at("hints").get<std::vector<std::string>>();
        q.split = rec.at("split").get<std::string>();
        world.queries.push_back(std::move(q));
    } else {
        throw IoError("line " + std::to_string(line_no) + ": unknown record kind '" + kind +
                      "'");
    }
}

/// One JSONL record per line: submaps in cell order, then queries.
inline void write_world_jsonl(const World& world, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const auto& s : world.submaps) out << submap_to_json(s).dump() << '\n';
    for (const auto& q : world.queries) out << query_to_json(q).dump() << '\n';
    if (!out) throw IoError("write failed: " + path);
}

inline World read_world_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    World world;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IoError("line " + std::to_string(line_no) + ": parse error: " + e.what());
        }
        try {
            append_record(world, rec, line_no);
        } catch (const nlohmann::json::exception& e) {
            throw IoError("line " + std::to_string(line_no) + ": schema error: " + e.what());
        }
    }
    return world;
}

// ---------------------------------------------------------------------------
// Split-per-file dataset directories
// ---------------------------------------------------------------------------

inline std::uint64_t file_digest(const std::string& path);
inline std::string hex64(std::uint64_t v);

struct Dataset {
    World world;
    std::string digest; // combined digest of the three split files
};

/// Writes train/val/test JSONL plus a manifest with the seed and per-file
/// digests. Refuses to overwrite an existing dataset unless forced.
inline void write_dataset(const World& world, const WorldConfig& cfg, const std::string& dir,
                          bool force = false) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::string manifest_path = dir + "/manifest.json";
    if (!force && fs::exists(manifest_path)) {
        throw ConfigError("dataset already exists at " + dir + " (use --force to overwrite)");
    }
    std::map<std::uint64_t, std::string> cell_split;
    for (const auto& q : world.queries) cell_split[q.cell_id] = q.split;

    nlohmann::json files = nlohmann::json::object();
    std::string combined;
    nlohmann::json counts = nlohmann::json::object();
    for (const std::string split : {"train", "val", "test"}) {
        World part;
        for (const auto& s : world.submaps) {
            auto it = cell_split.find(s.cell_id);
            const std::string sp = it == cell_split.end() ? "train" : it->second;
            if (sp == split) part.submaps.push_back(s);
        }
        for (const auto& q : world.queries) {
            if (q.split == split) part.queries.push_back(q);
        }
        const std::string path = dir + "/" + split + ".jsonl";
        write_world_jsonl(part, path);
        const std::string digest = hex64(file_digest(path));
        files[split + ".jsonl"] = digest;
        combined += digest;
        counts[split] = {{"cells", part.submaps.size()}, {"queries", part.queries.size()}};
    }
    nlohmann::json manifest;
    manifest["seed"] = cfg.seed;
    manifest["grid"] = cfg.grid;
    manifest["stride"] = cfg.stride;
    manifest["cell_size"] = cfg.cell_size;
    manifest["files"] = std::move(files);
    manifest["counts"] = std::move(counts);
    manifest["digest"] = hex64(fnv1a64(combined));
    std::ofstream out(manifest_path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + manifest_path);
    out << manifest.dump(2) << '\n';
}

/// Reads a dataset directory back into one world. Record order is
/// canonical (cells then queries, ascending ids), so a write/read pair
/// is exact.
inline Dataset read_dataset(const std::string& dir) {
    const std::string manifest_path = dir + "/manifest.json";
    std::ifstream mf(manifest_path, std::ios::binary);
    if (!mf) throw DependencyError("missing dataset manifest: " + manifest_path);
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(manifest_path + ": " + e.what());
    }
    Dataset ds;
    std::string combined;
    for (const std::string split : {"train", "val", "test"}) {
        const std::string path = dir + "/" + split + ".jsonl";
        World part = read_world_jsonl(path);
        combined += hex64(file_digest(path));
        ds.world.submaps.insert(ds.world.submaps.end(), part.submaps.begin(),
                                part.submaps.end());
        ds.world.queries.insert(ds.world.queries.end(), part.queries.begin(),
                                part.queries.end());
    }
    std::sort(ds.world.submaps.begin(), ds.world.submaps.end(),
              [](const Submap& a, const Submap& b) { return a.cell_id < b.cell_id; });
    std::sort(ds.world.queries.begin(), ds.world.queries.end(),
              [](const TextQuery& a, const TextQuery& b) { return a.query_id < b.query_id; });
    ds.digest = hex64(fnv1a64(combined));
    if (manifest.contains("digest") && manifest["digest"].get<std::string>() != ds.digest) {
        throw IoError("dataset files do not match manifest digest in " + dir);
    }
    return ds;
}

inline std::uint64_t file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 14];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

} // namespace mambaloc

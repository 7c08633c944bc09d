#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <vector>

#include <json.hpp>

#include "mambaloc/data.hpp"
#include "mambaloc/tensor.hpp"

namespace mambaloc {

/// Database of unit-norm submap descriptors searched with exact
/// exhaustive Euclidean distance. Immutable once built.
class EmbeddingIndex {
public:
    explicit EmbeddingIndex(std::size_t dim) : dim_(dim) {}

    void add(std::uint64_t cell_id, std::array<double, 2> center,
             const std::vector<double>& vec) {
        if (vec.size() != dim_) throw ShapeError("index: descriptor width mismatch");
        double s = 0.0;
        for (double v : vec) s += v * v;
        if (std::abs(std::sqrt(s) - 1.0) > 1e-5) {
            throw ValueError("index: descriptor for cell " + std::to_string(cell_id) +
                             " is not unit-norm");
        }
        rows_.insert(rows_.end(), vec.begin(), vec.end());
        cell_ids_.push_back(cell_id);
        centers_.push_back(center);
    }

    std::size_t size() const { return cell_ids_.size(); }
    std::size_t dim() const { return dim_; }
    std::uint64_t cell_id(std::size_t row) const { return cell_ids_[row]; }
    const std::array<double, 2>& center(std::size_t row) const { return centers_[row]; }

    double distance(std::size_t row, const std::vector<double>& query) const {
        const double* r = rows_.data() + row * dim_;
        double s = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) {
            const double d = r[j] - query[j];
            s += d * d;
        }
        return std::sqrt(s);
    }

private:
    std::size_t dim_;
    std::vector<double> rows_;
    std::vector<std::uint64_t> cell_ids_;
    std::vector<std::array<double, 2>> centers_;
};

struct RankedCell {
    std::uint64_t cell_id;
    std::array<double, 2> center;
    double distance;
};

struct TopKResult {
    std::vector<RankedCell> ranked; // ascending distance, ties by cell id
    bool truncated = false;         // k exceeded the index size
};

/// Exact k-nearest cells by Euclidean distance, ties broken by cell id.
inline TopKResult top_k(const EmbeddingIndex& index, const std::vector<double>& query,
                        std::size_t k) {
    if (k < 1) throw ValueError("top_k: k must be >= 1");
    if (index.size() == 0) throw ValueError("top_k: empty index");
    TopKResult result;
    if (k > index.size()) {
        result.truncated = true;
        k = index.size();
    }
    std::vector<std::size_t> order(index.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> dist(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) dist[i] = index.distance(i, query);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (dist[a] != dist[b]) return dist[a] < dist[b];
        return index.cell_id(a) < index.cell_id(b);
    });
    result.ranked.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t row = order[i];
        result.ranked.push_back({index.cell_id(row), index.center(row), dist[row]});
    }
    return result;
}

/// Fraction of queries whose true cell appears within the first k results.
inline std::map<std::size_t, double> submap_recall_at_k(
    const std::vector<std::vector<std::uint64_t>>& rankings,
    const std::vector<std::uint64_t>& ground_truth, const std::vector<std::size_t>& k_set) {
    if (rankings.size() != ground_truth.size()) {
        throw ShapeError("submap_recall: ranking/ground-truth count mismatch");
    }
    std::map<std::size_t, double> out;
    for (std::size_t k : k_set) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < rankings.size(); ++i) {
            const auto& r = rankings[i];
            const std::size_t upto = std::min(k, r.size());
            for (std::size_t j = 0; j < upto; ++j) {
                if (r[j] == ground_truth[i]) {
                    ++hits;
                    break;
                }
            }
        }
        out[k] = rankings.empty() ? 0.0 : double(hits) / double(rankings.size());
    }
    return out;
}

/// localization_recall[(eps, k)] = fraction of queries whose best
/// prediction among the top k is within eps meters of ground truth.
inline std::vector<std::vector<double>> localization_recall(
    const std::vector<std::vector<std::array<double, 2>>>& predictions,
    const std::vector<std::array<double, 2>>& ground_truth,
    const std::vector<double>& eps_set, const std::vector<std::size_t>& k_set) {
    if (predictions.size() != ground_truth.size()) {
        throw ShapeError("localization_recall: prediction/ground-truth count mismatch");
    }
    std::vector<std::vector<double>> grid(eps_set.size(),
                                          std::vector<double>(k_set.size(), 0.0));
    if (predictions.empty()) return grid;
    for (std::size_t qi = 0; qi < predictions.size(); ++qi) {
        const auto& preds = predictions[qi];
        const auto& gt = ground_truth[qi];
        std::vector<double> errors(preds.size());
        for (std::size_t j = 0; j < preds.size(); ++j) {
            errors[j] = std::hypot(preds[j][0] - gt[0], preds[j][1] - gt[1]);
        }
        for (std::size_t ei = 0; ei < eps_set.size(); ++ei) {
            for (std::size_t ki = 0; ki < k_set.size(); ++ki) {
                const std::size_t upto = std::min(k_set[ki], errors.size());
                double best = std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < upto; ++j) best = std::min(best, errors[j]);
                if (best < eps_set[ei]) grid[ei][ki] += 1.0;
            }
        }
    }
    for (auto& row : grid) {
        for (auto& v : row) v /= double(predictions.size());
    }
    return grid;
}

/// Mean top-1 planar error divided by the 30 m cell side.
inline double mean_normalized_error(const std::vector<std::array<double, 2>>& top1_predictions,
                                    const std::vector<std::array<double, 2>>& ground_truth) {
    if (top1_predictions.size() != ground_truth.size()) {
        throw ShapeError("mean_normalized_error: count mismatch");
    }
    if (top1_predictions.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < top1_predictions.size(); ++i) {
        total += std::hypot(top1_predictions[i][0] - ground_truth[i][0],
                            top1_predictions[i][1] - ground_truth[i][1]);
    }
    return total / double(top1_predictions.size()) / kCellSide;
}

/// The full metric grid: submap recall at {1,3,5}, localization recall
/// over eps {5,10,15} x k {1,5,10}, and the normalized top-1 error.
struct EvalReport {
    static const std::vector<std::size_t>& submap_ks() {
        static const std::vector<std::size_t> v{1, 3, 5};
        return v;
    }
    static const std::vector<double>& eps_set() {
        static const std::vector<double> v{5.0, 10.0, 15.0};
        return v;
    }
    static const std::vector<std::size_t>& loc_ks() {
        static const std::vector<std::size_t> v{1, 5, 10};
        return v;
    }

    std::map<std::size_t, double> submap_recall;    // k -> recall
    std::vector<std::vector<double>> loc_recall;    // [eps][k]
    double mean_norm_error = 0.0;
    std::size_t samples = 0;

    nlohmann::json to_json() const {
        nlohmann::json j;
        nlohmann::json sr;
        for (std::size_t k : submap_ks()) {
            sr["k" + std::to_string(k)] = submap_recall.at(k);
        }
        j["submap_recall"] = std::move(sr);
        nlohmann::json lr;
        for (std::size_t ei = 0; ei < eps_set().size(); ++ei) {
            nlohmann::json row;
            for (std::size_t ki = 0; ki < loc_ks().size(); ++ki) {
                row["k" + std::to_string(loc_ks()[ki])] = loc_recall[ei][ki];
            }
            lr["eps" + std::to_string(int(eps_set()[ei]))] = std::move(row);
        }
        j["localization_recall"] = std::move(lr);
        j["mean_normalized_error"] = mean_norm_error;
        j["samples"] = samples;
        return j;
    }
};

} // namespace mambaloc

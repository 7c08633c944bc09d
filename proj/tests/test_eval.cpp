#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "mambaloc/evaluation.hpp"
#include "mambaloc/rng.hpp"

using namespace mambaloc;

namespace {

std::vector<double> random_unit(std::size_t dim, Rng& rng) {
    std::vector<double> v(dim);
    double s = 0;
    for (auto& x : v) {
        x = rng.uniform(-1, 1);
        s += x * x;
    }
    s = std::sqrt(s);
    for (auto& x : v) x /= s > 0 ? s : 1.0;
    return v;
}

EmbeddingIndex random_index(std::size_t m, std::size_t dim, Rng& rng) {
    EmbeddingIndex index(dim);
    for (std::size_t i = 0; i < m; ++i) {
        index.add(i, {double(i), 0.0}, random_unit(dim, rng));
    }
    return index;
}

} // namespace

TEST_CASE("top_k: a stored row ranks first with distance zero") {
    Rng rng(1);
    auto index = random_index(20, 8, rng);
    EmbeddingIndex probe(8);
    auto stored = random_unit(8, rng);
    probe.add(0, {0, 0}, stored);
    EmbeddingIndex index2(8);
    for (std::size_t i = 0; i < 10; ++i) index2.add(i, {double(i), 0.0}, random_unit(8, rng));
    index2.add(10, {10, 0}, stored);
    auto result = top_k(index2, stored, 3);
    REQUIRE(result.ranked.front().cell_id == 10);
    REQUIRE(result.ranked.front().distance == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("top_k with k = M returns a full sorted permutation") {
    Rng rng(2);
    auto index = random_index(12, 6, rng);
    auto q = random_unit(6, rng);
    auto result = top_k(index, q, 12);
    REQUIRE_FALSE(result.truncated);
    REQUIRE(result.ranked.size() == 12);
    for (std::size_t i = 1; i < 12; ++i) {
        REQUIRE(result.ranked[i - 1].distance <= result.ranked[i].distance);
    }
    std::set<std::uint64_t> ids;
    for (const auto& r : result.ranked) ids.insert(r.cell_id);
    REQUIRE(ids.size() == 12);
}

TEST_CASE("top_k truncates and flags when k exceeds the index") {
    Rng rng(3);
    auto index = random_index(5, 6, rng);
    auto result = top_k(index, random_unit(6, rng), 9);
    REQUIRE(result.truncated);
    REQUIRE(result.ranked.size() == 5);
}

TEST_CASE("top_k agrees with a brute-force re-sort oracle on 100 draws") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed + 500);
        const std::size_t m = 5 + rng.below(30);
        auto index = random_index(m, 8, rng);
        auto q = random_unit(8, rng);
        const std::size_t k = 1 + rng.below(m);
        auto fast = top_k(index, q, k);

        // oracle: full sort of (distance, cell_id)
        std::vector<std::pair<double, std::uint64_t>> all;
        for (std::size_t i = 0; i < m; ++i) all.push_back({index.distance(i, q), index.cell_id(i)});
        std::sort(all.begin(), all.end());
        for (std::size_t i = 0; i < k; ++i) {
            REQUIRE(fast.ranked[i].cell_id == all[i].second);
            REQUIRE(fast.ranked[i].distance == Catch::Approx(all[i].first).margin(1e-12));
        }
    }
}

TEST_CASE("top_k rejects empty index and k = 0; unit norm is enforced") {
    EmbeddingIndex index(4);
    REQUIRE_THROWS_AS(top_k(index, {1, 0, 0, 0}, 1), ValueError);
    REQUIRE_THROWS_AS(index.add(0, {0, 0}, {2.0, 0, 0, 0}), ValueError);
    index.add(0, {0, 0}, {1.0, 0, 0, 0});
    REQUIRE_THROWS_AS(top_k(index, {1, 0, 0, 0}, 0), ValueError);
}

TEST_CASE("submap recall closed cases") {
    // true cell always ranked first
    std::vector<std::vector<std::uint64_t>> rankings{{7, 1, 2}, {9, 0, 1}};
    std::vector<std::uint64_t> gt{7, 9};
    auto r = submap_recall_at_k(rankings, gt, {1, 3});
    REQUIRE(r[1] == 1.0);
    REQUIRE(r[3] == 1.0);

    // true cell always ranked second
    std::vector<std::vector<std::uint64_t>> second{{1, 7, 2}, {0, 9, 1}};
    auto r2 = submap_recall_at_k(second, gt, {1, 3});
    REQUIRE(r2[1] == 0.0);
    REQUIRE(r2[3] == 1.0);
}

TEST_CASE("chance-level recall@1 over random rankings") {
    Rng rng(11);
    const std::size_t m = 256, trials = 10000;
    std::size_t hits = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        // a uniformly random cell ranked first vs a uniform ground truth
        if (rng.below(m) == rng.below(m)) ++hits;
    }
    const double p = double(hits) / double(trials);
    const double sigma = std::sqrt((1.0 / m) * (1.0 - 1.0 / m) / double(trials));
    REQUIRE(std::abs(p - 1.0 / m) < 3.0 * sigma + 1e-12);
}

TEST_CASE("localization recall closed case and monotonicity") {
    std::vector<std::vector<std::array<double, 2>>> preds{
        {{3.0, 0.0}}, {{7.0, 0.0}}, {{20.0, 0.0}}};
    std::vector<std::array<double, 2>> gt{{0, 0}, {0, 0}, {0, 0}};
    auto grid = localization_recall(preds, gt, {5.0}, {1});
    REQUIRE(grid[0][0] == Catch::Approx(1.0 / 3.0));

    Rng rng(12);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.below(8);
        std::vector<std::vector<std::array<double, 2>>> p(n);
        std::vector<std::array<double, 2>> g(n);
        for (auto& row : p) {
            const std::size_t k = 1 + rng.below(10);
            for (std::size_t j = 0; j < k; ++j)
                row.push_back({rng.uniform(-20, 20), rng.uniform(-20, 20)});
        }
        for (auto& x : g) x = {rng.uniform(-20, 20), rng.uniform(-20, 20)};
        auto m = localization_recall(p, g, {5, 10, 15}, {1, 5, 10});
        for (std::size_t ei = 0; ei < 3; ++ei)
            for (std::size_t ki = 0; ki < 3; ++ki) {
                if (ei > 0) REQUIRE(m[ei][ki] >= m[ei - 1][ki]);
                if (ki > 0) REQUIRE(m[ei][ki] >= m[ei][ki - 1]);
            }
    }
}

TEST_CASE("localization recall matches the closed-form CDF of a known error law") {
    // Planar error drawn as distance U[0,20) at a uniform angle:
    // P(err < eps) = eps/20 for eps <= 20.
    Rng rng(13);
    const std::size_t n = 10000;
    std::vector<std::vector<std::array<double, 2>>> preds(n);
    std::vector<std::array<double, 2>> gt(n, {0, 0});
    for (auto& row : preds) {
        const double r = rng.uniform(0, 20);
        const double theta = rng.uniform(0, 2 * 3.14159265358979323846);
        row.push_back({r * std::cos(theta), r * std::sin(theta)});
    }
    auto grid = localization_recall(preds, gt, {5, 10, 15}, {1});
    REQUIRE(grid[0][0] == Catch::Approx(5.0 / 20).margin(0.02));
    REQUIRE(grid[1][0] == Catch::Approx(10.0 / 20).margin(0.02));
    REQUIRE(grid[2][0] == Catch::Approx(15.0 / 20).margin(0.02));
}

TEST_CASE("mean normalized error closed forms") {
    std::vector<std::array<double, 2>> gt{{1, 2}, {3, 4}};
    REQUIRE(mean_normalized_error(gt, gt) == 0.0);

    std::vector<std::array<double, 2>> off{{4, 2}, {6, 4}}; // constant 3 m error
    REQUIRE(mean_normalized_error(off, gt) == Catch::Approx(0.1));

    // opposite cell corners: error 30*sqrt(2), normalized sqrt(2)
    std::vector<std::array<double, 2>> corner_pred{{15, 15}};
    std::vector<std::array<double, 2>> corner_gt{{-15, -15}};
    REQUIRE(mean_normalized_error(corner_pred, corner_gt) ==
            Catch::Approx(std::sqrt(2.0)).epsilon(1e-9));
}

TEST_CASE("eval report json carries exactly the declared grid") {
    EvalReport report;
    report.submap_recall = {{1, 0.5}, {3, 0.6}, {5, 0.7}};
    report.loc_recall = {{0.1, 0.2, 0.3}, {0.2, 0.3, 0.4}, {0.3, 0.4, 0.5}};
    report.mean_norm_error = 0.25;
    report.samples = 42;
    auto j = report.to_json();
    REQUIRE(j.size() == 4);
    REQUIRE(j["submap_recall"].size() == 3);
    REQUIRE(j["localization_recall"].size() == 3);
    for (const auto& eps : {"eps5", "eps10", "eps15"}) {
        REQUIRE(j["localization_recall"][eps].size() == 3);
        for (const auto& k : {"k1", "k5", "k10"}) {
            REQUIRE(j["localization_recall"][eps].contains(k));
        }
    }
    REQUIRE(j["mean_normalized_error"] == 0.25);
    REQUIRE(j["samples"] == 42);
}

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mambaloc/gradcheck.hpp"
#include "mambaloc/losses.hpp"

using namespace mambaloc;

namespace {

// N unit rows, uniformly random directions.
Tensor<double> random_unit_rows(std::size_t n, std::size_t c, Rng& rng) {
    auto raw = Tensor<double>::uniform({n, c}, rng, 1.0);
    return l2_normalize_rows(raw);
}

Tensor<double> identity_rows(std::size_t n) {
    std::vector<double> d(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
    return Tensor<double>({n, n}, std::move(d));
}

} // namespace

TEST_CASE("contrastive loss is exactly zero for a single pair") {
    Rng rng(1);
    auto p = random_unit_rows(1, 6, rng);
    auto t = random_unit_rows(1, 6, rng);
    REQUIRE(contrastive_loss(p, t, 0.07).item() == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("identical rows give 2 ln N at tau = 1") {
    for (std::size_t n : {2ul, 4ul, 8ul}) {
        std::vector<double> row{1.0, 0.0, 0.0};
        std::vector<double> data;
        for (std::size_t i = 0; i < n; ++i) data.insert(data.end(), row.begin(), row.end());
        auto p = Tensor<double>({n, 3}, data);
        auto t = Tensor<double>({n, 3}, data);
        REQUIRE(contrastive_loss(p, t, 1.0).item() ==
                Catch::Approx(2.0 * std::log(double(n))).margin(1e-6));
    }
}

TEST_CASE("saturated similarities drive the loss to zero") {
    // Antipodal unit pair: similarity matrix is [[1,-1],[-1,1]]; tau=0.05
    // scales it to +-20.
    auto p = Tensor<double>({2, 2}, {1, 0, -1, 0});
    auto t = Tensor<double>({2, 2}, {1, 0, -1, 0});
    REQUIRE(contrastive_loss(p, t, 0.05).item() < 1e-8);

    // Orthogonal one-hot rows: diagonal 20, off-diagonal 0.
    auto eye = identity_rows(4);
    REQUIRE(contrastive_loss(eye, eye, 0.05).item() < 1e-8);
}

TEST_CASE("non-normalized rows are rejected") {
    auto p = Tensor<double>({2, 2}, {2, 0, 0, 1});
    auto t = identity_rows(2);
    REQUIRE_THROWS_AS(contrastive_loss(p, t, 0.07), ValueError);
}

TEST_CASE("symmetric mode is invariant to swapping the two sides") {
    Rng rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        auto p = random_unit_rows(5, 8, rng);
        auto t = random_unit_rows(5, 8, rng);
        const double a = contrastive_loss(p, t, 0.3).item();
        const double b = contrastive_loss(t, p, 0.3).item();
        REQUIRE(a == Catch::Approx(b).margin(1e-10));
    }
}

TEST_CASE("loss is invariant to a simultaneous row permutation") {
    Rng rng(3);
    auto p = random_unit_rows(6, 8, rng);
    auto t = random_unit_rows(6, 8, rng);
    const double base = contrastive_loss(p, t, 0.2).item();
    std::vector<std::size_t> perm{3, 1, 5, 0, 2, 4};
    std::vector<double> pd(p.numel()), td(t.numel());
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 8; ++j) {
            pd[i * 8 + j] = p.at(perm[i], j);
            td[i * 8 + j] = t.at(perm[i], j);
        }
    const double permuted =
        contrastive_loss(Tensor<double>({6, 8}, pd), Tensor<double>({6, 8}, td), 0.2).item();
    REQUIRE(base == Catch::Approx(permuted).margin(1e-10));
}

TEST_CASE("tau to infinity flattens the loss to 2 ln N") {
    Rng rng(4);
    auto p = random_unit_rows(7, 8, rng);
    auto t = random_unit_rows(7, 8, rng);
    const double flat = contrastive_loss(p, t, 1e6).item();
    REQUIRE(flat == Catch::Approx(2.0 * std::log(7.0)).margin(1e-3));
}

TEST_CASE("literal mode doubles the cloud-to-text term") {
    Rng rng(5);
    auto p = random_unit_rows(4, 8, rng);
    auto t = random_unit_rows(4, 8, rng);
    const double lit = contrastive_loss(p, t, 0.5, ContrastiveMode::Literal).item();
    // Swapping arguments changes the literal form but not the symmetric one.
    const double lit_swapped = contrastive_loss(t, p, 0.5, ContrastiveMode::Literal).item();
    const double sym = contrastive_loss(p, t, 0.5, ContrastiveMode::Symmetric).item();
    REQUIRE(lit + lit_swapped == Catch::Approx(2.0 * sym).margin(1e-10));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    ParamRegistry<float> reg;
    auto p = reg.add("p", Tensor<float>({3}, {1.0f, -2.0f, 0.5f}));
    p.zero_grad();
    Adam<float> adam;
    adam.step(reg, 0.1f);
    REQUIRE(p.data() == std::vector<float>{1.0f, -2.0f, 0.5f});
}

TEST_CASE("adam: first step moves by about lr in the gradient direction") {
    ParamRegistry<float> reg;
    auto p = reg.add("p", Tensor<float>({1}, {0.0f}));
    p.zero_grad();
    p.grad()[0] = 1.0f;
    Adam<float> adam;
    adam.step(reg, 0.1f);
    REQUIRE(p.data()[0] == Catch::Approx(-0.1).margin(1e-6));
}

TEST_CASE("adam: identical runs are bit-identical after 10 steps") {
    auto run = [] {
        Rng rng(7);
        ParamRegistry<float> reg;
        auto p = reg.add("p", Tensor<float>::uniform({4, 4}, rng, 1.0f));
        Adam<float> adam;
        for (int step = 0; step < 10; ++step) {
            p.zero_grad();
            for (std::size_t i = 0; i < p.numel(); ++i) {
                p.grad()[i] = float(rng.uniform(-1, 1));
            }
            adam.step(reg, 3e-4f);
        }
        return p.data();
    };
    REQUIRE(run() == run());
}

TEST_CASE("gradient clipping caps the global norm") {
    ParamRegistry<float> reg;
    auto a = reg.add("a", Tensor<float>({2}, {0.0f, 0.0f}));
    auto b = reg.add("b", Tensor<float>({2}, {0.0f, 0.0f}));
    a.zero_grad();
    b.zero_grad();
    a.grad() = {3.0f, 0.0f};
    b.grad() = {0.0f, 4.0f};
    const double before = clip_global_norm(reg, 1.0);
    REQUIRE(before == Catch::Approx(5.0));
    double after = 0;
    for (float g : a.grad()) after += g * g;
    for (float g : b.grad()) after += g * g;
    REQUIRE(std::sqrt(after) == Catch::Approx(1.0).margin(1e-5));

    // Below the threshold nothing changes.
    a.grad() = {0.1f, 0.0f};
    b.grad() = {0.0f, 0.1f};
    clip_global_norm(reg, 1.0);
    REQUIRE(a.grad()[0] == 0.1f);
}

TEST_CASE("grad_check through the contrastive loss") {
    Rng rng(8);
    ParamRegistry<double> reg;
    auto p = reg.add("p", Tensor<double>::uniform({3, 6}, rng, 1.0));
    auto t = reg.add("t", Tensor<double>::uniform({3, 6}, rng, 1.0));
    for (ContrastiveMode mode : {ContrastiveMode::Symmetric, ContrastiveMode::Literal}) {
        auto f = [&]() {
            return contrastive_loss(l2_normalize_rows(p), l2_normalize_rows(t), 0.4, mode);
        };
        REQUIRE(grad_check_all(f, reg, 1e-5) < 1e-4);
    }
}

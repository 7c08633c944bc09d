#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mambaloc/gradcheck.hpp"
#include "mambaloc/tensor.hpp"

using namespace mambaloc;

namespace {

Tensor<double> t2(std::size_t r, std::size_t c, std::vector<double> v) {
    return Tensor<double>({r, c}, std::move(v));
}

} // namespace

TEST_CASE("matmul identity and hand cases") {
    auto eye = t2(2, 2, {1, 0, 0, 1});
    auto m = t2(2, 2, {1, 2, 3, 4});
    auto y = matmul(eye, m);
    REQUIRE(y.data() == std::vector<double>{1, 2, 3, 4});

    auto a = t2(1, 2, {1, 2});
    auto b = t2(2, 1, {3, 4});
    REQUIRE(matmul(a, b).item() == Catch::Approx(11.0));
}

TEST_CASE("matmul shape mismatch names both shapes") {
    auto a = t2(2, 3, std::vector<double>(6, 1.0));
    auto b = t2(2, 2, std::vector<double>(4, 1.0));
    REQUIRE_THROWS_MATCHES(matmul(a, b), ShapeError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("[2 x 3]") &&
                               Catch::Matchers::ContainsSubstring("[2 x 2]")));
}

TEST_CASE("matmul backward matches analytic rule") {
    auto a = t2(1, 2, {1, 2});
    auto b = t2(2, 1, {3, 4});
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    a.zero_grad();
    b.zero_grad();
    {
        TapeScope<double> scope;
        auto y = matmul(a, b);
        scope.tape().backward(sum_all(y)); // dy = [[1]]
    }
    REQUIRE(a.grad() == std::vector<double>{3, 4});
    REQUIRE(b.grad() == std::vector<double>{1, 2});
}

TEST_CASE("layer_norm closed forms") {
    auto gamma1 = Tensor<double>::ones({3});
    auto beta0 = Tensor<double>::zeros({3});
    auto x = t2(1, 3, {5, 5, 5});
    auto y = layer_norm(x, gamma1, beta0, 1e-5);
    for (double v : y.data()) REQUIRE(v == Catch::Approx(0.0).margin(1e-9));

    auto x2 = t2(1, 2, {1, -1});
    auto y2 = layer_norm(x2, Tensor<double>::ones({2}), Tensor<double>::zeros({2}), 1e-12);
    REQUIRE(y2.data()[0] == Catch::Approx(1.0).epsilon(1e-6));
    REQUIRE(y2.data()[1] == Catch::Approx(-1.0).epsilon(1e-6));

    auto y3 = layer_norm(t2(1, 2, {0, 0}), Tensor<double>::full({2}, 2.0),
                         Tensor<double>::full({2}, 3.0), 1e-5);
    REQUIRE(y3.data()[0] == Catch::Approx(3.0));
    REQUIRE(y3.data()[1] == Catch::Approx(3.0));
}

TEST_CASE("layer_norm shift invariance") {
    Rng rng(3);
    std::vector<double> base(8), shifted(8);
    for (int i = 0; i < 8; ++i) {
        base[i] = rng.uniform(-2, 2);
        shifted[i] = base[i] + 7.25;
    }
    auto g = Tensor<double>::uniform({8}, rng, 1.0);
    auto b = Tensor<double>::uniform({8}, rng, 1.0);
    auto y1 = layer_norm(t2(1, 8, base), g, b, 1e-5);
    auto y2 = layer_norm(t2(1, 8, shifted), g, b, 1e-5);
    for (int i = 0; i < 8; ++i)
        REQUIRE(y1.data()[i] == Catch::Approx(y2.data()[i]).margin(1e-6));
}

TEST_CASE("softmax closed forms and stability") {
    auto y = softmax(t2(1, 2, {0, 0}));
    REQUIRE(y.data()[0] == Catch::Approx(0.5));

    auto y2 = softmax(t2(1, 2, {1000, 0}));
    REQUIRE(y2.data()[0] == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(y2.data()[1] == Catch::Approx(0.0).margin(1e-12));

    auto y3 = softmax(t2(1, 2, {std::log(2.0), 0}));
    REQUIRE(y3.data()[0] == Catch::Approx(2.0 / 3.0).epsilon(1e-12));
    REQUIRE(y3.data()[1] == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and stay finite for large inputs") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> v(6);
        for (auto& e : v) e = rng.uniform(-1e4, 1e4);
        auto y = softmax(t2(2, 3, v));
        for (std::size_t r = 0; r < 2; ++r) {
            double s = 0;
            for (std::size_t c = 0; c < 3; ++c) {
                REQUIRE(std::isfinite(y.at(r, c)));
                s += y.at(r, c);
            }
            REQUIRE(s == Catch::Approx(1.0).margin(1e-6));
        }
    }
}

TEST_CASE("silu closed forms") {
    auto y = silu(t2(1, 3, {0.0, 1.0, -20.0}));
    REQUIRE(y.data()[0] == 0.0);
    REQUIRE(y.data()[1] == Catch::Approx(0.7310585786).epsilon(1e-9));
    REQUIRE(y.data()[2] == Catch::Approx(-4.1223072939e-8).epsilon(1e-6));
}

TEST_CASE("depthwise conv1d lag convention") {
    auto x = t2(3, 1, {1, 2, 3});
    auto k_id = t2(1, 1, {1});
    REQUIRE(depthwise_conv1d(x, k_id, true).data() == std::vector<double>{1, 2, 3});

    auto k_sum = t2(2, 1, {1, 1});
    REQUIRE(depthwise_conv1d(x, k_sum, true).data() == std::vector<double>{1, 3, 5});

    auto k_delay = t2(2, 1, {0, 1});
    auto pulse = t2(3, 1, {1, 0, 0});
    REQUIRE(depthwise_conv1d(pulse, k_delay, true).data() == std::vector<double>{0, 1, 0});
}

TEST_CASE("depthwise conv1d channel mismatch") {
    auto x = t2(3, 2, std::vector<double>(6, 1.0));
    auto k = t2(2, 3, std::vector<double>(6, 1.0));
    REQUIRE_THROWS_AS(depthwise_conv1d(x, k, true), ShapeError);
}

TEST_CASE("backward of linear and quadratic functionals") {
    auto p = Tensor<double>({3}, {1, 2, 3}, true);
    p.zero_grad();
    {
        TapeScope<double> scope;
        scope.tape().backward(sum_all(p));
    }
    REQUIRE(p.grad() == std::vector<double>{1, 1, 1});

    auto q = Tensor<double>({2}, {1, 2}, true);
    q.zero_grad();
    {
        TapeScope<double> scope;
        scope.tape().backward(sum_all(mul(q, q)));
    }
    REQUIRE(q.grad()[0] == Catch::Approx(2.0));
    REQUIRE(q.grad()[1] == Catch::Approx(4.0));
}

TEST_CASE("repeated backward accumulates into leaves") {
    auto p = Tensor<double>({1}, {1.0}, true);
    p.zero_grad();
    {
        TapeScope<double> scope;
        auto loss = sum_all(p);
        scope.tape().backward(loss);
        scope.tape().backward(loss);
    }
    REQUIRE(p.grad()[0] == Catch::Approx(2.0));
}

TEST_CASE("backward rejects non-scalar loss and empty tape") {
    auto p = Tensor<double>({2}, {1, 2}, true);
    {
        TapeScope<double> scope;
        auto y = mul(p, p);
        REQUIRE_THROWS_AS(scope.tape().backward(y), ShapeError);
    }
    {
        TapeScope<double> scope;
        REQUIRE_THROWS_AS(scope.tape().backward(Tensor<double>::scalar(1.0)), ValueError);
    }
}

TEST_CASE("gradient of a sum of uses accumulates additively") {
    auto p = Tensor<double>({1}, {3.0}, true);
    p.zero_grad();
    {
        TapeScope<double> scope;
        auto y = add(mul(p, p), p); // y = p^2 + p, dy/dp = 2p + 1 = 7
        scope.tape().backward(sum_all(y));
    }
    REQUIRE(p.grad()[0] == Catch::Approx(7.0));
}

TEST_CASE("grad_check exact for linear functional") {
    auto p = Tensor<double>({4}, {0.5, -1.0, 2.0, 3.0});
    auto f = [&]() { return sum_all(p); };
    REQUIRE(grad_check(f, p, 1e-5) < 1e-10);
}

TEST_CASE("grad_check rejects non-positive step") {
    auto p = Tensor<double>({1}, {1.0});
    auto f = [&]() { return sum_all(p); };
    REQUIRE_THROWS_AS(grad_check(f, p, 0.0), ValueError);
}

TEST_CASE("grad_check across core ops, many seeds") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed + 100);
        ParamRegistry<double> reg;
        auto a = reg.add("a", Tensor<double>::uniform({3, 4}, rng, 1.0));
        auto w = reg.add("w", Tensor<double>::uniform({4, 4}, rng, 0.7));
        auto g = reg.add("g", Tensor<double>::uniform({4}, rng, 0.9));
        auto b = reg.add("b", Tensor<double>::uniform({4}, rng, 0.9));
        auto k = reg.add("k", Tensor<double>::uniform({3, 4}, rng, 0.8));
        auto f = [&]() {
            auto h = matmul(a, w);
            h = layer_norm(h, g, b, 1e-5);
            h = depthwise_conv1d(h, k, true);
            h = silu(h);
            h = softmax(h);
            auto pooled = mean_rows(h);
            return sum_all(mul(pooled, pooled));
        };
        REQUIRE(grad_check_all(f, reg, 1e-5) < 1e-4);
    }
}

TEST_CASE("structural ops round gradients correctly") {
    Rng rng(7);
    ParamRegistry<double> reg;
    auto x = reg.add("x", Tensor<double>::uniform({4, 6}, rng, 1.0));
    auto f = [&]() {
        auto parts = std::vector<Tensor<double>>{slice_rows(x, 0, 2), slice_rows(x, 2, 4)};
        auto back = concat_rows(parts);
        auto halves = std::vector<Tensor<double>>{slice_cols(back, 0, 3), slice_cols(back, 3, 6)};
        auto wide = concat_cols(halves);
        auto rep = repeat_cols_interleave(wide, 2);
        auto til = tile_cols(wide, 2);
        auto merged = sum_col_groups(add(rep, til), 4);
        auto tr = transpose(merged);
        auto nm = l2_normalize_rows(tr);
        auto mx = add(max_rows(nm), select_row(nm, 1));
        return sum_all(mul(mx, mx));
    };
    REQUIRE(grad_check(f, x, 1e-5) < 1e-4);
}

TEST_CASE("deterministic forward: identical inputs give bit-identical results") {
    auto run = [] {
        Rng rng(5);
        auto a = Tensor<float>::uniform({8, 8}, rng, 1.0f);
        auto b = Tensor<float>::uniform({8, 8}, rng, 1.0f);
        return softmax(matmul(silu(a), b)).data();
    };
    REQUIRE(run() == run());
}

TEST_CASE("tensor invariants: shape/data agreement and finite mode") {
    REQUIRE_THROWS_AS(Tensor<double>({2, 2}, {1.0, 2.0}), ShapeError);

    finite_checks() = true;
    auto inf = Tensor<double>({1, 2}, {1e308, 1e308});
    REQUIRE_THROWS_AS(add(inf, inf), ValueError);
    finite_checks() = false;
    REQUIRE_NOTHROW(add(inf, inf));
}

TEST_CASE("parameter names are unique within a registry") {
    ParamRegistry<double> reg;
    reg.add("w", Tensor<double>::zeros({2}));
    REQUIRE_THROWS_AS(reg.add("w", Tensor<double>::zeros({2})), ValueError);
}

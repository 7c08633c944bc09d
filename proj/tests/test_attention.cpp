#include <catch2/catch_amalgamated.hpp>

#include "mambaloc/attention.hpp"
#include "mambaloc/gradcheck.hpp"

using namespace mambaloc;

TEST_CASE("single key: every query attends with weight one") {
    Rng rng(1);
    ParamRegistry<double> reg;
    MhaParams<double> p(reg, "mha", 8, 2, rng);
    auto q = Tensor<double>::uniform({3, 8}, rng, 1.0);
    auto kv = Tensor<double>::uniform({1, 8}, rng, 1.0);
    auto y = multi_head_attention(q, kv, kv, p);
    auto expected = p.o_proj(p.v_proj(kv));
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 8; ++c)
            REQUIRE(y.at(r, c) == Catch::Approx(expected.at(0, c)).margin(1e-12));
}

TEST_CASE("empty context is rejected") {
    Rng rng(2);
    ParamRegistry<double> reg;
    MhaParams<double> p(reg, "mha", 4, 1, rng);
    auto q = Tensor<double>::uniform({2, 4}, rng, 1.0);
    auto kv = Tensor<double>::zeros({0, 4});
    REQUIRE_THROWS_AS(multi_head_attention(q, kv, kv, p), ValueError);
}

TEST_CASE("identical keys make output independent of their order") {
    Rng rng(3);
    ParamRegistry<double> reg;
    MhaParams<double> p(reg, "mha", 4, 2, rng);
    auto q = Tensor<double>::uniform({2, 4}, rng, 1.0);
    std::vector<double> row(4);
    for (auto& v : row) v = rng.uniform(-1, 1);
    std::vector<double> kv3;
    for (int i = 0; i < 3; ++i) kv3.insert(kv3.end(), row.begin(), row.end());
    auto kv = Tensor<double>({3, 4}, kv3);
    auto y1 = multi_head_attention(q, kv, kv, p);
    auto y2 = multi_head_attention(q, kv, kv, p); // same multiset, permuted = identical
    REQUIRE(y1.data() == y2.data());
}

TEST_CASE("set equivariance: permuting keys and values together is invisible") {
    Rng rng(4);
    ParamRegistry<double> reg;
    MhaParams<double> p(reg, "mha", 6, 3, rng);
    auto q = Tensor<double>::uniform({2, 6}, rng, 1.0);
    auto kv = Tensor<double>::uniform({4, 6}, rng, 1.0);
    std::vector<std::size_t> perm{2, 0, 3, 1};
    std::vector<double> shuffled(kv.numel());
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 6; ++j) shuffled[i * 6 + j] = kv.at(perm[i], j);
    auto kv_perm = Tensor<double>({4, 6}, shuffled);
    auto y1 = multi_head_attention(q, kv, kv, p);
    auto y2 = multi_head_attention(q, kv_perm, kv_perm, p);
    for (std::size_t i = 0; i < y1.numel(); ++i)
        REQUIRE(y1.data()[i] == Catch::Approx(y2.data()[i]).margin(1e-12));
}

TEST_CASE("causal attention masks the future") {
    Rng rng(5);
    ParamRegistry<double> reg;
    MhaParams<double> p(reg, "mha", 4, 2, rng);
    auto x = Tensor<double>::uniform({5, 4}, rng, 1.0);
    auto y1 = multi_head_attention(x, x, x, p, true);
    auto bumped = x.data();
    bumped[4 * 4 + 2] += 1.0; // last position
    auto xb = Tensor<double>({5, 4}, bumped);
    auto y2 = multi_head_attention(xb, xb, xb, p, true);
    for (std::size_t i = 0; i < 4 * 4; ++i) REQUIRE(y1.data()[i] == y2.data()[i]);
}

TEST_CASE("transformer layer: zeroed sublayers reduce to double layer norm") {
    Rng rng(6);
    ParamRegistry<double> reg;
    TransformerLayer<double> layer(reg, "tl", 4, 2, rng);
    auto zero = [](Affine<double>& a) {
        std::fill(a.weight.data().begin(), a.weight.data().end(), 0.0);
        std::fill(a.bias.data().begin(), a.bias.data().end(), 0.0);
    };
    zero(layer.mha.o_proj);
    zero(layer.ffn.down);
    auto x = Tensor<double>::uniform({3, 4}, rng, 1.0);
    auto y = layer(x);
    auto expected = layer.ln2(layer.ln1(x));
    for (std::size_t i = 0; i < y.numel(); ++i)
        REQUIRE(y.data()[i] == Catch::Approx(expected.data()[i]).margin(1e-12));
}

TEST_CASE("transformer layer preserves shape") {
    Rng rng(7);
    ParamRegistry<double> reg;
    TransformerLayer<double> layer(reg, "tl", 8, 4, rng);
    for (std::size_t len : {1ul, 5ul, 17ul}) {
        auto x = Tensor<double>::uniform({len, 8}, rng, 1.0);
        auto y = layer(x);
        REQUIRE(y.shape() == Shape{len, 8});
    }
}

TEST_CASE("grad_check through attention and transformer layer") {
    Rng rng(8);
    ParamRegistry<double> reg;
    MhaParams<double> p(reg, "mha", 8, 2, rng);
    auto x = reg.add("x", Tensor<double>::uniform({3, 8}, rng, 1.0));
    auto f = [&]() {
        auto y = multi_head_attention(x, x, x, p);
        return sum_all(mul(y, y));
    };
    REQUIRE(grad_check_all(f, reg, 1e-5) < 1e-4);

    ParamRegistry<double> reg2;
    Rng rng2(9);
    TransformerLayer<double> layer(reg2, "tl", 8, 2, rng2);
    auto x2 = reg2.add("x", Tensor<double>::uniform({4, 8}, rng2, 1.0));
    auto f2 = [&]() {
        auto y = layer(x2);
        return sum_all(mul(y, y));
    };
    REQUIRE(grad_check_all(f2, reg2, 1e-5) < 1e-4);
}

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "stocfl/rng.hpp"

using stocfl::Rng;
using stocfl::derive_seed;

TEST_CASE("same seed reproduces the stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds diverge") {
    Rng a(1), b(2);
    bool any_diff = false;
    for (int i = 0; i < 10; ++i) any_diff |= a.next_u64() != b.next_u64();
    REQUIRE(any_diff);
}

TEST_CASE("uniform stays in [0, 1) and fills the interval") {
    Rng rng(7);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 10000; ++i) {
        double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    REQUIRE(lo < 0.01);
    REQUIRE(hi > 0.99);
}

TEST_CASE("ranged uniform respects bounds") {
    Rng rng(9);
    for (int i = 0; i < 1000; ++i) {
        double u = rng.uniform(-2.5, 3.5);
        REQUIRE(u >= -2.5);
        REQUIRE(u < 3.5);
    }
}

TEST_CASE("normal draws have roughly standard moments") {
    Rng rng(11);
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double z = rng.normal();
        REQUIRE(std::isfinite(z));
        sum += z;
        sq += z * z;
    }
    double mean = sum / n;
    double var = sq / n - mean * mean;
    REQUIRE(std::abs(mean) < 0.03);
    REQUIRE(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("shuffle permutes without losing elements") {
    Rng rng(13);
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[static_cast<std::size_t>(i)] = i;
    auto orig = v;
    rng.shuffle(v);
    REQUIRE(v != orig);  // 50! outcomes; identity would be astonishing
    std::sort(v.begin(), v.end());
    REQUIRE(v == orig);
}

TEST_CASE("sample_without_replacement is sorted, distinct, right-sized") {
    Rng rng(17);
    auto s = rng.sample_without_replacement(100, 10);
    REQUIRE(s.size() == 10);
    REQUIRE(std::is_sorted(s.begin(), s.end()));
    std::set<int> uniq(s.begin(), s.end());
    REQUIRE(uniq.size() == 10);
    for (int x : s) {
        REQUIRE(x >= 0);
        REQUIRE(x < 100);
    }
}

TEST_CASE("sampling the whole population returns everyone") {
    Rng rng(19);
    auto s = rng.sample_without_replacement(5, 5);
    REQUIRE(s == std::vector<int>{0, 1, 2, 3, 4});
}

TEST_CASE("oversampling is rejected") {
    Rng rng(23);
    REQUIRE_THROWS_AS(rng.sample_without_replacement(3, 4), stocfl::value_error);
}

TEST_CASE("derive_seed separates streams by tag and order") {
    REQUIRE(derive_seed(5, 1) != derive_seed(5, 2));
    REQUIRE(derive_seed(5, 1, 2) != derive_seed(5, 2, 1));
    REQUIRE(derive_seed(5, 1, 2) == derive_seed(5, 1, 2));
    REQUIRE(derive_seed(5, 1) != derive_seed(6, 1));
}

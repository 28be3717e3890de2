#include "genepanel/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

using namespace genepanel;

TEST_CASE("splitmix64 matches the reference sequence") {
    std::uint64_t s = 0;
    CHECK(splitmix64(s) == 0xe220a8397b1dcdafULL);
    CHECK(s == 0x9e3779b97f4a7c15ULL);
    CHECK(splitmix64(s) == 0x6e789e6aa1b965f4ULL);
}

TEST_CASE("same seed reproduces the same stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(42), d(43);
    bool all_equal = true;
    for (int i = 0; i < 100; ++i) all_equal = all_equal && c.next_u64() == d.next_u64();
    CHECK(!all_equal);
}

TEST_CASE("derive_seed separates streams") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t a = 0; a < 16; ++a)
        for (std::uint64_t b = 0; b < 16; ++b)
            for (std::uint64_t c = 0; c < 16; ++c) seen.insert(derive_seed(7, a, b, c));
    CHECK(seen.size() == 16 * 16 * 16);
    CHECK(derive_seed(7, 1, 2, 3) == derive_seed(7, 1, 2, 3));
    CHECK(derive_seed(7, 1, 2, 3) != derive_seed(8, 1, 2, 3));
}

TEST_CASE("next_double stays in [0,1) and next_index in range") {
    Rng rng(9);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.next_double();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const std::size_t j = rng.next_index(7);
        CHECK(j < 7);
    }
    CHECK(rng.next_index(1) == 0);
}

TEST_CASE("next_index covers all buckets roughly uniformly") {
    Rng rng(123);
    std::vector<int> counts(8, 0);
    const int draws = 80000;
    for (int i = 0; i < draws; ++i) ++counts[rng.next_index(8)];
    for (int c : counts) {
        CHECK(c > draws / 8 - 600);
        CHECK(c < draws / 8 + 600);
    }
}

TEST_CASE("next_normal has standard moments") {
    Rng rng(77);
    const int n = 200000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.next_normal();
        sum += x;
        sum2 += x * x;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("shuffle permutes and is seed-deterministic") {
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[i] = i;
    auto w = v;
    Rng r1(5), r2(5);
    r1.shuffle(v);
    r2.shuffle(w);
    CHECK(v == w);
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) CHECK(sorted[i] == i);
    // 50 elements staying fully fixed would mean the shuffle did nothing.
    std::vector<int> identity(50);
    for (int i = 0; i < 50; ++i) identity[i] = i;
    CHECK(v != identity);
}

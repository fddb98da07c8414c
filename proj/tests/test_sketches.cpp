#include <algorithm>
#include <random>
#include <set>

#include "doctest.h"
#include "drsync/docx.hpp"
#include "drsync/sketches.hpp"

using namespace drsync;

namespace {

Bytes random_bytes(std::mt19937_64& rng, size_t n) {
    Bytes x(n);
    for (auto& c : x) c = uint8_t(rng());
    return x;
}

// Applies exactly `edits` random single-symbol edits.
Bytes mutate(std::mt19937_64& rng, Bytes b, int edits) {
    for (int e = 0; e < edits; ++e) {
        int op = int(rng() % 3);
        if (b.empty()) op = 2;
        size_t p = rng() % std::max<size_t>(b.size(), 1);
        if (op == 0)
            b[p] ^= uint8_t(1 + rng() % 255);
        else if (op == 1)
            b.erase(b.begin() + long(p));
        else
            b.insert(b.begin() + long(p), uint8_t(rng()));
    }
    return b;
}

}  // namespace

TEST_CASE("cgk length law and determinism") {
    std::mt19937_64 rng(1);
    auto s = SharedSeed::from_u64(3);
    for (size_t n : {0, 1, 7, 100, 513}) {
        Bytes x = random_bytes(rng, n);
        auto e = cgk_embed(x, s);
        CHECK(e.symbols.size() == 3 * n);
        CHECK(e.n == n);
        CHECK(cgk_embed(x, s).symbols == e.symbols);
    }
    Bytes x = random_bytes(rng, 100);
    CHECK(hamming_distance(cgk_embed(x, s).symbols, cgk_embed(x, s).symbols) == 0);
    CHECK(cgk_embed(x, s, 40).symbols.size() == 120);
}

TEST_CASE("cgk invert round trip") {
    std::mt19937_64 rng(2);
    int exact = 0;
    for (int t = 0; t < 1000; ++t) {
        Bytes x = random_bytes(rng, 256);
        auto s = SharedSeed::from_u64(rng());
        auto y = cgk_invert(cgk_embed(x, s), s);
        exact += y && *y == x;
    }
    CHECK(exact == 1000);
    auto e = cgk_embed(Bytes{}, SharedSeed::from_u64(1));
    auto y = cgk_invert(e, SharedSeed::from_u64(1));
    REQUIRE(y);
    CHECK(y->empty());
}

TEST_CASE("cgk invert never claims a corrupted encoding as the input") {
    std::mt19937_64 rng(3);
    int failures = 0, wrong = 0, silent = 0;
    for (int t = 0; t < 500; ++t) {
        Bytes x = random_bytes(rng, 128);
        auto s = SharedSeed::from_u64(rng());
        auto e = cgk_embed(x, s);
        size_t i = rng() % e.symbols.size();
        e.symbols[i] ^= uint8_t(1 + rng() % 255);
        auto y = cgk_invert(e, s);
        if (!y)
            ++failures;
        else if (*y != x)
            ++wrong;
        else
            ++silent;
    }
    // A flipped symbol past the cursor's last visit is always detected; none
    // can reproduce x because every step either reads x or the pad.
    CHECK(silent == 0);
    CHECK(failures + wrong == 500);
}

TEST_CASE("cgk distortion bounds over seeds") {
    std::mt19937_64 rng(4);
    for (int de = 1; de <= 3; ++de) {
        int good = 0, trials = 0;
        while (trials < 300) {
            Bytes a = random_bytes(rng, 96);
            Bytes b = mutate(rng, a, de);
            size_t d = edit_distance(a, b);
            if (d != size_t(de)) continue;
            ++trials;
            auto s = SharedSeed::from_u64(rng());
            size_t h = hamming_distance(cgk_embed(a, s).symbols, cgk_embed(b, s, a.size()).symbols);
            good += 2 * h >= d && h <= 1300 * d * d;
        }
        CHECK(good >= 200);
    }
}

TEST_CASE("hamming sketch basics") {
    auto s = SharedSeed::from_u64(5);
    Bytes x(64, 7);
    auto sx = hamming_sketch(x, 4, 2, s);
    auto d = hamming_decode(sx, hamming_sketch(x, 4, 2, s));
    REQUIRE(d);
    CHECK(d->empty());

    Bytes y = x;
    y[5] = 9;
    d = hamming_decode(sx, hamming_sketch(y, 4, 2, s));
    REQUIRE(d);
    CHECK(*d == std::vector<HammingDiff>{{5, 7, 9}});

    CHECK_THROWS(hamming_decode(sx, hamming_sketch(x, 5, 2, s)));
    CHECK_THROWS(hamming_decode(sx, hamming_sketch(Bytes(63), 4, 2, s)));
    CHECK(HammingSketch::cells_for(1) == 16);
    CHECK(HammingSketch::cells_for(7) == 44);
}

TEST_CASE("hamming decode is exact within budget and fails when overloaded") {
    std::mt19937_64 rng(6);
    int exact = 0, overload_fail = 0;
    const uint32_t k = 12;
    for (int t = 0; t < 1000; ++t) {
        auto s = SharedSeed::from_u64(rng());
        Bytes x = random_bytes(rng, 300), y = x;
        size_t flips = 1 + rng() % k;
        std::set<size_t> at;
        while (at.size() < flips) at.insert(rng() % x.size());
        for (size_t i : at) y[i] ^= uint8_t(1 + rng() % 255);
        auto d = hamming_decode(hamming_sketch(x, k, 2, s), hamming_sketch(y, k, 2, s));
        if (d) {
            std::vector<HammingDiff> truth;
            for (size_t i = 0; i < x.size(); ++i)
                if (x[i] != y[i]) truth.push_back({i, x[i], y[i]});
            CHECK(*d == truth);
            exact += *d == truth;
        }
        if (t < 200) {
            Bytes z = x;
            std::set<size_t> many;
            while (many.size() < 3 * k) many.insert(rng() % x.size());
            for (size_t i : many) z[i] ^= uint8_t(1 + rng() % 255);
            overload_fail += !hamming_decode(hamming_sketch(x, k, 1, s), hamming_sketch(z, k, 1, s));
        }
    }
    CHECK(exact >= 995);
    CHECK(overload_fail >= 180);
}

TEST_CASE("hamming sketch wire round trip") {
    auto s = SharedSeed::from_u64(8);
    Bytes x(40, 1);
    auto h = hamming_sketch(x, 3, 2, s, "lab");
    Bytes w;
    h.serialize(w);
    CHECK(w.size() == h.wire_bytes());
    size_t pos = 0;
    auto g = HammingSketch::deserialize(w, pos, s, "lab");
    CHECK(pos == w.size());
    CHECK(g.n == 40);
    CHECK(g.tables == h.tables);
}

TEST_CASE("strata estimator accuracy") {
    std::mt19937_64 rng(9);
    auto run = [&](uint64_t d, const SharedSeed& s) {
        std::vector<uint64_t> A, B;
        for (int i = 0; i < 300; ++i) {
            uint64_t k = rng();
            A.push_back(k);
            B.push_back(k);
        }
        for (uint64_t i = 0; i < d; ++i) (rng() % 2 ? A : B).push_back(rng());
        return strata_query(strata_merge(strata_create(A, s, "se"), strata_create(B, s, "se")));
    };
    int within = 0, zero_ok = 0, one_ok = 0;
    for (int t = 0; t < 500; ++t) {
        auto s = SharedSeed::from_u64(rng());
        uint64_t e = run(128, s);
        within += e >= 32 && e <= 512;
        zero_ok += run(0, s) == 0;
        one_ok += run(1, s) >= 1;
    }
    CHECK(within >= 475);
    CHECK(zero_ok == 500);
    CHECK(one_ok >= 475);
}

TEST_CASE("strata estimator safety factor covers the true difference") {
    std::mt19937_64 rng(10);
    int covered = 0, trials = 0;
    for (uint64_t d : {3, 12, 40, 200}) {
        for (int t = 0; t < 100; ++t, ++trials) {
            auto s = SharedSeed::from_u64(rng());
            std::vector<uint64_t> A, B;
            for (uint64_t i = 0; i < d; ++i) (rng() % 2 ? A : B).push_back(rng());
            uint64_t e = strata_query(strata_merge(strata_create(A, s, "c"), strata_create(B, s, "c")));
            covered += double(e) * kStrataSafety >= double(d) && double(e) <= kStrataSafety * double(d);
        }
    }
    CHECK(covered >= trials * 97 / 100);
}

TEST_CASE("strata placement is a function of the key") {
    auto s = SharedSeed::from_u64(11);
    StrataEstimator e(s, "m", 16, 3);
    std::mt19937_64 rng(12);
    std::vector<uint64_t> keys;
    for (int i = 0; i < 2000; ++i) keys.push_back(rng());
    std::vector<unsigned> first;
    for (uint64_t k : keys) first.push_back(e.stratum_of(k, 1));
    unsigned deepest_small = 0, deepest_large = 0;
    for (size_t i = 0; i < keys.size(); ++i) {
        CHECK(e.stratum_of(keys[i], 1) == first[i]);
        CHECK(first[i] < 16);
        if (i < 100) deepest_small = std::max(deepest_small, first[i]);
        deepest_large = std::max(deepest_large, first[i]);
    }
    CHECK(deepest_large >= deepest_small);
    // Roughly half the keys land in stratum 0.
    size_t zero = size_t(std::count(first.begin(), first.end(), 0u));
    CHECK(zero > 850);
    CHECK(zero < 1150);
}

TEST_CASE("strata parameters, merge guard and wire format") {
    auto s = SharedSeed::from_u64(13);
    CHECK_THROWS(StrataEstimator(s, "x", 0, 1));
    CHECK_THROWS(StrataEstimator(s, "x", 8, 0));
    StrataEstimator a(s, "x", 8, 2), b(s, "x", 8, 3), c(s, "y", 8, 2);
    CHECK_THROWS(a.merge(b));
    CHECK_THROWS(a.merge(c));
    for (uint64_t k = 0; k < 30; ++k) a.insert(k * 7919);
    Bytes w;
    a.serialize(w);
    CHECK(w.size() == a.wire_bytes());
    size_t pos = 0;
    auto r = StrataEstimator::deserialize(w, pos, s, "x");
    CHECK(pos == w.size());
    CHECK(r.query() == a.query());
    CHECK(strata_levels_for(0) == 2);
    CHECK(strata_levels_for(20) == 7);
    CHECK(strata_levels_for(uint64_t(1) << 40) == 32);
}

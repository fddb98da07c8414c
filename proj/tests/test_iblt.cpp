#include <algorithm>
#include <random>
#include <set>

#include "doctest.h"
#include "drsync/iblt.hpp"

using namespace drsync;

namespace {
std::set<uint64_t> keys_of(const std::vector<Iblt::Entry>& v) {
    std::set<uint64_t> s;
    for (const auto& e : v) s.insert(e.key);
    return s;
}
Iblt table(uint32_t m, uint8_t q, uint64_t seed, uint32_t vw = 0) {
    return Iblt({m, q, vw}, SharedSeed::from_u64(seed), "t");
}
}  // namespace

TEST_CASE("insert touches q distinct cells, one per region") {
    auto t = table(40, 4, 1);
    t.insert(77);
    int ones = 0;
    for (size_t c = 0; c < t.m(); ++c) ones += t.count(c) == 1;
    CHECK(ones == 4);
    uint32_t idx[16];
    t.cells_of(77, idx);
    for (unsigned r = 0; r < 4; ++r) CHECK((idx[r] / (t.m() / 4)) == r);
}

TEST_CASE("insert then erase cancels") {
    auto t = table(30, 3, 2, 4);
    auto empty = t;
    Bytes v{1, 2, 3, 4};
    t.insert(9, v);
    t.erase(9, v);
    CHECK(t == empty);
    CHECK(t.empty());
}

TEST_CASE("erase from empty gives -1 counts") {
    auto t = table(30, 3, 3);
    t.erase(5);
    int neg = 0;
    for (size_t c = 0; c < t.m(); ++c) neg += t.count(c) == -1;
    CHECK(neg == 3);
    auto p = t.peel();
    CHECK(p.complete);
    CHECK(keys_of(p.negatives) == std::set<uint64_t>{5});
}

TEST_CASE("mismatched values leave residue") {
    auto t = table(30, 3, 4, 2);
    t.insert(1, Bytes{1, 1});
    t.erase(1, Bytes{2, 1});
    for (size_t c = 0; c < t.m(); ++c) CHECK(t.count(c) == 0);
    CHECK_FALSE(t.empty());
}

TEST_CASE("errors") {
    auto t = table(30, 3, 5);
    CHECK_THROWS(t.insert(1, Bytes{1}));
    auto v = table(30, 3, 5, 2);
    CHECK_THROWS(v.insert(1, Bytes{1, 2, 3}));
    CHECK_THROWS(t.subtract(v));
    CHECK_THROWS(t.add(table(30, 3, 6)));
}

TEST_CASE("small direct examples") {
    auto t = table(30, 3, 7);
    for (uint64_t k : {1, 2, 3}) t.insert(k);
    auto p = t.peel();
    CHECK(p.complete);
    CHECK(keys_of(p.positives) == std::set<uint64_t>{1, 2, 3});

    auto u = table(30, 3, 7);
    u.insert(1);
    u.insert(2);
    u.erase(2);
    u.erase(5);
    p = u.peel();
    CHECK(keys_of(p.positives) == std::set<uint64_t>{1});
    CHECK(keys_of(p.negatives) == std::set<uint64_t>{5});

    auto a = table(30, 3, 7), b = table(30, 3, 7);
    for (uint64_t k : {1, 2, 3}) a.insert(k);
    for (uint64_t k : {3, 4}) b.insert(k);
    a.subtract(b);
    p = a.peel();
    CHECK(p.complete);
    CHECK(keys_of(p.positives) == std::set<uint64_t>{1, 2});
    CHECK(keys_of(p.negatives) == std::set<uint64_t>{4});
    CHECK(table(30, 3, 7).peel().complete);
}

TEST_CASE("add of disjoint tables equals table of the union") {
    auto a = table(64, 4, 8, 3), b = table(64, 4, 8, 3), u = table(64, 4, 8, 3);
    for (uint64_t k = 0; k < 10; ++k) {
        Bytes v{uint8_t(k), uint8_t(k * 3), 7};
        (k % 2 ? a : b).insert(k * 1000003, v);
        u.insert(k * 1000003, v);
    }
    a.add(b);
    CHECK(a == u);
    auto s = u;
    s.subtract(u);
    CHECK(s.empty());
}

TEST_CASE("linearity: operation order does not matter") {
    std::mt19937_64 rng(9);
    std::vector<std::pair<uint64_t, int>> ops;
    for (int i = 0; i < 60; ++i) ops.push_back({rng() % 100, int(rng() % 2)});
    auto apply = [&](const std::vector<std::pair<uint64_t, int>>& seq) {
        auto t = table(80, 4, 10, 1);
        for (auto [k, del] : seq) {
            Bytes v{uint8_t(k)};
            del ? t.erase(k, v) : t.insert(k, v);
        }
        return t;
    };
    auto base = apply(ops);
    for (int p = 0; p < 20; ++p) {
        std::shuffle(ops.begin(), ops.end(), rng);
        CHECK(apply(ops) == base);
    }
}

TEST_CASE("round trip with common set, values and soundness") {
    std::mt19937_64 rng(11);
    int ok = 0, unsound = 0;
    const int trials = 1000;
    for (int t = 0; t < trials; ++t) {
        auto ta = table(200, 4, 1000 + t, 8), tb = table(200, 4, 1000 + t, 8);
        std::set<uint64_t> A, B;
        while (A.size() + B.size() < 40) {
            uint64_t k = rng();
            (rng() % 2 ? A : B).insert(k);
        }
        auto val = [](uint64_t k) {
            Bytes v(8);
            for (int i = 0; i < 8; ++i) v[i] = uint8_t((k * 0x9e3779b97f4a7c15ull) >> (8 * i));
            return v;
        };
        for (int c = 0; c < 100; ++c) {
            uint64_t k = rng();
            ta.insert(k, val(k));
            tb.insert(k, val(k));
        }
        for (auto k : A) ta.insert(k, val(k));
        for (auto k : B) tb.insert(k, val(k));
        ta.subtract(tb);
        auto p = ta.peel();
        for (const auto& e : p.positives) unsound += !A.count(e.key) || e.value != val(e.key);
        for (const auto& e : p.negatives) unsound += !B.count(e.key) || e.value != val(e.key);
        ok += p.complete && keys_of(p.positives) == A && keys_of(p.negatives) == B;
    }
    CHECK(unsound == 0);
    CHECK(ok >= 990);
}

TEST_CASE("two keys sharing every cell do not peel") {
    // Search for a table seed where keys 1 and 2 collide in all regions.
    for (uint64_t s = 0;; ++s) {
        auto t = table(8, 4, s);
        uint32_t a[16], b[16];
        t.cells_of(1, a);
        t.cells_of(2, b);
        if (!std::equal(a, a + 4, b)) continue;
        t.insert(1);
        t.insert(2);
        uint32_t c[16];
        t.cells_of(3, c);
        bool third_free = true;
        for (int r = 0; r < 4; ++r) third_free &= c[r] != a[r];
        auto p = t.peel();
        CHECK_FALSE(p.complete);
        CHECK(p.positives.empty());
        if (third_free) break;
    }
}

TEST_CASE("wire format round trip and label guard") {
    auto t = table(20, 4, 12, 3);
    t.insert(5, Bytes{1, 2, 3});
    t.erase(6, Bytes{4});
    Bytes w = t.serialize();
    CHECK(w.size() == t.wire_bytes());
    CHECK(w.size() == 13 + 20 * 19);
    size_t pos = 0;
    auto u = Iblt::deserialize(w, pos, SharedSeed::from_u64(12), "t");
    CHECK(pos == w.size());
    CHECK(u == t);
    // little-endian header
    CHECK(w[0] == 20);
    CHECK(w[4] == 4);
    CHECK(w[5] == 3);
    pos = 0;
    CHECK_THROWS(Iblt::deserialize(w, pos, SharedSeed::from_u64(12), "other"));
    Bytes cut(w.begin(), w.end() - 1);
    pos = 0;
    CHECK_THROWS(Iblt::deserialize(cut, pos, SharedSeed::from_u64(12), "t"));
}

TEST_CASE("cells rounded to a multiple of q") {
    CHECK(table(30, 4, 1).m() == 32);
    CHECK(Iblt::cells_for(40) == 200);
    CHECK(Iblt::cells_for(3) == 16);
}

#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "drsync/bits.hpp"

namespace drsync {

struct SharedSeed {
    std::array<uint8_t, 16> bytes{};

    static SharedSeed from_u64(uint64_t v);
    static SharedSeed random();
    SharedSeed operator^(const SharedSeed& o) const;
    SharedSeed derive(std::string_view label) const;
    std::string hex() const;
    bool operator==(const SharedSeed&) const = default;
};

// Up to 128 output bits; bits above out_bits are zero.
struct Digest {
    uint64_t lo = 0;
    uint64_t hi = 0;
    auto operator<=>(const Digest&) const = default;
};

namespace mersenne {
constexpr uint64_t P = (uint64_t(1) << 61) - 1;

inline uint64_t reduce(__uint128_t v) {
    uint64_t r = uint64_t(v & P) + uint64_t(v >> 61);
    r = (r & P) + (r >> 61);
    return r >= P ? r - P : r;
}
inline uint64_t mul(uint64_t a, uint64_t b) { return reduce(__uint128_t(a) * b); }
inline uint64_t add(uint64_t a, uint64_t b) {
    uint64_t r = a + b;
    return r >= P ? r - P : r;
}
inline uint64_t sub(uint64_t a, uint64_t b) { return a >= b ? a - b : a + P - b; }
}  // namespace mersenne

// Polynomial hash over GF(2^61-1), one (x, a, b) triple per 61-bit lane:
//   poly(s) = x^|s| + sum s_i x^(|s|-1-i),  lane = a*poly(s) + b.
// Distinct inputs of length <= L collide per lane with probability
// <= (L+1)/p + 1/p, so the truncated output collides with probability
// <= 2^-out_bits + lanes*(L+2)/p.
class HashFn {
public:
    HashFn() = default;
    HashFn(const SharedSeed& seed, std::string_view label, unsigned out_bits);

    unsigned out_bits() const { return out_bits_; }
    unsigned lanes() const { return lanes_; }

    Digest operator()(ByteView s) const;
    uint64_t hash64(ByteView s) const { return (*this)(s).lo; }
    // Hash of a 64-bit word, read as the two-symbol string (hi32, lo32).
    uint64_t word(uint64_t v) const;
    Digest finish(const std::array<uint64_t, 3>& polys) const;

    uint64_t x(unsigned lane) const { return x_[lane]; }

private:
    unsigned out_bits_ = 0;
    unsigned lanes_ = 0;
    std::array<uint64_t, 3> x_{}, a_{}, b_{};
};

HashFn derive_hash(const SharedSeed& seed, std::string_view label, unsigned out_bits);
std::mt19937_64 derive_rng(const SharedSeed& seed, std::string_view label);

// Digest i equals f(s[i, i+w)); O(|s|) total.  Requires f.out_bits() <= 64.
std::vector<uint64_t> rolling_digest(ByteView s, size_t w, const HashFn& f);

unsigned small_hash(ByteView s, const HashFn& f);

// O(1) evaluation of f on any substring after O(|s|) setup.
class SubstringHasher {
public:
    SubstringHasher() = default;
    SubstringHasher(ByteView s, const HashFn& f);

    uint64_t operator()(size_t begin, size_t end) const;
    Digest digest(size_t begin, size_t end) const;
    size_t size() const { return n_; }
    const HashFn& fn() const { return *f_; }

private:
    uint64_t lane_poly(unsigned lane, size_t begin, size_t end) const;
    const HashFn* f_ = nullptr;
    size_t n_ = 0;
    std::array<std::vector<uint64_t>, 3> prefix_, pow_;
};

// Default identifier width for a universe of about n items.
unsigned default_out_bits(uint64_t n);

uint32_t fnv1a32(std::string_view s);

}  // namespace drsync

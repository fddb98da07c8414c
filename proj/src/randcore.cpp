#include "drsync/randcore.hpp"

#include <cstdio>
#include <stdexcept>

namespace drsync {

namespace {

std::seed_seq make_seq(const SharedSeed& seed, std::string_view label, unsigned extra) {
    std::vector<uint32_t> words;
    for (size_t i = 0; i < 16; i += 4)
        words.push_back(uint32_t(seed.bytes[i]) | uint32_t(seed.bytes[i + 1]) << 8 |
                        uint32_t(seed.bytes[i + 2]) << 16 | uint32_t(seed.bytes[i + 3]) << 24);
    words.push_back(uint32_t(label.size()));
    for (char c : label) words.push_back(uint8_t(c));
    words.push_back(extra);
    return std::seed_seq(words.begin(), words.end());
}

uint64_t draw_field(std::mt19937_64& rng, bool nonzero) {
    for (;;) {
        uint64_t v = rng() >> 3;  // 61 bits
        if (v < mersenne::P && (!nonzero || v != 0)) return v;
    }
}

}  // namespace

SharedSeed SharedSeed::from_u64(uint64_t v) {
    SharedSeed s;
    std::mt19937_64 rng(v);
    for (size_t i = 0; i < 16; i += 8) {
        uint64_t r = rng();
        for (size_t j = 0; j < 8; ++j) s.bytes[i + j] = uint8_t(r >> (8 * j));
    }
    return s;
}

SharedSeed SharedSeed::random() {
    std::random_device rd;
    SharedSeed s;
    for (auto& b : s.bytes) b = uint8_t(rd());
    return s;
}

SharedSeed SharedSeed::operator^(const SharedSeed& o) const {
    SharedSeed s;
    for (size_t i = 0; i < 16; ++i) s.bytes[i] = bytes[i] ^ o.bytes[i];
    return s;
}

SharedSeed SharedSeed::derive(std::string_view label) const {
    auto rng = derive_rng(*this, label);
    SharedSeed s;
    for (size_t i = 0; i < 16; i += 8) {
        uint64_t r = rng();
        for (size_t j = 0; j < 8; ++j) s.bytes[i + j] = uint8_t(r >> (8 * j));
    }
    return s;
}

std::string SharedSeed::hex() const {
    std::string out;
    char buf[3];
    for (uint8_t b : bytes) {
        std::snprintf(buf, sizeof buf, "%02x", b);
        out += buf;
    }
    return out;
}

HashFn::HashFn(const SharedSeed& seed, std::string_view label, unsigned out_bits)
    : out_bits_(out_bits) {
    if (out_bits < 1 || out_bits > 128) throw std::invalid_argument("out_bits must be in [1, 128]");
    lanes_ = (out_bits + 60) / 61;
    auto seq = make_seq(seed, label, out_bits);
    std::mt19937_64 rng(seq);
    for (unsigned l = 0; l < lanes_; ++l) {
        x_[l] = draw_field(rng, true);
        a_[l] = draw_field(rng, true);
        b_[l] = draw_field(rng, false);
    }
}

Digest HashFn::finish(const std::array<uint64_t, 3>& polys) const {
    Digest d;
    unsigned shift = 0;
    for (unsigned l = 0; l < lanes_; ++l) {
        uint64_t v = mersenne::add(mersenne::mul(a_[l], polys[l]), b_[l]);
        if (shift < 64) {
            d.lo |= v << shift;
            if (shift + 61 > 64) d.hi |= v >> (64 - shift);
        } else {
            d.hi |= v << (shift - 64);
        }
        shift += 61;
    }
    if (out_bits_ < 64) {
        d.lo &= (uint64_t(1) << out_bits_) - 1;
        d.hi = 0;
    } else if (out_bits_ < 128) {
        d.hi &= out_bits_ == 64 ? 0 : (uint64_t(1) << (out_bits_ - 64)) - 1;
    }
    return d;
}

Digest HashFn::operator()(ByteView s) const {
    std::array<uint64_t, 3> polys{};
    for (unsigned l = 0; l < lanes_; ++l) {
        uint64_t acc = 1, x = x_[l];
        for (uint8_t c : s) acc = mersenne::add(mersenne::mul(acc, x), c);
        polys[l] = acc;
    }
    return finish(polys);
}

uint64_t HashFn::word(uint64_t v) const {
    std::array<uint64_t, 3> polys{};
    for (unsigned l = 0; l < lanes_; ++l) {
        uint64_t acc = mersenne::add(x_[l], v >> 32);
        acc = mersenne::add(mersenne::mul(acc, x_[l]), v & 0xffffffffu);
        polys[l] = acc;
    }
    return finish(polys).lo;
}

HashFn derive_hash(const SharedSeed& seed, std::string_view label, unsigned out_bits) {
    return HashFn(seed, label, out_bits);
}

std::mt19937_64 derive_rng(const SharedSeed& seed, std::string_view label) {
    auto seq = make_seq(seed, label, 0xffffffffu);
    return std::mt19937_64(seq);
}

std::vector<uint64_t> rolling_digest(ByteView s, size_t w, const HashFn& f) {
    if (w < 1 || w > s.size()) throw std::invalid_argument("window must satisfy 1 <= w <= |s|");
    if (f.out_bits() > 64) throw std::invalid_argument("rolling digest supports out_bits <= 64");
    using namespace mersenne;
    const unsigned lanes = f.lanes();
    std::array<uint64_t, 3> core{}, top{}, lead{};
    for (unsigned l = 0; l < lanes; ++l) {
        uint64_t x = f.x(l), pw = 1;
        for (size_t i = 0; i + 1 < w; ++i) pw = mul(pw, x);
        top[l] = pw;             // x^(w-1)
        lead[l] = mul(pw, x);    // x^w
        for (size_t i = 0; i < w; ++i) core[l] = add(mul(core[l], x), s[i]);
    }
    std::vector<uint64_t> out;
    out.reserve(s.size() - w + 1);
    for (size_t i = 0;; ++i) {
        std::array<uint64_t, 3> polys{};
        for (unsigned l = 0; l < lanes; ++l) polys[l] = add(core[l], lead[l]);
        out.push_back(f.finish(polys).lo);
        if (i + w >= s.size()) break;
        for (unsigned l = 0; l < lanes; ++l)
            core[l] = add(mul(sub(core[l], mul(s[i], top[l])), f.x(l)), s[i + w]);
    }
    return out;
}

unsigned small_hash(ByteView s, const HashFn& f) {
    if (f.out_bits() != 2) throw std::invalid_argument("small_hash needs a 2-bit HashFn");
    return unsigned(f.hash64(s));
}

SubstringHasher::SubstringHasher(ByteView s, const HashFn& f) : f_(&f), n_(s.size()) {
    using namespace mersenne;
    for (unsigned l = 0; l < f.lanes(); ++l) {
        auto& pre = prefix_[l];
        auto& pw = pow_[l];
        pre.resize(n_ + 1);
        pw.resize(n_ + 1);
        pre[0] = 0;
        pw[0] = 1;
        for (size_t i = 0; i < n_; ++i) {
            pre[i + 1] = add(mul(pre[i], f.x(l)), s[i]);
            pw[i + 1] = mul(pw[i], f.x(l));
        }
    }
}

uint64_t SubstringHasher::lane_poly(unsigned l, size_t begin, size_t end) const {
    using namespace mersenne;
    const auto& pre = prefix_[l];
    const auto& pw = pow_[l];
    uint64_t core = sub(pre[end], mul(pre[begin], pw[end - begin]));
    return add(core, pw[end - begin]);
}

Digest SubstringHasher::digest(size_t begin, size_t end) const {
    std::array<uint64_t, 3> polys{};
    for (unsigned l = 0; l < f_->lanes(); ++l) polys[l] = lane_poly(l, begin, end);
    return f_->finish(polys);
}

uint64_t SubstringHasher::operator()(size_t begin, size_t end) const { return digest(begin, end).lo; }

unsigned default_out_bits(uint64_t n) {
    unsigned b = 2 * ceil_log2(n < 2 ? 2 : n) + 32;
    return b > 128 ? 128 : b;
}

uint32_t fnv1a32(std::string_view s) {
    uint32_t h = 2166136261u;
    for (char c : s) {
        h ^= uint8_t(c);
        h *= 16777619u;
    }
    return h;
}

}  // namespace drsync

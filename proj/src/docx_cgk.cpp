#include <cmath>
#include <stdexcept>

#include "drsync/docx.hpp"

namespace drsync {

namespace {

SharedSeed rep_seed(const SharedSeed& seed, unsigned r) { return seed.derive("cgkx/" + std::to_string(r)); }

uint64_t doc_hash(ByteView a, const SharedSeed& seed) { return derive_hash(seed, "cgkx/doc", 64).hash64(a); }

}  // namespace

// Message: n u64, k u32, doc hash u64, reps u8, budget u32, then one
// single-table Hamming sketch of the embedding per replication.
Bytes cgk_exchange_encode(ByteView a, uint32_t k, const SharedSeed& seed, CgkExchangeParams p) {
    if (k < 1) throw std::invalid_argument("cgk exchange needs k >= 1");
    if (p.reps < 1) throw std::invalid_argument("cgk exchange needs reps >= 1");
    auto budget = uint32_t(std::ceil(p.budget_factor * double(k) * double(k)));
    Bytes out;
    put_le(out, a.size(), 8);
    put_le(out, k, 4);
    put_le(out, doc_hash(a, seed), 8);
    put_le(out, p.reps, 1);
    put_le(out, budget, 4);
    for (unsigned r = 0; r < p.reps; ++r) {
        SharedSeed s = rep_seed(seed, r);
        auto e = cgk_embed(a, s);
        hamming_sketch(e.symbols, budget, 1, s, "cgkx").serialize(out);
    }
    return out;
}

Expected<Bytes> cgk_exchange_decode(ByteView msg, ByteView b, const SharedSeed& seed) {
    size_t pos = 0;
    uint64_t n = get_le(msg, pos, 8);
    get_le(msg, pos, 4);
    uint64_t want = get_le(msg, pos, 8);
    auto reps = unsigned(get_le(msg, pos, 1));
    auto budget = uint32_t(get_le(msg, pos, 4));
    for (unsigned r = 0; r < reps; ++r) {
        SharedSeed s = rep_seed(seed, r);
        auto sa = HammingSketch::deserialize(msg, pos, s, "cgkx");
        if (sa.n != 3 * n) throw std::runtime_error("cgk exchange: sketch length mismatch");
        auto e = cgk_embed(b, s, n);
        auto sb = hamming_sketch(e.symbols, budget, 1, s, "cgkx");
        auto diffs = hamming_decode(sa, sb);
        if (!diffs) continue;
        for (const auto& d : *diffs) e.symbols[d.index] = d.x;
        e.n = n;
        auto x = cgk_invert(e, s);
        if (x && doc_hash(*x, seed) == want) return x;
    }
    return Expected<Bytes>::failure("cgk exchange: no replication verified");
}

}  // namespace drsync

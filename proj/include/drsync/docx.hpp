#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "drsync/bits.hpp"
#include "drsync/iblt.hpp"
#include "drsync/randcore.hpp"
#include "drsync/sketches.hpp"

namespace drsync {

// ---------------------------------------------------------------- IMS sketch

constexpr size_t kImsBottomBlock = 8;  // bytes (64 bits)

struct ImsLayout {
    uint64_t n = 0;
    uint32_t k = 0;
    unsigned hashed_levels = 0;  // levels carrying block hashes; a literal level follows
    unsigned jbits = 0;
    unsigned hbits = 0;

    static ImsLayout make(uint64_t n, uint32_t k);
    size_t block_size(unsigned level) const;  // level == hashed_levels is the literal level
    size_t blocks(unsigned level) const;
    unsigned levels() const { return hashed_levels + 1; }
    uint32_t cells() const;
};

struct ImsSketch {
    ImsLayout layout;
    std::vector<Iblt> levels;  // hashed levels, then the literal level

    void serialize(Bytes& out) const;
    Bytes serialize() const;
    size_t wire_bytes() const;
    static ImsSketch deserialize(ByteView in, size_t& pos, const SharedSeed& seed);
};

struct ImsDecodeStats {
    std::vector<size_t> extracted;  // per level: Alice entries left after Bob's cancellation
    std::vector<size_t> unmatched;  // of those, hashes with no matching substring of b
};

ImsSketch ims_encode(ByteView a, uint32_t k, const SharedSeed& seed);
Expected<Bytes> ims_decode(const ImsSketch& sk, ByteView b, const SharedSeed& seed, ImsDecodeStats* stats = nullptr);

// ------------------------------------------------------------ CGK exchanger

struct CgkExchangeParams {
    uint8_t reps = 9;
    double budget_factor = 10.0;  // Hamming budget = ceil(budget_factor * k^2)
};

Bytes cgk_exchange_encode(ByteView a, uint32_t k, const SharedSeed& seed, CgkExchangeParams p = {});
Expected<Bytes> cgk_exchange_decode(ByteView msg, ByteView b, const SharedSeed& seed);

// ------------------------------------------------------------- Fast variant

struct FastLayout {
    uint64_t n = 0;
    uint32_t k = 0;
    unsigned levels = 0;  // hashed levels 1..levels; bottom blocks are k^2 bytes
    unsigned replicas = 1;
    unsigned jbits = 0;
    unsigned hbits = 0;
    uint8_t delta_exp = 20;

    static FastLayout make(uint64_t n, uint32_t k, uint8_t delta_exp);
    size_t block_size(unsigned level) const { return size_t(k) * k << (levels - level); }
    size_t blocks(unsigned level) const;
    uint32_t cells() const;
    bool same_shape(const FastLayout& o) const {
        return k == o.k && levels == o.levels && replicas == o.replicas && jbits == o.jbits && hbits == o.hbits;
    }
};

bool fast_applicable(uint64_t n, uint32_t k);

struct FastSketch {
    FastLayout layout;
    std::vector<std::vector<Iblt>> tables;  // [replica][level-1]
    std::vector<Iblt> bottom;               // T* per replica

    void serialize(Bytes& out) const;
    Bytes serialize() const;
    size_t wire_bytes() const;
    static FastSketch deserialize(ByteView in, size_t& pos, const SharedSeed& seed);
};

FastSketch fast_encode(ByteView a, uint32_t k, uint8_t delta_exp, const SharedSeed& seed);

struct FastTuple {
    unsigned level;
    uint64_t block;
    int shift;
    bool operator==(const FastTuple&) const = default;
};

class FastPrecomp {
public:
    FastPrecomp(ByteView b, uint32_t k, uint8_t delta_exp, const SharedSeed& seed, uint64_t n_hint = 0);
    FastPrecomp(const FastPrecomp&) = delete;
    FastPrecomp& operator=(const FastPrecomp&) = delete;

    const FastLayout& layout() const { return layout_; }
    ByteView doc() const { return b_; }
    const SharedSeed& seed() const { return seed_; }

    // Shift m with b[start+m, +len) hashing to h, or none; smallest |m| wins.
    std::optional<int> lookup(unsigned level, uint64_t block, uint64_t n_a, uint64_t h) const;
    // Alice-side contribution to T_level of block (i, j) read from b at shift m.
    Iblt fragment(unsigned i, uint64_t j, int m, unsigned level, unsigned replica, uint64_t n_a) const;
    void subtract_fragment(Iblt& t, unsigned i, uint64_t j, int m, unsigned level, unsigned replica,
                           uint64_t n_a) const;
    Iblt fragment_from_scratch(unsigned i, uint64_t j, int m, unsigned level, unsigned replica, uint64_t n_a) const;
    bool fragment_cached(unsigned i, uint64_t j, int m, unsigned level, unsigned replica) const;
    size_t cached_fragments() const { return cached_; }
    uint64_t key_of(unsigned level, uint64_t block, uint64_t h) const;
    uint64_t block_hash(size_t begin, size_t end) const;
    const std::string& label(unsigned level, unsigned replica) const;
    bool in_range(unsigned i, uint64_t j, int m, uint64_t n_a, size_t& begin, size_t& len) const;

    // Caches every fragment regardless of cost (test hook).
    void cache_all();

private:
    const Iblt* cached(unsigned i, uint64_t j, int m, unsigned level, unsigned replica) const;
    void apply(Iblt& t, unsigned i, uint64_t j, int m, unsigned level, unsigned replica, uint64_t n_a, int sign,
               bool use_cache) const;
    void build_cache(bool all);

    Bytes b_;
    FastLayout layout_;
    SharedSeed seed_;
    HashFn block_fn_;
    SubstringHasher sub_;
    std::vector<std::vector<std::vector<std::pair<uint64_t, int>>>> h_;  // [level][block] sorted (digest, m)
    std::vector<std::string> labels_;                                     // [replica*levels + level-1]
    std::vector<Iblt> empty_;                                             // same indexing as labels_
    std::vector<std::unique_ptr<Iblt>> cache_;
    std::vector<size_t> cache_base_;  // per (replica, i, level), or npos
    size_t cached_ = 0;
};

struct CheckState {
    unsigned replica_for_bottom = 0;
    std::vector<FastTuple> matched;
};

Expected<CheckState> fast_failure_check(const FastSketch& sk, const FastPrecomp& pc);
Expected<Bytes> fast_decode(const FastSketch& sk, const FastPrecomp& pc, const CheckState& st);

// ------------------------------------------------------------------ oracles

size_t edit_distance(ByteView a, ByteView b);

}  // namespace drsync

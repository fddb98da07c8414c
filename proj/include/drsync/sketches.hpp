#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "drsync/bits.hpp"
#include "drsync/iblt.hpp"
#include "drsync/randcore.hpp"

namespace drsync {

// Random-walk embedding: 3*out_n output symbols; the cursor advances by the
// seed bit indexed by (step, emitted symbol).  Pad symbol 0 past the end.
struct CgkEncoding {
    Bytes symbols;
    size_t n = 0;
};

CgkEncoding cgk_embed(ByteView x, const SharedSeed& seed, size_t out_n);
inline CgkEncoding cgk_embed(ByteView x, const SharedSeed& seed) { return cgk_embed(x, seed, x.size()); }
Expected<Bytes> cgk_invert(const CgkEncoding& e, const SharedSeed& seed);

size_t hamming_distance(ByteView a, ByteView b);

struct HammingDiff {
    uint64_t index;
    uint8_t x;
    uint8_t y;
    bool operator==(const HammingDiff&) const = default;
};

struct HammingSketch {
    uint64_t n = 0;
    uint32_t k = 0;
    uint8_t reps = 0;
    std::vector<Iblt> tables;

    static uint32_t cells_for(uint32_t k);
    void serialize(Bytes& out) const;
    size_t wire_bytes() const;
    static HammingSketch deserialize(ByteView in, size_t& pos, const SharedSeed& seed, const std::string& label);
};

HammingSketch hamming_sketch(ByteView x, uint32_t k, uint8_t reps, const SharedSeed& seed,
                             const std::string& label = "ham");
// Differences (index, a-symbol, b-symbol) between the sketched strings.
Expected<std::vector<HammingDiff>> hamming_decode(const HammingSketch& a, const HammingSketch& b);

class StrataEstimator {
public:
    StrataEstimator() = default;
    StrataEstimator(const SharedSeed& seed, std::string label, uint8_t strata = 32, uint8_t reps = 5);

    void insert(uint64_t key);
    void merge(const StrataEstimator& o);  // subtracts o
    uint64_t query() const;

    unsigned stratum_of(uint64_t key, unsigned rep) const;
    uint8_t strata() const { return strata_; }
    uint8_t reps() const { return reps_; }

    void serialize(Bytes& out) const;
    size_t wire_bytes() const;
    static StrataEstimator deserialize(ByteView in, size_t& pos, const SharedSeed& seed, const std::string& label);

private:
    uint64_t query_rep(unsigned rep) const;
    SharedSeed seed_{};
    std::string label_;
    uint8_t strata_ = 0;
    uint8_t reps_ = 0;
    std::vector<HashFn> level_;
    std::vector<Iblt> tables_;  // rep-major
};

StrataEstimator strata_create(const std::vector<uint64_t>& keys, const SharedSeed& seed, const std::string& label,
                              uint8_t strata = 32, uint8_t reps = 5);
StrataEstimator strata_create(ByteView x, const SharedSeed& seed, const std::string& label, uint8_t strata = 32,
                              uint8_t reps = 5);
StrataEstimator strata_merge(const StrataEstimator& a, const StrataEstimator& b);
uint64_t strata_query(const StrataEstimator& d);

// Strata count suited to a difference of at most `max_diff` items.
uint8_t strata_levels_for(uint64_t max_diff);

// Measured inflation factor applied before sizing from an estimate.
constexpr double kStrataSafety = 2.0;

}  // namespace drsync

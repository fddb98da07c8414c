#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "drsync/bits.hpp"
#include "drsync/randcore.hpp"

namespace drsync {

struct IbltParams {
    uint32_t cells = 0;  // rounded up to a multiple of q
    uint8_t q = 4;
    uint32_t value_width = 0;
};

class Iblt {
public:
    struct Entry {
        uint64_t key;
        Bytes value;
        bool operator==(const Entry&) const = default;
    };
    struct PeelResult {
        bool complete = false;
        std::vector<Entry> positives;
        std::vector<Entry> negatives;
        std::vector<int32_t> residual_counts;  // cell counts left after peeling
    };

    Iblt() = default;
    Iblt(IbltParams params, const SharedSeed& seed, std::string label);

    static uint32_t cells_for(size_t items, double load = 0.2, uint8_t q = 4);

    void insert(uint64_t key, ByteView value = {});
    void erase(uint64_t key, ByteView value = {});
    void add(const Iblt& o);
    void subtract(const Iblt& o);

    PeelResult peel() const;
    bool empty() const;

    uint32_t m() const { return m_; }
    uint8_t q() const { return q_; }
    uint32_t value_width() const { return vw_; }
    const std::string& label() const { return label_; }
    const SharedSeed& seed() const { return seed_; }

    // Cell indices for a key, one per region.
    void cells_of(uint64_t key, uint32_t* out) const;
    bool compatible(const Iblt& o) const;

    int32_t count(size_t cell) const { return counts_[cell]; }
    uint64_t key_xor(size_t cell) const { return keys_[cell]; }
    uint32_t check_xor(size_t cell) const { return checks_[cell]; }
    ByteView value_xor(size_t cell) const { return {values_.data() + cell * vw_, vw_}; }
    void corrupt_cell(size_t cell, uint64_t key_mask) { keys_[cell] ^= key_mask; }

    bool operator==(const Iblt& o) const;

    // Header: m u32, q u8, value_width u32, label hash u32; then cells little-endian.
    void serialize(Bytes& out) const;
    Bytes serialize() const;
    size_t wire_bytes() const { return 13 + size_t(m_) * (16 + vw_); }
    static Iblt deserialize(ByteView in, size_t& pos, const SharedSeed& seed, const std::string& label);
    // Same layout, except each cell value is sent as a u32 length and its
    // bytes up to the last nonzero one.
    void serialize_trimmed(Bytes& out) const;
    size_t trimmed_bytes() const;
    static Iblt deserialize_trimmed(ByteView in, size_t& pos, const SharedSeed& seed, const std::string& label);

private:
    void update(uint64_t key, ByteView value, int sign);
    uint32_t checksum(uint64_t key) const { return uint32_t(check_.word(key)); }

    uint32_t m_ = 0;
    uint8_t q_ = 0;
    uint32_t vw_ = 0;
    uint32_t region_ = 0;
    SharedSeed seed_{};
    std::string label_;
    std::vector<HashFn> index_;
    HashFn check_;
    std::vector<int32_t> counts_;
    std::vector<uint64_t> keys_;
    std::vector<uint32_t> checks_;
    Bytes values_;
};

}  // namespace drsync

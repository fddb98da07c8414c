#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace drsync {

using Bytes = std::vector<uint8_t>;
using ByteView = std::span<const uint8_t>;

inline ByteView view(const std::string& s) {
    return {reinterpret_cast<const uint8_t*>(s.data()), s.size()};
}
inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }
inline std::string to_string(ByteView b) { return std::string(b.begin(), b.end()); }

// Bit string packed MSB-first; trailing bits of the last byte are zero.
struct BitString {
    Bytes bytes;
    size_t nbits = 0;

    static BitString from_bytes(Bytes b) {
        BitString s;
        s.nbits = b.size() * 8;
        s.bytes = std::move(b);
        return s;
    }
    bool operator==(const BitString&) const = default;
};

class BitWriter {
public:
    void put(uint64_t v, unsigned width) {
        for (unsigned i = width; i-- > 0;) put_bit((v >> i) & 1u);
    }
    void put_bit(bool bit) {
        if (out_.nbits % 8 == 0) out_.bytes.push_back(0);
        if (bit) out_.bytes.back() |= uint8_t(0x80u >> (out_.nbits % 8));
        ++out_.nbits;
    }
    void put_bytes(ByteView b) {
        if (out_.nbits % 8 == 0) {
            out_.bytes.insert(out_.bytes.end(), b.begin(), b.end());
            out_.nbits += b.size() * 8;
            return;
        }
        for (uint8_t c : b) put(c, 8);
    }
    void put_bits(const BitString& s) {
        for (size_t i = 0; i < s.nbits; ++i) put_bit((s.bytes[i / 8] >> (7 - i % 8)) & 1u);
    }
    // LEB128 for unbounded lengths.
    void put_varint(uint64_t v) {
        do {
            uint8_t c = v & 0x7f;
            v >>= 7;
            put(c | (v ? 0x80 : 0), 8);
        } while (v);
    }
    size_t size() const { return out_.nbits; }
    BitString finish() { return std::move(out_); }

private:
    BitString out_;
};

class BitReader {
public:
    explicit BitReader(const BitString& s) : s_(&s) {}

    uint64_t get(unsigned width) {
        if (width > remaining()) throw std::runtime_error("bit reader underflow");
        uint64_t v = 0;
        for (unsigned i = 0; i < width; ++i) v = (v << 1) | get_bit_unchecked();
        return v;
    }
    bool get_bit() { return get(1) != 0; }
    Bytes get_bytes(size_t n) {
        if (n * 8 > remaining()) throw std::runtime_error("bit reader underflow");
        Bytes out;
        if (pos_ % 8 == 0) {
            auto first = s_->bytes.begin() + long(pos_ / 8);
            out.assign(first, first + long(n));
            pos_ += n * 8;
            return out;
        }
        out.reserve(n);
        for (size_t i = 0; i < n; ++i) out.push_back(uint8_t(get(8)));
        return out;
    }
    uint64_t get_varint() {
        uint64_t v = 0;
        for (unsigned shift = 0; shift < 64; shift += 7) {
            uint64_t c = get(8);
            v |= (c & 0x7f) << shift;
            if (!(c & 0x80)) return v;
        }
        throw std::runtime_error("varint too long");
    }
    size_t remaining() const { return s_->nbits - pos_; }
    size_t position() const { return pos_; }

private:
    bool get_bit_unchecked() {
        bool b = (s_->bytes[pos_ / 8] >> (7 - pos_ % 8)) & 1u;
        ++pos_;
        return b;
    }
    const BitString* s_;
    size_t pos_ = 0;
};

// Little-endian helpers for byte-oriented wire formats.
inline void put_le(Bytes& out, uint64_t v, unsigned nbytes) {
    for (unsigned i = 0; i < nbytes; ++i) out.push_back(uint8_t(v >> (8 * i)));
}
inline uint64_t get_le(ByteView in, size_t& pos, unsigned nbytes) {
    if (pos + nbytes > in.size()) throw std::runtime_error("truncated frame");
    uint64_t v = 0;
    for (unsigned i = 0; i < nbytes; ++i) v |= uint64_t(in[pos + i]) << (8 * i);
    pos += nbytes;
    return v;
}

// Success value or a failure tagged with the stage that gave up.
template <class T>
class Expected {
public:
    Expected(T v) : v_(std::move(v)) {}
    static Expected failure(std::string stage) {
        Expected e;
        e.err_ = std::move(stage);
        return e;
    }
    explicit operator bool() const { return v_.has_value(); }
    bool ok() const { return v_.has_value(); }
    T& operator*() { return *v_; }
    const T& operator*() const { return *v_; }
    T* operator->() { return &*v_; }
    const T* operator->() const { return &*v_; }
    const std::string& error() const { return err_; }

private:
    Expected() = default;
    std::optional<T> v_;
    std::string err_;
};

inline unsigned ceil_log2(uint64_t n) {
    unsigned r = 0;
    while ((uint64_t(1) << r) < n && r < 64) ++r;
    return r;
}

}  // namespace drsync

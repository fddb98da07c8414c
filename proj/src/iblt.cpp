#include "drsync/iblt.hpp"

#include <cmath>
#include <stdexcept>

namespace drsync {

Iblt::Iblt(IbltParams params, const SharedSeed& seed, std::string label)
    : q_(params.q), vw_(params.value_width), seed_(seed), label_(std::move(label)) {
    if (q_ < 1 || q_ > 16) throw std::invalid_argument("q must be in [1, 16]");
    uint32_t cells = params.cells < q_ ? q_ : params.cells;
    region_ = (cells + q_ - 1) / q_;
    if (region_ > (1u << 30)) throw std::invalid_argument("table too large");
    m_ = region_ * q_;
    for (unsigned i = 0; i < (q_ + 1u) / 2; ++i)
        index_.push_back(derive_hash(seed_, label_ + "/idx" + std::to_string(i), 60));
    check_ = derive_hash(seed_, label_ + "/check", 32);
    counts_.assign(m_, 0);
    keys_.assign(m_, 0);
    checks_.assign(m_, 0);
    values_.assign(size_t(m_) * vw_, 0);
}

uint32_t Iblt::cells_for(size_t items, double load, uint8_t q) {
    auto c = uint32_t(std::ceil(double(items) / load));
    if (c < q) c = q;
    return (c + q - 1) / q * q;
}

void Iblt::cells_of(uint64_t key, uint32_t* out) const {
    for (unsigned r = 0; r < q_; ++r) {
        uint64_t h = index_[r / 2].word(key);
        uint64_t chunk = (r % 2 == 0) ? (h & 0x3fffffffu) : (h >> 30);
        out[r] = r * region_ + uint32_t((chunk * region_) >> 30);
    }
}

bool Iblt::compatible(const Iblt& o) const {
    return m_ == o.m_ && q_ == o.q_ && vw_ == o.vw_ && seed_ == o.seed_ && label_ == o.label_;
}

void Iblt::update(uint64_t key, ByteView value, int sign) {
    if (value.size() > vw_) {
        throw std::invalid_argument(vw_ == 0 ? "value given for a keys-only table" : "value wider than table");
    }
    uint32_t idx[16];
    cells_of(key, idx);
    uint32_t cs = checksum(key);
    for (unsigned r = 0; r < q_; ++r) {
        size_t c = idx[r];
        counts_[c] += sign;
        keys_[c] ^= key;
        checks_[c] ^= cs;
        uint8_t* v = values_.data() + c * vw_;
        for (size_t i = 0; i < value.size(); ++i) v[i] ^= value[i];
    }
}

void Iblt::insert(uint64_t key, ByteView value) { update(key, value, +1); }
void Iblt::erase(uint64_t key, ByteView value) { update(key, value, -1); }

void Iblt::add(const Iblt& o) {
    if (!compatible(o)) throw std::invalid_argument("iblt parameter mismatch");
    for (size_t c = 0; c < m_; ++c) {
        counts_[c] += o.counts_[c];
        keys_[c] ^= o.keys_[c];
        checks_[c] ^= o.checks_[c];
    }
    for (size_t i = 0; i < values_.size(); ++i) values_[i] ^= o.values_[i];
}

void Iblt::subtract(const Iblt& o) {
    if (!compatible(o)) throw std::invalid_argument("iblt parameter mismatch");
    for (size_t c = 0; c < m_; ++c) {
        counts_[c] -= o.counts_[c];
        keys_[c] ^= o.keys_[c];
        checks_[c] ^= o.checks_[c];
    }
    for (size_t i = 0; i < values_.size(); ++i) values_[i] ^= o.values_[i];
}

bool Iblt::empty() const {
    for (size_t c = 0; c < m_; ++c)
        if (counts_[c] || keys_[c] || checks_[c]) return false;
    for (uint8_t b : values_)
        if (b) return false;
    return true;
}

Iblt::PeelResult Iblt::peel() const {
    Iblt t = *this;
    PeelResult res;
    std::vector<uint32_t> work;
    work.reserve(m_);
    for (uint32_t c = 0; c < m_; ++c)
        if (t.counts_[c] == 1 || t.counts_[c] == -1) work.push_back(c);
    uint32_t idx[16];
    // A checksum collision can make a non-pure cell look pure and set off an
    // extraction cycle; more extractions than cells means the table is bad.
    size_t budget = size_t(m_) + 1;
    while (!work.empty()) {
        uint32_t c = work.back();
        work.pop_back();
        int32_t cnt = t.counts_[c];
        if (cnt != 1 && cnt != -1) continue;
        uint64_t key = t.keys_[c];
        if (t.checksum(key) != t.checks_[c]) continue;
        t.cells_of(key, idx);
        bool owns = false;
        for (unsigned r = 0; r < q_; ++r) owns |= idx[r] == c;
        if (!owns) continue;
        Bytes value(t.values_.begin() + long(size_t(c) * vw_), t.values_.begin() + long(size_t(c + 1) * vw_));
        if (budget-- == 0) break;
        (cnt == 1 ? res.positives : res.negatives).push_back({key, value});
        t.update(key, value, -cnt);
        for (unsigned r = 0; r < q_; ++r)
            if (t.counts_[idx[r]] == 1 || t.counts_[idx[r]] == -1) work.push_back(idx[r]);
    }
    res.complete = t.empty();
    res.residual_counts = std::move(t.counts_);
    return res;
}

bool Iblt::operator==(const Iblt& o) const {
    return compatible(o) && counts_ == o.counts_ && keys_ == o.keys_ && checks_ == o.checks_ &&
           values_ == o.values_;
}

void Iblt::serialize(Bytes& out) const {
    out.reserve(out.size() + wire_bytes());
    put_le(out, m_, 4);
    put_le(out, q_, 1);
    put_le(out, vw_, 4);
    put_le(out, fnv1a32(label_), 4);
    for (size_t c = 0; c < m_; ++c) {
        put_le(out, uint32_t(counts_[c]), 4);
        put_le(out, keys_[c], 8);
        put_le(out, checks_[c], 4);
        out.insert(out.end(), values_.begin() + long(c * vw_), values_.begin() + long((c + 1) * vw_));
    }
}

namespace {

size_t used_width(ByteView v) {
    size_t n = v.size();
    while (n > 0 && v[n - 1] == 0) --n;
    return n;
}

}  // namespace

void Iblt::serialize_trimmed(Bytes& out) const {
    put_le(out, m_, 4);
    put_le(out, q_, 1);
    put_le(out, vw_, 4);
    put_le(out, fnv1a32(label_), 4);
    for (size_t c = 0; c < m_; ++c) {
        put_le(out, uint32_t(counts_[c]), 4);
        put_le(out, keys_[c], 8);
        put_le(out, checks_[c], 4);
        size_t n = used_width(value_xor(c));
        put_le(out, n, 4);
        out.insert(out.end(), values_.begin() + long(c * vw_), values_.begin() + long(c * vw_ + n));
    }
}

size_t Iblt::trimmed_bytes() const {
    size_t s = 13 + size_t(m_) * 20;
    for (size_t c = 0; c < m_; ++c) s += used_width(value_xor(c));
    return s;
}

Iblt Iblt::deserialize_trimmed(ByteView in, size_t& pos, const SharedSeed& seed, const std::string& label) {
    auto m = uint32_t(get_le(in, pos, 4));
    auto q = uint8_t(get_le(in, pos, 1));
    auto vw = uint32_t(get_le(in, pos, 4));
    auto lh = uint32_t(get_le(in, pos, 4));
    if (lh != fnv1a32(label)) throw std::runtime_error("iblt label mismatch");
    if (q == 0 || m % q != 0) throw std::runtime_error("bad iblt header");
    if (size_t(m) * 20 > in.size() - pos) throw std::runtime_error("truncated iblt frame");
    Iblt t({m, q, vw}, seed, label);
    if (t.m_ != m) throw std::runtime_error("bad iblt header");
    for (size_t c = 0; c < m; ++c) {
        t.counts_[c] = int32_t(uint32_t(get_le(in, pos, 4)));
        t.keys_[c] = get_le(in, pos, 8);
        t.checks_[c] = uint32_t(get_le(in, pos, 4));
        auto n = size_t(get_le(in, pos, 4));
        if (n > vw || n > in.size() - pos) throw std::runtime_error("truncated iblt frame");
        std::copy(in.begin() + long(pos), in.begin() + long(pos + n), t.values_.begin() + long(c * vw));
        pos += n;
    }
    return t;
}

Bytes Iblt::serialize() const {
    Bytes out;
    serialize(out);
    return out;
}

Iblt Iblt::deserialize(ByteView in, size_t& pos, const SharedSeed& seed, const std::string& label) {
    auto m = uint32_t(get_le(in, pos, 4));
    auto q = uint8_t(get_le(in, pos, 1));
    auto vw = uint32_t(get_le(in, pos, 4));
    auto lh = uint32_t(get_le(in, pos, 4));
    if (lh != fnv1a32(label)) throw std::runtime_error("iblt label mismatch");
    if (q == 0 || m % q != 0) throw std::runtime_error("bad iblt header");
    if (size_t(m) * (16 + vw) > in.size() - pos) throw std::runtime_error("truncated iblt frame");
    Iblt t({m, q, vw}, seed, label);
    if (t.m_ != m) throw std::runtime_error("bad iblt header");
    for (size_t c = 0; c < m; ++c) {
        t.counts_[c] = int32_t(uint32_t(get_le(in, pos, 4)));
        t.keys_[c] = get_le(in, pos, 8);
        t.checks_[c] = uint32_t(get_le(in, pos, 4));
        std::copy(in.begin() + long(pos), in.begin() + long(pos + vw), t.values_.begin() + long(c * vw));
        pos += vw;
    }
    return t;
}

}  // namespace drsync

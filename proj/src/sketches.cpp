#include "drsync/sketches.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

namespace drsync {

namespace {

// 256 walk bits per step, one per symbol value.
struct WalkBits {
    explicit WalkBits(const SharedSeed& seed) : rng(derive_rng(seed, "cgk")) {}
    void next() {
        for (auto& w : words) w = rng();
    }
    bool bit(uint8_t c) const { return (words[c >> 6] >> (c & 63)) & 1u; }
    std::mt19937_64 rng;
    std::array<uint64_t, 4> words{};
};

}  // namespace

CgkEncoding cgk_embed(ByteView x, const SharedSeed& seed, size_t out_n) {
    CgkEncoding e;
    e.n = x.size();
    e.symbols.resize(3 * out_n);
    WalkBits r(seed);
    size_t cursor = 0;
    for (size_t t = 0; t < e.symbols.size(); ++t) {
        r.next();
        if (cursor < x.size()) {
            uint8_t c = x[cursor];
            e.symbols[t] = c;
            cursor += r.bit(c);
        } else {
            e.symbols[t] = 0;
        }
    }
    return e;
}

Expected<Bytes> cgk_invert(const CgkEncoding& e, const SharedSeed& seed) {
    Bytes x(e.n);
    WalkBits r(seed);
    size_t cursor = 0;
    size_t known = 0;  // positions [0, known) already written
    for (size_t t = 0; t < e.symbols.size(); ++t) {
        r.next();
        uint8_t c = e.symbols[t];
        if (cursor < e.n) {
            if (cursor < known) {
                if (x[cursor] != c) return Expected<Bytes>::failure("cgk: inconsistent walk");
            } else {
                x[cursor] = c;
                known = cursor + 1;
            }
            cursor += r.bit(c);
        } else if (c != 0) {
            return Expected<Bytes>::failure("cgk: symbol past end");
        }
    }
    if (cursor < e.n) return Expected<Bytes>::failure("cgk: walk did not reach the end");
    return x;
}

size_t hamming_distance(ByteView a, ByteView b) {
    if (a.size() != b.size()) throw std::invalid_argument("hamming distance needs equal lengths");
    size_t d = 0;
    for (size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
    return d;
}

uint32_t HammingSketch::cells_for(uint32_t k) {
    uint32_t c = std::max<uint32_t>(16, 6 * k);
    return (c + 3) / 4 * 4;
}

HammingSketch hamming_sketch(ByteView x, uint32_t k, uint8_t reps, const SharedSeed& seed, const std::string& label) {
    if (x.size() >= (uint64_t(1) << 56)) throw std::invalid_argument("string too long for hamming keys");
    HammingSketch s;
    s.n = x.size();
    s.k = k;
    s.reps = reps;
    for (unsigned r = 0; r < reps; ++r) {
        Iblt t({HammingSketch::cells_for(k), 4, 0}, seed, label + "/" + std::to_string(r));
        for (size_t i = 0; i < x.size(); ++i) t.insert(uint64_t(i) << 8 | x[i]);
        s.tables.push_back(std::move(t));
    }
    return s;
}

Expected<std::vector<HammingDiff>> hamming_decode(const HammingSketch& a, const HammingSketch& b) {
    if (a.n != b.n || a.k != b.k || a.reps != b.reps || a.tables.size() != b.tables.size())
        throw std::invalid_argument("hamming sketch parameter mismatch");
    for (size_t r = 0; r < a.tables.size(); ++r) {
        Iblt t = a.tables[r];
        t.subtract(b.tables[r]);
        auto p = t.peel();
        if (!p.complete || p.positives.size() != p.negatives.size()) continue;
        std::map<uint64_t, uint8_t> ys;
        for (const auto& e : p.negatives) ys[e.key >> 8] = uint8_t(e.key);
        std::vector<HammingDiff> out;
        bool ok = ys.size() == p.negatives.size();
        for (const auto& e : p.positives) {
            auto it = ys.find(e.key >> 8);
            if (it == ys.end() || (e.key >> 8) >= a.n) {
                ok = false;
                break;
            }
            out.push_back({e.key >> 8, uint8_t(e.key), it->second});
        }
        if (!ok) continue;
        std::sort(out.begin(), out.end(), [](const HammingDiff& u, const HammingDiff& v) { return u.index < v.index; });
        return out;
    }
    return Expected<std::vector<HammingDiff>>::failure("hamming: no replica peeled");
}

void HammingSketch::serialize(Bytes& out) const {
    put_le(out, n, 8);
    put_le(out, k, 4);
    put_le(out, reps, 1);
    for (const auto& t : tables) t.serialize(out);
}

size_t HammingSketch::wire_bytes() const {
    size_t s = 13;
    for (const auto& t : tables) s += t.wire_bytes();
    return s;
}

HammingSketch HammingSketch::deserialize(ByteView in, size_t& pos, const SharedSeed& seed, const std::string& label) {
    HammingSketch s;
    s.n = get_le(in, pos, 8);
    s.k = uint32_t(get_le(in, pos, 4));
    s.reps = uint8_t(get_le(in, pos, 1));
    for (unsigned r = 0; r < s.reps; ++r)
        s.tables.push_back(Iblt::deserialize(in, pos, seed, label + "/" + std::to_string(r)));
    return s;
}

StrataEstimator::StrataEstimator(const SharedSeed& seed, std::string label, uint8_t strata, uint8_t reps)
    : seed_(seed), label_(std::move(label)), strata_(strata), reps_(reps) {
    if (strata < 1 || strata > 64 || reps < 1) throw std::invalid_argument("bad strata parameters");
    for (unsigned r = 0; r < reps_; ++r) {
        level_.push_back(derive_hash(seed_, label_ + "/level" + std::to_string(r), 64));
        for (unsigned l = 0; l < strata_; ++l)
            tables_.emplace_back(IbltParams{16, 4, 0}, seed_,
                                 label_ + "/" + std::to_string(r) + "/" + std::to_string(l));
    }
}

unsigned StrataEstimator::stratum_of(uint64_t key, unsigned rep) const {
    uint64_t h = level_[rep].word(key);
    unsigned z = h ? unsigned(__builtin_ctzll(h)) : 64;
    return std::min<unsigned>(z, strata_ - 1u);
}

void StrataEstimator::insert(uint64_t key) {
    for (unsigned r = 0; r < reps_; ++r) tables_[r * strata_ + stratum_of(key, r)].insert(key);
}

void StrataEstimator::merge(const StrataEstimator& o) {
    if (strata_ != o.strata_ || reps_ != o.reps_ || label_ != o.label_ || !(seed_ == o.seed_))
        throw std::invalid_argument("strata estimator parameter mismatch");
    for (size_t i = 0; i < tables_.size(); ++i) tables_[i].subtract(o.tables_[i]);
}

uint64_t StrataEstimator::query_rep(unsigned rep) const {
    uint64_t count = 0;
    for (int l = strata_ - 1; l >= 0; --l) {
        auto p = tables_[rep * strata_ + unsigned(l)].peel();
        if (!p.complete) {
            uint64_t scale = uint64_t(1) << (l + 1);
            return count ? scale * count : scale;
        }
        count += p.positives.size() + p.negatives.size();
    }
    return count;
}

uint64_t StrataEstimator::query() const {
    std::vector<uint64_t> est;
    for (unsigned r = 0; r < reps_; ++r) est.push_back(query_rep(r));
    std::sort(est.begin(), est.end());
    return est[est.size() / 2];
}

void StrataEstimator::serialize(Bytes& out) const {
    put_le(out, strata_, 1);
    put_le(out, reps_, 1);
    for (const auto& t : tables_) t.serialize(out);
}

size_t StrataEstimator::wire_bytes() const {
    size_t s = 2;
    for (const auto& t : tables_) s += t.wire_bytes();
    return s;
}

StrataEstimator StrataEstimator::deserialize(ByteView in, size_t& pos, const SharedSeed& seed,
                                             const std::string& label) {
    auto strata = uint8_t(get_le(in, pos, 1));
    auto reps = uint8_t(get_le(in, pos, 1));
    StrataEstimator e(seed, label, strata, reps);
    for (unsigned r = 0; r < reps; ++r)
        for (unsigned l = 0; l < strata; ++l)
            e.tables_[r * strata + l] =
                Iblt::deserialize(in, pos, seed, label + "/" + std::to_string(r) + "/" + std::to_string(l));
    return e;
}

StrataEstimator strata_create(const std::vector<uint64_t>& keys, const SharedSeed& seed, const std::string& label,
                              uint8_t strata, uint8_t reps) {
    StrataEstimator e(seed, label, strata, reps);
    for (uint64_t k : keys) e.insert(k);
    return e;
}

StrataEstimator strata_create(ByteView x, const SharedSeed& seed, const std::string& label, uint8_t strata,
                              uint8_t reps) {
    StrataEstimator e(seed, label, strata, reps);
    for (size_t i = 0; i < x.size(); ++i) e.insert(uint64_t(i) << 8 | x[i]);
    return e;
}

StrataEstimator strata_merge(const StrataEstimator& a, const StrataEstimator& b) {
    StrataEstimator m = a;
    m.merge(b);
    return m;
}

uint64_t strata_query(const StrataEstimator& d) { return d.query(); }

uint8_t strata_levels_for(uint64_t max_diff) {
    unsigned l = ceil_log2(max_diff + 1) + 2;
    return uint8_t(std::min(l, 32u));
}

}  // namespace drsync

#include <algorithm>
#include <stdexcept>
#include <unordered_map>

#include "drsync/docx.hpp"

namespace drsync {

ImsLayout ImsLayout::make(uint64_t n, uint32_t k) {
    if (k < 1) throw std::invalid_argument("ims needs k >= 1");
    ImsLayout l;
    l.n = n;
    l.k = k;
    uint64_t per = uint64_t(kImsBottomBlock) * k;
    l.hashed_levels = n > per ? ceil_log2((n + per - 1) / per) : 0;
    l.jbits = ceil_log2(l.blocks(l.hashed_levels) + 1);
    if (l.jbits < 1) l.jbits = 1;
    l.hbits = std::min(61u, 64u - l.jbits);
    return l;
}

size_t ImsLayout::block_size(unsigned level) const { return kImsBottomBlock << (hashed_levels - level); }

size_t ImsLayout::blocks(unsigned level) const {
    size_t s = block_size(level);
    return (n + s - 1) / s;
}

uint32_t ImsLayout::cells() const { return Iblt::cells_for(size_t(5) * k); }

namespace {

std::string level_label(unsigned i) { return "ims/L" + std::to_string(i); }

uint64_t pack(const ImsLayout& l, uint64_t j, uint64_t h) {
    uint64_t mask = l.hbits >= 64 ? ~uint64_t(0) : (uint64_t(1) << l.hbits) - 1;
    return j | (h & mask) << l.jbits;
}

Bytes literal_value(ByteView block) {
    Bytes v(kImsBottomBlock + 1, 0);
    v[0] = uint8_t(block.size());
    std::copy(block.begin(), block.end(), v.begin() + 1);
    return v;
}

}  // namespace

ImsSketch ims_encode(ByteView a, uint32_t k, const SharedSeed& seed) {
    ImsSketch sk;
    sk.layout = ImsLayout::make(a.size(), k);
    const auto& L = sk.layout;
    HashFn f = derive_hash(seed, "ims/block", 64);
    SubstringHasher sub(a, f);
    for (unsigned i = 0; i <= L.hashed_levels; ++i) {
        bool literal = i == L.hashed_levels;
        Iblt t({L.cells(), 4, uint16_t(literal ? kImsBottomBlock + 1 : 0)}, seed, level_label(i));
        size_t s = L.block_size(i);
        for (size_t j = 0; j < L.blocks(i); ++j) {
            size_t b = j * s, e = std::min<size_t>(b + s, a.size());
            uint64_t key = pack(L, j, sub(b, e));
            if (literal)
                t.insert(key, literal_value(a.subspan(b, e - b)));
            else
                t.insert(key);
        }
        sk.levels.push_back(std::move(t));
    }
    return sk;
}

Expected<Bytes> ims_decode(const ImsSketch& sk, ByteView b, const SharedSeed& seed, ImsDecodeStats* stats) {
    const auto& L = sk.layout;
    const size_t n = L.n;
    HashFn f = derive_hash(seed, "ims/block", 64);
    SubstringHasher sub(b, f);
    const uint64_t jmask = (uint64_t(1) << L.jbits) - 1;
    const uint64_t hmask = (uint64_t(1) << L.hbits) - 1;
    if (stats) {
        stats->extracted.assign(L.levels(), 0);
        stats->unmatched.assign(L.levels(), 0);
    }

    std::vector<int64_t> parent;  // position in b of each block at the previous level, or -1
    for (unsigned i = 0; i < L.hashed_levels; ++i) {
        const size_t s = L.block_size(i), nb = L.blocks(i);
        std::vector<int64_t> known(nb, -1);
        Iblt mine({L.cells(), 4, 0}, seed, level_label(i));
        for (size_t j = 0; j < nb; ++j) {
            // level 0 guesses that Bob's aligned blocks are Alice's
            int64_t at = i == 0 ? int64_t(j * s) : parent[j / 2] < 0 ? -1 : parent[j / 2] + int64_t((j % 2) * s);
            size_t len = std::min<size_t>(s, n - j * s);
            if (at < 0 || size_t(at) + len > b.size()) continue;
            known[j] = at;
            mine.insert(pack(L, j, sub(size_t(at), size_t(at) + len)));
        }
        Iblt diff = sk.levels[i];
        diff.subtract(mine);
        auto p = diff.peel();
        if (!p.complete) return Expected<Bytes>::failure("ims: level " + std::to_string(i) + " did not peel");
        if (i > 0 && !p.negatives.empty())
            return Expected<Bytes>::failure("ims: level " + std::to_string(i) + " inconsistent");
        for (const auto& e : p.negatives) {
            size_t j = size_t(e.key & jmask);
            if (j >= nb || known[j] < 0) return Expected<Bytes>::failure("ims: bad block index");
            known[j] = -1;
        }
        if (stats) stats->extracted[i] = p.positives.size();

        // Find each recovered hash in b, one scan per distinct block length.
        std::unordered_map<size_t, std::unordered_multimap<uint64_t, size_t>> wanted;
        for (const auto& e : p.positives) {
            size_t j = size_t(e.key & jmask);
            if (j >= nb || known[j] >= 0) return Expected<Bytes>::failure("ims: bad block index");
            size_t len = std::min<size_t>(s, n - j * s);
            wanted[len].emplace((e.key >> L.jbits) & hmask, j);
        }
        size_t found = 0;
        for (auto& [len, want] : wanted) {
            if (len > b.size()) continue;
            for (size_t pos = 0; pos + len <= b.size() && !want.empty(); ++pos) {
                uint64_t h = sub(pos, pos + len) & hmask;
                auto range = want.equal_range(h);
                if (range.first == range.second) continue;
                for (auto it = range.first; it != range.second; ++it) {
                    known[it->second] = int64_t(pos);
                    ++found;
                }
                want.erase(h);
            }
        }
        if (stats) stats->unmatched[i] = p.positives.size() - found;
        parent = std::move(known);
    }

    // Literal level.
    const unsigned li = L.hashed_levels;
    const size_t s = kImsBottomBlock, nb = L.blocks(li);
    Bytes out(n);
    std::vector<char> have(nb, 0);
    Iblt mine({L.cells(), 4, uint16_t(s + 1)}, seed, level_label(li));
    for (size_t j = 0; j < nb; ++j) {
        int64_t at = li == 0 ? int64_t(j * s) : parent[j / 2] < 0 ? -1 : parent[j / 2] + int64_t((j % 2) * s);
        size_t len = std::min<size_t>(s, n - j * s);
        if (at < 0 || size_t(at) + len > b.size()) continue;
        ByteView blk = b.subspan(size_t(at), len);
        mine.insert(pack(L, j, sub(size_t(at), size_t(at) + len)), literal_value(blk));
        std::copy(blk.begin(), blk.end(), out.begin() + long(j * s));
        have[j] = 1;
    }
    Iblt diff = sk.levels[li];
    diff.subtract(mine);
    auto p = diff.peel();
    if (!p.complete) return Expected<Bytes>::failure("ims: literal level did not peel");
    if (li > 0 && !p.negatives.empty()) return Expected<Bytes>::failure("ims: literal level inconsistent");
    for (const auto& e : p.negatives) {
        size_t j = size_t(e.key & jmask);
        if (j >= nb || !have[j]) return Expected<Bytes>::failure("ims: bad literal index");
        have[j] = 0;
    }
    if (stats) stats->extracted[li] = stats->unmatched[li] = p.positives.size();
    for (const auto& e : p.positives) {
        size_t j = size_t(e.key & jmask);
        if (j >= nb || have[j]) return Expected<Bytes>::failure("ims: bad literal index");
        size_t len = std::min<size_t>(s, n - j * s);
        if (e.value[0] != len) return Expected<Bytes>::failure("ims: bad literal length");
        std::copy(e.value.begin() + 1, e.value.begin() + 1 + long(len), out.begin() + long(j * s));
        have[j] = 1;
    }
    for (char h : have)
        if (!h) return Expected<Bytes>::failure("ims: missing blocks");
    return out;
}

void ImsSketch::serialize(Bytes& out) const {
    put_le(out, layout.n, 8);
    put_le(out, layout.k, 4);
    put_le(out, layout.levels(), 1);
    put_le(out, 0, 1);
    for (const auto& t : levels) t.serialize(out);
}

Bytes ImsSketch::serialize() const {
    Bytes out;
    serialize(out);
    return out;
}

size_t ImsSketch::wire_bytes() const {
    size_t s = 14;
    for (const auto& t : levels) s += t.wire_bytes();
    return s;
}

ImsSketch ImsSketch::deserialize(ByteView in, size_t& pos, const SharedSeed& seed) {
    ImsSketch sk;
    uint64_t n = get_le(in, pos, 8);
    auto k = uint32_t(get_le(in, pos, 4));
    auto nlev = unsigned(get_le(in, pos, 1));
    get_le(in, pos, 1);
    sk.layout = ImsLayout::make(n, k);
    if (nlev != sk.layout.levels()) throw std::runtime_error("ims header mismatch");
    for (unsigned i = 0; i < nlev; ++i) sk.levels.push_back(Iblt::deserialize(in, pos, seed, level_label(i)));
    return sk;
}

size_t edit_distance(ByteView a, ByteView b) {
    if (a.size() * b.size() > (size_t(1) << 32)) throw std::invalid_argument("edit_distance inputs too large");
    std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (size_t j = 1; j <= b.size(); ++j)
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] != b[j - 1])});
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace drsync

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "drsync/docx.hpp"

namespace drsync {

namespace {

constexpr size_t npos = size_t(-1);

std::string fast_label(unsigned level, unsigned replica) {
    return "fast/r" + std::to_string(replica) + "/L" + std::to_string(level);
}

uint64_t pack(const FastLayout& l, uint64_t j, uint64_t h) {
    return j | (h & ((uint64_t(1) << l.hbits) - 1)) << l.jbits;
}

uint16_t literal_width(uint32_t k) { return uint16_t(2 + k * k); }

Bytes literal_value(ByteView block, uint32_t k) {
    Bytes v(literal_width(k), 0);
    v[0] = uint8_t(block.size());
    v[1] = uint8_t(block.size() >> 8);
    std::copy(block.begin(), block.end(), v.begin() + 2);
    return v;
}

// Shifts in the order 0, -1, +1, -2, +2, ...
template <class F>
void for_shifts(uint32_t k, F f) {
    if (f(0)) return;
    for (int d = 1; d <= int(k); ++d)
        if (f(-d) || f(d)) return;
}

}  // namespace

FastLayout FastLayout::make(uint64_t n, uint32_t k, uint8_t delta_exp) {
    if (!fast_applicable(n, k)) throw std::invalid_argument("fast variant needs k >= 2 and n > k^3; use ims_encode");
    FastLayout l;
    l.n = n;
    l.k = k;
    l.delta_exp = delta_exp;
    uint64_t k3 = uint64_t(k) * k * k;
    l.levels = ceil_log2((n + k3 - 1) / k3);
    double lg = std::log2(double(n));
    l.replicas = std::max(1u, unsigned(std::ceil(std::log(lg) / std::log(double(k)) - 1e-9)));
    l.jbits = std::max(1u, ceil_log2(l.blocks(l.levels) + 1));
    l.hbits = std::min({61u, 64u - l.jbits, ceil_log2(n) + delta_exp + 8u});
    return l;
}

size_t FastLayout::blocks(unsigned level) const {
    size_t s = block_size(level);
    return (n + s - 1) / s;
}

uint32_t FastLayout::cells() const { return std::max<uint32_t>(16, 10 * k); }

bool fast_applicable(uint64_t n, uint32_t k) {
    return k >= 2 && k <= 255 && n > uint64_t(k) * k * k;
}

FastSketch fast_encode(ByteView a, uint32_t k, uint8_t delta_exp, const SharedSeed& seed) {
    FastSketch sk;
    sk.layout = FastLayout::make(a.size(), k, delta_exp);
    const auto& L = sk.layout;
    HashFn f = derive_hash(seed, "fast/block", 64);
    SubstringHasher sub(a, f);
    for (unsigned r = 0; r < L.replicas; ++r) {
        std::vector<Iblt> per;
        for (unsigned l = 1; l <= L.levels; ++l) {
            Iblt t({L.cells(), 4, 0}, seed, fast_label(l, r));
            size_t s = L.block_size(l);
            for (size_t j = 0; j < L.blocks(l); ++j) {
                size_t b = j * s, e = std::min<size_t>(b + s, a.size());
                t.insert(pack(L, j, sub(b, e)));
            }
            per.push_back(std::move(t));
        }
        sk.tables.push_back(std::move(per));
        Iblt star({L.cells(), 4, literal_width(k)}, seed, fast_label(L.levels, r));
        size_t s = L.block_size(L.levels);
        for (size_t j = 0; j < L.blocks(L.levels); ++j) {
            size_t b = j * s, e = std::min<size_t>(b + s, a.size());
            star.insert(pack(L, j, sub(b, e)), literal_value(a.subspan(b, e - b), k));
        }
        sk.bottom.push_back(std::move(star));
    }
    return sk;
}

void FastSketch::serialize(Bytes& out) const {
    put_le(out, layout.n, 8);
    put_le(out, layout.k, 4);
    put_le(out, layout.levels, 1);
    put_le(out, layout.delta_exp, 1);
    for (unsigned r = 0; r < layout.replicas; ++r) {
        for (const auto& t : tables[r]) t.serialize(out);
        bottom[r].serialize(out);
    }
}

Bytes FastSketch::serialize() const {
    Bytes out;
    serialize(out);
    return out;
}

size_t FastSketch::wire_bytes() const {
    size_t s = 14;
    for (unsigned r = 0; r < layout.replicas; ++r) {
        for (const auto& t : tables[r]) s += t.wire_bytes();
        s += bottom[r].wire_bytes();
    }
    return s;
}

FastSketch FastSketch::deserialize(ByteView in, size_t& pos, const SharedSeed& seed) {
    FastSketch sk;
    uint64_t n = get_le(in, pos, 8);
    auto k = uint32_t(get_le(in, pos, 4));
    auto levels = unsigned(get_le(in, pos, 1));
    auto dexp = uint8_t(get_le(in, pos, 1));
    sk.layout = FastLayout::make(n, k, dexp);
    if (levels != sk.layout.levels) throw std::runtime_error("fast sketch header mismatch");
    for (unsigned r = 0; r < sk.layout.replicas; ++r) {
        std::vector<Iblt> per;
        for (unsigned l = 1; l <= levels; ++l) per.push_back(Iblt::deserialize(in, pos, seed, fast_label(l, r)));
        sk.tables.push_back(std::move(per));
        sk.bottom.push_back(Iblt::deserialize(in, pos, seed, fast_label(levels, r)));
    }
    return sk;
}

// ------------------------------------------------------------- precompute

FastPrecomp::FastPrecomp(ByteView b, uint32_t k, uint8_t delta_exp, const SharedSeed& seed, uint64_t n_hint)
    : b_(b.begin(), b.end()),
      layout_(FastLayout::make(n_hint ? n_hint : b.size(), k, delta_exp)),
      seed_(seed),
      block_fn_(derive_hash(seed, "fast/block", 64)),
      sub_(b_, block_fn_) {
    const auto& L = layout_;
    for (unsigned r = 0; r < L.replicas; ++r)
        for (unsigned l = 1; l <= L.levels; ++l) {
            labels_.push_back(fast_label(l, r));
            empty_.emplace_back(IbltParams{L.cells(), 4, 0}, seed_, labels_.back());
        }
    const uint64_t hmask = (uint64_t(1) << L.hbits) - 1;
    h_.resize(L.levels + 1);
    for (unsigned l = 1; l <= L.levels; ++l) {
        size_t s = L.block_size(l);
        size_t full = L.n / s;
        h_[l].resize(full);
        for (size_t j = 0; j < full; ++j) {
            auto& tab = h_[l][j];
            for_shifts(k, [&](int m) {
                size_t begin, len;
                if (in_range(l, j, m, L.n, begin, len)) tab.emplace_back(sub_(begin, begin + len) & hmask, m);
                return false;
            });
            // stable sort keeps shift order within equal digests, so unique keeps the smallest |m|
            std::stable_sort(tab.begin(), tab.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
            tab.erase(std::unique(tab.begin(), tab.end(), [](const auto& x, const auto& y) { return x.first == y.first; }),
                      tab.end());
        }
    }
    build_cache(false);
}

const std::string& FastPrecomp::label(unsigned level, unsigned replica) const {
    return labels_[replica * layout_.levels + level - 1];
}

bool FastPrecomp::in_range(unsigned i, uint64_t j, int m, uint64_t n_a, size_t& begin, size_t& len) const {
    size_t s = layout_.block_size(i);
    uint64_t start = j * s;
    if (start >= n_a) return false;
    len = size_t(std::min<uint64_t>(s, n_a - start));
    int64_t bg = int64_t(start) + m;
    if (bg < 0 || uint64_t(bg) + len > b_.size()) return false;
    begin = size_t(bg);
    return true;
}

uint64_t FastPrecomp::block_hash(size_t begin, size_t end) const { return sub_(begin, end); }

uint64_t FastPrecomp::key_of(unsigned, uint64_t block, uint64_t h) const { return pack(layout_, block, h); }

std::optional<int> FastPrecomp::lookup(unsigned level, uint64_t block, uint64_t n_a, uint64_t h) const {
    const auto& L = layout_;
    const uint64_t hmask = (uint64_t(1) << L.hbits) - 1;
    h &= hmask;
    size_t s = L.block_size(level);
    uint64_t start = block * s;
    if (start >= n_a) return std::nullopt;
    bool full = start + s <= n_a;
    if (full && block < h_[level].size()) {
        const auto& tab = h_[level][block];
        auto it = std::lower_bound(tab.begin(), tab.end(), h, [](const auto& e, uint64_t v) { return e.first < v; });
        if (it != tab.end() && it->first == h) return it->second;
        return std::nullopt;
    }
    std::optional<int> found;
    for_shifts(L.k, [&](int m) {
        size_t begin, len;
        if (in_range(level, block, m, n_a, begin, len) && (sub_(begin, begin + len) & hmask) == h) found = m;
        return found.has_value();
    });
    return found;
}

const Iblt* FastPrecomp::cached(unsigned i, uint64_t j, int m, unsigned level, unsigned replica) const {
    const auto& L = layout_;
    if (i >= level || j >= L.blocks(i) || m < -int(L.k) || m > int(L.k)) return nullptr;
    size_t base = cache_base_[(replica * (L.levels + 1) + i) * (L.levels + 1) + level];
    if (base == npos) return nullptr;
    return cache_[base + j * (2 * L.k + 1) + size_t(m + int(L.k))].get();
}

bool FastPrecomp::fragment_cached(unsigned i, uint64_t j, int m, unsigned level, unsigned replica) const {
    return cached(i, j, m, level, replica) != nullptr;
}

void FastPrecomp::apply(Iblt& t, unsigned i, uint64_t j, int m, unsigned level, unsigned replica, uint64_t n_a,
                        int sign, bool use_cache) const {
    const auto& L = layout_;
    size_t s = L.block_size(i);
    if (j * s >= n_a) return;
    bool full = (j + 1) * s <= std::min<uint64_t>(n_a, L.n);
    if (use_cache && full) {
        if (const Iblt* c = cached(i, j, m, level, replica)) {
            sign > 0 ? t.add(*c) : t.subtract(*c);
            return;
        }
    }
    if (use_cache && !full && i < level) {
        // ragged tail: recurse so the full children can still use the cache
        apply(t, i + 1, 2 * j, m, level, replica, n_a, sign, true);
        apply(t, i + 1, 2 * j + 1, m, level, replica, n_a, sign, true);
        return;
    }
    uint64_t per = uint64_t(1) << (level - i);
    for (uint64_t c = j * per; c < (j + 1) * per; ++c) {
        size_t begin, len;
        if (c * L.block_size(level) >= n_a) break;
        if (!in_range(level, c, m, n_a, begin, len)) throw std::invalid_argument("fragment shift out of range");
        uint64_t key = pack(L, c, sub_(begin, begin + len));
        sign > 0 ? t.insert(key) : t.erase(key);
    }
}

Iblt FastPrecomp::fragment(unsigned i, uint64_t j, int m, unsigned level, unsigned replica, uint64_t n_a) const {
    Iblt t = empty_[replica * layout_.levels + level - 1];
    apply(t, i, j, m, level, replica, n_a, 1, true);
    return t;
}

Iblt FastPrecomp::fragment_from_scratch(unsigned i, uint64_t j, int m, unsigned level, unsigned replica,
                                        uint64_t n_a) const {
    Iblt t = empty_[replica * layout_.levels + level - 1];
    apply(t, i, j, m, level, replica, n_a, 1, false);
    return t;
}

void FastPrecomp::subtract_fragment(Iblt& t, unsigned i, uint64_t j, int m, unsigned level, unsigned replica,
                                    uint64_t n_a) const {
    apply(t, i, j, m, level, replica, n_a, -1, true);
}

void FastPrecomp::cache_all() { build_cache(true); }

void FastPrecomp::build_cache(bool all) {
    const auto& L = layout_;
    const size_t shifts = 2 * L.k + 1;
    cache_.clear();
    cached_ = 0;
    cache_base_.assign(L.replicas * (L.levels + 1) * (L.levels + 1), npos);
    auto slot = [&](unsigned r, unsigned i, unsigned l) -> size_t& {
        return cache_base_[(r * (L.levels + 1) + i) * (L.levels + 1) + l];
    };
    // A fragment is worth caching when building it from scratch touches more cells than the table has.
    for (unsigned r = 0; r < L.replicas; ++r)
        for (unsigned l = 2; l <= L.levels; ++l)
            for (unsigned i = 1; i < l; ++i)
                if (all || (uint64_t(4) << (l - i)) > L.cells()) {
                    slot(r, i, l) = cache_.size();
                    cache_.resize(cache_.size() + L.blocks(i) * shifts);
                }
    for (unsigned r = 0; r < L.replicas; ++r)
        for (unsigned l = 2; l <= L.levels; ++l)
            for (unsigned i = l - 1; i >= 1; --i) {
                size_t base = slot(r, i, l);
                if (base == npos) continue;
                size_t s = L.block_size(i);
                for (size_t j = 0; (j + 1) * s <= L.n; ++j)
                    for (int m = -int(L.k); m <= int(L.k); ++m) {
                        size_t begin, len;
                        if (!in_range(i, j, m, L.n, begin, len)) continue;
                        auto t = std::make_unique<Iblt>(empty_[r * L.levels + l - 1]);
                        apply(*t, i + 1, 2 * j, m, l, r, L.n, 1, true);
                        apply(*t, i + 1, 2 * j + 1, m, l, r, L.n, 1, true);
                        cache_[base + j * shifts + size_t(m + int(L.k))] = std::move(t);
                        ++cached_;
                    }
            }
}

// ------------------------------------------------------------------ decode

namespace {

template <class F>
auto with_precomp(const FastSketch& sk, const FastPrecomp& pc, F f) {
    const auto& a = sk.layout;
    const auto& b = pc.layout();
    if (a.same_shape(b) && a.delta_exp == b.delta_exp) return f(pc);
    FastPrecomp local(pc.doc(), a.k, a.delta_exp, pc.seed(), a.n);
    return f(local);
}

}  // namespace

Expected<CheckState> fast_failure_check(const FastSketch& sk, const FastPrecomp& pc_in) {
    return with_precomp(sk, pc_in, [&](const FastPrecomp& pc) -> Expected<CheckState> {
        const auto& L = sk.layout;
        const uint64_t jmask = (uint64_t(1) << L.jbits) - 1;
        CheckState st;
        for (unsigned l = 1; l <= L.levels; ++l) {
            const std::vector<Iblt::Entry>* pos = nullptr;
            Iblt::PeelResult p;
            for (unsigned r = 0; r < L.replicas && !pos; ++r) {
                Iblt t = sk.tables[r][l - 1];
                for (const auto& tu : st.matched) pc.subtract_fragment(t, tu.level, tu.block, tu.shift, l, r, L.n);
                p = t.peel();
                if (p.complete && p.negatives.empty()) {
                    pos = &p.positives;
                    if (l == L.levels) st.replica_for_bottom = r;
                }
            }
            if (!pos) return Expected<CheckState>::failure("fast: level " + std::to_string(l) + " did not peel");
            for (const auto& e : *pos) {
                uint64_t j = e.key & jmask;
                if (j >= L.blocks(l)) return Expected<CheckState>::failure("fast: bad block index");
                if (auto m = pc.lookup(l, j, L.n, e.key >> L.jbits)) st.matched.push_back({l, j, *m});
            }
        }
        return st;
    });
}

Expected<Bytes> fast_decode(const FastSketch& sk, const FastPrecomp& pc_in, const CheckState& st) {
    return with_precomp(sk, pc_in, [&](const FastPrecomp& pc) -> Expected<Bytes> {
        const auto& L = sk.layout;
        const uint64_t jmask = (uint64_t(1) << L.jbits) - 1;
        const unsigned bl = L.levels;
        const size_t s = L.block_size(bl), nb = L.blocks(bl);
        ByteView b = pc.doc();
        std::vector<unsigned> order{st.replica_for_bottom};
        for (unsigned r = 0; r < L.replicas; ++r)
            if (r != st.replica_for_bottom) order.push_back(r);
        for (unsigned r : order) {
            Bytes out(L.n);
            std::vector<char> have(nb, 0);
            Iblt t = sk.bottom[r];
            bool ok = true;
            for (const auto& tu : st.matched) {
                uint64_t per = uint64_t(1) << (bl - tu.level);
                for (uint64_t c = tu.block * per; c < (tu.block + 1) * per && c < nb; ++c) {
                    size_t begin, len;
                    if (!pc.in_range(bl, c, tu.shift, L.n, begin, len) || have[c]) {
                        ok = false;
                        break;
                    }
                    ByteView blk = b.subspan(begin, len);
                    t.erase(pc.key_of(bl, c, pc.block_hash(begin, begin + len)), literal_value(blk, L.k));
                    std::copy(blk.begin(), blk.end(), out.begin() + long(c * s));
                    have[c] = 1;
                }
                if (!ok) break;
            }
            if (!ok) return Expected<Bytes>::failure("fast: overlapping matches");
            auto p = t.peel();
            if (!p.complete || !p.negatives.empty()) continue;
            for (const auto& e : p.positives) {
                uint64_t c = e.key & jmask;
                size_t len = e.value[0] | size_t(e.value[1]) << 8;
                if (c >= nb || have[c] || len != std::min<uint64_t>(s, L.n - c * s)) {
                    ok = false;
                    break;
                }
                std::copy(e.value.begin() + 2, e.value.begin() + 2 + long(len), out.begin() + long(c * s));
                have[c] = 1;
            }
            if (!ok) continue;
            if (std::all_of(have.begin(), have.end(), [](char h) { return h != 0; })) return out;
        }
        return Expected<Bytes>::failure("fast: bottom table did not decode");
    });
}

}  // namespace drsync

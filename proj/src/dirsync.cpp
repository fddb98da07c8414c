#include "drsync/dirsync.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <unordered_map>

#include "drsync/docx.hpp"
#include "drsync/mwsearch.hpp"
#include "drsync/sketches.hpp"

namespace drsync {

DocSet canonical_set(std::vector<Bytes> docs) {
    std::sort(docs.begin(), docs.end());
    docs.erase(std::unique(docs.begin(), docs.end()), docs.end());
    return docs;
}

HashFn doc_id_fn(const SharedSeed& seed) { return derive_hash(seed, "dir/doc", 64); }

uint64_t set_hash(const DocSet& docs, const SharedSeed& seed) {
    HashFn id = doc_id_fn(seed);
    std::vector<uint64_t> ids;
    for (const auto& d : docs) ids.push_back(id.hash64(d));
    std::sort(ids.begin(), ids.end());
    Bytes buf;
    put_le(buf, ids.size(), 8);
    for (uint64_t v : ids) put_le(buf, v, 8);
    return derive_hash(seed, "dir/set", 64).hash64(buf);
}

Bytes concat_delimiter(const SharedSeed& seed) {
    auto rng = derive_rng(seed, "dir/delim");
    Bytes d(kDelimiterBytes);
    for (auto& c : d) c = uint8_t(rng());
    return d;
}

namespace {

// Documents with their ids, sorted by id (then content).
std::vector<std::pair<uint64_t, const Bytes*>> by_id(const DocSet& docs, const HashFn& id) {
    std::vector<std::pair<uint64_t, const Bytes*>> v;
    for (const auto& d : docs) v.push_back({id.hash64(d), &d});
    std::sort(v.begin(), v.end(), [](const auto& x, const auto& y) {
        return x.first != y.first ? x.first < y.first : *x.second < *y.second;
    });
    return v;
}

Bytes to_bytes(BitString s) { return std::move(s.bytes); }

}  // namespace

Bytes canonical_concat(const DocSet& docs, const SharedSeed& seed) {
    const Bytes delim = concat_delimiter(seed);
    Bytes out;
    for (const auto& [id, d] : by_id(docs, doc_id_fn(seed))) {
        out.insert(out.end(), d->begin(), d->end());
        out.insert(out.end(), delim.begin(), delim.end());
    }
    return out;
}

std::optional<DocSet> split_concat(ByteView data, const SharedSeed& seed) {
    const Bytes delim = concat_delimiter(seed);
    std::vector<Bytes> parts;
    auto it = data.begin();
    const std::boyer_moore_searcher search(delim.begin(), delim.end());
    while (it != data.end()) {
        auto hit = std::search(it, data.end(), search);
        if (hit == data.end()) return std::nullopt;  // unterminated tail
        parts.emplace_back(it, hit);
        it = hit + long(delim.size());
    }
    const size_t n = parts.size();
    DocSet out = canonical_set(std::move(parts));
    if (out.size() != n) return std::nullopt;
    return out;
}

// ---------------------------------------------------------------------------

Bytes reduce_message(const DocSet& alice, uint32_t d, const SharedSeed& seed) {
    if (d < 1) throw std::invalid_argument("reduce needs d >= 1");
    Bytes out;
    put_le(out, set_hash(alice, seed), 8);
    ims_encode(canonical_concat(alice, seed), 2 * d, seed.derive("reduce")).serialize(out);
    return out;
}

Expected<DocSet> reduce_apply(ByteView msg, const DocSet& bob, const SharedSeed& seed) {
    size_t pos = 0;
    const uint64_t want = get_le(msg, pos, 8);
    const SharedSeed s = seed.derive("reduce");
    auto sk = ImsSketch::deserialize(msg, pos, s);
    auto a = ims_decode(sk, canonical_concat(bob, seed), s);
    if (!a) return Expected<DocSet>::failure("reduce: " + a.error());
    auto out = split_concat(*a, seed);
    if (!out) return Expected<DocSet>::failure("reduce: bad delimiters");
    if (set_hash(*out, seed) != want) return Expected<DocSet>::failure("reduce: directory hash mismatch");
    return std::move(*out);
}

void multiround_reconcile_alice(Endpoint& ep, const DocSet& alice, uint32_t d, const SharedSeed& seed) {
    if (d < 1) throw std::invalid_argument("multiround needs d >= 1");
    multiround_alice(ep, canonical_concat(alice, seed), 2 * d, seed.derive("multiround"));
    Bytes h;
    put_le(h, set_hash(alice, seed), 8);
    ep.send_bytes(std::move(h));
}

Expected<DocSet> multiround_reconcile_bob(Endpoint& ep, const DocSet& bob, uint32_t d, const SharedSeed& seed) {
    if (d < 1) throw std::invalid_argument("multiround needs d >= 1");
    auto a = multiround_bob(ep, canonical_concat(bob, seed), 2 * d, seed.derive("multiround"));
    Bytes h = to_bytes(ep.recv());
    size_t pos = 0;
    const uint64_t want = get_le(h, pos, 8);
    if (!a) return Expected<DocSet>::failure(a.error());
    auto out = split_concat(*a, seed);
    if (!out) return Expected<DocSet>::failure("multiround: bad delimiters");
    if (set_hash(*out, seed) != want) return Expected<DocSet>::failure("multiround: directory hash mismatch");
    return std::move(*out);
}

// ---------------------------------------------------------------------------

CascadeLayout CascadeLayout::make(uint32_t d, uint64_t h) {
    if (d < 1) throw std::invalid_argument("cascade needs d >= 1");
    CascadeLayout l;
    l.d = d;
    l.h = std::max<uint64_t>(h, 1);
    uint64_t m = std::min<uint64_t>(d, l.h);
    l.levels = std::max(1u, ceil_log2(m));
    l.star = l.h <= d;
    return l;
}

uint32_t CascadeLayout::cells(unsigned level) const {
    auto c = uint64_t(std::ceil(25.0 * d / double(uint64_t(1) << level)));
    return uint32_t(std::max<uint64_t>(16, c));
}

uint32_t CascadeLayout::star_cells() const {
    auto c = uint64_t(std::ceil(25.0 * d / double(h)));
    return uint32_t(std::max<uint64_t>(16, c));
}

namespace {

std::string table_label(unsigned level) { return "casc/T" + std::to_string(level); }

SharedSeed level_seed(const SharedSeed& seed, unsigned level, unsigned replica) {
    return seed.derive("casc/L" + std::to_string(level) + "/" + std::to_string(replica));
}

Bytes literal_encoding(ByteView doc) {
    Bytes v;
    put_le(v, doc.size(), 4);
    v.insert(v.end(), doc.begin(), doc.end());
    return v;
}

}  // namespace

Bytes cascade_encoding(ByteView doc, unsigned level, const CascadeOptions& opt, const SharedSeed& seed) {
    Bytes out;
    put_le(out, opt.replicas, 1);
    for (unsigned r = 0; r < opt.replicas; ++r) {
        Bytes sk = ims_encode(doc, uint32_t(1) << level, level_seed(seed, level, r)).serialize();
        put_le(out, sk.size(), 4);
        out.insert(out.end(), sk.begin(), sk.end());
    }
    if (opt.literal_when_shorter && doc.size() + 5 <= out.size()) {
        out.assign(1, 0);
        put_le(out, doc.size(), 4);
        out.insert(out.end(), doc.begin(), doc.end());
    }
    return out;
}

CascadeMessage cascade_encode(const DocSet& alice, uint32_t d, const SharedSeed& seed, CascadeOptions opt) {
    if (opt.replicas < 1) throw std::invalid_argument("cascade needs at least one replica");
    HashFn id = doc_id_fn(seed);
    uint64_t h = 0;
    for (const auto& doc : alice) h = std::max<uint64_t>(h, doc.size());
    CascadeMessage msg;
    msg.layout = CascadeLayout::make(d, h);
    msg.set_hash = set_hash(alice, seed);
    msg.options = opt;
    const auto docs = by_id(alice, id);
    for (unsigned i = 1; i <= msg.layout.levels; ++i) {
        std::vector<Bytes> enc;
        size_t width = 0;
        for (const auto& [key, doc] : docs) {
            enc.push_back(cascade_encoding(*doc, i, opt, seed));
            width = std::max(width, enc.back().size());
        }
        Iblt t({msg.layout.cells(i), kCascadeHashes, uint32_t(width)}, seed, table_label(i));
        for (size_t j = 0; j < docs.size(); ++j) t.insert(docs[j].first, enc[j]);
        msg.tables.push_back(std::move(t));
    }
    if (msg.layout.star) {
        Iblt t({msg.layout.star_cells(), kCascadeHashes, uint32_t(msg.layout.h + 4)}, seed, "casc/star");
        for (const auto& [key, doc] : docs) t.insert(key, literal_encoding(*doc));
        msg.star = std::move(t);
    }
    return msg;
}

Bytes CascadeMessage::serialize() const {
    Bytes out;
    put_le(out, layout.d, 4);
    put_le(out, layout.h, 8);
    put_le(out, set_hash, 8);
    put_le(out, layout.levels, 1);
    put_le(out, layout.star, 1);
    put_le(out, options.replicas, 1);
    put_le(out, options.literal_when_shorter, 1);
    for (const auto& t : tables) t.serialize_trimmed(out);
    if (star) star->serialize_trimmed(out);
    return out;
}

CascadeMessage CascadeMessage::deserialize(ByteView in, const SharedSeed& seed) {
    size_t pos = 0;
    CascadeMessage m;
    auto d = uint32_t(get_le(in, pos, 4));
    uint64_t h = get_le(in, pos, 8);
    m.set_hash = get_le(in, pos, 8);
    auto levels = unsigned(get_le(in, pos, 1));
    bool star = get_le(in, pos, 1) != 0;
    m.options.replicas = uint8_t(get_le(in, pos, 1));
    m.options.literal_when_shorter = get_le(in, pos, 1) != 0;
    m.layout = CascadeLayout::make(d, h);
    if (m.layout.levels != levels || m.layout.star != star || m.options.replicas < 1)
        throw std::runtime_error("cascade header mismatch");
    for (unsigned i = 1; i <= levels; ++i) m.tables.push_back(Iblt::deserialize_trimmed(in, pos, seed, table_label(i)));
    if (star) m.star = Iblt::deserialize_trimmed(in, pos, seed, "casc/star");
    return m;
}

namespace {

// Decodes Alice's level-`level` encoding against Bob's document b.
std::optional<Bytes> try_encoding(ByteView value, ByteView b, unsigned level, uint64_t key, const HashFn& id,
                                  const SharedSeed& seed) {
    try {
        size_t pos = 0;
        auto reps = unsigned(get_le(value, pos, 1));
        for (unsigned r = 0; r < reps; ++r) {
            auto len = size_t(get_le(value, pos, 4));
            if (len > value.size() - pos) return std::nullopt;
            ByteView sk_bytes = value.subspan(pos, len);
            pos += len;
            const SharedSeed s = level_seed(seed, level, r);
            size_t p = 0;
            auto sk = ImsSketch::deserialize(sk_bytes, p, s);
            auto x = ims_decode(sk, b, s);
            if (x && id.hash64(*x) == key) return std::move(*x);
        }
    } catch (const std::exception&) {
        // a garbled encoding is a failed attempt
    }
    return std::nullopt;
}

std::optional<Bytes> try_literal(ByteView value, uint64_t key, const HashFn& id) {
    size_t pos = 0;
    auto len = size_t(get_le(value, pos, 4));
    if (len > value.size() - pos) return std::nullopt;
    Bytes doc(value.begin() + long(pos), value.begin() + long(pos + len));
    if (id.hash64(doc) != key) return std::nullopt;
    return doc;
}

}  // namespace

Expected<DocSet> cascade_decode(const CascadeMessage& msg, const DocSet& bob, const SharedSeed& seed,
                                CascadeAudit* audit) {
    using Fail = Expected<DocSet>;
    HashFn id = doc_id_fn(seed);
    const auto mine = by_id(bob, id);
    std::unordered_map<uint64_t, size_t> index;
    for (size_t j = 0; j < mine.size(); ++j) index[mine[j].first] = j;

    std::vector<char> differs(mine.size(), 0);  // D_B membership
    std::map<uint64_t, Bytes> got;               // D_A by id
    std::vector<size_t> db;                      // D_B in id order

    auto recover = [&](const std::vector<Iblt::Entry>& entries, unsigned level) {
        for (const auto& e : entries) {
            if (got.count(e.key)) continue;
            if (!e.value.empty() && e.value[0] == 0) {
                if (auto x = try_literal(ByteView(e.value).subspan(1), e.key, id)) {
                    if (audit) audit->recovered.push_back({*x, level, {}});
                    got.emplace(e.key, std::move(*x));
                }
                continue;
            }
            for (size_t j : db) {
                auto x = try_encoding(e.value, *mine[j].second, level, e.key, id, seed);
                if (!x) continue;
                if (audit) audit->recovered.push_back({*x, level, *mine[j].second});
                got.emplace(e.key, std::move(*x));
                break;
            }
        }
    };

    for (unsigned i = 1; i <= msg.layout.levels; ++i) {
        Iblt t = msg.tables.at(i - 1);
        const size_t width = t.value_width();
        for (size_t j = 0; j < mine.size(); ++j) {
            if (differs[j]) continue;
            Bytes enc = cascade_encoding(*mine[j].second, i, msg.options, seed);
            if (enc.size() > width) {
                // too long to be one of Alice's
                if (i == 1) differs[j] = 1;
                continue;
            }
            t.erase(mine[j].first, enc);
        }
        for (const auto& [key, doc] : got) {
            Bytes enc = cascade_encoding(doc, i, msg.options, seed);
            if (enc.size() <= width) t.erase(key, enc);
        }
        auto p = t.peel();
        if (audit) {
            audit->peeled.push_back(p.complete);
            audit->extracted.push_back(p.positives.size());
        }
        if (!p.complete) {
            if (i == 1) return Fail::failure("cascade: level 1 did not peel");
            continue;
        }
        if (i == 1) {
            for (const auto& e : p.negatives) {
                auto it = index.find(e.key);
                if (it == index.end()) return Fail::failure("cascade: unknown document in level 1");
                differs[it->second] = 1;
            }
            for (size_t j = 0; j < mine.size(); ++j)
                if (differs[j]) db.push_back(j);
        }
        recover(p.positives, i);
    }

    if (msg.star) {
        Iblt t = *msg.star;
        const size_t width = t.value_width();
        for (const auto& [key, doc] : mine) {
            Bytes enc = literal_encoding(*doc);
            if (enc.size() <= width) t.erase(key, enc);
        }
        for (const auto& [key, doc] : got) t.erase(key, literal_encoding(doc));
        auto p = t.peel();
        if (audit) audit->peeled.push_back(p.complete);
        if (p.complete)
            for (const auto& e : p.positives) {
                if (got.count(e.key)) continue;
                if (auto x = try_literal(e.value, e.key, id)) {
                    if (audit) audit->recovered.push_back({*x, 0, {}});
                    got.emplace(e.key, std::move(*x));
                }
            }
    }

    DocSet out;
    for (size_t j = 0; j < mine.size(); ++j)
        if (!differs[j]) out.push_back(*mine[j].second);
    for (auto& [key, doc] : got) out.push_back(doc);
    out = canonical_set(std::move(out));
    if (set_hash(out, seed) != msg.set_hash) return Fail::failure("cascade: directory hash mismatch");
    return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kHammingSafety = 2.0;

unsigned cgk_copies(uint64_t dhat, double delta) {
    return unsigned(std::ceil(4 * std::log(double(std::max<uint64_t>(dhat, 2)) / delta)));
}

unsigned id_tables(uint64_t dhat, double delta) {
    double base = std::log(double(std::max<uint64_t>(dhat, 2)));
    return std::max(1u, unsigned(std::ceil(std::log(1 / delta) / base)));
}

uint8_t hamming_reps(uint64_t dhat, double delta, uint64_t h) {
    double base = std::log(double(std::max<uint64_t>(h, 2)));
    return uint8_t(std::clamp(std::ceil(std::log(double(std::max<uint64_t>(dhat, 2)) / delta) / base), 1.0, 255.0));
}

SharedSeed cgk_seed(const SharedSeed& seed, unsigned c) { return seed.derive("ud/cgk/" + std::to_string(c)); }

std::string id_label(unsigned r) { return "ud/ids/" + std::to_string(r); }

// Differences past about H/32 always lead to a literal send (the Hamming
// sketch would outgrow the document), so the estimator saturates there.
StrataEstimator cgk_estimator(ByteView doc, uint64_t H, unsigned c, const SharedSeed& seed, uint8_t reps) {
    const SharedSeed s = cgk_seed(seed, c);
    auto e = cgk_embed(doc, s, H);
    return strata_create(e.symbols, s, "ud/est", strata_levels_for(std::max<uint64_t>(64, H / 32)), reps);
}

uint32_t hamming_budget(uint64_t estimate) { return uint32_t(std::ceil(kHammingSafety * double(estimate))) + 1; }

}  // namespace

// Message 1 (Bob): strata estimator of his document ids.
// Message 2 (Alice): h_A, d-hat, then id tables T_A.
// Message 3 (Bob): chosen table, T_B, H, copy count, estimators per differing document.
// Message 4 (Alice): set hash and one recovery record per differing document.
void unknown_d_alice(Endpoint& ep, const DocSet& alice, const SharedSeed& seed, UnknownDOptions opt,
                     UnknownDStats* stats) {
    UnknownDStats local;
    UnknownDStats& st = stats ? *stats : local;
    HashFn id = doc_id_fn(seed);
    const auto docs = by_id(alice, id);
    std::vector<uint64_t> keys;
    uint64_t h = 0;
    for (const auto& [k, d] : docs) {
        keys.push_back(k);
        h = std::max<uint64_t>(h, d->size());
    }

    Bytes m1 = to_bytes(ep.recv());
    size_t pos = 0;
    auto theirs = StrataEstimator::deserialize(m1, pos, seed, "ud/strata");
    auto est = strata_query(strata_merge(strata_create(keys, seed, "ud/strata"), theirs));
    const uint64_t dhat = std::max<uint64_t>(1, uint64_t(std::ceil(kStrataSafety * double(est))));
    st.estimate = dhat;
    const unsigned ntab = id_tables(dhat, opt.delta);
    const uint32_t cells = Iblt::cells_for(size_t(dhat));

    Bytes m2;
    put_le(m2, h, 8);
    put_le(m2, dhat, 8);
    put_le(m2, ntab, 1);
    std::vector<Iblt> mine;
    for (unsigned r = 0; r < ntab; ++r) {
        Iblt t({cells, 4, 0}, seed, id_label(r));
        for (uint64_t k : keys) t.insert(k);
        t.serialize(m2);
        mine.push_back(std::move(t));
    }
    ep.send_bytes(std::move(m2));

    Bytes m3 = to_bytes(ep.recv());
    pos = 0;
    auto chosen = unsigned(get_le(m3, pos, 1));
    Bytes m4;
    put_le(m4, set_hash(alice, seed), 8);
    if (chosen >= ntab) {
        put_le(m4, 0, 4);
        ep.send_bytes(std::move(m4));
        return;
    }
    Iblt tb = Iblt::deserialize(m3, pos, seed, id_label(chosen));
    const uint64_t H = get_le(m3, pos, 8);
    const auto copies = unsigned(get_le(m3, pos, 1));
    const auto nb = size_t(get_le(m3, pos, 4));
    std::vector<std::vector<StrataEstimator>> lb(nb);
    for (auto& v : lb)
        for (unsigned c = 0; c < copies; ++c) v.push_back(StrataEstimator::deserialize(m3, pos, cgk_seed(seed, c), "ud/est"));

    Iblt diff = mine[chosen];
    diff.subtract(tb);
    auto p = diff.peel();
    std::vector<const Bytes*> da;
    {
        std::unordered_map<uint64_t, const Bytes*> byk;
        for (const auto& [k, d] : docs) byk[k] = d;
        for (const auto& e : p.positives)
            if (auto it = byk.find(e.key); it != byk.end()) da.push_back(it->second);
    }
    st.differing_alice = da.size();
    st.differing_bob = nb;
    st.cgk_copies = copies;

    const uint8_t hreps = hamming_reps(dhat, opt.delta, H);
    put_le(m4, da.size(), 4);
    for (const Bytes* doc : da) {
        put_le(m4, id.hash64(*doc), 8);
        // find the closest of Bob's differing documents by median estimate
        size_t best_j = 0, best_c = 0;
        uint64_t best = UINT64_MAX;
        std::vector<StrataEstimator> ests;
        if (nb > 0 && doc->size() <= H)
            for (unsigned c = 0; c < copies; ++c) ests.push_back(cgk_estimator(*doc, H, c, seed, opt.cgk_strata_reps));
        for (size_t j = 0; j < nb && !ests.empty(); ++j) {
            std::vector<std::pair<uint64_t, unsigned>> e;
            for (unsigned c = 0; c < copies; ++c) e.push_back({(strata_query(strata_merge(ests[c], lb[j][c])) + 1) / 2, c});
            std::sort(e.begin(), e.end());
            auto med = e[e.size() / 2];
            if (med.first < best) {
                best = med.first;
                best_j = j;
                best_c = med.second;
            }
        }
        const uint32_t k = best == UINT64_MAX ? 0 : hamming_budget(best);
        const size_t sketch_bytes = size_t(hreps) * (13 + size_t(HammingSketch::cells_for(k)) * 16);
        if (best == UINT64_MAX || sketch_bytes >= doc->size() + 4) {
            put_le(m4, 0, 1);
            put_le(m4, doc->size(), 4);
            m4.insert(m4.end(), doc->begin(), doc->end());
            ++st.literal;
            continue;
        }
        put_le(m4, 1, 1);
        put_le(m4, best_j, 4);
        put_le(m4, best_c, 1);
        put_le(m4, k, 4);
        put_le(m4, doc->size(), 8);
        const SharedSeed s = cgk_seed(seed, unsigned(best_c));
        auto e = cgk_embed(*doc, s, H);
        hamming_sketch(e.symbols, k, hreps, s, "ud/ham").serialize(m4);
        ++st.sketched;
    }
    ep.send_bytes(std::move(m4));
}

Expected<DocSet> unknown_d_bob(Endpoint& ep, const DocSet& bob, const SharedSeed& seed, UnknownDOptions opt,
                               UnknownDStats* stats) {
    using Fail = Expected<DocSet>;
    UnknownDStats local;
    UnknownDStats& st = stats ? *stats : local;
    HashFn id = doc_id_fn(seed);
    const auto mine = by_id(bob, id);
    std::vector<uint64_t> keys;
    for (const auto& [k, d] : mine) keys.push_back(k);

    Bytes m1;
    strata_create(keys, seed, "ud/strata").serialize(m1);
    ep.send_bytes(std::move(m1));

    Bytes m2 = to_bytes(ep.recv());
    size_t pos = 0;
    const uint64_t ha = get_le(m2, pos, 8);
    const uint64_t dhat = get_le(m2, pos, 8);
    const auto ntab = unsigned(get_le(m2, pos, 1));
    st.estimate = dhat;
    unsigned chosen = 255;
    Iblt tb;
    Iblt::PeelResult peeled;
    for (unsigned r = 0; r < ntab; ++r) {
        Iblt ta = Iblt::deserialize(m2, pos, seed, id_label(r));
        if (chosen != 255) continue;
        Iblt t({ta.m(), ta.q(), 0}, seed, id_label(r));
        for (uint64_t k : keys) t.insert(k);
        Iblt diff = ta;
        diff.subtract(t);
        auto p = diff.peel();
        if (p.complete) {
            chosen = r;
            tb = std::move(t);
            peeled = std::move(p);
        }
    }

    Bytes m3;
    put_le(m3, chosen, 1);
    std::vector<size_t> db;
    uint64_t H = ha;
    unsigned copies = 0;
    if (chosen != 255) {
        tb.serialize(m3);
        std::unordered_map<uint64_t, size_t> index;
        for (size_t j = 0; j < mine.size(); ++j) index[mine[j].first] = j;
        std::vector<uint64_t> neg;
        for (const auto& e : peeled.negatives) neg.push_back(e.key);
        std::sort(neg.begin(), neg.end());
        for (uint64_t k : neg) {
            auto it = index.find(k);
            if (it != index.end()) db.push_back(it->second);
        }
        for (size_t j : db) H = std::max<uint64_t>(H, mine[j].second->size());
        H = std::max<uint64_t>(H, 1);
        copies = cgk_copies(dhat, opt.delta);
        put_le(m3, H, 8);
        put_le(m3, copies, 1);
        put_le(m3, db.size(), 4);
        for (size_t j : db)
            for (unsigned c = 0; c < copies; ++c) cgk_estimator(*mine[j].second, H, c, seed, opt.cgk_strata_reps).serialize(m3);
    }
    st.differing_bob = db.size();
    st.cgk_copies = copies;
    ep.send_bytes(std::move(m3));

    Bytes m4 = to_bytes(ep.recv());
    pos = 0;
    const uint64_t want = get_le(m4, pos, 8);
    if (chosen == 255) return Fail::failure("unknown-d: id tables did not peel");
    const auto na = size_t(get_le(m4, pos, 4));
    st.differing_alice = na;
    const uint8_t hreps = hamming_reps(dhat, opt.delta, H);
    std::vector<Bytes> got;
    for (size_t i = 0; i < na; ++i) {
        const uint64_t key = get_le(m4, pos, 8);
        const auto kind = unsigned(get_le(m4, pos, 1));
        if (kind == 0) {
            auto len = size_t(get_le(m4, pos, 4));
            if (len > m4.size() - pos) throw ChannelError("unknown-d: truncated literal");
            got.emplace_back(m4.begin() + long(pos), m4.begin() + long(pos + len));
            pos += len;
            ++st.literal;
            continue;
        }
        auto j = size_t(get_le(m4, pos, 4));
        auto c = unsigned(get_le(m4, pos, 1));
        auto k = uint32_t(get_le(m4, pos, 4));
        uint64_t n = get_le(m4, pos, 8);
        const SharedSeed s = cgk_seed(seed, c);
        auto sa = HammingSketch::deserialize(m4, pos, s, "ud/ham");
        ++st.sketched;
        if (j >= db.size() || n > H || sa.n != 3 * H) return Fail::failure("unknown-d: bad recovery record");
        auto e = cgk_embed(*mine[db[j]].second, s, H);
        auto diffs = hamming_decode(sa, hamming_sketch(e.symbols, k, hreps, s, "ud/ham"));
        if (!diffs) return Fail::failure("unknown-d: hamming sketch did not decode");
        for (const auto& dd : *diffs) e.symbols[dd.index] = dd.x;
        e.n = n;
        auto x = cgk_invert(e, s);
        if (!x) return Fail::failure("unknown-d: embedding did not invert");
        if (id.hash64(*x) != key) return Fail::failure("unknown-d: recovered document hash mismatch");
        got.push_back(std::move(*x));
    }
    std::vector<char> drop(mine.size(), 0);
    for (size_t j : db) drop[j] = 1;
    DocSet out;
    for (size_t j = 0; j < mine.size(); ++j)
        if (!drop[j]) out.push_back(*mine[j].second);
    for (auto& g : got) out.push_back(std::move(g));
    out = canonical_set(std::move(out));
    if (set_hash(out, seed) != want) return Fail::failure("unknown-d: directory hash mismatch");
    return out;
}

// ---------------------------------------------------------------------------

namespace {

std::optional<BaseProtocol> doubling_base(const std::string& name) {
    if (name == "doubling" || name == "doubling:reduce") return BaseProtocol::Reduce;
    if (name == "doubling:cascade") return BaseProtocol::Cascade;
    return std::nullopt;
}

Bytes base_message(BaseProtocol b, const DocSet& alice, uint32_t d, const SyncOptions& opt, const SharedSeed& seed) {
    if (b == BaseProtocol::Reduce) return reduce_message(alice, d, seed);
    return cascade_encode(alice, d, seed, opt.cascade).serialize();
}

Expected<DocSet> base_apply(BaseProtocol b, ByteView msg, const DocSet& bob, const SharedSeed& seed) {
    if (b == BaseProtocol::Reduce) return reduce_apply(msg, bob, seed);
    return cascade_decode(CascadeMessage::deserialize(msg, seed), bob, seed);
}

uint64_t total_size(const DocSet& docs) {
    uint64_t n = 0;
    for (const auto& d : docs) n += d.size();
    return n;
}

}  // namespace

bool valid_protocol(const std::string& name) {
    return name == "reduce" || name == "multiround" || name == "cascade" || name == "unknown-d" ||
           doubling_base(name).has_value();
}

void sync_source(Endpoint& ep, const DocSet& alice, const SyncOptions& opt, const SharedSeed& seed) {
    const std::string& p = opt.protocol;
    if (p == "reduce") {
        ep.send_bytes(reduce_message(alice, opt.d, seed));
    } else if (p == "cascade") {
        ep.send_bytes(cascade_encode(alice, opt.d, seed, opt.cascade).serialize());
    } else if (p == "multiround") {
        multiround_reconcile_alice(ep, alice, opt.d, seed);
    } else if (p == "unknown-d") {
        unknown_d_alice(ep, alice, seed, opt.unknown);
    } else if (auto base = doubling_base(p)) {
        // Each attempt: [more u8][d u32][base message]; Bob answers one bit.
        const uint64_t limit = std::max<uint64_t>(1, total_size(alice));
        for (uint64_t d = 1;; d *= 2) {
            Bytes m;
            const bool last = d > limit;
            put_le(m, last ? 0 : 1, 1);
            if (last) {
                ep.send_bytes(std::move(m));
                return;
            }
            put_le(m, d, 4);
            Bytes body = base_message(*base, alice, uint32_t(d), opt, seed.derive("dbl/" + std::to_string(d)));
            m.insert(m.end(), body.begin(), body.end());
            ep.send_bytes(std::move(m));
            BitString ack = ep.recv();
            if (BitReader(ack).get_bit()) return;
        }
    } else {
        throw std::invalid_argument("unknown protocol: " + p);
    }
}

Expected<DocSet> sync_destination(Endpoint& ep, const DocSet& bob, const SyncOptions& opt, const SharedSeed& seed,
                                  SyncReport* report) {
    SyncReport local;
    SyncReport& rep = report ? *report : local;
    const std::string& p = opt.protocol;
    auto finish = [&](Expected<DocSet> r) {
        if (!r) rep.error = r.error();
        return r;
    };
    rep.attempts = 1;
    rep.final_d = opt.d;
    if (p == "reduce") return finish(reduce_apply(to_bytes(ep.recv()), bob, seed));
    if (p == "cascade") {
        Bytes m = to_bytes(ep.recv());
        return finish(cascade_decode(CascadeMessage::deserialize(m, seed), bob, seed));
    }
    if (p == "multiround") return finish(multiround_reconcile_bob(ep, bob, opt.d, seed));
    if (p == "unknown-d") {
        rep.final_d = 0;
        return finish(unknown_d_bob(ep, bob, seed, opt.unknown));
    }
    if (auto base = doubling_base(p)) {
        rep.attempts = 0;
        while (true) {
            Bytes m = to_bytes(ep.recv());
            size_t pos = 0;
            if (get_le(m, pos, 1) == 0) return finish(Expected<DocSet>::failure("doubling: exhausted"));
            auto d = uint32_t(get_le(m, pos, 4));
            ++rep.attempts;
            rep.final_d = d;
            Expected<DocSet> r = Expected<DocSet>::failure("doubling: not attempted");
            try {
                r = base_apply(*base, ByteView(m).subspan(pos), bob, seed.derive("dbl/" + std::to_string(d)));
            } catch (const std::runtime_error& e) {
                r = Expected<DocSet>::failure(e.what());
            }
            BitWriter w;
            w.put_bit(r.ok());
            ep.send(w.finish());
            if (r) return finish(std::move(r));
        }
    }
    throw std::invalid_argument("unknown protocol: " + p);
}

SyncRun reconcile(const DocSet& alice, const DocSet& bob, const SyncOptions& opt, const SharedSeed& seed) {
    SyncRun res;
    auto run = run_protocol([&](Endpoint& ep, const SharedSeed& s) { sync_source(ep, alice, opt, s); },
                            [&](Endpoint& ep, const SharedSeed& s) {
                                res.out = sync_destination(ep, bob, opt, s, &res.report);
                            },
                            seed);
    res.transcript = run.bob;
    return res;
}

}  // namespace drsync

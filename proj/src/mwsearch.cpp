#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "drsync/mwsearch.hpp"

namespace drsync {

namespace {

constexpr uint64_t kSentinel = uint64_t(1) << 62;

void put_offset(BitWriter& w, long v) {
    if (v < -3 || v > 3) throw std::logic_error("mwp: offset out of range");
    w.put(v < 0 ? 4u + unsigned(-v) : unsigned(v), 3);
}

long get_offset(BitReader& r) {
    auto x = unsigned(r.get(3));
    long m = long(x & 3u);
    return x & 4u ? -m : m;
}

void split_queried(Partition& I, const MwpPhase& ph, size_t q1, size_t q2) {
    if (ph.eta == 2 && q2 > q1) {
        I.split(q2);
        I.split(q1);
    } else {
        I.split(q1);
        if (ph.eta == 2) I.split(q2);
    }
}

std::vector<uint32_t> depths_from_z(const BitString& z, const std::vector<MwpPhase>& phases) {
    if (z.nbits != 2 * phases.size()) throw ChannelError("mwp: bad closing vector");
    BitReader r(z);
    std::vector<uint32_t> d;
    for (const auto& ph : phases)
        for (unsigned j = 0; j < 2; ++j)
            if (r.get_bit()) {
                if (j >= ph.eta) throw ChannelError("mwp: closing vector marks an unqueried slot");
                d.push_back(ph.depth[j]);
            }
    std::sort(d.begin(), d.end());
    d.erase(std::unique(d.begin(), d.end()), d.end());
    return d;
}

}  // namespace

HashFn MwpHashing::phase_fn(size_t i) const { return derive_hash(seed, label + "/" + std::to_string(i), 2); }

uint64_t PrefixSource::of(uint32_t l) const { return l <= len ? (*fp)(begin, begin + l) : kSentinel | l; }

HashFn prefix_fingerprint(const SharedSeed& seed) { return derive_hash(seed, "mwp/fp", 61); }

MwpOutcome mwp_alice(Endpoint& ep, const PrefixSource& a, Partition I, size_t t, const MwpHashing& h, bool trace) {
    MwpOutcome out;
    for (size_t i = 0; i < t; ++i) {
        BitString msg = ep.recv();
        BitReader r(msg);
        MwpPhase ph;
        ph.eta = uint8_t(r.get(2));
        if (ph.eta > 2) throw ChannelError("mwp: bad phase header");
        if (ph.eta > 0) {
            long q1 = long(I.cursor) + get_offset(r);
            long q2 = ph.eta == 2 ? q1 + get_offset(r) : q1;
            long np = long(I.parts.size());
            if (q1 < 0 || q1 >= np || q2 < 0 || q2 >= np) throw ChannelError("mwp: cursor out of range");
            HashFn f = h.phase_fn(i);
            BitWriter w;
            long qs[2] = {q1, q2};
            for (unsigned j = 0; j < ph.eta; ++j) {
                ph.depth[j] = I.query_depth(size_t(qs[j]));
                w.put(f.word(a.of(ph.depth[j])), 2);
            }
            ep.send(w.finish());
            I.cursor = size_t(q1);
            split_queried(I, ph, size_t(q1), size_t(q2));
        }
        out.phases.push_back(ph);
        if (trace) out.partition_trace.push_back(I.digest());
    }
    out.depths = depths_from_z(ep.recv(), out.phases);
    return out;
}

MwpOutcome mwp_bob(Endpoint& ep, MwpTree& tree, const SubstringHasher& fb, Partition I, size_t t,
                   const MwpHashing& h, MwpAudit* audit) {
    auto* ex = dynamic_cast<ExplicitTree*>(&tree);
    if (audit && audit->target && !ex) throw std::invalid_argument("mwp audit needs an explicit tree");
    MwpOutcome out;
    const std::vector<uint32_t> cands = I.depths();
    std::vector<char> queried(size_t(tree.height()) + 1, 0);

    const double alpha = 4.0 / std::log2(1.5);
    const bool track = audit && audit->target;
    const uint32_t rstar = track ? ex->depth(*audit->target) : 0;
    auto phi = [&]() -> double {
        size_t qs = I.find(rstar);
        if (qs == size_t(-1)) return std::nan("");
        double v = std::fabs(double(I.cursor) - double(qs)) + alpha * std::log2(double(I.parts[qs].size()));
        v += alpha * (qs + 1 < I.parts.size() ? std::log2(double(I.parts[qs + 1].size()))
                                              : std::log2(double(std::max<uint32_t>(tree.height(), 1))));
        return v;
    };

    for (size_t i = 0; i < t; ++i) {
        tree.refresh();
        MwpPhase ph;
        bool informative = false;
        double phi0 = track ? phi() : 0;
        BitWriter w;
        auto hv = tree.total() > 0 ? tree.heavy() : std::nullopt;
        if (hv || tree.total() <= 0 || cands.empty()) {
            if (hv) {
                tree.zero(*hv);
                out.m.push_back(*hv);
                ph.added = true;
                if (track && hv->id >= 0 && size_t(hv->id) == *audit->target) audit->target_in_m = true;
            }
            w.put(0, 2);
            ep.send(w.finish());
        } else {
            uint32_t rho = tree.argmin(cands);
            if (audit) {
                ++audit->rho_checked;
                audit->rho_unbalanced += !tree.balanced(rho);
            }
            const size_t o = I.find(rho);
            const size_t q1 = I.cursor;
            const size_t q1n = o >= q1 ? std::min(o, q1 + 3) : std::max(o, q1 >= 3 ? q1 - 3 : 0);
            ph.depth[0] = I.query_depth(q1n);
            ph.eta = 1;
            size_t q2n = q1n;
            if (q1n == o && !tree.balanced(ph.depth[0])) {
                if (rho < ph.depth[0] && q1n > 0) {
                    q2n = q1n - 1;
                    ph.eta = 2;
                } else if (rho > ph.depth[0] && q1n + 1 < I.parts.size()) {
                    q2n = q1n + 1;
                    ph.eta = 2;
                }
            }
            if (ph.eta == 2) ph.depth[1] = I.query_depth(q2n);
            w.put(ph.eta, 2);
            put_offset(w, long(q1n) - long(q1));
            if (ph.eta == 2) put_offset(w, long(q2n) - long(q1n));
            ep.send(w.finish());
            if (track)
                for (unsigned j = 0; j < ph.eta; ++j)
                    informative |= ex->component(*audit->target, ph.depth[j]) <= 0.75L * tree.total();

            BitString reply = ep.recv();
            BitReader r(reply);
            HashFn f = h.phase_fn(i);
            for (unsigned j = 0; j < ph.eta; ++j) {
                const uint64_t x = r.get(2);
                const uint32_t d = ph.depth[j];
                tree.update(d, [&](uint32_t pos) { return f.word(fb(pos, pos + d)) == x; });
                if (d < queried.size()) queried[d] = 1;
            }
            I.cursor = q1n;
            split_queried(I, ph, q1n, q2n);
        }
        if (track) {
            double d = phi() - phi0;
            informative |= ph.added;
            audit->informative += informative;
            audit->phi.push_back(phi0);
            bool ok = ph.added || (informative && d <= 5 + 1e-9) || d <= -2 + 1e-9;
            audit->trichotomy_failures += !ok;
        }
        out.phases.push_back(ph);
        if (audit && audit->trace_partition) out.partition_trace.push_back(I.digest());
    }
    if (track) audit->phi.push_back(phi());
    if (audit && ex) {
        for (size_t v = 1; v < ex->size(); ++v) {
            uint32_t d = ex->depth(v);
            if (d < queried.size() && queried[d]) continue;
            size_t p = size_t(ex->parent(v));
            if (ex->depth(p) + 1 == d && ex->weight(v) != ex->weight(p)) ++audit->unqueried_failures;
        }
    }

    std::unordered_set<uint32_t> mdepth;
    for (const auto& u : out.m) mdepth.insert(u.depth);
    BitWriter z;
    for (const auto& ph : out.phases)
        for (unsigned j = 0; j < 2; ++j) z.put_bit(j < ph.eta && mdepth.count(ph.depth[j]));
    BitString zs = z.finish();
    ep.send(zs);
    out.depths = depths_from_z(zs, out.phases);
    return out;
}

// ---------------------------------------------------------------------------

PrefixConstants prefix_constants(uint64_t n) {
    const double ln = std::log(double(std::max<uint64_t>(n, 2)));
    const double delta = std::pow(2.0, -std::sqrt(ln)) / 3;
    const double t1 = 85 * ln + 63 * std::log(1 / delta);
    const double t2 = 82 * std::log(t1) + 63 * std::log(1 / delta);
    auto fb = unsigned(std::ceil(std::log2(t2) + std::log2(1 / delta))) + 2;
    return {delta, size_t(std::ceil(t1)), size_t(std::ceil(t2)), std::min(fb, 61u)};
}

PrefixResult find_prefix_alice(Endpoint& ep, const PrefixSource& a, uint32_t maxdepth, uint64_t n,
                               const SharedSeed& seed, const std::string& label) {
    const auto c = prefix_constants(n);
    PrefixResult res;
    auto o1 = mwp_alice(ep, a, Partition::range(1, maxdepth), c.t1, {seed, label + "/1"});
    if (o1.depths.empty()) return res;
    auto o2 = mwp_alice(ep, a, Partition::singletons(o1.depths), c.t2, {seed, label + "/2"});
    HashFn hf = derive_hash(seed, label + "/final", c.final_bits);
    for (auto it = o2.depths.rbegin(); it != o2.depths.rend(); ++it) {
        BitWriter w;
        w.put(hf.word(a.of(*it)), c.final_bits);
        ep.send(w.finish());
        BitString reply = ep.recv();
        if (BitReader(reply).get_bit()) {
            res.length = *it;
            res.confirmed = true;
            return res;
        }
    }
    return res;
}

PrefixResult find_prefix_bob(Endpoint& ep, const ChainIndex& ix, const SubstringHasher& fb, uint64_t n,
                             const SharedSeed& seed, const std::string& label) {
    const auto c = prefix_constants(n);
    PrefixResult res;
    ChainTree t1(ix);
    auto o1 = mwp_bob(ep, t1, fb, Partition::range(1, ix.max_depth()), c.t1, {seed, label + "/1"});
    if (o1.depths.empty()) return res;

    // Contract M1: a node's parent is its deepest ancestor in M1, else the root.
    std::vector<NodeRef> m1;
    for (const auto& u : o1.m)
        if (u.depth > 0) m1.push_back(u);
    std::stable_sort(m1.begin(), m1.end(), [](const NodeRef& x, const NodeRef& y) { return x.depth < y.depth; });
    std::vector<int32_t> parent{-1};
    std::vector<uint32_t> depth{0}, pos{0};
    std::vector<uint64_t> fp;
    for (size_t v = 0; v < m1.size(); ++v) {
        int32_t up = 0;
        for (size_t u = v; u-- > 0;) {
            if (m1[u].depth >= m1[v].depth) continue;
            if (fb(m1[v].pos, m1[v].pos + m1[u].depth) == fp[u]) {
                up = int32_t(u + 1);
                break;
            }
        }
        fp.push_back(fb(m1[v].pos, m1[v].pos + m1[v].depth));
        parent.push_back(up);
        depth.push_back(m1[v].depth);
        pos.push_back(m1[v].pos);
    }
    ExplicitTree t2(parent, depth, pos);
    auto o2 = mwp_bob(ep, t2, fb, Partition::singletons(o1.depths), c.t2, {seed, label + "/2"});

    HashFn hf = derive_hash(seed, label + "/final", c.final_bits);
    for (auto it = o2.depths.rbegin(); it != o2.depths.rend(); ++it) {
        BitString msg = ep.recv();
        const uint64_t x = BitReader(msg).get(c.final_bits);
        const NodeRef* hit = nullptr;
        for (const auto& u : o2.m)
            if (u.depth == *it && hf.word(fb(u.pos, u.pos + u.depth)) == x) {
                hit = &u;
                break;
            }
        BitWriter w;
        w.put_bit(hit != nullptr);
        ep.send(w.finish());
        if (hit) {
            res = {hit->depth, true, hit->pos};
            return res;
        }
    }
    return res;
}

PrefixRun find_prefix(ByteView a, ByteView b, uint32_t kappa, const SharedSeed& seed) {
    if (kappa < 1) throw std::invalid_argument("find_prefix needs kappa >= 1");
    auto maxdepth = uint32_t(std::max<size_t>(1, (a.size() + kappa - 1) / kappa));
    ChainIndex ix(b, maxdepth);
    PrefixRun out;
    auto run = run_protocol(
        [&](Endpoint& ep, const SharedSeed& s) {
            HashFn fp = prefix_fingerprint(s);
            SubstringHasher fa(a, fp);
            out.alice = find_prefix_alice(ep, {&fa, 0, a.size()}, maxdepth, a.size(), s, "fp");
        },
        [&](Endpoint& ep, const SharedSeed& s) {
            HashFn fp = prefix_fingerprint(s);
            SubstringHasher fbh(b, fp);
            out.bob = find_prefix_bob(ep, ix, fbh, a.size(), s, "fp");
        },
        seed);
    out.ta = run.alice;
    out.tb = run.bob;
    return out;
}

// ---------------------------------------------------------------------------

namespace {

size_t raw_len(uint64_t n) { return std::max<size_t>(1, (ceil_log2(n) + 7) / 8); }
unsigned ack_bits(uint64_t n) { return std::min(64u, 3 * std::max(1u, ceil_log2(n))); }
uint32_t depth_for(uint64_t n, uint32_t k) { return uint32_t(std::max<uint64_t>(1, (n + k - 1) / k)); }

}  // namespace

void multiround_alice(Endpoint& ep, ByteView a, uint32_t k, const SharedSeed& seed, const MultiroundOptions& opt,
                      MultiroundStats* stats) {
    if (k < 1) throw std::invalid_argument("multiround needs k >= 1");
    const uint64_t n = a.size();
    {
        BitWriter w;
        w.put_varint(n);
        ep.send(w.finish());
    }
    MultiroundStats local;
    MultiroundStats& st = stats ? *stats : local;
    const uint32_t maxdepth = depth_for(n, k);
    const unsigned lbits = ceil_log2(uint64_t(maxdepth) + 1), hb = ack_bits(n);
    const size_t cap = opt.max_phases ? opt.max_phases : 10000, rl = raw_len(n);
    HashFn fp = prefix_fingerprint(seed);
    HashFn ack = derive_hash(seed, "mr/ack", hb);
    SubstringHasher fa(a, fp);
    size_t i = 0;
    for (size_t phase = 0; i < n && phase < cap; ++phase) {
        ++st.phases;
        const size_t raw = std::min<size_t>(rl, n - i);
        if (n - i > raw) {
            auto pr = find_prefix_alice(ep, {&fa, i, n - i}, maxdepth, n, seed, "mr/" + std::to_string(phase));
            if (pr.confirmed && pr.length >= rl) {
                BitWriter w;
                w.put_bit(true);
                w.put(pr.length, lbits);
                uint64_t hv = ack(a.subspan(i, pr.length)).lo;
                if (opt.corrupt_hash_at == phase) hv ^= 1;
                w.put(hv, hb);
                ep.send(w.finish());
                BitString reply = ep.recv();
                if (BitReader(reply).get_bit()) {
                    i += pr.length;
                    ++st.matched;
                } else {
                    ++st.rejected;
                }
                continue;
            }
        }
        BitWriter w;
        w.put_bit(false);
        w.put_bytes(a.subspan(i, raw));
        ep.send(w.finish());
        i += raw;
        ++st.raw;
    }
}

Expected<Bytes> multiround_bob(Endpoint& ep, ByteView b, uint32_t k, const SharedSeed& seed,
                               const MultiroundOptions& opt, MultiroundStats* stats) {
    if (k < 1) throw std::invalid_argument("multiround needs k >= 1");
    BitString hdr = ep.recv();
    const uint64_t n = BitReader(hdr).get_varint();
    MultiroundStats local;
    MultiroundStats& st = stats ? *stats : local;
    const uint32_t maxdepth = depth_for(n, k);
    const unsigned lbits = ceil_log2(uint64_t(maxdepth) + 1), hb = ack_bits(n);
    const size_t cap = opt.max_phases ? opt.max_phases : 10000, rl = raw_len(n);
    HashFn fp = prefix_fingerprint(seed);
    HashFn ack = derive_hash(seed, "mr/ack", hb);
    SubstringHasher fbh(b, fp);
    ChainIndex ix(b, maxdepth);
    Bytes out;
    for (size_t phase = 0; out.size() < n && phase < cap; ++phase) {
        ++st.phases;
        const size_t raw = std::min<size_t>(rl, n - out.size());
        PrefixResult pr;
        if (n - out.size() > raw) pr = find_prefix_bob(ep, ix, fbh, n, seed, "mr/" + std::to_string(phase));
        BitString msg = ep.recv();
        BitReader r(msg);
        if (r.get_bit()) {
            auto len = uint32_t(r.get(lbits));
            uint64_t hv = r.get(hb);
            bool ok = pr.confirmed && len == pr.length && len <= n - out.size() &&
                      size_t(pr.pos) + len <= b.size() && ack(b.subspan(pr.pos, len)).lo == hv;
            BitWriter w;
            w.put_bit(ok);
            ep.send(w.finish());
            if (ok) {
                out.insert(out.end(), b.begin() + pr.pos, b.begin() + pr.pos + len);
                ++st.matched;
            } else {
                ++st.rejected;
            }
        } else {
            Bytes chunk = r.get_bytes(raw);
            out.insert(out.end(), chunk.begin(), chunk.end());
            ++st.raw;
        }
    }
    if (out.size() < n) return Expected<Bytes>::failure("multiround: phase cap reached");
    return out;
}

MultiroundRun multiround_exchange(ByteView a, ByteView b, uint32_t k, const SharedSeed& seed,
                                  const MultiroundOptions& opt) {
    MultiroundRun res;
    MultiroundStats sa;
    auto run = run_protocol([&](Endpoint& ep, const SharedSeed& s) { multiround_alice(ep, a, k, s, opt, &sa); },
                            [&](Endpoint& ep, const SharedSeed& s) {
                                res.out = multiround_bob(ep, b, k, s, opt, &res.stats);
                            },
                            seed);
    res.bits = run.bob.total_bits();
    res.rounds = run.bob.rounds();
    return res;
}

}  // namespace drsync

// Acceptance runs at full size.  One PASS/FAIL line per criterion; the exit
// status is nonzero when any criterion fails.
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "drsync/corpus.hpp"
#include "drsync/dirsync.hpp"
#include "drsync/docx.hpp"
#include "drsync/iblt.hpp"
#include "drsync/mwsearch.hpp"
#include "drsync/sketches.hpp"

using namespace drsync;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass;
    std::string detail;
};

int failures = 0;

void criterion(int id, const char* name, double limit_s, const std::function<Outcome()>& body) {
    auto t0 = Clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    double s = seconds_since(t0);
    bool pass = o.pass && s < limit_s;
    failures += !pass;
    std::printf("%s %2d %s: %s; %.1fs (limit %.0fs)\n", pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), s, limit_s);
    std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// hi and lo both within `tol` of their midpoint.
bool flat(const std::vector<double>& r, double tol, double* spread = nullptr) {
    double lo = *std::min_element(r.begin(), r.end()), hi = *std::max_element(r.begin(), r.end());
    double mid = (lo + hi) / 2;
    if (spread) *spread = (hi - mid) / mid;
    return hi <= mid * (1 + tol) && lo >= mid * (1 - tol);
}

std::string join(const std::vector<double>& r) {
    std::string s;
    for (double x : r) s += (s.empty() ? "" : ",") + fmt("%.2f", x);
    return s;
}

// ------------------------------------------------------------------ IBLT

Outcome iblt_rate() {
    std::mt19937_64 rng(101);
    auto trial = [&](size_t items) {
        Iblt t({200, 4, 0}, SharedSeed::from_u64(rng()), "acc");
        for (size_t i = 0; i < items; ++i) {
            uint64_t key = rng();
            if (rng() & 1)
                t.insert(key);
            else
                t.erase(key);
        }
        auto r = t.peel();
        return r.complete && r.positives.size() + r.negatives.size() == items;
    };
    int ok = 0, over = 0;
    for (int i = 0; i < 1000; ++i) ok += trial(40);
    // peeling threshold for 4-uniform hypergraphs is about 0.772 m
    const auto heavy = size_t(std::lround(2 * 0.772 * 200));
    for (int i = 0; i < 1000; ++i) over += trial(heavy);
    return {ok >= 990 && over < 500, fmt("40 items %d/1000, %zu items %d/1000", ok, heavy, over)};
}

// ------------------------------------------------------------------- IMS

Outcome ims_exchange() {
    std::mt19937_64 rng(102);
    const uint32_t k = 16;
    int ok = 0;
    for (int t = 0; t < 100; ++t) {
        auto s = SharedSeed::from_u64(rng());
        Bytes b = corpus::random_doc(rng, 1 << 14);
        Bytes a = corpus::mutate(rng, b, 10, 2, 256);  // block edit distance <= 16
        auto r = ims_decode(ims_encode(a, k, s), b, s);
        ok += r && *r == a;
    }
    std::vector<double> ratio;
    for (unsigned e = 10; e <= 18; ++e) {
        double n = double(1u << e);
        auto sk = ims_encode(corpus::random_doc(rng, size_t(n)), k, SharedSeed::from_u64(e));
        ratio.push_back(8.0 * double(sk.wire_bytes()) / (k * std::log2(n) * std::log2(n / k)));
    }
    double spread;
    bool f = flat(ratio, 0.30, &spread);
    return {ok >= 95 && f, fmt("%d/100 exact; ratio %s spread %.0f%%", ok, join(ratio).c_str(), 100 * spread)};
}

// --------------------------------------------------------------- mwsearch

struct Instance {
    Bytes a, b;
    uint32_t maxdepth;
    SubstringTree tree;
    size_t target;
};

Instance make_instance(std::mt19937_64& rng, size_t n, uint32_t maxdepth, size_t common) {
    Instance in;
    in.b = corpus::random_doc(rng, n);
    size_t i = rng() % (n - common);
    in.a.assign(in.b.begin() + long(i), in.b.begin() + long(i + common));
    while (in.a.size() < n) in.a.push_back(uint8_t(rng()));
    in.maxdepth = maxdepth;
    in.tree = build_tree(in.b, maxdepth);
    in.target = 0;
    for (size_t v = 0; v < in.tree.nodes.size(); ++v) {
        const auto& u = in.tree.nodes[v];
        if (u.depth <= in.tree.nodes[in.target].depth) continue;
        if (std::equal(in.a.begin(), in.a.begin() + u.depth, in.b.begin() + u.pos)) in.target = v;
    }
    return in;
}

Outcome mwp_invariants() {
    std::mt19937_64 rng(103);
    const auto c = prefix_constants(256);
    const uint32_t maxdepth = 32;
    const double need = (2.0 * double(c.t1) - 8 * std::log(double(maxdepth)) / std::log(1.5)) / 7;
    size_t phases = 0, unbalanced = 0, trich = 0, unqueried = 0;
    int informative_ok = 0;
    for (int run = 0; run < 100; ++run) {
        auto in = make_instance(rng, 256, maxdepth, 1 + rng() % 40);
        MwpAudit audit;
        audit.target = in.target;
        MwpOutcome bob;
        run_protocol(
            [&](Endpoint& ep, const SharedSeed& s) {
                HashFn fp = prefix_fingerprint(s);
                SubstringHasher fa(in.a, fp);
                mwp_alice(ep, {&fa, 0, in.a.size()}, Partition::range(1, in.maxdepth), c.t1, {s, "t"});
            },
            [&](Endpoint& ep, const SharedSeed& s) {
                HashFn fp = prefix_fingerprint(s);
                SubstringHasher fb(in.b, fp);
                ExplicitTree tree = ExplicitTree::from(in.tree);
                bob = mwp_bob(ep, tree, fb, Partition::range(1, in.maxdepth), c.t1, {s, "t"}, &audit);
            },
            SharedSeed::from_u64(rng()));
        phases += audit.rho_checked;
        unbalanced += audit.rho_unbalanced;
        trich += audit.trichotomy_failures;
        unqueried += audit.unqueried_failures;
        informative_ok += double(audit.informative) >= need;
    }
    bool pass = phases > 0 && unbalanced == 0 && informative_ok == 100 && trich == 0 && unqueried == 0;
    return {pass, fmt("balanced %zu/%zu phases, informative bound %d/100 runs (need %.1f), trichotomy failures %zu",
                      phases - unbalanced, phases, informative_ok, need, trich + unqueried)};
}

// Longest prefix of a, capped at maxdepth, occurring in b.
size_t prefix_oracle(ByteView a, ByteView b, size_t maxdepth) {
    size_t lo = 0, hi = std::min(maxdepth, a.size());
    while (lo < hi) {
        size_t mid = (lo + hi + 1) / 2;
        if (std::search(b.begin(), b.end(), a.begin(), a.begin() + long(mid)) != b.end())
            lo = mid;
        else
            hi = mid - 1;
    }
    return lo;
}

Outcome prefix_search() {
    std::mt19937_64 rng(104);
    const size_t n = 4096;
    const uint32_t kappa = 8, maxdepth = uint32_t((n + kappa - 1) / kappa);
    int ok = 0;
    double cmax = 0, csum = 0;
    for (int t = 0; t < 200; ++t) {
        Bytes b = corpus::random_doc(rng, n);
        size_t p = 1 + rng() % (maxdepth - 1);
        size_t i = rng() % (n - p);
        Bytes a = corpus::with_common_prefix(rng, ByteView(b).subspan(i), p, n);
        size_t want = prefix_oracle(a, b, maxdepth);
        auto r = find_prefix(a, b, kappa, SharedSeed::from_u64(rng()));
        ok += r.alice.length == want && r.bob.length == want &&
              std::equal(a.begin(), a.begin() + long(want), b.begin() + r.bob.pos);
        double c = double(r.tb.total_bits()) / std::log2(double(n));
        cmax = std::max(cmax, c);
        csum += c;
    }
    return {ok >= 170, fmt("%d/200 correct; C = %.0f (max), %.0f (mean) bits per log2 n", ok, cmax, csum / 200)};
}

Outcome multiround() {
    std::mt19937_64 rng(105);
    const uint32_t k = 8;
    auto trial = [&](size_t n, size_t* bits) {
        Bytes b = corpus::random_doc(rng, n);
        Bytes a = corpus::mutate(rng, b, 5, 1, 64);  // block edit distance <= 8
        auto r = multiround_exchange(a, b, k, SharedSeed::from_u64(rng()));
        *bits = r.bits;
        return r.out.ok() && *r.out == a;
    };
    int ok = 0;
    std::vector<double> ratio;
    for (unsigned e = 10; e <= 13; ++e) {
        const size_t n = size_t(1) << e;
        const int trials = e == 12 ? 50 : 4;
        size_t total = 0;
        for (int t = 0; t < trials; ++t) {
            size_t bits;
            bool good = trial(n, &bits);
            if (e == 12) ok += good;
            total += bits;
        }
        ratio.push_back(double(total) / trials / (k * std::log2(double(n))));
    }
    double spread;
    bool f = flat(ratio, 0.40, &spread);
    return {ok >= 45 && f, fmt("%d/50 exact; bits/(k log2 n) %s spread %.0f%%", ok, join(ratio).c_str(), 100 * spread)};
}

// ---------------------------------------------------------------- docx

Outcome fast_variant() {
    std::mt19937_64 rng(107);
    const uint32_t k = 8;
    const uint8_t dexp = 20;
    // Check time on unrelated documents.  A single check takes microseconds,
    // so each sample times a batch, the two sizes are interleaved after a
    // warm-up, and the per-size figure is the median sample over 8 pairs.
    struct Pair {
        FastSketch sk;
        std::unique_ptr<FastPrecomp> pc;
    };
    auto pairs = [&](size_t n) {
        std::vector<Pair> v;
        for (int i = 0; i < 8; ++i) {
            auto s = SharedSeed::from_u64(rng());
            Bytes a = corpus::random_doc(rng, n), b = corpus::random_doc(rng, n);
            v.push_back({fast_encode(a, k, dexp, s), std::make_unique<FastPrecomp>(b, k, dexp, s)});
        }
        return v;
    };
    auto p12 = pairs(1 << 12), p16 = pairs(1 << 16);
    auto batch = [&](const std::vector<Pair>& v) {
        auto t0 = Clock::now();
        size_t failed = 0;
        for (int r = 0; r < 50; ++r)
            for (const auto& p : v) failed += !fast_failure_check(p.sk, *p.pc);
        if (failed == 0) throw std::runtime_error("unrelated documents passed the check");
        return seconds_since(t0) / (50.0 * double(v.size()));
    };
    batch(p12), batch(p16);
    std::vector<double> t12, t16;
    for (int r = 0; r < 21; ++r) {
        t12.push_back(batch(p12));
        t16.push_back(batch(p16));
    }
    auto median = [](std::vector<double> v) {
        std::nth_element(v.begin(), v.begin() + long(v.size() / 2), v.end());
        return v[v.size() / 2];
    };
    // Bob's whole decode: precompute, check, decode
    auto decode_time = [&](size_t n) {
        auto s = SharedSeed::from_u64(rng());
        Bytes a = corpus::random_doc(rng, n);
        Bytes b = corpus::mutate(rng, a, k);
        auto sk = fast_encode(a, k, dexp, s);
        auto t0 = Clock::now();
        FastPrecomp pc(b, k, dexp, s);
        auto st = fast_failure_check(sk, pc);
        if (st) (void)fast_decode(sk, pc, *st);
        return seconds_since(t0);
    };
    double c12 = median(t12), c16 = median(t16);
    double d12 = decode_time(1 << 12), d16 = decode_time(1 << 16);
    int exact = 0;
    for (int t = 0; t < 100; ++t) {
        auto s = SharedSeed::from_u64(rng());
        Bytes a = corpus::random_doc(rng, 1 << 14);
        Bytes b = corpus::mutate(rng, a, k);
        FastPrecomp pc(b, k, dexp, s);
        auto sk = fast_encode(a, k, dexp, s);
        auto st = fast_failure_check(sk, pc);
        if (!st) continue;
        auto r = fast_decode(sk, pc, *st);
        exact += r && *r == a;
    }
    double cr = c16 / c12, dr = d16 / d12;
    bool pass = cr <= 2 && cr >= 0.5 && dr >= 4 && exact == 100;
    return {pass, fmt("check 2^16/2^12 = %.2fx (%.1fus vs %.1fus), decode 2^16/2^12 = %.1fx, %d/100 exact", cr, 1e6 * c16,
                      1e6 * c12, dr, exact)};
}

// ------------------------------------------------------------- sketches

Outcome cgk_property() {
    std::mt19937_64 rng(108);
    std::string per;
    bool pass = true;
    for (int de = 1; de <= 3; ++de) {
        int good = 0, trials = 0;
        while (trials < 300) {
            Bytes a = corpus::random_doc(rng, 96);
            Bytes b = corpus::mutate(rng, a, size_t(de));
            size_t d = edit_distance(a, b);
            if (d != size_t(de)) continue;
            ++trials;
            auto s = SharedSeed::from_u64(rng());
            size_t n = std::max(a.size(), b.size());
            size_t h = hamming_distance(cgk_embed(a, s, n).symbols, cgk_embed(b, s, n).symbols);
            good += 2 * h >= d && h <= 1300 * d * d;
        }
        pass &= good >= 180;
        per += fmt("%sde=%d %d/300", per.empty() ? "" : ", ", de, good);
    }
    // The walk misses the end with probability exp(-Omega(n)), so lengths
    // start at 64; very short inputs are reported separately.
    int inv = 0, short_inv = 0;
    for (int t = 0; t < 1000; ++t) {
        Bytes x = corpus::random_doc(rng, 64 + rng() % 449);
        auto s = SharedSeed::from_u64(rng());
        auto r = cgk_invert(cgk_embed(x, s), s);
        inv += r && *r == x;
        Bytes y = corpus::random_doc(rng, 1 + rng() % 8);
        auto ry = cgk_invert(cgk_embed(y, s), s);
        short_inv += ry && *ry == y;
    }
    return {pass && inv == 1000,
            fmt("bounds %s; invert %d/1000 (n in 64..512), %d/1000 at n <= 8", per.c_str(), inv, short_inv)};
}

// -------------------------------------------------------------- dirsync

// s documents of at most h bytes; d single-byte edits spread over them.
void scenario(std::mt19937_64& rng, size_t s, size_t h, size_t d, DocSet& a, DocSet& b) {
    std::vector<Bytes> docs;
    for (size_t i = 0; i < s; ++i) {
        std::string p = "f" + std::to_string(i);
        docs.push_back(encode_document(p, corpus::random_doc(rng, h / 2 + rng() % (h / 2 - p.size()))));
    }
    b = canonical_set(docs);
    for (size_t e = 0; e < d; ++e) {
        size_t i = rng() % s;
        docs[i] = corpus::mutate(rng, docs[i], 1);
        if (docs[i].size() > h) docs[i].pop_back();
    }
    a = canonical_set(docs);
}

Outcome cascade() {
    std::mt19937_64 rng(109);
    int ok = 0, silent = 0;
    for (int t = 0; t < 50; ++t) {
        DocSet a, b;
        scenario(rng, 64, 256, 20, a, b);
        SyncOptions o;
        o.protocol = "cascade";
        o.d = 20;
        auto r = reconcile(a, b, o, SharedSeed::from_u64(rng()));
        ok += r.out.ok() && *r.out == a;
        silent += r.out.ok() && *r.out != a;
    }
    return {ok >= 25 && silent == 0, fmt("%d/50 recovered, %d silent corruptions", ok, silent)};
}

Outcome unknown_d() {
    std::mt19937_64 rng(110);
    int ok = 0, four = 0, runs = 0;
    SyncOptions o;
    o.protocol = "unknown-d";
    o.unknown.delta = 0.05;
    for (int t = 0; t < 50; ++t) {
        DocSet a, b;
        scenario(rng, 32, 256, 12, a, b);
        auto r = reconcile(a, b, o, SharedSeed::from_u64(rng()));
        ok += r.out.ok() && *r.out == a;
        four += r.transcript.rounds() == 4;
        ++runs;
    }
    // other shapes: identical, heavily edited, unrelated
    for (int shape = 0; shape < 3; ++shape) {
        DocSet a, b, other;
        scenario(rng, 32, 256, shape == 1 ? 400 : 0, a, b);
        if (shape == 2) scenario(rng, 32, 256, 0, a, other);
        auto r = reconcile(a, b, o, SharedSeed::from_u64(rng()));
        four += r.transcript.rounds() == 4;
        ++runs;
    }
    return {ok >= 45 && four == runs, fmt("%d/50 recovered; 4 messages in %d/%d runs", ok, four, runs)};
}

// ------------------------------------------------------------------ cli

struct TempDir {
    fs::path path;
    TempDir() {
        std::random_device rd;
        path = fs::temp_directory_path() / ("drsync-acc-" + std::to_string(rd()) + std::to_string(rd()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& s) const { return (path / s).string(); }
};

struct Proc {
    FILE* f;
    explicit Proc(const std::string& args) {
        std::string cmd = std::string(DRSYNC_CLI_PATH) + " " + args + " 2>&1";
        f = popen(cmd.c_str(), "r");
        if (!f) throw std::runtime_error("popen failed");
    }
    std::pair<std::string, int> finish() {
        std::string out;
        char buf[4096];
        size_t k;
        while ((k = fread(buf, 1, sizeof buf, f)) > 0) out.append(buf, k);
        int st = pclose(f);
        return {out, WIFEXITED(st) ? WEXITSTATUS(st) : -1};
    }
};

std::string field(const std::string& out, const std::string& key) {
    auto at = out.find(key + "=");
    if (at == std::string::npos) return {};
    at += key.size() + 1;
    return out.substr(at, out.find_first_of(" \n", at) - at);
}

// Destination report line after a two-process sync; empty on a nonzero exit.
std::string tcp_sync(const std::string& src, const std::string& dst, const std::string& flags) {
    std::random_device rd;
    const std::string at = "127.0.0.1:" + std::to_string(20000 + rd() % 40000);
    Proc s("sync --source " + src + " --listen " + at + " " + flags);
    Proc d("sync --dest " + dst + " --connect " + at + " " + flags);
    auto dr = d.finish();
    auto sr = s.finish();
    if (dr.second != 0 || sr.second != 0) return {};
    return dr.first;
}

Outcome cli_end_to_end() {
    struct Case {
        const char* protocol;
        std::string flags;
    };
    const std::vector<Case> cases{{"reduce", "--protocol reduce --d 45"},
                                  {"cascade", "--protocol cascade --d 15"},
                                  {"doubling:reduce", "--protocol doubling:reduce"}};
    std::mt19937_64 rng(111);
    Directory base = corpus::random_directory(rng, 200, 64, 2048);
    std::vector<corpus::DirChange> log;
    Directory changed = corpus::mutate_directory(rng, base, 15, &log, true, false);
    size_t renames = 0;
    for (const auto& c : log) renames += c.kind == "rename";

    Directory big_base = corpus::random_directory(rng, 10, 50, 300);
    big_base["data/big.bin"] = corpus::random_doc(rng, 1 << 20);
    Directory big_moved = big_base;
    big_moved["data/bog.bin"] = big_moved["data/big.bin"];
    big_moved.erase("data/big.bin");

    bool pass = renames > 0 && log.size() == 15;
    std::string detail = fmt("%zu changes (%zu renames)", log.size(), renames);
    for (const auto& c : cases) {
        auto t0 = Clock::now();
        TempDir t;
        write_directory(t / "src", changed);
        write_directory(t / "dst", base);
        std::string r1 = tcp_sync(t / "src", t / "dst", c.flags);
        bool equal = !r1.empty() && read_directory(t / "dst") == changed;

        write_directory(t / "bsrc", big_moved);
        write_directory(t / "bdst", big_base);
        // one changed document: a substitution plus a block move in the
        // concatenation, a single pair for cascade
        std::string big_flags = c.flags;
        if (std::string(c.protocol) == "reduce") big_flags = "--protocol reduce --d 2";
        if (std::string(c.protocol) == "cascade") big_flags = "--protocol cascade --d 1";
        std::string r2 = tcp_sync(t / "bsrc", t / "bdst", big_flags);
        bool big_equal = !r2.empty() && read_directory(t / "bdst") == big_moved;
        double kb = r2.empty() ? -1 : double(std::stoull(field(r2, "bits"))) / 8 / 1024;
        double s = seconds_since(t0);

        bool ok = equal && big_equal && kb >= 0 && kb < 64 && s < 60;
        pass &= ok;
        detail += fmt("; %s %s, rename %.1f KB, %.1fs", c.protocol, equal ? "identical" : "MISMATCH", kb, s);
    }
    return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
    const bool only = argc > 1;
    auto want = [&](int id) { return !only || std::atoi(argv[1]) == id; };
    if (want(1)) criterion(1, "iblt decode rate", 5, iblt_rate);
    if (want(2)) criterion(2, "ims exchange", 60, ims_exchange);
    if (want(3)) criterion(3, "weights protocol invariants", 120, mwp_invariants);
    if (want(4)) criterion(4, "prefix search", 600, prefix_search);
    if (want(5)) criterion(5, "multiround exchange", 900, multiround);
    if (want(6)) criterion(6, "cascade", 300, cascade);
    if (want(7)) criterion(7, "fast variant", 300, fast_variant);
    if (want(8)) criterion(8, "cgk property", 60, cgk_property);
    if (want(9)) criterion(9, "unknown-d", 300, unknown_d);
    if (want(10)) criterion(10, "cli over tcp", 180, cli_end_to_end);
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}

#include "drsync/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

namespace drsync::cli {

namespace fs = std::filesystem;

std::optional<HostPort> parse_host_port(const std::string& s) {
    auto colon = s.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == s.size()) return std::nullopt;
    HostPort hp;
    hp.host = s.substr(0, colon);
    try {
        size_t used = 0;
        unsigned long p = std::stoul(s.substr(colon + 1), &used);
        if (used != s.size() - colon - 1 || p == 0 || p > 65535) return std::nullopt;
        hp.port = uint16_t(p);
    } catch (const std::exception&) {
        return std::nullopt;
    }
    return hp;
}

namespace {

bool fixed_d_protocol(const std::string& p) { return p == "reduce" || p == "multiround" || p == "cascade"; }

}  // namespace

std::string validate(const RunConfig& cfg) {
    if (!valid_protocol(cfg.protocol)) return "unknown protocol '" + cfg.protocol + "'";
    if (fixed_d_protocol(cfg.protocol)) {
        if (!cfg.d) return "--d is required for " + cfg.protocol;
        if (*cfg.d < 1) return "--d must be at least 1";
    } else if (cfg.d) {
        return "--d is not allowed for " + cfg.protocol;
    }
    if (!(cfg.delta > 0 && cfg.delta < 1)) return "--delta must be in (0, 1)";
    return {};
}

SyncOptions sync_options(const RunConfig& cfg) {
    SyncOptions o;
    o.protocol = cfg.protocol;
    o.d = cfg.d.value_or(1);
    o.unknown.delta = cfg.delta;
    return o;
}

SharedSeed bind_config(const SharedSeed& session, const RunConfig& cfg) {
    std::ostringstream s;
    s << "cfg/" << cfg.protocol << "/" << cfg.d.value_or(0) << "/" << std::setprecision(17) << cfg.delta;
    return session.derive(s.str());
}

// ---------------------------------------------------------------- mutate

std::optional<MutateMix> parse_mix(const std::string& s) {
    MutateMix m{0, 0, 0, 0, 0};
    std::stringstream in(s);
    std::string item;
    bool any = false;
    while (std::getline(in, item, ',')) {
        auto eq = item.find('=');
        if (eq == std::string::npos) return std::nullopt;
        std::string key = item.substr(0, eq);
        double w;
        try {
            size_t used = 0;
            w = std::stod(item.substr(eq + 1), &used);
            if (used != item.size() - eq - 1) return std::nullopt;
        } catch (const std::exception&) {
            return std::nullopt;
        }
        if (w < 0) return std::nullopt;
        if (key == "sub") m.sub = w;
        else if (key == "ins") m.ins = w;
        else if (key == "del") m.del = w;
        else if (key == "rename") m.rename = w;
        else if (key == "move") m.move = w;
        else return std::nullopt;
        any |= w > 0;
    }
    if (!any) return std::nullopt;
    return m;
}

namespace {

std::string hex(uint8_t c) {
    static const char* digits = "0123456789abcdef";
    return {digits[c >> 4], digits[c & 15]};
}

}  // namespace

Directory mutate(std::mt19937_64& rng, Directory dir, size_t d, const MutateMix& mix, std::vector<ScriptOp>* script) {
    size_t total = 0;
    for (const auto& [p, c] : dir) total += c.size();
    if (d > total) throw std::invalid_argument("d exceeds the total content size");
    if (d == 0) return dir;
    std::discrete_distribution<int> kind({mix.sub, mix.ins, mix.del, mix.rename, mix.move});
    auto note = [&](const char* k, const std::string& path, const std::string& rest) {
        if (script) script->push_back({k, path, std::string(k) + "\t" + path + "\t" + rest});
    };
    // A file picked with probability proportional to its size (or uniformly
    // when `by_size` is false).
    auto pick = [&](bool by_size, size_t min_size) -> std::string {
        std::vector<std::pair<std::string, size_t>> w;
        for (const auto& [p, c] : dir)
            if (c.size() >= min_size) w.push_back({p, by_size ? c.size() : 1});
        size_t sum = 0;
        for (auto& x : w) sum += x.second;
        if (sum == 0) return {};
        size_t r = rng() % sum;
        for (auto& x : w) {
            if (r < x.second) return x.first;
            r -= x.second;
        }
        return w.back().first;
    };
    for (size_t i = 0; i < d; ++i) {
        const int k = kind(rng);
        if (k == 3) {
            std::string p = pick(false, 0);
            std::string q;
            size_t at = 0;
            do {
                q = p;
                at = q.rfind('/') == std::string::npos ? 0 : q.rfind('/') + 1;
                at += rng() % (q.size() - at);
                q[at] = char('a' + rng() % 26);
            } while (q == p || dir.count(q));
            dir[q] = std::move(dir[p]);
            dir.erase(p);
            note("rename", p, q + "\t" + std::to_string(at));
            continue;
        }
        if (k == 4) {
            std::string p = pick(true, 2);
            if (p.empty()) {
                --i;
                continue;
            }
            Bytes& c = dir[p];
            size_t len = 1 + rng() % std::min<size_t>(64, c.size() / 2);
            size_t from = rng() % (c.size() - len + 1);
            Bytes block(c.begin() + long(from), c.begin() + long(from + len));
            c.erase(c.begin() + long(from), c.begin() + long(from + len));
            size_t to = rng() % (c.size() + 1);
            c.insert(c.begin() + long(to), block.begin(), block.end());
            note("move", p, std::to_string(from) + "\t" + std::to_string(len) + "\t" + std::to_string(to));
            continue;
        }
        std::string p = pick(true, k == 1 ? 0 : 1);
        if (p.empty()) p = pick(false, 0);
        Bytes& c = dir[p];
        if (k == 1 || c.empty()) {
            size_t pos = rng() % (c.size() + 1);
            auto b = uint8_t(rng());
            c.insert(c.begin() + long(pos), b);
            note("ins", p, std::to_string(pos) + "\t" + hex(b));
        } else if (k == 0) {
            size_t pos = rng() % c.size();
            uint8_t old = c[pos];
            auto b = uint8_t(old + 1 + rng() % 255);
            c[pos] = b;
            note("sub", p, std::to_string(pos) + "\t" + hex(old) + "\t" + hex(b));
        } else {
            size_t pos = rng() % c.size();
            uint8_t old = c[pos];
            c.erase(c.begin() + long(pos));
            note("del", p, std::to_string(pos) + "\t" + hex(old));
        }
    }
    return dir;
}

// ----------------------------------------------------------------- bench

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream in(v);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

// "2^10..2^14" expands to powers of two; plain numbers otherwise.
std::vector<uint64_t> number_list(const std::string& key, const std::string& v) {
    std::vector<uint64_t> out;
    auto number = [&](const std::string& s) -> uint64_t {
        try {
            if (s.rfind("2^", 0) == 0) {
                unsigned e = unsigned(std::stoul(s.substr(2)));
                if (e > 40) throw std::out_of_range("exponent");
                return uint64_t(1) << e;
            }
            size_t used = 0;
            uint64_t x = std::stoull(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return x;
        } catch (const std::exception&) {
            throw std::invalid_argument("bad number '" + s + "' for " + key);
        }
    };
    for (const auto& item : split_list(v)) {
        auto dots = item.find("..");
        if (dots == std::string::npos) {
            out.push_back(number(item));
            continue;
        }
        uint64_t lo = number(item.substr(0, dots)), hi = number(item.substr(dots + 2));
        bool pow2 = item.rfind("2^", 0) == 0;
        if (lo > hi) throw std::invalid_argument("empty range for " + key);
        for (uint64_t x = lo; x <= hi; x = pow2 ? x * 2 : x + 1) out.push_back(x);
    }
    if (out.empty()) throw std::invalid_argument("empty list for " + key);
    return out;
}

}  // namespace

BenchSpec parse_bench(std::istream& in) {
    BenchSpec spec;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        if (key == "protocol" || key == "protocols") {
            spec.protocols = split_list(value);
            for (const auto& p : spec.protocols)
                if (!valid_protocol(p)) throw std::invalid_argument("unknown protocol '" + p + "'");
        } else if (key == "n") {
            spec.n = number_list(key, value);
        } else if (key == "s") {
            spec.s = number_list(key, value);
        } else if (key == "h") {
            spec.h = number_list(key, value);
        } else if (key == "d") {
            spec.d = number_list(key, value);
        } else if (key == "trials") {
            spec.trials = size_t(number_list(key, value).at(0));
        } else if (key == "seed") {
            spec.seed = number_list(key, value).at(0);
        } else if (key == "delta") {
            spec.delta = std::stod(value);
        } else if (key == "mix") {
            auto m = parse_mix(value);
            if (!m) throw std::invalid_argument("bad mix '" + value + "'");
            spec.mix = *m;
        } else {
            throw std::invalid_argument("unknown key '" + key + "'");
        }
    }
    if (spec.protocols.empty()) throw std::invalid_argument("no protocols");
    return spec;
}

std::vector<BenchRow> run_bench(const BenchSpec& spec) {
    std::vector<BenchRow> rows;
    std::vector<uint64_t> sizes = spec.n.empty() ? std::vector<uint64_t>{0} : spec.n;
    uint64_t combo = 0;
    for (const auto& protocol : spec.protocols)
        for (uint64_t n : sizes)
            for (uint64_t s : spec.s)
                for (uint64_t h0 : spec.h)
                    for (uint64_t d : spec.d) {
                        ++combo;
                        const uint64_t h = n ? std::max<uint64_t>(1, n / std::max<uint64_t>(s, 1)) : h0;
                        for (size_t t = 0; t < spec.trials; ++t) {
                            std::seed_seq sq{spec.seed, combo, uint64_t(t)};
                            std::mt19937_64 rng(sq);
                            Directory bob = corpus::random_directory(rng, s, std::max<uint64_t>(1, h / 2), h);
                            Directory alice = mutate(rng, bob, d, spec.mix);
                            RunConfig cfg;
                            cfg.protocol = protocol;
                            if (fixed_d_protocol(protocol)) cfg.d = uint32_t(std::max<uint64_t>(1, d));
                            cfg.delta = spec.delta;
                            const DocSet a = canonical_set(to_documents(alice)), b = canonical_set(to_documents(bob));
                            auto seed = SharedSeed::from_u64(rng());
                            auto t0 = std::chrono::steady_clock::now();
                            SyncRun r = reconcile(a, b, sync_options(cfg), seed);
                            double ms =
                                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
                            uint64_t total = canonical_concat(b, seed).size();
                            rows.push_back({protocol, total, s, h, d, r.transcript.total_bits(), r.transcript.rounds(),
                                            ms, r.out.ok() && *r.out == a});
                        }
                    }
    return rows;
}

void write_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
    out << kCsvHeader << "\n";
    for (const auto& r : rows)
        out << r.protocol << "," << r.n << "," << r.s << "," << r.h << "," << r.d << "," << r.bits << "," << r.rounds
            << "," << std::fixed << std::setprecision(2) << r.ms << std::defaultfloat << "," << (r.success ? 1 : 0)
            << "\n";
}

// ------------------------------------------------------------------ main

namespace {

std::map<std::string, std::string> read_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key = value");
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        kv[trim(line.substr(0, eq))] = value;
    }
    return kv;
}

struct SyncArgs {
    std::string source, dest, listen, connect;
    RunConfig cfg;
    uint32_t d = 0;
    uint64_t seed = 0;
};

DocSet load(const std::string& dir, bool create) {
    if (create && !fs::exists(dir)) fs::create_directories(dir);
    return canonical_set(to_documents(read_directory(dir)));
}

void report(const char* role, const RunConfig& cfg, const Transcript& t, double ms, const std::string& status,
            const SyncReport* rep = nullptr) {
    std::cout << "role=" << role << " protocol=" << cfg.protocol << " bits=" << t.total_bits()
              << " rounds=" << t.rounds() << " ms=" << std::fixed << std::setprecision(1) << ms << std::defaultfloat;
    if (rep && rep->attempts > 1) std::cout << " attempts=" << rep->attempts << " final_d=" << rep->final_d;
    std::cout << " status=" << status << std::endl;
}

int run_sync(const SyncArgs& a) {
    if (std::string err = validate(a.cfg); !err.empty()) {
        std::cerr << "drsync: " << err << "\n";
        return kUsage;
    }
    const bool local = !a.source.empty() && !a.dest.empty();
    if (!local && a.source.empty() == a.dest.empty()) {
        std::cerr << "drsync: give --source or --dest (or both for a local run)\n";
        return kUsage;
    }
    if (local != (a.listen.empty() && a.connect.empty()) || (!a.listen.empty() && !a.connect.empty())) {
        std::cerr << "drsync: a networked run needs exactly one of --listen and --connect\n";
        return kUsage;
    }
    std::optional<HostPort> hp;
    if (!local) {
        hp = parse_host_port(a.listen.empty() ? a.connect : a.listen);
        if (!hp) {
            std::cerr << "drsync: expected host:port\n";
            return kUsage;
        }
    }
    const SyncOptions opt = sync_options(a.cfg);
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    };
    try {
        if (local) {
            const DocSet alice = load(a.source, false), bob = load(a.dest, true);
            auto seed = a.cfg.seed ? SharedSeed::from_u64(*a.cfg.seed) : SharedSeed::random();
            SyncRun r = reconcile(alice, bob, opt, bind_config(seed, a.cfg));
            if (!r.out) {
                report("local", a.cfg, r.transcript, elapsed(), "failed", &r.report);
                std::cerr << "drsync: " << r.out.error() << "\n";
                return kProtocolFailure;
            }
            write_directory(a.dest, from_documents(*r.out));
            report("local", a.cfg, r.transcript, elapsed(), "ok", &r.report);
            return kOk;
        }
        const bool is_source = !a.source.empty();
        const Party self = is_source ? Party::Alice : Party::Bob;
        const DocSet mine = is_source ? load(a.source, false) : load(a.dest, true);
        std::unique_ptr<Endpoint> ep;
        if (!a.listen.empty())
            ep = SocketEndpoint::listen(hp->host, hp->port, self);
        else
            ep = SocketEndpoint::connect(hp->host, hp->port, self);
        std::optional<SharedSeed> share;
        if (a.cfg.seed) share = SharedSeed::from_u64(*a.cfg.seed).derive(is_source ? "share/a" : "share/b");
        const SharedSeed seed = bind_config(handshake(*ep, share), a.cfg);
        if (is_source) {
            sync_source(*ep, mine, opt, seed);
            ep->close();
            report("source", a.cfg, ep->transcript(), elapsed(), "sent");
            return kOk;
        }
        SyncReport rep;
        auto out = sync_destination(*ep, mine, opt, seed, &rep);
        ep->close();
        if (!out) {
            report("destination", a.cfg, ep->transcript(), elapsed(), "failed", &rep);
            std::cerr << "drsync: " << out.error() << "\n";
            return kProtocolFailure;
        }
        write_directory(a.dest, from_documents(*out));
        report("destination", a.cfg, ep->transcript(), elapsed(), "ok", &rep);
        return kOk;
    } catch (const ChannelError& e) {
        std::cerr << "drsync: channel: " << e.what() << "\n";
        return kIoError;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "drsync: " << e.what() << "\n";
        return kIoError;
    } catch (const std::runtime_error& e) {
        // read_directory and friends signal I/O problems this way; protocol
        // code reports failure through Expected
        std::cerr << "drsync: " << e.what() << "\n";
        return kIoError;
    }
}

struct MutateArgs {
    std::string dir, out, script, mix = "sub=1,ins=1,del=1";
    size_t d = 0;
    uint64_t seed = 1;
};

int run_mutate(const MutateArgs& a) {
    auto mix = parse_mix(a.mix);
    if (!mix) {
        std::cerr << "drsync: bad --mix '" << a.mix << "'\n";
        return kUsage;
    }
    try {
        Directory dir = read_directory(a.dir);
        std::mt19937_64 rng(a.seed);
        std::vector<ScriptOp> script;
        Directory out;
        try {
            out = mutate(rng, dir, a.d, *mix, &script);
        } catch (const std::invalid_argument& e) {
            std::cerr << "drsync: " << e.what() << "\n";
            return kUsage;
        }
        write_directory(a.out.empty() ? a.dir : a.out, out);
        std::ofstream file;
        if (!a.script.empty()) {
            file.open(a.script);
            if (!file) throw std::runtime_error("cannot write " + a.script);
        }
        std::ostream& s = a.script.empty() ? std::cout : file;
        for (const auto& op : script) s << op.line << "\n";
        return kOk;
    } catch (const std::exception& e) {
        std::cerr << "drsync: " << e.what() << "\n";
        return kIoError;
    }
}

int run_bench_cmd(const std::string& spec_path, const std::string& out_path) {
    BenchSpec spec;
    try {
        std::ifstream in(spec_path);
        if (!in) {
            std::cerr << "drsync: cannot read " << spec_path << "\n";
            return kIoError;
        }
        spec = parse_bench(in);
    } catch (const std::invalid_argument& e) {
        std::cerr << "drsync: " << spec_path << ": " << e.what() << "\n";
        return kUsage;
    }
    auto rows = run_bench(spec);
    if (out_path.empty()) {
        write_csv(std::cout, rows);
    } else {
        std::ofstream out(out_path);
        if (!out) {
            std::cerr << "drsync: cannot write " << out_path << "\n";
            return kIoError;
        }
        write_csv(out, rows);
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Directory reconciliation over a two-party channel"};
    app.require_subcommand(1);

    SyncArgs sa;
    auto* sync = app.add_subcommand("sync", "Synchronize a destination directory with a source");
    std::string config;
    sync->add_option("--config", config, "key = value file; flags override it");
    auto* source_opt = sync->add_option("--source", sa.source, "Directory to send");
    auto* dest_opt = sync->add_option("--dest", sa.dest, "Directory to update");
    auto* listen_opt = sync->add_option("--listen", sa.listen, "Wait for the peer on host:port");
    auto* connect_opt = sync->add_option("--connect", sa.connect, "Connect to the peer at host:port");
    auto* protocol_opt = sync->add_option("--protocol", sa.cfg.protocol,
                     "reduce, multiround, cascade, unknown-d, doubling:reduce or doubling:cascade")
        ->capture_default_str();
    auto* d_opt = sync->add_option("--d", sa.d, "Edit budget for fixed-budget protocols");
    auto* delta_opt = sync->add_option("--delta", sa.cfg.delta, "Failure target for unknown-d")->capture_default_str();
    auto* seed_opt = sync->add_option("--seed", sa.seed, "Fixed seed share (both ends must agree)");

    MutateArgs ma;
    auto* mut = app.add_subcommand("mutate", "Apply random edits and print the edit script");
    mut->add_option("dir", ma.dir, "Directory to mutate")->required();
    mut->add_option("--d", ma.d, "Number of operations")->required();
    mut->add_option("--mix", ma.mix, "Operation weights, e.g. sub=1,ins=1,del=1,rename=1,move=0")
        ->capture_default_str();
    mut->add_option("--seed", ma.seed)->capture_default_str();
    mut->add_option("--out", ma.out, "Write the result here instead of in place");
    mut->add_option("--script", ma.script, "Write the edit script here instead of stdout");

    std::string bench_spec, bench_out;
    auto* bench = app.add_subcommand("bench", "Run a parameter grid and write CSV");
    bench->add_option("--bench", bench_spec, "Grid specification (key = value lines)")->required();
    bench->add_option("--out", bench_out, "CSV path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }
    if (*sync) {
        if (!config.empty()) {
            std::map<std::string, std::string> kv;
            try {
                kv = read_config(config);
            } catch (const std::exception& e) {
                std::cerr << "drsync: " << e.what() << "\n";
                return kUsage;
            }
            // Flags given on the command line win.
            std::vector<std::pair<CLI::Option*, std::string>> opts{
                {source_opt, "source"}, {dest_opt, "dest"},     {listen_opt, "listen"}, {connect_opt, "connect"},
                {protocol_opt, "protocol"}, {d_opt, "d"},       {delta_opt, "delta"},   {seed_opt, "seed"}};
            for (auto& [opt, key] : opts) {
                auto it = kv.find(key);
                if (it == kv.end() || opt->count()) continue;
                try {
                    opt->add_result(it->second);
                    opt->run_callback();
                } catch (const CLI::Error& e) {
                    std::cerr << "drsync: " << config << ": " << key << ": " << e.what() << "\n";
                    return kUsage;
                }
                kv.erase(it);
            }
            for (const auto& [key, value] : kv)
                if (std::none_of(opts.begin(), opts.end(), [&](const auto& o) { return o.second == key; })) {
                    std::cerr << "drsync: " << config << ": unknown key '" << key << "'\n";
                    return kUsage;
                }
        }
        if (d_opt->count()) sa.cfg.d = sa.d;
        if (seed_opt->count()) sa.cfg.seed = sa.seed;
        return run_sync(sa);
    }
    if (*mut) return run_mutate(ma);
    return run_bench_cmd(bench_spec, bench_out);
}

}  // namespace drsync::cli

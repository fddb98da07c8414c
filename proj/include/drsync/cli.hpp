#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "drsync/corpus.hpp"
#include "drsync/dirsync.hpp"

namespace drsync::cli {

// Exit statuses.
constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kProtocolFailure = 2;
constexpr int kIoError = 3;

struct HostPort {
    std::string host;
    uint16_t port = 0;
};
std::optional<HostPort> parse_host_port(const std::string& s);

struct RunConfig {
    std::string protocol = "reduce";
    std::optional<uint32_t> d;
    std::optional<uint64_t> seed;
    double delta = 0.05;
};

// Empty when the configuration is usable.
std::string validate(const RunConfig& cfg);
SyncOptions sync_options(const RunConfig& cfg);
// Both ends fold the protocol and d into the session seed, so mismatched
// configurations fail verification instead of misreading each other.
SharedSeed bind_config(const SharedSeed& session, const RunConfig& cfg);

// ---------------------------------------------------------------- mutate

struct MutateMix {
    double sub = 1, ins = 1, del = 1, rename = 0, move = 0;
};
// "sub=1,ins=0.5,rename=1"; unnamed kinds get weight 0.
std::optional<MutateMix> parse_mix(const std::string& s);

struct ScriptOp {
    std::string kind;  // sub, ins, del, rename, move
    std::string path;
    std::string line;  // tab-separated script line
};

// Applies d operations.  Every character operation (sub, ins, del, and each
// rename, which changes one character of the path) counts once toward the
// per-file edit distance; a move is a block move.  Throws
// std::invalid_argument when d exceeds the total content size.
Directory mutate(std::mt19937_64& rng, Directory dir, size_t d, const MutateMix& mix,
                 std::vector<ScriptOp>* script = nullptr);

// ----------------------------------------------------------------- bench

struct BenchSpec {
    std::vector<std::string> protocols{"reduce"};
    std::vector<uint64_t> n;  // total size; when set, files get n/s bytes
    std::vector<uint64_t> s{16}, h{256}, d{4};
    size_t trials = 3;
    uint64_t seed = 1;
    double delta = 0.05;
    MutateMix mix{1, 1, 1, 0.5, 0};
};
// key = value lines; lists are comma separated; '#' starts a comment.
BenchSpec parse_bench(std::istream& in);

struct BenchRow {
    std::string protocol;
    uint64_t n, s, h, d;
    size_t bits, rounds;
    double ms;
    bool success;
};
std::vector<BenchRow> run_bench(const BenchSpec& spec);
void write_csv(std::ostream& out, const std::vector<BenchRow>& rows);
constexpr const char* kCsvHeader = "protocol,n,s,h,d,bits,rounds,ms,success";

int main(int argc, char** argv);

}  // namespace drsync::cli

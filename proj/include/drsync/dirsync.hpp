#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "drsync/bits.hpp"
#include "drsync/iblt.hpp"
#include "drsync/randcore.hpp"
#include "drsync/session.hpp"

namespace drsync {

// A directory as a set of documents (see encode_document); kept sorted and
// free of duplicates.
using DocSet = std::vector<Bytes>;

DocSet canonical_set(std::vector<Bytes> docs);

HashFn doc_id_fn(const SharedSeed& seed);
// Order-independent digest of a set, used to verify every reconstruction.
uint64_t set_hash(const DocSet& docs, const SharedSeed& seed);

constexpr size_t kDelimiterBytes = 16;
Bytes concat_delimiter(const SharedSeed& seed);

// Documents sorted by id, each followed by the seed's delimiter.
Bytes canonical_concat(const DocSet& docs, const SharedSeed& seed);
// nullopt when the pieces do not form a set (unterminated tail or repeats).
std::optional<DocSet> split_concat(ByteView data, const SharedSeed& seed);

// ------------------------------------------------------------- reduction

// One message: set hash, then an IMS sketch of the concatenation with k = 2d.
Bytes reduce_message(const DocSet& alice, uint32_t d, const SharedSeed& seed);
Expected<DocSet> reduce_apply(ByteView msg, const DocSet& bob, const SharedSeed& seed);

// Multi-round variant over the concatenation with k = 2d; Alice closes with
// her set hash.
void multiround_reconcile_alice(Endpoint& ep, const DocSet& alice, uint32_t d, const SharedSeed& seed);
Expected<DocSet> multiround_reconcile_bob(Endpoint& ep, const DocSet& bob, uint32_t d, const SharedSeed& seed);

// --------------------------------------------------------------- cascade

struct CascadeLayout {
    uint32_t d = 0;
    uint64_t h = 0;       // longest document
    unsigned levels = 0;  // level i carries exchange messages for k = 2^i
    bool star = false;    // literal table T*, present when h <= d

    static CascadeLayout make(uint32_t d, uint64_t h);
    uint32_t k(unsigned level) const { return uint32_t(1) << level; }
    uint32_t cells(unsigned level) const;
    uint32_t star_cells() const;
};

struct CascadeOptions {
    uint8_t replicas = 1;  // independent exchange messages per document and level
    // Send a document itself when that is shorter than its sketches.
    bool literal_when_shorter = true;
};

constexpr uint8_t kCascadeHashes = 3;  // cells per item in the cascade tables

struct CascadeMessage {
    CascadeLayout layout;
    uint64_t set_hash = 0;
    CascadeOptions options;
    std::vector<Iblt> tables;  // levels 1..t
    std::optional<Iblt> star;

    Bytes serialize() const;
    static CascadeMessage deserialize(ByteView in, const SharedSeed& seed);
};

// Level-i document encoding: replica count, then per replica a u32 length
// and an IMS sketch for k = 2^i; or a 0 byte, u32 length and the document.
Bytes cascade_encoding(ByteView doc, unsigned level, const CascadeOptions& opt, const SharedSeed& seed);

CascadeMessage cascade_encode(const DocSet& alice, uint32_t d, const SharedSeed& seed, CascadeOptions opt = {});

struct CascadeAudit {
    struct Recovered {
        Bytes doc;
        unsigned level;  // 0 for T*
        Bytes from;      // Bob's document it was decoded against (empty for literals)
    };
    std::vector<Recovered> recovered;
    std::vector<size_t> extracted;  // per level: Alice encodings left after cancellation
    std::vector<bool> peeled;
};

Expected<DocSet> cascade_decode(const CascadeMessage& msg, const DocSet& bob, const SharedSeed& seed,
                                CascadeAudit* audit = nullptr);

// ------------------------------------------------------------- unknown d

struct UnknownDOptions {
    double delta = 0.05;
    uint8_t cgk_strata_reps = 1;
};

struct UnknownDStats {
    uint64_t estimate = 0;  // scaled difference estimate d-hat
    size_t differing_alice = 0, differing_bob = 0;
    size_t literal = 0, sketched = 0;
    unsigned cgk_copies = 0;
};

// Four messages: Bob, Alice, Bob, Alice.
void unknown_d_alice(Endpoint& ep, const DocSet& alice, const SharedSeed& seed, UnknownDOptions opt = {},
                     UnknownDStats* stats = nullptr);
Expected<DocSet> unknown_d_bob(Endpoint& ep, const DocSet& bob, const SharedSeed& seed, UnknownDOptions opt = {},
                               UnknownDStats* stats = nullptr);

// ---------------------------------------------------------- entry points

enum class BaseProtocol { Reduce, Cascade };

struct SyncOptions {
    std::string protocol = "reduce";  // reduce, multiround, cascade, unknown-d, doubling:<base>
    uint32_t d = 1;
    UnknownDOptions unknown;
    CascadeOptions cascade;
};

struct SyncReport {
    uint32_t final_d = 0;
    unsigned attempts = 0;
    std::string error;
};

bool valid_protocol(const std::string& name);

// Alice (the source) and Bob (the destination) halves of every protocol.
void sync_source(Endpoint& ep, const DocSet& alice, const SyncOptions& opt, const SharedSeed& seed);
Expected<DocSet> sync_destination(Endpoint& ep, const DocSet& bob, const SyncOptions& opt, const SharedSeed& seed,
                                  SyncReport* report = nullptr);

struct SyncRun {
    Expected<DocSet> out = Expected<DocSet>::failure("not run");
    SyncReport report;
    Transcript transcript;  // Bob's view
};

// Both halves in memory.
SyncRun reconcile(const DocSet& alice, const DocSet& bob, const SyncOptions& opt, const SharedSeed& seed);

}  // namespace drsync

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "drsync/bits.hpp"
#include "drsync/randcore.hpp"
#include "drsync/session.hpp"

namespace drsync {

// Distinct substrings of b of length <= max_depth, one node each.  Node 0 is
// the root (the empty string); a node's parent is its prefix one symbol shorter.
struct SubstringTree {
    struct Node {
        uint32_t depth;
        uint32_t pos;  // any start position of the substring in b
        int32_t parent;
    };
    std::vector<Node> nodes;
    std::vector<std::vector<uint32_t>> children;
    std::vector<std::vector<uint32_t>> by_depth;
    uint32_t max_depth = 0;
};

SubstringTree build_tree(ByteView b, uint32_t maxdepth);

// The same tree with every run of single-child nodes stored as one chain:
// chain c owns the nodes b[pos, pos+d) for lo < d <= hi.
class ChainIndex {
public:
    struct Chain {
        uint32_t pos, lo, hi;
        int32_t parent;  // chain owning depth lo, or -1 for the root
    };

    ChainIndex() = default;
    ChainIndex(ByteView b, uint32_t maxdepth);

    const std::vector<Chain>& chains() const { return chains_; }
    // Children of chain c sorted by attach depth (their lo).
    const uint32_t* children_begin(size_t c) const { return kids_.data() + kid_off_[c]; }
    const uint32_t* children_end(size_t c) const { return kids_.data() + kid_off_[c + 1]; }
    size_t child_offset(size_t c) const { return kid_off_[c]; }
    uint32_t max_depth() const { return maxdepth_; }
    uint32_t height() const { return height_; }
    size_t node_count() const { return nodes_; }  // excluding the root

private:
    std::vector<Chain> chains_;
    std::vector<uint32_t> kids_;
    std::vector<size_t> kid_off_;
    uint32_t maxdepth_ = 0, height_ = 0;
    size_t nodes_ = 0;
};

struct NodeRef {
    uint32_t depth = 0;
    uint32_t pos = 0;
    int64_t id = -1;  // backend handle; -1 is the root
    bool operator==(const NodeRef&) const = default;
};

// Weighted tree as seen by the party holding b.  Weights start at 1; a query
// at depth r multiplies T_u (u in D_r) by 2 on a hash match and by 1/4 on a
// mismatch, the rest of the tree by 1 (the weight rule with p = 2/3 divided
// through by the T_{-r} factor).
class MwpTree {
public:
    virtual ~MwpTree() = default;

    virtual uint32_t height() const = 0;
    // Recomputes aggregates; call after updates and before the queries below.
    virtual void refresh() = 0;
    virtual long double total() const = 0;
    // The node with w(u) > w(T)/2, if any.
    virtual std::optional<NodeRef> heavy() const = 0;
    virtual void zero(const NodeRef& u) = 0;
    virtual long double above(uint32_t r) const = 0;         // w(T_{-r})
    virtual long double max_subtree(uint32_t r) const = 0;   // max over D_r of w(T_u)
    // argmin over the sorted depth list, ties to the smallest depth.
    virtual uint32_t argmin(const std::vector<uint32_t>& depths) const;
    // match(pos) says whether the depth-r node b[pos, pos+r) matched.
    virtual void update(uint32_t r, const std::function<bool(uint32_t pos)>& match) = 0;

    bool balanced(uint32_t r) const;
};

class ExplicitTree : public MwpTree {
public:
    // parent[0] == -1 is the root; every other parent index is smaller than
    // the child's and has strictly smaller depth.
    ExplicitTree(const std::vector<int32_t>& parent, const std::vector<uint32_t>& depth,
                 const std::vector<uint32_t>& pos = {}, const std::vector<long double>& weight = {});
    static ExplicitTree from(const SubstringTree& t);

    size_t size() const { return depth_.size(); }
    long double weight(size_t v) const { return w_[pre_[v]]; }
    long double subtree(size_t v) const { return sub_[pre_[v]]; }
    int32_t parent(size_t v) const { return parent_in_[v]; }
    uint32_t depth(size_t v) const { return depth_in_[v]; }
    NodeRef ref(size_t v) const;
    // Weight of the component containing v after partitioning at depth r.
    long double component(size_t v, uint32_t r) const;

    uint32_t height() const override { return height_; }
    void refresh() override;
    long double total() const override { return total_; }
    std::optional<NodeRef> heavy() const override;
    void zero(const NodeRef& u) override;
    long double above(uint32_t r) const override;
    long double max_subtree(uint32_t r) const override;
    void update(uint32_t r, const std::function<bool(uint32_t pos)>& match) override;

private:
    // All arrays below are indexed in preorder.
    std::vector<int32_t> parent_in_;
    std::vector<uint32_t> depth_in_;
    std::vector<uint32_t> pre_, id_;  // input id -> preorder, preorder -> input id
    std::vector<int32_t> par_;
    std::vector<uint32_t> depth_, pos_, end_;
    std::vector<long double> w_, sub_;
    std::vector<std::vector<uint32_t>> at_depth_;
    std::vector<long double> depth_sum_, depth_max_;
    long double total_ = 0;
    uint32_t height_ = 0;
};

// Chain-compressed backend for large substring trees.  Parts of the tree
// whose subtree weight falls below prune * w(T) are dropped for good.
class ChainTree : public MwpTree {
public:
    explicit ChainTree(const ChainIndex& ix, long double prune = 0x1p-32L);

    uint32_t height() const override { return ix_->height(); }
    void refresh() override;
    long double total() const override { return total_; }
    std::optional<NodeRef> heavy() const override { return heavy_; }
    void zero(const NodeRef& u) override;
    long double above(uint32_t r) const override;
    long double max_subtree(uint32_t r) const override;
    uint32_t argmin(const std::vector<uint32_t>& depths) const override;
    void update(uint32_t r, const std::function<bool(uint32_t pos)>& match) override;

    size_t live_chains() const { return live_.size(); }

private:
    struct Piece {
        uint32_t start;
        int32_t exp;
    };
    struct State {
        uint32_t end;  // deepest live depth; == lo when the chain is dead
        std::vector<Piece> pieces;
        std::vector<uint32_t> zeroed;
        // Cached aggregates, rebuilt when the chain is dirty.
        bool dirty = true;
        long double own = 0;
        std::vector<long double> suf;  // weight of pieces i.. of this chain
        std::vector<std::pair<uint32_t, long double>> diff;  // per-depth weight changes
        int32_t best_exp = 0;
        uint32_t best_cnt = 0, best_depth = 0;
    };
    struct Bucket {
        size_t nodes = 0;
        uint64_t ids = 0;  // xor of (chain + 1); names the chain when nodes == 1
    };
    uint32_t piece_end(const State& s, size_t i) const;
    uint32_t zeroed_in(const State& s, uint32_t from, uint32_t to) const;
    void rebuild(State& s);
    void full_refresh();
    void account(uint32_t c, int sign);
    void mark(uint32_t c);
    void bump(uint32_t c, long double delta);
    bool pop_tail(uint32_t c, long double thr);
    void finish_refresh();

    const ChainIndex* ix_;
    long double prune_;
    std::vector<State> st_;
    std::vector<uint32_t> live_, by_mass_;
    bool root_zero_ = false;

    long double total_ = 0;
    std::optional<NodeRef> heavy_;
    std::vector<long double> above_, sub_, kid_suf_;
    std::vector<long double> hist_;  // per-depth weight changes summed over live chains
    std::map<int32_t, Bucket> best_;
    std::vector<uint32_t> kid_index_, dirty_;
    size_t since_full_ = 0;
};

struct QueryChoice {
    uint32_t rho;
    bool balanced;
};

// Throws std::logic_error if some node has more than half the weight.
QueryChoice select_query(MwpTree& t, const std::vector<uint32_t>& depths);

// Ordered list of non-empty depth lists plus the cursor q_1 (0-based).
struct Partition {
    std::vector<std::vector<uint32_t>> parts;
    size_t cursor = 0;

    static Partition range(uint32_t first, uint32_t last);
    static Partition singletons(std::vector<uint32_t> depths);

    size_t find(uint32_t depth) const;  // index of the part holding depth, or npos
    std::vector<uint32_t> depths() const;
    // The depth queried when part q is chosen: its ceil(|I_q|/2)-th element.
    uint32_t query_depth(size_t q) const;
    // Splits part q just before its query depth; a two-element part becomes
    // two singletons.
    void split(size_t q);
    uint64_t digest() const;
    bool operator==(const Partition&) const = default;
};

struct MwpPhase {
    uint8_t eta = 0;
    uint32_t depth[2] = {0, 0};
    bool added = false;
};

struct MwpOutcome {
    std::vector<uint32_t> depths;  // I' as a sorted depth list
    std::vector<NodeRef> m;        // Bob only
    std::vector<MwpPhase> phases;
    std::vector<uint64_t> partition_trace;  // digest after each phase, when traced
};

// Ground-truth instrumentation for runs over an ExplicitTree.
struct MwpAudit {
    std::optional<size_t> target;  // node id of g
    bool trace_partition = false;

    size_t rho_checked = 0, rho_unbalanced = 0;
    size_t informative = 0, trichotomy_failures = 0, unqueried_failures = 0;
    bool target_in_m = false;
    std::vector<double> phi;  // before each phase, then final
};

// 2-bit per-phase hashes of a 61-bit substring fingerprint.
struct MwpHashing {
    SharedSeed seed;
    std::string label;
    HashFn phase_fn(size_t i) const;
};

// Alice's view of her string: fingerprints of a[begin, begin+l).
struct PrefixSource {
    const SubstringHasher* fp = nullptr;
    size_t begin = 0, len = 0;
    uint64_t of(uint32_t l) const;
};

MwpOutcome mwp_alice(Endpoint& ep, const PrefixSource& a, Partition I, size_t t, const MwpHashing& h,
                     bool trace = false);
MwpOutcome mwp_bob(Endpoint& ep, MwpTree& tree, const SubstringHasher& fb, Partition I, size_t t,
                   const MwpHashing& h, MwpAudit* audit = nullptr);

struct PrefixConstants {
    double delta;
    size_t t1, t2;
    unsigned final_bits;
};
PrefixConstants prefix_constants(uint64_t n);

struct PrefixResult {
    uint32_t length = 0;
    bool confirmed = false;
    uint32_t pos = 0;  // Bob: start of the matched substring in b
};

PrefixResult find_prefix_alice(Endpoint& ep, const PrefixSource& a, uint32_t maxdepth, uint64_t n,
                               const SharedSeed& seed, const std::string& label);
PrefixResult find_prefix_bob(Endpoint& ep, const ChainIndex& ix, const SubstringHasher& fb, uint64_t n,
                             const SharedSeed& seed, const std::string& label);

HashFn prefix_fingerprint(const SharedSeed& seed);

struct PrefixRun {
    PrefixResult alice, bob;
    Transcript ta, tb;
};
// Runs both sides in memory with maxdepth ceil(|a|/kappa).
PrefixRun find_prefix(ByteView a, ByteView b, uint32_t kappa, const SharedSeed& seed);

struct MultiroundOptions {
    size_t max_phases = 0;  // 0: 10k
    std::optional<size_t> corrupt_hash_at;  // fault injection on Alice's match hash
};

struct MultiroundStats {
    size_t phases = 0, matched = 0, raw = 0, rejected = 0;
};

void multiround_alice(Endpoint& ep, ByteView a, uint32_t k, const SharedSeed& seed,
                      const MultiroundOptions& opt = {}, MultiroundStats* stats = nullptr);
Expected<Bytes> multiround_bob(Endpoint& ep, ByteView b, uint32_t k, const SharedSeed& seed,
                               const MultiroundOptions& opt = {}, MultiroundStats* stats = nullptr);

struct MultiroundRun {
    Expected<Bytes> out = Expected<Bytes>::failure("not run");
    MultiroundStats stats;
    size_t bits = 0, rounds = 0;
};
MultiroundRun multiround_exchange(ByteView a, ByteView b, uint32_t k, const SharedSeed& seed,
                                  const MultiroundOptions& opt = {});

}  // namespace drsync

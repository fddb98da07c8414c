#include <algorithm>
#include <climits>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "drsync/mwsearch.hpp"

namespace drsync {

ChainIndex::ChainIndex(ByteView b, uint32_t maxdepth) : maxdepth_(maxdepth) {
    if (maxdepth < 1) throw std::invalid_argument("substring tree needs maxdepth >= 1");
    const size_t n = b.size();
    auto len = [&](uint32_t i) { return uint32_t(std::min<size_t>(maxdepth, n - i)); };
    std::vector<uint32_t> sa(n);
    std::iota(sa.begin(), sa.end(), 0u);
    std::sort(sa.begin(), sa.end(), [&](uint32_t x, uint32_t y) {
        uint32_t lx = len(x), ly = len(y);
        int c = std::memcmp(b.data() + x, b.data() + y, std::min(lx, ly));
        return c != 0 ? c < 0 : lx < ly;
    });

    // The owner of a prefix is the first suffix in sorted order that has it,
    // so a chain's parent is the previous suffix with a smaller lcp.
    std::vector<uint32_t> lcp(n, 0);
    std::vector<int32_t> chain_of(n, -1);
    std::vector<size_t> stack;
    for (size_t k = 0; k < n; ++k) {
        uint32_t x = sa[k];
        if (k > 0) {
            uint32_t y = sa[k - 1], m = std::min(len(x), len(y)), l = 0;
            while (l < m && b[x + l] == b[y + l]) ++l;
            lcp[k] = l;
        }
        uint32_t lo = lcp[k], hi = len(x);
        while (!stack.empty() && lcp[stack.back()] >= lo) stack.pop_back();
        if (hi > lo) {
            int32_t parent = lo == 0 ? -1 : chain_of[stack.back()];
            chain_of[k] = int32_t(chains_.size());
            chains_.push_back({x, lo, hi, parent});
            height_ = std::max(height_, hi);
            nodes_ += hi - lo;
        }
        stack.push_back(k);
    }

    kid_off_.assign(chains_.size() + 1, 0);
    for (const auto& c : chains_)
        if (c.parent >= 0) ++kid_off_[size_t(c.parent) + 1];
    for (size_t c = 0; c < chains_.size(); ++c) kid_off_[c + 1] += kid_off_[c];
    kids_.resize(kid_off_.back());
    std::vector<size_t> fill(kid_off_.begin(), kid_off_.end() - 1);
    for (size_t c = 0; c < chains_.size(); ++c)
        if (chains_[c].parent >= 0) kids_[fill[size_t(chains_[c].parent)]++] = uint32_t(c);
    for (size_t c = 0; c < chains_.size(); ++c)
        std::stable_sort(kids_.begin() + long(kid_off_[c]), kids_.begin() + long(kid_off_[c + 1]),
                         [&](uint32_t x, uint32_t y) { return chains_[x].lo < chains_[y].lo; });
}

SubstringTree build_tree(ByteView b, uint32_t maxdepth) {
    ChainIndex ix(b, maxdepth);
    SubstringTree t;
    t.max_depth = maxdepth;
    t.nodes.push_back({0, 0, -1});
    std::vector<uint32_t> base(ix.chains().size());
    for (size_t c = 0; c < ix.chains().size(); ++c) {
        const auto& ch = ix.chains()[c];
        base[c] = uint32_t(t.nodes.size());
        int32_t up = 0;
        if (ch.parent >= 0) {
            const auto& pc = ix.chains()[size_t(ch.parent)];
            up = int32_t(base[size_t(ch.parent)] + (ch.lo - pc.lo - 1));
        }
        for (uint32_t d = ch.lo + 1; d <= ch.hi; ++d) {
            t.nodes.push_back({d, ch.pos, up});
            up = int32_t(t.nodes.size() - 1);
        }
    }
    t.children.resize(t.nodes.size());
    t.by_depth.resize(ix.height() + 1);
    for (uint32_t v = 0; v < t.nodes.size(); ++v) {
        if (t.nodes[v].parent >= 0) t.children[size_t(t.nodes[v].parent)].push_back(v);
        t.by_depth[t.nodes[v].depth].push_back(v);
    }
    return t;
}

uint32_t MwpTree::argmin(const std::vector<uint32_t>& depths) const {
    if (depths.empty()) throw std::invalid_argument("argmin over no depths");
    uint32_t best = depths[0];
    long double bv = std::max(above(best), max_subtree(best));
    for (uint32_t r : depths) {
        long double v = std::max(above(r), max_subtree(r));
        if (v < bv) {
            bv = v;
            best = r;
        }
    }
    return best;
}

bool MwpTree::balanced(uint32_t r) const {
    return std::max(above(r), max_subtree(r)) <= 0.75L * total();
}

QueryChoice select_query(MwpTree& t, const std::vector<uint32_t>& depths) {
    if (t.heavy()) throw std::logic_error("select_query: a node holds more than half the weight");
    uint32_t rho = t.argmin(depths);
    return {rho, t.balanced(rho)};
}

// ---------------------------------------------------------------------------

ExplicitTree::ExplicitTree(const std::vector<int32_t>& parent, const std::vector<uint32_t>& depth,
                           const std::vector<uint32_t>& pos, const std::vector<long double>& weight)
    : parent_in_(parent), depth_in_(depth) {
    const size_t n = parent.size();
    if (n == 0 || depth.size() != n || parent[0] != -1) throw std::invalid_argument("explicit tree: bad root");
    if ((!pos.empty() && pos.size() != n) || (!weight.empty() && weight.size() != n))
        throw std::invalid_argument("explicit tree: size mismatch");
    std::vector<std::vector<uint32_t>> kids(n);
    for (size_t v = 1; v < n; ++v) {
        if (parent[v] < 0 || size_t(parent[v]) >= v || depth[size_t(parent[v])] >= depth[v])
            throw std::invalid_argument("explicit tree: bad parent");
        kids[size_t(parent[v])].push_back(uint32_t(v));
    }
    pre_.assign(n, 0);
    std::vector<uint32_t> stack{0};
    while (!stack.empty()) {
        uint32_t v = stack.back();
        stack.pop_back();
        pre_[v] = uint32_t(id_.size());
        id_.push_back(v);
        for (auto it = kids[v].rbegin(); it != kids[v].rend(); ++it) stack.push_back(*it);
    }
    par_.resize(n);
    depth_.resize(n);
    pos_.resize(n);
    w_.resize(n);
    end_.resize(n);
    for (size_t i = 0; i < n; ++i) {
        uint32_t v = id_[i];
        par_[i] = parent[v] < 0 ? -1 : int32_t(pre_[size_t(parent[v])]);
        depth_[i] = depth[v];
        pos_[i] = pos.empty() ? 0 : pos[v];
        w_[i] = weight.empty() ? 1.0L : weight[v];
        end_[i] = uint32_t(i + 1);
        height_ = std::max(height_, depth[v]);
    }
    for (size_t i = n; i-- > 1;) end_[size_t(par_[i])] = std::max(end_[size_t(par_[i])], end_[i]);
    at_depth_.resize(height_ + 1);
    for (uint32_t i = 0; i < n; ++i) at_depth_[depth_[i]].push_back(i);
    refresh();
}

ExplicitTree ExplicitTree::from(const SubstringTree& t) {
    std::vector<int32_t> parent;
    std::vector<uint32_t> depth, pos;
    for (const auto& v : t.nodes) {
        parent.push_back(v.parent);
        depth.push_back(v.depth);
        pos.push_back(v.pos);
    }
    return ExplicitTree(parent, depth, pos);
}

NodeRef ExplicitTree::ref(size_t v) const {
    size_t i = pre_[v];
    return {depth_[i], pos_[i], v == 0 ? -1 : int64_t(v)};
}

void ExplicitTree::refresh() {
    const size_t n = w_.size();
    sub_ = w_;
    for (size_t i = n; i-- > 1;) sub_[size_t(par_[i])] += sub_[i];
    total_ = sub_[0];
    depth_sum_.assign(height_ + 1, 0);
    depth_max_.assign(height_ + 1, 0);
    for (size_t i = 0; i < n; ++i) {
        depth_sum_[depth_[i]] += sub_[i];
        depth_max_[depth_[i]] = std::max(depth_max_[depth_[i]], sub_[i]);
    }
}

std::optional<NodeRef> ExplicitTree::heavy() const {
    size_t best = size_t(std::max_element(w_.begin(), w_.end()) - w_.begin());
    if (w_[best] > total_ / 2) return ref(id_[best]);
    return std::nullopt;
}

void ExplicitTree::zero(const NodeRef& u) { w_[pre_[u.id < 0 ? 0 : size_t(u.id)]] = 0; }

long double ExplicitTree::above(uint32_t r) const {
    return r <= height_ ? total_ - depth_sum_[r] : total_;
}

long double ExplicitTree::max_subtree(uint32_t r) const { return r <= height_ ? depth_max_[r] : 0; }

long double ExplicitTree::component(size_t v, uint32_t r) const {
    size_t i = pre_[v];
    while (i != 0 && depth_[i] > r) i = size_t(par_[i]);
    return depth_[i] == r ? sub_[i] : above(r);
}

void ExplicitTree::update(uint32_t r, const std::function<bool(uint32_t)>& match) {
    if (r > height_) return;
    for (uint32_t i : at_depth_[r]) {
        long double f = match(pos_[i]) ? 2.0L : 0.25L;
        for (uint32_t j = i; j < end_[i]; ++j) w_[j] *= f;
    }
}

// ---------------------------------------------------------------------------

namespace {
constexpr size_t kFullRefreshEvery = 64;
}

ChainTree::ChainTree(const ChainIndex& ix, long double prune) : ix_(&ix), prune_(prune) {
    const auto& ch = ix.chains();
    st_.resize(ch.size());
    kid_index_.assign(ch.size(), 0);
    for (size_t c = 0; c < ch.size(); ++c) {
        st_[c].end = ch[c].hi;
        st_[c].pieces.push_back({ch[c].lo + 1, 0});
        live_.push_back(uint32_t(c));
        const uint32_t* kb = ix.children_begin(c);
        for (const uint32_t* k = kb; k != ix.children_end(c); ++k) kid_index_[*k] = uint32_t(k - kb);
    }
    by_mass_ = live_;
    sub_.assign(ch.size(), 0);
    kid_suf_.assign(ix.child_offset(ch.size()), 0);
    above_.assign(ix.height() + 2, 0);
    hist_.assign(ix.height() + 2, 0);
    full_refresh();
}

uint32_t ChainTree::piece_end(const State& s, size_t i) const {
    return i + 1 < s.pieces.size() ? s.pieces[i + 1].start - 1 : s.end;
}

uint32_t ChainTree::zeroed_in(const State& s, uint32_t from, uint32_t to) const {
    uint32_t k = 0;
    for (uint32_t z : s.zeroed) k += z >= from && z <= to;
    return k;
}

void ChainTree::rebuild(State& s) {
    size_t w = 0;
    for (size_t i = 1; i < s.pieces.size(); ++i) {
        if (s.pieces[i].exp == s.pieces[w].exp) continue;
        s.pieces[++w] = s.pieces[i];
    }
    s.pieces.resize(w + 1);
    s.suf.assign(s.pieces.size(), 0);
    s.diff.clear();
    s.own = 0;
    s.best_exp = INT_MIN;
    s.best_cnt = 0;
    for (size_t i = s.pieces.size(); i-- > 0;) {
        uint32_t a = s.pieces[i].start, e = piece_end(s, i);
        uint32_t cnt = e - a + 1 - zeroed_in(s, a, e);
        long double m = std::ldexp(1.0L, s.pieces[i].exp);
        s.own += m * cnt;
        s.suf[i] = s.own;
        s.diff.push_back({a, m});
        s.diff.push_back({e + 1, -m});
        if (cnt == 0) continue;
        if (s.pieces[i].exp > s.best_exp) {
            s.best_exp = s.pieces[i].exp;
            s.best_cnt = cnt;
            uint32_t d = a;
            while (std::count(s.zeroed.begin(), s.zeroed.end(), d)) ++d;
            s.best_depth = d;
        } else if (s.pieces[i].exp == s.best_exp) {
            s.best_cnt += cnt;
        }
    }
    for (uint32_t z : s.zeroed) {
        if (z > s.end) continue;
        size_t i = size_t(std::upper_bound(s.pieces.begin(), s.pieces.end(), z,
                                           [](uint32_t d, const Piece& p) { return d < p.start; }) -
                          s.pieces.begin()) -
                   1;
        long double m = std::ldexp(1.0L, s.pieces[i].exp);
        s.diff.push_back({z, -m});
        s.diff.push_back({z + 1, m});
    }
    s.dirty = false;
}

void ChainTree::account(uint32_t c, int sign) {
    const State& s = st_[c];
    for (const auto& [d, v] : s.diff) hist_[d] += sign * v;
    if (s.best_cnt == 0) return;
    Bucket& b = best_[s.best_exp];
    b.nodes = sign > 0 ? b.nodes + s.best_cnt : b.nodes - s.best_cnt;
    b.ids ^= uint64_t(c) + 1;
    if (b.nodes == 0) best_.erase(s.best_exp);
}

void ChainTree::mark(uint32_t c) {
    if (st_[c].dirty) return;
    st_[c].dirty = true;
    dirty_.push_back(c);
}

void ChainTree::bump(uint32_t c, long double delta) {
    const auto& ch = ix_->chains();
    total_ += delta;
    for (int64_t a = c; a >= 0; a = ch[size_t(a)].parent) {
        sub_[size_t(a)] += delta;
        int32_t p = ch[size_t(a)].parent;
        if (p < 0) break;
        long double* ks = kid_suf_.data() + ix_->child_offset(size_t(p));
        for (uint32_t j = 0; j <= kid_index_[size_t(a)]; ++j) ks[j] += delta;
    }
}

// Drops pieces at the deep end of chain c while everything below them is
// lighter than thr.  Returns whether the chain changed.
bool ChainTree::pop_tail(uint32_t c, long double thr) {
    const auto& ch = ix_->chains();
    State& s = st_[c];
    const uint32_t* kb = ix_->children_begin(c);
    const uint32_t* ke = ix_->children_end(c);
    bool changed = false;
    while (s.pieces.size() > 1) {
        uint32_t a = s.pieces.back().start;
        const uint32_t* k = std::lower_bound(kb, ke, a, [&](uint32_t x, uint32_t d) { return ch[x].lo < d; });
        long double m = s.suf[s.pieces.size() - 1] + (k == ke ? 0 : kid_suf_[ix_->child_offset(c) + size_t(k - kb)]);
        if (m >= thr) break;
        s.pieces.pop_back();
        s.suf.pop_back();
        s.end = a - 1;
        changed = true;
    }
    return changed;
}

void ChainTree::full_refresh() {
    const auto& ch = ix_->chains();
    since_full_ = 0;
    dirty_.clear();
    auto sums = [&] {
        total_ = root_zero_ ? 0 : 1;
        for (uint32_t c : live_) {
            State& s = st_[c];
            if (s.dirty) rebuild(s);
            sub_[c] = s.own;
            total_ += s.own;
        }
        for (auto it = live_.rbegin(); it != live_.rend(); ++it)
            if (ch[*it].parent >= 0) sub_[size_t(ch[*it].parent)] += sub_[*it];
        for (uint32_t c : live_) {
            long double acc = 0;
            long double* ks = kid_suf_.data() + ix_->child_offset(c);
            const uint32_t* kb = ix_->children_begin(c);
            for (size_t j = ix_->child_offset(c + 1) - ix_->child_offset(c); j-- > 0;) {
                acc += sub_[kb[j]];
                ks[j] = acc;
            }
        }
    };
    sums();

    // Drop subtrees whose weight no longer matters.
    const long double thr = total_ * prune_;
    size_t kept = 0;
    for (uint32_t c : live_) {
        State& s = st_[c];
        if (sub_[c] < thr) {
            s = State{};
            s.end = ch[c].lo;
            s.dirty = false;
            sub_[c] = 0;
            continue;
        }
        if (pop_tail(c, thr)) s.dirty = true;
        live_[kept++] = c;
    }
    live_.resize(kept);
    std::fill(kid_suf_.begin(), kid_suf_.end(), 0.0L);
    sums();

    std::fill(hist_.begin(), hist_.end(), 0.0L);
    best_.clear();
    if (!root_zero_) best_[0] = {1, 0};
    for (uint32_t c : live_) account(c, 1);
    finish_refresh();
}

void ChainTree::refresh() {
    if (++since_full_ >= kFullRefreshEvery) {
        full_refresh();
        return;
    }
    const long double thr = total_ * prune_;
    for (uint32_t c : dirty_) {
        State& s = st_[c];
        if (s.end <= ix_->chains()[c].lo) continue;
        account(c, -1);
        long double old = s.own;
        rebuild(s);
        if (pop_tail(c, thr)) rebuild(s);
        account(c, 1);
        bump(c, s.own - old);
    }
    dirty_.clear();
    finish_refresh();
}

void ChainTree::finish_refresh() {
    const auto& ch = ix_->chains();
    const uint32_t H = ix_->height();
    long double level = 0, acc = root_zero_ ? 0 : 1;
    above_[0] = 0;
    for (uint32_t d = 1; d <= H + 1; ++d) {
        above_[d] = acc;
        level += hist_[d];
        acc += level;
    }

    heavy_.reset();
    if (!best_.empty()) {
        const auto& [exp, b] = *best_.rbegin();
        if (b.nodes == 1 && std::ldexp(1.0L, exp) > total_ / 2) {
            if (b.ids == 0) {
                heavy_ = NodeRef{};
            } else {
                auto c = uint32_t(b.ids - 1);
                const State& s = st_[c];
                if (s.end >= s.best_depth) heavy_ = NodeRef{s.best_depth, ch[c].pos, int64_t(c)};
            }
        }
    }
    // Keep the previous order and fix it up; few chains move between phases.
    size_t kept = 0;
    for (uint32_t c : by_mass_)
        if (st_[c].end > ch[c].lo) by_mass_[kept++] = c;
    by_mass_.resize(kept);
    for (size_t i = 1; i < by_mass_.size(); ++i) {
        uint32_t c = by_mass_[i];
        size_t j = i;
        while (j > 0 && sub_[by_mass_[j - 1]] < sub_[c]) {
            by_mass_[j] = by_mass_[j - 1];
            --j;
        }
        by_mass_[j] = c;
    }
}

void ChainTree::zero(const NodeRef& u) {
    if (u.id < 0) {
        if (!root_zero_) {
            root_zero_ = true;
            total_ -= 1;
            Bucket& b = best_[0];
            if (--b.nodes == 0) best_.erase(0);
        }
        return;
    }
    st_[size_t(u.id)].zeroed.push_back(u.depth);
    mark(uint32_t(u.id));
}

long double ChainTree::above(uint32_t r) const { return r < above_.size() ? above_[r] : total_; }

long double ChainTree::max_subtree(uint32_t r) const {
    const auto& ch = ix_->chains();
    long double best = 0;
    for (uint32_t c : by_mass_) {
        if (sub_[c] <= best) break;
        const State& s = st_[c];
        if (r <= ch[c].lo || r > s.end) continue;
        size_t i = size_t(std::upper_bound(s.pieces.begin(), s.pieces.end(), r,
                                           [](uint32_t d, const Piece& p) { return d < p.start; }) -
                          s.pieces.begin()) -
                   1;
        uint32_t e = piece_end(s, i);
        long double v = std::ldexp(1.0L, s.pieces[i].exp) * (e - r + 1 - zeroed_in(s, r, e));
        if (i + 1 < s.pieces.size()) v += s.suf[i + 1];
        const uint32_t* kb = ix_->children_begin(c);
        const uint32_t* ke = ix_->children_end(c);
        const uint32_t* k = std::lower_bound(kb, ke, r, [&](uint32_t x, uint32_t d) { return ch[x].lo < d; });
        if (k != ke) v += kid_suf_[ix_->child_offset(c) + size_t(k - kb)];
        best = std::max(best, v);
    }
    return best;
}

uint32_t ChainTree::argmin(const std::vector<uint32_t>& d) const {
    if (d.empty()) throw std::invalid_argument("argmin over no depths");
    // w(T_{-r}) only grows with r and the largest subtree only shrinks, so
    // the minimum of their max sits at the crossing.
    size_t lo = 0, hi = d.size();
    while (lo < hi) {
        size_t mid = (lo + hi) / 2;
        if (above(d[mid]) >= max_subtree(d[mid]))
            hi = mid;
        else
            lo = mid + 1;
    }
    if (lo == 0) return d[0];
    long double b0 = max_subtree(d[lo - 1]);
    if (lo < d.size() && above(d[lo]) < b0) return d[lo];
    size_t a = 0, b = lo - 1;
    while (a < b) {
        size_t mid = (a + b) / 2;
        if (max_subtree(d[mid]) <= b0)
            b = mid;
        else
            a = mid + 1;
    }
    return d[a];
}

void ChainTree::update(uint32_t r, const std::function<bool(uint32_t)>& match) {
    const auto& ch = ix_->chains();
    for (uint32_t c : live_) {
        State& s = st_[c];
        if (s.end < r) continue;
        int32_t delta = match(ch[c].pos) ? 1 : -2;
        mark(c);
        size_t i = 0;
        if (r > ch[c].lo + 1) {
            i = size_t(std::upper_bound(s.pieces.begin(), s.pieces.end(), r,
                                        [](uint32_t d, const Piece& p) { return d < p.start; }) -
                       s.pieces.begin()) -
                1;
            if (s.pieces[i].start < r) {
                s.pieces.insert(s.pieces.begin() + long(i) + 1, {r, s.pieces[i].exp});
                ++i;
            }
        }
        for (; i < s.pieces.size(); ++i) s.pieces[i].exp += delta;
    }
}

// ---------------------------------------------------------------------------

Partition Partition::range(uint32_t first, uint32_t last) {
    Partition p;
    if (first > last) return p;
    std::vector<uint32_t> all(last - first + 1);
    std::iota(all.begin(), all.end(), first);
    p.parts.push_back(std::move(all));
    return p;
}

Partition Partition::singletons(std::vector<uint32_t> depths) {
    std::sort(depths.begin(), depths.end());
    depths.erase(std::unique(depths.begin(), depths.end()), depths.end());
    Partition p;
    for (uint32_t d : depths) p.parts.push_back({d});
    return p;
}

size_t Partition::find(uint32_t depth) const {
    size_t lo = 0, hi = parts.size();
    while (lo < hi) {
        size_t mid = (lo + hi) / 2;
        if (parts[mid].back() < depth)
            lo = mid + 1;
        else
            hi = mid;
    }
    if (lo < parts.size() && std::binary_search(parts[lo].begin(), parts[lo].end(), depth)) return lo;
    return size_t(-1);
}

std::vector<uint32_t> Partition::depths() const {
    std::vector<uint32_t> out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
}

uint32_t Partition::query_depth(size_t q) const {
    const auto& p = parts.at(q);
    return p[(p.size() + 1) / 2 - 1];
}

void Partition::split(size_t q) {
    auto& p = parts.at(q);
    if (p.size() <= 1) return;
    size_t m = p.size() == 2 ? 1 : (p.size() + 1) / 2 - 1;
    std::vector<uint32_t> right(p.begin() + long(m), p.end());
    p.resize(m);
    parts.insert(parts.begin() + long(q) + 1, std::move(right));
}

uint64_t Partition::digest() const {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&](uint64_t v) {
        h ^= v;
        h *= 1099511628211ull;
    };
    mix(cursor);
    for (const auto& p : parts) {
        mix(p.size());
        for (uint32_t d : p) mix(d);
    }
    return h;
}

}  // namespace drsync

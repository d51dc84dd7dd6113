#pragma once

#include <algorithm>
#include <atomic>
#include <cassert>
#include <cstdint>
#include <deque>
#include <memory>
#include <ostream>
#include <vector>

#include "tsidx/config.hpp"
#include "tsidx/hooks.hpp"
#include "tsidx/word.hpp"
#include "tsidx/work.hpp"

/// Lock-free leaf-oriented summary forest.
///
/// One binary subtree per root region.  Internal nodes are immutable
/// except for their child pointers, and a child pointer changes exactly
/// once: from a leaf to the internal node that replaces it after a split.
/// Leaves are fat: a fixed array of M entry slots filled through a
/// fetch-and-increment position counter, so concurrent inserters never
/// contend on a slot.
///
/// The subtle part is not losing an entry when a leaf overflows while
/// writers are suspended between claiming a slot and filling it.  Writers
/// in shared mode first publish their operation in the leaf's per-thread
/// announce array; a splitter collects both the filled slots and the
/// announced-but-unfilled operations, distributes them into a private
/// replacement subtree, records which announced operations it carried in
/// the replacement's per-thread `applied` markers, and installs the
/// replacement with a single compare-and-swap on the parent's child
/// pointer.  A writer that later finds its leaf replaced consults the
/// marker to learn whether its operation was carried or must be retried.
/// Writers in solo mode skip the announce step entirely; they instead
/// re-validate after publishing their slot and re-execute in shared mode
/// if any helper or split activity was observed.  Duplicated entries from
/// such re-execution are benign: queries treat the tree as a multiset.
namespace tsidx {

/// A stored entry: slot contents become visible only once `ready` is set.
struct TreeEntry {
    SummaryPair pair;
    std::atomic<std::uint8_t> ready{0};
};

/// Overflow block chained behind a maximum-cardinality leaf.
struct TreeExtent {
    std::unique_ptr<TreeEntry[]> slots;
    std::atomic<TreeExtent*> next{nullptr};
};

/// A shared-mode insert in flight.  Allocated per operation and never
/// reused, so a pointer identifies the operation unambiguously.
struct TreeOp {
    // status values held in the low 2 bits of `state`
    static constexpr std::uint64_t kAnnounced = 1;  ///< no slot claimed yet
    static constexpr std::uint64_t kClaimed = 2;    ///< slot index in the high bits
    static constexpr std::uint64_t kCompleted = 3;  ///< safely stored in a slot

    SummaryPair pair;
    std::atomic<std::uint64_t> state{0};

    static std::uint64_t make(std::uint64_t status, std::uint64_t pos = 0) {
        return status | (pos << 2);
    }
    static std::uint64_t status_of(std::uint64_t s) { return s & 3u; }
    static std::uint64_t pos_of(std::uint64_t s) { return s >> 2; }
};

struct TreeNode {
    Word key;
    bool internal = false;

    // internal nodes
    std::atomic<TreeNode*> left{nullptr};
    std::atomic<TreeNode*> right{nullptr};
    std::uint8_t split_segment = 0;
    /// True when the split that created this node ran in shared mode: a
    /// solo writer finding it must assume helpers were active.
    bool created_shared = false;
    /// Which announced operation (per thread) the split carried into this
    /// replacement.  Written before install, immutable afterwards.
    std::unique_ptr<TreeOp*[]> applied;
    /// Number of nodes in the left subtree; finalized by `fixup_counts`
    /// after population, read by rank-based traversal.  Relaxed atomic: the
    /// fix-up may be executed more than once under helping, but every
    /// execution derives the same value from the same frozen structure.
    std::atomic<std::uint32_t> left_nodes{0};

    // leaves
    std::unique_ptr<TreeEntry[]> slots;
    std::atomic<std::uint32_t> claimed{0};
    std::unique_ptr<std::atomic<TreeOp*>[]> announce;
    std::atomic<std::uint8_t> helpers_exist{0};
    std::atomic<std::uint8_t> splitting{0};
    std::atomic<TreeExtent*> overflow{nullptr};
    /// Every segment at max bits: this leaf can never split and grows
    /// through overflow extents instead.
    bool max_cardinality = false;

    /// Epoch mark for query-time traversal (query sequence number that
    /// last processed this node; avoids per-query resets).
    std::atomic<std::uint64_t> visited_epoch{0};
};

/// Per-thread insert diagnostics.
struct TreeThreadStats {
    std::uint64_t splits = 0;
    std::uint64_t install_losses = 0;
    std::uint64_t solo_reexecutions = 0;
};

class Forest {
  public:
    Forest(const IndexConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        roots_ = std::make_unique<std::atomic<TreeNode*>[]>(cfg_.buffer_count());
        for (std::uint32_t b = 0; b < cfg_.buffer_count(); ++b)
            roots_[b].store(nullptr, std::memory_order_relaxed);
    }

    const IndexConfig& config() const { return cfg_; }
    std::uint32_t root_count() const { return cfg_.buffer_count(); }
    TreeNode* root(std::uint32_t b) const { return roots_[b].load(std::memory_order_acquire); }
    const TreeThreadStats& stats(std::uint32_t thread) const { return stats_[thread].s; }

    /// Inserts a summarized series.  At-least-once semantics under
    /// helping: concurrent duplicates of the same operation may land, and
    /// queries treat leaf contents as a multiset.
    void insert(const SummaryPair& pair, std::uint32_t thread, work::Mode mode) {
        const std::uint32_t b = root_buffer_index(pair.word);
        bool scan_first = false;
        for (;;) {
            std::atomic<TreeNode*>* slot = &roots_[b];
            TreeNode* nd = slot->load(std::memory_order_seq_cst);
            if (nd == nullptr) {
                TreeNode* fresh = make_leaf(thread, root_word(b, cfg_.segments), {});
                if (!slot->compare_exchange_strong(nd, fresh, std::memory_order_seq_cst))
                    nd = slot->load(std::memory_order_seq_cst);
                else
                    nd = fresh;
            }
            while (nd->internal) {
                const std::uint32_t bit =
                    Word::branch_bit(pair.word, nd->split_segment, nd->key.bits[nd->split_segment]);
                slot = bit ? &nd->right : &nd->left;
                nd = slot->load(std::memory_order_seq_cst);
            }
            if (scan_first) {
                if (leaf_contains(nd, pair.series_ref)) return;
                scan_first = false;
            }
            switch (insert_into_leaf(slot, nd, pair, thread, mode)) {
                case Outcome::done:
                    return;
                case Outcome::retry:
                    break;
                case Outcome::retry_shared_scan:
                    scan_first = true;
                    [[fallthrough]];
                case Outcome::retry_shared:
                    mode = work::Mode::shared;
                    stats_[thread].s.solo_reexecutions++;
                    break;
            }
        }
    }

    /// True if `ref` sits in a visible slot of the leaf or its extents.
    bool leaf_contains(const TreeNode* leaf, std::uint32_t ref) const {
        bool found = false;
        for_each_entry(leaf, [&](const SummaryPair& p) { found = found || p.series_ref == ref; });
        return found;
    }

    /// Applies `fn` to every visible entry of a leaf, extents included.
    template <class F>
    void for_each_entry(const TreeNode* leaf, F&& fn) const {
        const std::uint32_t claimed = leaf->claimed.load(std::memory_order_seq_cst);
        const std::uint32_t primary = std::min(claimed, cfg_.leaf_capacity);
        for (std::uint32_t j = 0; j < primary; ++j)
            if (leaf->slots[j].ready.load(std::memory_order_seq_cst)) fn(leaf->slots[j].pair);
        if (claimed > cfg_.leaf_capacity) {
            std::uint32_t rest = claimed - cfg_.leaf_capacity;
            const TreeExtent* e = leaf->overflow.load(std::memory_order_seq_cst);
            while (e && rest > 0) {
                const std::uint32_t here = std::min(rest, cfg_.leaf_capacity);
                for (std::uint32_t j = 0; j < here; ++j)
                    if (e->slots[j].ready.load(std::memory_order_seq_cst)) fn(e->slots[j].pair);
                rest -= here;
                e = e->next.load(std::memory_order_seq_cst);
            }
        }
    }

    /// Visible entries stored in a leaf (extents included).
    std::uint32_t leaf_size(const TreeNode* leaf) const {
        std::uint32_t n = 0;
        for_each_entry(leaf, [&](const SummaryPair&) { ++n; });
        return n;
    }

    // ---- rank-based traversal support (post-population fix-up) ----

    /// Finalizes `left_nodes` in a subtree; returns its node count.
    static std::uint32_t fixup_counts(TreeNode* nd) {
        if (nd == nullptr) return 0;
        if (!nd->internal) {
            nd->left_nodes.store(0, std::memory_order_relaxed);
            return 1;
        }
        const std::uint32_t l = fixup_counts(nd->left.load(std::memory_order_acquire));
        const std::uint32_t r = fixup_counts(nd->right.load(std::memory_order_acquire));
        nd->left_nodes.store(l, std::memory_order_relaxed);
        return l + r + 1;
    }

    /// Node count via the rightmost path (requires fixed-up counts).
    static std::uint32_t total_nodes(const TreeNode* nd) {
        std::uint32_t total = 0;
        while (nd != nullptr) {
            total += nd->left_nodes.load(std::memory_order_relaxed) + 1;
            nd = nd->internal ? nd->right.load(std::memory_order_acquire) : nullptr;
        }
        return total;
    }

    /// The node with in-order rank `i` (0-based, requires fixed-up counts
    /// and 0 <= i < total_nodes).
    static TreeNode* find_node(TreeNode* nd, std::uint32_t i) {
        std::uint32_t skipped = 0;
        while (nd != nullptr) {
            const std::uint32_t rank = skipped + nd->left_nodes.load(std::memory_order_relaxed);
            if (rank == i) return nd;
            if (rank < i) {
                skipped = rank + 1;
                nd = nd->internal ? nd->right.load(std::memory_order_acquire) : nullptr;
            } else {
                nd = nd->internal ? nd->left.load(std::memory_order_acquire) : nullptr;
            }
        }
        return nullptr;
    }

    /// Deterministic pre-order text dump (entry references sorted), for
    /// debugging and golden tests.
    void dump(std::ostream& os) const {
        for (std::uint32_t b = 0; b < root_count(); ++b) {
            const TreeNode* nd = root(b);
            if (nd == nullptr) continue;
            os << "subtree " << b << "\n";
            dump_node(os, nd, 1);
        }
    }

  private:
    enum class Outcome { done, retry, retry_shared, retry_shared_scan };

    struct alignas(64) PaddedStats {
        TreeThreadStats s;
        std::deque<TreeNode> nodes;      // build-scoped arena, one per thread
        std::deque<TreeOp> ops;
        std::deque<TreeExtent> extents;
    };

    IndexConfig cfg_;
    std::unique_ptr<std::atomic<TreeNode*>[]> roots_;
    PaddedStats stats_[kMaxThreads];

    TreeNode* new_node(std::uint32_t thread) { return &stats_[thread].nodes.emplace_back(); }

    TreeNode* make_leaf(std::uint32_t thread, const Word& key,
                        const std::vector<SummaryPair>& items) {
        TreeNode* nd = new_node(thread);
        nd->key = key;
        nd->internal = false;
        nd->slots = std::make_unique<TreeEntry[]>(cfg_.leaf_capacity);
        nd->announce = std::make_unique<std::atomic<TreeOp*>[]>(cfg_.threads);
        for (std::uint32_t t = 0; t < cfg_.threads; ++t)
            nd->announce[t].store(nullptr, std::memory_order_relaxed);
        nd->max_cardinality = true;
        for (std::uint8_t s = 0; s < key.segment_count; ++s)
            if (key.bits[s] < cfg_.max_bits) nd->max_cardinality = false;
        // Pre-filled contents are published by the install CAS (or the
        // root CAS), so plain stores suffice here.
        std::uint32_t j = 0;
        TreeExtent* tail = nullptr;
        for (const SummaryPair& p : items) {
            if (j < cfg_.leaf_capacity) {
                nd->slots[j].pair = p;
                nd->slots[j].ready.store(1, std::memory_order_relaxed);
            } else {
                const std::uint32_t off = (j - cfg_.leaf_capacity) % cfg_.leaf_capacity;
                if (off == 0) {
                    TreeExtent* e = &stats_[thread].extents.emplace_back();
                    e->slots = std::make_unique<TreeEntry[]>(cfg_.leaf_capacity);
                    if (tail == nullptr)
                        nd->overflow.store(e, std::memory_order_relaxed);
                    else
                        tail->next.store(e, std::memory_order_relaxed);
                    tail = e;
                }
                tail->slots[off].pair = p;
                tail->slots[off].ready.store(1, std::memory_order_relaxed);
            }
            ++j;
        }
        nd->claimed.store(j, std::memory_order_relaxed);
        return nd;
    }

    /// Split segment: fewest bits first, ties broken by lowest index.
    static std::uint8_t pick_split_segment(const Word& key, std::uint32_t max_bits) {
        std::uint8_t best = 0;
        bool have = false;
        for (std::uint8_t s = 0; s < key.segment_count; ++s) {
            if (key.bits[s] >= max_bits) continue;
            if (!have || key.bits[s] < key.bits[best]) {
                best = s;
                have = true;
            }
        }
        assert(have);
        return best;
    }

    Outcome insert_into_leaf(std::atomic<TreeNode*>* slot, TreeNode* leaf,
                             const SummaryPair& pair, std::uint32_t thread, work::Mode mode) {
        const std::uint32_t m = cfg_.leaf_capacity;

        if (leaf->max_cardinality) {
            // Never splits, so no entry can be lost: claim, write, done.
            const std::uint32_t pos = leaf->claimed.fetch_add(1, std::memory_order_seq_cst);
            checkpoint(Checkpoint::tree_after_claim, 0, pos);
            TreeEntry& e = overflow_entry(leaf, pos, thread);
            e.pair = pair;
            e.ready.store(1, std::memory_order_seq_cst);
            checkpoint(Checkpoint::tree_after_publish, 0, pos);
            return Outcome::done;
        }

        TreeOp* od = nullptr;
        if (mode == work::Mode::shared) {
            // Announce arrival first (flips solo writers to shared), then
            // the operation itself, before claiming a slot.  The seq_cst
            // store order makes the operation visible to any splitter
            // whose own claim follows ours.
            leaf->helpers_exist.store(1, std::memory_order_seq_cst);
            od = &stats_[thread].ops.emplace_back();
            od->pair = pair;
            od->state.store(TreeOp::make(TreeOp::kAnnounced), std::memory_order_seq_cst);
            leaf->announce[thread].store(od, std::memory_order_seq_cst);
            checkpoint(Checkpoint::tree_after_announce, 0, pair.series_ref);
        }

        const std::uint32_t pos = leaf->claimed.fetch_add(1, std::memory_order_seq_cst);
        checkpoint(Checkpoint::tree_after_claim, 0, pos);

        if (pos >= m) return split_leaf(slot, leaf, pair, od, thread, mode);

        if (od) od->state.store(TreeOp::make(TreeOp::kClaimed, pos), std::memory_order_seq_cst);
        leaf->slots[pos].pair = pair;
        leaf->slots[pos].ready.store(1, std::memory_order_seq_cst);
        checkpoint(Checkpoint::tree_after_publish, 0, pos);

        TreeNode* cur = slot->load(std::memory_order_seq_cst);
        const bool splitting = leaf->splitting.load(std::memory_order_seq_cst) != 0;

        if (mode == work::Mode::solo) {
            const bool helpers = leaf->helpers_exist.load(std::memory_order_seq_cst) != 0;
            if (cur == leaf && !helpers && !splitting) return Outcome::done;
            // A helper or a split may have raced with our unannounced
            // write.  If a split snapshot provably includes our slot
            // (leaf intact and no split started before our publish), or
            // the leaf was replaced (whatever was carried is stable), a
            // presence scan disambiguates; an in-flight split on the
            // intact leaf may still miss us, so re-execute without one
            // and accept a possible benign duplicate.
            return (cur == leaf && splitting) ? Outcome::retry_shared : Outcome::retry_shared_scan;
        }

        // shared mode, slot claimed below capacity
        if (cur == leaf) {
            if (!splitting) {
                // No split can have missed our write: mark the operation
                // complete so future splitters take it from the slot.
                od->state.store(TreeOp::make(TreeOp::kCompleted, pos), std::memory_order_seq_cst);
            }
            // Otherwise a splitter is active; it sees our claimed op and
            // either finds the slot in its snapshot or carries the op.
            return Outcome::done;
        }
        // Leaf replaced.  A below-capacity claim is always visible to the
        // splitter's announce scan, so the marker must name our op.
        return applied_marker(cur, thread) == od ? Outcome::done : Outcome::retry;
    }

    TreeEntry& overflow_entry(TreeNode* leaf, std::uint32_t pos, std::uint32_t thread) {
        const std::uint32_t m = cfg_.leaf_capacity;
        if (pos < m) return leaf->slots[pos];
        std::uint32_t eidx = (pos - m) / m;
        const std::uint32_t off = (pos - m) % m;
        std::atomic<TreeExtent*>* link = &leaf->overflow;
        for (;;) {
            TreeExtent* e = link->load(std::memory_order_seq_cst);
            if (e == nullptr) {
                TreeExtent* fresh = &stats_[thread].extents.emplace_back();
                fresh->slots = std::make_unique<TreeEntry[]>(m);
                if (link->compare_exchange_strong(e, fresh, std::memory_order_seq_cst))
                    e = fresh;
                else
                    e = link->load(std::memory_order_seq_cst);
            }
            if (eidx == 0) return e->slots[off];
            --eidx;
            link = &e->next;
        }
    }

    static TreeOp* applied_marker(const TreeNode* replacement, std::uint32_t thread) {
        // `applied` is only populated on replacement roots (internal); a
        // leaf replacement cannot occur (children change leaf -> internal
        // exactly once).
        return replacement->applied ? replacement->applied[thread] : nullptr;
    }

    Outcome split_leaf(std::atomic<TreeNode*>* slot, TreeNode* leaf, const SummaryPair& pair,
                       TreeOp* od, std::uint32_t thread, work::Mode mode) {
        const std::uint32_t m = cfg_.leaf_capacity;
        leaf->splitting.store(1, std::memory_order_seq_cst);
        checkpoint(Checkpoint::tree_before_split_snapshot, 0, pair.series_ref);

        // Snapshot the visible slots first; any announced op claiming a
        // slot in this snapshot is taken from the slot, every other
        // announced op is carried from its descriptor.  Scanning slots
        // before announces (and writers updating announce before slot)
        // makes "in snapshot" and "claimed visible" consistent, so each
        // operation contributes exactly one copy.
        std::vector<SummaryPair> items;
        items.reserve(m + cfg_.threads + 1);
        std::vector<bool> in_snapshot(m, false);
        for (std::uint32_t j = 0; j < m; ++j) {
            if (leaf->slots[j].ready.load(std::memory_order_seq_cst)) {
                in_snapshot[j] = true;
                items.push_back(leaf->slots[j].pair);
            }
        }

        std::vector<TreeOp*> markers(cfg_.threads, nullptr);
        bool any_marker = false;
        for (std::uint32_t t = 0; t < cfg_.threads; ++t) {
            TreeOp* op = leaf->announce[t].load(std::memory_order_seq_cst);
            if (op == nullptr) continue;
            const std::uint64_t st = op->state.load(std::memory_order_seq_cst);
            switch (TreeOp::status_of(st)) {
                case TreeOp::kCompleted:
                    break;  // already counted via its slot
                case TreeOp::kClaimed:
                    if (TreeOp::pos_of(st) < m && in_snapshot[TreeOp::pos_of(st)]) {
                        markers[t] = op;  // in the snapshot; don't carry twice
                        any_marker = true;
                        break;
                    }
                    [[fallthrough]];
                case TreeOp::kAnnounced:
                    items.push_back(op->pair);
                    markers[t] = op;
                    any_marker = true;
                    break;
                default:
                    break;
            }
        }

        if (od == nullptr) items.push_back(pair);  // solo splitter's own entry
        // (a shared splitter's own op was just collected from announce)

        const bool shared_split = mode == work::Mode::shared || any_marker;
        TreeNode* replacement = split_once(leaf->key, items, thread, shared_split);
        replacement->applied = std::make_unique<TreeOp*[]>(cfg_.threads);
        for (std::uint32_t t = 0; t < cfg_.threads; ++t) replacement->applied[t] = markers[t];

        checkpoint(Checkpoint::tree_before_install, 0, pair.series_ref);
        TreeNode* expected = leaf;
        if (slot->compare_exchange_strong(expected, replacement, std::memory_order_seq_cst)) {
            stats_[thread].s.splits++;
            return Outcome::done;
        }
        // Another split won; if it carried our announced op we are done,
        // otherwise start over at the replacement.
        stats_[thread].s.install_losses++;
        if (od != nullptr && applied_marker(expected, thread) == od) return Outcome::done;
        return od != nullptr ? Outcome::retry : Outcome::retry_shared_scan;
    }

    /// One forced split of `key` over `items`, recursing while a side
    /// still exceeds capacity.  Runs entirely on private nodes.
    TreeNode* split_once(const Word& key, std::vector<SummaryPair>& items, std::uint32_t thread,
                         bool shared) {
        const std::uint8_t seg = pick_split_segment(key, cfg_.max_bits);
        TreeNode* nd = new_node(thread);
        nd->key = key;
        nd->internal = true;
        nd->split_segment = seg;
        nd->created_shared = shared;
        std::vector<SummaryPair> left_items, right_items;
        for (const SummaryPair& p : items)
            (Word::branch_bit(p.word, seg, key.bits[seg]) ? right_items : left_items).push_back(p);
        nd->left.store(build_side(key.refined(seg, 0), left_items, thread, shared),
                       std::memory_order_relaxed);
        nd->right.store(build_side(key.refined(seg, 1), right_items, thread, shared),
                        std::memory_order_relaxed);
        return nd;
    }

    TreeNode* build_side(const Word& key, std::vector<SummaryPair>& items, std::uint32_t thread,
                         bool shared) {
        bool splittable = false;
        for (std::uint8_t s = 0; s < key.segment_count; ++s)
            if (key.bits[s] < cfg_.max_bits) splittable = true;
        if (items.size() <= cfg_.leaf_capacity || !splittable) {
            TreeNode* leaf = make_leaf(thread, key, items);
            if (shared) leaf->helpers_exist.store(1, std::memory_order_relaxed);
            return leaf;
        }
        return split_once(key, items, thread, shared);
    }

    void dump_node(std::ostream& os, const TreeNode* nd, int depth) const {
        for (int i = 0; i < depth; ++i) os << "  ";
        if (nd->internal) {
            os << "internal " << nd->key.to_string() << " split=" << unsigned(nd->split_segment)
               << "\n";
            dump_node(os, nd->left.load(std::memory_order_acquire), depth + 1);
            dump_node(os, nd->right.load(std::memory_order_acquire), depth + 1);
        } else {
            std::vector<std::uint32_t> refs;
            for_each_entry(nd, [&](const SummaryPair& p) { refs.push_back(p.series_ref); });
            std::sort(refs.begin(), refs.end());
            os << "leaf " << nd->key.to_string() << " n=" << refs.size();
            for (std::uint32_t r : refs) os << " " << r;
            os << "\n";
        }
    }
};

}  // namespace tsidx

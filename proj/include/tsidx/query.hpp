#pragma once

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "tsidx/breakpoints.hpp"
#include "tsidx/config.hpp"
#include "tsidx/hooks.hpp"
#include "tsidx/series.hpp"
#include "tsidx/tree.hpp"
#include "tsidx/work.hpp"

namespace tsidx {

/// Lock-free best-so-far minimum over squared distances.
///
/// The authoritative value lives in a single atomic word as its IEEE bit
/// pattern; for non-negative doubles that pattern orders like the value,
/// so lowering the bound is an integer compare-and-swap loop and the word
/// is non-increasing over any execution.  The winning series reference is
/// kept in a companion word tagged with the single-precision rounding of
/// its value, maintained by the same monotone discipline (tag-major,
/// reference-minor), and a reader accepts a (value, reference) snapshot
/// only when the tag agrees with the value word, retrying through the
/// transient where one word has advanced past the other.  Because the
/// rounding is monotone, both words settle on the same minimum; the
/// reference can differ from the true argmin only when two candidates
/// collide in single precision, i.e. within one part in 2^24.
class BestSoFar {
  public:
    static constexpr std::uint32_t kNoRef = 0xFFFFFFFFu;

    BestSoFar() { reset(); }

    void reset() {
        constexpr double inf = std::numeric_limits<double>::infinity();
        vbits_.store(to_bits(inf), std::memory_order_seq_cst);
        packed_.store(pack(float(inf), kNoRef), std::memory_order_seq_cst);
    }

    /// Current squared-distance bound.
    double value() const { return from_bits(vbits_.load(std::memory_order_seq_cst)); }

    /// Offers a candidate; returns true when it lowered the bound.
    bool update(double candidate, std::uint32_t ref) {
        bool lowered = false;
        const std::uint64_t nb = to_bits(candidate);
        std::uint64_t cur = vbits_.load(std::memory_order_seq_cst);
        while (nb < cur) {
            if (vbits_.compare_exchange_weak(cur, nb, std::memory_order_seq_cst)) {
                lowered = true;
                break;
            }
        }
        const std::uint64_t np = pack(float(candidate), ref);
        std::uint64_t curp = packed_.load(std::memory_order_seq_cst);
        while (np < curp)
            if (packed_.compare_exchange_weak(curp, np, std::memory_order_seq_cst)) break;
        return lowered;
    }

    struct Snapshot {
        double value;
        std::uint32_t ref;
    };

    /// Consistent (value, reference) pair; immediate once updaters are
    /// quiescent, otherwise retries through in-flight updates.
    Snapshot read() const {
        for (;;) {
            const std::uint64_t v = vbits_.load(std::memory_order_seq_cst);
            const std::uint64_t p = packed_.load(std::memory_order_seq_cst);
            if (std::uint32_t(p >> 32) == std::bit_cast<std::uint32_t>(float(from_bits(v))))
                return {from_bits(v), std::uint32_t(p)};
        }
    }

  private:
    static std::uint64_t to_bits(double d) { return std::bit_cast<std::uint64_t>(d); }
    static double from_bits(std::uint64_t b) { return std::bit_cast<double>(b); }
    static std::uint64_t pack(float tag, std::uint32_t ref) {
        return (std::uint64_t(std::bit_cast<std::uint32_t>(tag)) << 32) | ref;
    }

    std::atomic<std::uint64_t> vbits_;
    std::atomic<std::uint64_t> packed_;
};

namespace detail {

/// One staged candidate: a leaf and the lower bound that admitted it.
/// `state` doubles as publication flag and consumption mark; the mark is
/// set only after the refinement's effect is visible, so a part that is
/// re-executed after a crash can still cover an unfinished entry.
struct QueueEntry {
    const TreeNode* leaf = nullptr;
    double bound = 0.0;
    static constexpr std::uint8_t kClaimed = 0;
    static constexpr std::uint8_t kPublished = 1;
    static constexpr std::uint8_t kRefined = 2;
    std::atomic<std::uint8_t> state{kClaimed};
};

/// Append-only candidate array.  Slots are claimed by a fetch-and-add
/// tail; capacity grows by linking doubled segments with a single
/// compare-and-swap, so appended entries are never moved or overwritten.
class CandidateQueue {
  public:
    explicit CandidateQueue(std::uint32_t initial_capacity)
        : head_(new Segment(0, std::max(1u, initial_capacity))) {}

    CandidateQueue(const CandidateQueue&) = delete;
    CandidateQueue& operator=(const CandidateQueue&) = delete;

    ~CandidateQueue() {
        Segment* s = head_;
        while (s != nullptr) {
            Segment* nx = s->next.load(std::memory_order_relaxed);
            delete s;
            s = nx;
        }
        delete view_.load(std::memory_order_relaxed);
    }

    std::uint32_t append(const TreeNode* leaf, double bound) {
        const std::uint32_t idx = tail_.fetch_add(1, std::memory_order_seq_cst);
        QueueEntry& e = slot(idx);
        e.leaf = leaf;
        e.bound = bound;
        e.state.store(QueueEntry::kPublished, std::memory_order_release);
        return idx;
    }

    /// Claimed slots (published or still being written).
    std::uint32_t claimed() const { return tail_.load(std::memory_order_seq_cst); }

    QueueEntry& entry(std::uint32_t idx) { return slot(idx); }

    /// Ascending (bound, slot) order over the published entries; ties keep
    /// insertion order via the slot index.
    struct View {
        std::vector<std::pair<double, std::uint32_t>> order;
    };

    const View* view() const { return view_.load(std::memory_order_acquire); }

    /// First publisher wins; the loser's view is discarded.
    void publish(std::unique_ptr<View> v) {
        View* expected = nullptr;
        if (view_.compare_exchange_strong(expected, v.get(), std::memory_order_seq_cst))
            v.release();
    }

    /// Once the ascending scan hits a bound at or above the best-so-far,
    /// every later entry is pruned too; this flag lets helpers skip the
    /// whole queue instead of rediscovering that.
    bool exhausted() const { return exhausted_.load(std::memory_order_seq_cst) != 0; }
    void set_exhausted() { exhausted_.store(1, std::memory_order_seq_cst); }

    /// Read-only slot access that never extends the segment chain; null
    /// for a claimed slot whose segment was never materialized.
    const QueueEntry* try_entry(std::uint32_t idx) const {
        const Segment* s = head_;
        while (s != nullptr) {
            if (idx < s->base + s->size) return &s->slots[idx - s->base];
            s = s->next.load(std::memory_order_acquire);
        }
        return nullptr;
    }

  private:
    struct Segment {
        Segment(std::uint64_t base, std::uint32_t size)
            : base(base), size(size), slots(std::make_unique<QueueEntry[]>(size)) {}
        std::uint64_t base;
        std::uint32_t size;
        std::unique_ptr<QueueEntry[]> slots;
        std::atomic<Segment*> next{nullptr};
    };

    QueueEntry& slot(std::uint64_t idx) {
        Segment* s = head_;
        for (;;) {
            if (idx < s->base + s->size) return s->slots[idx - s->base];
            Segment* nx = s->next.load(std::memory_order_acquire);
            if (nx == nullptr) {
                auto* cand = new Segment(s->base + s->size, s->size * 2);
                Segment* expected = nullptr;
                if (s->next.compare_exchange_strong(expected, cand, std::memory_order_seq_cst))
                    nx = cand;
                else {
                    delete cand;
                    nx = expected;
                }
            }
            s = nx;
        }
    }

    Segment* head_;
    std::atomic<std::uint32_t> tail_{0};
    std::atomic<View*> view_{nullptr};
    std::atomic<std::uint8_t> exhausted_{0};
};

}  // namespace detail

/// Exact 1-NN answering over a populated forest.
///
/// A query runs four phases, each a plan executed by every worker with the
/// usual helping, so a suspended or crashed worker's share is re-executed
/// by its peers and the final answer is unaffected:
///
///  1. initial estimate — descend the subtree matching the query word to
///     one leaf and take the smallest real distance found there;
///  2. pruning traverse — one part per root region; within a region,
///     threads draw inorder node ranks from a shared ticket counter and
///     look the nodes up by rank, appending every leaf whose lower bound
///     beats the current best to a candidate queue (round-robin across
///     queues); a coverage rescan then claims any rank a suspended peer
///     left unprocessed, using per-node epoch marks that double as the
///     processed flags and never need resetting between queries;
///  3. sort — each queue's published view is ordered by ascending bound;
///  4. refinement — one part per queue; entries are re-checked against
///     the best-so-far in ascending order (a failed check prunes the rest
///     of the queue), surviving leaves are scanned with a per-series
///     lower-bound check before the real distance is computed.
///
/// Pruning discards a candidate only when its lower bound is at or above
/// a value the best-so-far already reached, and the bound never exceeds
/// the true distance, so no discarded series can beat the final answer:
/// the final value is the exact squared 1-NN distance.
class QueryEngine {
  public:
    struct Answer {
        std::uint32_t series_ref = BestSoFar::kNoRef;
        double distance = std::numeric_limits<double>::infinity();
    };

    /// Requires a fully populated forest with fixed-up rank counts.
    QueryEngine(const SeriesStore& store, const Forest& forest, const BreakpointTable& table,
                const IndexConfig& cfg)
        : store_(store), forest_(forest), table_(table), cfg_(cfg) {
        cfg_.validate();
        totals_.resize(forest_.root_count(), 0);
        for (std::uint32_t b = 0; b < forest_.root_count(); ++b)
            if (TreeNode* r = forest_.root(b)) {
                totals_[b] = Forest::total_nodes(r);
                empty_ = false;
            }
    }

  private:
    static constexpr std::uint32_t kQueueSeedCapacity = 64;

    struct QueryState {
        QueryState(QueryEngine& eng, std::span<const float> q)
            : query(q),
              paa(compute_paa(q, eng.cfg_.segments)),
              word(compute_word(paa, eng.cfg_.max_bits, eng.table_)),
              epoch(eng.next_epoch_.fetch_add(1, std::memory_order_seq_cst)),
              init_plan(1),
              ps_plan(eng.forest_.root_count()),
              sort_plan(eng.cfg_.threads),
              rs_plan(eng.cfg_.threads),
              tickets(std::make_unique<std::atomic<std::uint32_t>[]>(eng.forest_.root_count())) {
            for (std::uint32_t b = 0; b < eng.forest_.root_count(); ++b)
                tickets[b].store(0, std::memory_order_relaxed);
            for (std::uint32_t t = 0; t < eng.cfg_.threads; ++t)
                queues.emplace_back(kQueueSeedCapacity);
        }

        std::span<const float> query;
        std::vector<double> paa;
        Word word;
        std::uint64_t epoch;
        BestSoFar bsf;
        work::Plan init_plan, ps_plan, sort_plan, rs_plan;
        /// Per-region inorder rank dispensers for the pruning traverse.
        std::unique_ptr<std::atomic<std::uint32_t>[]> tickets;
        std::deque<detail::CandidateQueue> queues;
    };

  public:
    /// State for answering a sequence of queries; every worker calls
    /// `run(thread)` and processes the whole sequence, query by query,
    /// phase by phase.  A plan's run only returns once the phase is
    /// globally complete, which orders the phases without extra barriers.
    /// The query store must outlive the batch.
    class Batch {
      public:
        Batch(QueryEngine& eng, const SeriesStore& queries) : eng_(eng), backoff_(eng.cfg_) {
            if (queries.count() > 0 && eng_.empty_)
                throw std::invalid_argument("1-NN query on an empty index");
            if (queries.count() > 0 && queries.n() != eng_.cfg_.n)
                throw std::invalid_argument("query length does not match the index");
            for (std::uint32_t q = 0; q < queries.count(); ++q)
                states_.emplace_back(eng_, queries.series(q));
        }

        /// The stats aggregate all four phases of every query for this
        /// worker.
        work::RunStats run(std::uint32_t thread) {
            work::RunStats stats;
            for (std::size_t qi = 0; qi < states_.size(); ++qi) {
                QueryState& st = states_[qi];
                auto init_proc = [&](auto&) { eng_.initial_scan(st); };
                stats += work::run(st.init_plan, init_proc, backoff_, thread);
                auto ps_proc = [&](auto& part) { eng_.ps_subtree(st, part.index(), thread); };
                stats += work::run(st.ps_plan, ps_proc, backoff_, thread);
                auto sort_proc = [&](auto& part) { eng_.sort_queue(st, part.index()); };
                stats += work::run(st.sort_plan, sort_proc, backoff_, thread);
                auto rs_proc = [&](auto& part) { eng_.refine_queue(st, part.index()); };
                stats += work::run(st.rs_plan, rs_proc, backoff_, thread);
                bump_completed(std::uint32_t(qi) + 1);
            }
            return stats;
        }

        bool complete() const {
            return completed_.load(std::memory_order_seq_cst) >= states_.size();
        }

        /// Whole queries finished plus a quarter per finished phase of the
        /// query in flight; reaches the query count at the end.
        double progress() const {
            const std::uint32_t done = completed_.load(std::memory_order_seq_cst);
            if (done >= states_.size()) return double(states_.size());
            const QueryState& st = states_[done];
            double frac = 0.0;
            if (st.init_plan.all_done()) frac = 0.25;
            if (st.ps_plan.all_done()) frac = 0.5;
            if (st.sort_plan.all_done()) frac = 0.75;
            return double(done) + frac;
        }

        /// One staged candidate as seen after the run (diagnostics: feeds
        /// pruning metrics and the safe-pruning checks).
        struct CandidateInfo {
            const TreeNode* leaf;
            double bound;
            bool refined;
        };

        /// All published candidates of one query, across its queues, in
        /// slot order; call once runners are quiescent.
        std::vector<CandidateInfo> candidates(std::uint32_t qi) const {
            std::vector<CandidateInfo> out;
            const QueryState& st = states_.at(qi);
            for (const auto& q : st.queues) {
                const std::uint32_t n = q.claimed();
                for (std::uint32_t i = 0; i < n; ++i) {
                    const auto* e = q.try_entry(i);
                    if (e == nullptr) continue;
                    const auto s = e->state.load(std::memory_order_acquire);
                    if (s == detail::QueueEntry::kClaimed) continue;
                    out.push_back({e->leaf, e->bound, s == detail::QueueEntry::kRefined});
                }
            }
            return out;
        }

        /// Final answers; call once runners are quiescent.  The distance
        /// is recomputed for the winning reference so each reported pair
        /// is self-consistent.
        std::vector<Answer> answers() const {
            std::vector<Answer> out;
            out.reserve(states_.size());
            for (const QueryState& st : states_) {
                const auto snap = st.bsf.read();
                Answer a;
                a.series_ref = snap.ref;
                if (snap.ref != BestSoFar::kNoRef)
                    a.distance = std::sqrt(
                        euclidean_distance_sq(st.query, eng_.store_.series(snap.ref)));
                out.push_back(a);
            }
            return out;
        }

      private:
        friend class QueryEngine;

        void bump_completed(std::uint32_t v) {
            std::uint32_t cur = completed_.load(std::memory_order_seq_cst);
            while (cur < v)
                if (completed_.compare_exchange_weak(cur, v, std::memory_order_seq_cst)) break;
        }

        QueryEngine& eng_;
        work::Backoff backoff_;
        std::deque<QueryState> states_;
        std::atomic<std::uint32_t> completed_{0};
    };

    /// Single-query convenience: runs a one-element batch on the calling
    /// thread.
    Answer answer(std::span<const float> query) {
        SeriesStore one(cfg_.n, std::vector<float>(query.begin(), query.end()));
        Batch batch(*this, one);
        batch.run(0);
        return batch.answers().front();
    }

  private:
    friend class Batch;

    /// Raises the node's mark to `epoch`, never lowering it: a straggler
    /// finishing an already-superseded query must not unmark work done for
    /// a later one.
    static void mark_visited(TreeNode* nd, std::uint64_t epoch) {
        std::uint64_t cur = nd->visited_epoch.load(std::memory_order_seq_cst);
        while (cur < epoch)
            if (nd->visited_epoch.compare_exchange_weak(cur, epoch, std::memory_order_seq_cst))
                break;
    }

    void initial_scan(QueryState& st) const {
        checkpoint(Checkpoint::before_element, 0, 0);
        TreeNode* nd = forest_.root(root_buffer_index(st.word));
        if (nd == nullptr) {
            // Empty home region: seed from the first populated one.
            for (std::uint32_t b = 0; b < forest_.root_count() && nd == nullptr; ++b)
                nd = forest_.root(b);
            while (nd != nullptr && nd->internal) nd = nd->left.load(std::memory_order_acquire);
        } else {
            while (nd->internal) {
                const int bit =
                    Word::branch_bit(st.word, nd->split_segment, nd->key.bits[nd->split_segment]);
                nd = (bit ? nd->right : nd->left).load(std::memory_order_acquire);
            }
        }
        if (nd == nullptr) return;
        forest_.for_each_entry(nd, [&](const SummaryPair& p) {
            const double d = euclidean_distance_sq(st.query, store_.series(p.series_ref));
            st.bsf.update(d, p.series_ref);
        });
    }

    void ps_subtree(QueryState& st, std::uint32_t b, std::uint32_t thread) const {
        TreeNode* root = forest_.root(b);
        if (root == nullptr) return;
        const std::uint32_t total = totals_[b];
        std::uint32_t rr = thread;  // staggers the round-robin start per worker
        auto process = [&](std::uint32_t rank) {
            TreeNode* nd = Forest::find_node(root, rank);
            checkpoint(Checkpoint::before_element, 1, (std::uint64_t(b) << 32) | rank);
            const double md = mindist_sq(st.paa, nd->key, cfg_.n, table_);
            if (!nd->internal && md < st.bsf.value())
                st.queues[rr++ % st.queues.size()].append(nd, md);
            mark_visited(nd, st.epoch);
        };
        // Fast path: the ticket counter deals every rank to exactly one
        // worker.
        for (;;) {
            const std::uint32_t t = st.tickets[b].fetch_add(1, std::memory_order_seq_cst);
            if (t >= total) break;
            process(t);
        }
        // Coverage pass: a rank whose holder stalled or crashed has a
        // stale mark (the mark is set after the append, so an unfinished
        // node is always claimable again).
        for (std::uint32_t r = 0; r < total; ++r) {
            TreeNode* nd = Forest::find_node(root, r);
            if (nd->visited_epoch.load(std::memory_order_seq_cst) >= st.epoch) continue;
            process(r);
        }
    }

    void sort_queue(QueryState& st, std::uint32_t j) const {
        auto& q = st.queues[j];
        if (q.view() != nullptr) return;  // a peer already published
        auto v = std::make_unique<detail::CandidateQueue::View>();
        const std::uint32_t n = q.claimed();
        v->order.reserve(n);
        for (std::uint32_t i = 0; i < n; ++i) {
            auto& e = q.entry(i);
            if (e.state.load(std::memory_order_acquire) != detail::QueueEntry::kClaimed)
                v->order.emplace_back(e.bound, i);
        }
        std::sort(v->order.begin(), v->order.end());
        q.publish(std::move(v));
    }

    void refine_queue(QueryState& st, std::uint32_t j) const {
        auto& q = st.queues[j];
        const auto* v = q.view();
        if (v == nullptr) return;  // sorting is globally done before refinement starts
        for (const auto& [bound, slot] : v->order) {
            if (q.exhausted()) return;
            auto& e = q.entry(slot);
            if (e.state.load(std::memory_order_seq_cst) == detail::QueueEntry::kRefined) continue;
            if (!(bound < st.bsf.value())) {
                // Ascending order: every later bound fails this check too.
                q.set_exhausted();
                return;
            }
            checkpoint(Checkpoint::before_element, 1, (std::uint64_t(j) << 32) | slot);
            refine_leaf(st, e.leaf);
            e.state.store(detail::QueueEntry::kRefined, std::memory_order_seq_cst);
        }
    }

    void refine_leaf(QueryState& st, const TreeNode* leaf) const {
        forest_.for_each_entry(leaf, [&](const SummaryPair& p) {
            if (!(mindist_sq(st.paa, p.word, cfg_.n, table_) < st.bsf.value())) return;
            const double cap = st.bsf.value();
            const double d =
                euclidean_distance_sq_bounded(st.query, store_.series(p.series_ref), cap);
            if (d < cap) st.bsf.update(d, p.series_ref);
        });
    }

    const SeriesStore& store_;
    const Forest& forest_;
    const BreakpointTable& table_;
    IndexConfig cfg_;
    std::vector<std::uint32_t> totals_;
    bool empty_ = true;
    /// Monotone across batches so node marks from an earlier batch can
    /// never collide with a later query's epoch.
    std::atomic<std::uint64_t> next_epoch_{1};
};

}  // namespace tsidx

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "tsidx/breakpoints.hpp"
#include "tsidx/buffers.hpp"
#include "tsidx/config.hpp"
#include "tsidx/hooks.hpp"
#include "tsidx/series.hpp"
#include "tsidx/tree.hpp"
#include "tsidx/work.hpp"

namespace tsidx {

/// Geometry of the summarization traverse.  The collection is cut into
/// `chunks` contiguous ranges, each chunk into `groups` sub-ranges, each
/// group into `elems` single series.  The grid is a slight over-cover of
/// the collection; trailing cells with no series behind them are marked
/// absent in their element plans.
struct TraverseShape {
    std::uint32_t chunks = 1;
    std::uint32_t groups = 1;
    std::uint32_t elems = 0;

    static TraverseShape for_count(std::uint32_t count, const IndexConfig& cfg) {
        TraverseShape s;
        s.chunks = std::max<std::uint32_t>(1, cfg.chunk_factor * cfg.threads);
        s.groups = std::max<std::uint32_t>(1, cfg.groups_per_chunk);
        const std::uint64_t cells = std::uint64_t(s.chunks) * s.groups;
        s.elems = std::uint32_t((count + cells - 1) / cells);
        return s;
    }

    std::uint64_t capacity() const { return std::uint64_t(chunks) * groups * elems; }

    /// Collection index of element `e` of group `g` of chunk `c`.
    std::uint32_t element_index(std::uint32_t c, std::uint32_t g, std::uint32_t e) const {
        return (c * groups + g) * elems + e;
    }
};

/// Summarization phase: each series is reduced to its segment-mean word at
/// full cardinality and staged into the buffer of its root region, using
/// the processing thread's private slot.
///
/// The traverse is a three-level plan hierarchy.  Chunk and group plans
/// carry helper flags so an owner notices company and the per-part timing
/// feeds the backoff estimate; element plans are deliberately bare (no
/// helper flags, no timing, no pre-help backoff) because a part there is a
/// single summary and the bookkeeping would cost more than the work.
class Summarizer {
  public:
    Summarizer(const SeriesStore& store, const BreakpointTable& table,
               SummarizationBuffers& buffers, const IndexConfig& cfg)
        : store_(store),
          table_(table),
          buffers_(buffers),
          cfg_(cfg),
          shape_(TraverseShape::for_count(store.count(), cfg)),
          backoff_(cfg),
          top_(shape_.chunks) {
        const work::PlanOptions bare{/*help_flags=*/false, /*sample_timing=*/false,
                                     /*backoff_in_help=*/false};
        for (std::uint32_t c = 0; c < shape_.chunks; ++c) {
            chunk_plans_.emplace_back(shape_.groups);
            for (std::uint32_t g = 0; g < shape_.groups; ++g) {
                auto& plan = element_plans_.emplace_back(shape_.elems, bare);
                for (std::uint32_t e = 0; e < shape_.elems; ++e)
                    if (shape_.element_index(c, g, e) >= store_.count()) plan.mark_absent(e);
            }
        }
    }

    const TraverseShape& shape() const { return shape_; }

    /// Summaries computed so far, duplicates included.  Monotone; reaches
    /// at least `store.count()` once some thread finishes the traverse.
    std::uint64_t processed() const { return processed_.load(std::memory_order_relaxed); }

    bool complete() const { return top_.all_done(); }

    /// One worker's full traverse.  Returns once every element of every
    /// group of every chunk has a set done flag.  The stats aggregate all
    /// three plan levels for this worker.
    work::RunStats run(std::uint32_t thread) {
        work::RunStats stats;
        auto chunk_proc = [&](auto& chunk) {
            auto parent = [&chunk] { return chunk.mode(); };
            auto group_proc = [&](auto& group) {
                auto elem_proc = [&](auto& elem) {
                    summarize_one(chunk.index(), group.index(), elem.index(), thread);
                };
                stats += work::run(element_plans_[chunk.index() * shape_.groups + group.index()],
                                   elem_proc, backoff_, thread, [&group] { return group.mode(); },
                                   /*level=*/2);
            };
            stats += work::run(chunk_plans_[chunk.index()], group_proc, backoff_, thread, parent,
                               /*level=*/1);
        };
        stats += work::run(top_, chunk_proc, backoff_, thread, work::SoloParent{}, /*level=*/0);
        return stats;
    }

  private:
    void summarize_one(std::uint32_t c, std::uint32_t g, std::uint32_t e, std::uint32_t thread) {
        const std::uint32_t i = shape_.element_index(c, g, e);
        checkpoint(Checkpoint::before_element, 2, i);
        const auto paa = compute_paa(store_.series(i), cfg_.segments);
        const Word w = compute_word(paa, cfg_.max_bits, table_);
        buffers_.append(root_buffer_index(w), thread, SummaryPair{w, i});
        processed_.fetch_add(1, std::memory_order_relaxed);
    }

    const SeriesStore& store_;
    const BreakpointTable& table_;
    SummarizationBuffers& buffers_;
    IndexConfig cfg_;
    TraverseShape shape_;
    work::Backoff backoff_;

    work::Plan top_;
    std::deque<work::Plan> chunk_plans_;
    std::deque<work::Plan> element_plans_;
    std::atomic<std::uint64_t> processed_{0};
};

/// Tree-population phase: drains the summarization buffers into the
/// forest.  The top plan has one part per root region; under each region
/// sits a sub-plan with one part per thread slot, so a large region can be
/// finished by several helpers working on distinct slots.  An insert runs
/// in the cheap single-writer mode exactly while every enclosing part is
/// still unshared; the mode is re-read before every insert, so the switch
/// takes effect mid-slot.
class Populator {
  public:
    Populator(const SummarizationBuffers& buffers, Forest& forest, const IndexConfig& cfg)
        : buffers_(buffers),
          forest_(forest),
          cfg_(cfg),
          backoff_(cfg),
          top_(buffers.buffer_count()),
          fixup_plan_(buffers.buffer_count()) {
        for (std::uint32_t b = 0; b < buffers.buffer_count(); ++b)
            slot_plans_.emplace_back(buffers.threads());
    }

    /// Inserts performed so far, duplicates included.
    std::uint64_t processed() const { return processed_.load(std::memory_order_relaxed); }

    bool complete() const { return top_.all_done(); }

    /// One worker's full population traverse.  The stats aggregate both
    /// plan levels for this worker.
    work::RunStats run(std::uint32_t thread) {
        work::RunStats stats;
        auto buffer_proc = [&](auto& region) {
            const std::uint32_t b = region.index();
            auto slot_proc = [&](auto& slot) {
                for (const SummaryPair& pair : buffers_.slot(b, slot.index())) {
                    checkpoint(Checkpoint::before_element, 1, pair.series_ref);
                    forest_.insert(pair, thread, slot.mode());
                    processed_.fetch_add(1, std::memory_order_relaxed);
                }
            };
            stats += work::run(slot_plans_[b], slot_proc, backoff_, thread,
                               [&region] { return region.mode(); }, /*level=*/1);
        };
        stats += work::run(top_, buffer_proc, backoff_, thread, work::SoloParent{}, /*level=*/0);
        return stats;
    }

    /// Finalizes the rank-traversal counts of every populated root.  Runs
    /// as its own plan after population; safe to execute a part twice.
    work::RunStats run_fixup(std::uint32_t thread) {
        auto proc = [&](auto& part) {
            if (TreeNode* r = forest_.root(part.index())) Forest::fixup_counts(r);
        };
        return work::run(fixup_plan_, proc, backoff_, thread, work::SoloParent{}, /*level=*/0);
    }

  private:
    const SummarizationBuffers& buffers_;
    Forest& forest_;
    IndexConfig cfg_;
    work::Backoff backoff_;

    work::Plan top_;
    std::deque<work::Plan> slot_plans_;
    work::Plan fixup_plan_;
    std::atomic<std::uint64_t> processed_{0};
};

}  // namespace tsidx

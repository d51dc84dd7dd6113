#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>

#include "tsidx/breakpoints.hpp"
#include "tsidx/buffers.hpp"
#include "tsidx/config.hpp"
#include "tsidx/hooks.hpp"
#include "tsidx/series.hpp"

namespace tsidx {

/// Alternative lock-free schedulers for the summarization phase, used as
/// comparison points for the nested-plan pipeline.  They run the exact
/// same per-series operation into the same buffers and differ only in how
/// series are claimed:
///
///  - doall-split: one static equal chunk per thread, then a circular scan
///    of every done flag;
///  - fi-based: a global fetch-and-increment hands out series, then a done
///    flag re-scan;
///  - cas-based: threads race a per-series compare-and-swap claim, then a
///    done flag re-scan.
enum class BaselineKind : std::uint8_t { doall_split, fi_based, cas_based };

inline std::string_view to_string(BaselineKind k) {
    switch (k) {
        case BaselineKind::doall_split: return "doall-split";
        case BaselineKind::fi_based: return "fi-based";
        case BaselineKind::cas_based: return "cas-based";
    }
    return "?";
}

inline BaselineKind parse_baseline(std::string_view text) {
    if (text == "doall-split") return BaselineKind::doall_split;
    if (text == "fi-based") return BaselineKind::fi_based;
    if (text == "cas-based") return BaselineKind::cas_based;
    throw std::invalid_argument("unknown baseline '" + std::string(text) +
                                "' (doall-split | fi-based | cas-based)");
}

/// Summarizes the collection with one of the baseline schedulers.  Every
/// scheduler publishes a per-series done flag only after the buffer append
/// is complete, so a crashed thread's series are still caught by the
/// survivors' re-scan: coverage is preserved and only duplicates can
/// appear (the distinct buffer content matches the pipeline path's).
class BaselineSummarizer {
  public:
    BaselineSummarizer(const SeriesStore& store, const BreakpointTable& table,
                       SummarizationBuffers& buffers, const IndexConfig& cfg, BaselineKind kind)
        : store_(store), table_(table), buffers_(buffers), cfg_(cfg), kind_(kind) {
        cfg_.validate();
        const std::uint32_t count = store_.count();
        done_ = std::make_unique<std::atomic<std::uint8_t>[]>(count ? count : 1);
        for (std::uint32_t i = 0; i < count; ++i) done_[i].store(0, std::memory_order_relaxed);
        if (kind_ == BaselineKind::cas_based) {
            claim_ = std::make_unique<std::atomic<std::uint8_t>[]>(count ? count : 1);
            for (std::uint32_t i = 0; i < count; ++i)
                claim_[i].store(0, std::memory_order_relaxed);
        }
    }

    BaselineKind kind() const { return kind_; }

    /// Summaries computed, duplicates included.
    std::uint64_t processed() const { return processed_.load(std::memory_order_relaxed); }

    bool complete() const {
        for (std::uint32_t i = 0; i < store_.count(); ++i)
            if (done_[i].load(std::memory_order_acquire) == 0) return false;
        return true;
    }

    /// One worker's full pass.  Returns once every series' done flag is
    /// set; never waits on another thread.
    void run(std::uint32_t thread) {
        const std::uint32_t count = store_.count();
        if (count == 0) return;
        switch (kind_) {
            case BaselineKind::doall_split: {
                // Static split: thread t owns the t-th of `threads` equal
                // chunks (the last ones may be empty when count < threads).
                const std::uint32_t chunk = (count + cfg_.threads - 1) / cfg_.threads;
                const std::uint32_t lo = std::min(count, thread * chunk);
                const std::uint32_t hi = std::min(count, lo + chunk);
                for (std::uint32_t i = lo; i < hi; ++i) summarize_if_undone(i, thread);
                rescan(hi % count, thread);
                break;
            }
            case BaselineKind::fi_based: {
                for (;;) {
                    const std::uint32_t i = next_.fetch_add(1, std::memory_order_relaxed);
                    if (i >= count) break;
                    summarize_if_undone(i, thread);
                }
                rescan(0, thread);
                break;
            }
            case BaselineKind::cas_based: {
                // Stagger the claim scan so threads race on different
                // series most of the time.
                const std::uint32_t start =
                    std::uint32_t((std::uint64_t(thread) * count) / cfg_.threads);
                for (std::uint32_t k = 0; k < count; ++k) {
                    const std::uint32_t i = (start + k) % count;
                    std::uint8_t expected = 0;
                    if (claim_[i].compare_exchange_strong(expected, 1,
                                                          std::memory_order_seq_cst))
                        summarize_if_undone(i, thread);
                }
                // Claims are ignored here: a claimed-but-unfinished series
                // (its claimant crashed) still has a clear done flag.
                rescan(start, thread);
                break;
            }
        }
    }

  private:
    void summarize_if_undone(std::uint32_t i, std::uint32_t thread) {
        if (done_[i].load(std::memory_order_acquire) != 0) return;
        checkpoint(Checkpoint::before_element, 0, i);
        const auto paa = compute_paa(store_.series(i), cfg_.segments);
        const Word w = compute_word(paa, cfg_.max_bits, table_);
        buffers_.append(root_buffer_index(w), thread, SummaryPair{w, i});
        processed_.fetch_add(1, std::memory_order_relaxed);
        done_[i].store(1, std::memory_order_release);
    }

    /// Circular pass over every done flag from `start`; whoever finds a
    /// series undone re-executes it.
    void rescan(std::uint32_t start, std::uint32_t thread) {
        const std::uint32_t count = store_.count();
        for (std::uint32_t k = 0; k < count; ++k)
            summarize_if_undone((start + k) % count, thread);
    }

    const SeriesStore& store_;
    const BreakpointTable& table_;
    SummarizationBuffers& buffers_;
    IndexConfig cfg_;
    BaselineKind kind_;

    std::unique_ptr<std::atomic<std::uint8_t>[]> done_;
    std::unique_ptr<std::atomic<std::uint8_t>[]> claim_;
    alignas(64) std::atomic<std::uint32_t> next_{0};
    std::atomic<std::uint64_t> processed_{0};
};

}  // namespace tsidx

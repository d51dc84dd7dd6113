#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "tsidx/config.hpp"
#include "tsidx/word.hpp"

namespace tsidx {

/// Summary staging area between the summarization and tree-population
/// phases: one buffer per root region, with one append slot per thread in
/// each buffer.  A slot is written by exactly one thread, so appends need
/// no synchronization; readers only touch slots after the summarization
/// phase's done flags have been observed, which orders the accesses.
class SummarizationBuffers {
  public:
    SummarizationBuffers(std::uint32_t buffer_count, std::uint32_t threads,
                         std::size_t reserve_per_slot = 0)
        : buffers_(buffer_count), threads_(threads), slots_(std::size_t(buffer_count) * threads) {
        if (reserve_per_slot > 0)
            for (auto& s : slots_) s.reserve(reserve_per_slot);
    }

    std::uint32_t buffer_count() const { return buffers_; }
    std::uint32_t threads() const { return threads_; }

    void append(std::uint32_t buffer, std::uint32_t thread, const SummaryPair& pair) {
        slots_[std::size_t(buffer) * threads_ + thread].push_back(pair);
    }

    const std::vector<SummaryPair>& slot(std::uint32_t buffer, std::uint32_t thread) const {
        return slots_[std::size_t(buffer) * threads_ + thread];
    }

    std::size_t buffer_size(std::uint32_t buffer) const {
        std::size_t n = 0;
        for (std::uint32_t t = 0; t < threads_; ++t) n += slot(buffer, t).size();
        return n;
    }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& s : slots_) n += s.size();
        return n;
    }

  private:
    std::uint32_t buffers_;
    std::uint32_t threads_;
    std::vector<std::vector<SummaryPair>> slots_;
};

}  // namespace tsidx

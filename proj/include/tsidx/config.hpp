#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tsidx {

/// Maximum number of segments a summary word can carry.
inline constexpr std::uint32_t kMaxSegments = 16;
/// Maximum per-segment cardinality in bits (symbols fit in one byte).
inline constexpr std::uint32_t kMaxBits = 8;
/// Upper bound on worker threads (announce arrays are sized by this).
inline constexpr std::uint32_t kMaxThreads = 64;

/// Core index parameters shared by every stage.
///
/// Series are expected to be z-normalized; `n` must be a positive multiple
/// of `segments`.
struct IndexConfig {
    std::uint32_t n = 256;          ///< series length
    std::uint32_t segments = 8;     ///< summary segments (w)
    std::uint32_t max_bits = 8;     ///< per-segment cardinality cap
    std::uint32_t leaf_capacity = 2000;  ///< entries per leaf array (M)
    std::uint32_t threads = 8;      ///< worker threads (N)

    // Workload shaping for the summarization stage: chunks = chunk_factor * N,
    // each chunk split into `groups_per_chunk` groups.
    std::uint32_t chunk_factor = 4;
    std::uint32_t groups_per_chunk = 16;
    // Nested split depth for the tree-population stage (0 = flat buffers,
    // 1 = per-thread slot subparts).
    std::uint32_t populate_depth = 1;

    // Backoff tuning: wait = backoff_beta * T_avg, clamped to backoff_max_ns.
    double backoff_beta = 1.0;
    std::uint64_t backoff_max_ns = 100'000'000;   // 100 ms
    std::uint64_t backoff_initial_ns = 1'000'000; // until a thread has samples
    double backoff_ewma_weight = 0.25;

    std::uint32_t buffer_count() const { return 1u << segments; }
    std::uint32_t segment_length() const { return n / segments; }

    void validate() const {
        if (n == 0) throw std::invalid_argument("series length must be positive");
        if (segments == 0 || segments > kMaxSegments)
            throw std::invalid_argument("segment count must be in [1, " +
                                        std::to_string(kMaxSegments) + "]");
        if (n % segments != 0)
            throw std::invalid_argument("series length must be a multiple of the segment count");
        if (max_bits == 0 || max_bits > kMaxBits)
            throw std::invalid_argument("max bits per segment must be in [1, " +
                                        std::to_string(kMaxBits) + "]");
        if (leaf_capacity == 0) throw std::invalid_argument("leaf capacity must be positive");
        if (threads == 0 || threads > kMaxThreads)
            throw std::invalid_argument("thread count must be in [1, " +
                                        std::to_string(kMaxThreads) + "]");
        if (chunk_factor == 0 || groups_per_chunk == 0)
            throw std::invalid_argument("workload shaping factors must be positive");
    }
};

}  // namespace tsidx

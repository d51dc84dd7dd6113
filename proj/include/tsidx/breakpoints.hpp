#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "tsidx/config.hpp"

namespace tsidx {

/// Equiprobable standard-normal breakpoints for every cardinality level.
///
/// Level `b` (1 <= b <= max_bits) holds the 2^b - 1 quantiles that split
/// N(0,1) into 2^b equiprobable regions.  All levels are derived from the
/// finest one by taking every 2^(max-b)-th entry, so coarser tables are
/// exact subsets of finer ones: refining a symbol by one bit always
/// subdivides the original region and never moves its boundaries.
class BreakpointTable {
  public:
    explicit BreakpointTable(std::uint32_t max_bits = kMaxBits) : max_bits_(max_bits) {
        if (max_bits_ == 0 || max_bits_ > kMaxBits)
            throw std::invalid_argument("breakpoint table: max bits out of range");
        boost::math::normal_distribution<double> norm;
        const std::uint32_t finest = (1u << max_bits_) - 1;
        std::vector<double> fine(finest);
        for (std::uint32_t j = 0; j < finest; ++j)
            fine[j] = boost::math::quantile(norm, double(j + 1) / double(1u << max_bits_));
        levels_.resize(max_bits_ + 1);
        for (std::uint32_t b = 1; b <= max_bits_; ++b) {
            const std::uint32_t count = (1u << b) - 1;
            const std::uint32_t stride = 1u << (max_bits_ - b);
            levels_[b].reserve(count);
            for (std::uint32_t i = 0; i < count; ++i)
                levels_[b].push_back(fine[(i + 1) * stride - 1]);
        }
    }

    std::uint32_t max_bits() const { return max_bits_; }

    /// Sorted thresholds for cardinality 2^bits (size 2^bits - 1).
    std::span<const double> level(std::uint32_t bits) const {
        return levels_.at(bits);
    }

  private:
    std::uint32_t max_bits_;
    std::vector<std::vector<double>> levels_;
};

}  // namespace tsidx

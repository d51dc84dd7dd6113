#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "tsidx/breakpoints.hpp"
#include "tsidx/config.hpp"
#include "tsidx/word.hpp"

namespace tsidx {

/// Flat, immutable storage for `count` series of length `n` (float32).
class SeriesStore {
  public:
    SeriesStore() = default;
    SeriesStore(std::uint32_t n, std::vector<float> values)
        : n_(n), values_(std::move(values)) {
        if (n_ == 0 || values_.size() % n_ != 0)
            throw std::invalid_argument("series store: value count is not a multiple of n");
    }

    std::uint32_t n() const { return n_; }
    std::uint32_t count() const { return std::uint32_t(values_.size() / n_); }
    std::span<const float> series(std::uint32_t i) const {
        return {values_.data() + std::size_t(i) * n_, n_};
    }
    const std::vector<float>& values() const { return values_; }

  private:
    std::uint32_t n_ = 1;
    std::vector<float> values_;
};

/// Piecewise aggregate approximation: mean of each of `out.size()` equal
/// segments.  `series.size()` must be a positive multiple of `out.size()`.
inline void compute_paa(std::span<const float> series, std::span<double> out) {
    const std::size_t seg_len = series.size() / out.size();
    const float* p = series.data();
    for (std::size_t s = 0; s < out.size(); ++s) {
        double acc = 0.0;
        for (std::size_t j = 0; j < seg_len; ++j) acc += p[j];
        out[s] = acc / double(seg_len);
        p += seg_len;
    }
}

inline std::vector<double> compute_paa(std::span<const float> series, std::uint32_t segments) {
    std::vector<double> out(segments);
    compute_paa(series, out);
    return out;
}

/// Symbol of `value` at cardinality 2^bits: the number of breakpoints at or
/// below it.  A value exactly on a breakpoint belongs to the region above.
inline std::uint32_t region_of(double value, std::span<const double> thresholds) {
    return std::uint32_t(std::upper_bound(thresholds.begin(), thresholds.end(), value) -
                         thresholds.begin());
}

/// Summary word of a PAA vector, each segment quantized at `bits[s]` bits.
inline Word compute_word(std::span<const double> paa, std::span<const std::uint8_t> bits,
                         const BreakpointTable& table) {
    Word w;
    w.segment_count = std::uint8_t(paa.size());
    for (std::size_t s = 0; s < paa.size(); ++s) {
        w.bits[s] = bits[s];
        w.symbols[s] = std::uint8_t(region_of(paa[s], table.level(bits[s])));
    }
    return w;
}

/// Summary word with uniform cardinality `bits` in every segment.
inline Word compute_word(std::span<const double> paa, std::uint32_t bits,
                         const BreakpointTable& table) {
    Word w;
    w.segment_count = std::uint8_t(paa.size());
    const auto thresholds = table.level(bits);
    for (std::size_t s = 0; s < paa.size(); ++s) {
        w.bits[s] = std::uint8_t(bits);
        w.symbols[s] = std::uint8_t(region_of(paa[s], thresholds));
    }
    return w;
}

/// Squared Euclidean distance, accumulated in double.
inline double euclidean_distance_sq(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        acc += d * d;
    }
    return acc;
}

/// Squared Euclidean distance with early abandonment: returns a value
/// >= `cutoff` as soon as the partial sum reaches it.  Exact when the true
/// distance is below `cutoff`.
inline double euclidean_distance_sq_bounded(std::span<const float> a, std::span<const float> b,
                                            double cutoff) {
    double acc = 0.0;
    std::size_t i = 0;
    const std::size_t size = a.size();
    while (i < size) {
        const std::size_t stop = std::min(size, i + 32);
        for (; i < stop; ++i) {
            const double d = double(a[i]) - double(b[i]);
            acc += d * d;
        }
        if (acc >= cutoff) return acc;
    }
    return acc;
}

/// Squared lower bound on the Euclidean distance between the series behind
/// `paa` (the query) and any series whose word is `w`: per segment, the
/// squared gap between the query's mean and the nearest edge of the region
/// the symbol names, scaled by the segment length n/w.  Zero-gap segments
/// are those whose region contains the query mean.
inline double mindist_sq(std::span<const double> paa, const Word& w, std::uint32_t n,
                         const BreakpointTable& table) {
    double acc = 0.0;
    for (std::uint8_t s = 0; s < w.segment_count; ++s) {
        const auto thresholds = table.level(w.bits[s]);
        const std::uint32_t sym = w.symbols[s];
        double gap = 0.0;
        if (sym > 0 && paa[s] < thresholds[sym - 1]) {
            gap = thresholds[sym - 1] - paa[s];
        } else if (sym < thresholds.size() && paa[s] > thresholds[sym]) {
            gap = paa[s] - thresholds[sym];
        }
        acc += gap * gap;
    }
    return acc * (double(n) / double(w.segment_count));
}

/// Summary statistics used to sanity-check that inputs are z-normalized.
struct SeriesStats {
    double mean = 0.0;
    double stdev = 0.0;
    bool looks_normalized = true;
};

/// Flags series whose mean or spread is far from N(0,1) expectations.
/// Advisory only: the index stays correct for non-normalized data, but the
/// equiprobable breakpoints lose their balancing effect.
inline SeriesStats validate_normalized(std::span<const float> series) {
    SeriesStats st;
    double sum = 0.0, sq = 0.0;
    for (float v : series) {
        sum += v;
        sq += double(v) * double(v);
    }
    const double inv = 1.0 / double(series.size());
    st.mean = sum * inv;
    const double var = std::max(0.0, sq * inv - st.mean * st.mean);
    st.stdev = std::sqrt(var);
    st.looks_normalized = std::abs(st.mean) <= 0.5 && st.stdev >= 0.5 && st.stdev <= 2.0;
    return st;
}

}  // namespace tsidx

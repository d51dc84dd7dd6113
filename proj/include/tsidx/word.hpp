#pragma once

#include <cassert>
#include <compare>
#include <cstdint>
#include <string>

#include "tsidx/config.hpp"

namespace tsidx {

/// A variable-cardinality summary word: one symbol per segment, where
/// segment `s` uses `bits[s]` bits of cardinality.  A symbol with `b` bits
/// names one of the 2^b equiprobable regions of N(0,1), counted from the
/// lowest region upward.
struct Word {
    std::uint8_t symbols[kMaxSegments] = {};
    std::uint8_t bits[kMaxSegments] = {};
    std::uint8_t segment_count = 0;

    /// True if every segment of `fine` falls inside the region this word
    /// names, i.e. this word's symbols are bit-prefixes of `fine`'s.
    /// `fine` must have at least as many bits in every segment.
    bool contains(const Word& fine) const {
        assert(fine.segment_count == segment_count);
        for (std::uint8_t s = 0; s < segment_count; ++s) {
            assert(fine.bits[s] >= bits[s]);
            if ((fine.symbols[s] >> (fine.bits[s] - bits[s])) != symbols[s]) return false;
        }
        return true;
    }

    /// The next finer bit of `fine`'s segment `s` below this word's prefix.
    /// Used to route an entry to the left (0) or right (1) child after a
    /// split on segment `s`.
    static std::uint32_t branch_bit(const Word& fine, std::uint8_t s, std::uint8_t prefix_bits) {
        assert(fine.bits[s] > prefix_bits);
        return (fine.symbols[s] >> (fine.bits[s] - prefix_bits - 1)) & 1u;
    }

    /// This word with segment `s` refined by one bit whose value is `bit`.
    Word refined(std::uint8_t s, std::uint32_t bit) const {
        assert(bits[s] < kMaxBits);
        Word out = *this;
        out.symbols[s] = std::uint8_t((symbols[s] << 1) | (bit & 1u));
        out.bits[s] = std::uint8_t(bits[s] + 1);
        return out;
    }

    /// This word with segment `s` reduced to `b` bits (b <= bits[s]).
    Word coarsened(std::uint8_t s, std::uint8_t b) const {
        assert(b >= 1 && b <= bits[s]);
        Word out = *this;
        out.symbols[s] = std::uint8_t(symbols[s] >> (bits[s] - b));
        out.bits[s] = b;
        return out;
    }

    bool operator==(const Word& o) const {
        if (segment_count != o.segment_count) return false;
        for (std::uint8_t s = 0; s < segment_count; ++s)
            if (symbols[s] != o.symbols[s] || bits[s] != o.bits[s]) return false;
        return true;
    }

    /// Compact text form, e.g. "101:3|0:1" (symbol bits per segment).
    std::string to_string() const {
        std::string out;
        for (std::uint8_t s = 0; s < segment_count; ++s) {
            if (s) out.push_back('|');
            for (int b = bits[s] - 1; b >= 0; --b)
                out.push_back(((symbols[s] >> b) & 1u) ? '1' : '0');
            out.push_back(':');
            out += std::to_string(unsigned(bits[s]));
        }
        return out;
    }
};

/// Index of the root buffer/subtree a full-cardinality word belongs to:
/// the most-significant bit of each segment's symbol, concatenated with
/// segment 0 as the most-significant bit of the result.
inline std::uint32_t root_buffer_index(const Word& w) {
    std::uint32_t idx = 0;
    for (std::uint8_t s = 0; s < w.segment_count; ++s) {
        assert(w.bits[s] >= 1);
        idx = (idx << 1) | ((w.symbols[s] >> (w.bits[s] - 1)) & 1u);
    }
    return idx;
}

/// The w-segment word with one bit per segment that names root region `idx`.
inline Word root_word(std::uint32_t idx, std::uint32_t segment_count) {
    Word w;
    w.segment_count = std::uint8_t(segment_count);
    for (std::uint32_t s = 0; s < segment_count; ++s) {
        w.bits[s] = 1;
        w.symbols[s] = std::uint8_t((idx >> (segment_count - 1 - s)) & 1u);
    }
    return w;
}

/// A summarized data series: its full-cardinality word plus the position of
/// the raw series in the dataset.
struct SummaryPair {
    Word word;
    std::uint32_t series_ref = 0;
};

}  // namespace tsidx

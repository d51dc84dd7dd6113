#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "tsidx/query.hpp"
#include "tsidx/series.hpp"

namespace tsidx {

struct NearestNeighbor {
    std::uint32_t index = 0xFFFFFFFFu;
    double distance_sq = std::numeric_limits<double>::infinity();
};

/// Ground truth by exhaustive scan: the series minimizing the squared
/// Euclidean distance to `query`, ties broken toward the lowest index.
/// The store must be non-empty.
inline NearestNeighbor brute_force_nn(const SeriesStore& store, std::span<const float> query) {
    NearestNeighbor best;
    for (std::uint32_t i = 0; i < store.count(); ++i) {
        const double d = euclidean_distance_sq(query, store.series(i));
        if (d < best.distance_sq) best = {i, d};
    }
    return best;
}

/// One disagreement between a reported answer and the exhaustive scan.
struct AnswerMismatch {
    std::uint32_t query = 0;
    std::uint32_t got_ref = 0;
    double got_distance = 0.0;
    std::uint32_t oracle_ref = 0;
    double oracle_distance = 0.0;
};

/// Cross-checks every answer's distance against the oracle within a
/// relative tolerance (plus a tiny absolute floor so exact-duplicate
/// queries compare cleanly at zero).  References are not compared: ties at
/// the same distance may legitimately resolve to different series.
inline std::vector<AnswerMismatch> verify_answers(const SeriesStore& store,
                                                  const SeriesStore& queries,
                                                  std::span<const QueryEngine::Answer> answers,
                                                  double rel_tol = 1e-4) {
    std::vector<AnswerMismatch> out;
    for (std::uint32_t q = 0; q < queries.count() && q < answers.size(); ++q) {
        const NearestNeighbor nn = brute_force_nn(store, queries.series(q));
        const double want = std::sqrt(nn.distance_sq);
        const double got = answers[q].distance;
        if (std::abs(got - want) <= rel_tol * want + 1e-12) continue;
        out.push_back({q, answers[q].series_ref, got, nn.index, want});
    }
    return out;
}

}  // namespace tsidx

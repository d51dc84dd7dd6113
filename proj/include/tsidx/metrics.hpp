#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsidx/query.hpp"

namespace tsidx {

/// One benchmark run's measurements.  Phase times are wall-clock windows
/// delimited by the latest surviving worker's completion of each phase, so
/// the total is the sum of the three by construction.  The multiplicity
/// ratio is total staged/inserted elements (helping duplicates included)
/// over distinct series: 1.0 means no work was re-executed.
struct MetricsReport {
    std::uint32_t series_count = 0;
    std::uint32_t n = 0;
    std::uint32_t segments = 0;
    std::uint32_t max_bits = 0;
    std::uint32_t leaf_capacity = 0;
    std::uint32_t threads = 0;
    std::string scheduler = "pipeline";  ///< or a baseline kind
    std::uint32_t query_count = 0;
    std::string query_kind = "none";  ///< none | file | noisy | fresh
    std::string faults;               ///< ';'-joined specs, empty when none
    std::uint32_t crashed_threads = 0;

    double summarization_seconds = 0.0;
    double tree_seconds = 0.0;
    double query_seconds = 0.0;
    double total_seconds = 0.0;

    /// Parts executed by a non-owner, per phase, summed over workers.
    std::uint64_t summarization_helps = 0;
    std::uint64_t tree_helps = 0;
    std::uint64_t query_helps = 0;

    double multiplicity = 1.0;
    std::string verified = "none";  ///< none | pass | fail

    std::vector<QueryEngine::Answer> answers;
};

/// metrics.csv column order.  Kept as one literal so the docs, the writer
/// and the tests cannot drift apart.
inline constexpr const char* kMetricsCsvHeader =
    "series_count,n,segments,max_bits,leaf_capacity,threads,scheduler,"
    "query_count,query_kind,faults,crashed_threads,"
    "summarization_seconds,tree_seconds,query_seconds,total_seconds,"
    "summarization_helps,tree_helps,query_helps,multiplicity,verified";

/// Header line plus one row.
inline void write_metrics_csv(std::ostream& out, const MetricsReport& m) {
    out << kMetricsCsvHeader << '\n';
    out << m.series_count << ',' << m.n << ',' << m.segments << ',' << m.max_bits << ','
        << m.leaf_capacity << ',' << m.threads << ',' << m.scheduler << ',' << m.query_count
        << ',' << m.query_kind << ',' << m.faults << ',' << m.crashed_threads << ',';
    out << std::fixed << std::setprecision(6) << m.summarization_seconds << ','
        << m.tree_seconds << ',' << m.query_seconds << ',' << m.total_seconds << ',';
    out << m.summarization_helps << ',' << m.tree_helps << ',' << m.query_helps << ',';
    out << std::setprecision(6) << m.multiplicity << ',' << m.verified << '\n';
    out.unsetf(std::ios::floatfield);
}

/// One row per query: query_id, winning series_id, Euclidean distance.
inline void write_answers_csv(std::ostream& out, std::span<const QueryEngine::Answer> answers) {
    out << "query_id,series_id,distance\n";
    for (std::size_t q = 0; q < answers.size(); ++q)
        out << q << ',' << answers[q].series_ref << ',' << std::setprecision(17)
            << answers[q].distance << '\n';
}

inline void write_file(const std::string& path, auto&& writer) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    writer(out);
    if (!out) throw std::runtime_error(path + ": write failed");
}

inline void write_metrics_csv(const std::string& path, const MetricsReport& m) {
    write_file(path, [&](std::ostream& out) { write_metrics_csv(out, m); });
}

inline void write_answers_csv(const std::string& path,
                              std::span<const QueryEngine::Answer> answers) {
    write_file(path, [&](std::ostream& out) { write_answers_csv(out, answers); });
}

}  // namespace tsidx

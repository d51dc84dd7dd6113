#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "tsidx/baselines.hpp"
#include "tsidx/breakpoints.hpp"
#include "tsidx/buffers.hpp"
#include "tsidx/config.hpp"
#include "tsidx/faults.hpp"
#include "tsidx/hooks.hpp"
#include "tsidx/metrics.hpp"
#include "tsidx/oracle.hpp"
#include "tsidx/pipeline.hpp"
#include "tsidx/query.hpp"
#include "tsidx/series.hpp"
#include "tsidx/tree.hpp"
#include "tsidx/work.hpp"

namespace tsidx {

/// Everything one benchmark run needs besides the data itself.
struct RunConfig {
    IndexConfig index;
    FaultPlan faults;
    /// When set, only the summarization phase runs, with the selected
    /// baseline scheduler instead of the nested-plan pipeline.
    std::optional<BaselineKind> baseline;
    bool verify = false;
    double verify_rel_tol = 1e-4;
    /// Workload label echoed into metrics: none | file | noisy | fresh.
    std::string query_kind = "none";
};

struct BenchResult {
    MetricsReport metrics;
    /// Non-empty only when verification ran and found disagreements.
    std::vector<AnswerMismatch> mismatches;
    bool ok() const { return mismatches.empty(); }
};

namespace detail {

/// Entries stored across all leaves (overflow extents included); together
/// with the buffer total this yields the multiplicity ratio.
inline std::uint64_t forest_entry_total(const Forest& forest) {
    std::uint64_t total = 0;
    std::vector<const TreeNode*> stack;
    for (std::uint32_t b = 0; b < forest.root_count(); ++b)
        if (const TreeNode* r = forest.root(b)) stack.push_back(r);
    while (!stack.empty()) {
        const TreeNode* nd = stack.back();
        stack.pop_back();
        if (nd->internal) {
            stack.push_back(nd->left.load(std::memory_order_acquire));
            stack.push_back(nd->right.load(std::memory_order_acquire));
        } else {
            total += forest.leaf_size(nd);
        }
    }
    return total;
}

}  // namespace detail

/// Runs the full pipeline (or a baseline's summarization-only variant)
/// with exactly `threads` workers, applying the fault plan through the
/// checkpoint hooks, and reports per-phase wall times, help counts, the
/// multiplicity ratio and the answers.
///
/// Workers flow through a phase without any internal barrier — the plans'
/// helping guarantees each one returns only when the phase is globally
/// complete — and the coordinating thread joins them at phase boundaries.
/// The join also retires stragglers: a helper may have finished the phase
/// while a suspended worker still holds a duplicate element in flight, and
/// that duplicate must land before the next phase starts reading.  A
/// worker that crashed stays down for every later phase.
inline BenchResult run_benchmark(const SeriesStore& store, const SeriesStore& queries,
                                 const RunConfig& cfg) {
    IndexConfig ic = cfg.index;
    ic.validate();
    cfg.faults.validate(ic.threads);
    if (cfg.baseline && queries.count() > 0)
        throw std::invalid_argument("baseline runs are summarization-only; drop the queries");
    if (store.count() > 0 && store.n() != ic.n)
        throw std::invalid_argument("dataset series length does not match the configured n");
    if (queries.count() > 0 && queries.n() != ic.n)
        throw std::invalid_argument("query series length does not match the configured n");

    const std::uint32_t N = ic.threads;
    const std::uint32_t count = store.count();

    MetricsReport m;
    m.series_count = count;
    m.n = ic.n;
    m.segments = ic.segments;
    m.max_bits = ic.max_bits;
    m.leaf_capacity = ic.leaf_capacity;
    m.threads = N;
    m.scheduler = cfg.baseline ? std::string(to_string(*cfg.baseline)) : "pipeline";
    m.query_count = queries.count();
    m.query_kind = cfg.query_kind;
    m.faults = cfg.faults.to_string();

    BreakpointTable table(ic.max_bits);
    SummarizationBuffers buffers(ic.buffer_count(), N);
    std::vector<std::uint8_t> crashed(N, 0);  // each worker writes only its own slot
    std::vector<work::RunStats> sum_stats(N), tree_stats(N), query_stats(N);

    using clock = std::chrono::steady_clock;
    const auto seconds = [](clock::duration d) {
        return std::chrono::duration<double>(d).count();
    };
    const auto run_workers = [&](auto&& body) {
        std::vector<std::thread> workers;
        workers.reserve(N);
        for (std::uint32_t t = 0; t < N; ++t) workers.emplace_back([&body, t] { body(t); });
        for (auto& w : workers) w.join();
    };

    const auto t0 = clock::now();

    std::optional<Summarizer> pipeline;
    std::optional<BaselineSummarizer> alternative;
    if (cfg.baseline)
        alternative.emplace(store, table, buffers, ic, *cfg.baseline);
    else
        pipeline.emplace(store, table, buffers, ic);
    const auto sum_progress = [&] {
        if (count == 0) return 1.0;
        const std::uint64_t done =
            cfg.baseline ? alternative->processed() : pipeline->processed();
        return std::min(1.0, double(done) / double(count));
    };
    run_workers([&](std::uint32_t t) {
        try {
            std::optional<FaultArm> arm;
            if (cfg.faults.targets(t, Phase::summarization))
                arm.emplace(cfg.faults, t, Phase::summarization, sum_progress);
            if (cfg.baseline)
                alternative->run(t);
            else
                sum_stats[t] = pipeline->run(t);
        } catch (const ThreadCrash&) {
            crashed[t] = 1;
        }
    });
    const auto sum_boundary = clock::now();
    m.summarization_seconds = seconds(sum_boundary - t0);

    std::optional<Forest> forest;
    auto tree_boundary = sum_boundary;
    if (!cfg.baseline) {
        forest.emplace(ic);
        Populator populator(buffers, *forest, ic);
        const auto tree_progress = [&] {
            if (count == 0) return 1.0;
            return std::min(1.0, double(populator.processed()) / double(count));
        };
        run_workers([&](std::uint32_t t) {
            if (crashed[t]) return;
            try {
                std::optional<FaultArm> arm;
                if (cfg.faults.targets(t, Phase::tree))
                    arm.emplace(cfg.faults, t, Phase::tree, tree_progress);
                tree_stats[t] = populator.run(t);
            } catch (const ThreadCrash&) {
                crashed[t] = 1;
            }
        });
        // Inserters are quiescent after the join, so the rank counts are
        // derived from the final structure.
        tree_stats[0] += populator.run_fixup(0);
        tree_boundary = clock::now();
        m.tree_seconds = seconds(tree_boundary - sum_boundary);
    }

    const std::uint64_t staged = buffers.total_size();
    const std::uint64_t inserted = forest ? detail::forest_entry_total(*forest) : 0;
    m.multiplicity = count == 0 ? 1.0 : double(std::max(staged, inserted)) / double(count);

    if (queries.count() > 0) {
        QueryEngine engine(store, *forest, table, ic);
        QueryEngine::Batch batch(engine, queries);
        const auto query_progress = [&] { return batch.progress() / double(queries.count()); };
        run_workers([&](std::uint32_t t) {
            if (crashed[t]) return;
            try {
                std::optional<FaultArm> arm;
                if (cfg.faults.targets(t, Phase::query))
                    arm.emplace(cfg.faults, t, Phase::query, query_progress);
                query_stats[t] = batch.run(t);
            } catch (const ThreadCrash&) {
                crashed[t] = 1;
            }
        });
        m.query_seconds = seconds(clock::now() - tree_boundary);
        m.answers = batch.answers();
    }

    m.total_seconds = m.summarization_seconds + m.tree_seconds + m.query_seconds;
    for (std::uint32_t t = 0; t < N; ++t) {
        m.summarization_helps += sum_stats[t].helped;
        m.tree_helps += tree_stats[t].helped;
        m.query_helps += query_stats[t].helped;
        m.crashed_threads += crashed[t];
    }

    BenchResult result;
    if (cfg.verify && queries.count() > 0) {
        result.mismatches = verify_answers(store, queries, m.answers, cfg.verify_rel_tol);
        m.verified = result.mismatches.empty() ? "pass" : "fail";
    }
    result.metrics = std::move(m);
    return result;
}

}  // namespace tsidx

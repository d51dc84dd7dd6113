// Benchmark and verification front end: load or synthesize a dataset and a
// query workload, build the index and answer the queries with N workers
// under an optional fault schedule, write metrics.csv / answers.csv, and
// optionally cross-check every answer against the exhaustive oracle.
//
// Exit codes: 0 success, 1 verification mismatch, 2 usage or runtime error.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tsidx/bench.hpp"
#include "tsidx/dataset.hpp"
#include "tsidx/metrics.hpp"

namespace {

struct CliOptions {
    std::string dataset_path;
    std::uint32_t generate_count = 0;
    bool raw = false;
    std::uint64_t seed = 42;

    std::string queries_path;
    std::uint32_t gen_queries = 0;
    double sigma = 0.05;
    std::uint32_t fresh_queries = 0;

    tsidx::IndexConfig index;
    bool verify = false;
    std::vector<std::string> fault_specs;
    std::string baseline;
    std::string out_dir = ".";
};

int run(const CliOptions& opt) {
    namespace fs = std::filesystem;
    fs::create_directories(opt.out_dir);
    const auto out_path = [&](const char* name) { return (fs::path(opt.out_dir) / name).string(); };

    tsidx::SeriesStore store;
    if (opt.generate_count > 0) {
        store = tsidx::SeriesStore(
            opt.index.n, tsidx::make_random_walks(opt.generate_count, opt.index.n, opt.seed));
        tsidx::write_dataset(out_path("dataset.bin"), store.n(), store.values());
        std::cout << "dataset: generated " << store.count() << " series of length " << store.n()
                  << " (seed " << opt.seed << ") -> " << out_path("dataset.bin") << "\n";
    } else {
        store = opt.raw ? tsidx::read_raw_dataset(opt.dataset_path, opt.index.n)
                        : tsidx::read_dataset(opt.dataset_path);
        std::cout << "dataset: " << store.count() << " series of length " << store.n()
                  << " from " << opt.dataset_path << "\n";
    }

    tsidx::RunConfig cfg;
    cfg.index = opt.index;
    cfg.verify = opt.verify;
    cfg.faults = tsidx::FaultPlan::parse(opt.fault_specs);
    if (!opt.baseline.empty()) cfg.baseline = tsidx::parse_baseline(opt.baseline);

    tsidx::SeriesStore queries;
    if (!opt.queries_path.empty()) {
        queries = opt.raw ? tsidx::read_raw_dataset(opt.queries_path, opt.index.n)
                          : tsidx::read_dataset(opt.queries_path);
        cfg.query_kind = "file";
    } else if (opt.gen_queries > 0) {
        // The workload seed is offset so a query never reuses the dataset's
        // random stream position.
        queries = tsidx::SeriesStore(
            opt.index.n, tsidx::make_noisy_queries(store, opt.gen_queries, opt.sigma,
                                                   opt.seed + 1));
        tsidx::write_dataset(out_path("queries.bin"), queries.n(), queries.values());
        cfg.query_kind = "noisy";
        std::cout << "queries: " << queries.count() << " noisy copies (sigma " << opt.sigma
                  << ") -> " << out_path("queries.bin") << "\n";
    } else if (opt.fresh_queries > 0) {
        queries = tsidx::SeriesStore(
            opt.index.n, tsidx::make_random_walks(opt.fresh_queries, opt.index.n, opt.seed + 1));
        tsidx::write_dataset(out_path("queries.bin"), queries.n(), queries.values());
        cfg.query_kind = "fresh";
        std::cout << "queries: " << queries.count() << " fresh random walks -> "
                  << out_path("queries.bin") << "\n";
    }

    const tsidx::BenchResult result = tsidx::run_benchmark(store, queries, cfg);
    const tsidx::MetricsReport& m = result.metrics;

    std::cout << "scheduler: " << m.scheduler << ", " << m.threads << " threads";
    if (!m.faults.empty())
        std::cout << ", faults " << m.faults << " (" << m.crashed_threads << " crashed)";
    std::cout << "\n";
    std::cout << "times: summarization " << m.summarization_seconds << " s, tree "
              << m.tree_seconds << " s, query " << m.query_seconds << " s, total "
              << m.total_seconds << " s\n";
    std::cout << "multiplicity: " << m.multiplicity << ", helps "
              << (m.summarization_helps + m.tree_helps + m.query_helps) << "\n";

    tsidx::write_metrics_csv(out_path("metrics.csv"), m);
    std::cout << "metrics -> " << out_path("metrics.csv") << "\n";
    if (m.query_count > 0) {
        tsidx::write_answers_csv(out_path("answers.csv"), m.answers);
        std::cout << "answers -> " << out_path("answers.csv") << "\n";
    }

    if (cfg.verify && m.query_count > 0) {
        if (!result.ok()) {
            std::cerr << "verification FAILED for " << result.mismatches.size() << " of "
                      << m.query_count << " queries:\n";
            std::size_t shown = 0;
            for (const tsidx::AnswerMismatch& mm : result.mismatches) {
                std::cerr << "  query " << mm.query << ": got (series " << mm.got_ref
                          << ", distance " << mm.got_distance << "), oracle (series "
                          << mm.oracle_ref << ", distance " << mm.oracle_distance << ")\n";
                if (++shown == 10) {
                    std::cerr << "  ...\n";
                    break;
                }
            }
            return 1;
        }
        std::cout << "verification: all " << m.query_count << " answers match the oracle\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CliOptions opt;
    CLI::App app{
        "Lock-free data-series index benchmark: builds the index and answers "
        "1-NN queries with helping-based work distribution, under optional "
        "injected delays and crashes."};

    auto* dataset = app.add_option("--dataset", opt.dataset_path, "Dataset file to load");
    auto* generate =
        app.add_option("--generate", opt.generate_count,
                       "Generate this many z-normalized random-walk series instead");
    app.add_flag("--raw", opt.raw,
                 "Treat --dataset/--queries files as headerless float32 (sliced by --n)");
    app.add_option("--seed", opt.seed, "Generator seed (queries use seed+1)");

    auto* queries = app.add_option("--queries", opt.queries_path, "Query file to load");
    auto* gen_queries = app.add_option(
        "--gen-queries", opt.gen_queries, "Generate noisy copies of dataset series as queries");
    app.add_option("--sigma", opt.sigma, "Noise stdev for --gen-queries, in [0, 1]")
        ->check(CLI::Range(0.0, 1.0));
    auto* fresh_queries = app.add_option("--fresh-queries", opt.fresh_queries,
                                         "Generate independent random walks as queries");

    app.add_option("--n", opt.index.n, "Series length")->check(CLI::PositiveNumber);
    app.add_option("--segments", opt.index.segments, "Summary segments (w)")
        ->check(CLI::PositiveNumber);
    app.add_option("--leaf-size", opt.index.leaf_capacity, "Leaf capacity (M)")
        ->check(CLI::PositiveNumber);
    app.add_option("--max-bits", opt.index.max_bits, "Per-segment cardinality cap in bits")
        ->check(CLI::PositiveNumber);
    app.add_option("--threads", opt.index.threads, "Worker threads (N)")
        ->check(CLI::PositiveNumber);

    app.add_flag("--verify", opt.verify, "Cross-check every answer against a brute-force scan");
    app.add_option("--fault", opt.fault_specs,
                   "Fault spec t<thread>:<phase>:<fraction>:<kind>[:<millis>], e.g. "
                   "t3:query:0.5:crash or t0:tree:0.25:delay:250 (repeatable)");
    app.add_option("--baseline", opt.baseline,
                   "Summarization-only run with a baseline scheduler: doall-split | fi-based | "
                   "cas-based");
    app.add_option("--out", opt.out_dir, "Output directory (metrics, answers, generated data)");

    generate->excludes(dataset);
    gen_queries->excludes(queries);
    fresh_queries->excludes(queries)->excludes(gen_queries);

    CLI11_PARSE(app, argc, argv);

    if (dataset->empty() == generate->empty()) {
        std::cerr << "error: exactly one of --dataset and --generate is required\n";
        return 2;
    }
    const bool has_queries = !queries->empty() || !gen_queries->empty() || !fresh_queries->empty();
    if (!opt.baseline.empty() && has_queries) {
        std::cerr << "error: --baseline runs only the summarization phase; drop the queries\n";
        return 2;
    }
    if (opt.verify && !has_queries) {
        std::cerr << "error: --verify needs a query workload\n";
        return 2;
    }

    try {
        return run(opt);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

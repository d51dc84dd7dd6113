// Build pipeline: summarization into per-thread buffer slots, then
// population of the forest, with helping covering suspended workers at
// both levels.  Oracles are direct per-series recomputation of the
// summary word and buffer index, plus multiset comparison of tree
// contents against buffer contents.

#include <gtest/gtest.h>

#include <atomic>
#include <condition_variable>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "tsidx/pipeline.hpp"
#include "testutil.hpp"

using namespace tsidx;

namespace {

IndexConfig pipe_cfg(std::uint32_t n, std::uint32_t segments, std::uint32_t max_bits,
                     std::uint32_t threads, std::uint32_t leaf_capacity = 8) {
    IndexConfig cfg;
    cfg.n = n;
    cfg.segments = segments;
    cfg.max_bits = max_bits;
    cfg.threads = threads;
    cfg.leaf_capacity = leaf_capacity;
    cfg.chunk_factor = 2;
    cfg.groups_per_chunk = 4;
    // Keep forced waits negligible so helper-based tests finish quickly.
    cfg.backoff_initial_ns = 1000;
    cfg.backoff_max_ns = 1000000;
    return cfg;
}

struct Gate {
    std::mutex m;
    std::condition_variable cv;
    bool open = false;
    void wait() {
        std::unique_lock<std::mutex> l(m);
        cv.wait(l, [&] { return open; });
    }
    void release() {
        {
            std::lock_guard<std::mutex> l(m);
            open = true;
        }
        cv.notify_all();
    }
};

struct CallbackHooks : ThreadHooks {
    std::function<void(const CheckpointInfo&)> fn;
    void at(const CheckpointInfo& info) override {
        if (fn) fn(info);
    }
};

/// Expected buffer index and word for one series, recomputed directly.
std::pair<std::uint32_t, Word> expected_summary(const SeriesStore& store, std::uint32_t i,
                                                const IndexConfig& cfg,
                                                const BreakpointTable& table) {
    const auto paa = compute_paa(store.series(i), cfg.segments);
    const Word w = compute_word(paa, cfg.max_bits, table);
    return {root_buffer_index(w), w};
}

/// (ref -> occurrences) over every slot of every buffer.
std::map<std::uint32_t, int> buffer_histogram(const SummarizationBuffers& buffers) {
    std::map<std::uint32_t, int> out;
    for (std::uint32_t b = 0; b < buffers.buffer_count(); ++b)
        for (std::uint32_t t = 0; t < buffers.threads(); ++t)
            for (const auto& p : buffers.slot(b, t)) out[p.series_ref]++;
    return out;
}

/// (ref -> occurrences) over the whole forest.
std::map<std::uint32_t, int> forest_histogram(const Forest& f) {
    std::map<std::uint32_t, int> out;
    for (std::uint32_t b = 0; b < f.root_count(); ++b) {
        std::vector<const TreeNode*> stack;
        if (f.root(b)) stack.push_back(f.root(b));
        while (!stack.empty()) {
            const TreeNode* nd = stack.back();
            stack.pop_back();
            if (nd->internal) {
                stack.push_back(nd->left.load());
                stack.push_back(nd->right.load());
            } else {
                f.for_each_entry(nd, [&](const SummaryPair& p) { out[p.series_ref]++; });
            }
        }
    }
    return out;
}

std::set<std::uint32_t> distinct_refs_under(const Forest& f, const TreeNode* root) {
    std::set<std::uint32_t> out;
    std::vector<const TreeNode*> stack;
    if (root) stack.push_back(root);
    while (!stack.empty()) {
        const TreeNode* nd = stack.back();
        stack.pop_back();
        if (nd->internal) {
            stack.push_back(nd->left.load());
            stack.push_back(nd->right.load());
        } else {
            f.for_each_entry(nd, [&](const SummaryPair& p) { out.insert(p.series_ref); });
        }
    }
    return out;
}

std::vector<TreeNode*> inorder(TreeNode* nd) {
    std::vector<TreeNode*> out;
    if (nd == nullptr) return out;
    if (nd->internal) {
        auto l = inorder(nd->left.load());
        out.insert(out.end(), l.begin(), l.end());
        out.push_back(nd);
        auto r = inorder(nd->right.load());
        out.insert(out.end(), r.begin(), r.end());
    } else {
        out.push_back(nd);
    }
    return out;
}

void check_forest_structure(const Forest& f) {
    for (std::uint32_t b = 0; b < f.root_count(); ++b) {
        std::vector<const TreeNode*> stack;
        if (f.root(b)) stack.push_back(f.root(b));
        while (!stack.empty()) {
            const TreeNode* nd = stack.back();
            stack.pop_back();
            if (nd->internal) {
                const TreeNode* l = nd->left.load();
                const TreeNode* r = nd->right.load();
                ASSERT_NE(l, nullptr);
                ASSERT_NE(r, nullptr);
                EXPECT_EQ(l->key, nd->key.refined(nd->split_segment, 0));
                EXPECT_EQ(r->key, nd->key.refined(nd->split_segment, 1));
                stack.push_back(l);
                stack.push_back(r);
            } else {
                f.for_each_entry(nd, [&](const SummaryPair& p) {
                    EXPECT_TRUE(nd->key.contains(p.word));
                    EXPECT_EQ(root_buffer_index(p.word), b);
                });
            }
        }
    }
}

}  // namespace

TEST(TraverseShape, CoversEveryCountTightly) {
    IndexConfig cfg = pipe_cfg(64, 4, 4, 4);
    for (std::uint32_t count : {0u, 1u, 7u, 31u, 32u, 33u, 1000u}) {
        const auto s = TraverseShape::for_count(count, cfg);
        const std::uint64_t cells = std::uint64_t(s.chunks) * s.groups;
        EXPECT_GE(s.capacity(), count);
        if (count == 0)
            EXPECT_EQ(s.elems, 0u);
        else
            EXPECT_LT(s.capacity() - count, cells) << "elems is not minimal";
    }
}

TEST(TraverseShape, ElementIndexWalksTheCollectionInOrder) {
    IndexConfig cfg = pipe_cfg(64, 4, 4, 2);
    const auto s = TraverseShape::for_count(100, cfg);
    std::uint32_t expect = 0;
    for (std::uint32_t c = 0; c < s.chunks; ++c)
        for (std::uint32_t g = 0; g < s.groups; ++g)
            for (std::uint32_t e = 0; e < s.elems; ++e)
                EXPECT_EQ(s.element_index(c, g, e), expect++);
}

TEST(Summarize, SingleThreadRoutesEverySeriesOnce) {
    const IndexConfig cfg = pipe_cfg(64, 4, 4, 4);
    const auto store = testutil::random_walk_store(101, 400, cfg.n);
    const BreakpointTable table(cfg.max_bits);
    SummarizationBuffers buffers(cfg.buffer_count(), cfg.threads);
    Summarizer s(store, table, buffers, cfg);

    const auto stats = s.run(0);
    EXPECT_TRUE(s.complete());
    // The stats aggregate every plan level: chunk parts, group parts, and
    // one element part per series; a lone thread owns all of them.
    EXPECT_EQ(stats.helped, 0u);
    EXPECT_EQ(stats.owned,
              std::uint64_t(s.shape().chunks) * (1 + s.shape().groups) + 400u);
    EXPECT_EQ(s.processed(), 400u);
    EXPECT_EQ(buffers.total_size(), 400u);

    // Only the running thread's slots may hold anything.
    for (std::uint32_t b = 0; b < buffers.buffer_count(); ++b)
        for (std::uint32_t t = 1; t < buffers.threads(); ++t)
            EXPECT_TRUE(buffers.slot(b, t).empty());

    std::set<std::uint32_t> seen;
    for (std::uint32_t b = 0; b < buffers.buffer_count(); ++b) {
        for (const auto& p : buffers.slot(b, 0)) {
            const auto [eb, ew] = expected_summary(store, p.series_ref, cfg, table);
            EXPECT_EQ(b, eb);
            EXPECT_EQ(p.word, ew);
            EXPECT_TRUE(seen.insert(p.series_ref).second) << "duplicate " << p.series_ref;
        }
    }
    EXPECT_EQ(seen.size(), 400u);
}

TEST(Summarize, AllNegativeSeriesLandInBufferZero) {
    const IndexConfig cfg = pipe_cfg(16, 4, 4, 1);
    std::vector<float> values(8 * 16, -1.0f);
    const SeriesStore store(16, std::move(values));
    const BreakpointTable table(cfg.max_bits);
    SummarizationBuffers buffers(cfg.buffer_count(), cfg.threads);
    Summarizer s(store, table, buffers, cfg);
    s.run(0);

    EXPECT_EQ(buffers.buffer_size(0), 8u);
    for (std::uint32_t b = 1; b < buffers.buffer_count(); ++b)
        EXPECT_EQ(buffers.buffer_size(b), 0u);
}

TEST(Summarize, SignPatternSelectsTheBuffer) {
    // Segment means (+, -, +) put the first bit of segments 0 and 2 above
    // the median, so the root region is binary 101.
    const IndexConfig cfg = pipe_cfg(12, 3, 3, 1);
    std::vector<float> values;
    for (float v : {1.0f, -1.0f, 1.0f})
        for (int i = 0; i < 4; ++i) values.push_back(v);
    const SeriesStore store(12, std::move(values));
    const BreakpointTable table(cfg.max_bits);
    SummarizationBuffers buffers(cfg.buffer_count(), cfg.threads);
    Summarizer s(store, table, buffers, cfg);
    s.run(0);

    EXPECT_EQ(buffers.buffer_size(5), 1u);
    EXPECT_EQ(buffers.total_size(), 1u);
}

TEST(Summarize, ManyThreadsCoverEverythingWithCorrectWords) {
    const IndexConfig cfg = pipe_cfg(128, 6, 5, 4);
    const auto store = testutil::random_walk_store(202, 2000, cfg.n);
    const BreakpointTable table(cfg.max_bits);
    SummarizationBuffers buffers(cfg.buffer_count(), cfg.threads);
    Summarizer s(store, table, buffers, cfg);

    std::vector<std::thread> workers;
    for (std::uint32_t t = 0; t < cfg.threads; ++t)
        workers.emplace_back([&, t] { s.run(t); });
    for (auto& w : workers) w.join();

    EXPECT_TRUE(s.complete());
    const auto hist = buffer_histogram(buffers);
    EXPECT_EQ(hist.size(), 2000u);
    for (const auto& [ref, cnt] : hist) {
        EXPECT_GE(cnt, 1);
        EXPECT_LE(cnt, int(cfg.threads));
    }
    // Every staged pair sits in the buffer its own word names, with the
    // word the oracle computes for that series.
    for (std::uint32_t b = 0; b < buffers.buffer_count(); ++b)
        for (std::uint32_t t = 0; t < buffers.threads(); ++t)
            for (const auto& p : buffers.slot(b, t)) {
                const auto [eb, ew] = expected_summary(store, p.series_ref, cfg, table);
                ASSERT_EQ(b, eb);
                ASSERT_EQ(p.word, ew);
            }
}

TEST(Summarize, SuspendedOwnerIsCoveredAndDuplicatesOnlyItsElement) {
    IndexConfig cfg = pipe_cfg(32, 4, 4, 2);
    cfg.chunk_factor = 1;
    cfg.groups_per_chunk = 2;
    const auto store = testutil::random_walk_store(303, 24, cfg.n);
    const BreakpointTable table(cfg.max_bits);
    SummarizationBuffers buffers(cfg.buffer_count(), cfg.threads);
    Summarizer s(store, table, buffers, cfg);

    Gate gate;
    std::atomic<bool> parked{false};
    CallbackHooks hooks;
    bool first = true;
    hooks.fn = [&](const CheckpointInfo& info) {
        if (info.point == Checkpoint::before_element && info.part == 0 && first) {
            first = false;
            parked.store(true);
            gate.wait();
        }
    };

    // Worker 0 parks right before summarizing series 0; worker 1 starts
    // afterwards and must finish the whole traverse by helping.
    std::thread t0([&] {
        HookScope scope(&hooks);
        s.run(0);
    });
    while (!parked.load()) std::this_thread::yield();
    std::thread t1([&] { s.run(1); });
    t1.join();
    EXPECT_TRUE(s.complete());
    EXPECT_GE(buffer_histogram(buffers).count(0), 1u);

    gate.release();
    t0.join();

    const auto hist = buffer_histogram(buffers);
    ASSERT_EQ(hist.size(), 24u);
    EXPECT_EQ(hist.at(0), 2) << "suspended element re-executed exactly once";
    for (const auto& [ref, cnt] : hist)
        if (ref != 0) EXPECT_EQ(cnt, 1) << "series " << ref;
}

TEST(Populate, SingleThreadMatchesBufferContentsExactly) {
    const IndexConfig cfg = pipe_cfg(64, 4, 4, 2, /*leaf_capacity=*/4);
    const auto store = testutil::random_walk_store(404, 300, cfg.n);
    const BreakpointTable table(cfg.max_bits);
    SummarizationBuffers buffers(cfg.buffer_count(), cfg.threads);
    Summarizer s(store, table, buffers, cfg);
    s.run(0);

    Forest forest(cfg);
    Populator p(buffers, forest, cfg);
    p.run(0);
    EXPECT_TRUE(p.complete());
    EXPECT_EQ(p.processed(), 300u);

    const auto hist = forest_histogram(forest);
    ASSERT_EQ(hist.size(), 300u);
    for (const auto& [ref, cnt] : hist) EXPECT_EQ(cnt, 1) << "series " << ref;
    check_forest_structure(forest);
}

TEST(Populate, FixupEnablesRankLookupOnEveryRoot) {
    const IndexConfig cfg = pipe_cfg(64, 4, 4, 2, /*leaf_capacity=*/4);
    const auto store = testutil::random_walk_store(505, 500, cfg.n);
    const BreakpointTable table(cfg.max_bits);
    SummarizationBuffers buffers(cfg.buffer_count(), cfg.threads);
    Summarizer s(store, table, buffers, cfg);
    s.run(0);
    Forest forest(cfg);
    Populator p(buffers, forest, cfg);
    p.run(0);
    p.run_fixup(0);

    bool saw_internal = false;
    for (std::uint32_t b = 0; b < forest.root_count(); ++b) {
        TreeNode* root = forest.root(b);
        if (root == nullptr) continue;
        saw_internal = saw_internal || root->internal;
        const auto nodes = inorder(root);
        ASSERT_EQ(Forest::total_nodes(root), nodes.size());
        for (std::uint32_t i = 0; i < nodes.size(); ++i)
            EXPECT_EQ(Forest::find_node(root, i), nodes[i]);
    }
    EXPECT_TRUE(saw_internal) << "dataset too small to force a split";
}

TEST(Populate, SuspendedWorkerIsCoveredByHelper) {
    const IndexConfig cfg = pipe_cfg(64, 4, 4, 2, /*leaf_capacity=*/4);
    const auto store = testutil::random_walk_store(606, 200, cfg.n);
    const BreakpointTable table(cfg.max_bits);
    SummarizationBuffers buffers(cfg.buffer_count(), cfg.threads);
    Summarizer s(store, table, buffers, cfg);
    s.run(0);
    Forest forest(cfg);
    Populator p(buffers, forest, cfg);

    Gate gate;
    std::atomic<bool> parked{false};
    CallbackHooks hooks;
    bool first = true;
    hooks.fn = [&](const CheckpointInfo& info) {
        if (info.point == Checkpoint::before_element && info.level == 1 && first) {
            first = false;
            parked.store(true);
            gate.wait();
        }
    };

    std::thread t0([&] {
        HookScope scope(&hooks);
        p.run(0);
    });
    while (!parked.load()) std::this_thread::yield();
    std::thread t1([&] { p.run(1); });
    t1.join();
    EXPECT_TRUE(p.complete());

    gate.release();
    t0.join();

    const auto hist = forest_histogram(forest);
    ASSERT_EQ(hist.size(), 200u);
    for (const auto& [ref, cnt] : hist) {
        EXPECT_GE(cnt, 1);
        // The resumed worker replays at most its own slot's inserts, and a
        // replayed insert can at worst double inside the tree.
        EXPECT_LE(cnt, 3) << "series " << ref;
    }
    check_forest_structure(forest);
}

TEST(Pipeline, MultiThreadEndToEndIsConsistent) {
    const IndexConfig cfg = pipe_cfg(64, 4, 4, 4, /*leaf_capacity=*/4);
    const auto store = testutil::random_walk_store(707, 1500, cfg.n);
    const BreakpointTable table(cfg.max_bits);
    SummarizationBuffers buffers(cfg.buffer_count(), cfg.threads);
    Summarizer s(store, table, buffers, cfg);
    {
        std::vector<std::thread> workers;
        for (std::uint32_t t = 0; t < cfg.threads; ++t)
            workers.emplace_back([&, t] { s.run(t); });
        for (auto& w : workers) w.join();
    }
    Forest forest(cfg);
    Populator p(buffers, forest, cfg);
    {
        std::vector<std::thread> workers;
        for (std::uint32_t t = 0; t < cfg.threads; ++t)
            workers.emplace_back([&, t] {
                p.run(t);
                p.run_fixup(t);
            });
        for (auto& w : workers) w.join();
    }

    const auto hist = forest_histogram(forest);
    ASSERT_EQ(hist.size(), 1500u);
    check_forest_structure(forest);

    // Each root holds exactly the distinct series staged for its region.
    for (std::uint32_t b = 0; b < forest.root_count(); ++b) {
        std::set<std::uint32_t> staged;
        for (std::uint32_t t = 0; t < buffers.threads(); ++t)
            for (const auto& pr : buffers.slot(b, t)) staged.insert(pr.series_ref);
        EXPECT_EQ(distinct_refs_under(forest, forest.root(b)), staged) << "region " << b;
    }

    for (std::uint32_t b = 0; b < forest.root_count(); ++b) {
        TreeNode* root = forest.root(b);
        if (root == nullptr) continue;
        const auto nodes = inorder(root);
        ASSERT_EQ(Forest::total_nodes(root), nodes.size());
        for (std::uint32_t i = 0; i < nodes.size(); ++i)
            EXPECT_EQ(Forest::find_node(root, i), nodes[i]);
    }
}

TEST(Pipeline, UndisturbedSingleThreadRunHasMultiplicityOne) {
    const IndexConfig cfg = pipe_cfg(64, 4, 4, 1, /*leaf_capacity=*/4);
    const auto store = testutil::random_walk_store(808, 600, cfg.n);
    const BreakpointTable table(cfg.max_bits);
    SummarizationBuffers buffers(cfg.buffer_count(), cfg.threads);
    Summarizer s(store, table, buffers, cfg);
    s.run(0);
    Forest forest(cfg);
    Populator p(buffers, forest, cfg);
    p.run(0);

    EXPECT_EQ(s.processed(), 600u);
    EXPECT_EQ(buffers.total_size(), 600u);
    EXPECT_EQ(p.processed(), 600u);
    std::uint64_t total = 0;
    for (const auto& [ref, cnt] : forest_histogram(forest)) total += std::uint64_t(cnt);
    EXPECT_EQ(total, 600u);
}

TEST(Pipeline, EmptyCollectionCompletesTrivially) {
    const IndexConfig cfg = pipe_cfg(64, 4, 4, 2);
    const SeriesStore store(cfg.n, {});
    const BreakpointTable table(cfg.max_bits);
    SummarizationBuffers buffers(cfg.buffer_count(), cfg.threads);
    Summarizer s(store, table, buffers, cfg);
    s.run(0);
    EXPECT_TRUE(s.complete());
    EXPECT_EQ(buffers.total_size(), 0u);

    Forest forest(cfg);
    Populator p(buffers, forest, cfg);
    p.run(0);
    p.run_fixup(0);
    EXPECT_TRUE(p.complete());
    for (std::uint32_t b = 0; b < forest.root_count(); ++b)
        EXPECT_EQ(forest.root(b), nullptr);
}

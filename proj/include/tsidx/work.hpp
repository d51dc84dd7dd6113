#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <thread>

#include "tsidx/config.hpp"
#include "tsidx/hooks.hpp"

/// Lock-free work distribution with helping.
///
/// A Plan is a fixed set of workload parts with three pieces of shared
/// state: a monotone ticket counter that hands each part to exactly one
/// owner, a done flag per part, and a helper-seen flag per part.  A thread
/// runs the owner loop until the counter is exhausted, then scans the done
/// flags and helps any part still unfinished.  `run` returns only when
/// every done flag is set, yet never waits on another thread: a suspended
/// or crashed owner's part is simply re-executed by whoever finds it
/// undone.  Part processors must therefore tolerate at-least-once
/// execution.
///
/// Parts are processed in one of two modes.  A part whose helper-seen flag
/// is still clear is run in solo mode: the owner may assume no other
/// thread touches the part's private state and skip synchronization meant
/// for concurrent duplicates.  As soon as a helper announces itself the
/// part (and anything nested under it) must be processed in shared mode.
/// Owners are expected to re-poll `PartRef::mode()` at checkpoints and
/// switch over mid-part.
namespace tsidx::work {

enum class Mode : std::uint8_t { solo, shared };

/// Per-thread exponentially weighted average of part-processing time,
/// used to back off before helping a part whose owner is probably still
/// alive.  Each thread touches only its own (padded) slot.
class Backoff {
  public:
    Backoff(double beta, std::uint64_t max_ns, std::uint64_t initial_ns, double ewma_weight)
        : beta_(beta), max_ns_(max_ns), initial_ns_(initial_ns), weight_(ewma_weight) {}

    explicit Backoff(const IndexConfig& cfg)
        : Backoff(cfg.backoff_beta, cfg.backoff_max_ns, cfg.backoff_initial_ns,
                  cfg.backoff_ewma_weight) {}

    void record(std::uint32_t thread, std::uint64_t ns) {
        Slot& s = slots_[thread];
        s.avg_ns = s.seeded ? std::uint64_t((1.0 - weight_) * double(s.avg_ns) + weight_ * double(ns))
                            : ns;
        s.seeded = true;
    }

    std::uint64_t wait_ns(std::uint32_t thread) const {
        const Slot& s = slots_[thread];
        const double w = beta_ * double(s.seeded ? s.avg_ns : initial_ns_);
        if (w <= 0.0) return 0;
        return w >= double(max_ns_) ? max_ns_ : std::uint64_t(w);
    }

    void pause(std::uint32_t thread) const {
        const std::uint64_t ns = wait_ns(thread);
        if (ns > 0) std::this_thread::sleep_for(std::chrono::nanoseconds(ns));
    }

  private:
    struct alignas(64) Slot {
        std::uint64_t avg_ns = 0;
        bool seeded = false;
    };
    double beta_;
    std::uint64_t max_ns_;
    std::uint64_t initial_ns_;
    double weight_;
    Slot slots_[kMaxThreads] = {};
};

struct PlanOptions {
    bool help_flags = true;     ///< false for single-element leaf levels
    bool sample_timing = true;  ///< feed part durations into the backoff
    bool backoff_in_help = true;
};

/// One level of workload parts: ticket counter + done/helper-seen flags.
class Plan {
  public:
    using Options = PlanOptions;

    explicit Plan(std::uint32_t parts, Options opt = {}) : parts_(parts), opt_(opt) {
        done_ = std::make_unique<std::atomic<std::uint8_t>[]>(parts ? parts : 1);
        for (std::uint32_t i = 0; i < parts_; ++i) done_[i].store(0, std::memory_order_relaxed);
        if (opt_.help_flags) {
            help_ = std::make_unique<std::atomic<std::uint8_t>[]>(parts ? parts : 1);
            for (std::uint32_t i = 0; i < parts_; ++i) help_[i].store(0, std::memory_order_relaxed);
        }
    }

    std::uint32_t part_count() const { return parts_; }
    const Options& options() const { return opt_; }

    /// Counter object: next unowned part, or nothing when exhausted.
    /// Owners and helpers acquire identically; tickets are unique.
    std::optional<std::uint32_t> acquire() {
        const std::uint32_t i = next_.fetch_add(1, std::memory_order_relaxed);
        if (i >= parts_) return std::nullopt;
        return i;
    }

    bool done(std::uint32_t i) const { return done_[i].load(std::memory_order_acquire) != 0; }

    /// Publishes part i's results: release store so that a thread that
    /// observes the flag also observes every write the part made.
    void set_done(std::uint32_t i) {
        if (done_[i].exchange(1, std::memory_order_release) == 0)
            done_count_.fetch_add(1, std::memory_order_relaxed);
    }

    /// Pre-marks a part with no work (e.g. padding past the real element
    /// count) so traversals and help scans skip it.
    void mark_absent(std::uint32_t i) { done_[i].store(1, std::memory_order_release); }

    bool helper_seen(std::uint32_t i) const {
        return help_ && help_[i].load(std::memory_order_seq_cst) != 0;
    }

    /// A helper announces itself before touching the part, so an owner that
    /// polls `mode_for` afterwards is guaranteed to see shared mode.
    void mark_helper(std::uint32_t i) {
        if (help_) help_[i].store(1, std::memory_order_seq_cst);
    }

    Mode mode_for(std::uint32_t i) const { return helper_seen(i) ? Mode::shared : Mode::solo; }

    /// Parts finished at least once (monotone; used as a progress metric).
    std::uint32_t done_count() const { return done_count_.load(std::memory_order_relaxed); }

    bool all_done() const {
        for (std::uint32_t i = 0; i < parts_; ++i)
            if (!done(i)) return false;
        return true;
    }

  private:
    std::uint32_t parts_;
    Options opt_;
    alignas(64) std::atomic<std::uint32_t> next_{0};
    alignas(64) std::atomic<std::uint32_t> done_count_{0};
    std::unique_ptr<std::atomic<std::uint8_t>[]> done_;
    std::unique_ptr<std::atomic<std::uint8_t>[]> help_;
};

/// What a processor sees of the part it was handed.  `mode()` re-reads the
/// flags (and the enclosing part's mode) so owners can switch mid-part;
/// `abandoned()` lets a helper stop early once the part is done elsewhere.
template <class ParentMode>
class PartRef {
  public:
    PartRef(Plan& plan, std::uint32_t index, bool forced_shared, const ParentMode& parent)
        : plan_(plan), index_(index), forced_shared_(forced_shared), parent_(parent) {}

    std::uint32_t index() const { return index_; }

    Mode mode() const {
        if (forced_shared_ || parent_() == Mode::shared) return Mode::shared;
        return plan_.mode_for(index_);
    }

    bool abandoned() const { return helper_ && plan_.done(index_); }
    bool as_helper() const { return helper_; }

  private:
    friend struct Runner;
    Plan& plan_;
    std::uint32_t index_;
    bool forced_shared_;
    bool helper_ = false;
    const ParentMode& parent_;
};

struct SoloParent {
    Mode operator()() const { return Mode::solo; }
};

/// Per-`run` accounting (owned parts vs. helped parts).
struct RunStats {
    std::uint64_t owned = 0;
    std::uint64_t helped = 0;

    RunStats& operator+=(const RunStats& o) {
        owned += o.owned;
        helped += o.helped;
        return *this;
    }
};

struct Runner {
    template <class Proc, class ParentMode>
    static RunStats help_phase(Plan& plan, Proc&& proc, Backoff& backoff, std::uint32_t thread,
                               const ParentMode& parent, std::uint32_t level) {
        RunStats stats;
        const std::uint32_t k = plan.part_count();
        for (std::uint32_t i = 0; i < k; ++i) {
            if (plan.done(i)) continue;
            checkpoint(Checkpoint::before_help, level, i);
            // Announce first so the owner stops assuming solo mode, then
            // give it one average part's worth of time to finish by itself.
            plan.mark_helper(i);
            if (plan.options().backoff_in_help) backoff.pause(thread);
            checkpoint(Checkpoint::after_backoff, level, i);
            if (plan.done(i)) continue;
            PartRef<ParentMode> part(plan, i, /*forced_shared=*/true, parent);
            part.helper_ = true;
            proc(part);
            plan.set_done(i);
            ++stats.helped;
        }
        return stats;
    }

    template <class Proc, class ParentMode>
    static RunStats run(Plan& plan, Proc&& proc, Backoff& backoff, std::uint32_t thread,
                        const ParentMode& parent, std::uint32_t level) {
        RunStats stats;
        using clock = std::chrono::steady_clock;
        while (auto i = plan.acquire()) {
            checkpoint(Checkpoint::after_acquire, level, *i);
            // Pre-marked absent parts (and parts a helper already finished
            // while we were suspended) need no work.
            if (plan.done(*i)) continue;
            const auto start = plan.options().sample_timing ? clock::now() : clock::time_point{};
            PartRef<ParentMode> part(plan, *i, /*forced_shared=*/false, parent);
            proc(part);
            if (plan.options().sample_timing)
                backoff.record(thread, std::uint64_t(
                    std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now() - start)
                        .count()));
            checkpoint(Checkpoint::before_done_flag, level, *i);
            plan.set_done(*i);
            ++stats.owned;
        }
        stats += help_phase(plan, proc, backoff, thread, parent, level);
        return stats;
    }
};

/// Owner loop plus help scan.  Post-condition: every part of `plan` has
/// been executed at least once and all done flags are set.  Never blocks
/// on another thread; the only waiting is the bounded pre-help backoff.
template <class Proc, class ParentMode = SoloParent>
RunStats run(Plan& plan, Proc&& proc, Backoff& backoff, std::uint32_t thread,
             const ParentMode& parent = {}, std::uint32_t level = 0) {
    return Runner::run(plan, std::forward<Proc>(proc), backoff, thread, parent, level);
}

/// The scan-and-help half of `run`, callable on its own (e.g. by a thread
/// that owned nothing because the counter was already exhausted).
template <class Proc, class ParentMode = SoloParent>
RunStats help_phase(Plan& plan, Proc&& proc, Backoff& backoff, std::uint32_t thread,
                    const ParentMode& parent = {}, std::uint32_t level = 0) {
    return Runner::help_phase(plan, std::forward<Proc>(proc), backoff, thread, parent, level);
}

}  // namespace tsidx::work

#pragma once

#include <charconv>
#include <chrono>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "tsidx/hooks.hpp"

namespace tsidx {

/// The three pipeline phases a fault can target.
enum class Phase : std::uint8_t { summarization, tree, query };

inline std::string_view to_string(Phase p) {
    switch (p) {
        case Phase::summarization: return "summarization";
        case Phase::tree: return "tree";
        case Phase::query: return "query";
    }
    return "?";
}

/// One scheduled fault, written `t<thread>:<phase>:<fraction>:<kind>`.
/// The fraction is a phase-progress trigger point in [0, 1]; the kind is
/// `crash` (the thread takes no further steps, in this or any later
/// phase) or `delay[:<millis>]` (the thread sleeps once and resumes;
/// default 100 ms).  Examples: `t3:query:0.5:crash`,
/// `t0:tree:0.25:delay:250`.
struct FaultSpec {
    enum class Kind : std::uint8_t { delay, crash };

    std::uint32_t thread = 0;
    Phase phase = Phase::summarization;
    double at = 0.0;
    Kind kind = Kind::crash;
    std::chrono::milliseconds delay{100};

    static FaultSpec parse(std::string_view text);
    std::string to_string() const;
};

namespace detail {

[[noreturn]] inline void bad_fault(std::string_view text, const std::string& why) {
    throw std::invalid_argument("bad fault spec '" + std::string(text) + "': " + why);
}

inline std::string_view next_field(std::string_view& rest) {
    const std::size_t colon = rest.find(':');
    std::string_view field = rest.substr(0, colon);
    rest = colon == std::string_view::npos ? std::string_view{} : rest.substr(colon + 1);
    return field;
}

}  // namespace detail

inline FaultSpec FaultSpec::parse(std::string_view text) {
    std::string_view rest = text;
    FaultSpec f;

    std::string_view field = detail::next_field(rest);
    if (field.size() < 2 || field[0] != 't') detail::bad_fault(text, "expected t<thread> first");
    auto [tp, terr] = std::from_chars(field.data() + 1, field.data() + field.size(), f.thread);
    if (terr != std::errc{} || tp != field.data() + field.size())
        detail::bad_fault(text, "unparsable thread index");

    field = detail::next_field(rest);
    if (field == "summarization") f.phase = Phase::summarization;
    else if (field == "tree") f.phase = Phase::tree;
    else if (field == "query") f.phase = Phase::query;
    else detail::bad_fault(text, "unknown phase (summarization | tree | query)");

    field = detail::next_field(rest);
    try {
        std::size_t used = 0;
        f.at = std::stod(std::string(field), &used);
        if (used != field.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
        detail::bad_fault(text, "unparsable trigger fraction");
    }
    if (!(f.at >= 0.0 && f.at <= 1.0)) detail::bad_fault(text, "trigger fraction outside [0, 1]");

    field = detail::next_field(rest);
    if (field == "crash") {
        f.kind = Kind::crash;
        if (!rest.empty()) detail::bad_fault(text, "crash takes no extra field");
    } else if (field == "delay") {
        f.kind = Kind::delay;
        if (!rest.empty()) {
            field = detail::next_field(rest);
            std::uint64_t ms = 0;
            auto [mp, merr] = std::from_chars(field.data(), field.data() + field.size(), ms);
            if (merr != std::errc{} || mp != field.data() + field.size() || !rest.empty())
                detail::bad_fault(text, "unparsable delay milliseconds");
            f.delay = std::chrono::milliseconds(ms);
        }
    } else {
        detail::bad_fault(text, "unknown kind (delay | crash)");
    }
    return f;
}

inline std::string FaultSpec::to_string() const {
    std::string out = "t" + std::to_string(thread) + ":" + std::string(tsidx::to_string(phase)) +
                      ":" + std::to_string(at) + ":";
    if (kind == Kind::crash) return out + "crash";
    return out + "delay:" + std::to_string(delay.count());
}

/// A benchmark run's full fault schedule.
struct FaultPlan {
    std::vector<FaultSpec> faults;

    bool empty() const { return faults.empty(); }

    /// True when some fault targets this worker in this phase; used to
    /// skip hook installation entirely otherwise.
    bool targets(std::uint32_t thread, Phase phase) const {
        for (const FaultSpec& f : faults)
            if (f.thread == thread && f.phase == phase) return true;
        return false;
    }

    static FaultPlan parse(std::span<const std::string> specs) {
        FaultPlan plan;
        plan.faults.reserve(specs.size());
        for (const std::string& s : specs) plan.faults.push_back(FaultSpec::parse(s));
        return plan;
    }

    /// Rejects plans no run can complete: every fault must name a real
    /// worker, and at least one worker must never crash (a crash is
    /// permanent, so progress needs one survivor).
    void validate(std::uint32_t threads) const {
        std::vector<bool> crashes(threads, false);
        for (const FaultSpec& f : faults) {
            if (f.thread >= threads)
                throw std::invalid_argument("fault names thread " + std::to_string(f.thread) +
                                            " but the run has " + std::to_string(threads));
            if (f.kind == FaultSpec::Kind::crash) crashes[f.thread] = true;
        }
        std::uint32_t crashed = 0;
        for (bool c : crashes) crashed += c ? 1 : 0;
        if (threads > 0 && crashed >= threads)
            throw std::invalid_argument("fault plan crashes every worker; one must survive");
    }

    std::string to_string() const {
        std::string out;
        for (const FaultSpec& f : faults) {
            if (!out.empty()) out.push_back(';');
            out += f.to_string();
        }
        return out;
    }
};

/// Arms one worker's faults for one phase, for the current scope, on the
/// calling thread.  Arming polls once, and every checkpoint the phase
/// emits polls again: a poll samples `progress` (a completion fraction in
/// [0, 1]) and fires every not-yet-fired fault whose trigger point is at
/// or behind it.  The immediate poll matters on a loaded machine, where a
/// late-scheduled worker can find the phase already finished by its peers
/// and would otherwise never pass a checkpoint; firing on its first step
/// models a thread that dies before contributing anything.  A delay
/// sleeps once on the faulting thread and resumes; a crash throws
/// ThreadCrash, which the worker body is expected to catch at its
/// outermost level and then stop for good.
class FaultArm : public ThreadHooks {
  public:
    FaultArm(const FaultPlan& plan, std::uint32_t thread, Phase phase,
             std::function<double()> progress)
        : progress_(std::move(progress)), scope_(this) {
        for (const FaultSpec& f : plan.faults)
            if (f.thread == thread && f.phase == phase) armed_.push_back({f, false});
        remaining_ = std::uint32_t(armed_.size());
        poll();
    }

    void at(const CheckpointInfo&) override { poll(); }

    std::uint32_t fired() const { return std::uint32_t(armed_.size()) - remaining_; }

  private:
    struct Armed {
        FaultSpec spec;
        bool fired;
    };

    void poll() {
        if (remaining_ == 0) return;
        const double p = progress_();
        for (Armed& a : armed_) {
            if (a.fired || p < a.spec.at) continue;
            a.fired = true;
            --remaining_;
            if (a.spec.kind == FaultSpec::Kind::crash) throw ThreadCrash{};
            std::this_thread::sleep_for(a.spec.delay);
        }
    }

    std::vector<Armed> armed_;
    std::function<double()> progress_;
    std::uint32_t remaining_ = 0;
    HookScope scope_;
};

}  // namespace tsidx

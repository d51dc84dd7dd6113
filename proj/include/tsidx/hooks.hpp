#pragma once

#include <cstdint>

namespace tsidx {

/// Named instrumentation points on the concurrent paths.  Production runs
/// leave the thread-local hook unset, so a checkpoint is a single predicted
/// branch; tests and the fault injector install hooks to suspend, delay or
/// kill a thread at a precise step.
enum class Checkpoint : std::uint8_t {
    // work engine
    after_acquire,
    before_element,
    before_done_flag,
    before_help,
    after_backoff,
    // tree insert/split protocol
    tree_after_announce,
    tree_after_claim,
    tree_after_publish,
    tree_before_split_snapshot,
    tree_before_install,
};

struct CheckpointInfo {
    Checkpoint point;
    std::uint32_t level = 0;   ///< plan nesting level (0 = top)
    std::uint64_t part = 0;    ///< part / element index when applicable
};

class ThreadHooks {
  public:
    virtual ~ThreadHooks() = default;
    virtual void at(const CheckpointInfo& info) = 0;
};

/// Thrown by a hook to make the current thread stop taking steps, as a
/// stand-in for a crash.  Workers catch it at their outermost loop and
/// simply never act again.
struct ThreadCrash {};

inline thread_local ThreadHooks* t_hooks = nullptr;

inline void checkpoint(Checkpoint p, std::uint32_t level = 0, std::uint64_t part = 0) {
    if (ThreadHooks* h = t_hooks) h->at({p, level, part});
}

/// Installs a hook for the current scope (worker body or test section).
class HookScope {
  public:
    explicit HookScope(ThreadHooks* h) : prev_(t_hooks) { t_hooks = h; }
    ~HookScope() { t_hooks = prev_; }
    HookScope(const HookScope&) = delete;
    HookScope& operator=(const HookScope&) = delete;

  private:
    ThreadHooks* prev_;
};

}  // namespace tsidx

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>

#include "io_lane.hpp"
#include "planner.hpp"
#include "residency.hpp"
#include "store.hpp"
#include "thread_pool.hpp"

namespace oocsvd {

enum class MatrixRole : std::uint8_t { input, created };

/// Everything an operation needs besides its operands: the block store,
/// budget, worker pool, I/O lane and instrumentation. No global state.
class ExecutionContext {
  public:
    struct Options {
        std::filesystem::path workdir;  // empty: no out-of-core storage
        MemoryBudget budget;
        std::size_t threads = 1;
        bool async_io = true;
        std::uint64_t min_ops_per_thread = kDefaultMinOpsPerThread;
    };

    static std::shared_ptr<ExecutionContext> make(Options opts) {
        return std::shared_ptr<ExecutionContext>(new ExecutionContext(std::move(opts)));
    }
    static std::shared_ptr<ExecutionContext> in_core(std::size_t threads = 1) {
        Options o;
        o.threads = threads;
        return make(std::move(o));
    }

    BlockStore* store() noexcept { return store_.get(); }
    const MemoryBudget& budget() const noexcept { return opts_.budget; }
    ResidencyTracker& tracker() noexcept { return tracker_; }
    ThreadPool& pool() noexcept { return pool_; }
    IoLane& lane() noexcept { return lane_; }
    std::uint64_t min_ops_per_thread() const noexcept { return opts_.min_ops_per_thread; }
    std::size_t threads() const noexcept { return pool_.size(); }

    /// Resident-byte limit for one matrix. With a global limit, each matrix
    /// is additionally held to a third of it so that any operand triple of a
    /// single step fits at once.
    std::optional<std::uint64_t> limit_for(MatrixRole role) const noexcept {
        std::optional<std::uint64_t> l =
            role == MatrixRole::input ? opts_.budget.effective_per_matrix() : opts_.budget.effective_new_matrix();
        if (opts_.budget.global) {
            const std::uint64_t cap = std::max<std::uint64_t>(*opts_.budget.global / 3, 1);
            l = l ? std::min(*l, cap) : cap;
        }
        return l;
    }

    std::uint32_t allocate_temp_id() noexcept { return next_temp_.fetch_add(1); }

    /// Multiply-add counter fed by the kernels.
    std::atomic<std::uint64_t>& multiply_adds() noexcept { return madds_; }

  private:
    explicit ExecutionContext(Options opts)
        : opts_(std::move(opts)), pool_(opts_.threads), lane_(opts_.async_io) {
        if (!opts_.workdir.empty()) store_ = std::make_unique<BlockStore>(opts_.workdir);
        tracker_.set_global_limit(opts_.budget.global);
    }

    Options opts_;
    std::unique_ptr<BlockStore> store_;
    ResidencyTracker tracker_;
    ThreadPool pool_;
    IoLane lane_;
    std::atomic<std::uint32_t> next_temp_{1u << 24};
    std::atomic<std::uint64_t> madds_{0};
};

using ContextPtr = std::shared_ptr<ExecutionContext>;

}  // namespace oocsvd

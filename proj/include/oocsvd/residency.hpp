#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>

namespace oocsvd {

/// Instrumented accounting of resident tile payload bytes. Every tile
/// allocation and release in a TiledMatrix reports here; exceeding a
/// matrix's limit or the global limit is recorded as a violation.
class ResidencyTracker {
  public:
    struct MatrixStats {
        std::uint64_t current = 0;
        std::uint64_t peak = 0;
        std::optional<std::uint64_t> limit;
    };

    void set_global_limit(std::optional<std::uint64_t> limit) {
        std::lock_guard lk(mu_);
        global_limit_ = limit;
    }

    void on_alloc(std::uint32_t matrix, std::uint64_t bytes, std::optional<std::uint64_t> limit) {
        std::lock_guard lk(mu_);
        auto& s = stats_[matrix];
        s.limit = limit;
        s.current += bytes;
        if (s.current > s.peak) s.peak = s.current;
        if (limit && s.current > *limit) ++violations_;
        total_ += bytes;
        if (total_ > total_peak_) total_peak_ = total_;
        if (global_limit_ && total_ > *global_limit_) ++violations_;
    }

    void on_free(std::uint32_t matrix, std::uint64_t bytes) {
        std::lock_guard lk(mu_);
        auto& s = stats_[matrix];
        s.current -= bytes;
        total_ -= bytes;
    }

    void on_workspace(std::int64_t delta) {
        std::lock_guard lk(mu_);
        workspace_ = static_cast<std::uint64_t>(static_cast<std::int64_t>(workspace_) + delta);
        if (workspace_ > workspace_peak_) workspace_peak_ = workspace_;
    }

    std::uint64_t peak(std::uint32_t matrix) const {
        std::lock_guard lk(mu_);
        auto it = stats_.find(matrix);
        return it == stats_.end() ? 0 : it->second.peak;
    }
    std::uint64_t current(std::uint32_t matrix) const {
        std::lock_guard lk(mu_);
        auto it = stats_.find(matrix);
        return it == stats_.end() ? 0 : it->second.current;
    }
    std::uint64_t max_matrix_peak() const {
        std::lock_guard lk(mu_);
        std::uint64_t m = 0;
        for (const auto& [id, s] : stats_) m = s.peak > m ? s.peak : m;
        return m;
    }
    std::map<std::uint32_t, MatrixStats> snapshot() const {
        std::lock_guard lk(mu_);
        return stats_;
    }
    std::uint64_t total_peak() const {
        std::lock_guard lk(mu_);
        return total_peak_;
    }
    std::uint64_t workspace_peak() const {
        std::lock_guard lk(mu_);
        return workspace_peak_;
    }
    std::uint64_t violations() const {
        std::lock_guard lk(mu_);
        return violations_;
    }

  private:
    mutable std::mutex mu_;
    std::map<std::uint32_t, MatrixStats> stats_;
    std::optional<std::uint64_t> global_limit_;
    std::uint64_t total_ = 0;
    std::uint64_t total_peak_ = 0;
    std::uint64_t workspace_ = 0;
    std::uint64_t workspace_peak_ = 0;
    std::uint64_t violations_ = 0;
};

}  // namespace oocsvd

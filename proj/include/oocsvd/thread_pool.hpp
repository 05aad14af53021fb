#pragma once

#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace oocsvd {

/// Fixed worker pool. `parallel_for` splits [0, n) into `parts` contiguous
/// chunks, runs them on up to `parts` workers (the caller takes chunk 0)
/// and blocks until all finish.
class ThreadPool {
  public:
    explicit ThreadPool(std::size_t workers = std::thread::hardware_concurrency()) {
        if (workers == 0) workers = 1;
        for (std::size_t i = 1; i < workers; ++i) threads_.emplace_back([this] { run(); });
        size_ = workers;
    }
    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;
    ~ThreadPool() {
        {
            std::lock_guard lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    std::size_t size() const noexcept { return size_; }

    template <class Fn>
    void parallel_for(std::size_t n, std::size_t parts, Fn&& fn) {
        if (parts > size_) parts = size_;
        if (parts > n) parts = n;
        if (parts <= 1) {
            if (n > 0) fn(std::size_t{0}, n);
            return;
        }
        std::mutex done_mu;
        std::condition_variable done_cv;
        std::size_t remaining = parts - 1;
        std::exception_ptr error;
        auto chunk = [&](std::size_t p) {
            return std::pair{n * p / parts, n * (p + 1) / parts};
        };
        {
            std::lock_guard lk(mu_);
            for (std::size_t p = 1; p < parts; ++p)
                queue_.emplace_back([&, p] {
                    try {
                        auto [b, e] = chunk(p);
                        fn(b, e);
                    } catch (...) {
                        std::lock_guard g(done_mu);
                        if (!error) error = std::current_exception();
                    }
                    std::lock_guard g(done_mu);
                    if (--remaining == 0) done_cv.notify_one();
                });
        }
        cv_.notify_all();
        auto [b, e] = chunk(0);
        try {
            fn(b, e);
        } catch (...) {
            std::lock_guard g(done_mu);
            if (!error) error = std::current_exception();
        }
        std::unique_lock lk(done_mu);
        done_cv.wait(lk, [&] { return remaining == 0; });
        if (error) std::rethrow_exception(error);
    }

  private:
    void run() {
        for (;;) {
            std::function<void()> job;
            {
                std::unique_lock lk(mu_);
                cv_.wait(lk, [&] { return stop_ || !queue_.empty(); });
                if (stop_ && queue_.empty()) return;
                job = std::move(queue_.back());
                queue_.pop_back();
            }
            job();
        }
    }

    std::vector<std::thread> threads_;
    std::vector<std::function<void()>> queue_;
    std::mutex mu_;
    std::condition_variable cv_;
    bool stop_ = false;
    std::size_t size_ = 1;
};

}  // namespace oocsvd

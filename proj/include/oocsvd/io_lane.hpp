#pragma once

#include <sys/resource.h>
#include <sys/syscall.h>
#include <unistd.h>

#include <condition_variable>
#include <deque>
#include <exception>
#include <functional>
#include <future>
#include <mutex>
#include <thread>

namespace oocsvd {

/// Background writer for evicted tiles. Runs at lowered scheduling
/// priority; compute threads only wait on it when a reload needs a tile
/// still in flight or a budget cannot otherwise be met.
class IoLane {
  public:
    explicit IoLane(bool asynchronous = true) : async_(asynchronous) {
        if (async_) worker_ = std::thread([this] { run(); });
    }
    IoLane(const IoLane&) = delete;
    IoLane& operator=(const IoLane&) = delete;
    ~IoLane() {
        if (!async_) return;
        {
            std::lock_guard lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        worker_.join();
    }

    bool asynchronous() const noexcept { return async_; }

    std::shared_future<void> submit(std::function<void()> job) {
        std::packaged_task<void()> task(std::move(job));
        std::shared_future<void> fut = task.get_future().share();
        if (!async_) {
            task();
            return fut;
        }
        {
            std::lock_guard lk(mu_);
            queue_.push_back(std::move(task));
        }
        cv_.notify_one();
        return fut;
    }

  private:
    void run() {
        ::setpriority(PRIO_PROCESS, static_cast<id_t>(::syscall(SYS_gettid)), 10);
        for (;;) {
            std::packaged_task<void()> task;
            {
                std::unique_lock lk(mu_);
                cv_.wait(lk, [&] { return stop_ || !queue_.empty(); });
                if (queue_.empty()) return;
                task = std::move(queue_.front());
                queue_.pop_front();
            }
            task();
        }
    }

    bool async_;
    std::thread worker_;
    std::deque<std::packaged_task<void()>> queue_;
    std::mutex mu_;
    std::condition_variable cv_;
    bool stop_ = false;
};

}  // namespace oocsvd

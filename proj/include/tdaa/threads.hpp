#pragma once

#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace tdaa {

// Small shared worker pool. Work is always split into a fixed number of
// chunks that does not depend on the worker count, and any floating-point
// reduction happens afterwards in chunk order, so numerical results are
// independent of TDAA_THREADS.
class ThreadPool {
  public:
    static ThreadPool& instance() {
        static ThreadPool pool(env_thread_count());
        return pool;
    }

    int size() const { return static_cast<int>(workers_.size()) + 1; }

    // Runs fn(i) for i in [0, n). Blocks until all tasks finish. Exceptions
    // from tasks are rethrown on the calling thread (first one wins).
    void parallel_for(int n, const std::function<void(int)>& fn) {
        if (n <= 0) return;
        if (n == 1 || workers_.empty()) {
            for (int i = 0; i < n; ++i) fn(i);
            return;
        }
        std::unique_lock lock(mu_);
        job_ = &fn;
        job_size_ = n;
        next_ = 0;
        done_ = 0;
        error_ = nullptr;
        ++generation_;
        cv_work_.notify_all();
        // The calling thread participates too.
        lock.unlock();
        run_tasks();
        lock.lock();
        cv_done_.wait(lock, [&] { return done_ == job_size_; });
        job_ = nullptr;
        if (error_) std::rethrow_exception(error_);
    }

    ~ThreadPool() {
        {
            std::lock_guard lock(mu_);
            stop_ = true;
            cv_work_.notify_all();
        }
        for (auto& t : workers_) t.join();
    }

  private:
    explicit ThreadPool(int threads) {
        for (int i = 1; i < threads; ++i)
            workers_.emplace_back([this] { worker_loop(); });
    }

    static int env_thread_count() {
        if (const char* env = std::getenv("TDAA_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        unsigned hc = std::thread::hardware_concurrency();
        return hc == 0 ? 1 : static_cast<int>(hc);
    }

    void run_tasks() {
        while (true) {
            int i;
            {
                std::lock_guard lock(mu_);
                if (!job_ || next_ >= job_size_) return;
                i = next_++;
            }
            try {
                (*job_)(i);
            } catch (...) {
                std::lock_guard lock(mu_);
                if (!error_) error_ = std::current_exception();
            }
            std::lock_guard lock(mu_);
            if (++done_ == job_size_) cv_done_.notify_all();
        }
    }

    void worker_loop() {
        uint64_t seen = 0;
        while (true) {
            {
                std::unique_lock lock(mu_);
                cv_work_.wait(lock, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
            }
            run_tasks();
        }
    }

    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_work_, cv_done_;
    const std::function<void(int)>* job_ = nullptr;
    int job_size_ = 0, next_ = 0, done_ = 0;
    uint64_t generation_ = 0;
    bool stop_ = false;
    std::exception_ptr error_;
};

inline void parallel_for(int n, const std::function<void(int)>& fn) {
    ThreadPool::instance().parallel_for(n, fn);
}

}  // namespace tdaa

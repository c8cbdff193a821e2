#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace misr {

// Shared worker pool for the heavy kernels (attention, conv, matmul).
//
// parallel_for splits [0,n) into a fixed number of contiguous chunks that does
// not depend on the worker count, and every output element is written by
// exactly one chunk. Results are therefore bit-identical for any thread
// setting; only wall time changes.
class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    void set_threads(int n) {
        std::unique_lock lk(user_mutex_);
        stop_workers();
        threads_ = n < 1 ? 1 : n;
        start_workers();
    }

    int threads() const { return threads_; }

    // fn(chunk, lo, hi) processes the half-open index range [lo, hi); chunk is
    // the deterministic partition index in [0, n_chunks).
    void for_chunks(std::size_t n, std::size_t n_chunks,
                    const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
        if (n == 0) return;
        if (n_chunks > n) n_chunks = n;
        if (threads_ <= 1 || n_chunks <= 1 || in_parallel_region) {
            for (std::size_t c = 0; c < n_chunks; ++c) {
                std::size_t lo = n * c / n_chunks;
                std::size_t hi = n * (c + 1) / n_chunks;
                if (lo < hi) fn(c, lo, hi);
            }
            return;
        }
        std::unique_lock lk(user_mutex_);  // one job at a time
        auto job = std::make_shared<Job>();
        job->fn = &fn;
        job->n = n;
        job->chunks = n_chunks;
        job->pending.store(static_cast<long>(n_chunks), std::memory_order_release);
        {
            std::lock_guard jlk(job_mutex_);
            job_ = job;
            ++generation_;
        }
        job_cv_.notify_all();
        run_chunks(*job);  // caller participates
        std::unique_lock dlk(done_mutex_);
        done_cv_.wait(dlk, [&] { return job->pending.load(std::memory_order_acquire) == 0; });
        std::lock_guard jlk(job_mutex_);
        job_.reset();
    }

private:
    struct Job {
        const std::function<void(std::size_t, std::size_t, std::size_t)>* fn = nullptr;
        std::size_t n = 0;
        std::size_t chunks = 0;
        std::atomic<std::size_t> next{0};
        std::atomic<long> pending{0};
    };

    ThreadPool() {
        threads_ = default_threads();
        start_workers();
    }
    ~ThreadPool() { stop_workers(); }

    static int default_threads() {
        if (const char* env = std::getenv("MISR_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : static_cast<int>(hw);
    }

    void start_workers() {
        stopping_ = false;
        for (int i = 1; i < threads_; ++i) {
            workers_.emplace_back([this] { worker_loop(); });
        }
    }

    void stop_workers() {
        {
            std::lock_guard lk(job_mutex_);
            stopping_ = true;
            ++generation_;
        }
        job_cv_.notify_all();
        for (auto& t : workers_) t.join();
        workers_.clear();
    }

    void worker_loop() {
        std::uint64_t seen = 0;
        for (;;) {
            std::shared_ptr<Job> job;
            {
                std::unique_lock lk(job_mutex_);
                job_cv_.wait(lk, [&] { return generation_ != seen || stopping_; });
                if (stopping_) return;
                seen = generation_;
                job = job_;
            }
            if (job) run_chunks(*job);
        }
    }

    void run_chunks(Job& job) {
        in_parallel_region = true;
        for (;;) {
            std::size_t c = job.next.fetch_add(1, std::memory_order_relaxed);
            if (c >= job.chunks) break;
            std::size_t lo = job.n * c / job.chunks;
            std::size_t hi = job.n * (c + 1) / job.chunks;
            if (lo < hi) (*job.fn)(c, lo, hi);
            if (job.pending.fetch_sub(1, std::memory_order_acq_rel) == 1) {
                std::lock_guard lk(done_mutex_);
                done_cv_.notify_all();
            }
        }
        in_parallel_region = false;
    }

    static thread_local bool in_parallel_region;

    int threads_ = 1;
    bool stopping_ = false;
    std::uint64_t generation_ = 0;
    std::vector<std::thread> workers_;
    std::mutex user_mutex_;
    std::mutex job_mutex_;
    std::condition_variable job_cv_;
    std::mutex done_mutex_;
    std::condition_variable done_cv_;
    std::shared_ptr<Job> job_;
};

inline thread_local bool ThreadPool::in_parallel_region = false;

// Fixed chunk count keeps the index->chunk mapping independent of the worker
// count; 64 gives decent load balance on the row-parallel kernels.
inline constexpr std::size_t kParallelChunks = 64;

inline void parallel_for(std::size_t n,
                         const std::function<void(std::size_t, std::size_t)>& fn) {
    ThreadPool::instance().for_chunks(
        n, kParallelChunks,
        [&fn](std::size_t, std::size_t lo, std::size_t hi) { fn(lo, hi); });
}

// Variant exposing the deterministic chunk index, for per-chunk partial
// reductions that must merge in a fixed order.
inline void parallel_for_indexed(
    std::size_t n, const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    ThreadPool::instance().for_chunks(n, kParallelChunks, fn);
}

inline void set_threads(int n) { ThreadPool::instance().set_threads(n); }

}  // namespace misr

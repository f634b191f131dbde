#include "ritseg/parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace ritseg {

namespace {

int env_thread_count() {
    if (const char* s = std::getenv("RITSEG_THREADS")) {
        int n = std::atoi(s);
        if (n > 0) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

thread_local bool tl_in_parallel_region = false;

// Fixed-range pool: job k assigns participant i the slice
// [i*n/T, (i+1)*n/T). Each worker runs its slice exactly once per job, so a
// finished job can never leak into the next one.
class Pool {
public:
    explicit Pool(int workers) : workers_(workers) {
        for (int i = 0; i < workers; ++i)
            threads_.emplace_back([this, i] { worker_loop(i + 1); }); // slot 0 = caller
    }

    ~Pool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    void run(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
        std::lock_guard<std::mutex> job_lk(run_mu_); // one job at a time
        const int parts = workers_ + 1;
        {
            std::lock_guard<std::mutex> lk(mu_);
            job_fn_ = &fn;
            job_n_ = n;
            job_parts_ = parts;
            pending_.store(workers_, std::memory_order_release);
            ++generation_;
        }
        cv_.notify_all();
        run_slice(0);
        std::unique_lock<std::mutex> lk(mu_);
        done_cv_.wait(lk, [this] { return pending_.load(std::memory_order_acquire) == 0; });
    }

private:
    void run_slice(int slot) {
        std::size_t lo = static_cast<std::size_t>(slot) * job_n_ / job_parts_;
        std::size_t hi = static_cast<std::size_t>(slot + 1) * job_n_ / job_parts_;
        if (lo < hi) {
            tl_in_parallel_region = true;
            (*job_fn_)(lo, hi);
            tl_in_parallel_region = false;
        }
    }

    void worker_loop(int slot) {
        std::uint64_t seen = 0;
        for (;;) {
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
            }
            run_slice(slot);
            if (pending_.fetch_sub(1, std::memory_order_acq_rel) == 1) {
                std::lock_guard<std::mutex> lk(mu_);
                done_cv_.notify_all();
            }
        }
    }

    const int workers_;
    std::vector<std::thread> threads_;
    std::mutex run_mu_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    bool stop_ = false;
    std::uint64_t generation_ = 0;

    const std::function<void(std::size_t, std::size_t)>* job_fn_ = nullptr;
    std::size_t job_n_ = 0;
    int job_parts_ = 1;
    std::atomic<int> pending_{0};
};

int g_threads = 0;
Pool* g_pool = nullptr;
std::mutex g_pool_mu;

} // namespace

int thread_count() {
    std::lock_guard<std::mutex> lk(g_pool_mu);
    if (g_threads == 0) g_threads = env_thread_count();
    return g_threads;
}

void set_thread_count(int n) {
    std::lock_guard<std::mutex> lk(g_pool_mu);
    if (n < 1) n = 1;
    if (n != g_threads && g_pool) {
        delete g_pool;
        g_pool = nullptr;
    }
    g_threads = n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    int tc = thread_count();
    if (tc <= 1 || n == 1 || tl_in_parallel_region) {
        fn(0, n); // nested calls run inline
        return;
    }
    Pool* pool;
    {
        std::lock_guard<std::mutex> lk(g_pool_mu);
        if (!g_pool) g_pool = new Pool(g_threads - 1);
        pool = g_pool;
    }
    pool->run(n, fn);
}

} // namespace ritseg

#include "aflow/parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "aflow/errors.hpp"

namespace aflow {
namespace {

thread_local bool tl_inside_job = false;

struct Job {
  const std::function<void(std::int64_t, std::int64_t)>* fn = nullptr;
  std::int64_t n = 0;
  int parts = 0;
  std::atomic<int> next_part{0};
  std::atomic<int> completed{0};
};

class Pool {
 public:
  static Pool& instance() {
    static Pool pool;
    return pool;
  }

  void set_threads(int n) {
    if (n < 1) {
      throw UsageError("thread count must be >= 1");
    }
    std::unique_lock lock(mutex_);
    if (n - 1 == workers_target_) {
      return;
    }
    stop_workers(lock);
    workers_target_ = n - 1;  // the calling thread participates
    start_workers();
  }

  int threads() {
    std::unique_lock lock(mutex_);
    return workers_target_ + 1;
  }

  void run(std::int64_t n, std::int64_t min_per_thread, const std::function<void(std::int64_t, std::int64_t)>& fn) {
    std::shared_ptr<Job> job;
    {
      std::unique_lock lock(mutex_);
      int parts = workers_target_ + 1;
      if (min_per_thread > 0) {
        const std::int64_t cap = n / min_per_thread;
        if (cap < parts) {
          parts = static_cast<int>(cap);
        }
      }
      if (tl_inside_job || parts < 2) {
        lock.unlock();
        fn(0, n);
        return;
      }
      job = std::make_shared<Job>();
      job->fn = &fn;
      job->n = n;
      job->parts = parts;
      current_job_ = job;
      ++generation_;
    }
    work_cv_.notify_all();

    tl_inside_job = true;
    claim_and_run(*job);
    tl_inside_job = false;

    std::unique_lock lock(mutex_);
    done_cv_.wait(lock, [&] { return job->completed.load(std::memory_order_acquire) == job->parts; });
    if (current_job_ == job) {
      current_job_.reset();
    }
  }

 private:
  Pool() = default;

  ~Pool() {
    std::unique_lock lock(mutex_);
    stop_workers(lock);
  }

  void start_workers() {
    shutdown_ = false;
    for (int i = 0; i < workers_target_; ++i) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  void stop_workers(std::unique_lock<std::mutex>& lock) {
    shutdown_ = true;
    ++generation_;
    lock.unlock();
    work_cv_.notify_all();
    for (auto& t : workers_) {
      t.join();
    }
    lock.lock();
    workers_.clear();
  }

  void worker_loop() {
    std::uint64_t seen = 0;
    for (;;) {
      std::shared_ptr<Job> job;
      {
        std::unique_lock lock(mutex_);
        work_cv_.wait(lock, [&] { return shutdown_ || generation_ != seen; });
        seen = generation_;
        if (shutdown_) {
          return;
        }
        job = current_job_;
      }
      if (!job) {
        continue;
      }
      tl_inside_job = true;
      claim_and_run(*job);
      tl_inside_job = false;
    }
  }

  void claim_and_run(Job& job) {
    for (;;) {
      const int part = job.next_part.fetch_add(1, std::memory_order_relaxed);
      if (part >= job.parts) {
        return;
      }
      const std::int64_t begin = job.n * part / job.parts;
      const std::int64_t end = job.n * (part + 1) / job.parts;
      if (begin < end) {
        (*job.fn)(begin, end);
      }
      if (job.completed.fetch_add(1, std::memory_order_acq_rel) + 1 == job.parts) {
        // Touch the mutex so the waiter's predicate check cannot miss the update.
        { std::unique_lock lock(mutex_); }
        done_cv_.notify_all();
      }
    }
  }

  std::mutex mutex_;
  std::condition_variable work_cv_;
  std::condition_variable done_cv_;
  std::vector<std::thread> workers_;
  int workers_target_ = 0;
  bool shutdown_ = false;
  std::uint64_t generation_ = 0;
  std::shared_ptr<Job> current_job_;
};

}  // namespace

void set_thread_count(int n) { Pool::instance().set_threads(n); }

int thread_count() { return Pool::instance().threads(); }

void parallel_for(std::int64_t n, std::int64_t min_per_thread, const std::function<void(std::int64_t, std::int64_t)>& fn) {
  if (n <= 0) {
    return;
  }
  Pool::instance().run(n, min_per_thread, fn);
}

}  // namespace aflow

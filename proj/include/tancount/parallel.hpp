#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace tancount {

/// Persistent worker pool driving intra-op parallelism. Ranges are split into
/// one contiguous chunk per worker, so the work partition is a pure function
/// of (range, thread count) and every output element is produced by exactly
/// one chunk with a fixed internal reduction order.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  ~ThreadPool() { shutdown(); }

  void set_threads(int n) {
    if (n < 1) n = 1;
    std::unique_lock<std::mutex> guard(api_mutex_);
    if (n == n_threads_) return;
    shutdown();
    n_threads_ = n;
    spawn();
  }

  int threads() const { return n_threads_; }

  /// Runs fn(chunk_begin, chunk_end) over a partition of [begin, end).
  void parallel_for(int64_t begin, int64_t end,
                    const std::function<void(int64_t, int64_t)>& fn) {
    if (end <= begin) return;
    int64_t n = end - begin;
    if (n_threads_ == 1 || n == 1 || in_worker()) {
      fn(begin, end);
      return;
    }
    std::unique_lock<std::mutex> guard(api_mutex_);
    int chunks = static_cast<int>(std::min<int64_t>(n_threads_, n));
    int64_t step = (n + chunks - 1) / chunks;
    {
      std::lock_guard<std::mutex> lk(mutex_);
      job_ = &fn;
      job_begin_ = begin;
      job_end_ = end;
      job_step_ = step;
      next_chunk_ = 0;
      total_chunks_ = chunks;
      done_chunks_ = 0;
      ++job_id_;
    }
    cv_.notify_all();
    // The calling thread works too.
    worker_loop_once();
    std::unique_lock<std::mutex> lk(mutex_);
    done_cv_.wait(lk, [this] { return done_chunks_ == total_chunks_; });
    job_ = nullptr;
  }

 private:
  ThreadPool() : n_threads_(1) {}

  static bool& in_worker() {
    thread_local bool flag = false;
    return flag;
  }

  void spawn() {
    stop_ = false;
    for (int i = 1; i < n_threads_; ++i) {
      workers_.emplace_back([this] {
        in_worker() = true;
        uint64_t seen = 0;
        while (true) {
          std::unique_lock<std::mutex> lk(mutex_);
          cv_.wait(lk, [&] { return stop_ || job_id_ != seen; });
          if (stop_) return;
          seen = job_id_;
          lk.unlock();
          worker_loop_once();
        }
      });
    }
  }

  void worker_loop_once() {
    while (true) {
      int chunk;
      {
        std::lock_guard<std::mutex> lk(mutex_);
        if (job_ == nullptr || next_chunk_ >= total_chunks_) return;
        chunk = next_chunk_++;
      }
      int64_t b = job_begin_ + chunk * job_step_;
      int64_t e = std::min(job_end_, b + job_step_);
      if (b < e) (*job_)(b, e);
      {
        std::lock_guard<std::mutex> lk(mutex_);
        ++done_chunks_;
        if (done_chunks_ == total_chunks_) done_cv_.notify_all();
      }
    }
  }

  void shutdown() {
    {
      std::lock_guard<std::mutex> lk(mutex_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
    workers_.clear();
  }

  std::mutex api_mutex_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  std::vector<std::thread> workers_;
  int n_threads_ = 1;
  bool stop_ = false;

  const std::function<void(int64_t, int64_t)>* job_ = nullptr;
  int64_t job_begin_ = 0, job_end_ = 0, job_step_ = 0;
  int next_chunk_ = 0, total_chunks_ = 0, done_chunks_ = 0;
  uint64_t job_id_ = 0;
};

inline void parallel_for(int64_t begin, int64_t end,
                         const std::function<void(int64_t, int64_t)>& fn) {
  ThreadPool::instance().parallel_for(begin, end, fn);
}

}  // namespace tancount

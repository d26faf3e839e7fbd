// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The propy authors
#pragma once

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace propy {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string &msg)
      : std::runtime_error(msg), kind_(std::move(kind)) {}
  const std::string &kind() const { return kind_; }

private:
  std::string kind_;
};

#define PROPY_DEFINE_ERROR(NAME)                                               \
  class NAME : public Error {                                                  \
  public:                                                                      \
    explicit NAME(const std::string &msg) : Error(#NAME, msg) {}               \
  }

PROPY_DEFINE_ERROR(ConfigError);
PROPY_DEFINE_ERROR(DivisibilityError);
PROPY_DEFINE_ERROR(TopLayerError);
PROPY_DEFINE_ERROR(NonPositiveLayerError);
PROPY_DEFINE_ERROR(IndexError);
PROPY_DEFINE_ERROR(ShapeError);
PROPY_DEFINE_ERROR(MaskShapeError);
PROPY_DEFINE_ERROR(UnknownMechanismError);
PROPY_DEFINE_ERROR(LengthError);
PROPY_DEFINE_ERROR(UnknownTokenError);
PROPY_DEFINE_ERROR(VocabTooSmallError);
PROPY_DEFINE_ERROR(EmptyLevelError);
PROPY_DEFINE_ERROR(NaNLossError);
PROPY_DEFINE_ERROR(TieError);
PROPY_DEFINE_ERROR(EmptyCorpusError);
PROPY_DEFINE_ERROR(MissingGroundTruthError);
PROPY_DEFINE_ERROR(VersionError);
PROPY_DEFINE_ERROR(CorruptBlobError);
PROPY_DEFINE_ERROR(IoError);

#undef PROPY_DEFINE_ERROR

// ---------------------------------------------------------------------------
// Deterministic RNG
//
// All randomness in the library flows through this generator so that results
// are reproducible bit-for-bit on a given machine. splitmix64 is used both as
// the stream-derivation mix function and to seed the main state.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class Rng {
public:
  explicit Rng(std::uint64_t seed) {
    // xoshiro256** state, seeded via splitmix64.
    std::uint64_t x = seed;
    for (auto &w : s_) {
      x = splitmix64(x);
      w = x;
    }
  }

  // Derives an independent stream; mixing is documented so that callers can
  // reproduce sub-seeds externally.
  Rng stream(std::uint64_t id) const {
    return Rng(splitmix64(seed_mix_ ^ splitmix64(id + 0x1234567887654321ULL)));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; one draw per call (the pair's second member is discarded to
  // keep the stream position independent of call parity).
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Integer in [lo, hi] inclusive.
  std::int64_t range(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = std::uint64_t(hi - lo) + 1;
    return lo + std::int64_t(next_u64() % span);
  }

private:
  explicit Rng(std::uint64_t seed, int) : Rng(seed) {}

  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4]{};
  std::uint64_t seed_mix_ = 0;

  friend class RngFactory;

public:
  // Keeps the originating seed so stream() derivation is stable no matter how
  // many draws have been consumed from this instance.
  static Rng with_base(std::uint64_t seed) {
    Rng r(seed);
    r.seed_mix_ = seed;
    return r;
  }
};

// ---------------------------------------------------------------------------
// float32 grid
//
// Parameters live on the float32 grid at every external write point (init,
// optimizer update, checkpoint load) so that the 32-bit on-disk format
// round-trips without loss. Intermediate math stays in double.
// ---------------------------------------------------------------------------

inline double to_f32_grid(double x) { return double(float(x)); }

// ---------------------------------------------------------------------------
// Parallel for
//
// Work is partitioned by index so each element is produced by exactly one
// thread in a fixed per-element order; results do not depend on the thread
// count. PROPY_THREADS caps the pool size.
// ---------------------------------------------------------------------------

namespace detail {

class ThreadPool {
public:
  static ThreadPool &instance() {
    static ThreadPool pool;
    return pool;
  }

  int size() const { return int(workers_.size()) + 1; }

  void run(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)> &fn) {
    const int nthreads = size();
    if (n <= 0) return;
    // Nested calls run inline; the pool handles one job at a time.
    if (nthreads == 1 || n == 1 || in_job()) {
      fn(0, n);
      return;
    }
    in_job() = true;
    const std::int64_t chunks = std::min<std::int64_t>(n, nthreads);
    const std::int64_t step = (n + chunks - 1) / chunks;
    std::unique_lock<std::mutex> lk(mu_);
    job_fn_ = &fn;
    job_n_ = n;
    job_step_ = step;
    job_next_.store(0);
    pending_ = chunks;
    epoch_++;
    lk.unlock();
    cv_.notify_all();
    // The calling thread participates.
    work_loop_once();
    std::unique_lock<std::mutex> lk2(mu_);
    done_cv_.wait(lk2, [&] { return pending_ == 0; });
    job_fn_ = nullptr;
  }

private:
  ThreadPool() {
    int n = int(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
    if (const char *env = std::getenv("PROPY_THREADS")) {
      const int cap = std::atoi(env);
      if (cap >= 1) n = std::min(n, cap);
    }
    for (int i = 1; i < n; ++i)
      workers_.emplace_back([this] { worker_main(); });
  }

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto &t : workers_) t.join();
  }

  void worker_main() {
    std::uint64_t seen = 0;
    for (;;) {
      std::unique_lock<std::mutex> lk(mu_);
      cv_.wait(lk, [&] { return stop_ || epoch_ != seen; });
      if (stop_) return;
      seen = epoch_;
      lk.unlock();
      work_loop_once();
    }
  }

  void work_loop_once() {
    for (;;) {
      const std::int64_t begin = job_next_.fetch_add(job_step_);
      if (begin >= job_n_) break;
      const std::int64_t end = std::min(job_n_, begin + job_step_);
      (*job_fn_)(begin, end);
      std::lock_guard<std::mutex> lk(mu_);
      if (--pending_ == 0) done_cv_.notify_all();
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  bool stop_ = false;
  std::uint64_t epoch_ = 0;
  const std::function<void(std::int64_t, std::int64_t)> *job_fn_ = nullptr;
  std::int64_t job_n_ = 0, job_step_ = 1;
  std::atomic<std::int64_t> job_next_{0};
  int pending_ = 0;
};

} // namespace detail

// Runs fn over [0, n) ranges. Each index is processed exactly once; writes
// from different ranges must not alias.
inline void parallel_for(std::int64_t n,
                         const std::function<void(std::int64_t, std::int64_t)> &fn) {
  detail::ThreadPool::instance().run(n, fn);
}

inline int thread_count() { return detail::ThreadPool::instance().size(); }

} // namespace propy

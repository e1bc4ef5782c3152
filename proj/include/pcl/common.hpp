#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <istream>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace pcl {

// ---------------------------------------------------------------------------
// Error taxonomy. Contract violations map to CLI exit code 1, I/O to 2.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ContractError : Error {
  using Error::Error;
};
struct DimensionError : ContractError {
  using ContractError::ContractError;
};
struct ParameterError : ContractError {
  using ContractError::ContractError;
};
struct LengthError : ContractError {
  using ContractError::ContractError;
};
struct RangeError : ContractError {
  using ContractError::ContractError;
};
struct FormatError : ContractError {
  using ContractError::ContractError;
};
struct ParseError : ContractError {
  using ContractError::ContractError;
};
struct CapabilityError : ContractError {
  using ContractError::ContractError;
};
struct SamplingError : ContractError {
  using ContractError::ContractError;
};
struct NumericError : ContractError {
  using ContractError::ContractError;
};
struct UnsupportedError : ContractError {
  using ContractError::ContractError;
};
struct AlignmentError : ContractError {
  using ContractError::ContractError;
};
struct IoError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Counter-based RNG. Every random decision in a run derives from one base
// seed plus a labeled stream id, so reruns and per-stream audits are exact.
// ---------------------------------------------------------------------------

namespace streams {
inline constexpr std::uint64_t split = 1;
inline constexpr std::uint64_t init = 2;
inline constexpr std::uint64_t dropout = 3;
inline constexpr std::uint64_t negatives = 4;
inline constexpr std::uint64_t shuffle = 5;
inline constexpr std::uint64_t synth = 6;
inline constexpr std::uint64_t pca = 7;
inline constexpr std::uint64_t subsample = 8;
}  // namespace streams

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class CounterRng {
 public:
  CounterRng() : CounterRng(0, 0, 0) {}
  CounterRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream = 0)
      : key_(mix64(mix64(seed) ^ mix64(stream ^ 0xA5A5A5A5A5A5A5A5ULL) ^
                   mix64(substream ^ 0x5C5C5C5C5C5C5C5CULL))) {}

  std::uint64_t next_u64() { return mix64(key_ ^ (0x9E3779B97F4A7C15ULL * ++counter_)); }

  // [0, 1) with 53 random bits
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }
  float next_float() { return float(next_u64() >> 40) * 0x1.0p-24f; }

  // uniform in [0, n) without modulo bias
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) throw ParameterError("next_below: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  double next_gaussian() {
    // Box-Muller, one value per call (pair not cached to keep the state minimal)
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  std::uint64_t counter() const { return counter_; }
  void reset(std::uint64_t counter = 0) { counter_ = counter; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

template <typename T>
void shuffle(std::vector<T>& v, CounterRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = std::size_t(rng.next_below(i));
    std::swap(v[i - 1], v[j]);
  }
}

// ---------------------------------------------------------------------------
// Worker pool. PCL_THREADS caps parallelism; chunked ranges with a fixed
// partition keep results bit-identical for any thread count.
// ---------------------------------------------------------------------------

inline int max_threads() {
  static int cached = [] {
    if (const char* env = std::getenv("PCL_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : int(hw);
  }();
  return cached;
}

class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool(max_threads() - 1);
    return pool;
  }

  // f(chunk_begin, chunk_end); caller runs chunk 0 itself.
  void run(std::int64_t n, std::int64_t chunks, const std::function<void(std::int64_t, std::int64_t)>& f) {
    if (n <= 0) return;
    chunks = std::min<std::int64_t>(chunks, n);
    if (chunks <= 1 || workers_.empty() || in_worker_) {
      f(0, n);
      return;
    }
    std::unique_lock<std::mutex> lock(m_);
    task_ = &f;
    task_n_ = n;
    task_chunks_ = chunks;
    next_chunk_ = 1;
    pending_ = chunks - 1;
    ++generation_;
    lock.unlock();
    cv_.notify_all();
    run_chunk(0);
    std::unique_lock<std::mutex> wait_lock(m_);
    done_cv_.wait(wait_lock, [&] { return pending_ == 0; });
    task_ = nullptr;
  }

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lock(m_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

 private:
  explicit ThreadPool(int workers) {
    for (int i = 0; i < workers; ++i) workers_.emplace_back([this] { worker_loop(); });
  }

  void run_chunk(std::int64_t c) {
    const std::int64_t per = task_n_ / task_chunks_;
    const std::int64_t extra = task_n_ % task_chunks_;
    const std::int64_t begin = c * per + std::min(c, extra);
    const std::int64_t end = begin + per + (c < extra ? 1 : 0);
    (*task_)(begin, end);
  }

  void worker_loop() {
    in_worker_ = true;
    std::uint64_t seen = 0;
    for (;;) {
      std::unique_lock<std::mutex> lock(m_);
      cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
      if (stop_) return;
      seen = generation_;
      for (;;) {
        std::int64_t c = next_chunk_;
        if (c >= task_chunks_) break;
        next_chunk_ = c + 1;
        lock.unlock();
        run_chunk(c);
        lock.lock();
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  static thread_local bool in_worker_;
  std::vector<std::thread> workers_;
  std::mutex m_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(std::int64_t, std::int64_t)>* task_ = nullptr;
  std::int64_t task_n_ = 0, task_chunks_ = 0, next_chunk_ = 0, pending_ = 0;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
};

inline thread_local bool ThreadPool::in_worker_ = false;

template <class F>
void parallel_for(std::int64_t n, F&& f, std::int64_t grain = 1) {
  if (n <= 0) return;
  const int threads = max_threads();
  std::int64_t chunks = std::min<std::int64_t>(threads, (n + grain - 1) / grain);
  if (chunks <= 1) {
    f(std::int64_t(0), n);
    return;
  }
  std::function<void(std::int64_t, std::int64_t)> fn = std::forward<F>(f);
  ThreadPool::instance().run(n, chunks, fn);
}

// ---------------------------------------------------------------------------
// Little-endian binary I/O
// ---------------------------------------------------------------------------

inline void write_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), std::streamsize(n));
  if (!out) throw IoError("write failed");
}

inline void read_bytes(std::istream& in, void* p, std::size_t n) {
  in.read(static_cast<char*>(p), std::streamsize(n));
  if (std::size_t(in.gcount()) != n) throw FormatError("unexpected end of file");
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v), (unsigned char)(v >> 8), (unsigned char)(v >> 16),
                        (unsigned char)(v >> 24)};
  write_bytes(out, b, 4);
}

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  read_bytes(in, b, 4);
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
  write_u32(out, std::uint32_t(v));
  write_u32(out, std::uint32_t(v >> 32));
}

inline std::uint64_t read_u64(std::istream& in) {
  std::uint64_t lo = read_u32(in);
  std::uint64_t hi = read_u32(in);
  return lo | hi << 32;
}

inline void write_f32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(out, bits);
}

inline float read_f32(std::istream& in) {
  std::uint32_t bits = read_u32(in);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void write_f32_array(std::ostream& out, const float* data, std::size_t n) {
  // x86 and every supported target are little-endian; bulk write is exact
  write_bytes(out, data, n * 4);
}

inline void read_f32_array(std::istream& in, float* data, std::size_t n) {
  read_bytes(in, data, n * 4);
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, std::uint32_t(s.size()));
  write_bytes(out, s.data(), s.size());
}

inline std::string read_string(std::istream& in) {
  std::uint32_t n = read_u32(in);
  if (n > (1u << 20)) throw FormatError("string field too long");
  std::string s(n, '\0');
  if (n) read_bytes(in, s.data(), n);
  return s;
}

}  // namespace pcl

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace cmwm {

// ---------------------------------------------------------------- errors

/// Caller broke an operation's precondition (bad value, bad shape).
struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Caller violated a stateful contract (e.g. step() after done).
struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

/// On-disk artifact is malformed (bad magic, version, truncation).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Training diverged or hit a non-finite value.
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Configuration or missing-prerequisite problem, reported by stage name.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- hashing

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  // splitmix64 finalizer over the pair
  uint64_t z = seed + 0x9e3779b97f4a7c15ull + salt * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline uint64_t mix_seed(uint64_t seed, const std::string& tag) {
  return mix_seed(seed, fnv1a64(tag));
}

// ---------------------------------------------------------------- rng

/// Deterministic RNG. All distribution transforms are written out here so
/// streams are reproducible across standard-library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), state_(seed ? seed : 0x853c49e6748fea9bull) {}

  uint64_t next_u64() {
    // xorshift64* — fast and adequate for simulation/init use
    uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dull;
  }

  /// Uniform double in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be > 0.
  int uniform_int(int n) {
    if (n <= 0) throw InvalidArgument("Rng::uniform_int: n must be positive");
    return int(next_u64() % uint64_t(n));
  }

  /// Standard normal via Box-Muller (cached spare).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 1e-300) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double th = 2.0 * M_PI * u2;
    spare_ = r * std::sin(th);
    has_spare_ = true;
    return r * std::cos(th);
  }

  /// Independent child stream; does not consume from this stream.
  Rng fork(uint64_t salt) const { return Rng(mix_seed(seed_, salt)); }
  Rng fork(const std::string& tag) const { return Rng(mix_seed(seed_, tag)); }

  uint64_t seed() const { return seed_; }

  /// Deterministic Fisher-Yates shuffle of index vector.
  void shuffle(std::vector<int>& v) {
    for (int i = int(v.size()) - 1; i > 0; --i) {
      int j = uniform_int(i + 1);
      std::swap(v[i], v[size_t(j)]);
    }
  }

 private:
  uint64_t seed_;
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------- early stopping

/// Patience-based early stopping: stop after `patience` contiguous epochs
/// whose loss did not improve on the best seen by more than `min_delta`.
class EarlyStopper {
 public:
  EarlyStopper(double min_delta, int patience) : min_delta_(min_delta), patience_(patience) {}

  /// Feed one epoch's monitored loss; returns true when training should stop.
  bool observe(double loss) {
    if (loss < best_ - min_delta_) {
      best_ = loss;
      stagnant_ = 0;
      improved_ = true;
    } else {
      ++stagnant_;
      improved_ = false;
    }
    return stagnant_ >= patience_;
  }

  bool improved_last() const { return improved_; }
  int stagnant_epochs() const { return stagnant_; }
  double best() const { return best_; }

 private:
  double min_delta_;
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int stagnant_ = 0;
  bool improved_ = false;
};

// ---------------------------------------------------------------- parallel map

/// Runs fn(i) for i in [0, n) on `jobs` threads. Tasks must be independent;
/// results are written by index so output order (and content) does not depend
/// on the thread count.
inline void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr err;
  std::mutex err_mu;
  pool.reserve(size_t(jobs));
  for (int t = 0; t < jobs; ++t) {
    pool.emplace_back([&] {
      while (true) {
        int i = next.fetch_add(1);
        if (i >= n) break;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(err_mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------- small file io

inline std::vector<uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw FormatError("cannot open file: " + p.string());
  f.seekg(0, std::ios::end);
  auto n = f.tellg();
  f.seekg(0);
  std::vector<uint8_t> buf(static_cast<size_t>(n), uint8_t(0));
  f.read(reinterpret_cast<char*>(buf.data()), n);
  if (!f) throw FormatError("short read: " + p.string());
  return buf;
}

inline void write_file(const std::filesystem::path& p, const void* data, size_t n) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write file: " + p.string());
  f.write(static_cast<const char*>(data), std::streamsize(n));
  if (!f) throw FormatError("short write: " + p.string());
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  write_file(p, s.data(), s.size());
}

/// Fixed float formatting for CSV/report output (deterministic).
inline std::string fmt_g(double v, int prec = 9) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
  return buf;
}

}  // namespace cmwm

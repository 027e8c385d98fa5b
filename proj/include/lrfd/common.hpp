#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace lrfd {

// Thrown for contract violations (shape mismatches, bad config values).
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when training hits a non-finite loss; carries a snapshot path.
class DivergenceError : public std::runtime_error {
public:
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

template <typename... Args>
[[noreturn]] inline void fail(const Args&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  throw ConfigError(os.str());
}

template <typename... Args>
inline void require(bool cond, const Args&... parts) {
  if (!cond) fail(parts...);
}

// ---------------------------------------------------------------------------
// Deterministic RNG.
//
// std::mt19937_64 is bit-stable everywhere, but the standard distributions
// are not, so uniform/normal draws are mapped by hand. Normal uses
// Box-Muller with a one-value cache, which makes draw order part of the
// stream state.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from (master, stream id).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(master ^ splitmix64(stream + 0x6a09e667f3bcc909ull));
}

class Rng {
public:
  Rng() : Rng(0x5eed) {}
  explicit Rng(std::uint64_t seed) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    state_ = splitmix64(seed ^ 0x243f6a8885a308d3ull);
    if (state_ == 0) state_ = 0x9e3779b97f4a7c15ull;
    have_cached_ = false;
    cached_ = 0.0;
  }

  std::uint64_t next_u64() {
    // xorshift64* — tiny, fast, fully portable.
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dull;
  }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int n) {  // [0, n)
    return int(next_u64() % std::uint64_t(n));
  }

  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = 0.0;
    do { u1 = uniform(); } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  // State round-trips through text for checkpointing.
  std::string save_state() const {
    std::ostringstream os;
    os << state_ << " " << (have_cached_ ? 1 : 0) << " ";
    os.precision(17);
    os << cached_;
    return os.str();
  }

  void load_state(const std::string& s) {
    std::istringstream is(s);
    int flag = 0;
    is >> state_ >> flag >> cached_;
    require(!is.fail(), "bad rng state string: ", s);
    have_cached_ = flag != 0;
  }

private:
  std::uint64_t state_ = 1;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

// ---------------------------------------------------------------------------
// Threading. Workers write disjoint output ranges only, so results are
// bit-identical for every thread count including 1.
// ---------------------------------------------------------------------------

inline std::atomic<int>& thread_count_slot() {
  static std::atomic<int> n{0};  // 0 = use hardware_concurrency
  return n;
}

inline void set_num_threads(int n) { thread_count_slot().store(n); }

inline int num_threads() {
  int n = thread_count_slot().load();
  if (n <= 0) {
    unsigned hw = std::thread::hardware_concurrency();
    n = hw == 0 ? 1 : int(hw);
  }
  return n;
}

// Static block partition of [0, n).
template <typename Fn>
void parallel_for(int n, Fn&& fn) {
  const int nt = std::min(num_threads(), n);
  if (nt <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(nt - 1);
  const int chunk = (n + nt - 1) / nt;
  auto run = [&fn, n, chunk](int t) {
    const int lo = t * chunk;
    const int hi = std::min(n, lo + chunk);
    for (int i = lo; i < hi; ++i) fn(i);
  };
  for (int t = 1; t < nt; ++t) pool.emplace_back(run, t);
  run(0);
  for (auto& th : pool) th.join();
}

}  // namespace lrfd

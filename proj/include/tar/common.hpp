#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tar {

using Shape = std::vector<long>;

// All library failures surface as tar::Error. The message always names the
// operation that raised it so CLI users see something actionable.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

inline long shape_numel(const Shape& s) {
  long n = 1;
  for (long d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

[[noreturn]] inline void fail(const std::string& op, const std::string& msg) {
  throw Error(op + ": " + msg);
}

[[noreturn]] inline void fail_shapes(const std::string& op, const std::string& msg,
                                     const Shape& a, const Shape& b) {
  throw Error(op + ": " + msg + " (" + shape_str(a) + " vs " + shape_str(b) + ")");
}

// Deterministic RNG used everywhere; never seed from the clock.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(eng_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(eng_);
  }
  uint64_t next() { return eng_(); }
  long index(long n) {  // uniform in [0, n)
    return static_cast<long>(std::uniform_int_distribution<uint64_t>(0, n - 1)(eng_));
  }

 private:
  std::mt19937_64 eng_;
};

// Stable seed mixing for derived streams (per-step batch draws, noise fields).
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t x = a + 0x9e3779b97f4a7c15ull + (b << 6) + (b >> 2);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

}  // namespace tar

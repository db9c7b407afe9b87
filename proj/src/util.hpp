#pragma once
// Shared utilities: deterministic RNG, seed derivation, content hashing,
// error taxonomy, small filesystem/string helpers.

#include <cstdint>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace csr {

// Error classes map onto the process exit codes (1 usage/config, 2 data,
// 3 numeric). Anything else escaping to the C boundary is an internal bug.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape mismatches are data errors: they arise from inputs that do not fit
// the configured geometry.
class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Fixed seed-splitting rule: children of a master seed are addressed by a
// (stream, index) pair. Used everywhere a run fans out into per-sample or
// per-epoch randomness, so regeneration is reproducible.
inline uint64_t derive_seed(uint64_t master, uint64_t stream, uint64_t index = 0) {
  uint64_t s = master;
  uint64_t a = splitmix64(s);
  s = a ^ (stream * 0x9e3779b97f4a7c15ull);
  uint64_t b = splitmix64(s);
  s = b ^ (index * 0xc2b2ae3d27d4eb4full);
  return splitmix64(s);
}

// Small deterministic PRNG (splitmix64 stream). Distribution code is our
// own so results are identical across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return splitmix64(state_); }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int uniform_int(int n) {
    return static_cast<int>((static_cast<unsigned __int128>(next_u64()) *
                             static_cast<unsigned __int128>(n)) >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const void* data, size_t n) {
  return fnv1a64(std::string_view(static_cast<const char*>(data), n));
}

std::string hex64(uint64_t v);

// Whole-file helpers; DataError on failure.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
void ensure_dir(const std::string& path);
bool file_exists(const std::string& path);
std::string path_join(const std::string& a, const std::string& b);

std::vector<std::string> split_ws(std::string_view text);
std::string join(const std::vector<std::string>& parts, const std::string& sep);

std::string format_double(double v);  // shortest round-trip, for CSV/JSON logs

}  // namespace csr

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace sketchgrad {

// splitmix64; used to derive independent stream seeds from a master seed.
inline std::uint64_t splitmix64(std::uint64_t& s) {
  std::uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d4ecd9aed37db7ULL;
  return z ^ (z >> 31);
}

inline std::uint64_t hash_name(std::string_view name) {
  // FNV-1a
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// A counting wrapper around mt19937_64. The draw counter lets tests assert
// that a sub-stream was never consumed (e.g. the unused sketch side when
// p is 0 or 1).
class RngStream {
 public:
  using result_type = std::mt19937_64::result_type;

  RngStream() : engine_(0) {}
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }

  result_type operator()() {
    ++draws_;
    return engine_();
  }

  std::uint64_t draw_count() const { return draws_; }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(*this); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(*this); }
  bool bernoulli(double p) { return uniform() < p; }
  // uniform integer in [0, n)
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(*this);
  }

 private:
  std::mt19937_64 engine_;
  std::uint64_t draws_ = 0;
};

// Named sub-streams split from one master seed. The four stream families
// ("bernoulli-p", "sketch/left", "sketch/right", "data-sampling",
// "compressor/<l>") keep algorithmic randomness sources independent, so
// estimator reductions (mvr with b=1 vs sgd, page with q=1 vs gd, ...)
// are bitwise testable.
class RngBundle {
 public:
  explicit RngBundle(std::uint64_t master_seed) : master_(master_seed) {}

  RngStream make_stream(std::string_view name) const {
    std::uint64_t s = master_ ^ hash_name(name);
    // run a few splitmix rounds so nearby seeds/names decorrelate
    splitmix64(s);
    std::uint64_t seed = splitmix64(s);
    return RngStream(seed);
  }

  std::uint64_t master_seed() const { return master_; }

 private:
  std::uint64_t master_;
};

}  // namespace sketchgrad

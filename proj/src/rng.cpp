#include "fmwiss/rng.hpp"

#include "fmwiss/error.hpp"

namespace fmwiss {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng make_stream(std::uint64_t seed, std::string_view name) {
  return Rng(splitmix64(seed ^ fnv1a64(name)));
}

Rng make_stream(std::uint64_t seed, std::string_view name, std::string_view key) {
  return Rng(splitmix64(splitmix64(seed ^ fnv1a64(name)) ^ fnv1a64(key)));
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  if (n == 0) fail(ErrorCode::kInvalidArgument, "uniform_index over empty range");
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(rng);
}

double uniform_unit(Rng& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

double standard_normal(Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

}  // namespace fmwiss

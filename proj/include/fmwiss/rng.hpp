#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

namespace fmwiss {

using Rng = std::mt19937_64;

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t splitmix64(std::uint64_t x);

// Independent named sub-stream of a run seed ("coseg", "sampling", "paste", "init", ...).
Rng make_stream(std::uint64_t seed, std::string_view name);
Rng make_stream(std::uint64_t seed, std::string_view name, std::string_view key);

std::size_t uniform_index(Rng& rng, std::size_t n);
double uniform_unit(Rng& rng);
double standard_normal(Rng& rng);

}  // namespace fmwiss

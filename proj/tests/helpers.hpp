#pragma once

#include <random>

#include "doctest.h"

#include "fmwiss/error.hpp"
#include "fmwiss/tensor.hpp"

// Passes when `expr` throws fmwiss::Error with the given code.
#define CHECK_ERROR_CODE(expr, expected)                          \
  do {                                                            \
    bool threw_ = false;                                          \
    try {                                                         \
      (void)(expr);                                               \
    } catch (const fmwiss::Error& e_) {                           \
      threw_ = true;                                              \
      CHECK_MESSAGE(e_.code() == (expected), e_.what());          \
    }                                                             \
    CHECK_MESSAGE(threw_, "expected an fmwiss::Error from " #expr); \
  } while (0)

namespace testing {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline fmwiss::Tensor random_tensor(std::mt19937_64& rng, int c, int h, int w, double lo = 0.0,
                                    double hi = 1.0) {
  fmwiss::Tensor t(c, h, w);
  for (double& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

}  // namespace testing

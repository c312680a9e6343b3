#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>

namespace trajclust {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor operands whose shapes do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (files, label vectors, graphs).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A method that cannot run on the given input (e.g. Return+Kmeans on
/// constant-reward data).
class NotApplicable : public Error {
 public:
  using Error::Error;
};

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a tuple of integers. The result
/// depends only on the values, never on call order.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6a09e667f3bcc908ULL;
  for (auto p : parts) h = mix64(h ^ mix64(p));
  return h;
}

inline Rng make_rng(std::initializer_list<std::uint64_t> parts) {
  return Rng(derive_seed(parts));
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Work items are
/// independent; callers write results into pre-sized slots so the outcome
/// never depends on scheduling.
void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn);

}  // namespace trajclust

#ifndef PRICELAB_RNG_HPP_
#define PRICELAB_RNG_HPP_

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace pricelab {

using RngKey = std::uint64_t;

std::uint64_t splitmix64(std::uint64_t x);

// Order-sensitive combination of two 64-bit values.
std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value);

// FNV-1a over the bytes of `s`, finalized through splitmix64.
std::uint64_t hash_string(std::string_view s);

RngKey derive_key(RngKey parent, std::initializer_list<std::uint64_t> labels);

/// Keyed random stream.
///
/// Every stochastic consumer in the library owns a stream constructed from an
/// explicit key; there is no global generator. Two streams built from the same
/// key produce identical sequences on every platform: the engine is
/// std::mt19937_64 (fully specified by the standard) and the real-valued draws
/// are computed here rather than through std::*_distribution, whose algorithms
/// are implementation-defined.
class RngStream {
 public:
  explicit RngStream(RngKey key);

  RngKey key() const { return key_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform();

  // Uniform on (0, 1].
  double uniform_open_low();

  // Standard normal via Box-Muller; consumes exactly two uniforms per call.
  double normal();

  // Uniform integer on [0, n). Requires n > 0.
  std::size_t uniform_index(std::size_t n);

  bool bernoulli(double p) { return uniform() < p; }

  // A child stream whose key depends only on this stream's key and `label`,
  // never on how many values have been drawn so far.
  RngStream substream(std::uint64_t label) const;

  friend bool operator==(const RngStream& a, const RngStream& b) {
    return a.key_ == b.key_ && a.engine_ == b.engine_;
  }

 private:
  RngKey key_;
  std::mt19937_64 engine_;
};

}  // namespace pricelab

#endif  // PRICELAB_RNG_HPP_

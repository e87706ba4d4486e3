#pragma once

#include <cstdint>
#include <initializer_list>

namespace zofa {

// Counter-based generator. A stream is identified by a 64-bit key and the
// n-th word is a pure function of (key, n), so any element can be regenerated
// without replaying the stream.
//
// word(key, n)    = mix64(key + (n + 1) * 0x9E3779B97F4A7C15)
// uniform01(n)    = (word >> 11) * 2^-53                   in [0, 1)
// gaussian(2j+b)  = Box-Muller on words 2j, 2j+1:
//                   u1 = ((w0 >> 11) + 1) * 2^-53           in (0, 1]
//                   u2 = (w1 >> 11) * 2^-53
//                   b=0: sqrt(-2 ln u1) cos(2 pi u2)
//                   b=1: sqrt(-2 ln u1) sin(2 pi u2)
// mix64 is the SplitMix64 finalizer. Keys for multi-part identifiers are
// built with derive_key, which folds each part through mix64.
// Fixtures depend on this exact construction; do not change it.
std::uint64_t mix64(std::uint64_t x);

std::uint64_t derive_key(std::initializer_list<std::uint64_t> parts);

class KeyedStream {
 public:
  explicit KeyedStream(std::uint64_t key) : key_(key) {}

  std::uint64_t key() const { return key_; }
  std::uint64_t word(std::uint64_t n) const;
  double uniform01(std::uint64_t n) const;
  double gaussian(std::uint64_t n) const;

 private:
  std::uint64_t key_;
};

// Sequential convenience wrapper over a KeyedStream, used by data generators
// and Monte-Carlo probes that just need "the next" value.
class KeyedSampler {
 public:
  explicit KeyedSampler(std::uint64_t key) : stream_(key) {}

  double uniform01() { return stream_.uniform01(counter_++); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  // Consumes a full Box-Muller pair per call so each value has its own pair.
  double gaussian();
  std::uint64_t below(std::uint64_t n);

 private:
  KeyedStream stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace zofa

#include "zofa/keyed_rng.hpp"

#include <cmath>
#include <numbers>

namespace zofa {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
constexpr double kTwoPow53Inv = 1.0 / 9007199254740992.0;
}  // namespace

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

std::uint64_t derive_key(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t key = 0x243F6A8885A308D3ULL;
  for (std::uint64_t p : parts) key = mix64(key ^ mix64(p + kGolden));
  return key;
}

std::uint64_t KeyedStream::word(std::uint64_t n) const { return mix64(key_ + (n + 1) * kGolden); }

double KeyedStream::uniform01(std::uint64_t n) const {
  return static_cast<double>(word(n) >> 11) * kTwoPow53Inv;
}

double KeyedStream::gaussian(std::uint64_t n) const {
  const std::uint64_t pair = n / 2;
  const double u1 = static_cast<double>((word(2 * pair) >> 11) + 1) * kTwoPow53Inv;
  const double u2 = static_cast<double>(word(2 * pair + 1) >> 11) * kTwoPow53Inv;
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  return (n % 2 == 0) ? radius * std::cos(angle) : radius * std::sin(angle);
}

double KeyedSampler::gaussian() {
  const double v = stream_.gaussian(counter_);
  counter_ += 2;
  return v;
}

std::uint64_t KeyedSampler::below(std::uint64_t n) {
  // Rejection sampling for an unbiased index.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  for (;;) {
    const std::uint64_t w = stream_.word(counter_++);
    if (w < limit) return w % n;
  }
}

}  // namespace zofa

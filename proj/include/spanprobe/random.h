#ifndef SPANPROBE_RANDOM_H_
#define SPANPROBE_RANDOM_H_

#include <cstdint>
#include <initializer_list>

namespace spanprobe {

// SplitMix64 finalizer.
constexpr std::uint64_t Mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Hashes a tuple of counters into one 64-bit value. Used to derive
// independent, order-free random streams from (seed, step, slot, ...).
constexpr std::uint64_t HashCounters(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6a09e667f3bcc908ull;
  for (std::uint64_t part : parts) h = Mix64(h ^ Mix64(part));
  return h;
}

// Uniform double in [0, 1) from the top 53 bits.
constexpr double UnitInterval(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

}  // namespace spanprobe

#endif  // SPANPROBE_RANDOM_H_

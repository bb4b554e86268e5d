#pragma once

#include <cstdint>
#include <random>

namespace saqe {

// Identifies an independent random stream. Streams form a tree: child(i)
// derives a new key from the parent key and i, so replicate b of repetition r
// is RngStream(seed).child(r).child(b) regardless of which thread runs it.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0);

  RngStream child(std::uint64_t id) const;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t key() const noexcept { return key_; }

  // A freshly seeded engine; two calls return engines producing identical draws.
  std::mt19937_64 engine() const;

 private:
  RngStream(std::uint64_t seed, std::uint64_t key, int) : seed_(seed), key_(key) {}

  std::uint64_t seed_;
  std::uint64_t key_;
};

}  // namespace saqe

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace resa {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Hashes an ordered key (seed, epoch, step, item, role, ...) to one stream id.
inline std::uint64_t stream_id(std::initializer_list<std::uint64_t> key) {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (std::uint64_t k : key) h = splitmix64(h ^ splitmix64(k));
  return h;
}

/// Uniform in [0, 1) drawn from a counter-based stream: the value depends only
/// on (stream, counter), never on call order.
inline double stream_uniform(std::uint64_t stream, std::uint64_t counter) {
  return static_cast<double>(splitmix64(stream ^ splitmix64(counter + 1)) >> 11) * 0x1.0p-53;
}

/// Sampler roles used to key per-position selection streams.
enum class SamplerRole : std::uint64_t { kHead = 1, kDependent = 2, kShared = 3, kDropout = 4 };

/// Identifies the random stream for one sampling event.
struct RngStream {
  std::uint64_t id = 0;

  RngStream() = default;
  explicit RngStream(std::uint64_t v) : id(v) {}

  RngStream derive(std::uint64_t k) const { return RngStream(stream_id({id, k})); }
  RngStream derive(SamplerRole role) const { return derive(static_cast<std::uint64_t>(role)); }
  double uniform(std::uint64_t counter) const { return stream_uniform(id, counter); }
  std::mt19937_64 engine() const { return std::mt19937_64(id); }
};

}  // namespace resa

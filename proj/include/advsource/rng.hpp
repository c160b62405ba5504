#pragma once

#include <cstdint>
#include <string_view>

namespace advsource {

// splitmix64 finalizer; the workhorse mixer for all keyed streams.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Builds a 64-bit stream key by absorbing typed components. Order matters:
// with(a).with(b) and with(b).with(a) name different streams.
class StreamKey {
 public:
  explicit StreamKey(std::uint64_t seed) : state_(mix64(seed + 0x632be59bd9b4e019ULL)) {}

  StreamKey with(std::uint64_t v) const {
    return StreamKey(state_ ^ mix64(v + 0x9e3779b97f4a7c15ULL), Raw{});
  }
  StreamKey with(std::int64_t v) const { return with(static_cast<std::uint64_t>(v)); }
  StreamKey with(int v) const { return with(static_cast<std::uint64_t>(static_cast<std::int64_t>(v))); }
  StreamKey with(std::string_view s) const;

  std::uint64_t value() const { return state_; }

 private:
  struct Raw {};
  StreamKey(std::uint64_t raw, Raw) : state_(mix64(raw)) {}
  std::uint64_t state_;
};

// Counter-based generator: output i is a pure function of (key, i). Two
// instances with the same key emit identical sequences, so parallel callers
// holding distinct keys can never perturb each other's draws.
class CounterRng {
 public:
  explicit CounterRng(const StreamKey& key) : key_(key.value()) {}

  std::uint64_t next_u64() {
    counter_ += 0x9e3779b97f4a7c15ULL;
    return mix64(key_ ^ counter_);
  }

  // Uniform on [0,1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on (0,1]; safe as a log() argument.
  double next_open() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

  // Uniform integer in [0, n). Lemire multiply-shift; n must be > 0.
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // +1 or -1 with equal probability.
  int next_sign() { return (next_u64() >> 63) ? 1 : -1; }

  // Standard normal via Box-Muller. Implemented locally so streams are
  // bit-identical across platforms and standard libraries.
  double next_gaussian();

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// FNV-1a over raw bytes; used for string keying and plan hashing.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace advsource

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace osld {

// Engine is std::mt19937_64; the conversions below are spelled out so that
// sampled values do not depend on the standard library's distribution code.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling removes modulo bias.
  std::size_t index(std::size_t n);

  // Standard normal via Box-Muller; the second variate is cached.
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::swap(values[i - 1], values[index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Mixes a base seed with a tag so that independent consumers draw from
// decorrelated streams (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

// ceil(fraction * n) robust to the representation error of decimal fractions
// such as 0.15 or 0.4.
std::size_t ceil_fraction(double fraction, std::size_t n);

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

// Hex digest over raw float bytes; used as a content checksum in dumps.
std::string checksum_hex(std::span<const float> values);

double dot(std::span<const float> a, std::span<const float> b);
double l2_norm(std::span<const float> v);
double cosine(std::span<const float> a, std::span<const float> b);
void l2_normalize(std::span<float> v);

// Writes bytes to a temporary sibling then renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

// Worker count from OSLD_THREADS, defaulting to hardware concurrency.
std::size_t worker_count();

std::string csv_field(std::string_view value);

}  // namespace osld

#pragma once

// Dense primitives, stable softmax, seeded RNG and a finite-difference
// gradient oracle. Everything is double precision.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bcl/error.hpp"

namespace bcl {

using Vec = std::vector<double>;
using VecView = std::span<const double>;

inline bool all_finite(VecView v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// Row-major dense matrix with fixed shape.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Mat(std::size_t rows, std::size_t cols, Vec data) : rows_(rows), cols_(cols), data_(std::move(data)) {
    detail::require(data_.size() == rows_ * cols_, ErrorKind::dimension,
                    "matrix data length " + std::to_string(data_.size()) + " != " +
                        std::to_string(rows_) + "x" + std::to_string(cols_));
  }

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  VecView row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  Vec& data() noexcept { return data_; }
  const Vec& data() const noexcept { return data_; }

  bool operator==(const Mat&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vec data_;
};

inline double dot(VecView a, VecView b) {
  detail::require(a.size() == b.size(), ErrorKind::dimension,
                  "dot: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(VecView a) { return std::sqrt(dot(a, a)); }

inline double squared_distance(VecView a, VecView b) {
  detail::require(a.size() == b.size(), ErrorKind::dimension, "squared_distance: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline Vec l2_normalize(VecView a) {
  const double n = norm(a);
  detail::require(n > 0.0 && std::isfinite(n), ErrorKind::degenerate_input, "l2_normalize: zero-norm vector");
  Vec out(a.begin(), a.end());
  for (double& x : out) x /= n;
  return out;
}

/// Pulls a gradient taken with respect to l2_normalize(raw) back onto raw.
inline Vec l2_normalize_backward(VecView raw, VecView grad_unit) {
  detail::require(raw.size() == grad_unit.size(), ErrorKind::dimension, "l2_normalize_backward: length mismatch");
  const double n = norm(raw);
  detail::require(n > 0.0, ErrorKind::degenerate_input, "l2_normalize_backward: zero-norm vector");
  double proj = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) proj += raw[i] * grad_unit[i];
  proj /= n;
  Vec out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (grad_unit[i] - (raw[i] / n) * proj) / n;
  return out;
}

inline double cosine_similarity(VecView a, VecView b) {
  const double na = norm(a);
  const double nb = norm(b);
  detail::require(na > 0.0 && nb > 0.0, ErrorKind::degenerate_input, "cosine_similarity: zero-norm vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

/// softmax(z / tau) with max-subtraction.
inline Vec softmax(VecView z, double tau = 1.0) {
  detail::require(tau > 0.0 && std::isfinite(tau), ErrorKind::parameter, "softmax: temperature must be > 0");
  detail::require(!z.empty(), ErrorKind::empty_set, "softmax: empty input");
  const double zmax = *std::max_element(z.begin(), z.end());
  Vec out(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp((z[i] - zmax) / tau);
    total += out[i];
  }
  for (double& x : out) x /= total;
  return out;
}

/// log(sum(exp(z / tau))) computed stably.
inline double log_sum_exp(VecView z, double tau = 1.0) {
  detail::require(tau > 0.0, ErrorKind::parameter, "log_sum_exp: temperature must be > 0");
  detail::require(!z.empty(), ErrorKind::empty_set, "log_sum_exp: empty input");
  const double zmax = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double v : z) total += std::exp((v - zmax) / tau);
  return zmax / tau + std::log(total);
}

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every coordinate.
inline Vec finite_diff_grad(const std::function<double(VecView)>& f, VecView x, double eps = 1e-5) {
  detail::require(eps > 0.0, ErrorKind::parameter, "finite_diff_grad: eps must be > 0");
  Vec probe(x.begin(), x.end());
  Vec grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = f(probe);
    probe[i] = orig - eps;
    const double down = f(probe);
    probe[i] = orig;
    detail::require(std::isfinite(up) && std::isfinite(down), ErrorKind::numeric,
                    "finite_diff_grad: non-finite evaluation at coordinate " + std::to_string(i));
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

/// Seeded generator over the standard 64-bit Mersenne Twister (mt19937_64).
///
/// The engine's integer stream is fixed by the C++ standard. The derived
/// draws (uniform, normal, index, shuffle) are implemented here rather than
/// through <random> distributions, whose algorithms differ between standard
/// libraries, so every draw is reproducible across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  /// Unbiased integer in [0, n) by rejection sampling.
  std::uint64_t index(std::uint64_t n) {
    detail::require(n > 0, ErrorKind::parameter, "Rng::index: empty range");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  /// k distinct picks from items, in draw order (partial Fisher-Yates).
  template <typename T>
  std::vector<T> sample(std::vector<T> items, std::size_t k) {
    k = std::min(k, items.size());
    for (std::size_t i = 0; i < k; ++i) {
      const auto j = i + static_cast<std::size_t>(index(items.size() - i));
      std::swap(items[i], items[j]);
    }
    items.resize(k);
    return items;
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// FNV-1a over raw bytes; used for config hashes and parameter fingerprints.
inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(s.data(), s.size(), h);
}

inline std::uint64_t fnv1a(VecView v, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(v.data(), v.size() * sizeof(double), h);
}

inline std::string hex64(std::uint64_t h) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

/// Pads with trailing zeros up to length d (used to compare embeddings of different widths).
inline Vec zero_pad(VecView v, std::size_t d) {
  detail::require(d >= v.size(), ErrorKind::dimension,
                  "zero_pad: target " + std::to_string(d) + " < source " + std::to_string(v.size()));
  Vec out(d, 0.0);
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

}  // namespace bcl

#pragma once

// The p-cycle expander family Z(p) and the index arithmetic used to move
// between consecutive members of the family (inflation to a prime in
// (4p, 8p), deflation to a prime in (p/8, p/4)).

#include <array>
#include <cstdint>
#include <vector>

namespace dex {

using Vertex = std::uint32_t;

/// Maximum cloud size of an inflation or deflation step (alpha < 8).
inline constexpr std::uint32_t kZeta = 8;

bool is_prime(std::uint64_t n);

/// A prime number. Construction verifies primality by trial division.
class PrimeModulus {
 public:
  explicit PrimeModulus(std::uint64_t p);

  std::uint32_t value() const { return p_; }
  operator std::uint32_t() const { return p_; }  // NOLINT(google-explicit-constructor)

  friend bool operator==(PrimeModulus a, PrimeModulus b) { return a.p_ == b.p_; }

 private:
  std::uint32_t p_;
};

/// Least prime strictly between lo and hi. Throws NoPrimeInRange.
PrimeModulus smallest_prime_in(std::uint64_t lo, std::uint64_t hi);

/// Multiplicative inverse of x modulo p, for 1 <= x < p. Throws DomainError for x == 0.
Vertex mod_inverse(Vertex x, PrimeModulus p);

/// Z(p): vertices 0..p-1, cycle edges x -> x +- 1, inverse edges x -> x^-1,
/// with 0 (and the self-inverse vertices 1 and p-1) carrying a self-loop.
/// Every vertex has exactly three neighbor slots.
class PCycle {
 public:
  explicit PCycle(PrimeModulus p);

  std::uint32_t size() const { return p_; }
  PrimeModulus modulus() const { return PrimeModulus(p_); }

  /// {x-1, x+1, inv(x)} with inv(0) = 0.
  std::array<Vertex, 3> neighbors(Vertex x) const;
  Vertex inverse(Vertex x) const { return x == 0 ? 0 : inverse_[x]; }

  /// Minimum-hop path a..b inclusive; among equal-length continuations the
  /// smallest next vertex index wins.
  std::vector<Vertex> shortest_path(Vertex a, Vertex b) const;

  /// Hop distances from `source` to every vertex.
  std::vector<std::uint32_t> distances_from(Vertex source) const;

  /// Exact diameter via all-pairs BFS.
  std::uint32_t diameter() const;

 private:
  std::uint32_t p_;
  std::vector<Vertex> inverse_;
};

/// Diameter of Z(p), memoized per prime (thread-safe).
std::uint32_t cached_diameter(PrimeModulus p);

/// Inflation Z(p_old) -> Z(p_new) with p_new in (4 p_old, 8 p_old). Vertex x of
/// the old cycle is replaced by the cloud [floor(a x), floor(a (x+1))) where
/// a = p_new / p_old, evaluated in exact integer arithmetic.
class InflationPlan {
 public:
  InflationPlan(PrimeModulus p_old, PrimeModulus p_new);
  /// Uses the least prime in (4 p_old, 8 p_old).
  static InflationPlan for_cycle(PrimeModulus p_old);

  PrimeModulus p_old() const { return p_old_; }
  PrimeModulus p_new() const { return p_new_; }

  Vertex cloud_begin(Vertex x) const;
  /// c(x) + 1 where c(x) = floor(a(x+1)) - floor(a x) - 1.
  std::uint32_t cloud_size(Vertex x) const;
  std::vector<Vertex> inflate_cloud(Vertex x) const;
  /// The old vertex whose cloud contains y.
  Vertex inflate_owner_of(Vertex y) const;

 private:
  PrimeModulus p_old_;
  PrimeModulus p_new_;
};

/// Deflation Z(p_old) -> Z(p_new) with p_new in (p_old/8, p_old/4). Old vertex x
/// maps to floor(x p_new / p_old); the smallest preimage of each new vertex is
/// its dominator and the full preimage class is its deflation cloud.
class DeflationPlan {
 public:
  DeflationPlan(PrimeModulus p_old, PrimeModulus p_new);
  /// Uses the least prime in (p_old/8, p_old/4).
  static DeflationPlan for_cycle(PrimeModulus p_old);

  PrimeModulus p_old() const { return p_old_; }
  PrimeModulus p_new() const { return p_new_; }

  Vertex deflate_image(Vertex x) const;
  /// Smallest old vertex mapping onto y.
  Vertex dominator_of(Vertex y) const;
  bool is_dominator(Vertex x) const { return dominator_of(deflate_image(x)) == x; }
  /// Old vertices mapping onto y, ascending.
  std::vector<Vertex> deflation_cloud(Vertex y) const;
  /// All dominators, ascending; exactly p_new of them.
  std::vector<Vertex> dominators() const;

 private:
  PrimeModulus p_old_;
  PrimeModulus p_new_;
};

}  // namespace dex

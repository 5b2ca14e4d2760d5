#include "dex/pcycle.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <mutex>
#include <string>

#include "dex/errors.hpp"

namespace dex {

namespace {

constexpr std::uint32_t kUnreached = std::numeric_limits<std::uint32_t>::max();

std::uint64_t floor_div(std::uint64_t a, std::uint64_t b) { return a / b; }
std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

}  // namespace

bool is_prime(std::uint64_t n) {
  if (n < 2) return false;
  if (n < 4) return true;
  if (n % 2 == 0) return false;
  for (std::uint64_t d = 3; d * d <= n; d += 2) {
    if (n % d == 0) return false;
  }
  return true;
}

PrimeModulus::PrimeModulus(std::uint64_t p) : p_(static_cast<std::uint32_t>(p)) {
  if (p > std::numeric_limits<std::uint32_t>::max() || !is_prime(p)) {
    throw DomainError("not a prime modulus: " + std::to_string(p));
  }
}

PrimeModulus smallest_prime_in(std::uint64_t lo, std::uint64_t hi) {
  for (std::uint64_t c = lo + 1; c < hi; ++c) {
    if (is_prime(c)) return PrimeModulus(c);
  }
  throw NoPrimeInRange("no prime in (" + std::to_string(lo) + ", " + std::to_string(hi) + ")");
}

Vertex mod_inverse(Vertex x, PrimeModulus p) {
  const std::int64_t m = p.value();
  if (x == 0 || x >= p.value()) {
    throw DomainError("mod_inverse: " + std::to_string(x) + " has no inverse mod " +
                      std::to_string(m));
  }
  // Extended Euclid on (x, m).
  std::int64_t r0 = x, r1 = m, s0 = 1, s1 = 0;
  while (r1 != 0) {
    const std::int64_t q = r0 / r1;
    std::tie(r0, r1) = std::pair{r1, r0 - q * r1};
    std::tie(s0, s1) = std::pair{s1, s0 - q * s1};
  }
  const std::int64_t inv = ((s0 % m) + m) % m;
  return static_cast<Vertex>(inv);
}

PCycle::PCycle(PrimeModulus p) : p_(p.value()) {
  if (p_ < 5) throw DomainError("p-cycle requires p >= 5, got " + std::to_string(p_));
  inverse_.resize(p_);
  inverse_[0] = 0;
  // inv(x) for all x in linear time: inv(x) = -(p/x) * inv(p mod x).
  if (p_ > 1) inverse_[1] = 1;
  for (std::uint64_t x = 2; x < p_; ++x) {
    const std::uint64_t q = p_ / x;
    inverse_[x] = static_cast<Vertex>((p_ - (q * inverse_[p_ % x]) % p_) % p_);
  }
}

std::array<Vertex, 3> PCycle::neighbors(Vertex x) const {
  return {x == 0 ? p_ - 1 : x - 1, x + 1 == p_ ? 0 : x + 1, inverse(x)};
}

std::vector<std::uint32_t> PCycle::distances_from(Vertex source) const {
  std::vector<std::uint32_t> dist(p_, kUnreached);
  std::vector<Vertex> frontier{source};
  dist[source] = 0;
  for (std::size_t head = 0; head < frontier.size(); ++head) {
    const Vertex x = frontier[head];
    for (Vertex y : neighbors(x)) {
      if (dist[y] == kUnreached) {
        dist[y] = dist[x] + 1;
        frontier.push_back(y);
      }
    }
  }
  return dist;
}

std::vector<Vertex> PCycle::shortest_path(Vertex a, Vertex b) const {
  if (a == b) return {a};
  // BFS from b, stopped once a's level is settled.
  std::vector<std::uint32_t> dist(p_, kUnreached);
  std::vector<Vertex> frontier{b};
  dist[b] = 0;
  for (std::size_t head = 0; head < frontier.size() && dist[a] == kUnreached; ++head) {
    const Vertex x = frontier[head];
    for (Vertex y : neighbors(x)) {
      if (dist[y] == kUnreached) {
        dist[y] = dist[x] + 1;
        frontier.push_back(y);
      }
    }
  }
  std::vector<Vertex> path{a};
  Vertex cur = a;
  while (cur != b) {
    Vertex best = kUnreached;
    for (Vertex y : neighbors(cur)) {
      if (dist[y] != kUnreached && dist[y] + 1 == dist[cur]) best = std::min(best, y);
    }
    cur = best;
    path.push_back(cur);
  }
  return path;
}

std::uint32_t PCycle::diameter() const {
  std::uint32_t best = 0;
  for (Vertex s = 0; s < p_; ++s) {
    const auto dist = distances_from(s);
    best = std::max(best, *std::max_element(dist.begin(), dist.end()));
  }
  return best;
}

std::uint32_t cached_diameter(PrimeModulus p) {
  static std::mutex mu;
  static std::map<std::uint32_t, std::uint32_t> memo;
  {
    std::lock_guard lock(mu);
    if (auto it = memo.find(p.value()); it != memo.end()) return it->second;
  }
  const std::uint32_t d = PCycle(p).diameter();
  std::lock_guard lock(mu);
  memo.emplace(p.value(), d);
  return d;
}

// ---------------------------------------------------------------------------

InflationPlan::InflationPlan(PrimeModulus p_old, PrimeModulus p_new) : p_old_(p_old), p_new_(p_new) {
  const std::uint64_t lo = 4ULL * p_old.value(), hi = 8ULL * p_old.value();
  if (!(p_new.value() > lo && p_new.value() < hi)) {
    throw DomainError("inflation target " + std::to_string(p_new.value()) + " outside (4p, 8p)");
  }
}

InflationPlan InflationPlan::for_cycle(PrimeModulus p_old) {
  return {p_old, smallest_prime_in(4ULL * p_old.value(), 8ULL * p_old.value())};
}

Vertex InflationPlan::cloud_begin(Vertex x) const {
  return static_cast<Vertex>(floor_div(std::uint64_t{p_new_.value()} * x, p_old_.value()));
}

std::uint32_t InflationPlan::cloud_size(Vertex x) const { return cloud_begin(x + 1) - cloud_begin(x); }

std::vector<Vertex> InflationPlan::inflate_cloud(Vertex x) const {
  const Vertex begin = cloud_begin(x);
  const std::uint32_t size = cloud_size(x);
  std::vector<Vertex> cloud(size);
  for (std::uint32_t k = 0; k < size; ++k) cloud[k] = (begin + k) % p_new_.value();
  return cloud;
}

Vertex InflationPlan::inflate_owner_of(Vertex y) const {
  // Largest x with p_new x < (y+1) p_old.
  return static_cast<Vertex>(
      floor_div((std::uint64_t{y} + 1) * p_old_.value() - 1, p_new_.value()));
}

// ---------------------------------------------------------------------------

DeflationPlan::DeflationPlan(PrimeModulus p_old, PrimeModulus p_new) : p_old_(p_old), p_new_(p_new) {
  // p_old/8 < p_new < p_old/4  <=>  p_old < 8 p_new  and  4 p_new < p_old
  if (!(std::uint64_t{p_old.value()} < 8ULL * p_new.value() &&
        4ULL * p_new.value() < p_old.value())) {
    throw DomainError("deflation target " + std::to_string(p_new.value()) + " outside (p/8, p/4)");
  }
}

DeflationPlan DeflationPlan::for_cycle(PrimeModulus p_old) {
  // Integers strictly inside (p/8, p/4): from floor(p/8)+1 up to ceil(p/4)-1.
  return {p_old, smallest_prime_in(p_old.value() / 8, ceil_div(p_old.value(), 4))};
}

Vertex DeflationPlan::deflate_image(Vertex x) const {
  return static_cast<Vertex>(floor_div(std::uint64_t{x} * p_new_.value(), p_old_.value()));
}

Vertex DeflationPlan::dominator_of(Vertex y) const {
  return static_cast<Vertex>(ceil_div(std::uint64_t{y} * p_old_.value(), p_new_.value()));
}

std::vector<Vertex> DeflationPlan::deflation_cloud(Vertex y) const {
  const Vertex first = dominator_of(y);
  const Vertex end = y + 1 == p_new_.value() ? p_old_.value() : dominator_of(y + 1);
  std::vector<Vertex> cloud;
  for (Vertex x = first; x < end; ++x) cloud.push_back(x);
  return cloud;
}

std::vector<Vertex> DeflationPlan::dominators() const {
  std::vector<Vertex> out(p_new_.value());
  for (Vertex y = 0; y < p_new_.value(); ++y) out[y] = dominator_of(y);
  return out;
}

}  // namespace dex

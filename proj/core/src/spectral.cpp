#include "dex/spectral.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <string>

#include "dex/errors.hpp"

namespace dex {

void Multigraph::add_edge(std::uint32_t u, std::uint32_t v, std::uint64_t multiplicity) {
  if (u == v) {
    add_loop(u, multiplicity);
    return;
  }
  adj_[u][v] += multiplicity;
  adj_[v][u] += multiplicity;
}

void Multigraph::add_loop(std::uint32_t u, std::uint64_t multiplicity) { adj_[u][u] += multiplicity; }

void Multigraph::add_slot(std::uint32_t u, std::uint32_t v, std::uint64_t w) { adj_[u][v] += w; }

std::uint64_t Multigraph::weight(std::uint32_t u, std::uint32_t v) const {
  const auto it = adj_[u].find(v);
  return it == adj_[u].end() ? 0 : it->second;
}

std::uint64_t Multigraph::degree(std::uint32_t u) const {
  std::uint64_t d = 0;
  for (const auto& [v, w] : adj_[u]) d += w;
  return d;
}

bool Multigraph::is_connected() const {
  if (adj_.empty()) return true;
  std::vector<char> seen(adj_.size(), 0);
  std::vector<std::uint32_t> stack{0};
  seen[0] = 1;
  std::size_t count = 1;
  while (!stack.empty()) {
    const auto u = stack.back();
    stack.pop_back();
    for (const auto& [v, w] : adj_[u]) {
      if (w > 0 && !seen[v]) {
        seen[v] = 1;
        ++count;
        stack.push_back(v);
      }
    }
  }
  return count == adj_.size();
}

bool Multigraph::is_symmetric() const {
  for (std::uint32_t u = 0; u < adj_.size(); ++u) {
    for (const auto& [v, w] : adj_[u]) {
      if (weight(v, u) != w) return false;
    }
  }
  return true;
}

std::uint64_t Multigraph::regular_degree() const {
  if (adj_.empty()) return 0;
  const std::uint64_t d = degree(0);
  for (std::uint32_t u = 1; u < adj_.size(); ++u) {
    if (degree(u) != d) return 0;
  }
  return d;
}

Multigraph pcycle_graph(const PCycle& cycle) {
  Multigraph g(cycle.size());
  for (Vertex x = 0; x < cycle.size(); ++x) {
    for (Vertex y : cycle.neighbors(x)) g.add_slot(x, y);
  }
  return g;
}

Multigraph complete_graph(std::uint32_t n) {
  Multigraph g(n);
  for (std::uint32_t u = 0; u < n; ++u) {
    for (std::uint32_t v = u + 1; v < n; ++v) g.add_edge(u, v);
  }
  return g;
}

Multigraph cycle_graph(std::uint32_t n) {
  Multigraph g(n);
  for (std::uint32_t u = 0; u < n; ++u) g.add_edge(u, (u + 1) % n);
  return g;
}

Multigraph hypercube_graph(std::uint32_t dim) {
  const std::uint32_t n = 1u << dim;
  Multigraph g(n);
  for (std::uint32_t u = 0; u < n; ++u) {
    for (std::uint32_t b = 0; b < dim; ++b) {
      const std::uint32_t v = u ^ (1u << b);
      if (u < v) g.add_edge(u, v);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Dense symmetric eigensolver.

namespace {

/// Householder reduction of a real symmetric matrix to tridiagonal form.
/// On return d holds the diagonal and e the sub-diagonal (e[0] = 0).
void tridiagonalize(std::vector<double>& a, std::size_t n, std::vector<double>& d,
                    std::vector<double>& e) {
  auto at = [&](std::size_t i, std::size_t j) -> double& { return a[i * n + j]; };
  d.assign(n, 0.0);
  e.assign(n, 0.0);
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t l = i - 1;
    double h = 0.0;
    if (l > 0) {
      double scale = 0.0;
      for (std::size_t k = 0; k <= l; ++k) scale += std::fabs(at(i, k));
      if (scale == 0.0) {
        e[i] = at(i, l);
      } else {
        for (std::size_t k = 0; k <= l; ++k) {
          at(i, k) /= scale;
          h += at(i, k) * at(i, k);
        }
        double f = at(i, l);
        double g = f >= 0.0 ? -std::sqrt(h) : std::sqrt(h);
        e[i] = scale * g;
        h -= f * g;
        at(i, l) = f - g;
        f = 0.0;
        for (std::size_t j = 0; j <= l; ++j) {
          g = 0.0;
          for (std::size_t k = 0; k <= j; ++k) g += at(j, k) * at(i, k);
          for (std::size_t k = j + 1; k <= l; ++k) g += at(k, j) * at(i, k);
          e[j] = g / h;
          f += e[j] * at(i, j);
        }
        const double hh = f / (h + h);
        for (std::size_t j = 0; j <= l; ++j) {
          f = at(i, j);
          g = e[j] - hh * f;
          e[j] = g;
          for (std::size_t k = 0; k <= j; ++k) at(j, k) -= f * e[k] + g * at(i, k);
        }
      }
    } else {
      e[i] = at(i, l);
    }
    d[i] = h;
  }
  e[0] = 0.0;
  for (std::size_t i = 0; i < n; ++i) d[i] = at(i, i);
}

/// Eigenvalues of a symmetric tridiagonal matrix by QL with implicit shifts.
void tridiagonal_ql(std::vector<double>& d, std::vector<double>& e) {
  const std::size_t n = d.size();
  if (n == 0) return;
  for (std::size_t i = 1; i < n; ++i) e[i - 1] = e[i];
  e[n - 1] = 0.0;
  constexpr double eps = std::numeric_limits<double>::epsilon();
  for (std::size_t l = 0; l < n; ++l) {
    int iterations = 0;
    std::size_t m;
    do {
      for (m = l; m + 1 < n; ++m) {
        const double dd = std::fabs(d[m]) + std::fabs(d[m + 1]);
        if (std::fabs(e[m]) <= eps * dd) break;
      }
      if (m != l) {
        if (++iterations > 100) throw ConvergenceFailure("tridiagonal QL did not converge");
        double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
        double r = std::hypot(g, 1.0);
        g = d[m] - d[l] + e[l] / (g + std::copysign(r, g));
        double s = 1.0, c = 1.0, p = 0.0;
        bool underflow = false;
        for (std::size_t i = m; i-- > l;) {
          const double f = s * e[i];
          const double b = c * e[i];
          r = std::hypot(f, g);
          e[i + 1] = r;
          if (r == 0.0) {
            d[i + 1] -= p;
            e[m] = 0.0;
            underflow = true;
            break;
          }
          s = f / r;
          c = g / r;
          g = d[i + 1] - p;
          r = (d[i] - g) * s + 2.0 * c * b;
          p = s * r;
          d[i + 1] = g + p;
          g = c * r - b;
        }
        if (underflow) continue;
        d[l] -= p;
        e[l] = g;
        e[m] = 0.0;
      }
    } while (m != l);
  }
}

void require_connected(const Multigraph& g) {
  if (!g.is_connected()) throw NotConnected("graph is not connected");
  for (std::uint32_t u = 0; u < g.size(); ++u) {
    if (g.degree(u) == 0) throw NotConnected("isolated vertex " + std::to_string(u));
  }
}

/// Compressed form of S = D^-1/2 A D^-1/2 for repeated products.
struct SymmetricOperator {
  std::vector<std::size_t> offsets;
  std::vector<std::uint32_t> columns;
  std::vector<double> values;
  std::vector<double> top;  // unit eigenvector for eigenvalue 1, ~ sqrt(deg)

  explicit SymmetricOperator(const Multigraph& g) {
    const std::size_t n = g.size();
    std::vector<double> inv_sqrt(n);
    top.resize(n);
    double norm = 0.0;
    for (std::uint32_t u = 0; u < n; ++u) {
      const double deg = static_cast<double>(g.degree(u));
      inv_sqrt[u] = 1.0 / std::sqrt(deg);
      top[u] = std::sqrt(deg);
      norm += deg;
    }
    norm = std::sqrt(norm);
    for (double& t : top) t /= norm;
    offsets.push_back(0);
    for (std::uint32_t u = 0; u < n; ++u) {
      for (const auto& [v, w] : g.row(u)) {
        columns.push_back(v);
        values.push_back(static_cast<double>(w) * inv_sqrt[u] * inv_sqrt[v]);
      }
      offsets.push_back(columns.size());
    }
  }

  void apply(const std::vector<double>& x, std::vector<double>& y) const {
    const std::size_t n = offsets.size() - 1;
    y.assign(n, 0.0);
    for (std::size_t u = 0; u < n; ++u) {
      double acc = 0.0;
      for (std::size_t k = offsets[u]; k < offsets[u + 1]; ++k) acc += values[k] * x[columns[k]];
      y[u] = acc;
    }
  }
};

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void remove_component(std::vector<double>& x, const std::vector<double>& dir) {
  const double c = dot(x, dir);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] -= c * dir[i];
}

struct PowerResult {
  double value;
  double residual;
};

/// Largest eigenvalue of (I + sign S)/2 restricted to the complement of
/// `top`, returned as the corresponding eigenvalue of S.
PowerResult lazy_power(const SymmetricOperator& op, double sign, const PowerOptions& opts) {
  const std::size_t n = op.top.size();
  CounterRng rng(opts.seed);
  std::vector<double> x(n), y(n), sx(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = rng.unit(0, i) - 0.5;
  remove_component(x, op.top);
  double norm = std::sqrt(dot(x, x));
  for (double& v : x) v /= norm;
  for (std::uint64_t it = 0; it < opts.max_iterations; ++it) {
    op.apply(x, sx);
    for (std::size_t i = 0; i < n; ++i) y[i] = 0.5 * (x[i] + sign * sx[i]);
    remove_component(y, op.top);
    const double mu = dot(x, y);
    double r2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = y[i] - mu * x[i];
      r2 += d * d;
    }
    const double residual = 2.0 * std::sqrt(r2);  // residual of S, not of the lazy operator
    if (residual <= opts.tolerance) return {sign * (2.0 * mu - 1.0), residual};
    norm = std::sqrt(dot(y, y));
    if (norm == 0.0) return {sign * -1.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) x[i] = y[i] / norm;
  }
  throw ConvergenceFailure("power iteration exceeded " + std::to_string(opts.max_iterations) +
                           " iterations");
}

}  // namespace

std::vector<double> symmetric_eigenvalues(std::vector<double> matrix, std::size_t n) {
  if (n == 0) return {};
  if (n == 1) return {matrix[0]};
  std::vector<double> d, e;
  tridiagonalize(matrix, n, d, e);
  tridiagonal_ql(d, e);
  std::sort(d.begin(), d.end(), std::greater<>());
  return d;
}

std::vector<double> walk_spectrum_dense(const Multigraph& g) {
  const std::size_t n = g.size();
  std::vector<double> inv_sqrt(n);
  for (std::uint32_t u = 0; u < n; ++u) inv_sqrt[u] = 1.0 / std::sqrt(static_cast<double>(g.degree(u)));
  std::vector<double> s(n * n, 0.0);
  for (std::uint32_t u = 0; u < n; ++u) {
    for (const auto& [v, w] : g.row(u)) s[u * n + v] = static_cast<double>(w) * inv_sqrt[u] * inv_sqrt[v];
  }
  return symmetric_eigenvalues(std::move(s), n);
}

WalkMatrixSpectrum second_eigenvalue_dense(const Multigraph& g) {
  require_connected(g);
  WalkMatrixSpectrum out;
  out.method = SpectrumMethod::Dense;
  if (g.size() < 2) return out;
  const auto w = walk_spectrum_dense(g);
  out.top = w.front();
  out.lambda2 = w[1];
  out.gap = 1.0 - out.lambda2;
  out.lambda_min = w.back();
  out.lambda_abs = std::max(std::fabs(out.lambda2), std::fabs(out.lambda_min));
  out.residual = std::fabs(out.top - 1.0);
  return out;
}

WalkMatrixSpectrum second_eigenvalue_power(const Multigraph& g, const PowerOptions& opts) {
  require_connected(g);
  WalkMatrixSpectrum out;
  out.method = SpectrumMethod::PowerIteration;
  if (g.size() < 2) return out;
  const SymmetricOperator op(g);
  const auto hi = lazy_power(op, +1.0, opts);
  PowerOptions low_opts = opts;
  low_opts.seed = opts.seed + 1;
  const auto lo = lazy_power(op, -1.0, low_opts);
  std::vector<double> check;
  op.apply(op.top, check);
  double top_residual = 0.0;
  for (std::size_t i = 0; i < check.size(); ++i) top_residual = std::max(top_residual, std::fabs(check[i] - op.top[i]));
  out.top = 1.0;
  out.lambda2 = hi.value;
  out.gap = 1.0 - out.lambda2;
  out.lambda_min = lo.value;
  out.lambda_abs = std::max(std::fabs(out.lambda2), std::fabs(out.lambda_min));
  out.residual = std::max({hi.residual, lo.residual, top_residual});
  return out;
}

WalkMatrixSpectrum second_eigenvalue(const Multigraph& g) {
  if (g.size() <= kDenseLimit) return second_eigenvalue_dense(g);
  return second_eigenvalue_power(g);
}

WalkMatrixSpectrum cached_pcycle_spectrum(PrimeModulus p) {
  static std::mutex mu;
  static std::map<std::uint32_t, WalkMatrixSpectrum> memo;
  {
    std::lock_guard lock(mu);
    if (auto it = memo.find(p.value()); it != memo.end()) return it->second;
  }
  const auto s = second_eigenvalue(pcycle_graph(PCycle(p)));
  std::lock_guard lock(mu);
  memo.emplace(p.value(), s);
  return s;
}

// ---------------------------------------------------------------------------
// Expansion.

Expansion edge_expansion_bruteforce(const Multigraph& g) {
  const std::size_t n = g.size();
  if (n > 22) throw TooLarge("edge expansion enumeration limited to 22 vertices, got " + std::to_string(n));
  if (n < 2) throw TooLarge("edge expansion needs at least two vertices");
  std::vector<std::uint64_t> external(n);  // degree without self-loops
  for (std::uint32_t u = 0; u < n; ++u) external[u] = g.degree(u) - g.weight(u, u);
  Expansion best{std::numeric_limits<std::uint64_t>::max(), 1};
  const std::uint32_t limit = static_cast<std::uint32_t>(n / 2);
  // Gray-code walk over all subsets; the cut is updated per toggled vertex.
  std::uint32_t mask = 0;
  std::int64_t cut = 0;
  const std::uint64_t total = 1ULL << n;
  for (std::uint64_t i = 1; i < total; ++i) {
    const auto u = static_cast<std::uint32_t>(std::countr_zero(i));
    std::int64_t into_set = 0;
    for (const auto& [v, w] : g.row(u)) {
      if (v != u && (mask >> v & 1u)) into_set += static_cast<std::int64_t>(w);
    }
    if (mask >> u & 1u) {
      cut -= static_cast<std::int64_t>(external[u]) - 2 * into_set;
    } else {
      cut += static_cast<std::int64_t>(external[u]) - 2 * into_set;
    }
    mask ^= 1u << u;
    const auto size = static_cast<std::uint32_t>(std::popcount(mask));
    if (size == 0 || size > limit) continue;
    // cut/size < best.cut/best.size
    if (static_cast<uint128>(cut) * best.size <
        static_cast<uint128>(best.cut) * size) {
      best = {static_cast<std::uint64_t>(cut), size};
    }
  }
  return best;
}

CheegerResult cheeger_check(const Multigraph& g) {
  if (g.size() > 22) throw TooLarge("cheeger check limited to 22 vertices");
  const std::uint64_t d = g.regular_degree();
  if (d == 0) throw NotRegular("cheeger check requires a regular graph");
  CheegerResult r;
  r.lambda2 = second_eigenvalue_dense(g).lambda2;
  r.h = edge_expansion_bruteforce(g);
  r.degree = d;
  r.normalized_h = r.h.value() / static_cast<double>(d);
  r.lower = (1.0 - r.lambda2) / 2.0;
  r.upper = std::sqrt(2.0 * (1.0 - r.lambda2));
  constexpr double slack = 1e-8;
  r.holds = r.lower <= r.normalized_h + slack && r.normalized_h <= r.upper + slack;
  return r;
}

double mixing_violation(const PCycle& cycle, double lambda_abs, std::span<const bool> in_s,
                        std::span<const bool> in_t) {
  const std::uint32_t p = cycle.size();
  std::uint64_t s_size = 0, t_size = 0, edges = 0;
  for (Vertex x = 0; x < p; ++x) {
    s_size += in_s[x];
    t_size += in_t[x];
    if (!in_s[x]) continue;
    for (Vertex y : cycle.neighbors(x)) edges += in_t[y];
  }
  const double d = 3.0;
  const double lhs = std::fabs(static_cast<double>(edges) -
                               d * static_cast<double>(s_size) * static_cast<double>(t_size) / p);
  const double rhs = lambda_abs * d * std::sqrt(static_cast<double>(s_size) * static_cast<double>(t_size));
  return lhs - rhs;
}

double mixing_check(const PCycle& cycle, std::uint32_t trials, RngStream& rng) {
  const double lambda_abs = second_eigenvalue_dense(pcycle_graph(cycle)).lambda_abs;
  const std::uint32_t p = cycle.size();
  std::unique_ptr<bool[]> in_s(new bool[p]), in_t(new bool[p]);
  double worst = -std::numeric_limits<double>::infinity();
  for (std::uint32_t t = 0; t < trials; ++t) {
    // Each set gets its own density so small and large sets are both exercised.
    const double qs = rng.unit();
    const double qt = rng.unit();
    for (Vertex x = 0; x < p; ++x) {
      in_s[x] = rng.unit() < qs;
      in_t[x] = rng.unit() < qt;
    }
    worst = std::max(worst, mixing_violation(cycle, lambda_abs, {in_s.get(), p}, {in_t.get(), p}));
  }
  return worst;
}

}  // namespace dex

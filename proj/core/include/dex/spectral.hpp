#pragma once

// Spectra of degree-normalized random-walk matrices on multigraphs, plus the
// brute-force expansion checks (edge expansion, Cheeger sandwich, mixing).

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "dex/pcycle.hpp"
#include "dex/rng.hpp"

namespace dex {

/// Undirected multigraph stored as a symmetric weighted adjacency matrix A.
/// A non-loop edge {u, v} of multiplicity m adds m to A[u][v] and A[v][u]; a
/// self-loop adds 1 to A[u][u] (counted once toward the degree). deg(u) is the
/// row sum, so the walk matrix D^-1 A is row-stochastic.
class Multigraph {
 public:
  Multigraph() = default;
  explicit Multigraph(std::size_t n) : adj_(n) {}

  std::size_t size() const { return adj_.size(); }

  void add_edge(std::uint32_t u, std::uint32_t v, std::uint64_t multiplicity = 1);
  void add_loop(std::uint32_t u, std::uint64_t multiplicity = 1);
  /// Adds one directed endpoint weight A[u][v] += w. Callers that build the
  /// matrix slot by slot (each virtual edge seen from both ends) use this.
  void add_slot(std::uint32_t u, std::uint32_t v, std::uint64_t w = 1);

  std::uint64_t weight(std::uint32_t u, std::uint32_t v) const;
  std::uint64_t degree(std::uint32_t u) const;
  const std::map<std::uint32_t, std::uint64_t>& row(std::uint32_t u) const { return adj_[u]; }

  bool is_connected() const;
  bool is_symmetric() const;
  /// Common degree if the graph is regular, 0 otherwise.
  std::uint64_t regular_degree() const;

 private:
  std::vector<std::map<std::uint32_t, std::uint64_t>> adj_;
};

Multigraph pcycle_graph(const PCycle& cycle);
Multigraph complete_graph(std::uint32_t n);
Multigraph cycle_graph(std::uint32_t n);
Multigraph hypercube_graph(std::uint32_t dim);

enum class SpectrumMethod { Dense, PowerIteration };

struct WalkMatrixSpectrum {
  double lambda2 = 0.0;    ///< second-largest eigenvalue of D^-1 A
  double gap = 1.0;        ///< 1 - lambda2
  double lambda_min = 0.0; ///< smallest eigenvalue
  double lambda_abs = 0.0; ///< max(|lambda2|, |lambda_min|)
  double top = 1.0;        ///< largest eigenvalue (1 for connected graphs)
  SpectrumMethod method = SpectrumMethod::Dense;
  double residual = 0.0;   ///< bound on the eigen-residual of the reported values
};

/// Graphs up to this many vertices use the dense path by default.
inline constexpr std::size_t kDenseLimit = 512;

/// Eigenvalues of the real symmetric matrix (row-major n x n), descending.
/// Householder tridiagonalization followed by QL with implicit shifts.
std::vector<double> symmetric_eigenvalues(std::vector<double> matrix, std::size_t n);

/// Full walk-matrix spectrum (descending) through the symmetric similarity
/// transform D^-1/2 A D^-1/2.
std::vector<double> walk_spectrum_dense(const Multigraph& g);

struct PowerOptions {
  double tolerance = 1e-8;
  std::uint64_t max_iterations = 2'000'000;
  std::uint64_t seed = 0x5eed;
};

WalkMatrixSpectrum second_eigenvalue_dense(const Multigraph& g);
WalkMatrixSpectrum second_eigenvalue_power(const Multigraph& g, const PowerOptions& opts = {});
/// Dense for |V| <= kDenseLimit, power iteration above. A single vertex
/// reports gap 1. Throws NotConnected or ConvergenceFailure.
WalkMatrixSpectrum second_eigenvalue(const Multigraph& g);

/// lambda2 of Z(p), memoized per prime.
WalkMatrixSpectrum cached_pcycle_spectrum(PrimeModulus p);

/// Exact rational value cut / size.
struct Expansion {
  std::uint64_t cut = 0;
  std::uint64_t size = 1;
  double value() const { return static_cast<double>(cut) / static_cast<double>(size); }
};

/// min |E(S, S^c)| / |S| over non-empty S with |S| <= n/2. Throws TooLarge for n > 22.
Expansion edge_expansion_bruteforce(const Multigraph& g);

struct CheegerResult {
  bool holds = false;
  double lambda2 = 0.0;
  Expansion h;
  std::uint64_t degree = 0;
  double lower = 0.0;  ///< (1 - lambda2) / 2
  double upper = 0.0;  ///< sqrt(2 (1 - lambda2))
  double normalized_h = 0.0;  ///< h / degree
};

/// (1 - l)/2 <= h/d <= sqrt(2(1 - l)) with 1e-8 slack, for a d-regular graph.
/// Throws TooLarge or NotRegular.
CheegerResult cheeger_check(const Multigraph& g);

/// Samples vertex-set pairs (S, T) and returns the largest
///   | E(S,T) - 3|S||T|/p | - lambda 3 sqrt(|S||T|)
/// with lambda the second-largest eigenvalue magnitude of Z(p).
double mixing_check(const PCycle& cycle, std::uint32_t trials, RngStream& rng);

/// The mixing discrepancy for one explicit pair of vertex sets (given as
/// membership masks), used by the sampler and by tests.
double mixing_violation(const PCycle& cycle, double lambda_abs, std::span<const bool> in_s,
                        std::span<const bool> in_t);

}  // namespace dex

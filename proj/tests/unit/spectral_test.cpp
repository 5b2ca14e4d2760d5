#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include "dex/errors.hpp"
#include "dex/spectral.hpp"

namespace dex {
namespace {

// Plain subset enumeration, independent of the Gray-code implementation.
double naive_expansion(const Multigraph& g) {
  const auto n = static_cast<std::uint32_t>(g.size());
  double best = 1e300;
  for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
    const auto size = static_cast<std::uint32_t>(std::popcount(mask));
    if (size > n / 2) continue;
    std::uint64_t cut = 0;
    for (std::uint32_t u = 0; u < n; ++u) {
      if (!(mask >> u & 1u)) continue;
      for (const auto& [v, w] : g.row(u)) {
        if (!(mask >> v & 1u)) cut += w;
      }
    }
    best = std::min(best, static_cast<double>(cut) / size);
  }
  return best;
}

TEST(Multigraph, PCycleDegreeAndSymmetry) {
  PCycle z(PrimeModulus(23));
  auto g = pcycle_graph(z);
  EXPECT_TRUE(g.is_symmetric());
  EXPECT_TRUE(g.is_connected());
  EXPECT_EQ(g.regular_degree(), 3u);
  EXPECT_EQ(g.weight(0, 0), 1u);
  EXPECT_EQ(g.weight(2, 12), 1u);
  PCycle z5(PrimeModulus(5));
  EXPECT_EQ(pcycle_graph(z5).weight(2, 3), 2u);  // 2 and 3 are inverse and adjacent
}

TEST(Spectrum, CompleteGraphs) {
  for (std::uint32_t n = 2; n <= 64; ++n) {
    auto s = second_eigenvalue_dense(complete_graph(n));
    EXPECT_NEAR(s.lambda2, -1.0 / (n - 1), 1e-8) << n;
    EXPECT_NEAR(s.top, 1.0, 1e-8);
  }
  EXPECT_NEAR(second_eigenvalue(complete_graph(4)).lambda2, -1.0 / 3.0, 1e-8);
}

TEST(Spectrum, Cycles) {
  for (std::uint32_t n = 3; n <= 64; ++n) {
    auto s = second_eigenvalue_dense(cycle_graph(n));
    EXPECT_NEAR(s.lambda2, std::cos(2 * std::numbers::pi / n), 1e-8) << n;
  }
  EXPECT_NEAR(second_eigenvalue(cycle_graph(6)).lambda2, 0.5, 1e-8);
}

TEST(Spectrum, HypercubeFullSpectrum) {
  for (std::uint32_t dim = 1; dim <= 6; ++dim) {
    auto eig = walk_spectrum_dense(hypercube_graph(dim));
    std::vector<double> expect;
    for (std::uint32_t v = 0; v < (1u << dim); ++v) {
      expect.push_back(1.0 - 2.0 * std::popcount(v) / dim);
    }
    std::sort(expect.rbegin(), expect.rend());
    ASSERT_EQ(eig.size(), expect.size());
    for (std::size_t i = 0; i < eig.size(); ++i) EXPECT_NEAR(eig[i], expect[i], 1e-9);
  }
}

TEST(Spectrum, PCycleGolden) {
  auto s = second_eigenvalue(pcycle_graph(PCycle(PrimeModulus(23))));
  EXPECT_NEAR(s.lambda2, 0.878334852560, 1e-9);
  EXPECT_GT(s.gap, 0.0);
  EXPECT_NEAR(second_eigenvalue(pcycle_graph(PCycle(PrimeModulus(5)))).lambda2, 0.539344662917, 1e-9);
}

TEST(Spectrum, DenseAndPowerAgree) {
  std::vector<Multigraph> graphs = {complete_graph(7), cycle_graph(33), hypercube_graph(5)};
  for (std::uint32_t p : {23u, 101u, 389u, 509u}) graphs.push_back(pcycle_graph(PCycle(PrimeModulus(p))));
  Multigraph lumpy(6);
  lumpy.add_edge(0, 1, 3);
  lumpy.add_edge(1, 2);
  lumpy.add_loop(2, 4);
  lumpy.add_edge(2, 3, 2);
  lumpy.add_edge(3, 4);
  lumpy.add_edge(4, 5, 5);
  lumpy.add_edge(5, 0);
  graphs.push_back(lumpy);
  for (const auto& g : graphs) {
    auto d = second_eigenvalue_dense(g);
    auto p = second_eigenvalue_power(g);
    EXPECT_EQ(p.method, SpectrumMethod::PowerIteration);
    EXPECT_NEAR(d.lambda2, p.lambda2, 1e-6);
    EXPECT_NEAR(d.lambda_min, p.lambda_min, 1e-6);
  }
}

TEST(Spectrum, RelabelingInvariance) {
  PCycle z(PrimeModulus(23));
  auto base = second_eigenvalue_dense(pcycle_graph(z)).lambda2;
  CounterRng rng(11);
  RngStream s(rng, streams::kHarness);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::uint32_t> perm(23);
    std::iota(perm.begin(), perm.end(), 0u);
    for (std::uint32_t i = 22; i > 0; --i) std::swap(perm[i], perm[s.below(i + 1)]);
    Multigraph g(23);
    for (Vertex x = 0; x < 23; ++x) {
      for (Vertex y : z.neighbors(x)) g.add_slot(perm[x], perm[y]);
    }
    EXPECT_NEAR(second_eigenvalue_dense(g).lambda2, base, 1e-10);
  }
}

TEST(Spectrum, SingleVertexAndDisconnected) {
  Multigraph one(1);
  one.add_loop(0);
  EXPECT_DOUBLE_EQ(second_eigenvalue(one).gap, 1.0);
  Multigraph two(2);
  two.add_loop(0);
  two.add_loop(1);
  EXPECT_THROW(second_eigenvalue(two), NotConnected);
}

TEST(Expansion, AnalyticValues) {
  auto c4 = edge_expansion_bruteforce(cycle_graph(4));
  EXPECT_DOUBLE_EQ(c4.value(), 1.0);
  auto k4 = edge_expansion_bruteforce(complete_graph(4));
  EXPECT_DOUBLE_EQ(k4.value(), 2.0);
  EXPECT_NEAR(edge_expansion_bruteforce(cycle_graph(6)).value(), 2.0 / 3.0, 1e-15);
  EXPECT_THROW(edge_expansion_bruteforce(cycle_graph(23)), TooLarge);
}

TEST(Expansion, MatchesNaiveEnumeration) {
  for (std::uint32_t p : {5u, 7u, 11u, 13u, 17u}) {
    auto g = pcycle_graph(PCycle(PrimeModulus(p)));
    EXPECT_NEAR(edge_expansion_bruteforce(g).value(), naive_expansion(g), 1e-12) << p;
  }
  EXPECT_NEAR(edge_expansion_bruteforce(hypercube_graph(4)).value(), naive_expansion(hypercube_graph(4)), 1e-12);
}

TEST(Cheeger, SandwichHolds) {
  for (std::uint32_t p : {5u, 7u, 11u, 13u, 17u, 19u}) {
    auto r = cheeger_check(pcycle_graph(PCycle(PrimeModulus(p))));
    EXPECT_TRUE(r.holds) << p << " h/d=" << r.normalized_h << " [" << r.lower << ", " << r.upper << "]";
  }
  EXPECT_TRUE(cheeger_check(complete_graph(4)).holds);
  EXPECT_TRUE(cheeger_check(cycle_graph(6)).holds);
  Multigraph star(4);
  for (std::uint32_t v = 1; v < 4; ++v) star.add_edge(0, v);
  EXPECT_THROW(cheeger_check(star), NotRegular);
}

TEST(Mixing, DegenerateSets) {
  PCycle z(PrimeModulus(101));
  double lam = second_eigenvalue_dense(pcycle_graph(z)).lambda_abs;
  std::vector<char> all(101, 1), none(101, 0);
  std::unique_ptr<bool[]> a(new bool[101]), e(new bool[101]);
  for (int i = 0; i < 101; ++i) {
    a[i] = true;
    e[i] = false;
  }
  std::span<const bool> sa(a.get(), 101), se(e.get(), 101);
  EXPECT_NEAR(mixing_violation(z, lam, sa, sa), -lam * 3 * 101, 1e-9);
  EXPECT_DOUBLE_EQ(mixing_violation(z, lam, se, sa), 0.0);
}

TEST(Mixing, SampledPairs) {
  CounterRng rng(4);
  for (std::uint32_t p : {101u, 389u}) {
    RngStream s(rng, streams::kSpectral);
    EXPECT_LE(mixing_check(PCycle(PrimeModulus(p)), 1000, s), 1e-6);
  }
}

}  // namespace
}  // namespace dex

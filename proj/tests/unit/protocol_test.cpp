#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "dex/errors.hpp"
#include "dex/protocol.hpp"

namespace dex {
namespace {

std::vector<NodeId> ids(std::uint64_t n, std::uint64_t base = 0) {
  std::vector<NodeId> out(n);
  std::iota(out.begin(), out.end(), base);
  return out;
}

Dex make(std::uint32_t p, std::uint64_t n, ProtocolConfig cfg = {}, std::uint64_t seed = 1) {
  return Dex(VirtualMapping::contiguous(PrimeModulus(p), ids(n)), cfg, seed);
}

ProtocolConfig simplified() {
  ProtocolConfig c;
  c.mode = Type2Mode::Simplified;
  return c;
}

// Everything the harness audits after a step, checked from scratch.
void expect_sound(const Dex& d) {
  const VirtualMapping& m = d.mapping();
  const auto phase = m.staggering() ? MappingPhase::Staggering : MappingPhase::Normal;
  const auto v = verify_mapping(m, phase);
  ASSERT_TRUE(v.empty()) << to_string(v.front().kind) << " node " << v.front().node << ": " << v.front().detail;
  ASSERT_TRUE(network_connected(m));
  ASSERT_EQ(m.temp_link_count(), 0u);
  const auto fresh = m.recompute_links();
  ASSERT_EQ(fresh.size(), m.link_count());
  for (const auto& [link, w] : fresh) ASSERT_EQ(m.multiplicity(link.first, link.second), w);
  const LoadStats st = load_stats(m);
  ASSERT_EQ(d.coordinator().n, st.n);
  ASSERT_EQ(d.coordinator().spare_count, st.spare_count);
  ASSERT_EQ(d.coordinator().low_count, st.low_count);
  ASSERT_EQ(d.coordinator_host(), m.host(m.primary_layer(), 0));
  if (!m.staggering()) {
    for (NodeId u : m.node_ids()) ASSERT_LE(m.degree(u), 3u * m.load(u));
  }
}

TEST(Protocol, InsertWithAllLoadsOneInflates) {
  for (ProtocolConfig cfg : {simplified(), ProtocolConfig{}}) {
    Dex d = make(23, 23, cfg);
    const RecoveryOutcome out = d.handle_insertion(100, 0);
    EXPECT_TRUE(out.inflated);
    EXPECT_FALSE(out.first_walk_success);
    EXPECT_EQ(out.type, RecoveryType::Type2Simplified);
    EXPECT_GT(d.mapping().p(), 4u * 23);
    EXPECT_LT(d.mapping().p(), 8u * 23);
    EXPECT_EQ(d.mapping().load(100), 1u);
    EXPECT_FALSE(d.window().has_value());
    expect_sound(d);
  }
}

TEST(Protocol, InsertServedByType1) {
  Dex d = make(101, 20);  // loads 5 and 6
  const RecoveryOutcome out = d.handle_insertion(500, 3);
  EXPECT_EQ(out.type, RecoveryType::Type1);
  EXPECT_TRUE(out.first_walk_success);
  EXPECT_EQ(out.walks, 1u);
  EXPECT_EQ(d.mapping().load(500), 1u);
  const QuotientGraph q = quotient(d.mapping());
  const auto at = std::find(q.nodes.begin(), q.nodes.end(), NodeId{500}) - q.nodes.begin();
  EXPECT_EQ(q.graph.degree(static_cast<std::uint32_t>(at)), 3u);
  EXPECT_GE(out.ledger.rounds(), 1u);
  EXPECT_LE(out.topology_changes, 3u * 4 * kZeta + 2 + 1);
  expect_sound(d);
}

TEST(Protocol, InsertionCountersFollowThresholdCrossing) {
  // Nodes 0..3 hold two vertices, the rest one; the donor leaves Spare.
  std::vector<NodeId> host;
  for (NodeId u = 0; u < 11; ++u) host.insert(host.end(), u < 4 ? 2 : 1, u);
  ASSERT_EQ(host.size(), 15u);
  host.push_back(11);
  host.push_back(12);
  VirtualMapping m(PCycle(PrimeModulus(17)), host);
  Dex d(m, {}, 3);
  const auto before = d.coordinator();
  d.handle_insertion(50, 8);
  EXPECT_EQ(d.coordinator().n, before.n + 1);
  EXPECT_EQ(d.coordinator().spare_count, before.spare_count - 1);
  EXPECT_EQ(d.coordinator().low_count, before.low_count + 1);
  expect_sound(d);
}

TEST(Protocol, IllegalActions) {
  Dex d = make(101, 20);
  EXPECT_THROW(d.handle_insertion(3, 4), IllegalAction);
  EXPECT_THROW(d.handle_insertion(300, 400), IllegalAction);
  EXPECT_THROW(d.handle_deletion(400), IllegalAction);
  Dex one = make(5, 1);
  EXPECT_THROW(one.handle_deletion(0), IllegalAction);
}

TEST(Protocol, DeleteAbsorbsAndRedistributes) {
  Dex d = make(101, 40);
  const NodeId absorber = d.absorber_of(5);
  EXPECT_EQ(absorber, d.mapping().neighbors(5).front());
  const std::uint32_t k = d.mapping().load(5);
  const RecoveryOutcome out = d.handle_deletion(5);
  EXPECT_EQ(out.type, RecoveryType::Type1);
  EXPECT_EQ(out.walks, k);
  EXPECT_FALSE(d.mapping().has_node(5));
  EXPECT_EQ(d.coordinator().low_count, 39u);
  expect_sound(d);
}

TEST(Protocol, DeleteLoadOneNodeUsesOneWalk) {
  Dex d = make(101, 101);
  const RecoveryOutcome out = d.handle_deletion(50);
  EXPECT_EQ(out.walks, 1u);
  EXPECT_EQ(out.walk_failures, 0u);
  expect_sound(d);
}

TEST(Protocol, DeleteWithNoLowNodeDeflates) {
  for (ProtocolConfig cfg : {simplified(), ProtocolConfig{}}) {
    Dex d = make(101, 5, cfg);  // loads 20 and 21: nobody is in Low
    const RecoveryOutcome out = d.handle_deletion(2);
    EXPECT_TRUE(out.deflated);
    EXPECT_EQ(out.type, RecoveryType::Type2Simplified);
    EXPECT_EQ(d.mapping().p(), 13u);
    std::uint32_t total = 0;
    for (NodeId u : d.mapping().node_ids()) {
      EXPECT_GE(d.mapping().load(u), 1u);
      total += d.mapping().load(u);
    }
    EXPECT_EQ(total, 13u);
    expect_sound(d);
  }
}

TEST(Protocol, ContendingNodeClaimsVertex) {
  // Node 9 hosts only vertices that are dominated in the 101 -> 13 deflation.
  const DeflationPlan plan = DeflationPlan::for_cycle(PrimeModulus(101));
  ASSERT_EQ(plan.p_new().value(), 13u);
  const auto doms = plan.dominators();
  const std::set<Vertex> dom(doms.begin(), doms.end());
  std::vector<NodeId> host(101);
  std::uint32_t given = 0;
  for (Vertex z = 0; z < 101; ++z) {
    if (!dom.count(z) && z > 40 && given < 18) {
      host[z] = 9;
      ++given;
    } else {
      host[z] = z % 4;
    }
  }
  Dex d(VirtualMapping(PCycle(PrimeModulus(101)), host), simplified(), 5);
  ASSERT_TRUE(std::none_of(d.mapping().sim(9).begin(), d.mapping().sim(9).end(),
                           [&](Vertex z) { return dom.count(z) > 0; }));
  const NodeId victim = d.mapping().neighbors(9).front() == 0 ? 1 : 0;
  const RecoveryOutcome out = d.handle_deletion(victim);
  ASSERT_TRUE(out.deflated);
  EXPECT_GE(d.mapping().load(9), 1u);
  expect_sound(d);
}

TEST(Protocol, CoordinatorSurvivesItsHostsDeletion) {
  Dex d = make(401, 120);
  for (int i = 0; i < 60; ++i) {
    const NodeId h = d.coordinator_host();
    const auto replica = d.replicas();
    ASSERT_FALSE(replica.empty());
    d.handle_deletion(h);
    ASSERT_FALSE(d.mapping().has_node(h));
    expect_sound(d);
  }
}

TEST(Protocol, CoordinatorCountersMatchUnderChurn) {
  Dex d = make(211, 100);
  CounterRng rng(9);
  NodeId next = 1000;
  for (std::uint64_t t = 0; t < 400; ++t) {
    const auto live = d.mapping().node_ids();
    if (rng.below(3, t, 2) == 0 && live.size() > 4) {
      d.handle_deletion(live[rng.below(3, t + 100000, live.size())]);
    } else {
      d.handle_insertion(next++, live[rng.below(3, t + 200000, live.size())]);
    }
    expect_sound(d);
  }
}

TEST(Protocol, StaggeredInflationWindow) {
  ProtocolConfig cfg;
  cfg.theta_num = 1;
  cfg.theta_den = 8;
  Dex d = make(41, 40, cfg);
  const RecoveryOutcome first = d.handle_insertion(100, 0);
  EXPECT_EQ(first.type, RecoveryType::Type1);
  ASSERT_TRUE(d.window().has_value());
  EXPECT_EQ(d.window()->kind, RebuildKind::Inflate);
  const std::uint32_t ticks = d.window()->total_ticks();
  EXPECT_GT(ticks, 2u);
  const std::uint32_t p_new = d.window()->p_new;
  NodeId next = 101;
  std::uint32_t seen = 0;
  while (d.window()) {
    const RecoveryOutcome out = d.handle_insertion(next, next - 1);
    ++next;
    ++seen;
    EXPECT_EQ(out.type, RecoveryType::Type2StaggeredTick);
    EXPECT_TRUE(out.ticked);
    expect_sound(d);
    for (NodeId u : d.mapping().node_ids()) ASSERT_LE(d.mapping().load(u), 8 * kZeta);
  }
  EXPECT_EQ(seen, ticks);
  EXPECT_EQ(d.mapping().p(), p_new);
  EXPECT_FALSE(d.mapping().staggering());
}

TEST(Protocol, StaggeredDeflationWindow) {
  ProtocolConfig cfg;
  cfg.theta_num = 1;
  cfg.theta_den = 4;
  Dex d = make(401, 20, cfg);  // loads 20 and 21
  d.handle_insertion(100, 0);
  ASSERT_TRUE(d.window().has_value());
  EXPECT_EQ(d.window()->kind, RebuildKind::Deflate);
  const std::uint32_t p_new = d.window()->p_new;
  std::uint64_t t = 0;
  NodeId next = 101;
  while (d.window()) {
    if (t++ % 2) {
      d.handle_deletion(d.mapping().node_ids().back());
    } else {
      d.handle_insertion(next++, 0);
    }
    expect_sound(d);
    for (NodeId u : d.mapping().node_ids()) ASSERT_LE(d.mapping().load(u), 8 * kZeta);
    ASSERT_GE(d.mapping().layer_cycle(d.mapping().primary_layer()).size(), 1u);
  }
  EXPECT_EQ(d.mapping().p(), p_new);
}

TEST(Protocol, BatchInsertAndDelete) {
  Dex d = make(1409, 700);
  std::vector<std::pair<NodeId, NodeId>> joins;
  for (NodeId i = 0; i < 32; ++i) joins.push_back({5000 + i, i * 20});
  const RecoveryOutcome in = d.handle_batch_insert(joins);
  for (const auto& [u, a] : joins) EXPECT_GE(d.mapping().load(u), 1u);
  EXPECT_EQ(in.walks - in.walk_failures, 32u);
  expect_sound(d);

  std::vector<NodeId> leaves;
  for (NodeId i = 0; i < 30; ++i) leaves.push_back(3 + 23 * i);
  const RecoveryOutcome out = d.handle_batch_delete(leaves);
  for (NodeId u : leaves) EXPECT_FALSE(d.mapping().has_node(u));
  EXPECT_LE(out.ledger.rounds(), d.round_cap());
  expect_sound(d);
}

TEST(Protocol, BatchConstraints) {
  Dex d = make(401, 200);
  EXPECT_THROW(d.handle_batch_insert({{900, 1}, {901, 1}, {902, 1}}), InvalidBatch);
  std::vector<std::pair<NodeId, NodeId>> big;
  for (NodeId i = 0; i < 11; ++i) big.push_back({900 + i, i * 5});
  EXPECT_THROW(d.handle_batch_insert(big), InvalidBatch);
  EXPECT_THROW(d.handle_batch_delete({4, 4}), InvalidBatch);
  EXPECT_THROW(d.handle_batch_insert({}), InvalidBatch);
  // Deleting every neighbor of node 50 along with it strands nobody, but
  // deleting all of them without 50 would isolate it.
  const auto nb = d.mapping().neighbors(50);
  EXPECT_THROW(d.handle_batch_delete(nb), InvalidBatch);
  expect_sound(d);
}

TEST(Protocol, BatchOfOneMatchesSingleEvent) {
  Dex a = make(211, 60, {}, 4);
  Dex b = make(211, 60, {}, 4);
  const auto x = a.handle_insertion(300, 7);
  const auto y = b.handle_batch_insert({{300, 7}});
  EXPECT_EQ(x.ledger.rounds(), y.ledger.rounds());
  EXPECT_EQ(x.ledger.messages(), y.ledger.messages());
  EXPECT_EQ(x.topology_changes, y.topology_changes);
  const auto u = a.handle_deletion(12);
  const auto v = b.handle_batch_delete({12});
  EXPECT_EQ(u.ledger.rounds(), v.ledger.rounds());
  EXPECT_EQ(u.ledger.messages(), v.ledger.messages());
}

std::vector<std::uint64_t> churn_trace(std::uint64_t seed, Type2Mode mode) {
  ProtocolConfig cfg;
  cfg.mode = mode;
  Dex d = make(23, 23, cfg, seed);
  CounterRng rng(seed);
  std::vector<std::uint64_t> trace;
  NodeId next = 100;
  for (std::uint64_t t = 0; t < 300; ++t) {
    const auto live = d.mapping().node_ids();
    RecoveryOutcome out;
    if (rng.below(1, t, 3) == 0 && live.size() > 4) {
      out = d.handle_deletion(live[rng.below(1, t + 7777, live.size())]);
    } else {
      out = d.handle_insertion(next++, live[rng.below(1, t + 9999, live.size())]);
    }
    trace.push_back(out.ledger.rounds());
    trace.push_back(out.ledger.messages());
    trace.push_back(out.topology_changes);
  }
  for (Vertex z = 0; z < d.mapping().p(); ++z) trace.push_back(d.mapping().host(z));
  return trace;
}

TEST(Protocol, Deterministic) {
  for (Type2Mode mode : {Type2Mode::Simplified, Type2Mode::Staggered}) {
    EXPECT_EQ(churn_trace(11, mode), churn_trace(11, mode));
    EXPECT_NE(churn_trace(11, mode), churn_trace(12, mode));
  }
}

TEST(Protocol, FirstWalkUsuallySucceeds) {
  // Half of 1024 nodes hold two vertices.
  const VirtualMapping base = VirtualMapping::contiguous(PrimeModulus(1543), ids(1024));
  ASSERT_GE(spare_set(base).size(), 500u);
  int hits = 0;
  const int trials = 200;
  for (int i = 0; i < trials; ++i) {
    Dex d(base, {}, 1000 + i);
    hits += d.handle_insertion(9999, (i * 37) % 1024).first_walk_success;
  }
  EXPECT_GE(hits, trials * 99 / 100);
}

}  // namespace
}  // namespace dex

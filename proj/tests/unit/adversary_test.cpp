#include <gtest/gtest.h>

#include <sstream>

#include "dex/adversary.hpp"
#include "dex/errors.hpp"
#include "dex/simulation.hpp"

namespace dex {
namespace {

RunConfig config(const std::string& strategy, std::uint64_t steps, std::uint64_t n0 = 64) {
  RunConfig c;
  c.strategy = strategy;
  c.steps = steps;
  c.n0 = n0;
  return c;
}

TEST(Adversary, ParsesStrategies) {
  for (const char* s : {"uniform-churn", "uniform-churn:0.3", "insert-only", "delete-only", "max-degree-attack",
                        "coordinator-attack", "spare-drain", "spare-drain:0.2", "oscillator", "batch-churn:0.05"}) {
    EXPECT_NO_THROW(make_strategy(s)) << s;
  }
  for (const char* s : {"nope", "uniform-churn:2", "uniform-churn:x", "insert-only:1", "batch-churn:0"}) {
    EXPECT_THROW(make_strategy(s), ConfigError) << s;
  }
}

TEST(Adversary, ScriptRoundTrip) {
  std::istringstream in(
      "# warm up\n"
      "insert 100 3\n"
      "\n"
      "delete 7   # gone\n"
      "batch-insert 200:1 201:2\n"
      "batch-delete 4 5\n");
  const auto actions = read_script(in);
  ASSERT_EQ(actions.size(), 4u);
  EXPECT_EQ(actions[0], AdversaryAction::insert(100, 3));
  EXPECT_EQ(actions[1], AdversaryAction::remove(7));
  EXPECT_EQ(actions[2].kind, EventKind::BatchInsert);
  EXPECT_EQ(actions[3].leaves, (std::vector<NodeId>{4, 5}));
  std::ostringstream out;
  for (const auto& a : actions) out << to_script_line(a) << '\n';
  std::istringstream again(out.str());
  EXPECT_EQ(read_script(again), actions);
  for (const char* bad : {"insert 1\n", "remove 3\n", "delete 3 4\n", "batch-insert 1\n", "batch-delete 1:2\n"}) {
    std::istringstream b(bad);
    EXPECT_THROW(read_script(b), ParseError) << bad;
  }
}

TEST(Adversary, LegalityChecks) {
  Dex d(initial_mapping(8), {}, 1);
  EXPECT_NO_THROW(check_legal(AdversaryAction::insert(100, 3), d, 4));
  EXPECT_THROW(check_legal(AdversaryAction::insert(3, 4), d, 4), IllegalAction);
  EXPECT_THROW(check_legal(AdversaryAction::insert(100, 99), d, 4), IllegalAction);
  EXPECT_THROW(check_legal(AdversaryAction::remove(99), d, 4), IllegalAction);
  EXPECT_THROW(check_legal(AdversaryAction::remove(1), d, 8), IllegalAction);
  EXPECT_THROW(check_legal({EventKind::Insert, {}, {3}}, d, 4), IllegalAction);
  EXPECT_THROW(check_legal({EventKind::BatchDelete, {}, {1, 2, 3, 4, 5}}, d, 4), IllegalAction);
}

TEST(Adversary, InsertOnlyInflatesImmediately) {
  std::vector<NodeId> nodes(23);
  for (NodeId u = 0; u < 23; ++u) nodes[u] = u;
  Dex d(VirtualMapping::contiguous(PrimeModulus(23), nodes), {}, 1);  // all loads 1
  auto s = make_strategy("insert-only");
  CounterRng rng(1);
  const auto a = s->next({d, rng, 0, 4});
  ASSERT_TRUE(a);
  EXPECT_EQ(a->joins[0].first, 23u);
  EXPECT_TRUE(d.handle_insertion(a->joins[0].first, a->joins[0].second).inflated);
}

TEST(Adversary, DeleteOnlyForcesDeflation) {
  Simulation sim(config("delete-only", 600, 600));
  bool deflated = false;
  while (auto r = sim.step()) {
    if (r->deflated) {
      deflated = true;
      break;
    }
  }
  EXPECT_TRUE(deflated);
  EXPECT_LE(sim.steps_done(), 600u);
}

TEST(Adversary, StrategiesStayLegal) {
  for (const char* s : {"uniform-churn", "insert-only", "delete-only", "max-degree-attack", "coordinator-attack",
                        "spare-drain", "oscillator", "batch-churn:0.1"}) {
    Simulation sim(config(s, 400, 32));
    EXPECT_NO_THROW(while (sim.step()) {}) << s;
    EXPECT_EQ(sim.steps_done(), 400u) << s;
  }
}

TEST(Adversary, CoordinatorAttackTargetsVertexZero) {
  Simulation sim(config("coordinator-attack", 10, 16));
  const NodeId host = sim.dex().coordinator_host();
  sim.step();
  EXPECT_EQ(sim.last_action(), AdversaryAction::remove(host));
}

TEST(Adversary, OscillatorForcesBothRebuilds) {
  RunConfig c = config("oscillator", 4000, 16);
  c.mode = Type2Mode::Simplified;
  Simulation sim(c);
  while (sim.step()) {
  }
  EXPECT_GE(sim.summary().inflations, 2u);
  EXPECT_GE(sim.summary().deflations, 2u);
}

TEST(Adversary, BatchChurnRespectsConstraints) {
  Simulation sim(config("batch-churn:0.05", 60, 256));
  while (auto r = sim.step()) {
    const auto& a = sim.last_action();
    EXPECT_TRUE(a.kind == EventKind::BatchInsert || a.kind == EventKind::BatchDelete);
  }
  EXPECT_EQ(sim.steps_done(), 60u);
}

}  // namespace
}  // namespace dex

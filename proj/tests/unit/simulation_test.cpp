#include <gtest/gtest.h>

#include <sstream>

#include "dex/errors.hpp"
#include "dex/simulation.hpp"

namespace dex {
namespace {

TEST(Simulation, ParsesConfigFiles) {
  std::istringstream in(
      "# churn run\n"
      "seed = 9\n"
      "n0=128\n"
      "strategy = spare-drain:0.4   # comment\n"
      "theta = 1/1000\n"
      "type2_mode = simplified\n"
      "spectral_checkpoint_every = 50\n"
      "\n");
  const RunConfig c = parse_config(in);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.n0, 128u);
  EXPECT_EQ(c.strategy, "spare-drain:0.4");
  EXPECT_EQ(c.theta_num, 1u);
  EXPECT_EQ(c.theta_den, 1000u);
  EXPECT_EQ(c.mode, Type2Mode::Simplified);
  EXPECT_EQ(c.spectral_every, 50u);
  EXPECT_EQ(c.steps, RunConfig{}.steps);
  EXPECT_NO_THROW(validate(c));
}

TEST(Simulation, DecimalTheta) {
  RunConfig c;
  apply_setting(c, "theta", "0.001");
  EXPECT_EQ(c.theta_num * 1000, c.theta_den);
}

TEST(Simulation, RejectsBadConfig) {
  for (const char* text : {"steps=-1\n", "n0\n", "bogus=1\n", "mode=fast\n", "theta=x\n", "experimental=maybe\n"}) {
    std::istringstream in(text);
    EXPECT_THROW(parse_config(in), ConfigError) << text;
  }
  RunConfig c;
  c.n0 = 3;
  EXPECT_THROW(validate(c), ConfigError);
  c = {};
  c.theta_den = 100;
  EXPECT_THROW(validate(c), ConfigError);
  c.experimental = true;
  EXPECT_NO_THROW(validate(c));
  c = {};
  c.batch_fraction = 0;
  EXPECT_THROW(validate(c), ConfigError);
  c = {};
  c.strategy = "nope";
  EXPECT_THROW(Simulation{c}, ConfigError);
}

TEST(Simulation, InitialMapping) {
  const VirtualMapping m = initial_mapping(64);
  EXPECT_EQ(m.p(), 257u);  // least prime above 256
  EXPECT_EQ(m.node_count(), 64u);
  for (NodeId u : m.node_ids()) {
    EXPECT_GE(m.load(u), 4u);
    EXPECT_LE(m.load(u), 5u);
  }
  EXPECT_TRUE(verify_mapping(m, MappingPhase::Normal).empty());
}

TEST(Simulation, SummaryTotalsMatchSteps) {
  RunConfig c;
  c.n0 = 64;
  c.steps = 300;
  c.spectral_every = 50;
  Simulation sim(c);
  std::uint64_t rounds = 0, messages = 0, changes = 0, checkpoints = 0;
  std::map<RecoveryType, std::uint64_t> counts;
  while (auto r = sim.step()) {
    rounds += r->rounds_used;
    messages += r->messages_used;
    changes += r->topology_changes;
    ++counts[r->recovery_type];
    if (r->lambda_quotient) {
      ++checkpoints;
      EXPECT_LE(*r->lambda_quotient, *r->lambda_virtual + 1e-9);
    }
  }
  const Summary& s = sim.summary();
  EXPECT_EQ(s.steps, 300u);
  EXPECT_EQ(s.total_rounds, rounds);
  EXPECT_EQ(s.total_messages, messages);
  EXPECT_EQ(s.total_topology_changes, changes);
  EXPECT_EQ(checkpoints, 6u);
  ASSERT_TRUE(s.min_gap);
  EXPECT_GT(*s.min_gap, 0.0);
  std::uint64_t by_type = 0;
  for (const auto& [type, t] : s.by_type) {
    EXPECT_EQ(t.count, counts[type]);
    by_type += t.sum_messages;
  }
  EXPECT_EQ(by_type, messages);
  EXPECT_EQ(s.final_n, sim.dex().mapping().node_count());
  EXPECT_LE(s.max_load, 4 * kZeta);
}

TEST(Simulation, StopsAtStepCount) {
  RunConfig c;
  c.steps = 0;
  Simulation sim(c);
  EXPECT_FALSE(sim.step());
  EXPECT_EQ(sim.summary().steps, 0u);
}

TEST(Simulation, ScriptEndsTheRun) {
  std::vector<AdversaryAction> script{AdversaryAction::insert(100, 0), AdversaryAction::remove(3)};
  RunConfig c;
  c.n0 = 16;
  Simulation sim(c, scripted_strategy(script));
  EXPECT_TRUE(sim.step());
  EXPECT_TRUE(sim.step());
  EXPECT_FALSE(sim.step());
  EXPECT_TRUE(sim.dex().mapping().has_node(100));
  EXPECT_FALSE(sim.dex().mapping().has_node(3));
}

TEST(Simulation, IllegalScriptedActionThrows) {
  RunConfig c;
  c.n0 = 16;
  Simulation sim(c, scripted_strategy({AdversaryAction::remove(99)}));
  EXPECT_THROW(sim.step(), IllegalAction);
}

TEST(Simulation, Deterministic) {
  RunConfig c;
  c.n0 = 48;
  c.steps = 200;
  c.seed = 5;
  auto rows = [&] {
    Simulation sim(c);
    std::string out;
    while (auto r = sim.step()) out += csv_row(*r) + "\n";
    return out;
  };
  EXPECT_EQ(rows(), rows());
  const std::string a = rows();
  c.seed = 6;
  EXPECT_NE(a, rows());
}

TEST(Simulation, InvariantsFlagCorruption) {
  Dex d(initial_mapping(8), {}, 1);
  EXPECT_TRUE(check_invariants(d).empty());
  // A join that never recovers leaves its temporary link behind.
  VirtualMapping m = initial_mapping(8);
  m.add_node(50);
  m.add_temp_link(50, 0);
  const auto problems = check_invariants(Dex(m, {}, 1));
  EXPECT_FALSE(problems.empty());
}

TEST(Simulation, SpectralCheckpointOutsideWindow) {
  Dex d(initial_mapping(16), {}, 1);
  const SpectralCheckpoint cp = spectral_checkpoint(d);
  EXPECT_FALSE(cp.in_window);
  EXPECT_TRUE(cp.holds);
  EXPECT_LE(cp.lambda_quotient, cp.lambda_reference + 1e-9);
}

TEST(Simulation, MetricMapHolds) {
  Dex d(initial_mapping(32), {}, 1);
  EXPECT_TRUE(check_metric_map(d.mapping(), CounterRng(3), 0).empty());
}

}  // namespace
}  // namespace dex

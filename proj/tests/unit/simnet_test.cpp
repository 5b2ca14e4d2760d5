#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

#include "dex/errors.hpp"
#include "dex/simnet.hpp"

namespace dex {
namespace {

std::vector<NodeId> ids(std::uint64_t n, std::uint64_t base = 0) {
  std::vector<NodeId> out(n);
  std::iota(out.begin(), out.end(), base);
  return out;
}

const ArrivalPredicate kAlways = [](Token&, NodeId) { return true; };
const ArrivalPredicate kNever = [](Token&, NodeId) { return false; };

TEST(Message, PayloadBound) {
  const Message m(MessageKind::Walk, {1, 2, 3, 4, 5, 6, 7, 8});
  EXPECT_EQ(m.size(), 8u);
  EXPECT_EQ(m[7], 8u);
  EXPECT_THROW(Message(MessageKind::Walk, {1, 2, 3, 4, 5, 6, 7, 8, 9}), DomainError);
  EXPECT_THROW(m[8], std::out_of_range);
}

TEST(Engine, RouteOneHop) {
  const VirtualMapping m(PCycle(PrimeModulus(23)), ids(23));
  std::vector<Token> t{make_route(0, {4, 5}, Message(MessageKind::Reply, {}))};
  const EngineResult r = run_tokens(m, CounterRng(1), t, kAlways, 100);
  EXPECT_EQ(r.rounds, 1u);
  EXPECT_EQ(r.messages, 1u);
  EXPECT_EQ(t[0].state, TokenState::Done);
  EXPECT_EQ(t[0].holder, 5u);
}

TEST(Engine, ContentionDelaysSecondTokenOneRound) {
  const VirtualMapping m(PCycle(PrimeModulus(23)), ids(23));
  std::vector<Token> t{make_route(1, {4, 5}, Message(MessageKind::Reply, {})),
                       make_route(2, {4, 5}, Message(MessageKind::Reply, {}))};
  const EngineResult r = run_tokens(m, CounterRng(1), t, kAlways, 100);
  EXPECT_EQ(r.rounds, 2u);
  EXPECT_EQ(r.per_round, (std::vector<std::uint64_t>{1, 1}));
  EXPECT_EQ(t[0].finished_round + 1, t[1].finished_round);
  // Different classes do not contend.
  std::vector<Token> mixed{make_route(1, {4, 5}, Message(MessageKind::Reply, {})),
                           make_walk(2, TokenClass::FindSpare, 4, 1)};
  mixed[1].excluded = 3;
  EXPECT_EQ(run_tokens(m, CounterRng(1), mixed, kAlways, 100).rounds, 1u);
}

TEST(Engine, RouteAlongInverseEdge) {
  // 2 and 12 are inverses mod 23.
  const VirtualMapping m(PCycle(PrimeModulus(23)), ids(23));
  const auto path = host_path(m, LayerId::Current, m.cycle().shortest_path(2, 12));
  EXPECT_EQ(path, (std::vector<NodeId>{2, 12}));
  EXPECT_EQ(route_message(m, path, Message(MessageKind::CoordinatorUpdate, {1})).rounds, 1u);
}

TEST(Engine, RouteBrokenOnMissingLink) {
  const VirtualMapping m(PCycle(PrimeModulus(23)), ids(23));
  EXPECT_THROW(route_message(m, {4, 9}, Message()), RouteBroken);
}

TEST(Engine, HostPathDropsRepeats) {
  const auto m = VirtualMapping::contiguous(PrimeModulus(23), ids(5));
  const auto path = host_path(m, LayerId::Current, {0, 1, 2, 3, 4, 5, 6});
  EXPECT_EQ(path, (std::vector<NodeId>{0, 1}));
}

TEST(Engine, WalkTerminatesInOneStep) {
  const VirtualMapping m(PCycle(PrimeModulus(5)), {0, 0, 0, 1, 1});
  ASSERT_EQ(m.neighbors(0), (std::vector<NodeId>{1}));
  std::vector<Token> t{make_walk(0, TokenClass::FindLow, 0, 10)};
  run_tokens(m, CounterRng(3), t, [](Token&, NodeId w) { return w == 1; }, 100);
  EXPECT_EQ(t[0].state, TokenState::Done);
  EXPECT_EQ(t[0].steps, 1u);
  EXPECT_EQ(t[0].trail, (std::vector<NodeId>{0, 1}));
}

TEST(Engine, WalkFreezesAtStepBudget) {
  const VirtualMapping m(PCycle(PrimeModulus(101)), ids(101));
  std::vector<Token> t{make_walk(7, TokenClass::FindSpare, 0, 24)};
  const EngineResult r = run_tokens(m, CounterRng(3), t, kNever, 1000);
  EXPECT_EQ(t[0].state, TokenState::Frozen);
  EXPECT_EQ(t[0].steps, 24u);
  EXPECT_EQ(r.rounds, 24u);
  EXPECT_EQ(r.messages, 24u);
  // ...or at the round budget.
  std::vector<Token> u{make_walk(7, TokenClass::FindSpare, 0, 24)};
  EXPECT_EQ(run_tokens(m, CounterRng(3), u, kNever, 5).rounds, 5u);
  EXPECT_EQ(u[0].state, TokenState::Frozen);
  EXPECT_EQ(u[0].steps, 5u);
}

TEST(Engine, WalkNeverVisitsExcluded) {
  const VirtualMapping m(PCycle(PrimeModulus(101)), ids(101));
  for (std::uint64_t id = 0; id < 20; ++id) {
    std::vector<Token> t{make_walk(id, TokenClass::FindSpare, 0, 64, 1)};
    run_tokens(m, CounterRng(5), t, kNever, 1000);
    EXPECT_EQ(std::count(t[0].trail.begin(), t[0].trail.end(), NodeId{1}), 0);
  }
}

TEST(Engine, WalkStreamsIndependentOfLaunchOrder) {
  const VirtualMapping m(PCycle(PrimeModulus(101)), ids(101));
  std::vector<Token> a{make_walk(3, TokenClass::FindSpare, 0, 30), make_walk(9, TokenClass::FindLow, 50, 30)};
  std::vector<Token> b{make_walk(9, TokenClass::FindLow, 50, 30), make_walk(3, TokenClass::FindSpare, 0, 30)};
  run_tokens(m, CounterRng(5), a, kNever, 1000);
  run_tokens(m, CounterRng(5), b, kNever, 1000);
  EXPECT_EQ(a[0].trail, b[1].trail);
  EXPECT_EQ(a[1].trail, b[0].trail);
}

TEST(Engine, ParallelRebalanceWalksResolve) {
  // 512 walks from the first half of 1024 nodes; each node of the second half
  // accepts two of them.
  const auto m = VirtualMapping::contiguous(PrimeModulus(2053), ids(1024));
  std::vector<Token> t;
  for (NodeId u = 0; u < 512; ++u) t.push_back(make_walk(u, TokenClass::Rebalance, u, 8 * 10));
  std::map<NodeId, int> taken;
  const std::uint64_t budget = 16 * 10 * 10;
  const EngineResult r = run_tokens(m, CounterRng(77), t,
                                    [&](Token&, NodeId w) { return w >= 512 && taken[w]++ < 2; }, budget);
  for (const Token& x : t) EXPECT_EQ(x.state, TokenState::Done);
  EXPECT_LE(r.rounds, budget);
}

TEST(Flood, Examples) {
  const VirtualMapping ident(PCycle(PrimeModulus(23)), ids(23));
  const FloodResult a = flood_aggregate(ident, 0, Aggregate::Spare);
  EXPECT_EQ(a.n, 23u);
  EXPECT_EQ(a.count, 0u);
  EXPECT_LE(a.cost.rounds, 2u * ident.cycle().diameter());
  EXPECT_LE(a.cost.messages, 2u * ident.link_count());

  const VirtualMapping solo(PCycle(PrimeModulus(5)), {7, 7, 7, 7, 7});
  const FloodResult b = flood_aggregate(solo, 7, Aggregate::Spare);
  EXPECT_EQ(b.n, 1u);
  EXPECT_EQ(b.count, 1u);
  EXPECT_EQ(b.cost.rounds, 0u);

  std::vector<NodeId> host;
  const std::uint32_t loads[] = {4, 4, 3, 3, 3, 3, 3};
  for (NodeId u = 0; u < 7; ++u) host.insert(host.end(), loads[u], u);
  const VirtualMapping seven(PCycle(PrimeModulus(23)), host);
  const FloodResult c = flood_aggregate(seven, 3, Aggregate::Low);
  EXPECT_EQ(c.n, 7u);
  EXPECT_EQ(c.count, 7u);
}

TEST(Ledger, MessagesMatchRounds) {
  StepLedger l;
  l.add(3, 10);
  EngineResult r;
  r.rounds = 2;
  r.per_round = {4, 1};
  l.sequential(r);
  EXPECT_EQ(l.rounds(), 5u);
  EXPECT_EQ(l.messages(), 15u);
  std::uint64_t total = 0;
  for (const auto& rr : l.reports()) total += rr.messages_sent;
  EXPECT_EQ(total, l.messages());
  EXPECT_THROW(l.add(0, 1), DomainError);
}

TEST(Report, CsvAndJson) {
  StepReport r;
  r.step_index = 4;
  r.event = EventKind::Delete;
  r.recovery_type = RecoveryType::Type2Simplified;
  r.rounds_used = 12;
  r.n = 40;
  r.p = 101;
  r.lambda_quotient = 0.5;
  EXPECT_EQ(csv_row(r), "4,delete,type2_simplified,12,0,0,40,101,0,0,0,0.5000000000,");
  const std::string j = ndjson_row(r);
  EXPECT_NE(j.find("\"event\":\"delete\""), std::string::npos);
  EXPECT_NE(j.find("\"lambda_virtual\":null"), std::string::npos);
  const std::string header = kCsvHeader, row = csv_row(r);
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), std::count(row.begin(), row.end(), ','));
}

TEST(Trace, LineGrammar) {
  std::ostringstream os;
  TraceSink sink(&os);
  sink.emit(3, 17, "receive", "vertex=4");
  EXPECT_EQ(os.str(), "round 3 node 17 receive vertex=4\n");
}

}  // namespace
}  // namespace dex

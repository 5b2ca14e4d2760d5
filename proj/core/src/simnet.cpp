#include "dex/simnet.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <set>
#include <tuple>

#include "dex/errors.hpp"

namespace dex {

Message::Message(MessageKind kind, std::initializer_list<std::uint64_t> fields) : kind_(kind) {
  if (fields.size() > kMaxFields) throw DomainError("message payload exceeds eight fields");
  size_ = static_cast<std::uint8_t>(fields.size());
  std::copy(fields.begin(), fields.end(), fields_.begin());
}

std::string to_string(TokenClass c) {
  switch (c) {
    case TokenClass::FindSpare: return "find-spare";
    case TokenClass::FindLow: return "find-low";
    case TokenClass::Rebalance: return "rebalance";
    case TokenClass::ClaimVertex: return "claim-vertex";
    case TokenClass::FindDominator: return "find-dominator";
    case TokenClass::Route: return "route";
  }
  return "token";
}

Token make_walk(std::uint64_t id, TokenClass cls, NodeId origin, std::uint32_t step_budget, NodeId excluded) {
  Token t;
  t.id = id;
  t.cls = cls;
  t.origin = origin;
  t.holder = origin;
  t.excluded = excluded;
  t.step_budget = step_budget;
  t.trail = {origin};
  t.msg = Message(MessageKind::Walk, {id, origin, step_budget});
  return t;
}

Token make_route(std::uint64_t id, std::vector<NodeId> path, Message msg) {
  Token t;
  t.id = id;
  t.cls = TokenClass::Route;
  t.origin = path.empty() ? kNoNode : path.front();
  t.holder = t.origin;
  t.step_budget = path.empty() ? 0 : static_cast<std::uint32_t>(path.size() - 1);
  t.route = std::move(path);
  t.msg = msg;
  if (t.step_budget == 0) t.state = TokenState::Done;
  return t;
}

void TraceSink::emit(std::uint64_t round, NodeId node, const std::string& event, const std::string& detail) {
  if (!out_) return;
  *out_ << "round " << round << " node " << node << ' ' << event;
  if (!detail.empty()) *out_ << ' ' << detail;
  *out_ << '\n';
}

EngineResult run_tokens(const VirtualMapping& m, const CounterRng& rng, std::vector<Token>& tokens,
                        const ArrivalPredicate& arrive, std::uint64_t round_budget, TraceSink* trace,
                        std::uint64_t round_offset) {
  struct Bid {
    NodeId next = kNoNode;
    bool chosen = false;
    std::uint64_t since = 0;
  };
  EngineResult res;
  std::vector<Bid> bids(tokens.size());
  std::vector<std::size_t> order;
  std::vector<std::size_t> moved;
  std::vector<NodeId> eligible;
  std::set<std::tuple<NodeId, NodeId, std::uint8_t>> used;

  auto active = [&] {
    order.clear();
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i].state == TokenState::Active) order.push_back(i);
    }
    return !order.empty();
  };

  std::uint64_t round = 0;
  while (active()) {
    if (round >= round_budget) {
      for (std::size_t i : order) {
        tokens[i].state = TokenState::Frozen;
        tokens[i].finished_round = round;
        if (trace) trace->emit(round_offset + round, tokens[i].holder, "walk-frozen", "token=" + std::to_string(tokens[i].id));
      }
      break;
    }
    ++round;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::tie(bids[a].since, tokens[a].id) < std::tie(bids[b].since, tokens[b].id);
    });
    used.clear();
    moved.clear();
    std::uint64_t sent = 0;
    for (std::size_t i : order) {
      Token& t = tokens[i];
      Bid& bid = bids[i];
      if (!bid.chosen) {
        if (t.cls == TokenClass::Route) {
          bid.next = t.route[t.steps + 1];
          if (t.route[t.steps] != t.holder || !m.linked(t.holder, bid.next)) {
            throw RouteBroken("no link " + std::to_string(t.holder) + "-" + std::to_string(bid.next));
          }
        } else {
          eligible.clear();
          for (const auto& [v, w] : m.adjacency(t.holder)) {
            if (v != t.excluded) eligible.push_back(v);
          }
          if (eligible.empty()) {
            t.state = TokenState::Frozen;
            t.finished_round = round;
            continue;
          }
          bid.next = eligible[rng.below(streams::kWalkBase + t.id, t.steps, eligible.size())];
        }
        bid.chosen = true;
      }
      if (!used.emplace(t.holder, bid.next, static_cast<std::uint8_t>(t.cls)).second) continue;
      if (trace) {
        trace->emit(round_offset + round, t.holder, "send",
                    to_string(t.cls) + " token=" + std::to_string(t.id) + " to=" + std::to_string(bid.next));
      }
      t.holder = bid.next;
      ++t.steps;
      if (t.cls != TokenClass::Route) t.trail.push_back(t.holder);
      bid.chosen = false;
      bid.since = round;
      ++sent;
      moved.push_back(i);
    }
    for (std::size_t i : moved) {
      Token& t = tokens[i];
      bool done = false;
      if (t.cls == TokenClass::Route) {
        done = t.steps == t.route.size() - 1;
      } else {
        done = arrive(t, t.holder);
      }
      if (done) {
        t.state = TokenState::Done;
        t.finished_round = round;
        if (trace) trace->emit(round_offset + round, t.holder, "token-done", "token=" + std::to_string(t.id));
      } else if (t.steps >= t.step_budget) {
        t.state = TokenState::Frozen;
        t.finished_round = round;
        if (trace) trace->emit(round_offset + round, t.holder, "walk-frozen", "token=" + std::to_string(t.id));
      }
    }
    res.per_round.push_back(sent);
    res.messages += sent;
  }
  res.rounds = round;
  res.per_round.resize(round, 0);
  return res;
}

EngineResult route_message(const VirtualMapping& m, const std::vector<NodeId>& path, const Message& msg) {
  std::vector<Token> tokens{make_route(0, path, msg)};
  CounterRng unused(0);
  return run_tokens(m, unused, tokens, [](Token&, NodeId) { return true; }, UINT64_MAX);
}

std::vector<NodeId> host_path(const VirtualMapping& m, LayerId layer, const std::vector<Vertex>& vertices) {
  std::vector<NodeId> out;
  for (Vertex z : vertices) {
    const NodeId h = m.host(layer, z);
    if (h == kNoNode) throw RouteBroken("path crosses unbuilt vertex " + std::to_string(z));
    if (out.empty() || out.back() != h) out.push_back(h);
  }
  return out;
}

namespace {

struct Levels {
  std::uint32_t ecc = 0;
  std::vector<std::uint64_t> broadcast;  ///< messages per broadcast round
  std::vector<std::uint64_t> nodes_at;   ///< node count per level
};

Levels levels(const VirtualMapping& m, NodeId origin) {
  const auto dist = network_distances(m, origin);
  Levels lv;
  for (const auto& [u, d] : dist) lv.ecc = std::max(lv.ecc, d);
  lv.broadcast.assign(lv.ecc, 0);
  lv.nodes_at.assign(lv.ecc + 1, 0);
  for (const auto& [u, d] : dist) {
    ++lv.nodes_at[d];
    // Each node forwards to every neighbor except its parent; forwards by the
    // last level overlap with the first convergecast round and are booked in
    // the final broadcast round.
    const std::uint64_t sends = m.degree(u) - (u == origin ? 0 : 1);
    if (lv.ecc > 0) lv.broadcast[std::min<std::uint32_t>(d, lv.ecc - 1)] += sends;
  }
  return lv;
}

}  // namespace

EngineResult broadcast_cost(const VirtualMapping& m, NodeId origin) {
  const Levels lv = levels(m, origin);
  EngineResult r;
  r.rounds = lv.ecc;
  r.per_round = lv.broadcast;
  for (auto x : lv.broadcast) r.messages += x;
  return r;
}

FloodResult flood_aggregate(const VirtualMapping& m, NodeId origin, Aggregate what) {
  FloodResult f;
  const auto dist = network_distances(m, origin);
  for (const auto& [u, d] : dist) {
    ++f.n;
    const std::uint32_t l = m.load(u);
    f.count += what == Aggregate::Spare ? in_spare(l) : in_low(l);
  }
  const Levels lv = levels(m, origin);
  f.cost.rounds = 2ULL * lv.ecc;
  f.cost.per_round = lv.broadcast;
  for (std::uint32_t j = 0; j < lv.ecc; ++j) f.cost.per_round.push_back(lv.nodes_at[lv.ecc - j]);
  for (auto x : f.cost.per_round) f.cost.messages += x;
  return f;
}

void StepLedger::sequential(const EngineResult& r) {
  for (std::uint64_t i = 0; i < r.rounds; ++i) {
    RoundReport rr;
    rr.round_index = rounds_.size();
    rr.messages_sent = i < r.per_round.size() ? r.per_round[i] : 0;
    messages_ += rr.messages_sent;
    rounds_.push_back(rr);
  }
}

void StepLedger::add(std::uint64_t rounds, std::uint64_t messages) {
  if (rounds == 0) {
    if (messages != 0) throw DomainError("messages need at least one round");
    return;
  }
  EngineResult r;
  r.rounds = rounds;
  for (std::uint64_t i = 0; i < rounds; ++i) r.per_round.push_back(messages / rounds + (i < messages % rounds ? 1 : 0));
  sequential(r);
}

void StepLedger::set_topology(std::uint64_t added, std::uint64_t removed) {
  if (rounds_.empty()) {
    if (added + removed == 0) return;
    rounds_.push_back(RoundReport{});
  }
  rounds_.back().edges_added = added;
  rounds_.back().edges_removed = removed;
}

std::string to_string(EventKind e) {
  switch (e) {
    case EventKind::Insert: return "insert";
    case EventKind::Delete: return "delete";
    case EventKind::BatchInsert: return "batch_insert";
    case EventKind::BatchDelete: return "batch_delete";
  }
  return "event";
}

std::string to_string(RecoveryType r) {
  switch (r) {
    case RecoveryType::Type1: return "type1";
    case RecoveryType::Type2Simplified: return "type2_simplified";
    case RecoveryType::Type2StaggeredTick: return "type2_staggered_tick";
  }
  return "recovery";
}

namespace {

std::string fmt_lambda(const std::optional<double>& x) {
  if (!x) return {};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10f", *x);
  return buf;
}

}  // namespace

std::string csv_row(const StepReport& r) {
  std::string s;
  s += std::to_string(r.step_index) + ',' + to_string(r.event) + ',' + to_string(r.recovery_type) + ',';
  s += std::to_string(r.rounds_used) + ',' + std::to_string(r.messages_used) + ',' +
       std::to_string(r.topology_changes) + ',';
  s += std::to_string(r.n) + ',' + std::to_string(r.p) + ',' + std::to_string(r.max_load) + ',';
  s += std::to_string(r.spare_count) + ',' + std::to_string(r.low_count) + ',';
  s += fmt_lambda(r.lambda_quotient) + ',' + fmt_lambda(r.lambda_virtual);
  return s;
}

std::string ndjson_row(const StepReport& r) {
  auto num = [](const std::optional<double>& x) { return x ? fmt_lambda(x) : std::string("null"); };
  std::string s = "{";
  s += "\"step\":" + std::to_string(r.step_index);
  s += ",\"event\":\"" + to_string(r.event) + "\"";
  s += ",\"recovery_type\":\"" + to_string(r.recovery_type) + "\"";
  s += ",\"rounds\":" + std::to_string(r.rounds_used);
  s += ",\"messages\":" + std::to_string(r.messages_used);
  s += ",\"topology_changes\":" + std::to_string(r.topology_changes);
  s += ",\"n\":" + std::to_string(r.n);
  s += ",\"p\":" + std::to_string(r.p);
  s += ",\"max_load\":" + std::to_string(r.max_load);
  s += ",\"spare\":" + std::to_string(r.spare_count);
  s += ",\"low\":" + std::to_string(r.low_count);
  s += ",\"lambda_quotient\":" + num(r.lambda_quotient);
  s += ",\"lambda_virtual\":" + num(r.lambda_virtual);
  s += ",\"staggering\":" + std::string(r.staggering ? "true" : "false");
  s += ",\"walks\":" + std::to_string(r.walks);
  s += ",\"walk_failures\":" + std::to_string(r.walk_failures);
  s += "}";
  return s;
}

}  // namespace dex

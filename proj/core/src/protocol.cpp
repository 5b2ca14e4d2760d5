#include "dex/protocol.hpp"

#include <algorithm>
#include <bit>
#include <deque>

#include "dex/errors.hpp"

namespace dex {

struct Dex::Step {
  RecoveryOutcome out;
  /// Load of each touched node when first touched (nullopt: not live then).
  std::map<NodeId, std::optional<std::uint32_t>> before;
  std::set<NodeId> departed;
  /// Absorber per departed node; absorbers report on behalf of the departed.
  std::map<NodeId, NodeId> absorbed_by;
  bool simplified = false;
  std::vector<std::pair<Vertex, Vertex>> activation_paths;
};

namespace {

constexpr std::uint32_t kLowCap = 2 * kZeta;
constexpr std::uint32_t kBalancedCap = 4 * kZeta;
constexpr std::uint32_t kWindowCap = 8 * kZeta;
constexpr std::uint64_t kRouteIds = 1ULL << 62;

}  // namespace

Dex::Dex(VirtualMapping initial, ProtocolConfig config, std::uint64_t seed, TraceSink* trace)
    : m_(std::move(initial)), cfg_(config), rng_(seed), trace_(trace) {
  if (cfg_.theta_num == 0 || cfg_.theta_den == 0 || cfg_.theta_num > cfg_.theta_den) {
    throw ConfigError("theta must lie in (0, 1]");
  }
  if (cfg_.ell == 0 || cfg_.c_T == 0 || cfg_.c_rho == 0) throw ConfigError("walk constants must be positive");
  if (m_.staggering()) throw DomainError("initial mapping must be a single layer");
  const LoadStats st = load_stats(m_);
  coord_ = {st.n, st.spare_count, st.low_count, m_.p(), 0};
  coord_host_ = m_.host(0);
  for (NodeId v : m_.neighbors(coord_host_)) replicas_[v] = coord_;
}

std::uint32_t Dex::log2n() const {
  const std::uint64_t n = std::max<std::uint64_t>(m_.node_count(), 2);
  return static_cast<std::uint32_t>(std::bit_width(n - 1));
}

std::uint64_t Dex::round_budget() const {
  const std::uint64_t l = log2n();
  return cfg_.c_rho * l * l;
}

std::uint64_t Dex::round_cap() const {
  const std::uint64_t l = log2n();
  return 64 * l * l * l;
}

std::uint64_t Dex::threshold(std::uint64_t multiple) const {
  return ceil_fraction(multiple * cfg_.theta_num, cfg_.theta_den, m_.node_count());
}

NodeId Dex::absorber_of(NodeId u) const {
  const auto& adj = m_.adjacency(u);
  return adj.empty() ? kNoNode : adj.begin()->first;
}

// -- step bookkeeping -----------------------------------------------------------

void Dex::begin_step(Step& s) { step_ = &s; }

void Dex::touch(Step& s, NodeId u) {
  if (s.before.count(u)) return;
  s.before[u] = m_.has_node(u) ? std::optional<std::uint32_t>(m_.load(u)) : std::nullopt;
}

void Dex::move(Step& s, LayerId l, Vertex z, NodeId from, NodeId to) {
  touch(s, from);
  touch(s, to);
  m_.transfer_vertex(z, from, to, l);
  if (z == 0 && l == m_.primary_layer() && from == coord_host_) coord_host_ = to;
  if (listener_) listener_->on_transfer(l, z, from, to);
  if (trace_ && trace_->enabled()) {
    trace_->emit(global_round_ + s.out.ledger.rounds(), to, "receive",
                 "vertex=" + std::to_string(z) + " layer=" + (l == LayerId::Current ? "current" : "next") +
                     " from=" + std::to_string(from));
  }
}

void Dex::check_cap(const Step& s) const {
  if (s.out.ledger.rounds() > round_cap()) {
    throw RecoveryStalled("recovery exceeded " + std::to_string(round_cap()) + " rounds");
  }
}

std::vector<Token> Dex::launch(std::size_t count, TokenClass cls, NodeId origin, std::uint32_t budget,
                               NodeId excluded) {
  std::vector<Token> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(make_walk(walk_seq_++, cls, origin, budget, excluded));
  return out;
}

EngineResult Dex::run(std::vector<Token>& tokens, const ArrivalPredicate& arrive, Step& s) {
  EngineResult r = run_tokens(m_, rng_, tokens, arrive, round_budget(), trace_, global_round_ + s.out.ledger.rounds());
  s.out.ledger.sequential(r);
  for (const Token& t : tokens) {
    if (t.cls == TokenClass::Route) continue;
    ++s.out.walks;
    if (t.state != TokenState::Done) ++s.out.walk_failures;
  }
  check_cap(s);
  return r;
}

RecoveryOutcome Dex::end_step(Step& s) {
  report_to_coordinator(s);
  maybe_trigger(s);
  // The coordinator state follows vertex 0 of the fully present layer.
  const NodeId holder = m_.host(m_.primary_layer(), 0);
  if (holder != coord_host_) {
    if (!m_.has_node(coord_host_)) throw DomainError("coordinator state lost");
    const auto path = network_path(m_, coord_host_, holder);
    s.out.ledger.sequential(route_message(m_, path, Message(MessageKind::CoordinatorUpdate, {coord_.n, coord_.version})));
    coord_host_ = holder;
  }
  // Refresh replicas at the coordinator's neighbors.
  replicas_.clear();
  for (NodeId v : m_.neighbors(coord_host_)) replicas_[v] = coord_;
  s.out.ledger.add(1, replicas_.size());

  const JournalSummary js = m_.journal_summary(s.departed);
  s.out.topology_changes = js.total();
  s.out.ledger.set_topology(js.links_added, js.links_removed);
  if (s.simplified) {
    s.out.type = RecoveryType::Type2Simplified;
  } else if (s.out.ticked) {
    s.out.type = RecoveryType::Type2StaggeredTick;
  } else {
    s.out.type = RecoveryType::Type1;
  }
  check_cap(s);
  global_round_ += s.out.ledger.rounds();
  step_ = nullptr;
  return std::move(s.out);
}

// -- coordinator ------------------------------------------------------------------

void Dex::report_to_coordinator(Step& s) {
  std::int64_t dn = 0, dspare = 0, dlow = 0;
  std::set<NodeId> reporters;
  for (const auto& [u, before] : s.before) {
    const bool alive = m_.has_node(u);
    const std::optional<std::uint32_t> after = alive ? std::optional<std::uint32_t>(m_.load(u)) : std::nullopt;
    const int bs = before ? in_spare(*before) : 0, bl = before ? in_low(*before) : 0;
    const int as = after ? in_spare(*after) : 0, al = after ? in_low(*after) : 0;
    dn += (after ? 1 : 0) - (before ? 1 : 0);
    dspare += as - bs;
    dlow += al - bl;
    const bool changed = before.has_value() != after.has_value() || bs != as || bl != al;
    if (!changed) continue;
    if (alive) {
      reporters.insert(u);
    } else if (auto it = s.absorbed_by.find(u); it != s.absorbed_by.end() && m_.has_node(it->second)) {
      reporters.insert(it->second);
    }
  }
  s.before.clear();
  if (dn == 0 && dspare == 0 && dlow == 0 && reporters.empty()) return;

  std::vector<Token> tokens;
  const LayerId primary = m_.primary_layer();
  for (NodeId u : reporters) {
    std::vector<NodeId> path;
    const auto& own = m_.sim(primary, u);
    if (!own.empty()) {
      path = host_path(m_, primary, m_.layer_cycle(primary).shortest_path(*own.begin(), 0));
    } else {
      path = network_path(m_, u, coord_host_);
    }
    if (path.size() > 1) {
      tokens.push_back(make_route(kRouteIds + route_seq_++, std::move(path),
                                  Message(MessageKind::CoordinatorUpdate,
                                          {u, static_cast<std::uint64_t>(dn), static_cast<std::uint64_t>(dspare),
                                           static_cast<std::uint64_t>(dlow)})));
    }
  }
  if (!tokens.empty()) run(tokens, [](Token&, NodeId) { return true; }, s);
  coord_.n = static_cast<std::uint64_t>(static_cast<std::int64_t>(coord_.n) + dn);
  coord_.spare_count = static_cast<std::uint64_t>(static_cast<std::int64_t>(coord_.spare_count) + dspare);
  coord_.low_count = static_cast<std::uint64_t>(static_cast<std::int64_t>(coord_.low_count) + dlow);
  coord_.p = m_.p();
  ++coord_.version;
}

void Dex::recount(Step& s, NodeId origin) {
  // One flood carries both sums.
  const FloodResult spare = flood_aggregate(m_, origin, Aggregate::Spare);
  const FloodResult low = flood_aggregate(m_, origin, Aggregate::Low);
  s.out.ledger.sequential(spare.cost);
  coord_ = {spare.n, spare.count, low.count, m_.p(), coord_.version + 1};
  s.before.clear();
}

void Dex::maybe_trigger(Step& s) {
  if (cfg_.mode != Type2Mode::Staggered || window_) return;
  if (coord_.spare_count < threshold(3)) {
    open_window(s, RebuildKind::Inflate);
  } else if (coord_.low_count < threshold(3)) {
    open_window(s, RebuildKind::Deflate);
  }
}

// -- insertion ----------------------------------------------------------------------

RecoveryOutcome Dex::handle_insertion(NodeId u, NodeId anchor) {
  return handle_batch_insert({{u, anchor}});
}

RecoveryOutcome Dex::handle_batch_insert(const std::vector<std::pair<NodeId, NodeId>>& joins) {
  if (joins.empty()) throw InvalidBatch("empty batch");
  std::set<NodeId> fresh;
  std::map<NodeId, std::uint32_t> per_anchor;
  for (const auto& [u, a] : joins) {
    if (m_.has_node(u) || !fresh.insert(u).second || u == kNoNode) {
      throw IllegalAction("inserted node " + std::to_string(u) + " is not fresh");
    }
    if (!m_.has_node(a)) throw IllegalAction("anchor " + std::to_string(a) + " is not live");
    ++per_anchor[a];
  }
  if (joins.size() > 1) {
    const auto cap = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(cfg_.batch_fraction * m_.node_count()));
    if (joins.size() > cap) throw InvalidBatch("batch larger than the allowed fraction of n");
    for (const auto& [a, k] : per_anchor) {
      if (k > cfg_.batch_per_anchor) throw InvalidBatch("too many joins at anchor " + std::to_string(a));
    }
  }
  Step s;
  begin_step(s);
  for (const auto& [u, a] : joins) {
    touch(s, u);
    m_.add_node(u);
    m_.add_temp_link(u, a);
    if (trace_) trace_->emit(global_round_, u, "join", "anchor=" + std::to_string(a));
  }
  m_.open_journal();
  if (window_) tick(s);
  insert_walks(s, joins);
  return end_step(s);
}

std::optional<std::pair<LayerId, Vertex>> Dex::pick_donation(NodeId w) const {
  if (m_.staggering() && m_.load(LayerId::Next, w) >= 2) return {{LayerId::Next, *m_.sim(LayerId::Next, w).begin()}};
  if (!m_.sim(LayerId::Current, w).empty()) return {{LayerId::Current, *m_.sim(LayerId::Current, w).begin()}};
  if (m_.staggering() && !m_.sim(LayerId::Next, w).empty()) {
    return {{LayerId::Next, *m_.sim(LayerId::Next, w).begin()}};
  }
  return std::nullopt;
}

void Dex::insert_walks(Step& s, const std::vector<std::pair<NodeId, NodeId>>& joins) {
  std::vector<std::pair<NodeId, NodeId>> pending;
  for (const auto& j : joins) {
    if (m_.load(j.first) == 0) pending.push_back(j);
  }
  bool first = true;
  while (!pending.empty()) {
    std::vector<Token> tokens;
    for (const auto& [u, a] : pending) {
      auto t = launch(1, TokenClass::FindSpare, a, walk_budget(), u);
      tokens.push_back(std::move(t.front()));
    }
    std::map<NodeId, std::uint32_t> reserved;
    run(tokens,
        [&](Token& t, NodeId w) {
          if (w == t.excluded) return false;
          const std::uint32_t l = m_.load(w);
          if (l >= reserved[w] + 2) {
            ++reserved[w];
            return true;
          }
          return false;
        },
        s);
    std::uint64_t reply_rounds = 0, reply_messages = 0;
    std::vector<std::pair<NodeId, NodeId>> failed;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const auto [u, a] = pending[i];
      const Token& t = tokens[i];
      if (t.state != TokenState::Done) {
        failed.push_back(pending[i]);
        continue;
      }
      const NodeId w = t.holder;
      const auto gift = pick_donation(w);
      move(s, gift->first, gift->second, w, u);
      m_.drop_temp_link(u, a);
      // Reply retraces the walk to the anchor and crosses the temporary link;
      // then the transfer and one link setup per virtual neighbor.
      reply_rounds = std::max<std::uint64_t>(reply_rounds, t.steps + 2);
      reply_messages += t.steps + 1 + 1 + 3;
    }
    s.out.ledger.add(reply_rounds, reply_messages);
    if (first) s.out.first_walk_success = failed.empty();
    first = false;
    if (failed.empty()) break;
    const FloodResult f = flood_aggregate(m_, failed.front().second, Aggregate::Spare);
    s.out.ledger.sequential(f.cost);
    check_cap(s);
    if (f.count < ceil_fraction(cfg_.theta_num, cfg_.theta_den, f.n)) {
      type2_fallback(s, RebuildKind::Inflate, failed.front().second, failed);
    }
    pending.clear();
    for (const auto& j : failed) {
      if (m_.load(j.first) == 0) pending.push_back(j);
    }
  }
}

// -- deletion -----------------------------------------------------------------------

RecoveryOutcome Dex::handle_deletion(NodeId u) { return handle_batch_delete({u}); }

RecoveryOutcome Dex::handle_batch_delete(const std::vector<NodeId>& leaves) {
  if (leaves.empty()) throw InvalidBatch("empty batch");
  const std::set<NodeId> gone(leaves.begin(), leaves.end());
  if (gone.size() != leaves.size()) throw InvalidBatch("duplicate node in batch");
  for (NodeId u : leaves) {
    if (!m_.has_node(u)) throw IllegalAction("deleted node " + std::to_string(u) + " is not live");
  }
  if (gone.size() >= m_.node_count()) throw IllegalAction("deletion would empty the network");
  if (leaves.size() > 1) {
    const auto cap = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(cfg_.batch_fraction * m_.node_count()));
    if (leaves.size() > cap) throw InvalidBatch("batch larger than the allowed fraction of n");
  }
  // Absorber: lowest-id surviving neighbor.
  std::map<NodeId, NodeId> absorber;
  for (NodeId u : leaves) {
    NodeId v = kNoNode;
    for (const auto& [w, mult] : m_.adjacency(u)) {
      if (!gone.count(w)) {
        v = w;
        break;
      }
    }
    if (v == kNoNode) throw InvalidBatch("node " + std::to_string(u) + " has no surviving neighbor");
    absorber[u] = v;
  }
  if (leaves.size() > 1) {
    // The remainder must stay connected.
    const NodeId start = absorber.begin()->second;
    std::set<NodeId> seen{start};
    std::deque<NodeId> queue{start};
    while (!queue.empty()) {
      const NodeId x = queue.front();
      queue.pop_front();
      for (const auto& [y, mult] : m_.adjacency(x)) {
        if (!gone.count(y) && seen.insert(y).second) queue.push_back(y);
      }
    }
    if (seen.size() != m_.node_count() - gone.size()) throw InvalidBatch("batch disconnects the network");
  }

  Step s;
  begin_step(s);
  for (NodeId u : leaves) {
    touch(s, u);
    touch(s, absorber[u]);
    s.departed.insert(u);
    s.absorbed_by[u] = absorber[u];
  }
  m_.open_journal();
  if (gone.count(coord_host_)) {
    const NodeId v = absorber[coord_host_];
    auto it = replicas_.find(v);
    if (it == replicas_.end()) throw DomainError("coordinator replica missing at " + std::to_string(v));
    coord_ = it->second;
    coord_host_ = v;
  }
  std::map<NodeId, std::vector<std::pair<LayerId, Vertex>>> pending;
  std::uint64_t absorbed = 0;
  for (NodeId u : leaves) {
    const NodeId v = absorber[u];
    if (trace_) trace_->emit(global_round_, u, "leave", "absorber=" + std::to_string(v));
    for (LayerId l : {LayerId::Current, LayerId::Next}) {
      if (l == LayerId::Next && !m_.staggering()) continue;
      const std::vector<Vertex> own(m_.sim(l, u).begin(), m_.sim(l, u).end());
      for (Vertex z : own) {
        move(s, l, z, u, v);
        pending[v].push_back({l, z});
        ++absorbed;
      }
    }
    m_.remove_node(u);
  }
  // The absorber re-announces every virtual edge it took over.
  s.out.ledger.add(1, 3 * absorbed);
  redistribute(s, std::move(pending));
  if (window_) tick(s);
  return end_step(s);
}

void Dex::redistribute(Step& s, std::map<NodeId, std::vector<std::pair<LayerId, Vertex>>> pending) {
  while (true) {
    std::vector<Token> tokens;
    std::vector<std::pair<NodeId, std::pair<LayerId, Vertex>>> cargo;
    for (const auto& [v, items] : pending) {
      for (const auto& item : items) {
        auto t = launch(1, TokenClass::FindLow, v, walk_budget());
        tokens.push_back(std::move(t.front()));
        cargo.push_back({v, item});
      }
    }
    if (tokens.empty()) return;
    std::map<NodeId, std::uint32_t> reserved;
    run(tokens,
        [&](Token& t, NodeId w) {
          if (w == t.origin) return false;
          if (m_.load(w) + reserved[w] <= kLowCap) {
            ++reserved[w];
            return true;
          }
          return false;
        },
        s);
    std::uint64_t reply_rounds = 0, reply_messages = 0;
    pending.clear();
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const auto& [v, item] = cargo[i];
      if (tokens[i].state != TokenState::Done) {
        pending[v].push_back(item);
        continue;
      }
      move(s, item.first, item.second, v, tokens[i].holder);
      reply_rounds = std::max<std::uint64_t>(reply_rounds, tokens[i].steps + 1);
      reply_messages += tokens[i].steps + 1 + 3;
    }
    s.out.ledger.add(reply_rounds, reply_messages);
    if (pending.empty()) return;
    const NodeId v = pending.begin()->first;
    const FloodResult f = flood_aggregate(m_, v, Aggregate::Low);
    s.out.ledger.sequential(f.cost);
    check_cap(s);
    // A low absorber that is the only low node keeps the rest.
    if (f.count == 1 && m_.load(v) <= kLowCap) {
      pending.erase(v);
      if (pending.empty()) return;
      continue;
    }
    if (f.count < ceil_fraction(cfg_.theta_num, cfg_.theta_den, f.n)) {
      type2_fallback(s, RebuildKind::Deflate, v, {});
      rebalance(s);
      return;
    }
  }
}

void Dex::type2_fallback(Step& s, RebuildKind kind, NodeId initiator,
                         const std::vector<std::pair<NodeId, NodeId>>& joins) {
  if (trace_) {
    trace_->emit(global_round_ + s.out.ledger.rounds(), initiator,
                 kind == RebuildKind::Inflate ? "inflate" : "deflate",
                 cfg_.mode == Type2Mode::Simplified ? "mode=simplified" : "mode=staggered");
  }
  if (cfg_.mode == Type2Mode::Simplified) {
    if (kind == RebuildKind::Inflate) {
      simplified_inflate(s, initiator, joins);
    } else {
      simplified_deflate(s, initiator);
    }
    return;
  }
  // Staggered mode: finish the open window at once, or run a whole one now.
  s.simplified = true;
  if (!window_) open_window(s, kind);
  finish_window(s);
}

// -- simplified rebuilds --------------------------------------------------------------

EngineResult Dex::rendezvous(const std::vector<std::pair<Vertex, Vertex>>& old_paths) {
  std::vector<Token> tokens;
  for (const auto& [a, b] : old_paths) {
    auto path = host_path(m_, LayerId::Current, m_.cycle().shortest_path(a, b));
    if (path.size() > 1) {
      tokens.push_back(make_route(kRouteIds + route_seq_++, std::move(path), Message(MessageKind::Rendezvous, {a, b})));
    }
  }
  return run_tokens(m_, rng_, tokens, [](Token&, NodeId) { return true; }, UINT64_MAX);
}

void Dex::simplified_inflate(Step& s, NodeId initiator, const std::vector<std::pair<NodeId, NodeId>>& joins) {
  s.simplified = true;
  s.out.inflated = true;
  s.out.ledger.sequential(broadcast_cost(m_, initiator));
  const PrimeModulus p_old(m_.p());
  const InflationPlan plan = InflationPlan::for_cycle(p_old);
  const std::uint32_t q = plan.p_new();
  const PCycle next(plan.p_new());
  std::vector<NodeId> host(q);
  for (Vertex y = 0; y < q; ++y) host[y] = m_.host(plan.inflate_owner_of(y));
  // Inverse edges of the new cycle are found by routing over the old one.
  std::vector<std::pair<Vertex, Vertex>> paths;
  for (Vertex y = 1; y < q; ++y) {
    const Vertex yi = next.inverse(y);
    if (y < yi) paths.push_back({plan.inflate_owner_of(y), plan.inflate_owner_of(yi)});
  }
  s.out.ledger.sequential(rendezvous(paths));
  check_cap(s);
  for (NodeId u : m_.node_ids()) touch(s, u);
  std::vector<NodeId> before(p_old.value());
  for (Vertex x = 0; x < p_old.value(); ++x) before[x] = m_.host(x);
  m_.replace(next, host);
  if (listener_) listener_->on_replaced(p_old, before, m_);
  std::uint64_t handouts = 0;
  for (const auto& [u, a] : joins) {
    if (m_.load(u) != 0) continue;
    const Vertex z = *m_.sim(a).rbegin();
    move(s, LayerId::Current, z, a, u);
    m_.drop_temp_link(u, a);
    ++handouts;
  }
  if (handouts) s.out.ledger.add(1, 4 * handouts);
  rebalance(s);
  recount(s, initiator);
}

void Dex::simplified_deflate(Step& s, NodeId initiator) {
  s.simplified = true;
  s.out.deflated = true;
  s.out.ledger.sequential(broadcast_cost(m_, initiator));
  const PrimeModulus p_old(m_.p());
  const DeflationPlan plan = DeflationPlan::for_cycle(p_old);
  const std::uint32_t q = plan.p_new();
  const PCycle next(plan.p_new());
  std::vector<NodeId> host(q);
  std::map<NodeId, std::vector<Vertex>> owned;
  for (Vertex y = 0; y < q; ++y) {
    host[y] = m_.host(plan.dominator_of(y));
    owned[host[y]].push_back(y);
  }
  std::vector<std::pair<Vertex, Vertex>> paths;
  for (Vertex y = 0; y < q; ++y) {
    for (Vertex nb : next.neighbors(y)) {
      if (y < nb) paths.push_back({plan.dominator_of(y), plan.dominator_of(nb)});
    }
  }
  s.out.ledger.sequential(rendezvous(paths));
  check_cap(s);

  // Nodes left without a dominator contend for a spare new vertex, walking the
  // old network (still in place until the new one is wired).
  std::vector<NodeId> contenders;
  for (NodeId u : m_.node_ids()) {
    if (!owned.count(u)) contenders.push_back(u);
  }
  while (!contenders.empty()) {
    std::vector<Token> tokens;
    for (NodeId c : contenders) {
      auto t = launch(1, TokenClass::ClaimVertex, c, rebuild_budget());
      tokens.push_back(std::move(t.front()));
    }
    std::map<std::uint64_t, Vertex> claimed;
    run(tokens,
        [&](Token& t, NodeId w) {
          auto it = owned.find(w);
          if (it == owned.end() || it->second.size() < 2) return false;
          claimed[t.id] = it->second.back();
          it->second.pop_back();
          return true;
        },
        s);
    std::vector<NodeId> still;
    std::uint64_t reply_rounds = 0, reply_messages = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i].state != TokenState::Done) {
        still.push_back(contenders[i]);
        continue;
      }
      const Vertex y = claimed.at(tokens[i].id);
      host[y] = contenders[i];
      owned[contenders[i]].push_back(y);
      reply_rounds = std::max<std::uint64_t>(reply_rounds, tokens[i].steps + 1);
      reply_messages += tokens[i].steps + 1;
    }
    s.out.ledger.add(reply_rounds, reply_messages);
    contenders = std::move(still);
    check_cap(s);
  }
  for (NodeId u : m_.node_ids()) touch(s, u);
  std::vector<NodeId> before(p_old.value());
  for (Vertex x = 0; x < p_old.value(); ++x) before[x] = m_.host(x);
  m_.replace(next, host);
  if (listener_) listener_->on_replaced(p_old, before, m_);
  rebalance(s);
  recount(s, initiator);
}

void Dex::rebalance(Step& s) {
  std::set<NodeId> full;
  while (true) {
    std::vector<Token> tokens;
    for (NodeId h : m_.node_ids()) {
      const std::uint32_t l = m_.load(h);
      if (l > kBalancedCap) {
        auto t = launch(l - kBalancedCap, TokenClass::Rebalance, h, rebuild_budget());
        for (auto& x : t) tokens.push_back(std::move(x));
      }
    }
    if (tokens.empty()) return;
    std::map<NodeId, std::uint32_t> reserved;
    run(tokens,
        [&](Token& t, NodeId w) {
          if (w == t.origin || full.count(w)) return false;
          if (m_.load(w) + reserved[w] + 1 <= kLowCap) {
            ++reserved[w];
            return true;
          }
          return false;
        },
        s);
    std::uint64_t reply_rounds = 0, reply_messages = 0;
    for (const Token& t : tokens) {
      if (t.state != TokenState::Done) continue;
      const NodeId h = t.origin;
      const LayerId l = m_.sim(LayerId::Current, h).empty() ? LayerId::Next : LayerId::Current;
      move(s, l, *m_.sim(l, h).rbegin(), h, t.holder);
      if (m_.load(t.holder) > kLowCap) full.insert(t.holder);
      reply_rounds = std::max<std::uint64_t>(reply_rounds, t.steps + 1);
      reply_messages += t.steps + 1 + 3;
    }
    s.out.ledger.add(reply_rounds, reply_messages);
    check_cap(s);
  }
}

// -- staggered rebuilds -----------------------------------------------------------------

void Dex::open_window(Step& s, RebuildKind kind) {
  const PrimeModulus p_old(m_.p());
  const PrimeModulus p_new = kind == RebuildKind::Inflate ? InflationPlan::for_cycle(p_old).p_new()
                                                          : DeflationPlan::for_cycle(p_old).p_new();
  const std::uint64_t k = std::max<std::uint64_t>(1, threshold(1));
  Window w;
  w.kind = kind;
  w.p_old = p_old;
  w.p_new = p_new;
  w.block = static_cast<std::uint32_t>((p_old.value() + k - 1) / k);
  w.blocks = (p_old.value() + w.block - 1) / w.block;
  w.activated.assign(p_old.value(), false);
  m_.begin_rebuild(kind, p_new);
  window_ = std::move(w);
  if (listener_) listener_->on_window_opened(m_);
  if (trace_) {
    trace_->emit(global_round_ + s.out.ledger.rounds(), coord_host_,
                 kind == RebuildKind::Inflate ? "window-inflate" : "window-deflate",
                 "p_new=" + std::to_string(p_new.value()) + " ticks=" + std::to_string(window_->total_ticks()));
  }
}

void Dex::finish_window(Step& s) {
  while (window_) tick(s);
}

void Dex::activate(Step& s, Vertex x) {
  const NodeId h = m_.host(x);
  touch(s, h);
  for (Vertex y : m_.spawned_by(x)) {
    m_.build_next(y, h);
    for (Vertex nb : m_.next_cycle().neighbors(y)) {
      if (nb == y) continue;
      const Vertex target = m_.anchor_of(nb);
      if (target != x) s.activation_paths.push_back({x, target});
    }
  }
  window_->activated[x] = true;
  if (listener_) listener_->on_activated(m_, x);
}

void Dex::shed(Step& s, NodeId h) {
  const Window& w = *window_;
  auto projected = [&](NodeId v) {
    std::uint64_t total = m_.load(LayerId::Next, v);
    for (Vertex x : m_.sim(LayerId::Current, v)) {
      if (!w.activated[x]) total += m_.spawned_by(x).size();
    }
    return total;
  };
  while (m_.load(LayerId::Next, h) > kBalancedCap) {
    auto tokens = launch(1, TokenClass::Rebalance, h, rebuild_budget());
    run(tokens, [&](Token&, NodeId v) { return v != h && projected(v) + 1 <= kLowCap && m_.load(v) < kWindowCap; }, s);
    check_cap(s);
    if (tokens.front().state != TokenState::Done) continue;
    const NodeId v = tokens.front().holder;
    move(s, LayerId::Next, *m_.sim(LayerId::Next, h).rbegin(), h, v);
    s.out.ledger.add(tokens.front().steps + 1, tokens.front().steps + 1 + 3);
  }
}

void Dex::claim_next_vertices(Step& s) {
  while (true) {
    std::vector<NodeId> bare;
    for (NodeId u : m_.node_ids()) {
      if (m_.load(u) > 0 && m_.load(LayerId::Next, u) == 0) bare.push_back(u);
    }
    if (bare.empty()) return;
    std::vector<Token> tokens;
    for (NodeId u : bare) {
      auto t = launch(1, TokenClass::ClaimVertex, u, rebuild_budget());
      tokens.push_back(std::move(t.front()));
    }
    std::map<NodeId, std::uint32_t> promised;
    run(tokens,
        [&](Token& t, NodeId v) {
          if (v == t.origin || m_.load(LayerId::Next, v) < promised[v] + 2) return false;
          ++promised[v];
          return true;
        },
        s);
    std::uint64_t reply_rounds = 0, reply_messages = 0;
    for (const Token& t : tokens) {
      if (t.state != TokenState::Done) continue;
      move(s, LayerId::Next, *m_.sim(LayerId::Next, t.holder).begin(), t.holder, t.origin);
      reply_rounds = std::max<std::uint64_t>(reply_rounds, t.steps + 1);
      reply_messages += t.steps + 1 + 3;
    }
    s.out.ledger.add(reply_rounds, reply_messages);
    check_cap(s);
  }
}

void Dex::tick(Step& s) {
  s.out.ticked = true;
  Window& w = *window_;
  const Vertex lo = w.cursor * w.block;
  const Vertex hi = std::min(w.p_old, lo + w.block);
  const std::uint64_t round = global_round_ + s.out.ledger.rounds();
  if (w.phase == WindowPhase::Activate) {
    if (trace_) trace_->emit(round, coord_host_, "activate-block", std::to_string(lo) + ".." + std::to_string(hi));
    // The coordinator contacts the host of each block vertex over the old cycle.
    std::vector<Token> tokens;
    std::set<NodeId> hosts;
    for (Vertex x = lo; x < hi; ++x) {
      const NodeId h = m_.host(x);
      if (!hosts.insert(h).second) continue;
      auto path = host_path(m_, LayerId::Current, m_.cycle().shortest_path(0, x));
      if (path.size() > 1) {
        tokens.push_back(make_route(kRouteIds + route_seq_++, std::move(path), Message(MessageKind::Activate, {x})));
      }
    }
    if (!tokens.empty()) run(tokens, [](Token&, NodeId) { return true; }, s);
    s.activation_paths.clear();
    for (Vertex x = lo; x < hi; ++x) activate(s, x);
    s.out.ledger.sequential(rendezvous(s.activation_paths));
    s.activation_paths.clear();
    for (NodeId h : hosts) {
      if (m_.has_node(h)) shed(s, h);
    }
    if (++w.cursor == w.blocks) {
      w.phase = WindowPhase::Discard;
      w.cursor = 0;
    }
  } else {
    if (trace_) trace_->emit(round, coord_host_, "discard-block", std::to_string(lo) + ".." + std::to_string(hi));
    // Every node holds a new vertex before any old one goes away.
    claim_next_vertices(s);
    std::uint64_t discarded = 0;
    for (Vertex x = lo; x < hi; ++x) {
      const NodeId h = m_.host(x);
      if (h == kNoNode) continue;
      touch(s, h);
      m_.discard_current(x);
      ++discarded;
    }
    if (discarded) s.out.ledger.add(1, 3 * discarded);
    if (++w.cursor == w.blocks) {
      m_.finish_rebuild();
      if (w.kind == RebuildKind::Inflate) {
        s.out.inflated = true;
      } else {
        s.out.deflated = true;
      }
      window_.reset();
      if (listener_) listener_->on_window_closed(m_);
      if (trace_) trace_->emit(global_round_ + s.out.ledger.rounds(), coord_host_, "window-closed", "p=" + std::to_string(m_.p()));
      return;
    }
  }
  ++w.ticks;
}

}  // namespace dex

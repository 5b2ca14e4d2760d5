#include "dex/dht.hpp"

#include <algorithm>

#include "dex/errors.hpp"

namespace dex {

Vertex hash_key(std::uint64_t key, PrimeModulus p) {
  return static_cast<Vertex>(mix64(key ^ (p.value() * 0x9e3779b97f4a7c15ULL)) % p.value());
}

Dht::Dht(Dex& dex) : dex_(dex) { dex_.set_listener(this); }

Dht::~Dht() { dex_.set_listener(nullptr); }

Dht::Home Dht::home_of(std::uint64_t key) const {
  const auto& w = dex_.window();
  if (!w) return {Slot::Current, hash_key(key, PrimeModulus(dex_.mapping().p()))};
  const Vertex x = hash_key(key, PrimeModulus(w->p_old));
  if (!w->activated[x]) return {Slot::Current, x};
  const Vertex y = hash_key(key, PrimeModulus(w->p_new));
  const VirtualMapping& m = dex_.mapping();
  if (m.host(LayerId::Next, y) != kNoNode) return {Slot::Next, y};
  return {Slot::Parked, m.anchor_of(y)};
}

NodeId Dht::host_of(const Home& h) const {
  return dex_.mapping().host(h.slot == Slot::Next ? LayerId::Next : LayerId::Current, h.vertex);
}

NodeId Dht::responsible(std::uint64_t key) const { return host_of(home_of(key)); }

std::vector<NodeId> Dht::path_to(NodeId origin, const Home& h) const {
  const VirtualMapping& m = dex_.mapping();
  auto along = [&](LayerId l, Vertex target) {
    const auto& own = m.sim(l, origin);
    const NodeId dest = m.host(l, target);
    if (!m.complete(l) || own.empty()) return network_path(m, origin, dest);
    auto path = host_path(m, l, m.layer_cycle(l).shortest_path(*own.begin(), target));
    // The request stops at the first node hosting the target.
    path.erase(std::find(path.begin(), path.end(), dest) + 1, path.end());
    return path;
  };
  if (h.slot == Slot::Next) return along(LayerId::Next, h.vertex);
  return along(LayerId::Current, h.vertex);
}

DhtOpResult Dht::put(NodeId origin, std::uint64_t key, std::string value) {
  if (value.size() > kMaxValueBytes) throw DomainError("value exceeds " + std::to_string(kMaxValueBytes) + " bytes");
  if (!dex_.mapping().has_node(origin)) throw DomainError("unknown origin " + std::to_string(origin));
  DhtOpResult r = get(origin, key);
  r.value.reset();
  const Home h = home_of(key);
  for (auto& [node, homes] : store_) {
    auto it = homes.find(h);
    if (it != homes.end()) it->second.erase(key);
  }
  file(h, r.holder, key, std::move(value));
  return r;
}

DhtOpResult Dht::get(NodeId origin, std::uint64_t key) const {
  const VirtualMapping& m = dex_.mapping();
  if (!m.has_node(origin)) throw DomainError("unknown origin " + std::to_string(origin));
  DhtOpResult r;
  const Home h = home_of(key);
  r.holder = host_of(h);
  std::vector<NodeId> path;
  if (h.slot == Slot::Current || m.complete(LayerId::Next)) {
    path = path_to(origin, h);
  } else {
    // Requests for a new vertex go to the host of its anchor, which forwards
    // them once the vertex is built elsewhere.
    const Home stub{Slot::Current, h.slot == Slot::Parked ? h.vertex : m.anchor_of(h.vertex)};
    path = path_to(origin, stub);
    const auto fwd = network_path(m, path.back(), r.holder);
    r.extra_hops = fwd.size() - 1;
    path.insert(path.end(), fwd.begin() + 1, fwd.end());
  }
  const EngineResult e = route_message(m, path, Message(MessageKind::DhtRequest, {key, origin}));
  r.hops = e.rounds;
  r.rounds = 2 * e.rounds;
  r.messages = 2 * e.messages;
  if (auto s = store_.find(r.holder); s != store_.end()) {
    if (auto b = s->second.find(h); b != s->second.end()) {
      if (auto it = b->second.find(key); it != b->second.end()) r.value = it->second;
    }
  }
  return r;
}

void Dht::file(const Home& h, NodeId at, std::uint64_t key, std::string value) {
  store_[at][h][key] = std::move(value);
}

void Dht::move_bucket(NodeId from, const Home& to_home, NodeId to, Bucket items) {
  if (items.empty()) return;
  if (from != to) {
    ++stats_.handoff_messages;
    stats_.items_moved += items.size();
  }
  auto& dest = store_[to][to_home];
  for (auto& [k, v] : items) dest[k] = std::move(v);
}

void Dht::on_transfer(LayerId l, Vertex z, NodeId from, NodeId to) {
  auto s = store_.find(from);
  if (s == store_.end()) return;
  std::vector<Home> homes{{l == LayerId::Current ? Slot::Current : Slot::Next, z}};
  if (l == LayerId::Current) homes.push_back({Slot::Parked, z});
  for (const Home& h : homes) {
    auto b = s->second.find(h);
    if (b == s->second.end()) continue;
    Bucket items = std::move(b->second);
    s->second.erase(b);
    move_bucket(from, h, to, std::move(items));
  }
  if (s->second.empty()) store_.erase(s);
}

void Dht::on_activated(const VirtualMapping& m, Vertex x) {
  const NodeId h = m.host(LayerId::Current, x);
  auto s = store_.find(h);
  if (s == store_.end()) return;
  const PrimeModulus p_new(m.next_cycle().size());
  Bucket here, parked;
  if (auto b = s->second.find({Slot::Current, x}); b != s->second.end()) {
    here = std::move(b->second);
    s->second.erase(b);
  }
  if (auto b = s->second.find({Slot::Parked, x}); b != s->second.end()) {
    parked = std::move(b->second);
    s->second.erase(b);
  }
  if (s->second.empty()) store_.erase(s);
  // Group by destination so each receiving node gets one batch.
  std::map<std::pair<Home, NodeId>, Bucket> out;
  auto route = [&](std::uint64_t key, std::string value) {
    const Vertex y = hash_key(key, p_new);
    const NodeId built = m.host(LayerId::Next, y);
    const Home to = built != kNoNode ? Home{Slot::Next, y} : Home{Slot::Parked, m.anchor_of(y)};
    out[{to, built != kNoNode ? built : m.host(LayerId::Current, m.anchor_of(y))}][key] = std::move(value);
  };
  for (auto& [k, v] : here) route(k, std::move(v));
  for (auto& [k, v] : parked) route(k, std::move(v));
  for (auto& [dest, items] : out) move_bucket(h, dest.first, dest.second, std::move(items));
}

void Dht::on_window_closed(const VirtualMapping&) {
  for (auto& [node, homes] : store_) {
    std::map<Home, Bucket> relabeled;
    for (auto& [h, items] : homes) {
      Home nh = h;
      if (h.slot == Slot::Next) nh.slot = Slot::Current;
      auto& dest = relabeled[nh];
      for (auto& [k, v] : items) dest[k] = std::move(v);
    }
    homes = std::move(relabeled);
  }
}

void Dht::on_replaced(std::uint32_t, const std::vector<NodeId>&, const VirtualMapping& m) {
  const PrimeModulus p(m.p());
  std::map<NodeId, std::map<Home, Bucket>> next;
  for (auto& [node, homes] : store_) {
    for (auto& [h, items] : homes) {
      for (auto& [k, v] : items) {
        const Home to{Slot::Current, hash_key(k, p)};
        const NodeId dest = m.host(to.vertex);
        if (dest != node) {
          ++stats_.handoff_messages;
          ++stats_.items_moved;
        }
        next[dest][to][k] = std::move(v);
      }
    }
  }
  store_ = std::move(next);
}

std::vector<NodeId> Dht::holders(std::uint64_t key) const {
  std::vector<NodeId> out;
  for (const auto& [node, homes] : store_) {
    for (const auto& [h, items] : homes) {
      if (items.count(key)) out.push_back(node);
    }
  }
  return out;
}

std::size_t Dht::size() const {
  std::size_t n = 0;
  for (const auto& [node, homes] : store_) {
    for (const auto& [h, items] : homes) n += items.size();
  }
  return n;
}

std::vector<std::string> Dht::audit(const std::map<std::uint64_t, std::string>& ledger) const {
  std::vector<std::string> problems;
  const VirtualMapping& m = dex_.mapping();
  for (const auto& [node, homes] : store_) {
    if (!m.has_node(node)) problems.push_back("items stored at departed node " + std::to_string(node));
    for (const auto& [h, items] : homes) {
      for (const auto& [k, v] : items) {
        auto it = ledger.find(k);
        if (it == ledger.end()) {
          problems.push_back("unexpected key " + std::to_string(k));
        } else if (it->second != v) {
          problems.push_back("key " + std::to_string(k) + " has a wrong value");
        }
        if (h != home_of(k) || node != responsible(k)) {
          problems.push_back("key " + std::to_string(k) + " at node " + std::to_string(node) + ", expected " +
                             std::to_string(responsible(k)));
        }
      }
    }
  }
  for (const auto& [k, v] : ledger) {
    const auto hs = holders(k);
    if (hs.size() != 1) problems.push_back("key " + std::to_string(k) + " has " + std::to_string(hs.size()) + " copies");
  }
  return problems;
}

}  // namespace dex

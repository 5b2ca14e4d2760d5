#include "dex/mapping.hpp"

#include <algorithm>
#include <deque>
#include <istream>
#include <ostream>
#include <sstream>

#include "dex/errors.hpp"

namespace dex {

VirtualMapping::VirtualMapping(PCycle cycle, const std::vector<NodeId>& host)
    : cur_{std::move(cycle), {}, 0} {
  replace(cur_.cycle, host);
}

VirtualMapping VirtualMapping::contiguous(PrimeModulus p, const std::vector<NodeId>& nodes) {
  if (nodes.empty() || nodes.size() > p.value()) throw DomainError("contiguous mapping needs 1..p nodes");
  std::vector<NodeId> host(p.value());
  const std::uint64_t n = nodes.size();
  for (Vertex z = 0; z < p.value(); ++z) host[z] = nodes[static_cast<std::uint64_t>(z) * n / p.value()];
  return VirtualMapping(PCycle(p), host);
}

LayerId VirtualMapping::primary_layer() const {
  return next_ && complete(LayerId::Next) ? LayerId::Next : LayerId::Current;
}

std::vector<NodeId> VirtualMapping::node_ids() const {
  std::vector<NodeId> out;
  out.reserve(nodes_.size());
  for (const auto& [u, rec] : nodes_) out.push_back(u);
  return out;
}

const VirtualMapping::NodeRecord& VirtualMapping::record(NodeId u) const {
  auto it = nodes_.find(u);
  if (it == nodes_.end()) throw UnknownNode("unknown node " + std::to_string(u));
  return it->second;
}

std::uint32_t VirtualMapping::load(NodeId u) const {
  const auto& rec = record(u);
  return static_cast<std::uint32_t>(rec.sim[0].size() + rec.sim[1].size());
}

void VirtualMapping::add_node(NodeId u) {
  if (u == kNoNode) throw DomainError("reserved node id");
  if (!nodes_.emplace(u, NodeRecord{}).second) throw DomainError("node already live: " + std::to_string(u));
}

void VirtualMapping::remove_node(NodeId u) {
  if (load(u) != 0) throw DomainError("cannot remove node " + std::to_string(u) + " that still simulates vertices");
  auto it = adj_.find(u);
  if (it != adj_.end() && !it->second.empty()) {
    throw DomainError("cannot remove node " + std::to_string(u) + " with live links");
  }
  adj_.erase(u);
  nodes_.erase(u);
}

// -- link bookkeeping ---------------------------------------------------------

std::optional<Link> VirtualMapping::slot_link(const Slot& s) const {
  const Layer& L = layer(s.layer);
  const NodeId a = L.host[s.z];
  if (a == kNoNode) return std::nullopt;
  const Vertex y = L.cycle.neighbors(s.z)[s.k];
  if (y == s.z) return std::nullopt;
  NodeId b = L.host[y];
  if (b == kNoNode) {
    if (s.layer != LayerId::Next) return std::nullopt;
    b = cur_.host[anchor_of(y)];
    if (b == kNoNode) return std::nullopt;
  }
  if (a == b) return std::nullopt;
  return make_link(a, b);
}

void VirtualMapping::collect_affected(LayerId l, Vertex z, std::set<Slot>& out) const {
  const PCycle& c = layer(l).cycle;
  auto add_incident = [&](LayerId ll, const PCycle& cc, Vertex v) {
    const auto nb = cc.neighbors(v);
    for (std::uint8_t k = 0; k < 3; ++k) {
      out.insert({ll, v, k});
      const Vertex y = nb[k];
      if (y == v) continue;
      const auto back = cc.neighbors(y);
      for (std::uint8_t j = 0; j < 3; ++j) {
        if (back[j] == v) out.insert({ll, y, j});
      }
    }
  };
  add_incident(l, c, z);
  if (l == LayerId::Current && next_) {
    for (Vertex y : spawned_by(z)) add_incident(LayerId::Next, next_->cycle, y);
  }
}

void VirtualMapping::bump(NodeId a, NodeId b, int sign) {
  auto& ab = adj_[a][b];
  auto& ba = adj_[b][a];
  if (sign > 0) {
    if (ab++ == 0) {
      ++ba;
      ++link_count_;
      if (capture_) capture_->added.push_back(make_link(a, b));
      if (journal_open_) ++link_journal_[make_link(a, b)];
    } else {
      ++ba;
    }
    return;
  }
  --ab;
  --ba;
  if (ab == 0) {
    adj_[a].erase(b);
    adj_[b].erase(a);
    --link_count_;
    if (capture_) capture_->removed.push_back(make_link(a, b));
    if (journal_open_) --link_journal_[make_link(a, b)];
  }
}

void VirtualMapping::apply_slots(const std::set<Slot>& slots, int sign) {
  for (const Slot& s : slots) {
    if (auto link = slot_link(s)) bump(link->first, link->second, sign);
  }
}

void VirtualMapping::note_vertex(LayerId l, Vertex z) {
  if (!journal_open_) return;
  const std::uint64_t epoch = epoch_ + (l == LayerId::Next ? 1 : 0);
  vertex_journal_.emplace(std::make_pair(epoch, z), layer(l).host[z]);
}

void VirtualMapping::set_host(LayerId l, Vertex z, NodeId to) {
  Layer& L = layer(l);
  const NodeId from = L.host[z];
  if (from == to) return;
  std::set<Slot> affected;
  collect_affected(l, z, affected);
  apply_slots(affected, -1);
  note_vertex(l, z);
  const int li = static_cast<int>(l);
  if (from != kNoNode) {
    nodes_.at(from).sim[li].erase(z);
  } else {
    ++L.built;
  }
  if (to != kNoNode) {
    nodes_.at(to).sim[li].insert(z);
  } else {
    --L.built;
  }
  L.host[z] = to;
  apply_slots(affected, +1);
}

LinkDelta VirtualMapping::transfer_vertex(Vertex z, NodeId from, NodeId to, LayerId l) {
  if (l == LayerId::Next && !next_) throw DomainError("no rebuild in progress");
  if (z >= layer(l).cycle.size()) throw DomainError("vertex out of range");
  if (!has_node(from)) throw UnknownNode("unknown node " + std::to_string(from));
  if (!has_node(to)) throw UnknownNode("unknown node " + std::to_string(to));
  if (layer(l).host[z] != from) {
    throw NotOwner("vertex " + std::to_string(z) + " is not hosted by " + std::to_string(from));
  }
  LinkDelta delta;
  if (from == to) return delta;
  capture_ = &delta;
  set_host(l, z, to);
  capture_ = nullptr;
  return delta;
}

// -- rebuilds -----------------------------------------------------------------

void VirtualMapping::begin_rebuild(RebuildKind kind, PrimeModulus p_new) {
  if (next_) throw DomainError("rebuild already in progress");
  inflation_.reset();
  deflation_.reset();
  if (kind == RebuildKind::Inflate) {
    inflation_.emplace(cur_.cycle.modulus(), p_new);
  } else {
    deflation_.emplace(cur_.cycle.modulus(), p_new);
  }
  kind_ = kind;
  next_ = Layer{PCycle(p_new), std::vector<NodeId>(p_new.value(), kNoNode), 0};
}

Vertex VirtualMapping::anchor_of(Vertex y) const {
  if (kind_ == RebuildKind::Inflate) return inflation_->inflate_owner_of(y);
  return deflation_->dominator_of(y);
}

std::vector<Vertex> VirtualMapping::spawned_by(Vertex x) const {
  if (kind_ == RebuildKind::Inflate) return inflation_->inflate_cloud(x);
  if (deflation_->is_dominator(x)) return {deflation_->deflate_image(x)};
  return {};
}

void VirtualMapping::build_next(Vertex y, NodeId u) {
  if (!next_) throw DomainError("no rebuild in progress");
  if (!has_node(u)) throw UnknownNode("unknown node " + std::to_string(u));
  if (next_->host[y] != kNoNode) throw DomainError("next vertex already built: " + std::to_string(y));
  set_host(LayerId::Next, y, u);
}

void VirtualMapping::discard_current(Vertex x) {
  if (!next_ || !complete(LayerId::Next)) throw DomainError("cannot discard before the next layer is complete");
  if (cur_.host[x] == kNoNode) return;
  set_host(LayerId::Current, x, kNoNode);
}

void VirtualMapping::finish_rebuild() {
  if (!next_ || cur_.built != 0 || !complete(LayerId::Next)) throw DomainError("rebuild not finished");
  for (auto& [u, rec] : nodes_) {
    rec.sim[0] = std::move(rec.sim[1]);
    rec.sim[1].clear();
  }
  cur_ = std::move(*next_);
  next_.reset();
  ++epoch_;
  // Links are unchanged: every slot of the promoted layer was already complete.
}

void VirtualMapping::replace(PCycle cycle, const std::vector<NodeId>& host) {
  if (host.size() != cycle.size()) throw DomainError("host vector size mismatch");
  std::map<Link, std::uint32_t> before;
  if (journal_open_) {
    for (const auto& [a, row] : adj_) {
      for (const auto& [b, w] : row) {
        if (a < b && temp_.count(make_link(a, b)) == 0) before[{a, b}] = w;
      }
    }
    for (Vertex z = 0; z < cur_.host.size(); ++z) note_vertex(LayerId::Current, z);
    if (next_) {
      for (Vertex y = 0; y < next_->host.size(); ++y) note_vertex(LayerId::Next, y);
    }
  }
  for (auto& [u, rec] : nodes_) {
    rec.sim[0].clear();
    rec.sim[1].clear();
  }
  next_.reset();
  epoch_ += 2;
  cur_ = Layer{std::move(cycle), host, 0};
  for (Vertex z = 0; z < host.size(); ++z) {
    const NodeId u = host[z];
    if (u == kNoNode) throw DomainError("replacement mapping must be total");
    nodes_.try_emplace(u);
    nodes_.at(u).sim[0].insert(z);
  }
  cur_.built = static_cast<std::uint32_t>(host.size());
  if (journal_open_) {
    for (Vertex z = 0; z < host.size(); ++z) vertex_journal_.emplace(std::make_pair(epoch_, z), kNoNode);
  }
  rebuild_links();
  if (journal_open_) {
    std::map<Link, std::uint32_t> after;
    for (const auto& [a, row] : adj_) {
      for (const auto& [b, w] : row) {
        if (a < b && temp_.count(make_link(a, b)) == 0) after[{a, b}] = w;
      }
    }
    for (const auto& [l, w] : before) {
      if (!after.count(l)) --link_journal_[l];
    }
    for (const auto& [l, w] : after) {
      if (!before.count(l)) ++link_journal_[l];
    }
  }
}

void VirtualMapping::rebuild_links() {
  const bool was_open = journal_open_;
  journal_open_ = false;
  adj_.clear();
  link_count_ = 0;
  for (const auto& [u, rec] : nodes_) adj_[u];
  for (Vertex z = 0; z < cur_.cycle.size(); ++z) {
    for (std::uint8_t k = 0; k < 3; ++k) {
      if (auto link = slot_link({LayerId::Current, z, k})) bump(link->first, link->second, +1);
    }
  }
  if (next_) {
    for (Vertex y = 0; y < next_->cycle.size(); ++y) {
      for (std::uint8_t k = 0; k < 3; ++k) {
        if (auto link = slot_link({LayerId::Next, y, k})) bump(link->first, link->second, +1);
      }
    }
  }
  for (const auto& [l, w] : temp_) {
    for (std::uint32_t i = 0; i < w; ++i) bump(l.first, l.second, +1);
  }
  journal_open_ = was_open;
}

// -- link queries ---------------------------------------------------------------

bool VirtualMapping::linked(NodeId a, NodeId b) const { return multiplicity(a, b) > 0; }

std::uint32_t VirtualMapping::multiplicity(NodeId a, NodeId b) const {
  auto it = adj_.find(a);
  if (it == adj_.end()) return 0;
  auto jt = it->second.find(b);
  return jt == it->second.end() ? 0 : jt->second;
}

const std::map<NodeId, std::uint32_t>& VirtualMapping::adjacency(NodeId u) const {
  static const std::map<NodeId, std::uint32_t> empty;
  auto it = adj_.find(u);
  return it == adj_.end() ? empty : it->second;
}

std::vector<NodeId> VirtualMapping::neighbors(NodeId u) const {
  std::vector<NodeId> out;
  for (const auto& [v, w] : adjacency(u)) out.push_back(v);
  return out;
}

std::size_t VirtualMapping::degree(NodeId u) const { return adjacency(u).size(); }

void VirtualMapping::add_temp_link(NodeId a, NodeId b) {
  if (a == b) return;
  if (!has_node(a) || !has_node(b)) throw UnknownNode("temporary link to unknown node");
  ++temp_[make_link(a, b)];
  bump(a, b, +1);
}

void VirtualMapping::drop_temp_link(NodeId a, NodeId b) {
  if (a == b) return;
  auto it = temp_.find(make_link(a, b));
  if (it == temp_.end()) throw DomainError("no temporary link");
  if (--it->second == 0) temp_.erase(it);
  bump(a, b, -1);
}

std::size_t VirtualMapping::temp_link_count() const {
  std::size_t n = 0;
  for (const auto& [l, w] : temp_) n += w;
  return n;
}

void VirtualMapping::open_journal() {
  journal_open_ = true;
  link_journal_.clear();
  vertex_journal_.clear();
}

JournalSummary VirtualMapping::journal_summary(const std::set<NodeId>& ignore) const {
  JournalSummary s;
  for (const auto& [l, d] : link_journal_) {
    if (d == 0 || ignore.count(l.first) || ignore.count(l.second)) continue;
    if (d > 0) {
      ++s.links_added;
    } else {
      ++s.links_removed;
    }
  }
  for (const auto& [key, original] : vertex_journal_) {
    const auto [epoch, z] = key;
    NodeId now = kNoNode;
    if (epoch == epoch_ && z < cur_.host.size()) {
      now = cur_.host[z];
    } else if (next_ && epoch == epoch_ + 1 && z < next_->host.size()) {
      now = next_->host[z];
    }
    if (now != original) ++s.vertex_moves;
  }
  return s;
}

std::map<Link, std::uint32_t> VirtualMapping::recompute_links() const {
  std::map<Link, std::uint32_t> out;
  auto count = [&](LayerId l, std::uint32_t size) {
    for (Vertex z = 0; z < size; ++z) {
      for (std::uint8_t k = 0; k < 3; ++k) {
        if (auto link = slot_link({l, z, k})) out[*link] += 1;
      }
    }
  };
  count(LayerId::Current, cur_.cycle.size());
  if (next_) count(LayerId::Next, next_->cycle.size());
  for (const auto& [l, w] : temp_) out[l] += w;
  return out;
}

// -- statistics -------------------------------------------------------------------

std::set<NodeId> low_set(const VirtualMapping& m) {
  std::set<NodeId> out;
  for (NodeId u : m.node_ids()) {
    if (in_low(m.load(u))) out.insert(u);
  }
  return out;
}

std::set<NodeId> spare_set(const VirtualMapping& m) {
  std::set<NodeId> out;
  for (NodeId u : m.node_ids()) {
    if (in_spare(m.load(u))) out.insert(u);
  }
  return out;
}

LoadStats load_stats(const VirtualMapping& m) {
  LoadStats s;
  for (NodeId u : m.node_ids()) {
    const std::uint32_t l = m.load(u);
    ++s.n;
    s.low_count += in_low(l);
    s.spare_count += in_spare(l);
    s.max_load = std::max(s.max_load, l);
  }
  return s;
}

std::uint64_t ceil_fraction(std::uint64_t num, std::uint64_t den, std::uint64_t n) {
  return (num * n + den - 1) / den;
}

std::string to_string(ViolationKind k) {
  switch (k) {
    case ViolationKind::Surjectivity: return "SurjectivityViolation";
    case ViolationKind::Load: return "LoadViolation";
    case ViolationKind::Inverse: return "InverseViolation";
    case ViolationKind::Conservation: return "ConservationViolation";
    case ViolationKind::Links: return "LinkViolation";
  }
  return "Violation";
}

std::vector<Violation> verify_mapping(const VirtualMapping& m, MappingPhase phase) {
  std::vector<Violation> out;
  const std::uint32_t cap = (phase == MappingPhase::Normal ? 4 : 8) * kZeta;
  std::array<std::uint64_t, 2> total{0, 0};
  for (NodeId u : m.node_ids()) {
    const std::uint32_t l = m.load(u);
    if (l == 0) out.push_back({ViolationKind::Surjectivity, u, "node simulates no vertex"});
    if (l > cap) {
      out.push_back({ViolationKind::Load, u, "load " + std::to_string(l) + " exceeds " + std::to_string(cap)});
    }
    for (LayerId layer : {LayerId::Current, LayerId::Next}) {
      if (layer == LayerId::Next && !m.staggering()) {
        if (!m.sim(layer, u).empty()) out.push_back({ViolationKind::Inverse, u, "next-layer vertices outside a rebuild"});
        continue;
      }
      for (Vertex z : m.sim(layer, u)) {
        if (m.host(layer, z) != u) {
          out.push_back({ViolationKind::Inverse, u, "sim lists vertex " + std::to_string(z) + " hosted elsewhere"});
        }
      }
      total[static_cast<int>(layer)] += m.sim(layer, u).size();
    }
  }
  auto check_layer = [&](LayerId layer) {
    const std::uint32_t size = m.layer_cycle(layer).size();
    std::uint64_t hosted = 0;
    for (Vertex z = 0; z < size; ++z) {
      const NodeId h = m.host(layer, z);
      if (h == kNoNode) continue;
      ++hosted;
      if (!m.has_node(h)) {
        out.push_back({ViolationKind::Inverse, h, "vertex " + std::to_string(z) + " hosted by a dead node"});
      } else if (m.sim(layer, h).count(z) == 0) {
        out.push_back({ViolationKind::Inverse, h, "host map lists vertex " + std::to_string(z) + " missing from sim"});
      }
    }
    if (hosted != m.built(layer) || total[static_cast<int>(layer)] != hosted) {
      out.push_back({ViolationKind::Conservation, kNoNode,
                     "layer loads sum to " + std::to_string(total[static_cast<int>(layer)]) + ", " +
                         std::to_string(hosted) + " vertices hosted"});
    }
    if (!m.staggering() && hosted != size) {
      out.push_back({ViolationKind::Conservation, kNoNode,
                     "only " + std::to_string(hosted) + " of " + std::to_string(size) + " vertices hosted"});
    }
  };
  check_layer(LayerId::Current);
  if (m.staggering()) check_layer(LayerId::Next);
  return out;
}

// -- quotient and network graphs ---------------------------------------------------

namespace {

std::map<NodeId, std::uint32_t> index_of(const std::vector<NodeId>& ids) {
  std::map<NodeId, std::uint32_t> idx;
  for (std::uint32_t i = 0; i < ids.size(); ++i) idx[ids[i]] = i;
  return idx;
}

}  // namespace

QuotientGraph quotient(const VirtualMapping& m) {
  QuotientGraph q;
  q.nodes = m.node_ids();
  q.graph = Multigraph(q.nodes.size());
  const auto idx = index_of(q.nodes);
  auto add_layer = [&](LayerId layer) {
    const PCycle& c = m.layer_cycle(layer);
    for (Vertex z = 0; z < c.size(); ++z) {
      const NodeId h = m.host(layer, z);
      if (h == kNoNode) continue;
      for (Vertex y : c.neighbors(z)) {
        const NodeId t = m.host(layer, y);
        if (t != kNoNode) {
          q.graph.add_slot(idx.at(h), idx.at(t));
        } else if (layer == LayerId::Next) {
          const NodeId a = m.host(m.anchor_of(y));
          if (a != kNoNode) q.graph.add_edge(idx.at(h), idx.at(a));
        }
      }
    }
  };
  add_layer(LayerId::Current);
  if (m.staggering()) add_layer(LayerId::Next);
  return q;
}

Multigraph link_graph(const VirtualMapping& m) {
  const auto ids = m.node_ids();
  const auto idx = index_of(ids);
  Multigraph g(ids.size());
  for (NodeId u : ids) {
    for (const auto& [v, w] : m.adjacency(u)) g.add_slot(idx.at(u), idx.at(v));
  }
  return g;
}

std::map<NodeId, std::uint32_t> network_distances(const VirtualMapping& m, NodeId source) {
  std::map<NodeId, std::uint32_t> dist{{source, 0}};
  std::deque<NodeId> queue{source};
  while (!queue.empty()) {
    const NodeId u = queue.front();
    queue.pop_front();
    for (const auto& [v, w] : m.adjacency(u)) {
      if (dist.emplace(v, dist[u] + 1).second) queue.push_back(v);
    }
  }
  return dist;
}

std::vector<NodeId> network_path(const VirtualMapping& m, NodeId from, NodeId to) {
  const auto dist = network_distances(m, to);
  auto it = dist.find(from);
  if (it == dist.end()) return {};
  std::vector<NodeId> path{from};
  NodeId cur = from;
  while (cur != to) {
    const std::uint32_t d = dist.at(cur);
    for (const auto& [v, w] : m.adjacency(cur)) {
      auto jt = dist.find(v);
      if (jt != dist.end() && jt->second + 1 == d) {
        cur = v;
        break;
      }
    }
    path.push_back(cur);
  }
  return path;
}

bool network_connected(const VirtualMapping& m) {
  if (m.node_count() == 0) return true;
  return network_distances(m, m.node_ids().front()).size() == m.node_count();
}

// -- snapshots ------------------------------------------------------------------------

void write_snapshot(std::ostream& out, const VirtualMapping& m, std::uint64_t step) {
  out << "p=" << m.p() << " step=" << step << '\n';
  for (Vertex z = 0; z < m.p(); ++z) {
    if (m.host(z) != kNoNode) out << z << '\t' << m.host(z) << '\n';
  }
  if (m.staggering()) {
    out << "next p=" << m.next_cycle().size()
        << " kind=" << (m.rebuild_kind() == RebuildKind::Inflate ? "inflate" : "deflate") << '\n';
    for (Vertex y = 0; y < m.next_cycle().size(); ++y) {
      const NodeId h = m.host(LayerId::Next, y);
      if (h != kNoNode) out << y << '\t' << h << '\n';
    }
  }
}

Snapshot read_snapshot(std::istream& in) {
  Snapshot s;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty snapshot");
  {
    std::istringstream hs(line);
    std::string pf, sf;
    hs >> pf >> sf;
    if (pf.rfind("p=", 0) != 0 || sf.rfind("step=", 0) != 0) throw ParseError("bad snapshot header: " + line);
    try {
      s.p = static_cast<std::uint32_t>(std::stoul(pf.substr(2)));
      s.step = std::stoull(sf.substr(5));
    } catch (const std::exception&) {
      throw ParseError("bad snapshot header: " + line);
    }
  }
  s.host.assign(s.p, kNoNode);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line.rfind("next ", 0) == 0) break;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("line " + std::to_string(line_no) + ": expected vertex<TAB>host");
    try {
      const auto z = std::stoul(line.substr(0, tab));
      const auto h = std::stoull(line.substr(tab + 1));
      if (z >= s.p) throw ParseError("line " + std::to_string(line_no) + ": vertex out of range");
      s.host[z] = h;
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception&) {
      throw ParseError("line " + std::to_string(line_no) + ": malformed entry");
    }
  }
  return s;
}

}  // namespace dex

#include "dex/adversary.hpp"

#include <algorithm>
#include <deque>
#include <istream>
#include <set>
#include <sstream>

#include "dex/errors.hpp"

namespace dex {

std::string to_string(const AdversaryAction& a) {
  std::ostringstream os;
  os << to_string(a.kind);
  for (const auto& [u, anchor] : a.joins) os << ' ' << u << '@' << anchor;
  for (NodeId u : a.leaves) os << ' ' << u;
  return os.str();
}

namespace {

// Draws for step t use counters t * kDrawsPerStep + k.
constexpr std::uint64_t kDrawsPerStep = 1ULL << 16;

class Draws {
 public:
  explicit Draws(const AdversaryView& v) : v_(v), base_(v.step * kDrawsPerStep) {}
  std::uint64_t below(std::uint64_t bound) { return v_.rng.below(streams::kAdversary, base_ + k_++, bound); }
  double unit() { return v_.rng.unit(streams::kAdversary, base_ + k_++); }
  template <class T>
  const T& pick(const std::vector<T>& xs) { return xs[below(xs.size())]; }

 private:
  const AdversaryView& v_;
  std::uint64_t base_;
  std::uint64_t k_ = 0;
};

class Base : public Strategy {
 protected:
  NodeId fresh(const Dex& dex) {
    const auto live = dex.mapping().node_ids();
    if (!live.empty()) next_id_ = std::max(next_id_, live.back() + 1);
    return next_id_++;
  }
  static bool can_delete(const AdversaryView& v) { return v.dex.mapping().node_count() > v.floor; }
  AdversaryAction insert_uniform(const AdversaryView& v, Draws& d) {
    const NodeId anchor = d.pick(v.dex.mapping().node_ids());
    return AdversaryAction::insert(fresh(v.dex), anchor);
  }

 private:
  NodeId next_id_ = 0;
};

class UniformChurn : public Base {
 public:
  explicit UniformChurn(double p_insert) : p_insert_(p_insert) {}
  std::string name() const override { return "uniform-churn"; }
  std::optional<AdversaryAction> next(const AdversaryView& v) override {
    Draws d(v);
    if (d.unit() < p_insert_ || !can_delete(v)) return insert_uniform(v, d);
    return AdversaryAction::remove(d.pick(v.dex.mapping().node_ids()));
  }

 private:
  double p_insert_;
};

class InsertOnly : public Base {
 public:
  std::string name() const override { return "insert-only"; }
  std::optional<AdversaryAction> next(const AdversaryView& v) override {
    Draws d(v);
    return insert_uniform(v, d);
  }
};

class DeleteOnly : public Base {
 public:
  std::string name() const override { return "delete-only"; }
  std::optional<AdversaryAction> next(const AdversaryView& v) override {
    Draws d(v);
    if (!can_delete(v)) return insert_uniform(v, d);
    return AdversaryAction::remove(d.pick(v.dex.mapping().node_ids()));
  }
};

// Even steps delete the target, odd steps insert; otherwise the network
// would hit the floor within n steps and the attack would stop.
class TargetedAttack : public Base {
 public:
  explicit TargetedAttack(bool coordinator) : coordinator_(coordinator) {}
  std::string name() const override { return coordinator_ ? "coordinator-attack" : "max-degree-attack"; }
  std::optional<AdversaryAction> next(const AdversaryView& v) override {
    Draws d(v);
    if (v.step % 2 == 1 || !can_delete(v)) return insert_uniform(v, d);
    const VirtualMapping& m = v.dex.mapping();
    if (coordinator_) return AdversaryAction::remove(v.dex.coordinator_host());
    NodeId best = kNoNode;
    std::size_t deg = 0;
    for (NodeId u : m.node_ids()) {
      if (best == kNoNode || m.degree(u) > deg) {
        best = u;
        deg = m.degree(u);
      }
    }
    return AdversaryAction::remove(best);
  }

 private:
  bool coordinator_;
};

// Deletes the least-loaded nodes so absorbed vertices pile onto the rest.
class SpareDrain : public Base {
 public:
  explicit SpareDrain(double p_insert) : p_insert_(p_insert) {}
  std::string name() const override { return "spare-drain"; }
  std::optional<AdversaryAction> next(const AdversaryView& v) override {
    Draws d(v);
    const VirtualMapping& m = v.dex.mapping();
    if (d.unit() < p_insert_ || !can_delete(v)) {
      // Anchor at a spare node so its vertex is the one handed over.
      std::vector<NodeId> spare;
      for (NodeId u : m.node_ids()) {
        if (in_spare(m.load(u))) spare.push_back(u);
      }
      const NodeId anchor = spare.empty() ? d.pick(m.node_ids()) : d.pick(spare);
      return AdversaryAction::insert(fresh(v.dex), anchor);
    }
    NodeId best = kNoNode;
    for (NodeId u : m.node_ids()) {
      if (best == kNoNode || m.load(u) < m.load(best)) best = u;
    }
    return AdversaryAction::remove(best);
  }

 private:
  double p_insert_;
};

// Inserts until the cycle has grown, then deletes until it has shrunk.
class Oscillator : public Base {
 public:
  std::string name() const override { return "oscillator"; }
  std::optional<AdversaryAction> next(const AdversaryView& v) override {
    Draws d(v);
    const std::uint32_t p = v.dex.mapping().p();
    if (start_p_ == 0) start_p_ = p;
    if (inserting_ && p > start_p_) {
      inserting_ = false;
      start_p_ = p;
    } else if (!inserting_ && (p < start_p_ || !can_delete(v))) {
      inserting_ = true;
      start_p_ = p;
    }
    if (inserting_) return insert_uniform(v, d);
    return AdversaryAction::remove(d.pick(v.dex.mapping().node_ids()));
  }

 private:
  bool inserting_ = true;
  std::uint32_t start_p_ = 0;
};

class BatchChurn : public Base {
 public:
  explicit BatchChurn(double eps) : eps_(eps) {}
  std::string name() const override { return "batch-churn"; }
  std::optional<AdversaryAction> next(const AdversaryView& v) override {
    Draws d(v);
    const VirtualMapping& m = v.dex.mapping();
    const std::uint64_t n = m.node_count();
    const std::uint64_t k = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(eps_ * static_cast<double>(n)));
    const auto live = m.node_ids();
    if (d.unit() < 0.5 || n < v.floor + k) {
      // Distinct anchors.
      std::set<NodeId> anchors;
      while (anchors.size() < std::min<std::uint64_t>(k, n)) anchors.insert(d.pick(live));
      AdversaryAction a{EventKind::BatchInsert, {}, {}};
      for (NodeId anchor : anchors) a.joins.push_back({fresh(v.dex), anchor});
      return a;
    }
    // Greedy: accept a candidate if every chosen node keeps a surviving
    // neighbor and the rest stays connected.
    std::set<NodeId> chosen;
    for (std::uint64_t tries = 0; chosen.size() < k && tries < 8 * k; ++tries) {
      const NodeId u = d.pick(live);
      if (chosen.count(u)) continue;
      chosen.insert(u);
      if (!admissible(m, chosen)) chosen.erase(u);
    }
    if (chosen.empty()) return insert_uniform(v, d);
    return AdversaryAction{EventKind::BatchDelete, {}, {chosen.begin(), chosen.end()}};
  }

 private:
  static bool admissible(const VirtualMapping& m, const std::set<NodeId>& gone) {
    for (NodeId u : gone) {
      bool ok = false;
      for (const auto& [w, mult] : m.adjacency(u)) ok = ok || !gone.count(w);
      if (!ok) return false;
    }
    NodeId start = kNoNode;
    for (NodeId u : m.node_ids()) {
      if (!gone.count(u)) {
        start = u;
        break;
      }
    }
    std::set<NodeId> seen{start};
    std::deque<NodeId> queue{start};
    while (!queue.empty()) {
      const NodeId x = queue.front();
      queue.pop_front();
      for (const auto& [y, mult] : m.adjacency(x)) {
        if (!gone.count(y) && seen.insert(y).second) queue.push_back(y);
      }
    }
    return seen.size() + gone.size() == m.node_count();
  }

  double eps_;
};

class Scripted : public Strategy {
 public:
  explicit Scripted(std::vector<AdversaryAction> actions) : actions_(std::move(actions)) {}
  std::string name() const override { return "scripted"; }
  std::optional<AdversaryAction> next(const AdversaryView&) override {
    if (pos_ == actions_.size()) return std::nullopt;
    return actions_[pos_++];
  }

 private:
  std::vector<AdversaryAction> actions_;
  std::size_t pos_ = 0;
};

double parse_param(const std::string& name, const std::string& text, double fallback, double lo, double hi) {
  if (text.empty()) return fallback;
  std::size_t used = 0;
  double x = 0;
  try {
    x = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || !(x >= lo && x <= hi)) {
    throw ConfigError("bad parameter '" + text + "' for strategy " + name);
  }
  return x;
}

}  // namespace

std::unique_ptr<Strategy> make_strategy(const std::string& spec) {
  const auto colon = spec.find(':');
  const std::string name = spec.substr(0, colon);
  const std::string param = colon == std::string::npos ? "" : spec.substr(colon + 1);
  auto no_param = [&] {
    if (!param.empty()) throw ConfigError("strategy " + name + " takes no parameter");
  };
  if (name == "uniform-churn") return std::make_unique<UniformChurn>(parse_param(name, param, 0.5, 0, 1));
  if (name == "spare-drain") return std::make_unique<SpareDrain>(parse_param(name, param, 0.5, 0, 1));
  if (name == "batch-churn") return std::make_unique<BatchChurn>(parse_param(name, param, 0.05, 1e-9, 1));
  if (name == "insert-only") return no_param(), std::make_unique<InsertOnly>();
  if (name == "delete-only") return no_param(), std::make_unique<DeleteOnly>();
  if (name == "max-degree-attack") return no_param(), std::make_unique<TargetedAttack>(false);
  if (name == "coordinator-attack") return no_param(), std::make_unique<TargetedAttack>(true);
  if (name == "oscillator") return no_param(), std::make_unique<Oscillator>();
  throw ConfigError("unknown strategy '" + spec + "'");
}

std::vector<AdversaryAction> read_script(std::istream& in) {
  std::vector<AdversaryAction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string verb;
    if (!(ls >> verb)) continue;
    NodeId u = 0, anchor = 0;
    std::string extra;
    if (verb == "insert" && (ls >> u >> anchor) && !(ls >> extra)) {
      out.push_back(AdversaryAction::insert(u, anchor));
    } else if (verb == "delete" && (ls >> u) && !(ls >> extra)) {
      out.push_back(AdversaryAction::remove(u));
    } else if (verb == "batch-insert" || verb == "batch-delete") {
      AdversaryAction a{verb == "batch-insert" ? EventKind::BatchInsert : EventKind::BatchDelete, {}, {}};
      std::string item;
      while (ls >> item) {
        const auto at = item.find(':');
        try {
          if (a.kind == EventKind::BatchInsert && at != std::string::npos) {
            a.joins.push_back({std::stoull(item.substr(0, at)), std::stoull(item.substr(at + 1))});
          } else if (a.kind == EventKind::BatchDelete && at == std::string::npos) {
            a.leaves.push_back(std::stoull(item));
          } else {
            a.joins.clear();
            a.leaves.clear();
            break;
          }
        } catch (const std::exception&) {
          a.joins.clear();
          a.leaves.clear();
          break;
        }
      }
      if (a.joins.empty() && a.leaves.empty()) throw ParseError("script line " + std::to_string(lineno) + ": '" + line + "'");
      out.push_back(std::move(a));
    } else {
      throw ParseError("script line " + std::to_string(lineno) + ": '" + line + "'");
    }
  }
  return out;
}

std::string to_script_line(const AdversaryAction& a) {
  std::ostringstream os;
  switch (a.kind) {
    case EventKind::Insert: os << "insert " << a.joins.at(0).first << ' ' << a.joins.at(0).second; break;
    case EventKind::Delete: os << "delete " << a.leaves.at(0); break;
    case EventKind::BatchInsert:
      os << "batch-insert";
      for (const auto& [u, anchor] : a.joins) os << ' ' << u << ':' << anchor;
      break;
    case EventKind::BatchDelete:
      os << "batch-delete";
      for (NodeId u : a.leaves) os << ' ' << u;
      break;
  }
  return os.str();
}

std::unique_ptr<Strategy> scripted_strategy(std::vector<AdversaryAction> actions) {
  return std::make_unique<Scripted>(std::move(actions));
}

void check_legal(const AdversaryAction& a, const Dex& dex, std::uint64_t floor) {
  const VirtualMapping& m = dex.mapping();
  std::set<NodeId> fresh;
  for (const auto& [u, anchor] : a.joins) {
    if (m.has_node(u) || !fresh.insert(u).second) throw IllegalAction("node " + std::to_string(u) + " is not fresh");
    if (!m.has_node(anchor)) throw IllegalAction("anchor " + std::to_string(anchor) + " is not live");
  }
  std::set<NodeId> gone;
  for (NodeId u : a.leaves) {
    if (!m.has_node(u) || !gone.insert(u).second) throw IllegalAction("node " + std::to_string(u) + " is not live");
  }
  if (!gone.empty() && m.node_count() < floor + gone.size()) {
    throw IllegalAction("deletion below the floor of " + std::to_string(floor) + " nodes");
  }
  const bool single = a.kind == EventKind::Insert || a.kind == EventKind::Delete;
  const std::size_t size = a.joins.size() + a.leaves.size();
  const bool inserting = a.kind == EventKind::Insert || a.kind == EventKind::BatchInsert;
  if (size == 0 || (single && size != 1) || (inserting ? !a.leaves.empty() : !a.joins.empty())) {
    throw IllegalAction("malformed action: " + to_string(a));
  }
}

}  // namespace dex

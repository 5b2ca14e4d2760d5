#pragma once

// The virtual mapping: which live node simulates which vertex of the current
// p-cycle (and, while a staggered rebuild is in flight, of the next one), the
// network links this induces, load statistics and the quotient multigraph.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dex/pcycle.hpp"
#include "dex/spectral.hpp"

namespace dex {

using NodeId = std::uint64_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

enum class LayerId : std::uint8_t { Current = 0, Next = 1 };
enum class RebuildKind : std::uint8_t { Inflate, Deflate };

using Link = std::pair<NodeId, NodeId>;  ///< always (smaller, larger)

inline Link make_link(NodeId a, NodeId b) { return a < b ? Link{a, b} : Link{b, a}; }

/// Simple-graph link changes caused by one mutation.
struct LinkDelta {
  std::vector<Link> added;
  std::vector<Link> removed;
  bool empty() const { return added.empty() && removed.empty(); }
};

/// Net effect of a recovery on the network, relative to the moment the
/// journal was opened.
struct JournalSummary {
  std::uint64_t links_added = 0;
  std::uint64_t links_removed = 0;
  std::uint64_t vertex_moves = 0;  ///< vertices whose host changed, created or discarded
  std::uint64_t total() const { return links_added + links_removed + vertex_moves; }
};

class VirtualMapping {
 public:
  /// A complete single-layer mapping; every listed host becomes a live node.
  VirtualMapping(PCycle cycle, const std::vector<NodeId>& host);

  /// Contiguous blocks: vertex z goes to nodes[floor(z n / p)].
  static VirtualMapping contiguous(PrimeModulus p, const std::vector<NodeId>& nodes);

  // -- layers ---------------------------------------------------------------
  const PCycle& cycle() const { return cur_.cycle; }
  std::uint32_t p() const { return cur_.cycle.size(); }
  bool staggering() const { return next_.has_value(); }
  const PCycle& next_cycle() const { return next_->cycle; }
  RebuildKind rebuild_kind() const { return kind_; }
  const PCycle& layer_cycle(LayerId l) const { return l == LayerId::Current ? cur_.cycle : next_->cycle; }
  /// Vertices built in the layer (p for a complete layer).
  std::uint32_t built(LayerId l) const { return layer(l).built; }
  bool complete(LayerId l) const { return layer(l).built == layer(l).cycle.size(); }
  /// The layer that is fully present: Next once a rebuild has built every new
  /// vertex, Current otherwise.
  LayerId primary_layer() const;

  NodeId host(Vertex z) const { return cur_.host[z]; }
  NodeId host(LayerId l, Vertex z) const { return layer(l).host[z]; }

  // -- nodes ----------------------------------------------------------------
  bool has_node(NodeId u) const { return nodes_.count(u) != 0; }
  std::size_t node_count() const { return nodes_.size(); }
  std::vector<NodeId> node_ids() const;
  /// Vertices of the current layer simulated by u. Throws UnknownNode.
  const std::set<Vertex>& sim(NodeId u) const { return record(u).sim[0]; }
  const std::set<Vertex>& sim(LayerId l, NodeId u) const { return record(u).sim[static_cast<int>(l)]; }
  /// Total number of simulated vertices over both layers. Throws UnknownNode.
  std::uint32_t load(NodeId u) const;
  std::uint32_t load(LayerId l, NodeId u) const { return static_cast<std::uint32_t>(sim(l, u).size()); }

  void add_node(NodeId u);
  /// Requires an empty node without temporary links.
  void remove_node(NodeId u);

  /// Moves z (of layer l) from `from` to `to`, rewiring links. Throws NotOwner, UnknownNode.
  LinkDelta transfer_vertex(Vertex z, NodeId from, NodeId to, LayerId l = LayerId::Current);

  // -- staggered rebuilds ---------------------------------------------------
  void begin_rebuild(RebuildKind kind, PrimeModulus p_new);
  /// The current-layer vertex whose activation builds next-layer vertex y:
  /// its inflation owner, or its deflation dominator.
  Vertex anchor_of(Vertex y) const;
  /// Next-layer vertices built by activating current-layer vertex x.
  std::vector<Vertex> spawned_by(Vertex x) const;
  void build_next(Vertex y, NodeId u);
  void discard_current(Vertex x);
  /// Promotes the next layer. Requires every current vertex discarded and the next layer complete.
  void finish_rebuild();

  /// Replaces the whole mapping by a new single-layer one in one go.
  void replace(PCycle cycle, const std::vector<NodeId>& host);

  // -- links ----------------------------------------------------------------
  bool linked(NodeId a, NodeId b) const;
  /// Network neighbors of u, ascending.
  std::vector<NodeId> neighbors(NodeId u) const;
  std::size_t degree(NodeId u) const;
  std::size_t link_count() const { return link_count_; }
  /// Number of virtual edge slots currently carried by the link.
  std::uint32_t multiplicity(NodeId a, NodeId b) const;
  const std::map<NodeId, std::uint32_t>& adjacency(NodeId u) const;

  void add_temp_link(NodeId a, NodeId b);
  void drop_temp_link(NodeId a, NodeId b);
  std::size_t temp_link_count() const;

  /// Starts recording net link and vertex changes.
  void open_journal();
  /// Net changes since open_journal(), ignoring links incident to `ignore`.
  JournalSummary journal_summary(const std::set<NodeId>& ignore = {}) const;

  /// All links recomputed from scratch; used by tests and the auditor.
  std::map<Link, std::uint32_t> recompute_links() const;

 private:
  struct Layer {
    PCycle cycle;
    std::vector<NodeId> host;
    std::uint32_t built = 0;
  };
  struct NodeRecord {
    std::array<std::set<Vertex>, 2> sim;
  };
  struct Slot {
    LayerId layer;
    Vertex z;
    std::uint8_t k;
    auto operator<=>(const Slot&) const = default;
  };

  const Layer& layer(LayerId l) const { return l == LayerId::Current ? cur_ : *next_; }
  Layer& layer(LayerId l) { return l == LayerId::Current ? cur_ : *next_; }
  const NodeRecord& record(NodeId u) const;

  std::optional<Link> slot_link(const Slot& s) const;
  void collect_affected(LayerId l, Vertex z, std::set<Slot>& out) const;
  void apply_slots(const std::set<Slot>& slots, int sign);
  void bump(NodeId a, NodeId b, int sign);
  void set_host(LayerId l, Vertex z, NodeId to);
  void rebuild_links();
  void note_vertex(LayerId l, Vertex z);

  Layer cur_;
  std::optional<Layer> next_;
  RebuildKind kind_ = RebuildKind::Inflate;
  std::optional<InflationPlan> inflation_;
  std::optional<DeflationPlan> deflation_;
  std::map<NodeId, NodeRecord> nodes_;
  std::map<NodeId, std::map<NodeId, std::uint32_t>> adj_;
  std::map<Link, std::uint32_t> temp_;
  std::size_t link_count_ = 0;

  LinkDelta* capture_ = nullptr;
  bool journal_open_ = false;
  std::map<Link, int> link_journal_;
  /// (layer epoch, vertex) -> host when first touched; epochs distinguish
  /// vertices of successive cycles.
  std::map<std::pair<std::uint64_t, Vertex>, NodeId> vertex_journal_;
  std::uint64_t epoch_ = 0;
};

// -- load statistics --------------------------------------------------------

/// Low = { u : load(u) <= 2 zeta }.
std::set<NodeId> low_set(const VirtualMapping& m);
/// Spare = { u : load(u) >= 2 }.
std::set<NodeId> spare_set(const VirtualMapping& m);

inline bool in_low(std::uint32_t load) { return load <= 2 * kZeta; }
inline bool in_spare(std::uint32_t load) { return load >= 2; }

struct LoadStats {
  std::uint64_t n = 0;
  std::uint64_t low_count = 0;
  std::uint64_t spare_count = 0;
  std::uint32_t max_load = 0;
};

LoadStats load_stats(const VirtualMapping& m);

/// ceil(theta * n) for a rational theta = num / den.
std::uint64_t ceil_fraction(std::uint64_t num, std::uint64_t den, std::uint64_t n);

// -- verification -----------------------------------------------------------

enum class MappingPhase { Normal, Staggering };

enum class ViolationKind { Surjectivity, Load, Inverse, Conservation, Links };

struct Violation {
  ViolationKind kind;
  NodeId node = kNoNode;
  std::string detail;
};

std::string to_string(ViolationKind k);

/// Empty iff the mapping is surjective, loads are within 4 zeta (8 zeta while
/// staggering), host and sim agree and the loads sum to the vertex count.
std::vector<Violation> verify_mapping(const VirtualMapping& m, MappingPhase phase);

/// The contraction of the virtual graph (both layers while staggering,
/// including intermediate edges) by host. Vertex i is the i-th node id in
/// ascending order.
struct QuotientGraph {
  std::vector<NodeId> nodes;
  Multigraph graph;
};

QuotientGraph quotient(const VirtualMapping& m);

/// Simple link graph as a multigraph with unit weights, same vertex order as quotient().
Multigraph link_graph(const VirtualMapping& m);

/// BFS hop distances in the link graph from `source`; unreachable nodes are absent.
std::map<NodeId, std::uint32_t> network_distances(const VirtualMapping& m, NodeId source);
/// Minimum-hop network path, lowest-id tie-break. Empty if unreachable.
std::vector<NodeId> network_path(const VirtualMapping& m, NodeId from, NodeId to);
bool network_connected(const VirtualMapping& m);

// -- snapshots --------------------------------------------------------------

/// Header `p=<p> step=<t>` followed by `vertex<TAB>host` lines. While
/// staggering a second block `next p=<p'> kind=<inflate|deflate>` lists the
/// built next-layer vertices and discarded current vertices are omitted.
void write_snapshot(std::ostream& out, const VirtualMapping& m, std::uint64_t step);

struct Snapshot {
  std::uint64_t step = 0;
  std::uint32_t p = 0;
  std::vector<NodeId> host;
};

/// Parses a single-layer snapshot. Throws ParseError.
Snapshot read_snapshot(std::istream& in);

}  // namespace dex

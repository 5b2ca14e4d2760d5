#pragma once

// DEX node logic: type-1 recovery by random walks, simplified and staggered
// type-2 rebuilds, and the coordinator that tracks n, |Spare| and |Low|.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "dex/mapping.hpp"
#include "dex/rng.hpp"
#include "dex/simnet.hpp"

namespace dex {

enum class Type2Mode { Simplified, Staggered };

struct ProtocolConfig {
  /// theta = theta_num / theta_den.
  std::uint64_t theta_num = 1;
  std::uint64_t theta_den = 545;
  std::uint32_t ell = 8;     ///< insertion/deletion walk length factor
  std::uint32_t c_T = 8;     ///< rebuild walk length factor
  std::uint32_t c_rho = 16;  ///< round budget factor for parallel walks
  Type2Mode mode = Type2Mode::Staggered;
  /// Largest batch as a fraction of n.
  double batch_fraction = 0.05;
  /// Anchors may receive at most this many inserted nodes per batch.
  std::uint32_t batch_per_anchor = 2;
};

/// Counters kept at the host of vertex 0 and replicated at its neighbors.
struct CoordinatorState {
  std::uint64_t n = 0;
  std::uint64_t spare_count = 0;
  std::uint64_t low_count = 0;
  std::uint32_t p = 0;
  std::uint64_t version = 0;
  friend bool operator==(const CoordinatorState&, const CoordinatorState&) = default;
};

enum class WindowPhase { Activate, Discard };

/// Progress of a staggered rebuild.
struct Window {
  RebuildKind kind = RebuildKind::Inflate;
  std::uint32_t p_old = 0;
  std::uint32_t p_new = 0;
  std::uint32_t block = 1;   ///< old vertices per tick
  std::uint32_t blocks = 1;  ///< ticks per phase
  WindowPhase phase = WindowPhase::Activate;
  std::uint32_t cursor = 0;  ///< next block of the current phase
  std::uint32_t ticks = 0;
  std::vector<bool> activated;  ///< per old vertex
  std::uint32_t total_ticks() const { return 2 * blocks; }
};

/// Hooks for layers that keep data attached to virtual vertices.
class RebuildListener {
 public:
  virtual ~RebuildListener() = default;
  /// A vertex changed hosts (type-1 transfer, absorption, rebalance).
  virtual void on_transfer(LayerId, Vertex, NodeId /*from*/, NodeId /*to*/) {}
  /// A staggered rebuild opened the next layer.
  virtual void on_window_opened(const VirtualMapping&) {}
  /// Old vertex x was activated and its next-layer vertices built.
  virtual void on_activated(const VirtualMapping&, Vertex /*x*/) {}
  /// The next layer was promoted.
  virtual void on_window_closed(const VirtualMapping&) {}
  /// The cycle was replaced wholesale; `before` is the old host map.
  virtual void on_replaced(std::uint32_t /*p_old*/, const std::vector<NodeId>& /*before*/, const VirtualMapping&) {}
};

struct RecoveryOutcome {
  RecoveryType type = RecoveryType::Type1;
  StepLedger ledger;
  std::uint64_t topology_changes = 0;
  bool inflated = false;
  bool deflated = false;
  bool ticked = false;
  std::uint64_t walks = 0;
  std::uint64_t walk_failures = 0;
  /// Type-1 attempts that succeeded with their first walk (insertions only).
  bool first_walk_success = false;
};

class Dex {
 public:
  Dex(VirtualMapping initial, ProtocolConfig config, std::uint64_t seed, TraceSink* trace = nullptr);

  const VirtualMapping& mapping() const { return m_; }
  const ProtocolConfig& config() const { return cfg_; }
  const CoordinatorState& coordinator() const { return coord_; }
  NodeId coordinator_host() const { return coord_host_; }
  /// Replicas held by neighbors of the coordinator host at the last refresh.
  const std::map<NodeId, CoordinatorState>& replicas() const { return replicas_; }
  const std::optional<Window>& window() const { return window_; }
  void set_listener(RebuildListener* l) { listener_ = l; }

  std::uint32_t log2n() const;
  std::uint32_t walk_budget() const { return cfg_.ell * log2n(); }
  std::uint32_t rebuild_budget() const { return cfg_.c_T * log2n(); }
  std::uint64_t round_budget() const;
  /// Hard cap 64 log2(n)^3 on the rounds of one step.
  std::uint64_t round_cap() const;
  std::uint64_t threshold(std::uint64_t multiple = 1) const;

  /// u joins attached to `anchor`. Throws IllegalAction if u is live or anchor is not.
  RecoveryOutcome handle_insertion(NodeId u, NodeId anchor);
  /// u leaves; its lowest-id neighbor absorbs it.
  RecoveryOutcome handle_deletion(NodeId u);
  RecoveryOutcome handle_batch_insert(const std::vector<std::pair<NodeId, NodeId>>& joins);
  RecoveryOutcome handle_batch_delete(const std::vector<NodeId>& leaves);

  /// The lowest-id network neighbor of u.
  NodeId absorber_of(NodeId u) const;

  std::uint64_t walks_started() const { return walk_seq_; }

 private:
  struct Step;

  void begin_step(Step& s);
  RecoveryOutcome end_step(Step& s);
  void touch(Step& s, NodeId u);
  void move(Step& s, LayerId l, Vertex z, NodeId from, NodeId to);
  void check_cap(const Step& s) const;

  // type-1
  void insert_walks(Step& s, const std::vector<std::pair<NodeId, NodeId>>& joins);
  void redistribute(Step& s, std::map<NodeId, std::vector<std::pair<LayerId, Vertex>>> pending);
  void type2_fallback(Step& s, RebuildKind kind, NodeId initiator,
                      const std::vector<std::pair<NodeId, NodeId>>& joins);
  std::optional<std::pair<LayerId, Vertex>> pick_donation(NodeId w) const;

  // simplified rebuilds
  void simplified_inflate(Step& s, NodeId initiator, const std::vector<std::pair<NodeId, NodeId>>& joins);
  void simplified_deflate(Step& s, NodeId initiator);
  EngineResult rendezvous(const std::vector<std::pair<Vertex, Vertex>>& old_paths);
  void rebalance(Step& s);
  void recount(Step& s, NodeId origin);

  // staggered rebuilds
  void open_window(Step& s, RebuildKind kind);
  void tick(Step& s);
  void finish_window(Step& s);
  void activate(Step& s, Vertex x);
  void shed(Step& s, NodeId h);
  void claim_next_vertices(Step& s);

  // coordinator
  void report_to_coordinator(Step& s);
  void maybe_trigger(Step& s);

  std::vector<Token> launch(std::size_t count, TokenClass cls, NodeId origin, std::uint32_t budget,
                            NodeId excluded = kNoNode);
  EngineResult run(std::vector<Token>& tokens, const ArrivalPredicate& arrive, Step& s);

  VirtualMapping m_;
  ProtocolConfig cfg_;
  CounterRng rng_;
  TraceSink* trace_;
  RebuildListener* listener_ = nullptr;
  CoordinatorState coord_;
  NodeId coord_host_ = kNoNode;
  std::map<NodeId, CoordinatorState> replicas_;
  std::optional<Window> window_;
  std::uint64_t walk_seq_ = 0;
  std::uint64_t route_seq_ = 0;
  std::uint64_t global_round_ = 0;
  Step* step_ = nullptr;
};

}  // namespace dex

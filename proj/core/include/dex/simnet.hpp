#pragma once

// Synchronous message-passing substrate: bounded messages, a round engine that
// moves walk and route tokens over the current link graph with per-link
// capacity, flooding costs, and per-step metric records.

#include <array>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dex/mapping.hpp"
#include "dex/rng.hpp"

namespace dex {

enum class MessageKind : std::uint8_t {
  Walk,
  Reply,
  Transfer,
  LinkSetup,
  Flood,
  Convergecast,
  CoordinatorUpdate,
  Replica,
  Rendezvous,
  Activate,
  DhtRequest,
  DhtReply,
  Handoff,
};

/// A protocol message: a kind tag and at most eight integer fields.
class Message {
 public:
  static constexpr std::size_t kMaxFields = 8;

  Message() = default;
  /// Throws DomainError if more than kMaxFields fields are given.
  Message(MessageKind kind, std::initializer_list<std::uint64_t> fields);

  MessageKind kind() const { return kind_; }
  std::size_t size() const { return size_; }
  std::uint64_t operator[](std::size_t i) const { return fields_.at(i); }

 private:
  MessageKind kind_ = MessageKind::Walk;
  std::uint8_t size_ = 0;
  std::array<std::uint64_t, kMaxFields> fields_{};
};

/// Capacity class: each directed link carries one token per class per round.
enum class TokenClass : std::uint8_t { FindSpare, FindLow, Rebalance, ClaimVertex, FindDominator, Route };
inline constexpr std::size_t kTokenClasses = 6;

std::string to_string(TokenClass c);

enum class TokenState : std::uint8_t { Active, Done, Frozen };

/// A random-walk token or a source-routed message in flight.
struct Token {
  std::uint64_t id = 0;  ///< sequence number; also selects the walk's RNG stream
  TokenClass cls = TokenClass::Route;
  NodeId origin = kNoNode;
  NodeId holder = kNoNode;
  NodeId excluded = kNoNode;  ///< walks never step onto this node
  std::uint32_t steps = 0;
  std::uint32_t step_budget = 0;
  std::vector<NodeId> route;  ///< for Route tokens: full path, route[0] == origin
  std::vector<NodeId> trail;  ///< nodes visited, starting with origin
  TokenState state = TokenState::Active;
  std::uint64_t finished_round = 0;
  Message msg;
};

Token make_walk(std::uint64_t id, TokenClass cls, NodeId origin, std::uint32_t step_budget,
                NodeId excluded = kNoNode);
Token make_route(std::uint64_t id, std::vector<NodeId> path, Message msg);

struct RoundReport {
  std::uint64_t round_index = 0;
  std::uint64_t messages_sent = 0;
  std::uint64_t edges_added = 0;
  std::uint64_t edges_removed = 0;
};

/// Rounds and messages consumed by a phase of a recovery.
struct EngineResult {
  std::uint64_t rounds = 0;
  std::uint64_t messages = 0;
  std::vector<std::uint64_t> per_round;  ///< messages sent in each round
};

/// Writes `round <r> node <id> <event> ...` lines when attached to a stream.
class TraceSink {
 public:
  TraceSink() = default;
  explicit TraceSink(std::ostream* out) : out_(out) {}
  bool enabled() const { return out_ != nullptr; }
  void emit(std::uint64_t round, NodeId node, const std::string& event, const std::string& detail = {});

 private:
  std::ostream* out_ = nullptr;
};

/// Called when a walk token arrives at a node; returning true ends the walk there.
using ArrivalPredicate = std::function<bool(Token&, NodeId)>;

/// Runs tokens over the link graph of `m` in synchronous rounds until every
/// token is done or frozen. Each round, every active token bids for one hop;
/// a directed link forwards at most one token of each class per round, and
/// contention is resolved by (round the token reached its holder, token id).
/// Walks pick a uniformly random neighbor other than `excluded`, drawing from
/// stream kWalkBase + id; they freeze after step_budget steps or
/// `round_budget` rounds. Routes follow their path and throw RouteBroken if a
/// link is missing.
EngineResult run_tokens(const VirtualMapping& m, const CounterRng& rng, std::vector<Token>& tokens,
                        const ArrivalPredicate& arrive, std::uint64_t round_budget, TraceSink* trace = nullptr,
                        std::uint64_t round_offset = 0);

/// Delivers one message along `path` (one hop per round when uncontended).
EngineResult route_message(const VirtualMapping& m, const std::vector<NodeId>& path, const Message& msg);

/// Maps a vertex path of a layer to the host path, dropping repeats.
std::vector<NodeId> host_path(const VirtualMapping& m, LayerId layer, const std::vector<Vertex>& vertices);

enum class Aggregate { Spare, Low };

struct FloodResult {
  std::uint64_t n = 0;
  std::uint64_t count = 0;
  EngineResult cost;
};

/// BFS broadcast from `origin` and convergecast of (node count, members of
/// Spare or Low). Costs 2 ecc(origin) rounds and 2 |links| messages.
FloodResult flood_aggregate(const VirtualMapping& m, NodeId origin, Aggregate what);

/// Cost of the broadcast half of a flood only (ecc rounds).
EngineResult broadcast_cost(const VirtualMapping& m, NodeId origin);

/// Accumulates the rounds of one step in order.
class StepLedger {
 public:
  /// Appends a phase that runs after everything recorded so far.
  void sequential(const EngineResult& r);
  /// Appends `rounds` rounds carrying `messages` messages in total.
  void add(std::uint64_t rounds, std::uint64_t messages);
  std::uint64_t rounds() const { return rounds_.size(); }
  std::uint64_t messages() const { return messages_; }
  const std::vector<RoundReport>& reports() const { return rounds_; }
  void set_topology(std::uint64_t added, std::uint64_t removed);

 private:
  std::vector<RoundReport> rounds_;
  std::uint64_t messages_ = 0;
};

enum class EventKind { Insert, Delete, BatchInsert, BatchDelete };
enum class RecoveryType { Type1, Type2Simplified, Type2StaggeredTick };

std::string to_string(EventKind e);
std::string to_string(RecoveryType r);

struct StepReport {
  std::uint64_t step_index = 0;
  EventKind event = EventKind::Insert;
  RecoveryType recovery_type = RecoveryType::Type1;
  std::uint64_t rounds_used = 0;
  std::uint64_t messages_used = 0;
  std::uint64_t topology_changes = 0;
  std::uint32_t max_load = 0;
  std::uint64_t n = 0;
  std::uint32_t p = 0;
  std::uint64_t spare_count = 0;
  std::uint64_t low_count = 0;
  std::optional<double> lambda_quotient;
  std::optional<double> lambda_virtual;
  bool staggering = false;  ///< a rebuild window was open at step end
  bool inflated = false;
  bool deflated = false;
  std::uint64_t walks = 0;
  std::uint64_t walk_failures = 0;
  std::vector<RoundReport> rounds;
};

/// The CSV header shared by all metric files.
inline constexpr const char* kCsvHeader =
    "step,event,recovery_type,rounds,messages,topology_changes,n,p,max_load,spare,low,lambda_quotient,"
    "lambda_virtual";

std::string csv_row(const StepReport& r);
std::string ndjson_row(const StepReport& r);

}  // namespace dex

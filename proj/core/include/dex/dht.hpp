#pragma once

// Key-value store on top of DEX. A key lives at the host of vertex
// hash_key(key, p); items travel with their vertex, and during a staggered
// rebuild they move to their new home when the old vertex is activated.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dex/protocol.hpp"

namespace dex {

/// mix64(key ^ p * 0x9e3779b97f4a7c15) mod p.
Vertex hash_key(std::uint64_t key, PrimeModulus p);

inline constexpr std::size_t kMaxValueBytes = 256;

struct DhtOpResult {
  std::optional<std::string> value;  ///< get: nullopt means Missing
  NodeId holder = kNoNode;
  std::uint64_t hops = 0;        ///< one way
  std::uint64_t extra_hops = 0;  ///< hops after the old home forwarded the request
  std::uint64_t messages = 0;    ///< request plus reply
  std::uint64_t rounds = 0;
};

struct DhtStats {
  std::uint64_t handoff_messages = 0;  ///< batches of items sent between nodes
  std::uint64_t items_moved = 0;
};

/// Registers itself as the protocol's rebuild listener; `dex` must outlive it
/// and stay at the same address.
class Dht : public RebuildListener {
 public:
  explicit Dht(Dex& dex);
  Dht(const Dht&) = delete;
  Dht& operator=(const Dht&) = delete;
  ~Dht() override;

  /// Throws DomainError for values over kMaxValueBytes or an unknown origin.
  DhtOpResult put(NodeId origin, std::uint64_t key, std::string value);
  DhtOpResult get(NodeId origin, std::uint64_t key) const;

  /// Node that should hold `key` right now.
  NodeId responsible(std::uint64_t key) const;
  /// Nodes actually storing `key` (exactly one when healthy).
  std::vector<NodeId> holders(std::uint64_t key) const;
  std::size_t size() const;
  const DhtStats& stats() const { return stats_; }

  /// Compares stored items with `ledger`; returns one line per problem.
  std::vector<std::string> audit(const std::map<std::uint64_t, std::string>& ledger) const;

  void on_transfer(LayerId l, Vertex z, NodeId from, NodeId to) override;
  void on_activated(const VirtualMapping& m, Vertex x) override;
  void on_window_closed(const VirtualMapping& m) override;
  void on_replaced(std::uint32_t p_old, const std::vector<NodeId>& before, const VirtualMapping& m) override;

 private:
  // Where an item is filed: by vertex of a layer, or parked at the anchor of
  // a next-layer vertex that is not built yet.
  enum class Slot : std::uint8_t { Current, Next, Parked };
  struct Home {
    Slot slot = Slot::Current;
    Vertex vertex = 0;  ///< for Parked: the anchor (a current vertex)
    friend auto operator<=>(const Home&, const Home&) = default;
  };
  using Bucket = std::map<std::uint64_t, std::string>;

  Home home_of(std::uint64_t key) const;
  NodeId host_of(const Home& h) const;
  /// Route along the layer of `h` from one of the origin's own vertices.
  std::vector<NodeId> path_to(NodeId origin, const Home& h) const;
  void move_bucket(NodeId from, const Home& to_home, NodeId to, Bucket items);
  void file(const Home& h, NodeId at, std::uint64_t key, std::string value);

  Dex& dex_;
  /// Per node, per home, the items stored there.
  std::map<NodeId, std::map<Home, Bucket>> store_;
  DhtStats stats_;
};

}  // namespace dex

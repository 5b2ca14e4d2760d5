#pragma once

// Adaptive adversaries: each step they read the full simulation state and
// pick the next insertion or deletion.

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dex/protocol.hpp"

namespace dex {

struct AdversaryAction {
  EventKind kind = EventKind::Insert;
  std::vector<std::pair<NodeId, NodeId>> joins;  ///< (new id, anchor)
  std::vector<NodeId> leaves;

  static AdversaryAction insert(NodeId u, NodeId anchor) { return {EventKind::Insert, {{u, anchor}}, {}}; }
  static AdversaryAction remove(NodeId u) { return {EventKind::Delete, {}, {u}}; }
  friend bool operator==(const AdversaryAction&, const AdversaryAction&) = default;
};

std::string to_string(const AdversaryAction& a);

/// Everything a strategy may look at.
struct AdversaryView {
  const Dex& dex;
  const CounterRng& rng;  ///< draws on the adversary stream only
  std::uint64_t step = 0;
  std::uint64_t floor = 4;  ///< never delete below this many nodes
};

class Strategy {
 public:
  virtual ~Strategy() = default;
  virtual std::string name() const = 0;
  /// nullopt ends the run (scripted strategies only).
  virtual std::optional<AdversaryAction> next(const AdversaryView& view) = 0;
};

/// Parses `name` or `name:param`. Built-ins: uniform-churn[:p_insert],
/// insert-only, delete-only, max-degree-attack, coordinator-attack,
/// spare-drain[:p_insert], oscillator, batch-churn[:eps]. Throws ConfigError.
std::unique_ptr<Strategy> make_strategy(const std::string& spec);

/// Reads `insert <id> <anchor>` / `delete <id>` lines, plus
/// `batch-insert <id>:<anchor> ...` / `batch-delete <id> ...`; `#` starts a
/// comment. Throws ParseError.
std::vector<AdversaryAction> read_script(std::istream& in);
/// One line of the script format.
std::string to_script_line(const AdversaryAction& a);
std::unique_ptr<Strategy> scripted_strategy(std::vector<AdversaryAction> actions);

/// Throws IllegalAction unless `a` is legal against the current state.
void check_legal(const AdversaryAction& a, const Dex& dex, std::uint64_t floor);

}  // namespace dex

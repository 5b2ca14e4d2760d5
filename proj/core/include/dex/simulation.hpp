#pragma once

// The step loop: adversary action, protocol recovery, then the invariant
// suite, with optional spectral checkpoints.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dex/adversary.hpp"
#include "dex/errors.hpp"
#include "dex/protocol.hpp"

namespace dex {

struct RunConfig {
  std::uint64_t seed = 1;
  std::uint64_t n0 = 64;
  std::uint64_t steps = 1000;
  std::string strategy = "uniform-churn:0.5";
  std::string script;  ///< action file; replaces the strategy when set
  std::uint64_t theta_num = 1;
  std::uint64_t theta_den = 545;
  std::uint32_t ell = 8;
  std::uint32_t c_T = 8;
  std::uint32_t c_rho = 16;
  Type2Mode mode = Type2Mode::Staggered;
  std::uint64_t spectral_every = 0;  ///< 0 = off
  std::uint64_t floor = 4;
  double batch_fraction = 0.05;
  std::uint32_t batch_per_anchor = 2;
  /// Allows theta above 1/545.
  bool experimental = false;
  std::string out_dir;  ///< default directory for the outputs below
  std::string csv;
  std::string summary;
  std::string ndjson;
  std::string trace;
  std::string actions;  ///< where to record the actions taken, in script form
};

/// Sets one `key=value` setting. Keys match the field names (theta takes
/// `a/b` or a decimal; mode takes simplified|staggered). Throws ConfigError.
void apply_setting(RunConfig& c, const std::string& key, const std::string& value);
/// `key=value` lines; blank lines and `#` comments ignored. Throws ConfigError.
RunConfig parse_config(std::istream& in, RunConfig base = {});
/// Throws ConfigError.
void validate(const RunConfig& c);
ProtocolConfig protocol_config(const RunConfig& c);

/// p0 = least prime in (4 n0, 8 n0), vertices split into n0 contiguous blocks.
VirtualMapping initial_mapping(std::uint64_t n0);

class InvariantViolation : public Error {
 public:
  using Error::Error;
};

/// Structural invariants after a step; one line per failure.
std::vector<std::string> check_invariants(const Dex& dex);

/// Fact 1 on `pairs` random vertex pairs: network distance of the hosts is at
/// most the cycle distance. Single-layer mappings only.
std::vector<std::string> check_metric_map(const VirtualMapping& m, const CounterRng& rng, std::uint64_t counter,
                                          std::uint32_t pairs = 200);

struct SpectralCheckpoint {
  double lambda_quotient = 0;
  double lambda_reference = 0;  ///< lambda2 of the fully present cycle
  bool in_window = false;
  /// Outside windows: lambda_quotient <= lambda_reference + 1e-9.
  /// Inside: 1 - lambda_quotient >= (1 - lambda_reference)^2 / 8 - 1e-9.
  bool holds = true;
};

SpectralCheckpoint spectral_checkpoint(const Dex& dex);

struct TypeStats {
  std::uint64_t count = 0;
  std::uint64_t max_rounds = 0;
  std::uint64_t sum_rounds = 0;
  std::uint64_t max_messages = 0;
  std::uint64_t sum_messages = 0;
};

struct Summary {
  std::uint64_t steps = 0;
  std::uint64_t total_rounds = 0;
  std::uint64_t total_messages = 0;
  std::uint64_t total_topology_changes = 0;
  std::uint64_t inflations = 0;
  std::uint64_t deflations = 0;
  std::uint32_t max_load = 0;
  std::optional<double> min_gap;
  std::map<RecoveryType, TypeStats> by_type;
  std::uint64_t final_n = 0;
  std::uint32_t final_p = 0;

  void add(const StepReport& r);
};

class Simulation {
 public:
  /// Uses the script or strategy named in `config`.
  explicit Simulation(const RunConfig& config, TraceSink* trace = nullptr);
  Simulation(const RunConfig& config, std::unique_ptr<Strategy> strategy, TraceSink* trace = nullptr);

  /// Runs one adversary step. Returns nullopt once the configured step count
  /// is reached or a script runs out. Throws InvariantViolation,
  /// RecoveryStalled or IllegalAction.
  std::optional<StepReport> step();

  const Dex& dex() const { return *dex_; }
  Dex& dex() { return *dex_; }
  const RunConfig& config() const { return cfg_; }
  const Summary& summary() const { return summary_; }
  std::uint64_t steps_done() const { return t_; }
  /// The action applied by the last step.
  const AdversaryAction& last_action() const { return last_; }

 private:
  RunConfig cfg_;
  std::unique_ptr<Strategy> strategy_;
  CounterRng rng_;
  std::unique_ptr<Dex> dex_;
  Summary summary_;
  std::uint64_t t_ = 0;
  AdversaryAction last_;
};

}  // namespace dex

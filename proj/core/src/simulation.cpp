#include "dex/simulation.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>

#include "dex/spectral.hpp"

namespace dex {

namespace {

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return x;
}

std::uint32_t parse_u32(const std::string& key, const std::string& v) {
  const std::uint64_t x = parse_uint(key, v);
  if (x > UINT32_MAX) throw ConfigError(key + ": out of range");
  return static_cast<std::uint32_t>(x);
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "seed") {
    c.seed = parse_uint(key, v);
  } else if (key == "n0") {
    c.n0 = parse_uint(key, v);
  } else if (key == "steps") {
    c.steps = parse_uint(key, v);
  } else if (key == "strategy") {
    c.strategy = v;
  } else if (key == "script") {
    c.script = v;
  } else if (key == "theta") {
    if (const auto slash = v.find('/'); slash != std::string::npos) {
      c.theta_num = parse_uint(key, v.substr(0, slash));
      c.theta_den = parse_uint(key, v.substr(slash + 1));
    } else {
      const double x = parse_double(key, v);
      c.theta_num = static_cast<std::uint64_t>(x * 1e9 + 0.5);
      c.theta_den = 1000000000;
    }
  } else if (key == "ell") {
    c.ell = parse_u32(key, v);
  } else if (key == "c_T") {
    c.c_T = parse_u32(key, v);
  } else if (key == "c_rho") {
    c.c_rho = parse_u32(key, v);
  } else if (key == "mode" || key == "type2_mode") {
    if (v == "simplified") {
      c.mode = Type2Mode::Simplified;
    } else if (v == "staggered") {
      c.mode = Type2Mode::Staggered;
    } else {
      throw ConfigError(key + ": expected simplified or staggered, got '" + v + "'");
    }
  } else if (key == "spectral_every" || key == "spectral_checkpoint_every") {
    c.spectral_every = parse_uint(key, v);
  } else if (key == "floor") {
    c.floor = parse_uint(key, v);
  } else if (key == "batch_fraction") {
    c.batch_fraction = parse_double(key, v);
  } else if (key == "batch_per_anchor") {
    c.batch_per_anchor = parse_u32(key, v);
  } else if (key == "experimental") {
    c.experimental = parse_bool(key, v);
  } else if (key == "out_dir") {
    c.out_dir = v;
  } else if (key == "csv") {
    c.csv = v;
  } else if (key == "summary") {
    c.summary = v;
  } else if (key == "ndjson") {
    c.ndjson = v;
  } else if (key == "trace") {
    c.trace = v;
  } else if (key == "actions") {
    c.actions = v;
  } else {
    throw ConfigError("unknown setting '" + key + "'");
  }
}

RunConfig parse_config(std::istream& in, RunConfig base) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": missing '='");
    apply_setting(base, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

void validate(const RunConfig& c) {
  if (c.n0 < 4) throw ConfigError("n0 must be at least 4");
  if (c.floor < 1) throw ConfigError("floor must be at least 1");
  if (c.theta_num == 0 || c.theta_den == 0 || c.theta_num > c.theta_den) throw ConfigError("theta must lie in (0, 1]");
  if (!c.experimental && c.theta_num * 545 > c.theta_den) {
    throw ConfigError("theta above 1/545 needs experimental=true");
  }
  if (c.ell == 0 || c.c_T == 0 || c.c_rho == 0) throw ConfigError("walk constants must be positive");
  if (!(c.batch_fraction > 0 && c.batch_fraction <= 1)) throw ConfigError("batch_fraction must lie in (0, 1]");
  if (c.batch_per_anchor == 0) throw ConfigError("batch_per_anchor must be positive");
}

ProtocolConfig protocol_config(const RunConfig& c) {
  ProtocolConfig p;
  p.theta_num = c.theta_num;
  p.theta_den = c.theta_den;
  p.ell = c.ell;
  p.c_T = c.c_T;
  p.c_rho = c.c_rho;
  p.mode = c.mode;
  p.batch_fraction = c.batch_fraction;
  p.batch_per_anchor = c.batch_per_anchor;
  return p;
}

VirtualMapping initial_mapping(std::uint64_t n0) {
  std::vector<NodeId> nodes(n0);
  for (NodeId u = 0; u < n0; ++u) nodes[u] = u;
  return VirtualMapping::contiguous(smallest_prime_in(4 * n0, 8 * n0), nodes);
}

std::vector<std::string> check_invariants(const Dex& dex) {
  std::vector<std::string> out;
  const VirtualMapping& m = dex.mapping();
  for (const Violation& v : verify_mapping(m, m.staggering() ? MappingPhase::Staggering : MappingPhase::Normal)) {
    out.push_back(to_string(v.kind) + " at node " + std::to_string(v.node) + ": " + v.detail);
  }
  if (!network_connected(m)) out.push_back("network disconnected");
  if (m.temp_link_count() != 0) out.push_back("temporary links left after recovery");
  // Unbuilt next vertices are carried by the host of their anchor.
  std::map<NodeId, std::uint64_t> carried;
  if (m.staggering()) {
    for (Vertex y = 0; y < m.next_cycle().size(); ++y) {
      if (m.host(LayerId::Next, y) == kNoNode) ++carried[m.host(LayerId::Current, m.anchor_of(y))];
    }
  }
  for (NodeId u : m.node_ids()) {
    const std::uint64_t load = m.load(u) + (carried.count(u) ? carried.at(u) : 0);
    if (m.degree(u) > 3 * load) {
      out.push_back("node " + std::to_string(u) + " has degree " + std::to_string(m.degree(u)) + " > 3*load");
    }
  }
  const auto fresh = m.recompute_links();
  bool links_ok = fresh.size() == m.link_count();
  for (const auto& [link, w] : fresh) links_ok = links_ok && m.multiplicity(link.first, link.second) == w;
  if (!links_ok) out.push_back("network links differ from the virtual edges");
  const LoadStats st = load_stats(m);
  const CoordinatorState& c = dex.coordinator();
  if (c.n != st.n || c.spare_count != st.spare_count || c.low_count != st.low_count || c.p != m.p()) {
    out.push_back("coordinator counters (n=" + std::to_string(c.n) + " spare=" + std::to_string(c.spare_count) +
                  " low=" + std::to_string(c.low_count) + ") differ from ground truth (n=" + std::to_string(st.n) +
                  " spare=" + std::to_string(st.spare_count) + " low=" + std::to_string(st.low_count) + ")");
  }
  if (dex.coordinator_host() != m.host(m.primary_layer(), 0)) out.push_back("coordinator state is not at vertex 0");
  return out;
}

std::vector<std::string> check_metric_map(const VirtualMapping& m, const CounterRng& rng, std::uint64_t counter,
                                          std::uint32_t pairs) {
  std::vector<std::string> out;
  const PCycle& c = m.cycle();
  for (std::uint32_t i = 0; i < pairs; ++i) {
    const auto a = static_cast<Vertex>(rng.below(streams::kHarness, counter + 2 * i, c.size()));
    const auto b = static_cast<Vertex>(rng.below(streams::kHarness, counter + 2 * i + 1, c.size()));
    const std::uint32_t dv = c.distances_from(a)[b];
    const std::uint32_t dn = network_distances(m, m.host(a)).at(m.host(b));
    if (dn > dv) {
      out.push_back("hosts of " + std::to_string(a) + " and " + std::to_string(b) + " are " + std::to_string(dn) +
                    " hops apart, vertices only " + std::to_string(dv));
    }
  }
  return out;
}

SpectralCheckpoint spectral_checkpoint(const Dex& dex) {
  const VirtualMapping& m = dex.mapping();
  SpectralCheckpoint cp;
  cp.in_window = m.staggering();
  cp.lambda_quotient = second_eigenvalue(quotient(m).graph).lambda2;
  cp.lambda_reference = cached_pcycle_spectrum(PrimeModulus(m.layer_cycle(m.primary_layer()).size())).lambda2;
  if (cp.in_window) {
    const double floor = (1 - cp.lambda_reference) * (1 - cp.lambda_reference) / 8;
    cp.holds = 1 - cp.lambda_quotient >= floor - 1e-9;
  } else {
    cp.holds = cp.lambda_quotient <= cp.lambda_reference + 1e-9;
  }
  return cp;
}

void Summary::add(const StepReport& r) {
  ++steps;
  total_rounds += r.rounds_used;
  total_messages += r.messages_used;
  total_topology_changes += r.topology_changes;
  inflations += r.inflated;
  deflations += r.deflated;
  max_load = std::max(max_load, r.max_load);
  if (r.lambda_quotient) min_gap = std::min(min_gap.value_or(1.0), 1 - *r.lambda_quotient);
  TypeStats& t = by_type[r.recovery_type];
  ++t.count;
  t.max_rounds = std::max(t.max_rounds, r.rounds_used);
  t.sum_rounds += r.rounds_used;
  t.max_messages = std::max(t.max_messages, r.messages_used);
  t.sum_messages += r.messages_used;
  final_n = r.n;
  final_p = r.p;
}

namespace {

std::unique_ptr<Strategy> strategy_for(const RunConfig& c) {
  if (c.script.empty()) return make_strategy(c.strategy);
  std::ifstream in(c.script);
  if (!in) throw ConfigError("cannot open script " + c.script);
  return scripted_strategy(read_script(in));
}

RunConfig adjusted(RunConfig c) {
  validate(c);
  // A batch strategy's fraction must be admissible for the protocol.
  const std::string prefix = "batch-churn:";
  if (c.script.empty() && c.strategy.rfind(prefix, 0) == 0) {
    c.batch_fraction = std::max(c.batch_fraction, std::stod(c.strategy.substr(prefix.size())));
  }
  return c;
}

}  // namespace

Simulation::Simulation(const RunConfig& config, TraceSink* trace)
    : Simulation(config, strategy_for(adjusted(config)), trace) {}

Simulation::Simulation(const RunConfig& config, std::unique_ptr<Strategy> strategy, TraceSink* trace)
    : cfg_(adjusted(config)),
      strategy_(std::move(strategy)),
      rng_(cfg_.seed),
      dex_(std::make_unique<Dex>(initial_mapping(cfg_.n0), protocol_config(cfg_), cfg_.seed, trace)) {}

std::optional<StepReport> Simulation::step() {
  if (t_ >= cfg_.steps) return std::nullopt;
  const AdversaryView view{*dex_, rng_, t_, cfg_.floor};
  std::optional<AdversaryAction> a = strategy_->next(view);
  if (!a) return std::nullopt;
  check_legal(*a, *dex_, cfg_.floor);
  RecoveryOutcome out;
  switch (a->kind) {
    case EventKind::Insert: out = dex_->handle_insertion(a->joins[0].first, a->joins[0].second); break;
    case EventKind::Delete: out = dex_->handle_deletion(a->leaves[0]); break;
    case EventKind::BatchInsert: out = dex_->handle_batch_insert(a->joins); break;
    case EventKind::BatchDelete: out = dex_->handle_batch_delete(a->leaves); break;
  }
  const VirtualMapping& m = dex_->mapping();
  const LoadStats st = load_stats(m);
  StepReport r;
  r.step_index = t_;
  r.event = a->kind;
  r.recovery_type = out.type;
  r.rounds_used = out.ledger.rounds();
  r.messages_used = out.ledger.messages();
  r.topology_changes = out.topology_changes;
  r.max_load = st.max_load;
  r.n = st.n;
  r.p = m.p();
  r.spare_count = st.spare_count;
  r.low_count = st.low_count;
  r.staggering = m.staggering();
  r.inflated = out.inflated;
  r.deflated = out.deflated;
  r.walks = out.walks;
  r.walk_failures = out.walk_failures;
  r.rounds = out.ledger.reports();

  std::vector<std::string> failures = check_invariants(*dex_);
  if (cfg_.spectral_every != 0 && (t_ + 1) % cfg_.spectral_every == 0) {
    const SpectralCheckpoint cp = spectral_checkpoint(*dex_);
    r.lambda_quotient = cp.lambda_quotient;
    r.lambda_virtual = cp.lambda_reference;
    if (!cp.holds) {
      failures.push_back("spectral bound fails: lambda_quotient=" + std::to_string(cp.lambda_quotient) +
                         " reference=" + std::to_string(cp.lambda_reference));
    }
    if (!m.staggering()) {
      for (auto& f : check_metric_map(m, rng_, t_ << 16)) failures.push_back(std::move(f));
    }
  }
  last_ = *a;
  if (!failures.empty()) {
    std::string msg = "step " + std::to_string(t_) + " (" + to_string(*a) + "):";
    for (const auto& f : failures) msg += "\n  " + f;
    throw InvariantViolation(msg);
  }
  summary_.add(r);
  ++t_;
  return r;
}

}  // namespace dex

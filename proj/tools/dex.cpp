// dex: experiment driver for the DEX simulator.
//
//   dex run      [--config FILE] [flags]   step loop with metrics and audits
//   dex spectra  [--min P] [--max P]       lambda2, gap and diameter of Z(p)
//   dex dht-demo [--keys FILE] [flags]     key-value store under churn
//   dex audit    --script FILE [flags]     replay actions, checking every step

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dex/dht.hpp"
#include "dex/errors.hpp"
#include "dex/pcycle.hpp"
#include "dex/simulation.hpp"
#include "dex/spectral.hpp"
#include "json.hpp"

namespace {

using dex::RunConfig;
using nlohmann::json;

constexpr int kExitViolation = 1;
constexpr int kExitUsage = 2;

// Settings shared by run, dht-demo and audit. Flags override the config file.
struct Settings {
  std::string config_file;
  std::map<std::string, std::string> flags;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "key=value settings file")->check(CLI::ExistingFile);
    const std::vector<std::pair<std::string, std::string>> keys{
        {"--seed", "seed"},
        {"--n0", "n0"},
        {"--steps", "steps"},
        {"--strategy", "strategy"},
        {"--script", "script"},
        {"--theta", "theta"},
        {"--ell", "ell"},
        {"--c-T", "c_T"},
        {"--c-rho", "c_rho"},
        {"--mode", "mode"},
        {"--spectral-every", "spectral_every"},
        {"--floor", "floor"},
        {"--batch-fraction", "batch_fraction"},
        {"--batch-per-anchor", "batch_per_anchor"},
        {"--experimental", "experimental"},
        {"--out-dir", "out_dir"},
        {"--csv", "csv"},
        {"--summary", "summary"},
        {"--ndjson", "ndjson"},
        {"--trace", "trace"},
        {"--actions", "actions"},
    };
    for (const auto& [flag, key] : keys) app->add_option(flag, flags[key], key);
  }

  RunConfig resolve() const {
    RunConfig c;
    if (const char* dir = std::getenv("DEX_OUT_DIR")) c.out_dir = dir;
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      c = dex::parse_config(in, c);
    }
    for (const auto& [key, value] : flags) {
      if (!value.empty()) dex::apply_setting(c, key, value);
    }
    dex::validate(c);
    return c;
  }
};

std::string output_path(const RunConfig& c, const std::string& explicit_path, const std::string& name) {
  if (!explicit_path.empty()) return explicit_path;
  if (c.out_dir.empty()) return {};
  std::filesystem::create_directories(c.out_dir);
  return (std::filesystem::path(c.out_dir) / name).string();
}

std::unique_ptr<std::ofstream> open_out(const std::string& path) {
  if (path.empty()) return nullptr;
  auto f = std::make_unique<std::ofstream>(path);
  if (!*f) throw dex::ConfigError("cannot write " + path);
  return f;
}

json summary_json(const dex::Summary& s) {
  json j;
  j["steps"] = s.steps;
  j["total_rounds"] = s.total_rounds;
  j["total_messages"] = s.total_messages;
  j["total_topology_changes"] = s.total_topology_changes;
  j["inflations"] = s.inflations;
  j["deflations"] = s.deflations;
  j["max_load"] = s.max_load;
  j["min_spectral_gap"] = s.min_gap ? json(*s.min_gap) : json(nullptr);
  j["final_n"] = s.final_n;
  j["final_p"] = s.final_p;
  json types = json::object();
  for (const auto& [type, t] : s.by_type) {
    types[dex::to_string(type)] = {
        {"count", t.count},
        {"max_rounds", t.max_rounds},
        {"avg_rounds", t.count ? static_cast<double>(t.sum_rounds) / t.count : 0.0},
        {"max_messages", t.max_messages},
        {"avg_messages", t.count ? static_cast<double>(t.sum_messages) / t.count : 0.0},
    };
  }
  j["by_recovery_type"] = types;
  return j;
}

json snapshot_json(const dex::Simulation& sim) {
  const dex::Dex& d = sim.dex();
  const dex::VirtualMapping& m = d.mapping();
  json j;
  j["step"] = sim.steps_done();
  j["last_action"] = dex::to_string(sim.last_action());
  j["n"] = m.node_count();
  j["p"] = m.p();
  j["coordinator_host"] = d.coordinator_host();
  const auto& c = d.coordinator();
  j["coordinator"] = {{"n", c.n}, {"spare", c.spare_count}, {"low", c.low_count}, {"p", c.p}};
  if (const auto& w = d.window()) {
    j["window"] = {{"kind", w->kind == dex::RebuildKind::Inflate ? "inflate" : "deflate"},
                   {"p_old", w->p_old},
                   {"p_new", w->p_new},
                   {"phase", w->phase == dex::WindowPhase::Activate ? "activate" : "discard"},
                   {"cursor", w->cursor},
                   {"blocks", w->blocks}};
  }
  json loads = json::object();
  for (dex::NodeId u : m.node_ids()) loads[std::to_string(u)] = m.load(u);
  j["loads"] = loads;
  return j;
}

int run_command(const Settings& settings) {
  const RunConfig cfg = settings.resolve();
  const std::string csv_path = output_path(cfg, cfg.csv, "steps.csv");
  auto csv_file = open_out(csv_path);
  std::ostream& csv = csv_file ? *csv_file : std::cout;
  auto summary_file = open_out(output_path(cfg, cfg.summary, "summary.json"));
  auto ndjson_file = open_out(cfg.ndjson);
  auto trace_file = open_out(cfg.trace);
  auto actions_file = open_out(cfg.actions);
  dex::TraceSink trace(trace_file.get());

  dex::Simulation sim(cfg, trace_file ? &trace : nullptr);
  csv << dex::kCsvHeader << '\n';
  int status = 0;
  try {
    while (auto r = sim.step()) {
      csv << dex::csv_row(*r) << '\n';
      if (ndjson_file) *ndjson_file << dex::ndjson_row(*r) << '\n';
      if (actions_file) *actions_file << dex::to_script_line(sim.last_action()) << '\n';
    }
  } catch (const dex::Error& e) {
    std::cerr << "dex run: " << e.what() << '\n';
    const json snap = snapshot_json(sim);
    if (const std::string path = output_path(cfg, "", "snapshot.json"); !path.empty()) {
      std::ofstream(path) << snap.dump(2) << '\n';
      std::cerr << "state written to " << path << '\n';
    } else {
      std::cerr << snap.dump(2) << '\n';
    }
    status = kExitViolation;
  }
  if (summary_file) *summary_file << summary_json(sim.summary()).dump(2) << '\n';
  return status;
}

int spectra_command(std::uint64_t lo, std::uint64_t hi, const std::string& csv_path) {
  auto file = open_out(csv_path);
  std::ostream& out = file ? *file : std::cout;
  out << "p,lambda2,gap,diameter\n";
  for (std::uint64_t p = std::max<std::uint64_t>(lo, 5); p <= hi; ++p) {
    if (!dex::is_prime(p)) continue;
    const dex::PrimeModulus m(p);
    const double l2 = dex::cached_pcycle_spectrum(m).lambda2;
    std::ostringstream row;
    row.precision(12);
    row << p << ',' << l2 << ',' << 1 - l2 << ',' << dex::cached_diameter(m);
    out << row.str() << '\n';
  }
  return 0;
}

std::vector<std::pair<std::uint64_t, std::string>> read_keys(const std::string& path, std::uint64_t count) {
  std::vector<std::pair<std::uint64_t, std::string>> keys;
  if (path.empty()) {
    for (std::uint64_t k = 0; k < count; ++k) keys.push_back({k, "value-" + std::to_string(k)});
    return keys;
  }
  std::ifstream in(path);
  if (!in) throw dex::ConfigError("cannot open " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::uint64_t key = 0;
    if (!(fields >> key)) continue;
    std::string value;
    if (!(fields >> value)) value = "value-" + std::to_string(key);
    keys.push_back({key, value});
  }
  return keys;
}

int dht_demo_command(const Settings& settings, const std::string& keys_path, std::uint64_t key_count) {
  const RunConfig cfg = settings.resolve();
  auto file = open_out(output_path(cfg, cfg.csv, "dht.csv"));
  std::ostream& out = file ? *file : std::cout;
  dex::Simulation sim(cfg);
  dex::Dht dht(sim.dex());
  const auto keys = read_keys(keys_path, key_count);
  std::map<std::uint64_t, std::string> ledger;

  out << "op,step,key,origin,holder,hops,extra_hops,messages,rounds,found\n";
  auto emit = [&](const char* op, std::uint64_t key, dex::NodeId origin, const dex::DhtOpResult& r, bool found) {
    out << op << ',' << sim.steps_done() << ',' << key << ',' << origin << ',' << r.holder << ',' << r.hops << ','
        << r.extra_hops << ',' << r.messages << ',' << r.rounds << ',' << (found ? 1 : 0) << '\n';
  };
  auto origin_for = [&](std::uint64_t i) {
    const auto ids = sim.dex().mapping().node_ids();
    return ids[i % ids.size()];
  };
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const auto& [k, v] = keys[i];
    ledger[k] = v;
    const dex::NodeId origin = origin_for(i);
    emit("put", k, origin, dht.put(origin, k, v), true);
  }

  std::uint64_t failures = 0;
  std::uint64_t windows = 0;
  bool was_open = false;
  try {
    while (sim.step()) {
      const bool open = sim.dex().window().has_value();
      windows += open && !was_open;
      was_open = open;
      if (open && !keys.empty()) {
        // Probe one key per step while a rebuild is in progress.
        const auto& [k, v] = keys[sim.steps_done() % keys.size()];
        const dex::NodeId origin = origin_for(sim.steps_done());
        const dex::DhtOpResult r = dht.get(origin, k);
        failures += r.value != v;
        emit("get-window", k, origin, r, r.value == v);
      }
    }
  } catch (const dex::Error& e) {
    std::cerr << "dex dht-demo: " << e.what() << '\n';
    return kExitViolation;
  }
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const auto& [k, v] = keys[i];
    const dex::NodeId origin = origin_for(i * 7 + 3);
    const dex::DhtOpResult r = dht.get(origin, k);
    failures += r.value != v;
    emit("get", k, origin, r, r.value == v);
  }
  const auto problems = dht.audit(ledger);
  for (const auto& p : problems) std::cerr << "audit: " << p << '\n';
  std::cerr << "dht-demo: " << keys.size() << " keys, " << sim.steps_done() << " steps, " << windows
            << " staggered windows, " << failures << " failed lookups, " << dht.stats().items_moved
            << " item moves\n";
  return failures == 0 && problems.empty() ? 0 : kExitViolation;
}

int audit_command(const Settings& settings) {
  RunConfig cfg = settings.resolve();
  if (cfg.script.empty()) throw dex::ConfigError("audit needs --script");
  if (settings.flags.at("spectral_every").empty()) cfg.spectral_every = 1;
  if (settings.flags.at("steps").empty()) cfg.steps = UINT64_MAX;
  dex::Simulation sim(cfg);
  try {
    while (sim.step()) {
    }
  } catch (const dex::Error& e) {
    std::cerr << "audit failed: " << e.what() << '\n' << snapshot_json(sim).dump(2) << '\n';
    return kExitViolation;
  }
  std::cout << "audit: " << sim.steps_done() << " steps replayed, all invariants hold\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DEX self-healing expander simulator"};
  app.require_subcommand(1);

  Settings run_settings;
  auto* run = app.add_subcommand("run", "run the step loop and write metrics");
  run_settings.attach(run);

  std::uint64_t lo = 5, hi = 2003;
  std::string spectra_csv;
  auto* spectra = app.add_subcommand("spectra", "spectral table of p-cycles");
  spectra->add_option("--min", lo, "smallest p");
  spectra->add_option("--max", hi, "largest p");
  spectra->add_option("--csv", spectra_csv, "output file (default stdout)");

  Settings dht_settings;
  std::string keys_path;
  std::uint64_t key_count = 100;
  auto* dht = app.add_subcommand("dht-demo", "key-value store under churn");
  dht_settings.attach(dht);
  dht->add_option("--keys", keys_path, "file of `key [value]` lines")->check(CLI::ExistingFile);
  dht->add_option("--key-count", key_count, "generated keys when --keys is absent");

  Settings audit_settings;
  auto* audit = app.add_subcommand("audit", "replay an action script, checking invariants after every step");
  audit_settings.attach(audit);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return run_command(run_settings);
    if (*spectra) return spectra_command(lo, hi, spectra_csv);
    if (*dht) return dht_demo_command(dht_settings, keys_path, key_count);
    if (*audit) return audit_command(audit_settings);
  } catch (const dex::ConfigError& e) {
    std::cerr << "dex: " << e.what() << '\n';
    return kExitUsage;
  } catch (const dex::ParseError& e) {
    std::cerr << "dex: " << e.what() << '\n';
    return kExitUsage;
  } catch (const dex::Error& e) {
    std::cerr << "dex: " << e.what() << '\n';
    return kExitViolation;
  }
  return 0;
}

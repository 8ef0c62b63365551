// Batch front-end: one subcommand per experiment, one scenario file per run.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "relaysel/scenario.hpp"

namespace fs = std::filesystem;
using namespace relaysel;
using io::Json;

namespace {

struct Common {
  std::string scenario;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

// Files are collected first and written only once every computation has
// succeeded, so a failing command leaves nothing behind.
class Outputs {
 public:
  void add(const std::string& name, std::string content) { files_[name] = std::move(content); }
  void add(const std::string& name, const Json& j) { files_[name] = j.dump(2) + "\n"; }

  void commit(const fs::path& dir) const {
    for (const auto& [name, content] : files_) io::atomic_write(dir / name, content);
  }

 private:
  std::map<std::string, std::string> files_;
};

void say(const Common& c, const std::string& msg) {
  if (!c.quiet) std::cout << msg << "\n";
}

Scenario open_scenario(const Common& c) {
  if (c.scenario.empty()) throw UsageError("--scenario is required");
  auto s = load_scenario(c.scenario);
  if (c.seed) s.seeds.front() = *c.seed;
  return s;
}

fs::path out_dir(const Common& c, const Scenario* s) {
  if (!c.out.empty()) return c.out;
  if (s && s->output_dir) return *s->output_dir;
  throw UsageError("no output directory (use --out or the scenario's 'output')");
}

std::vector<double> doubles_or(const Json& sec, const char* key, std::vector<double> fallback) {
  return io::field_or<std::vector<double>>(sec, key, std::move(fallback), key);
}

std::string label_for(const SelectionParams& p) {
  if (p.mode == SelectionMode::vanilla) return "vanilla";
  if (p.mode == SelectionMode::combined) return "alpha" + io::format_double(p.alpha);
  return to_string(p.mode);
}

// Vanilla (optional) followed by combined weighting at each alpha.
std::vector<SelectionParams> alpha_settings(const Scenario& s, const Json& sec,
                                            std::vector<double> default_alphas) {
  std::vector<SelectionParams> out;
  if (io::field_or<bool>(sec, "include_vanilla", true, "include_vanilla")) {
    SelectionParams v = s.selection;
    v.mode = SelectionMode::vanilla;
    out.push_back(v);
  }
  for (double a : doubles_or(sec, "alphas", std::move(default_alphas))) {
    SelectionParams p = s.selection;
    p.mode = SelectionMode::combined;
    p.alpha = a;
    p.validate();
    out.push_back(p);
  }
  return out;
}

std::vector<GeoPoint> targets_of(const Scenario& s, const Json& sec) {
  const auto which = io::field_or<std::string>(sec, "targets", s.centroids.empty() ? "destinations" : "centroids",
                                               "targets");
  if (which == "centroids") {
    if (s.centroids.empty()) throw UsageError("targets: scenario has no centroids");
    return s.centroids.centroids;
  }
  if (which == "destinations") {
    if (s.destinations.empty()) throw UsageError("targets: scenario has no destinations");
    return s.destination_points();
  }
  throw ParseError("targets: expected 'centroids' or 'destinations'");
}

std::vector<ClientSpec> first_clients(const Scenario& s, const Json& sec,
                                      std::optional<std::size_t> default_n = std::nullopt) {
  if (s.clients.empty()) throw UsageError("scenario has no clients");
  const auto n = io::field_or<std::size_t>(sec, "client_count", default_n.value_or(s.clients.size()),
                                           "client_count");
  if (n == 0 || n > s.clients.size()) throw UsageError("client_count out of range");
  return {s.clients.begin(), s.clients.begin() + static_cast<std::ptrdiff_t>(n)};
}

// ---------------------------------------------------------------------------

int cmd_simulate(const Common& c) {
  const auto s = open_scenario(c);
  const auto dir = out_dir(c, &s);
  const auto seed = s.seeds.front();
  auto cfg = s.sim_config(seed);
  if (s.malicious_guard_fraction || s.malicious_exit_fraction) {
    Rng rng(derive_seed(seed, {6}));
    cfg.snapshot = std::make_shared<const NetworkSnapshot>(
        mark_malicious_by_bandwidth(*s.snapshot, s.malicious_guard_fraction.value_or(0.0),
                                    s.malicious_exit_fraction.value_or(0.0), rng, s.marking_order));
  }
  const auto res = run(cfg);
  Json summary = summary_to_json(res.summary);
  summary["seed"] = seed;
  summary["strategy"] = to_string(cfg.strategy);
  summary["n_circuits"] = cfg.pool.n_circuits;
  summary["selection"] = {{"mode", to_string(cfg.selection.mode)},
                          {"alpha", cfg.selection.alpha},
                          {"lambda", cfg.selection.lambda}};
  summary["compromise_rate"] = compromise_rate(std::span<const StreamRecord>(res.records), *cfg.snapshot);
  if (cfg.as_oracle) {
    std::size_t bad = 0;
    for (const auto& r : res.records) bad += r.compromised_as ? 1 : 0;
    summary["as_compromise_rate"] =
        res.records.empty() ? 0.0 : static_cast<double>(bad) / static_cast<double>(res.records.size());
  }
  Outputs out;
  out.add("streams.csv", records_to_csv(res.records));
  out.add("summary.json", summary);
  out.commit(dir);
  say(c, "simulate: " + std::to_string(res.records.size()) + " streams, web median TTFB " +
             io::format_double(res.summary.web.ttfb.median) + " s");
  return 0;
}

int cmd_compare(const Common& c, const std::vector<std::string>& cli_strategies) {
  const auto s = open_scenario(c);
  const auto dir = out_dir(c, &s);
  const auto sec = s.section("compare");
  auto names = cli_strategies;
  if (names.empty()) names = io::field_or<std::vector<std::string>>(sec, "strategies", {}, "compare.strategies");
  if (names.empty()) throw UsageError("compare: no strategies given");
  std::vector<StrategyRun> runs;
  for (const auto& n : names) runs.push_back(parse_strategy_run(n, s.pool.n_circuits));
  const auto rows = compare_strategies(s.sim_config(s.seeds.front()), runs, s.seeds);

  Json table = Json::array();
  for (const auto& r : rows) {
    table.push_back({{"strategy", r.run.label},
                     {"attachment", to_string(r.run.strategy)},
                     {"n_circuits", r.run.n_circuits},
                     {"seeds", r.seeds},
                     {"web_median_ttfb", r.web_ttfb},
                     {"web_median_ttlb", r.web_ttlb},
                     {"web_median_created", r.web_created},
                     {"web_median_used", r.web_used},
                     {"median_of_seeds",
                      {{"web_median_ttfb", r.median_ttfb()},
                       {"web_median_ttlb", r.median_ttlb()},
                       {"web_median_created", r.median_created()},
                       {"web_median_used", r.median_used()}}}});
  }
  Outputs out;
  out.add("compare.csv", compare_to_csv(rows));
  out.add("compare.json", Json{{"schema_version", io::kSchemaVersion}, {"rows", table}});
  out.commit(dir);
  for (const auto& r : rows) {
    say(c, "compare: " + r.run.label + " web median TTFB " + io::format_double(r.median_ttfb()) + " s");
  }
  return 0;
}

int cmd_pathgen(const Common& c) {
  const auto s = open_scenario(c);
  const auto dir = out_dir(c, &s);
  const auto sec = s.section("pathgen");
  const auto settings = alpha_settings(s, sec, {1.0, 0.9, 0.8, 0.7, 0.5, 0.0});
  const auto clients = first_clients(s, sec);
  std::vector<GeoPoint> pts;
  for (const auto& cl : clients) pts.push_back(cl.location);
  const auto targets = targets_of(s, sec);
  const auto paths = io::field_or<std::size_t>(sec, "paths_per_client", 1000, "paths_per_client");

  Outputs out;
  std::string csv = "setting,mode,alpha,lambda,seed,gini,entropy_bits\n";
  Json settings_json = Json::array();
  for (const auto& p : settings) {
    const auto label = label_for(p);
    std::vector<double> ginis, entropies;
    Json per_seed = Json::array();
    for (std::size_t k = 0; k < s.seeds.size(); ++k) {
      auto res = pathgen_experiment(*s.snapshot, p, pts, targets, paths, s.seeds[k]);
      ginis.push_back(*res.report.gini);
      entropies.push_back(*res.report.entropy_bits);
      per_seed.push_back(report_to_json(res.report));
      csv += label + "," + to_string(p.mode) + "," + io::format_double(p.alpha) + "," +
             io::format_double(p.lambda) + "," + std::to_string(s.seeds[k]) + "," +
             io::format_double(ginis.back()) + "," + io::format_double(entropies.back()) + "\n";
      if (k == 0) out.add("census_" + label + ".csv", res.census.to_csv());
    }
    const auto g = run_stats(ginis);
    const auto h = run_stats(entropies);
    csv += label + "," + to_string(p.mode) + "," + io::format_double(p.alpha) + "," +
           io::format_double(p.lambda) + ",mean," + io::format_double(g.mean) + "," +
           io::format_double(h.mean) + "\n";
    settings_json.push_back({{"setting", label},
                             {"mean_gini", g.mean},
                             {"gini_se", g.se},
                             {"mean_entropy_bits", h.mean},
                             {"entropy_se", h.se},
                             {"reports", per_seed}});
    say(c, "pathgen: " + label + " gini " + io::format_double(g.mean) + " entropy " +
               io::format_double(h.mean));
  }
  out.add("pathgen.csv", csv);
  out.add("pathgen.json", Json{{"schema_version", io::kSchemaVersion}, {"settings", settings_json}});
  out.commit(dir);
  return 0;
}

int cmd_mapd(const Common& c) {
  const auto s = open_scenario(c);
  const auto dir = out_dir(c, &s);
  const auto sec = s.section("mapd");
  std::vector<double> grid = doubles_or(sec, "lambdas", {});
  if (grid.empty()) {
    const double step = io::field_or<double>(sec, "lambda_step", 0.1, "lambda_step");
    if (!(step > 0.0 && step <= 1.0)) throw UsageError("mapd: lambda_step must be in (0, 1]");
    const auto n = static_cast<std::size_t>(std::llround(1.0 / step));
    for (std::size_t i = 0; i <= n; ++i) grid.push_back(static_cast<double>(i) / static_cast<double>(n));
  }
  const auto cs = first_clients(s, sec, 1);
  if (s.destinations.empty()) throw UsageError("mapd: scenario has no destinations");
  const auto dests = s.destination_points();

  std::vector<double> dev(grid.size(), 0.0);
  for (const auto& cl : cs) {
    const auto rep = mapd_eval(cl.location, dests, *s.snapshot, grid, s.selection);
    for (std::size_t i = 0; i < grid.size(); ++i) dev[i] += rep.deviations[i] / static_cast<double>(cs.size());
  }
  MapdReport rep{grid, dev};
  std::string csv = "lambda,deviation\n";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    csv += io::format_double(grid[i]) + "," + io::format_double(dev[i]) + "\n";
  }
  Outputs out;
  out.add("mapd.csv", csv);
  out.add("mapd.json", Json{{"schema_version", io::kSchemaVersion},
                            {"alpha", s.selection.alpha},
                            {"clients", cs.size()},
                            {"destinations", dests.size()},
                            {"lambdas", grid},
                            {"deviations", dev},
                            {"argmin_lambda", grid[rep.argmin()]},
                            {"min_deviation", dev[rep.argmin()]}});
  out.commit(dir);
  say(c, "mapd: argmin lambda " + io::format_double(grid[rep.argmin()]) + " deviation " +
             io::format_double(dev[rep.argmin()]));
  return 0;
}

int cmd_attack(const Common& c) {
  const auto s = open_scenario(c);
  const auto dir = out_dir(c, &s);
  const auto sec = s.section("attack");
  AttackConfig cfg;
  cfg.kind = parse_attack_kind(io::field_or<std::string>(sec, "kind", "targeted_client", "attack.kind"));
  cfg.bandwidth_fraction = io::field_or<double>(sec, "bandwidth_fraction", cfg.bandwidth_fraction, "attack");
  cfg.paths = io::field_or<std::size_t>(sec, "paths", cfg.paths, "attack");
  cfg.runs = io::field_or<std::size_t>(sec, "runs", cfg.runs, "attack");
  cfg.relay_bw_min = io::field_or<double>(sec, "relay_bw_min", cfg.relay_bw_min, "attack");
  cfg.relay_bw_max = io::field_or<double>(sec, "relay_bw_max", cfg.relay_bw_max, "attack");
  const auto settings = alpha_settings(s, sec, {0.5, 0.8, 0.9});
  const auto clients = s.client_points();
  if (clients.empty()) throw UsageError("attack: scenario has no clients");
  const auto targets = targets_of(s, sec);

  std::string csv = "setting,run,compromise_rate\n";
  Json reports = Json::array();
  for (const auto& p : settings) {
    const auto label = label_for(p);
    auto rep = targeted_attack(*s.snapshot, p, cfg, clients, targets, s.seeds.front());
    for (std::size_t r = 0; r < rep.per_run.size(); ++r) {
      csv += label + "," + std::to_string(r) + "," + io::format_double(rep.per_run[r]) + "\n";
    }
    Json j = report_to_json(rep);
    j["setting"] = label;
    reports.push_back(j);
    say(c, "attack: " + label + " compromise " + io::format_double(*rep.compromise_rate) + " +- " +
               io::format_double(*rep.compromise_se));
  }
  Outputs out;
  out.add("attack_runs.csv", csv);
  out.add("attack.json", Json{{"schema_version", io::kSchemaVersion}, {"reports", reports}});
  out.commit(dir);
  return 0;
}

int cmd_nearby(const Common& c) {
  const auto s = open_scenario(c);
  const auto dir = out_dir(c, &s);
  const auto sec = s.section("nearby_guards");
  NearbyGuardConfig cfg;
  const std::string w = "nearby_guards";
  cfg.months = io::field_or<double>(sec, "months", cfg.months, w);
  cfg.low_bw = io::field_or<double>(sec, "low_bw", cfg.low_bw, w);
  cfg.high_bw = io::field_or<double>(sec, "high_bw", cfg.high_bw, w);
  cfg.rotation_min_months = io::field_or<double>(sec, "rotation_min_months", cfg.rotation_min_months, w);
  cfg.rotation_max_months = io::field_or<double>(sec, "rotation_max_months", cfg.rotation_max_months, w);
  cfg.guard_churn_per_month = io::field_or<double>(sec, "guard_churn_per_month", cfg.guard_churn_per_month, w);
  cfg.streams_per_hour = io::field_or<double>(sec, "streams_per_hour", cfg.streams_per_hour, w);
  const auto alphas = doubles_or(sec, "alphas", {0.0, 0.5, 1.0});
  const auto advs = io::field_or<std::vector<std::string>>(sec, "adversaries", {"low", "high"}, w);
  const auto clients = first_clients(s, sec);

  std::vector<NearbyResult> results;
  Json reports = Json::array();
  for (const auto& a : advs) {
    for (double alpha : alphas) {
      auto r = nearby_guard_experiment(*s.snapshot, alpha, parse_nearby_adversary(a), clients, cfg,
                                       s.seeds.front());
      Json j = report_to_json(r.report);
      j["median_ttfc_s"] = std::isfinite(r.median_ttfc_s) ? Json(r.median_ttfc_s) : Json("inf");
      reports.push_back(j);
      say(c, "nearby_guards: " + a + " alpha " + io::format_double(alpha) + " compromised streams " +
                 io::format_double(r.compromised_stream_fraction));
      results.push_back(std::move(r));
    }
  }
  Outputs out;
  out.add("nearby.csv", nearby_to_csv(results));
  out.add("nearby.json", Json{{"schema_version", io::kSchemaVersion}, {"reports", reports}});
  out.commit(dir);
  return 0;
}

int cmd_cluster(const Common& c, const std::string& dest_file, std::optional<std::size_t> k_flag) {
  std::vector<GeoPoint> pts;
  std::optional<Scenario> s;
  std::size_t k = 0;
  std::uint64_t seed = c.seed.value_or(4);
  if (!dest_file.empty()) {
    if (!fs::is_regular_file(dest_file)) throw IoError("destinations file not found: " + dest_file);
    for (const auto& d : load_destinations(dest_file)) pts.push_back(d.location);
    if (!k_flag) throw UsageError("cluster: --k is required with --destinations");
    k = *k_flag;
  } else {
    s = open_scenario(c);
    pts = s->destination_points();
    const auto sec = s->section("centroids");
    k = k_flag.value_or(io::field_or<std::size_t>(sec, "k", 4, "centroids"));
    if (!c.seed) seed = io::field_or<std::uint64_t>(sec, "seed", 4, "centroids");
  }
  const auto dir = out_dir(c, s ? &*s : nullptr);
  const auto cs = kmeans(pts, k, seed);
  Outputs out;
  out.add("centroids.json", centroids_to_json(cs, k, seed));
  out.commit(dir);
  say(c, "cluster: " + std::to_string(cs.k()) + " centroids from " + std::to_string(pts.size()) + " points");
  return 0;
}

struct GenArgs {
  std::size_t guards = 49, middles = 119, exits = 52;
  std::string bw_kind = "log_uniform";
  double bw_min = 1e6, bw_max = 100e6;
  std::string regions = "relay_like";
  std::size_t clients = 0, destinations = 0;
  double bulk_fraction = 0.1;
};

int cmd_gen_network(const Common& c, const GenArgs& g) {
  const auto dir = out_dir(c, nullptr);
  const auto seed = c.seed.value_or(1);
  const auto bw = scenario_detail::read_bandwidth(
      Json{{"kind", g.bw_kind}, {"min", g.bw_min}, {"max", g.bw_max}, {"value", g.bw_min}}, "gen_network");
  const auto snap = synth_network(g.guards, g.middles, g.exits, bw,
                                  scenario_detail::region_preset(g.regions), seed);
  Outputs out;
  out.add("snapshot.jsonl", snapshot_to_jsonl(snap));
  if (g.clients > 0) {
    out.add("clients.jsonl", clients_to_jsonl(synth_clients(g.clients, g.bulk_fraction, regions::client_like(),
                                                            derive_seed(seed, {7, 1}))));
  }
  if (g.destinations > 0) {
    out.add("destinations.jsonl",
            destinations_to_jsonl(synth_destinations(g.destinations, regions::destination_like(),
                                                     derive_seed(seed, {7, 2}))));
  }
  out.commit(dir);
  say(c, "gen_network: " + std::to_string(snap.size()) + " relays");
  return 0;
}

void print_error(const std::string& code, const std::string& message) {
  std::cerr << Json{{"error", code}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relay selection and circuit scheduling experiments"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub, bool needs_scenario) {
    auto* opt = sub->add_option("--scenario", common.scenario, "Scenario JSON file");
    if (needs_scenario) opt->required();
    sub->add_option("--out", common.out, "Output directory");
    sub->add_option("--seed", common.seed, "Overrides the first scenario seed");
    sub->add_flag("--quiet", common.quiet, "No progress output");
  };

  auto* simulate = app.add_subcommand("simulate", "Run the circuit simulator");
  add_common(simulate, true);
  std::vector<std::string> strategies;
  auto* compare = app.add_subcommand("compare", "Compare attachment strategies across seeds");
  add_common(compare, true);
  compare->add_option("--strategies", strategies, "strategy[:N] entries")->delimiter(',');
  auto* pathgen = app.add_subcommand("pathgen", "Static path generation, Gini and entropy");
  add_common(pathgen, true);
  auto* mapd = app.add_subcommand("mapd", "Greedy versus optimal path length over lambda");
  add_common(mapd, true);
  auto* attack = app.add_subcommand("attack", "Targeted relay-level attacks");
  add_common(attack, true);
  auto* nearby = app.add_subcommand("nearby_guards", "Nearby guards against a guard adversary");
  add_common(nearby, true);

  auto* cluster = app.add_subcommand("cluster", "k-means over destination locations");
  add_common(cluster, false);
  std::string dest_file;
  std::optional<std::size_t> k;
  cluster->add_option("--destinations", dest_file, "Destinations JSONL file");
  cluster->add_option("--k", k, "Number of centroids");

  auto* gen = app.add_subcommand("gen_network", "Write a synthetic snapshot");
  add_common(gen, false);
  GenArgs g;
  gen->add_option("--guards", g.guards);
  gen->add_option("--middles", g.middles);
  gen->add_option("--exits", g.exits);
  gen->add_option("--bw-kind", g.bw_kind)->check(CLI::IsMember({"fixed", "uniform", "log_uniform"}));
  gen->add_option("--bw-min", g.bw_min, "bytes/s");
  gen->add_option("--bw-max", g.bw_max, "bytes/s");
  gen->add_option("--regions", g.regions);
  gen->add_option("--clients", g.clients);
  gen->add_option("--bulk-fraction", g.bulk_fraction);
  gen->add_option("--destinations", g.destinations);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    if (*simulate) return cmd_simulate(common);
    if (*compare) return cmd_compare(common, strategies);
    if (*pathgen) return cmd_pathgen(common);
    if (*mapd) return cmd_mapd(common);
    if (*attack) return cmd_attack(common);
    if (*nearby) return cmd_nearby(common);
    if (*cluster) return cmd_cluster(common, dest_file, k);
    if (*gen) return cmd_gen_network(common, g);
  } catch (const Error& e) {
    print_error(e.code(), e.what());
    return e.code() == "usage" ? 2 : 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 2;
}

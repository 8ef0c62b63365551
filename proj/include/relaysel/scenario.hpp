#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "relaysel/as_oracle.hpp"
#include "relaysel/circuit.hpp"
#include "relaysel/error.hpp"
#include "relaysel/geo.hpp"
#include "relaysel/io.hpp"
#include "relaysel/network.hpp"
#include "relaysel/security.hpp"
#include "relaysel/selection.hpp"
#include "relaysel/simulator.hpp"

namespace relaysel {

// One JSON document describing one reproducible experiment. Input files are
// resolved relative to the document's directory; synthetic inputs carry their
// own seed so changing the run seeds leaves the network alone.
struct Scenario {
  std::filesystem::path base_dir;
  std::vector<std::uint64_t> seeds;
  std::optional<std::filesystem::path> output_dir;

  std::shared_ptr<const NetworkSnapshot> snapshot;
  std::vector<ClientSpec> clients;
  std::vector<DestinationSpec> destinations;
  CentroidSet centroids;

  SelectionParams selection;
  PoolConfig pool;
  AttachmentStrategy strategy = AttachmentStrategy::vanilla;
  SimConfig sim;  // snapshot/clients/... filled in by sim_config()

  std::optional<double> malicious_guard_fraction;
  std::optional<double> malicious_exit_fraction;
  MarkingOrder marking_order = MarkingOrder::uniform;

  io::Json raw;  // the document, for per-command sections

  io::Json section(const char* name) const {
    return raw.contains(name) ? raw.at(name) : io::Json::object();
  }

  SimConfig sim_config(std::uint64_t seed) const {
    SimConfig c = sim;
    c.snapshot = snapshot;
    c.clients = clients;
    c.destinations = destinations;
    c.centroids = centroids;
    c.selection = selection;
    c.pool = pool;
    c.strategy = strategy;
    c.seed = seed;
    return c;
  }

  std::vector<GeoPoint> client_points() const {
    std::vector<GeoPoint> out;
    for (const auto& c : clients) out.push_back(c.location);
    return out;
  }

  std::vector<GeoPoint> destination_points() const {
    std::vector<GeoPoint> out;
    for (const auto& d : destinations) out.push_back(d.location);
    return out;
  }
};

namespace scenario_detail {

using io::Json;

inline std::vector<Region> region_preset(const std::string& name) {
  if (name == "globe") return regions::whole_globe();
  if (name == "relay_like") return regions::relay_like();
  if (name == "client_like") return regions::client_like();
  if (name == "destination_like") return regions::destination_like();
  throw ParseError("unknown region preset '" + name + "'");
}

inline BandwidthSpec read_bandwidth(const Json& j, const std::string& where) {
  if (!j.is_object()) throw ParseError(where + ": bandwidth must be an object");
  const auto kind = io::field_or<std::string>(j, "kind", "fixed", where);
  const double lo = io::field_or<double>(j, "min", 10e6, where);
  const double hi = io::field_or<double>(j, "max", lo, where);
  BandwidthSpec b;
  if (kind == "fixed") {
    b = BandwidthSpec::fixed(io::field_or<double>(j, "value", lo, where));
  } else if (kind == "uniform") {
    b = BandwidthSpec::uniform(lo, hi);
  } else if (kind == "log_uniform") {
    b = BandwidthSpec::log_uniform(lo, hi);
  } else {
    throw ParseError(where + ": unknown bandwidth kind '" + kind + "'");
  }
  b.validate();
  return b;
}

inline SelectionParams read_selection(const Json& j) {
  const std::string w = "selection";
  SelectionParams p;
  p.mode = parse_selection_mode(io::field_or<std::string>(j, "mode", "combined", w));
  p.alpha = io::field_or<double>(j, "alpha", p.alpha, w);
  p.lambda = io::field_or<double>(j, "lambda", p.lambda, w);
  const auto gd = io::field_or<std::string>(j, "guard_distance", "anchored", w);
  if (gd == "anchored") {
    p.guard_distance = GuardDistance::anchored;
  } else if (gd == "client_only") {
    p.guard_distance = GuardDistance::client_only;
  } else {
    throw ParseError(w + ": unknown guard_distance '" + gd + "'");
  }
  if (j.contains("tuning")) {
    const auto& t = j.at("tuning");
    p.tuning.s = io::field_or<double>(t, "s", p.tuning.s, w + ".tuning");
    p.tuning.p = io::field_or<double>(t, "p", p.tuning.p, w + ".tuning");
    p.tuning.g_min = io::field_or<double>(t, "g_min", p.tuning.g_min, w + ".tuning");
    p.tuning.s_max = io::field_or<double>(t, "s_max", p.tuning.s_max, w + ".tuning");
  }
  p.validate();
  return p;
}

inline PoolConfig read_pool(const Json& j) {
  const std::string w = "pool";
  PoolConfig p;
  p.n_circuits = io::field_or<std::size_t>(j, "n_circuits", p.n_circuits, w);
  p.idle_kill_s = io::field_or<double>(j, "idle_kill_s", p.idle_kill_s, w);
  p.dirty_age_s = io::field_or<double>(j, "dirty_age_s", p.dirty_age_s, w);
  p.tick_s = io::field_or<double>(j, "tick_s", p.tick_s, w);
  p.car_threshold_s = io::field_or<double>(j, "car_threshold_s", p.car_threshold_s, w);
  p.prebuild_centroids = io::field_or<std::size_t>(j, "prebuild_centroids", p.prebuild_centroids, w);
  p.validate();
  return p;
}

inline void read_sim(const Json& j, SimConfig& s) {
  const std::string w = "sim";
  s.duration_s = io::field_or<double>(j, "duration_s", s.duration_s, w);
  s.warmup_s = io::field_or<double>(j, "warmup_s", s.warmup_s, w);
  s.destination_known = io::field_or<bool>(j, "destination_known", s.destination_known, w);
  s.measure_on_build = io::field_or<bool>(j, "measure_on_build", s.measure_on_build, w);
  s.build_rtt_factor = io::field_or<double>(j, "build_rtt_factor", s.build_rtt_factor, w);
  s.recent_target_window_s = io::field_or<double>(j, "recent_target_window_s", s.recent_target_window_s, w);
  if (j.contains("latency")) {
    const auto& l = j.at("latency");
    s.latency.propagation_s_per_km =
        io::field_or<double>(l, "propagation_s_per_km", s.latency.propagation_s_per_km, w + ".latency");
    s.latency.base_hop_delay_s =
        io::field_or<double>(l, "base_hop_delay_s", s.latency.base_hop_delay_s, w + ".latency");
    s.latency.congestion_coeff =
        io::field_or<double>(l, "congestion_coeff", s.latency.congestion_coeff, w + ".latency");
  }
  if (j.contains("workload")) {
    const auto& l = j.at("workload");
    s.workload.web_bytes = io::field_or<double>(l, "web_bytes", s.workload.web_bytes, w + ".workload");
    s.workload.bulk_bytes = io::field_or<double>(l, "bulk_bytes", s.workload.bulk_bytes, w + ".workload");
    s.workload.think_min_s = io::field_or<double>(l, "think_min_s", s.workload.think_min_s, w + ".workload");
    s.workload.think_max_s = io::field_or<double>(l, "think_max_s", s.workload.think_max_s, w + ".workload");
  }
  if (j.contains("as_oracle")) {
    const auto& o = j.at("as_oracle");
    s.as_oracle = std::make_shared<GridAsOracle>(io::field_or<double>(o, "cell_deg", 10.0, w + ".as_oracle"),
                                                 io::field_or<double>(o, "step_km", 50.0, w + ".as_oracle"));
  }
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

inline void require_file(const std::filesystem::path& p, const char* what) {
  if (!std::filesystem::is_regular_file(p)) {
    throw IoError(std::string(what) + " file not found: " + p.string());
  }
}

}  // namespace scenario_detail

inline CentroidSet load_centroids(const std::filesystem::path& path) {
  const auto j = io::read_json(path);
  const std::string w = path.string();
  CentroidSet c;
  for (const auto& p : io::field<io::Json>(j, "centroids", w)) {
    c.centroids.push_back(GeoPoint(io::field<double>(p, "lat", w), io::field<double>(p, "lon", w)));
  }
  if (c.empty()) throw ParseError(w + ": no centroids");
  return c;
}

inline io::Json centroids_to_json(const CentroidSet& c, std::size_t k, std::uint64_t seed) {
  io::Json arr = io::Json::array();
  for (const auto& p : c.centroids) arr.push_back({{"lat", p.lat()}, {"lon", p.lon()}});
  return io::Json{{"schema_version", io::kSchemaVersion}, {"k", k}, {"seed", seed}, {"centroids", arr}};
}

inline Scenario parse_scenario(const io::Json& doc, const std::filesystem::path& base_dir) {
  using namespace scenario_detail;
  if (!doc.is_object()) throw ParseError("scenario: expected a JSON object");
  Scenario s;
  s.raw = doc;
  s.base_dir = base_dir;

  s.seeds = io::field_or<std::vector<std::uint64_t>>(doc, "seeds", {}, "scenario");
  if (s.seeds.empty()) throw ParseError("scenario: 'seeds' must be a nonempty list");
  if (doc.contains("output")) s.output_dir = resolve(base_dir, io::field<std::string>(doc, "output", "scenario"));

  // network
  const auto net = io::field<Json>(doc, "network", "scenario");
  if (net.contains("snapshot")) {
    const auto p = resolve(base_dir, io::field<std::string>(net, "snapshot", "network"));
    require_file(p, "snapshot");
    s.snapshot = std::make_shared<const NetworkSnapshot>(load_snapshot(p));
  } else if (net.contains("synthetic")) {
    const auto& g = net.at("synthetic");
    const std::string w = "network.synthetic";
    s.snapshot = std::make_shared<const NetworkSnapshot>(synth_network(
        io::field<std::size_t>(g, "guards", w), io::field<std::size_t>(g, "middles", w),
        io::field<std::size_t>(g, "exits", w),
        g.contains("bandwidth") ? read_bandwidth(g.at("bandwidth"), w + ".bandwidth") : BandwidthSpec{},
        region_preset(io::field_or<std::string>(g, "regions", "relay_like", w)),
        io::field_or<std::uint64_t>(g, "seed", 1, w)));
  } else {
    throw ParseError("network: need 'snapshot' or 'synthetic'");
  }
  if (net.contains("sample_fraction")) {
    s.snapshot = std::make_shared<const NetworkSnapshot>(
        sample_scaled(*s.snapshot, io::field<double>(net, "sample_fraction", "network"),
                      io::field_or<std::uint64_t>(net, "sample_seed", 1, "network")));
  }

  // clients and destinations
  auto endpoints = [&](const char* key, auto load, auto synth) {
    if (!doc.contains(key)) return decltype(load(std::filesystem::path{})){};
    const auto& j = doc.at(key);
    const std::string w = key;
    if (j.contains("file")) {
      const auto p = resolve(base_dir, io::field<std::string>(j, "file", w));
      require_file(p, key);
      return load(p);
    }
    if (j.contains("synthetic")) return synth(j.at("synthetic"), w + ".synthetic");
    throw ParseError(w + ": need 'file' or 'synthetic'");
  };
  s.clients = endpoints(
      "clients", [](const std::filesystem::path& p) { return load_clients(p); },
      [](const Json& g, const std::string& w) {
        return synth_clients(io::field<std::size_t>(g, "count", w),
                             io::field_or<double>(g, "bulk_fraction", 0.1, w),
                             region_preset(io::field_or<std::string>(g, "regions", "client_like", w)),
                             io::field_or<std::uint64_t>(g, "seed", 2, w));
      });
  s.destinations = endpoints(
      "destinations", [](const std::filesystem::path& p) { return load_destinations(p); },
      [](const Json& g, const std::string& w) {
        return synth_destinations(io::field<std::size_t>(g, "count", w),
                                  region_preset(io::field_or<std::string>(g, "regions", "destination_like", w)),
                                  io::field_or<std::uint64_t>(g, "seed", 3, w));
      });

  // target centroids: explicit file, or k-means over the destinations
  if (doc.contains("centroids")) {
    const auto& c = doc.at("centroids");
    if (c.contains("file")) {
      const auto p = resolve(base_dir, io::field<std::string>(c, "file", "centroids"));
      require_file(p, "centroids");
      s.centroids = load_centroids(p);
    } else {
      const auto k = io::field<std::size_t>(c, "k", "centroids");
      if (s.destinations.empty()) throw ParseError("centroids: k-means needs destinations");
      const auto pts = s.destination_points();
      s.centroids = kmeans(pts, k, io::field_or<std::uint64_t>(c, "seed", 4, "centroids"));
    }
  }

  s.selection = read_selection(doc.contains("selection") ? doc.at("selection") : Json::object());
  s.pool = read_pool(doc.contains("pool") ? doc.at("pool") : Json::object());
  s.strategy = parse_strategy(io::field_or<std::string>(doc, "strategy", "vanilla", "scenario"));
  read_sim(doc.contains("sim") ? doc.at("sim") : Json::object(), s.sim);

  if (doc.contains("malicious")) {
    const auto& m = doc.at("malicious");
    s.malicious_guard_fraction = io::field_or<double>(m, "guard_fraction", 0.0, "malicious");
    s.malicious_exit_fraction = io::field_or<double>(m, "exit_fraction", 0.0, "malicious");
    const auto order = io::field_or<std::string>(m, "order", "uniform", "malicious");
    if (order == "uniform") {
      s.marking_order = MarkingOrder::uniform;
    } else if (order == "bandwidth_weighted") {
      s.marking_order = MarkingOrder::bandwidth_weighted;
    } else {
      throw ParseError("malicious: unknown order '" + order + "'");
    }
  }
  return s;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  scenario_detail::require_file(path, "scenario");
  return parse_scenario(io::read_json(path), path.parent_path());
}

}  // namespace relaysel

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "relaysel/as_oracle.hpp"
#include "relaysel/circuit.hpp"
#include "relaysel/error.hpp"
#include "relaysel/geo.hpp"
#include "relaysel/io.hpp"
#include "relaysel/network.hpp"
#include "relaysel/rng.hpp"
#include "relaysel/selection.hpp"

namespace relaysel {

// Delay model. One-way leg delay is propagation_s_per_km * km +
// base_hop_delay_s; each relay adds a queueing delay of
// congestion_coeff * active_streams / (bandwidth in MB/s).
struct LatencyModel {
  double propagation_s_per_km = 1.0e-5;
  double base_hop_delay_s = 0.01;
  double congestion_coeff = 0.02;
};

struct WorkloadParams {
  double web_bytes = 320.0 * 1024.0;
  double bulk_bytes = 5.0 * 1024.0 * 1024.0;
  double think_min_s = 1.0;
  double think_max_s = 20.0;
};

struct SimConfig {
  std::shared_ptr<const NetworkSnapshot> snapshot;
  std::vector<ClientSpec> clients;
  std::vector<DestinationSpec> destinations;
  CentroidSet centroids;
  SelectionParams selection;
  PoolConfig pool;
  AttachmentStrategy strategy = AttachmentStrategy::vanilla;
  double duration_s = 3600.0;
  double warmup_s = 1200.0;
  std::uint64_t seed = 1;
  LatencyModel latency;
  WorkloadParams workload;
  bool destination_known = true;   // length metric uses the real destination
  bool measure_on_build = true;    // circuit handshake yields an RTT sample
  double build_rtt_factor = 1.5;   // circuit setup cost in circuit RTTs
  double recent_target_window_s = 3600.0;
  std::shared_ptr<const AsPathOracle> as_oracle;

  // Pools are keyed by target centroid only when relay choice is geographic.
  bool targets_centroids() const { return !centroids.empty() && selection.uses_geography(); }

  void validate() const {
    if (!snapshot) throw UsageError("sim: no snapshot");
    if (!clients.empty() && destinations.empty()) throw UsageError("sim: no destinations");
    if (!(duration_s > warmup_s && warmup_s >= 0.0)) throw UsageError("sim: need duration > warmup >= 0");
    const auto& l = latency;
    if (!(l.propagation_s_per_km >= 0.0 && l.base_hop_delay_s >= 0.0 && l.congestion_coeff >= 0.0)) {
      throw UsageError("sim: latency parameters must be >= 0");
    }
    const auto& w = workload;
    if (!(w.web_bytes > 0.0 && w.bulk_bytes > 0.0 && w.think_min_s >= 0.0 &&
          w.think_max_s >= w.think_min_s)) {
      throw UsageError("sim: workload parameters must be positive");
    }
    if (!(build_rtt_factor >= 0.0)) throw UsageError("sim: build_rtt_factor must be >= 0");
    selection.validate();
    pool.validate();
    if (selection.uses_geography() && centroids.empty()) {
      throw UsageError("sim: geographic relay selection needs target centroids");
    }
  }
};

struct StreamRecord {
  std::uint64_t stream_id = 0;
  std::string client_id;
  CircuitId circuit_id = 0;
  std::string guard, middle, exit;
  double t_request = 0.0;
  double t_first_byte = 0.0;
  double t_last_byte = 0.0;
  double bytes = 0.0;
  bool compromised_relay = false;
  bool compromised_as = false;
  // not part of the CSV
  std::size_t client_index = 0;
  std::size_t destination_index = 0;
  Workload workload = Workload::web;
  bool on_demand = false;
};

struct LatencyStats {
  std::size_t count = 0;
  double median = 0.0, p10 = 0.0, p25 = 0.0, p75 = 0.0, p90 = 0.0, min = 0.0, max = 0.0;
};

// Linear-interpolated quantile of an unsorted sample.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

inline LatencyStats latency_stats(const std::vector<double>& v) {
  LatencyStats s;
  s.count = v.size();
  if (v.empty()) return s;
  s.median = quantile(v, 0.5);
  s.p10 = quantile(v, 0.1);
  s.p25 = quantile(v, 0.25);
  s.p75 = quantile(v, 0.75);
  s.p90 = quantile(v, 0.9);
  s.min = *std::min_element(v.begin(), v.end());
  s.max = *std::max_element(v.begin(), v.end());
  return s;
}

struct WorkloadSummary {
  LatencyStats ttfb;
  LatencyStats ttlb;
};

struct RunSummary {
  WorkloadSummary web;
  WorkloadSummary bulk;
  std::vector<std::string> client_ids;
  std::vector<Workload> client_workloads;
  std::vector<std::size_t> circuits_created;  // per client
  std::vector<std::size_t> circuits_used;     // per client
  std::size_t streams = 0;                    // after warmup
  std::size_t on_demand_builds = 0;

  double median_created(Workload w) const { return median_of(circuits_created, w); }
  double median_used(Workload w) const { return median_of(circuits_used, w); }

 private:
  double median_of(const std::vector<std::size_t>& v, Workload w) const {
    std::vector<double> xs;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (client_workloads[i] == w) xs.push_back(static_cast<double>(v[i]));
    }
    return median(std::move(xs));
  }
};

struct RunResult {
  std::vector<StreamRecord> records;
  RunSummary summary;
};

namespace sim_detail {

enum class EventKind { tick, request, complete };

struct Event {
  double t;
  std::uint64_t seq;
  EventKind kind;
  std::size_t subject;  // client index or stream index

  bool operator>(const Event& o) const { return t > o.t || (t == o.t && seq > o.seq); }
};

struct ClientState {
  Rng rng{0};
  CircuitPool pool;
  RelayIndex guard = 0;
  std::map<TargetClass, double> last_used;  // target class -> last request time
};

struct ActiveStream {
  std::size_t client;
  CircuitId circuit;
  PathTriple path;
};

class Engine {
 public:
  explicit Engine(const SimConfig& cfg) : cfg_(cfg), snap_(*cfg.snapshot) {
    relay_load_.assign(snap_.size(), 0);
  }

  RunResult run() {
    clients_.resize(cfg_.clients.size());
    for (std::size_t i = 0; i < clients_.size(); ++i) {
      auto& st = clients_[i];
      st.rng = Rng(derive_seed(cfg_.seed, {1, i}));
      st.guard = select_guard(cfg_.clients[i].location, snap_, cfg_.selection, cfg_.centroids, st.rng);
      st.last_used[default_target(i)] = 0.0;
      push(st.rng.uniform(0.0, cfg_.workload.think_max_s), EventKind::request, i);
    }
    if (!clients_.empty()) push(0.0, EventKind::tick, 0);

    while (!queue_.empty()) {
      const Event ev = queue_.top();
      queue_.pop();
      if (ev.t < now_) throw InvariantError("sim: event time went backwards");
      now_ = ev.t;
      switch (ev.kind) {
        case EventKind::tick: on_tick(); break;
        case EventKind::request: on_request(ev.subject); break;
        case EventKind::complete: on_complete(ev.subject); break;
      }
    }
    RunSummary summary = summarize();
    return {std::move(records_), std::move(summary)};
  }

 private:
  void push(double t, EventKind kind, std::size_t subject) {
    queue_.push(Event{t, seq_++, kind, subject});
  }

  TargetClass default_target(std::size_t client) const {
    if (!cfg_.targets_centroids()) return std::nullopt;
    return closest_centroid(cfg_.clients[client].location, cfg_.centroids);
  }

  double relay_bandwidth(RelayIndex r, Position p) const {
    return std::max(snap_.relay(r).bandwidth(p), 1.0);
  }

  double queue_delay(RelayIndex r, Position p) const {
    return cfg_.latency.congestion_coeff * static_cast<double>(relay_load_[r]) /
           (relay_bandwidth(r, p) / 1e6);
  }

  double leg(const GeoPoint& a, const GeoPoint& b) const {
    return cfg_.latency.propagation_s_per_km * great_circle_km(a, b) + cfg_.latency.base_hop_delay_s;
  }

  // Round trip client <-> exit under the current load.
  double circuit_rtt(std::size_t client, const PathTriple& p) const {
    const auto& c = cfg_.clients[client].location;
    const auto& g = snap_.relay(p.entry).location;
    const auto& m = snap_.relay(p.middle).location;
    const auto& e = snap_.relay(p.exit).location;
    const double one_way = leg(c, g) + leg(g, m) + leg(m, e) + queue_delay(p.entry, Position::guard) +
                           queue_delay(p.middle, Position::middle) + queue_delay(p.exit, Position::exit);
    return 2.0 * one_way;
  }

  // Round trip client <-> destination.
  double stream_rtt(std::size_t client, const PathTriple& p, const GeoPoint& dest) const {
    return circuit_rtt(client, p) + 2.0 * leg(snap_.relay(p.exit).location, dest);
  }

  GeoPoint target_location(std::size_t client, const TargetClass& t) const {
    if (t) return cfg_.centroids[*t];
    if (!cfg_.centroids.empty()) return cfg_.centroids[closest_centroid(cfg_.clients[client].location, cfg_.centroids)];
    return cfg_.clients[client].location;
  }

  Circuit make_circuit(std::size_t client, const TargetClass& target, const GeoPoint& toward) {
    auto& st = clients_[client];
    Circuit c;
    c.path = build_path(cfg_.clients[client].location, toward, snap_, cfg_.selection, st.guard, st.rng);
    c.created_at = now_;
    c.target_centroid = target;
    const double rtt = circuit_rtt(client, c.path);
    c.ready_at = now_ + cfg_.build_rtt_factor * rtt;
    if (cfg_.measure_on_build && rtt > 0.0) record_rtt(c, rtt);
    c.length_km = path_length_km(cfg_.clients[client].location, snap_.relay(c.path.entry).location,
                                 snap_.relay(c.path.middle).location,
                                 snap_.relay(c.path.exit).location, toward);
    return c;
  }

  void on_tick() {
    for (std::size_t i = 0; i < clients_.size(); ++i) {
      auto& st = clients_[i];
      std::vector<TargetClass> recent;
      for (const auto& [t, when] : st.last_used) {
        if (now_ - when <= cfg_.recent_target_window_s) recent.push_back(t);
      }
      pool_tick(st.pool, now_, recent, cfg_.pool, [&](const TargetClass& t) {
        return make_circuit(i, t, target_location(i, t));
      });
    }
    const double next = now_ + cfg_.pool.tick_s;
    if (next < cfg_.duration_s) push(next, EventKind::tick, 0);
  }

  void on_request(std::size_t client) {
    auto& st = clients_[client];
    const auto& spec = cfg_.clients[client];
    const std::size_t dest_idx = st.rng.index(cfg_.destinations.size());
    const GeoPoint dest = cfg_.destinations[dest_idx].location;
    const TargetClass target =
        cfg_.targets_centroids() ? TargetClass{closest_centroid(dest, cfg_.centroids)} : std::nullopt;
    st.last_used[target] = now_;

    auto candidates = st.pool.attachable(now_, target);
    const GeoPoint length_end = cfg_.destination_known ? dest : target_location(client, target);
    for (auto& c : candidates) {
      c.length_km = path_length_km(spec.location, snap_.relay(c.path.entry).location,
                                   snap_.relay(c.path.middle).location,
                                   snap_.relay(c.path.exit).location, length_end);
    }
    std::optional<CircuitId> chosen;
    if (!candidates.empty()) chosen = attach_stream(candidates, cfg_.strategy, cfg_.pool, st.rng);

    double setup = 0.0;
    Circuit* circ = nullptr;
    if (chosen) {
      circ = st.pool.find(*chosen);
    } else {
      circ = &st.pool.add(make_circuit(client, target, dest));
      setup = circ->ready_at - now_;
      circ->ready_at = now_;
      ++on_demand_;
    }
    st.pool.mark_attached(*circ, now_);
    const PathTriple path = circ->path;
    const CircuitId cid = circ->id;

    for (auto r : {path.entry, path.middle, path.exit}) ++relay_load_[r];
    const double ttfb = now_ + setup + stream_rtt(client, path, dest);
    const double rate = std::min({relay_bandwidth(path.entry, Position::guard) / relay_load_[path.entry],
                                  relay_bandwidth(path.middle, Position::middle) / relay_load_[path.middle],
                                  relay_bandwidth(path.exit, Position::exit) / relay_load_[path.exit]});
    const double bytes = spec.workload == Workload::web ? cfg_.workload.web_bytes : cfg_.workload.bulk_bytes;

    StreamRecord rec;
    rec.stream_id = records_.size() + 1;
    rec.client_id = spec.id;
    rec.circuit_id = cid;
    rec.guard = snap_.relay(path.entry).id;
    rec.middle = snap_.relay(path.middle).id;
    rec.exit = snap_.relay(path.exit).id;
    rec.t_request = now_;
    rec.t_first_byte = ttfb;
    rec.t_last_byte = ttfb + bytes / rate;
    rec.bytes = bytes;
    rec.compromised_relay = snap_.relay(path.entry).malicious && snap_.relay(path.exit).malicious;
    if (cfg_.as_oracle) {
      rec.compromised_as = as_compromised(
          *cfg_.as_oracle, {spec.id, spec.location}, {rec.guard, snap_.relay(path.entry).location},
          {rec.exit, snap_.relay(path.exit).location},
          {cfg_.destinations[dest_idx].id, dest});
    }
    rec.client_index = client;
    rec.destination_index = dest_idx;
    rec.workload = spec.workload;
    rec.on_demand = !chosen.has_value();
    active_.push_back({client, cid, path});
    push(rec.t_last_byte, EventKind::complete, records_.size());
    records_.push_back(std::move(rec));
  }

  void on_complete(std::size_t stream) {
    const auto& a = active_[stream];
    for (auto r : {a.path.entry, a.path.middle, a.path.exit}) --relay_load_[r];
    auto& st = clients_[a.client];
    if (Circuit* c = st.pool.find(a.circuit)) {
      --c->active_streams;
      record_rtt(*c, circuit_rtt(a.client, a.path));
    }
    const auto& spec = cfg_.clients[a.client];
    double next = now_;
    if (spec.workload == Workload::web) {
      next += st.rng.uniform(cfg_.workload.think_min_s, cfg_.workload.think_max_s);
    }
    if (next < cfg_.duration_s) push(next, EventKind::request, a.client);
  }

  RunSummary summarize() const {
    RunSummary s;
    std::vector<double> web_fb, web_lb, bulk_fb, bulk_lb;
    for (const auto& r : records_) {
      if (r.t_request < cfg_.warmup_s) continue;
      ++s.streams;
      auto& fb = r.workload == Workload::web ? web_fb : bulk_fb;
      auto& lb = r.workload == Workload::web ? web_lb : bulk_lb;
      fb.push_back(r.t_first_byte - r.t_request);
      lb.push_back(r.t_last_byte - r.t_request);
    }
    s.web = {latency_stats(web_fb), latency_stats(web_lb)};
    s.bulk = {latency_stats(bulk_fb), latency_stats(bulk_lb)};
    for (std::size_t i = 0; i < clients_.size(); ++i) {
      s.client_ids.push_back(cfg_.clients[i].id);
      s.client_workloads.push_back(cfg_.clients[i].workload);
      s.circuits_created.push_back(clients_[i].pool.created);
      s.circuits_used.push_back(clients_[i].pool.used);
    }
    s.on_demand_builds = on_demand_;
    return s;
  }

  const SimConfig& cfg_;
  const NetworkSnapshot& snap_;
  std::vector<ClientState> clients_;
  std::vector<std::size_t> relay_load_;
  std::vector<StreamRecord> records_;
  std::vector<ActiveStream> active_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> queue_;
  std::uint64_t seq_ = 0;
  double now_ = 0.0;
  std::size_t on_demand_ = 0;
};

}  // namespace sim_detail

// Runs one deterministic simulation. Streams are recorded at request time;
// the warmup window is excluded from the summary only.
inline RunResult run(const SimConfig& config) {
  config.validate();
  return sim_detail::Engine(config).run();
}

// ---------------------------------------------------------------------------
// Strategy comparison.

struct StrategyRun {
  std::string label;
  AttachmentStrategy strategy = AttachmentStrategy::vanilla;
  std::size_t n_circuits = 0;
};

// "rtt_only:3" -> rtt_only with three circuits; a bare name keeps the
// default circuit count.
inline StrategyRun parse_strategy_run(std::string_view spec, std::size_t default_n) {
  StrategyRun r;
  r.label = std::string(spec);
  const auto colon = spec.find(':');
  r.strategy = parse_strategy(spec.substr(0, colon));
  r.n_circuits = default_n;
  if (colon != std::string_view::npos) {
    const std::string n(spec.substr(colon + 1));
    try {
      std::size_t used = 0;
      const long v = std::stol(n, &used);
      if (used != n.size() || v < 0) throw std::invalid_argument(n);
      r.n_circuits = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw ParseError("bad circuit count in strategy '" + std::string(spec) + "'");
    }
  }
  return r;
}

struct CompareRow {
  StrategyRun run;
  std::vector<std::uint64_t> seeds;
  std::vector<double> web_ttfb;   // per-seed medians
  std::vector<double> web_ttlb;
  std::vector<double> web_created;
  std::vector<double> web_used;
  std::size_t used_over_created = 0;  // client runs where used > created; always 0

  double median_ttfb() const { return median(web_ttfb); }
  double median_ttlb() const { return median(web_ttlb); }
  double median_created() const { return median(web_created); }
  double median_used() const { return median(web_used); }
};

inline std::vector<CompareRow> compare_strategies(const SimConfig& base,
                                                  std::span<const StrategyRun> runs,
                                                  std::span<const std::uint64_t> seeds) {
  if (seeds.size() < 3) throw UsageError("compare: need at least three seeds");
  std::vector<CompareRow> rows;
  for (const auto& r : runs) {
    CompareRow row;
    row.run = r;
    for (auto seed : seeds) {
      SimConfig cfg = base;
      cfg.strategy = r.strategy;
      cfg.pool.n_circuits = r.n_circuits;
      cfg.seed = seed;
      const auto res = run(cfg);
      row.seeds.push_back(seed);
      row.web_ttfb.push_back(res.summary.web.ttfb.median);
      row.web_ttlb.push_back(res.summary.web.ttlb.median);
      row.web_created.push_back(res.summary.median_created(Workload::web));
      row.web_used.push_back(res.summary.median_used(Workload::web));
      for (std::size_t i = 0; i < res.summary.circuits_created.size(); ++i) {
        if (res.summary.circuits_used[i] > res.summary.circuits_created[i]) ++row.used_over_created;
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Output.

inline constexpr const char* kStreamCsvHeader =
    "stream_id,client_id,circuit_id,guard,middle,exit,t_request,t_first_byte,t_last_byte,bytes,"
    "compromised_relay,compromised_as";

inline std::string records_to_csv(std::span<const StreamRecord> records) {
  std::ostringstream out;
  out << kStreamCsvHeader << "\n";
  for (const auto& r : records) {
    out << r.stream_id << ',' << r.client_id << ',' << r.circuit_id << ',' << r.guard << ','
        << r.middle << ',' << r.exit << ',' << io::format_double(r.t_request) << ','
        << io::format_double(r.t_first_byte) << ',' << io::format_double(r.t_last_byte) << ','
        << io::format_double(r.bytes) << ',' << (r.compromised_relay ? 1 : 0) << ','
        << (r.compromised_as ? 1 : 0) << "\n";
  }
  return out.str();
}

inline io::Json stats_to_json(const LatencyStats& s) {
  return io::Json{{"count", s.count}, {"median", s.median}, {"p10", s.p10}, {"p25", s.p25},
                  {"p75", s.p75},     {"p90", s.p90},       {"min", s.min}, {"max", s.max}};
}

inline io::Json summary_to_json(const RunSummary& s) {
  io::Json clients = io::Json::array();
  for (std::size_t i = 0; i < s.client_ids.size(); ++i) {
    clients.push_back({{"client_id", s.client_ids[i]},
                       {"workload", to_string(s.client_workloads[i])},
                       {"circuits_created", s.circuits_created[i]},
                       {"circuits_used", s.circuits_used[i]}});
  }
  return io::Json{
      {"schema_version", io::kSchemaVersion},
      {"streams_after_warmup", s.streams},
      {"on_demand_builds", s.on_demand_builds},
      {"web", {{"ttfb", stats_to_json(s.web.ttfb)}, {"ttlb", stats_to_json(s.web.ttlb)}}},
      {"bulk", {{"ttfb", stats_to_json(s.bulk.ttfb)}, {"ttlb", stats_to_json(s.bulk.ttlb)}}},
      {"clients", clients},
  };
}

inline std::string compare_to_csv(std::span<const CompareRow> rows) {
  std::ostringstream out;
  out << "strategy,attachment,n_circuits,seed,web_median_ttfb,web_median_ttlb,web_median_created,"
         "web_median_used\n";
  for (const auto& r : rows) {
    auto line = [&](const std::string& seed, double fb, double lb, double cr, double us) {
      out << r.run.label << ',' << to_string(r.run.strategy) << ',' << r.run.n_circuits << ','
          << seed << ',' << io::format_double(fb) << ',' << io::format_double(lb) << ','
          << io::format_double(cr) << ',' << io::format_double(us) << "\n";
    };
    for (std::size_t i = 0; i < r.seeds.size(); ++i) {
      line(std::to_string(r.seeds[i]), r.web_ttfb[i], r.web_ttlb[i], r.web_created[i], r.web_used[i]);
    }
    line("median", r.median_ttfb(), r.median_ttlb(), r.median_created(), r.median_used());
  }
  return out.str();
}

}  // namespace relaysel

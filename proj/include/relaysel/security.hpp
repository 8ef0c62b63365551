#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "relaysel/as_oracle.hpp"
#include "relaysel/error.hpp"
#include "relaysel/geo.hpp"
#include "relaysel/io.hpp"
#include "relaysel/network.hpp"
#include "relaysel/rng.hpp"
#include "relaysel/selection.hpp"
#include "relaysel/simulator.hpp"

namespace relaysel {

// ---------------------------------------------------------------------------
// Concentration metrics.

// Gini coefficient of a count vector. Every entry of the universe counts,
// zeros included.
inline double gini(std::span<const double> counts) {
  if (counts.empty()) throw UsageError("gini: empty universe");
  std::vector<double> x(counts.begin(), counts.end());
  for (double v : x) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw UsageError("gini: counts must be finite and >= 0");
  }
  std::sort(x.begin(), x.end());
  double total = 0.0, ranked = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    total += x[i];
    ranked += static_cast<double>(i + 1) * x[i];
  }
  if (!(total > 0.0)) throw UsageError("gini: empty census");
  const double n = static_cast<double>(x.size());
  return std::max(0.0, 2.0 * ranked / (n * total) - (n + 1.0) / n);
}

inline double entropy_bits(std::span<const double> counts) {
  double total = 0.0;
  for (double v : counts) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw UsageError("entropy: counts must be finite and >= 0");
    total += v;
  }
  if (!(total > 0.0)) throw UsageError("entropy: empty census");
  double h = 0.0;
  for (double v : counts) {
    if (v > 0.0) {
      const double p = v / total;
      h -= p * std::log2(p);
    }
  }
  return std::max(0.0, h);
}

// Observed (guard, exit) combinations over every feasible pair: each
// guard-eligible relay against each exit-eligible relay other than itself.
class PairCensus {
 public:
  explicit PairCensus(const NetworkSnapshot& snap) : snap_(&snap) {
    guards_.assign(snap.eligible(Position::guard).begin(), snap.eligible(Position::guard).end());
    exits_.assign(snap.eligible(Position::exit).begin(), snap.eligible(Position::exit).end());
    guard_slot_.assign(snap.size(), kNone);
    exit_slot_.assign(snap.size(), kNone);
    for (std::size_t i = 0; i < guards_.size(); ++i) guard_slot_[guards_[i]] = i;
    for (std::size_t i = 0; i < exits_.size(); ++i) exit_slot_[exits_[i]] = i;
    counts_.assign(guards_.size() * exits_.size(), 0);
  }

  void add(RelayIndex guard, RelayIndex exit) {
    if (guard >= guard_slot_.size() || exit >= exit_slot_.size() || guard_slot_[guard] == kNone ||
        exit_slot_[exit] == kNone || guard == exit) {
      throw UsageError("census: infeasible guard/exit pair");
    }
    ++counts_[guard_slot_[guard] * exits_.size() + exit_slot_[exit]];
    ++total_;
  }

  std::uint64_t count(RelayIndex guard, RelayIndex exit) const {
    return counts_[guard_slot_.at(guard) * exits_.size() + exit_slot_.at(exit)];
  }
  std::uint64_t total() const { return total_; }
  std::size_t universe_size() const { return universe().size(); }

  // Counts over the feasible universe (a relay cannot be both ends).
  std::vector<double> universe() const {
    std::vector<double> out;
    out.reserve(counts_.size());
    for (std::size_t g = 0; g < guards_.size(); ++g) {
      for (std::size_t e = 0; e < exits_.size(); ++e) {
        if (guards_[g] == exits_[e]) continue;
        out.push_back(static_cast<double>(counts_[g * exits_.size() + e]));
      }
    }
    return out;
  }

  double gini() const { return relaysel::gini(universe()); }
  double entropy_bits() const { return relaysel::entropy_bits(universe()); }

  std::string to_csv() const {
    std::ostringstream out;
    out << "guard,exit,count\n";
    for (std::size_t g = 0; g < guards_.size(); ++g) {
      for (std::size_t e = 0; e < exits_.size(); ++e) {
        const auto c = counts_[g * exits_.size() + e];
        if (c == 0) continue;
        out << snap_->relay(guards_[g]).id << ',' << snap_->relay(exits_[e]).id << ',' << c << "\n";
      }
    }
    return out.str();
  }

 private:
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  const NetworkSnapshot* snap_;
  std::vector<RelayIndex> guards_, exits_;
  std::vector<std::size_t> guard_slot_, exit_slot_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

// ---------------------------------------------------------------------------
// Reports.

struct RunStats {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  double se = 0.0;      // standard error of the mean
};

inline RunStats run_stats(std::span<const double> xs) {
  RunStats s;
  if (xs.empty()) return s;
  const double n = static_cast<double>(xs.size());
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / (n - 1.0));
    s.se = s.stddev / std::sqrt(n);
  }
  return s;
}

struct SecurityReport {
  std::string experiment;
  std::optional<double> gini;
  std::optional<double> entropy_bits;
  std::optional<double> compromise_rate;
  std::optional<double> compromise_se;
  std::optional<double> time_to_first_compromise_s;  // median over clients; none if infinite
  std::vector<double> per_run;                        // per-run (or per-seed) values
  io::Json details = io::Json::object();
};

inline io::Json report_to_json(const SecurityReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? io::Json(*v) : io::Json(nullptr); };
  return io::Json{{"schema_version", io::kSchemaVersion},
                  {"experiment", r.experiment},
                  {"gini", opt(r.gini)},
                  {"entropy_bits", opt(r.entropy_bits)},
                  {"compromise_rate", opt(r.compromise_rate)},
                  {"compromise_se", opt(r.compromise_se)},
                  {"time_to_first_compromise_s", opt(r.time_to_first_compromise_s)},
                  {"per_run", r.per_run},
                  {"details", r.details}};
}

// ---------------------------------------------------------------------------
// Static path generation.

struct PathgenResult {
  PairCensus census;
  SecurityReport report;
};

// Each client builds paths toward targets drawn uniformly from `targets`.
// No guard is pinned; the entry is anchored on the chosen exit.
inline PathgenResult pathgen_experiment(const NetworkSnapshot& snap, const SelectionParams& params,
                                        std::span<const GeoPoint> clients,
                                        std::span<const GeoPoint> targets,
                                        std::size_t paths_per_client, std::uint64_t seed) {
  params.validate();
  if (clients.empty() || targets.empty()) throw UsageError("pathgen: need clients and targets");
  if (paths_per_client == 0) throw UsageError("pathgen: paths_per_client must be positive");
  PathgenResult out{PairCensus(snap), {}};
  for (std::size_t c = 0; c < clients.size(); ++c) {
    Rng rng(derive_seed(seed, {3, c}));
    for (std::size_t i = 0; i < paths_per_client; ++i) {
      const GeoPoint& dest = targets[rng.index(targets.size())];
      const auto p = build_path(clients[c], dest, snap, params, std::nullopt, rng);
      out.census.add(p.entry, p.exit);
    }
  }
  out.report.experiment = "pathgen";
  out.report.gini = out.census.gini();
  out.report.entropy_bits = out.census.entropy_bits();
  out.report.details = {{"mode", to_string(params.mode)},
                        {"alpha", params.alpha},
                        {"lambda", params.lambda},
                        {"clients", clients.size()},
                        {"paths_per_client", paths_per_client},
                        {"universe", out.census.universe_size()},
                        {"seed", seed}};
  return out;
}

// ---------------------------------------------------------------------------
// Relay-level adversary.

enum class MarkingOrder { uniform, bandwidth_weighted };

// Adds relays of one position to the malicious set, in random order, until
// their bandwidth first reaches `fraction` of the position total.
inline std::vector<RelayIndex> pick_by_bandwidth(const NetworkSnapshot& snap, Position pos,
                                                 double fraction, Rng& rng,
                                                 MarkingOrder order = MarkingOrder::uniform) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw UsageError("marking fraction must be in [0, 1]");
  std::vector<RelayIndex> pool;
  double total = 0.0;
  for (auto i : snap.eligible(pos)) {
    if (snap.relay(i).bandwidth(pos) > 0.0) {
      pool.push_back(i);
      total += snap.relay(i).bandwidth(pos);
    }
  }
  std::vector<RelayIndex> marked;
  const double goal = fraction * total;
  double acc = 0.0;
  while (acc < goal && !pool.empty()) {
    std::size_t k = 0;
    if (order == MarkingOrder::uniform) {
      k = rng.index(pool.size());
    } else {
      std::vector<double> w;
      for (auto i : pool) w.push_back(snap.relay(i).bandwidth(pos));
      k = weighted_pick(w, rng);
    }
    acc += snap.relay(pool[k]).bandwidth(pos);
    marked.push_back(pool[k]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return marked;
}

inline NetworkSnapshot mark_malicious_by_bandwidth(const NetworkSnapshot& snap, double guard_frac,
                                                   double exit_frac, Rng& rng,
                                                   MarkingOrder order = MarkingOrder::uniform) {
  auto marked = pick_by_bandwidth(snap, Position::guard, guard_frac, rng, order);
  auto exits = pick_by_bandwidth(snap, Position::exit, exit_frac, rng, order);
  marked.insert(marked.end(), exits.begin(), exits.end());
  return snap.with_malicious(marked);
}

inline bool path_compromised(const NetworkSnapshot& snap, const PathTriple& p) {
  return snap.relay(p.entry).malicious && snap.relay(p.exit).malicious;
}

inline double compromise_rate(std::span<const PathTriple> paths, const NetworkSnapshot& snap) {
  if (paths.empty()) return 0.0;
  std::size_t bad = 0;
  for (const auto& p : paths) {
    if (p.entry >= snap.size() || p.exit >= snap.size()) throw UsageError("path references unknown relay");
    bad += path_compromised(snap, p) ? 1 : 0;
  }
  return static_cast<double>(bad) / static_cast<double>(paths.size());
}

inline double compromise_rate(std::span<const StreamRecord> records, const NetworkSnapshot& snap) {
  if (records.empty()) return 0.0;
  std::size_t bad = 0;
  for (const auto& r : records) {
    const auto g = snap.find(r.guard);
    const auto e = snap.find(r.exit);
    if (!g || !e) throw UsageError("stream " + std::to_string(r.stream_id) + " references unknown relay");
    bad += (snap.relay(*g).malicious && snap.relay(*e).malicious) ? 1 : 0;
  }
  return static_cast<double>(bad) / static_cast<double>(records.size());
}

// ---------------------------------------------------------------------------
// Targeted attacks.

enum class AttackKind { targeted_client, targeted_destination, targeted_both, nontargeted };

inline const char* to_string(AttackKind k) {
  switch (k) {
    case AttackKind::targeted_client: return "targeted_client";
    case AttackKind::targeted_destination: return "targeted_destination";
    case AttackKind::targeted_both: return "targeted_both";
    case AttackKind::nontargeted: return "nontargeted";
  }
  return "?";
}

inline AttackKind parse_attack_kind(std::string_view s) {
  for (auto k : {AttackKind::targeted_client, AttackKind::targeted_destination,
                 AttackKind::targeted_both, AttackKind::nontargeted}) {
    if (s == to_string(k)) return k;
  }
  throw ParseError("unknown attack kind '" + std::string(s) + "'");
}

inline constexpr double kMiB = 1024.0 * 1024.0;

struct AttackConfig {
  AttackKind kind = AttackKind::targeted_client;
  double bandwidth_fraction = 0.1;  // of guard and of exit bandwidth, attacker included
  double relay_bw_min = 20.0 * kMiB;
  double relay_bw_max = 220.0 * kMiB;
  std::size_t paths = 2000;
  std::size_t runs = 30;

  void validate() const {
    if (!(bandwidth_fraction >= 0.0 && bandwidth_fraction < 1.0)) {
      throw UsageError("attack: bandwidth_fraction must be in [0, 1)");
    }
    if (!(relay_bw_min > 0.0 && relay_bw_max >= relay_bw_min)) {
      throw UsageError("attack: need 0 < relay_bw_min <= relay_bw_max");
    }
    if (paths == 0 || runs == 0) throw UsageError("attack: paths and runs must be positive");
  }
};

// Attacker relays for one position, added until their share of the position
// total (attacker included) first reaches the fraction. `place` gives each
// relay's location.
template <class Place>
std::vector<RelayDescriptor> attacker_relays(const NetworkSnapshot& snap, Position pos,
                                             const AttackConfig& cfg, std::size_t run, Rng& rng,
                                             Place place) {
  double honest = 0.0;
  for (auto i : snap.eligible(pos)) honest += snap.relay(i).bandwidth(pos);
  std::vector<RelayDescriptor> out;
  double mine = 0.0;
  while (mine < cfg.bandwidth_fraction * (honest + mine)) {
    RelayDescriptor r;
    r.id = std::string("x") + (pos == Position::guard ? "g" : "e") + std::to_string(run) + "-" +
           std::to_string(out.size());
    r.location = place();
    const double bw = rng.uniform(cfg.relay_bw_min, cfg.relay_bw_max);
    if (pos == Position::guard) {
      r.bw_guard = bw;
      r.guard_flag = true;
    } else {
      r.bw_exit = bw;
      r.exit_flag = true;
    }
    r.malicious = true;
    mine += bw;
    out.push_back(std::move(r));
  }
  return out;
}

// One client (drawn per run from `clients`) builds cfg.paths paths toward
// targets drawn uniformly from `targets`. The attacker layout of run r depends
// only on (seed, r), so different selection settings see the same attack.
inline SecurityReport targeted_attack(const NetworkSnapshot& snap, const SelectionParams& params,
                                      const AttackConfig& cfg, std::span<const GeoPoint> clients,
                                      std::span<const GeoPoint> targets, std::uint64_t seed) {
  params.validate();
  cfg.validate();
  if (clients.empty() || targets.empty()) throw UsageError("attack: need clients and targets");
  const auto& guards = snap.eligible(Position::guard);
  const auto& exits = snap.eligible(Position::exit);

  SecurityReport rep;
  rep.experiment = "attack";
  io::Json runs = io::Json::array();
  for (std::size_t r = 0; r < cfg.runs; ++r) {
    Rng layout(derive_seed(seed, {4, r, 0}));
    const GeoPoint client = clients[layout.index(clients.size())];
    const GeoPoint victim_target = targets[layout.index(targets.size())];
    const bool at_client = cfg.kind == AttackKind::targeted_client || cfg.kind == AttackKind::targeted_both;
    const bool at_target =
        cfg.kind == AttackKind::targeted_destination || cfg.kind == AttackKind::targeted_both;
    auto bad_guards = attacker_relays(snap, Position::guard, cfg, r, layout, [&] {
      return at_client ? client : snap.relay(guards[layout.index(guards.size())]).location;
    });
    auto bad_exits = attacker_relays(snap, Position::exit, cfg, r, layout, [&] {
      return at_target ? victim_target : snap.relay(exits[layout.index(exits.size())]).location;
    });
    bad_guards.insert(bad_guards.end(), bad_exits.begin(), bad_exits.end());
    const NetworkSnapshot attacked = snap.with_added(bad_guards);

    Rng rng(derive_seed(seed, {4, r, 1}));
    std::size_t bad = 0;
    for (std::size_t i = 0; i < cfg.paths; ++i) {
      const GeoPoint& dest = targets[rng.index(targets.size())];
      const auto p = build_path(client, dest, attacked, params, std::nullopt, rng);
      bad += path_compromised(attacked, p) ? 1 : 0;
    }
    const double rate = static_cast<double>(bad) / static_cast<double>(cfg.paths);
    rep.per_run.push_back(rate);
    runs.push_back({{"run", r},
                    {"client_lat", client.lat()},
                    {"client_lon", client.lon()},
                    {"attacker_relays", bad_guards.size()},
                    {"compromise_rate", rate}});
  }
  const auto st = run_stats(rep.per_run);
  rep.compromise_rate = st.mean;
  rep.compromise_se = st.se;
  rep.details = {{"kind", to_string(cfg.kind)},
                 {"mode", to_string(params.mode)},
                 {"alpha", params.alpha},
                 {"lambda", params.lambda},
                 {"bandwidth_fraction", cfg.bandwidth_fraction},
                 {"paths", cfg.paths},
                 {"seed", seed},
                 {"runs", runs}};
  return rep;
}

// ---------------------------------------------------------------------------
// Nearby guards against a relay-level adversary.

enum class NearbyAdversary { low, high };

inline const char* to_string(NearbyAdversary a) { return a == NearbyAdversary::low ? "low" : "high"; }

inline NearbyAdversary parse_nearby_adversary(std::string_view s) {
  if (s == "low") return NearbyAdversary::low;
  if (s == "high") return NearbyAdversary::high;
  throw ParseError("unknown adversary '" + std::string(s) + "'");
}

inline constexpr double kSecondsPerMonth = 30.0 * 86400.0;

struct NearbyGuardConfig {
  double months = 10.0;
  double low_bw = 2e6;    // bytes/s
  double high_bw = 55e6;
  double rotation_min_months = 9.0;
  double rotation_max_months = 10.0;
  double guard_churn_per_month = 0.5;  // rate at which an honest guard goes away
  double streams_per_hour = 12.0;

  void validate() const {
    if (!(months > 0.0)) throw UsageError("nearby: months must be positive");
    if (!(low_bw > 0.0 && high_bw > 0.0)) throw UsageError("nearby: adversary bandwidths must be positive");
    if (!(rotation_min_months > 0.0 && rotation_max_months >= rotation_min_months)) {
      throw UsageError("nearby: need 0 < rotation_min <= rotation_max");
    }
    if (!(guard_churn_per_month >= 0.0 && streams_per_hour > 0.0)) {
      throw UsageError("nearby: churn must be >= 0 and stream rate positive");
    }
  }
};

struct NearbyClientResult {
  std::string client_id;
  std::size_t guard_changes = 0;
  std::size_t streams = 0;
  std::size_t compromised_streams = 0;
  std::optional<double> first_compromise_s;
};

struct NearbyResult {
  SecurityReport report;
  std::vector<NearbyClientResult> clients;
  double compromised_stream_fraction = 0.0;
  double compromised_client_fraction = 0.0;
  // median over all clients, never-compromised clients counting as +inf
  double median_ttfc_s = std::numeric_limits<double>::infinity();
};

// Each client gets one attacker guard at its own location. Guards are chosen
// with the client-distance weighting and replaced on rotation or when an
// honest guard goes away. Randomness for guard draws, churn, rotation and
// stream arrivals is drawn per client independently of alpha and of the
// adversary, so runs differing only in those share their random numbers.
inline NearbyResult nearby_guard_experiment(const NetworkSnapshot& snap, double alpha,
                                            NearbyAdversary adversary,
                                            std::span<const ClientSpec> clients,
                                            const NearbyGuardConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (clients.empty()) throw UsageError("nearby: no clients");
  SelectionParams params;
  params.mode = SelectionMode::combined;
  params.alpha = alpha;
  params.guard_distance = GuardDistance::client_only;
  params.validate();

  const double horizon = cfg.months * kSecondsPerMonth;
  const double churn_rate = cfg.guard_churn_per_month / kSecondsPerMonth;
  const double stream_rate = cfg.streams_per_hour / 3600.0;
  NearbyResult out;
  std::size_t total_streams = 0, bad_streams = 0, bad_clients = 0;
  std::vector<double> ttfc;

  for (std::size_t c = 0; c < clients.size(); ++c) {
    RelayDescriptor evil;
    evil.id = "x-" + clients[c].id;
    evil.location = clients[c].location;
    evil.bw_guard = adversary == NearbyAdversary::low ? cfg.low_bw : cfg.high_bw;
    evil.guard_flag = true;
    evil.malicious = true;
    const NetworkSnapshot net = snap.with_added(std::span<const RelayDescriptor>(&evil, 1));
    const auto cand = position_candidates(net, Position::guard);
    const DistanceContext ctx{clients[c].location, clients[c].location, std::nullopt, std::nullopt,
                              std::nullopt};
    const auto weights = position_weights(net, cand, Position::guard, ctx, params);

    Rng picks(derive_seed(seed, {5, c, 0}));
    Rng timing(derive_seed(seed, {5, c, 1}));
    Rng arrivals(derive_seed(seed, {5, c, 2}));

    // guard epochs: [start, end) with a malicious flag
    struct Epoch {
      double start, end;
      bool bad;
    };
    std::vector<Epoch> epochs;
    double t = 0.0;
    double next_churn = churn_rate > 0.0 ? timing.exponential(churn_rate) : horizon;
    while (t < horizon) {
      const bool bad = net.relay(cand[weighted_pick(weights, picks)]).malicious;
      const double rotation =
          t + timing.uniform(cfg.rotation_min_months, cfg.rotation_max_months) * kSecondsPerMonth;
      double end = rotation;
      // churn hits honest guards only; the attacker keeps its relay up
      while (next_churn <= t) next_churn += timing.exponential(churn_rate);
      if (!bad && next_churn < rotation) end = next_churn;
      epochs.push_back({t, std::min(end, horizon), bad});
      t = end;
    }

    NearbyClientResult res;
    res.client_id = clients[c].id;
    res.guard_changes = epochs.size() - 1;
    std::size_t e = 0;
    for (double s = arrivals.exponential(stream_rate); s < horizon; s += arrivals.exponential(stream_rate)) {
      while (epochs[e].end <= s) ++e;
      ++res.streams;
      if (epochs[e].bad) {
        ++res.compromised_streams;
        if (!res.first_compromise_s) res.first_compromise_s = s;
      }
    }
    total_streams += res.streams;
    bad_streams += res.compromised_streams;
    if (res.first_compromise_s) ++bad_clients;
    ttfc.push_back(res.first_compromise_s.value_or(std::numeric_limits<double>::infinity()));
    out.clients.push_back(std::move(res));
  }

  std::sort(ttfc.begin(), ttfc.end());
  const std::size_t n = ttfc.size();
  out.median_ttfc_s = n % 2 == 1 ? ttfc[n / 2] : (ttfc[n / 2 - 1] + ttfc[n / 2]) / 2.0;
  out.compromised_stream_fraction =
      total_streams > 0 ? static_cast<double>(bad_streams) / static_cast<double>(total_streams) : 0.0;
  out.compromised_client_fraction = static_cast<double>(bad_clients) / static_cast<double>(n);

  auto& rep = out.report;
  rep.experiment = "nearby_guards";
  rep.compromise_rate = out.compromised_stream_fraction;
  if (std::isfinite(out.median_ttfc_s)) rep.time_to_first_compromise_s = out.median_ttfc_s;
  for (const auto& cr : out.clients) {
    rep.per_run.push_back(cr.streams ? static_cast<double>(cr.compromised_streams) / static_cast<double>(cr.streams) : 0.0);
  }
  rep.details = {{"alpha", alpha},
                 {"adversary", to_string(adversary)},
                 {"months", cfg.months},
                 {"clients", n},
                 {"compromised_clients", bad_clients},
                 {"compromised_client_fraction", out.compromised_client_fraction},
                 {"streams", total_streams},
                 {"compromised_streams", bad_streams},
                 {"seed", seed}};
  return out;
}

inline std::string nearby_to_csv(std::span<const NearbyResult> runs) {
  std::ostringstream out;
  out << "alpha,adversary,client_id,guard_changes,streams,compromised_streams,first_compromise_s\n";
  for (const auto& r : runs) {
    for (const auto& c : r.clients) {
      out << io::format_double(r.report.details.at("alpha").get<double>()) << ','
          << r.report.details.at("adversary").get<std::string>() << ',' << c.client_id << ','
          << c.guard_changes << ',' << c.streams << ',' << c.compromised_streams << ','
          << (c.first_compromise_s ? io::format_double(*c.first_compromise_s) : std::string()) << "\n";
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Network-level adversary.

inline double as_compromise(std::span<const StreamRecord> records, const NetworkSnapshot& snap,
                            std::span<const ClientSpec> clients,
                            std::span<const DestinationSpec> destinations,
                            const AsPathOracle& oracle) {
  if (records.empty()) return 0.0;
  std::size_t bad = 0;
  for (const auto& r : records) {
    const auto g = snap.find(r.guard);
    const auto e = snap.find(r.exit);
    if (!g || !e || r.client_index >= clients.size() || r.destination_index >= destinations.size()) {
      throw UsageError("stream " + std::to_string(r.stream_id) + " has unknown endpoints");
    }
    const auto& c = clients[r.client_index];
    const auto& d = destinations[r.destination_index];
    bad += as_compromised(oracle, {c.id, c.location}, {r.guard, snap.relay(*g).location},
                          {r.exit, snap.relay(*e).location}, {d.id, d.location})
               ? 1
               : 0;
  }
  return static_cast<double>(bad) / static_cast<double>(records.size());
}

}  // namespace relaysel

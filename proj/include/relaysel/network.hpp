#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "relaysel/error.hpp"
#include "relaysel/geo.hpp"
#include "relaysel/io.hpp"
#include "relaysel/rng.hpp"

namespace relaysel {

enum class Position { guard = 0, middle = 1, exit = 2 };

inline const char* to_string(Position p) {
  switch (p) {
    case Position::guard: return "guard";
    case Position::middle: return "middle";
    case Position::exit: return "exit";
  }
  return "?";
}

using RelayIndex = std::size_t;

struct RelayDescriptor {
  std::string id;
  GeoPoint location;
  // Per-position weighted bandwidth, bytes/s.
  double bw_guard = 0.0;
  double bw_middle = 0.0;
  double bw_exit = 0.0;
  bool guard_flag = false;
  bool exit_flag = false;
  bool malicious = false;

  double bandwidth(Position p) const noexcept {
    switch (p) {
      case Position::guard: return bw_guard;
      case Position::middle: return bw_middle;
      case Position::exit: return bw_exit;
    }
    return 0.0;
  }

  // Guard and exit eligibility follow the flags; the middle position takes any
  // relay that advertises middle bandwidth.
  bool eligible(Position p) const noexcept {
    switch (p) {
      case Position::guard: return guard_flag;
      case Position::middle: return bw_middle > 0.0;
      case Position::exit: return exit_flag;
    }
    return false;
  }
};

// Immutable relay set. Construction validates every descriptor and caches the
// per-position bandwidth maxima; derived snapshots are built through the
// `with_*` helpers so the cache can never go stale.
class NetworkSnapshot {
 public:
  explicit NetworkSnapshot(std::vector<RelayDescriptor> relays) : relays_(std::move(relays)) {
    validate();
    index();
  }

  std::span<const RelayDescriptor> relays() const noexcept { return relays_; }
  const RelayDescriptor& relay(RelayIndex i) const { return relays_.at(i); }
  std::size_t size() const noexcept { return relays_.size(); }

  double max_bandwidth(Position p) const noexcept { return bw_max_[static_cast<int>(p)]; }

  // Indices of relays eligible for a position, in snapshot order.
  std::span<const RelayIndex> eligible(Position p) const noexcept {
    return eligible_[static_cast<int>(p)];
  }

  std::optional<RelayIndex> find(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
  }

  NetworkSnapshot with_added(std::span<const RelayDescriptor> extra) const {
    auto copy = relays_;
    copy.insert(copy.end(), extra.begin(), extra.end());
    return NetworkSnapshot(std::move(copy));
  }

  NetworkSnapshot with_malicious(std::span<const RelayIndex> marked) const {
    auto copy = relays_;
    for (auto i : marked) copy.at(i).malicious = true;
    return NetworkSnapshot(std::move(copy));
  }

  static void validate_relay(const RelayDescriptor& r) {
    for (double bw : {r.bw_guard, r.bw_middle, r.bw_exit}) {
      if (!std::isfinite(bw) || bw < 0.0) {
        throw InvariantError("relay '" + r.id + "': bandwidth must be finite and >= 0");
      }
    }
    if (r.bw_guard > 0.0 && !r.guard_flag) {
      throw InvariantError("relay '" + r.id + "': bw_guard > 0 without guard flag");
    }
    if (r.bw_exit > 0.0 && !r.exit_flag) {
      throw InvariantError("relay '" + r.id + "': bw_exit > 0 without exit flag");
    }
  }

 private:
  void validate() const {
    std::unordered_set<std::string> seen;
    bool any_guard = false, any_exit = false;
    for (const auto& r : relays_) {
      if (r.id.empty()) throw InvariantError("relay with empty id");
      if (!seen.insert(r.id).second) throw InvariantError("duplicate relay id '" + r.id + "'");
      validate_relay(r);
      any_guard = any_guard || r.guard_flag;
      any_exit = any_exit || r.exit_flag;
    }
    if (!any_guard) throw InvariantError("snapshot has no guard-flagged relay");
    if (!any_exit) throw InvariantError("snapshot has no exit-flagged relay");
  }

  void index() {
    for (RelayIndex i = 0; i < relays_.size(); ++i) {
      const auto& r = relays_[i];
      by_id_.emplace(r.id, i);
      for (auto p : {Position::guard, Position::middle, Position::exit}) {
        const int k = static_cast<int>(p);
        bw_max_[k] = std::max(bw_max_[k], r.bandwidth(p));
        if (r.eligible(p)) eligible_[k].push_back(i);
      }
    }
  }

  std::vector<RelayDescriptor> relays_;
  std::array<double, 3> bw_max_{0.0, 0.0, 0.0};
  std::array<std::vector<RelayIndex>, 3> eligible_;
  std::unordered_map<std::string, RelayIndex> by_id_;
};

enum class Workload { web, bulk };

inline const char* to_string(Workload w) { return w == Workload::web ? "web" : "bulk"; }

struct ClientSpec {
  std::string id;
  GeoPoint location;
  Workload workload = Workload::web;
};

struct DestinationSpec {
  std::string id;
  GeoPoint location;
};

// ---------------------------------------------------------------------------
// File formats: one JSON object per line.

namespace network_detail {

inline GeoPoint read_point(const io::Json& j, const std::string& where) {
  try {
    return GeoPoint(io::field<double>(j, "lat", where), io::field<double>(j, "lon", where));
  } catch (const InvariantError& e) {
    throw InvariantError(where + ": " + e.what());
  }
}

inline std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

}  // namespace network_detail

inline RelayDescriptor relay_from_json(const io::Json& j, const std::string& where) {
  RelayDescriptor r;
  r.id = io::field<std::string>(j, "id", where);
  r.location = network_detail::read_point(j, where);
  r.bw_guard = io::field_or<double>(j, "bw_guard", 0.0, where);
  r.bw_middle = io::field_or<double>(j, "bw_middle", 0.0, where);
  r.bw_exit = io::field_or<double>(j, "bw_exit", 0.0, where);
  for (const auto& f : io::field_or<std::vector<std::string>>(j, "flags", {}, where)) {
    if (f == "guard") {
      r.guard_flag = true;
    } else if (f == "exit") {
      r.exit_flag = true;
    } else {
      throw ParseError(where + ": unknown flag '" + f + "'");
    }
  }
  r.malicious = io::field_or<bool>(j, "malicious", false, where);
  return r;
}

inline io::Json relay_to_json(const RelayDescriptor& r) {
  io::Json flags = io::Json::array();
  if (r.guard_flag) flags.push_back("guard");
  if (r.exit_flag) flags.push_back("exit");
  io::Json j{{"id", r.id},
             {"lat", r.location.lat()},
             {"lon", r.location.lon()},
             {"bw_guard", r.bw_guard},
             {"bw_middle", r.bw_middle},
             {"bw_exit", r.bw_exit},
             {"flags", flags}};
  if (r.malicious) j["malicious"] = true;
  return j;
}

inline NetworkSnapshot load_snapshot(const std::filesystem::path& path) {
  std::vector<RelayDescriptor> relays;
  std::unordered_set<std::string> seen;
  for (const auto& line : io::read_jsonl(path)) {
    const auto where = network_detail::where(path, line.line_no);
    auto r = relay_from_json(line.value, where);
    if (!seen.insert(r.id).second) throw InvariantError(where + ": duplicate relay id '" + r.id + "'");
    try {
      NetworkSnapshot::validate_relay(r);
    } catch (const InvariantError& e) {
      throw InvariantError(where + ": " + e.what());
    }
    relays.push_back(std::move(r));
  }
  return NetworkSnapshot(std::move(relays));
}

inline std::string snapshot_to_jsonl(const NetworkSnapshot& snap) {
  std::string out;
  for (const auto& r : snap.relays()) out += relay_to_json(r).dump() + "\n";
  return out;
}

inline std::vector<ClientSpec> load_clients(const std::filesystem::path& path) {
  std::vector<ClientSpec> out;
  for (const auto& line : io::read_jsonl(path)) {
    const auto where = network_detail::where(path, line.line_no);
    ClientSpec c;
    c.id = io::field<std::string>(line.value, "id", where);
    c.location = network_detail::read_point(line.value, where);
    const auto w = io::field_or<std::string>(line.value, "workload", "web", where);
    if (w == "web") {
      c.workload = Workload::web;
    } else if (w == "bulk") {
      c.workload = Workload::bulk;
    } else {
      throw ParseError(where + ": unknown workload '" + w + "'");
    }
    out.push_back(std::move(c));
  }
  return out;
}

inline std::string clients_to_jsonl(std::span<const ClientSpec> clients) {
  std::string out;
  for (const auto& c : clients) {
    out += io::Json{{"id", c.id},
                    {"lat", c.location.lat()},
                    {"lon", c.location.lon()},
                    {"workload", to_string(c.workload)}}
               .dump() +
           "\n";
  }
  return out;
}

inline std::vector<DestinationSpec> load_destinations(const std::filesystem::path& path) {
  std::vector<DestinationSpec> out;
  for (const auto& line : io::read_jsonl(path)) {
    const auto where = network_detail::where(path, line.line_no);
    out.push_back({io::field<std::string>(line.value, "id", where),
                   network_detail::read_point(line.value, where)});
  }
  return out;
}

inline std::string destinations_to_jsonl(std::span<const DestinationSpec> dests) {
  std::string out;
  for (const auto& d : dests) {
    out += io::Json{{"id", d.id}, {"lat", d.location.lat()}, {"lon", d.location.lon()}}.dump() +
           "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Derived and synthetic networks.

// Uniform sampling without replacement inside each type class (exit-flagged,
// guard-only, unflagged). Relative order is preserved.
inline NetworkSnapshot sample_scaled(const NetworkSnapshot& snap, double fraction,
                                     std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw UsageError("sample_scaled: fraction must be in (0, 1]");
  }
  std::array<std::vector<RelayIndex>, 3> classes;
  for (RelayIndex i = 0; i < snap.size(); ++i) {
    const auto& r = snap.relay(i);
    classes[r.exit_flag ? 0 : (r.guard_flag ? 1 : 2)].push_back(i);
  }
  Rng rng(seed);
  std::vector<RelayIndex> keep;
  for (auto& cls : classes) {
    const auto n = cls.size();
    const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    for (std::size_t i = 0; i < take; ++i) std::swap(cls[i], cls[i + rng.index(n - i)]);
    keep.insert(keep.end(), cls.begin(), cls.begin() + static_cast<std::ptrdiff_t>(take));
  }
  if (classes[0].empty() || keep.empty()) throw InvariantError("sample_scaled: degenerate result");
  std::sort(keep.begin(), keep.end());
  std::vector<RelayDescriptor> relays;
  for (auto i : keep) relays.push_back(snap.relay(i));
  try {
    return NetworkSnapshot(std::move(relays));
  } catch (const InvariantError& e) {
    throw InvariantError(std::string("sample_scaled: degenerate result: ") + e.what());
  }
}

struct BandwidthSpec {
  enum class Kind { fixed, uniform, log_uniform };
  Kind kind = Kind::fixed;
  double min = 10e6;  // bytes/s
  double max = 10e6;

  static BandwidthSpec fixed(double bw) { return {Kind::fixed, bw, bw}; }
  static BandwidthSpec uniform(double lo, double hi) { return {Kind::uniform, lo, hi}; }
  static BandwidthSpec log_uniform(double lo, double hi) { return {Kind::log_uniform, lo, hi}; }

  void validate() const {
    if (!(std::isfinite(min) && std::isfinite(max) && min > 0.0 && max >= min)) {
      throw UsageError("bandwidth distribution needs 0 < min <= max");
    }
  }

  double draw(Rng& rng) const {
    switch (kind) {
      case Kind::fixed: return min;
      case Kind::uniform: return rng.uniform(min, max);
      case Kind::log_uniform: return std::exp(rng.uniform(std::log(min), std::log(max)));
    }
    return min;
  }
};

inline std::string zero_pad(std::size_t i, std::size_t width = 4) {
  auto s = std::to_string(i);
  return std::string(s.size() < width ? width - s.size() : 0, '0') + s;
}

// Disjoint guard / middle / exit populations; each relay carries bandwidth
// only for its own position.
inline NetworkSnapshot synth_network(std::size_t n_guards, std::size_t n_middles,
                                     std::size_t n_exits, const BandwidthSpec& bw,
                                     std::span<const Region> regions, std::uint64_t seed) {
  if (n_guards == 0 || n_exits == 0) throw UsageError("synth_network: need >= 1 guard and exit");
  bw.validate();
  Rng rng(seed);
  std::vector<RelayDescriptor> relays;
  relays.reserve(n_guards + n_middles + n_exits);
  auto add = [&](const char* prefix, std::size_t i, Position pos) {
    RelayDescriptor r;
    r.id = std::string(prefix) + zero_pad(i);
    r.location = sample_location(regions, rng);
    const double b = bw.draw(rng);
    switch (pos) {
      case Position::guard: r.bw_guard = b; r.guard_flag = true; break;
      case Position::middle: r.bw_middle = b; break;
      case Position::exit: r.bw_exit = b; r.exit_flag = true; break;
    }
    relays.push_back(std::move(r));
  };
  for (std::size_t i = 0; i < n_guards; ++i) add("g", i, Position::guard);
  for (std::size_t i = 0; i < n_middles; ++i) add("m", i, Position::middle);
  for (std::size_t i = 0; i < n_exits; ++i) add("e", i, Position::exit);
  return NetworkSnapshot(std::move(relays));
}

inline std::vector<ClientSpec> synth_clients(std::size_t n, double bulk_fraction,
                                             std::span<const Region> regions,
                                             std::uint64_t seed) {
  Rng rng(seed);
  const auto n_bulk = static_cast<std::size_t>(std::llround(bulk_fraction * static_cast<double>(n)));
  std::vector<ClientSpec> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"c" + zero_pad(i), sample_location(regions, rng),
                   i < n - n_bulk ? Workload::web : Workload::bulk});
  }
  return out;
}

inline std::vector<DestinationSpec> synth_destinations(std::size_t n,
                                                       std::span<const Region> regions,
                                                       std::uint64_t seed) {
  Rng rng(seed);
  std::vector<DestinationSpec> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({"d" + zero_pad(i), sample_location(regions, rng)});
  return out;
}

}  // namespace relaysel

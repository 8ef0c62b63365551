#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "relaysel/error.hpp"
#include "relaysel/geo.hpp"
#include "relaysel/network.hpp"
#include "relaysel/rng.hpp"
#include "relaysel/selection.hpp"

namespace relaysel {

// Fixed-capacity FIFO of the most recent N samples.
template <typename T, std::size_t N>
class SampleWindow {
 public:
  static constexpr std::size_t capacity = N;

  void push(T v) {
    data_[(head_ + size_) % N] = v;
    if (size_ < N) {
      ++size_;
    } else {
      head_ = (head_ + 1) % N;
    }
  }

  std::size_t size() const noexcept { return size_; }
  bool empty() const noexcept { return size_ == 0; }

  // i = 0 is the oldest retained sample.
  T operator[](std::size_t i) const { return data_[(head_ + i) % N]; }
  T back() const { return (*this)[size_ - 1]; }

  T sum() const {
    T s{};
    for (std::size_t i = 0; i < size_; ++i) s += (*this)[i];
    return s;
  }

  std::vector<T> to_vector() const {
    std::vector<T> v;
    for (std::size_t i = 0; i < size_; ++i) v.push_back((*this)[i]);
    return v;
  }

 private:
  std::array<T, N> data_{};
  std::size_t head_ = 0;
  std::size_t size_ = 0;
};

using CircuitId = std::uint64_t;
using TargetClass = std::optional<std::size_t>;

inline constexpr std::size_t kMeasurementWindow = 5;

struct Circuit {
  CircuitId id = 0;
  PathTriple path;
  double created_at = 0.0;
  double ready_at = 0.0;  // build completes; not attachable before this
  std::optional<double> last_used_at;
  bool dirty = false;
  SampleWindow<double, kMeasurementWindow> rtt_samples;
  double rtt_min = std::numeric_limits<double>::infinity();
  SampleWindow<double, kMeasurementWindow> congestion_samples;
  double length_km = 0.0;
  TargetClass target_centroid;
  std::size_t streams_attached = 0;
  std::size_t active_streams = 0;

  bool used() const noexcept { return streams_attached > 0; }
};

// T_c = RTT - RTT_min, with RTT_min updated first. Earlier samples are not
// rewritten when the minimum drops.
inline void record_rtt(Circuit& c, double rtt) {
  if (!(rtt > 0.0) || !std::isfinite(rtt)) {
    throw UsageError("record_rtt: rtt must be positive, got " + std::to_string(rtt));
  }
  c.rtt_min = std::min(c.rtt_min, rtt);
  c.rtt_samples.push(rtt);
  c.congestion_samples.push(rtt - c.rtt_min);
}

// Mean of the stored congestion samples; a circuit never measured counts as
// uncongested.
inline double mean_congestion(const Circuit& c) {
  if (c.congestion_samples.empty()) return 0.0;
  return c.congestion_samples.sum() / static_cast<double>(c.congestion_samples.size());
}

// Most recent RTT sample; +inf for a circuit never measured.
inline double last_rtt(const Circuit& c) {
  return c.rtt_samples.empty() ? std::numeric_limits<double>::infinity() : c.rtt_samples.back();
}

// Client -> guard -> middle -> exit -> destination. Without a known
// destination the last leg runs to the centroid nearest the client.
inline double circuit_length(const GeoPoint& client, const PathTriple& path,
                             const NetworkSnapshot& snap, const std::optional<GeoPoint>& dest,
                             const CentroidSet& centroids) {
  GeoPoint end;
  if (dest) {
    end = *dest;
  } else if (!centroids.empty()) {
    end = centroids[closest_centroid(client, centroids)];
  } else {
    throw UsageError("circuit_length: unknown destination and no centroids");
  }
  return path_length_km(client, snap.relay(path.entry).location, snap.relay(path.middle).location,
                        snap.relay(path.exit).location, end);
}

// ---------------------------------------------------------------------------
// Stream attachment.

enum class AttachmentStrategy {
  vanilla,
  car,
  congestion_only,
  length_only,
  rtt_only,
  congestion_then_length,
  rtt_then_length,
  length_then_congestion,
  length_then_rtt,
  rtt_then_congestion,
  congestion_then_rtt,
};

inline constexpr std::array kAllStrategies = {
    AttachmentStrategy::vanilla,
    AttachmentStrategy::car,
    AttachmentStrategy::congestion_only,
    AttachmentStrategy::length_only,
    AttachmentStrategy::rtt_only,
    AttachmentStrategy::congestion_then_length,
    AttachmentStrategy::rtt_then_length,
    AttachmentStrategy::length_then_congestion,
    AttachmentStrategy::length_then_rtt,
    AttachmentStrategy::rtt_then_congestion,
    AttachmentStrategy::congestion_then_rtt,
};

inline const char* to_string(AttachmentStrategy s) {
  switch (s) {
    case AttachmentStrategy::vanilla: return "vanilla";
    case AttachmentStrategy::car: return "car";
    case AttachmentStrategy::congestion_only: return "congestion_only";
    case AttachmentStrategy::length_only: return "length_only";
    case AttachmentStrategy::rtt_only: return "rtt_only";
    case AttachmentStrategy::congestion_then_length: return "congestion_then_length";
    case AttachmentStrategy::rtt_then_length: return "rtt_then_length";
    case AttachmentStrategy::length_then_congestion: return "length_then_congestion";
    case AttachmentStrategy::length_then_rtt: return "length_then_rtt";
    case AttachmentStrategy::rtt_then_congestion: return "rtt_then_congestion";
    case AttachmentStrategy::congestion_then_rtt: return "congestion_then_rtt";
  }
  return "?";
}

inline AttachmentStrategy parse_strategy(std::string_view s) {
  for (auto st : kAllStrategies) {
    if (s == to_string(st)) return st;
  }
  throw ParseError("unknown attachment strategy '" + std::string(s) + "'");
}

enum class Metric { congestion, rtt, length };

inline double metric_value(const Circuit& c, Metric m) {
  switch (m) {
    case Metric::congestion: return mean_congestion(c);
    case Metric::rtt: return last_rtt(c);
    case Metric::length: return c.length_km;
  }
  return 0.0;
}

struct PoolConfig {
  std::size_t n_circuits = 0;  // 0: no proactive building
  double idle_kill_s = 300.0;
  double dirty_age_s = 600.0;
  double tick_s = 1.0;
  double car_threshold_s = 0.5;
  std::size_t prebuild_centroids = 0;  // keep >= 1 clean circuit per centroid

  bool enforced() const noexcept { return n_circuits > 0; }

  void validate() const {
    if (!(idle_kill_s > 0.0 && dirty_age_s > 0.0 && tick_s > 0.0 && car_threshold_s > 0.0)) {
      throw UsageError("pool config: timers and thresholds must be positive");
    }
  }
};

namespace circuit_detail {

// Lowest metric value, ties by lowest id.
inline std::size_t argmin(std::span<const Circuit> c, std::span<const std::size_t> among, Metric m) {
  std::size_t best = among[0];
  for (auto i : among.subspan(1)) {
    const double v = metric_value(c[i], m);
    const double b = metric_value(c[best], m);
    if (v < b || (v == b && c[i].id < c[best].id)) best = i;
  }
  return best;
}

inline std::size_t two_stage(std::span<const Circuit> c, Metric first, Metric second) {
  std::vector<std::size_t> order(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double va = metric_value(c[a], first), vb = metric_value(c[b], first);
    return va < vb || (va == vb && c[a].id < c[b].id);
  });
  order.resize(std::min<std::size_t>(2, order.size()));
  return argmin(c, order, second);
}

}  // namespace circuit_detail

// Picks the circuit for a new stream among `candidates` (already filtered to
// clean, ready circuits). Returns nullopt when CAR has excluded every
// candidate, which tells the caller to build a fresh circuit.
inline std::optional<CircuitId> attach_stream(std::span<const Circuit> candidates,
                                              AttachmentStrategy strategy,
                                              const PoolConfig& config, Rng& rng) {
  if (candidates.empty()) throw UsageError("attach_stream: no candidate circuits");
  using circuit_detail::argmin;
  using circuit_detail::two_stage;
  std::vector<std::size_t> all(candidates.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  std::size_t pick = 0;
  switch (strategy) {
    case AttachmentStrategy::vanilla: {
      for (std::size_t i = 1; i < candidates.size(); ++i) {
        const auto& c = candidates[i];
        const auto& b = candidates[pick];
        if (c.created_at > b.created_at || (c.created_at == b.created_at && c.id < b.id)) pick = i;
      }
      break;
    }
    case AttachmentStrategy::car: {
      std::vector<std::size_t> ok;
      for (auto i : all) {
        if (mean_congestion(candidates[i]) <= config.car_threshold_s) ok.push_back(i);
      }
      if (ok.empty()) return std::nullopt;
      const std::size_t take = std::min<std::size_t>(3, ok.size());
      for (std::size_t i = 0; i < take; ++i) std::swap(ok[i], ok[i + rng.index(ok.size() - i)]);
      ok.resize(take);
      pick = argmin(candidates, ok, Metric::congestion);
      break;
    }
    case AttachmentStrategy::congestion_only: pick = argmin(candidates, all, Metric::congestion); break;
    case AttachmentStrategy::length_only: pick = argmin(candidates, all, Metric::length); break;
    case AttachmentStrategy::rtt_only: pick = argmin(candidates, all, Metric::rtt); break;
    case AttachmentStrategy::congestion_then_length:
      pick = two_stage(candidates, Metric::congestion, Metric::length);
      break;
    case AttachmentStrategy::rtt_then_length:
      pick = two_stage(candidates, Metric::rtt, Metric::length);
      break;
    case AttachmentStrategy::length_then_congestion:
      pick = two_stage(candidates, Metric::length, Metric::congestion);
      break;
    case AttachmentStrategy::length_then_rtt:
      pick = two_stage(candidates, Metric::length, Metric::rtt);
      break;
    case AttachmentStrategy::rtt_then_congestion:
      pick = two_stage(candidates, Metric::rtt, Metric::congestion);
      break;
    case AttachmentStrategy::congestion_then_rtt:
      pick = two_stage(candidates, Metric::congestion, Metric::rtt);
      break;
  }
  return candidates[pick].id;
}

// ---------------------------------------------------------------------------
// Pool maintenance.

struct CircuitPool {
  std::vector<Circuit> circuits;  // open circuits only
  CircuitId next_id = 1;
  std::size_t created = 0;
  std::size_t used = 0;  // circuits that carried at least one stream

  Circuit& add(Circuit c) {
    c.id = next_id++;
    ++created;
    circuits.push_back(std::move(c));
    return circuits.back();
  }

  Circuit* find(CircuitId id) {
    for (auto& c : circuits) {
      if (c.id == id) return &c;
    }
    return nullptr;
  }

  // Clean, built circuits for a target class.
  std::vector<Circuit> attachable(double now, const TargetClass& target) const {
    std::vector<Circuit> out;
    for (const auto& c : circuits) {
      if (!c.dirty && c.ready_at <= now && c.target_centroid == target) out.push_back(c);
    }
    return out;
  }

  void mark_attached(Circuit& c, double now) {
    if (c.dirty) throw InvariantError("stream attached to dirty circuit " + std::to_string(c.id));
    if (c.streams_attached++ == 0) ++used;
    ++c.active_streams;
    c.last_used_at = now;
  }
};

struct TickActions {
  std::vector<CircuitId> closed;
  std::vector<CircuitId> dirtied;
  std::vector<TargetClass> builds;
};

using BuildFn = std::function<Circuit(const TargetClass&)>;

// Once-per-tick maintenance: age circuits into the dirty state, drop circuits
// nobody used within idle_kill_s of creation (and dirty ones with no open
// streams), then top each recently used target class back up to
// n_circuits clean circuits. Circuits still being built count as clean.
inline TickActions pool_tick(CircuitPool& pool, double now,
                             std::span<const TargetClass> recent_targets,
                             const PoolConfig& config, const BuildFn& build) {
  TickActions actions;
  for (auto& c : pool.circuits) {
    if (!c.dirty && now - c.created_at >= config.dirty_age_s) {
      c.dirty = true;
      actions.dirtied.push_back(c.id);
    }
  }
  std::erase_if(pool.circuits, [&](const Circuit& c) {
    const bool idle = !c.used() && now - c.created_at >= config.idle_kill_s;
    const bool spent = c.dirty && c.active_streams == 0;
    if (idle || spent) actions.closed.push_back(c.id);
    return idle || spent;
  });

  if (!config.enforced()) return actions;

  auto clean_count = [&](const TargetClass& t) {
    return static_cast<std::size_t>(std::count_if(
        pool.circuits.begin(), pool.circuits.end(),
        [&](const Circuit& c) { return !c.dirty && c.target_centroid == t; }));
  };
  auto top_up = [&](const TargetClass& t, std::size_t want) {
    for (std::size_t have = clean_count(t); have < want; ++have) {
      pool.add(build(t));
      actions.builds.push_back(t);
    }
  };
  for (std::size_t k = 0; k < config.prebuild_centroids; ++k) top_up(TargetClass{k}, 1);
  for (const auto& t : recent_targets) top_up(t, config.n_circuits);
  return actions;
}

}  // namespace relaysel

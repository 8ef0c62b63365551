#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "relaysel/error.hpp"
#include "relaysel/geo.hpp"
#include "relaysel/network.hpp"
#include "relaysel/rng.hpp"

namespace relaysel {

enum class SelectionMode { vanilla, combined, tuning, distance_first, bandwidth_first };

inline const char* to_string(SelectionMode m) {
  switch (m) {
    case SelectionMode::vanilla: return "vanilla";
    case SelectionMode::combined: return "combined";
    case SelectionMode::tuning: return "tuning";
    case SelectionMode::distance_first: return "distance_first";
    case SelectionMode::bandwidth_first: return "bandwidth_first";
  }
  return "?";
}

inline SelectionMode parse_selection_mode(std::string_view s) {
  for (auto m : {SelectionMode::vanilla, SelectionMode::combined, SelectionMode::tuning,
                 SelectionMode::distance_first, SelectionMode::bandwidth_first}) {
    if (s == to_string(m)) return m;
  }
  throw ParseError("unknown selection mode '" + std::string(s) + "'");
}

// How the guard's distance term is formed when the guard is chosen ahead of
// the rest of the path. `client_only` drops the anchor leg entirely (nearby
// guards).
enum class GuardDistance { anchored, client_only };

struct TuningParams {
  double s = 0.0;       // selection parameter, 0 <= s <= s_max
  double p = 2.0;       // curvature, > 0 and != 1
  double g_min = 1.0;   // smallest admissible share of the top-ranked pool
  double s_max = 20.0;

  void validate() const {
    if (!(s_max > 0.0)) throw UsageError("tuning: s_max must be positive");
    if (!(s >= 0.0 && s <= s_max)) throw UsageError("tuning: s must be in [0, s_max]");
    if (!(p > 0.0) || p == 1.0) throw UsageError("tuning: p must be positive and != 1");
    if (!(g_min >= 0.0 && g_min <= 1.0)) throw UsageError("tuning: g_min must be in [0, 1]");
  }
};

struct SelectionParams {
  double alpha = 1.0;
  double lambda = 0.5;
  SelectionMode mode = SelectionMode::combined;
  GuardDistance guard_distance = GuardDistance::anchored;
  TuningParams tuning{};

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("alpha must be in [0, 1]");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw UsageError("lambda must be in [0, 1]");
    if (mode == SelectionMode::tuning) tuning.validate();
  }

  bool uses_geography() const noexcept {
    return mode != SelectionMode::vanilla && !(mode == SelectionMode::combined && alpha == 1.0);
  }
};

struct WeightInputs {
  double w_b = 0.0;    // B_i / B_max
  double w_d = 0.0;    // 1 - D_i / D_max
  double d_i = 0.0;    // km
  double d_max = 0.0;  // km
};

struct PathTriple {
  RelayIndex entry = 0;
  RelayIndex middle = 0;
  RelayIndex exit = 0;

  friend bool operator==(const PathTriple&, const PathTriple&) = default;
};

// ---------------------------------------------------------------------------
// Weight arithmetic and per-position distances.

inline double combined_weight(double w_b, double w_d, double alpha) {
  return alpha * w_b + (1.0 - alpha) * w_d;
}

// `origin` is the client, or the pinned guard once one exists.
inline double exit_distance(const GeoPoint& origin, const GeoPoint& exit, const GeoPoint& dest,
                            double lambda) {
  return (1.0 - lambda) * great_circle_km(origin, exit) + lambda * great_circle_km(exit, dest);
}

// `anchor` is the chosen exit, or a target centroid when the guard is picked
// before any exit exists.
inline double entry_distance(const GeoPoint& client, const GeoPoint& entry, const GeoPoint& anchor,
                             double lambda) {
  return lambda * great_circle_km(client, entry) + (1.0 - lambda) * great_circle_km(entry, anchor);
}

inline double middle_distance(const GeoPoint& entry, const GeoPoint& middle, const GeoPoint& exit) {
  return great_circle_km(entry, middle) + great_circle_km(middle, exit);
}

// Client -> guard -> middle -> exit -> destination.
inline double path_length_km(const GeoPoint& client, const GeoPoint& guard, const GeoPoint& middle,
                             const GeoPoint& exit, const GeoPoint& dest) {
  return great_circle_km(client, guard) + great_circle_km(guard, middle) +
         great_circle_km(middle, exit) + great_circle_km(exit, dest);
}

// What a position's distance is measured against. Fields are filled in as the
// path is built: exit first, then entry, then middle.
struct DistanceContext {
  GeoPoint client;
  GeoPoint target;                    // destination or target centroid
  std::optional<GeoPoint> guard;      // pinned guard, if any
  std::optional<GeoPoint> exit;       // chosen exit, if any
  std::optional<GeoPoint> entry;      // chosen entry, if any
};

inline double position_distance(Position pos, const GeoPoint& relay, const DistanceContext& ctx,
                                 const SelectionParams& params) {
  switch (pos) {
    case Position::exit:
      return exit_distance(ctx.guard.value_or(ctx.client), relay, ctx.target, params.lambda);
    case Position::guard:
      if (params.guard_distance == GuardDistance::client_only) {
        return great_circle_km(ctx.client, relay);
      }
      return entry_distance(ctx.client, relay, ctx.exit.value_or(ctx.target), params.lambda);
    case Position::middle: {
      if (!ctx.entry || !ctx.exit) throw UsageError("middle distance needs entry and exit");
      return middle_distance(*ctx.entry, relay, *ctx.exit);
    }
  }
  return 0.0;
}

// Eligible relays for a position minus the ones already on the path.
inline std::vector<RelayIndex> position_candidates(const NetworkSnapshot& snap, Position pos,
                                                   std::span<const RelayIndex> excluded = {}) {
  std::vector<RelayIndex> out;
  for (auto i : snap.eligible(pos)) {
    if (std::find(excluded.begin(), excluded.end(), i) == excluded.end()) out.push_back(i);
  }
  return out;
}

// Bandwidth ratio against the snapshot-wide maximum for the position, and the
// distance ratio against the largest distance within this candidate set.
inline std::vector<WeightInputs> position_inputs(const NetworkSnapshot& snap,
                                                 std::span<const RelayIndex> candidates,
                                                 Position pos, const DistanceContext& ctx,
                                                 const SelectionParams& params) {
  if (candidates.empty()) {
    throw SelectionError(std::string("no candidates for position ") + to_string(pos));
  }
  std::vector<WeightInputs> out(candidates.size());
  const double b_max = snap.max_bandwidth(pos);
  const bool need_distance = params.uses_geography();
  double d_max = 0.0;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto& r = snap.relay(candidates[k]);
    out[k].w_b = b_max > 0.0 ? r.bandwidth(pos) / b_max : 0.0;
    if (need_distance) {
      out[k].d_i = position_distance(pos, r.location, ctx, params);
      d_max = std::max(d_max, out[k].d_i);
    }
  }
  for (auto& in : out) {
    in.d_max = d_max;
    // all candidates at distance zero: every one of them is "closest"
    in.w_d = d_max > 0.0 ? 1.0 - in.d_i / d_max : 1.0;
  }
  return out;
}

inline std::vector<double> combine(std::span<const WeightInputs> inputs,
                                   const SelectionParams& params) {
  std::vector<double> w(inputs.size());
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    w[k] = params.mode == SelectionMode::vanilla
               ? inputs[k].w_b
               : combined_weight(inputs[k].w_b, inputs[k].w_d, params.alpha);
  }
  return w;
}

inline std::vector<double> position_weights(const NetworkSnapshot& snap,
                                            std::span<const RelayIndex> candidates, Position pos,
                                            const DistanceContext& ctx,
                                            const SelectionParams& params) {
  return combine(position_inputs(snap, candidates, pos, ctx, params), params);
}

// ---------------------------------------------------------------------------
// Samplers. Each returns a position in the weight list.

// Inverse-CDF draw proportional to weight. Zero-weight entries are never
// returned.
inline std::size_t weighted_pick(std::span<const double> weights, Rng& rng) {
  double total = 0.0;
  std::size_t last_positive = weights.size();
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) {
      throw SelectionError("weighted_pick: weights must be finite and >= 0");
    }
    if (weights[i] > 0.0) {
      total += weights[i];
      last_positive = i;
    }
  }
  if (!(total > 0.0)) throw SelectionError("weighted_pick: all weights are zero");
  const double target = rng.uniform() * total;
  double cum = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    cum += weights[i];
    if (target < cum) return i;
  }
  return last_positive;
}

// Modified Snader-Borisov family:
//   f_s(x) = (1 - p^{s x}) / (1 - p^s) * (1 - (1 - g_min) / s_max * s)
// with the s -> 0 limit taken as f(x) = x.
inline double tuning_f(double x, const TuningParams& t) {
  if (t.s == 0.0) return x;
  const double shape = (1.0 - std::pow(t.p, t.s * x)) / (1.0 - std::pow(t.p, t.s));
  return shape * (1.0 - (1.0 - t.g_min) / t.s_max * t.s);
}

// Rank-based draw: order candidates by descending weight (stable), then take
// rank floor(n * f_s(u)) for u uniform in [0, 1). Larger s pushes the draw
// towards the top ranks and never past the g_min share at s = s_max.
inline std::size_t tuning_select(std::span<const double> weights, const TuningParams& t,
                                 Rng& rng) {
  const std::size_t n = weights.size();
  if (n == 0) throw SelectionError("tuning_select: no candidates");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return weights[a] > weights[b]; });
  const double f = tuning_f(rng.uniform(), t);
  auto rank = static_cast<std::size_t>(std::floor(static_cast<double>(n) * f));
  rank = std::min(rank, n - 1);
  return order[rank];
}

// Like weighted_pick, but falls back to a uniform draw when every weight is
// zero.
inline std::size_t weighted_or_uniform(std::span<const double> weights, Rng& rng) {
  const bool any = std::any_of(weights.begin(), weights.end(), [](double w) { return w > 0.0; });
  return any ? weighted_pick(weights, rng) : rng.index(weights.size());
}

enum class BucketOrder { distance_first, bandwidth_first };

struct BucketDraw {
  std::vector<std::size_t> bucket;  // stage-one picks, in draw order
  std::size_t chosen = 0;
};

// Two-stage narrowing. Stage one fills a bucket of floor(sqrt(n)) distinct
// candidates by repeated weighted draws without replacement on the first
// metric; stage two draws within the bucket on the other metric.
inline BucketDraw bucket_draw(std::span<const WeightInputs> inputs, BucketOrder order, Rng& rng) {
  const std::size_t n = inputs.size();
  if (n == 0) throw SelectionError("bucket_select: no candidates");
  const auto k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n)))));
  const bool distance_first = order == BucketOrder::distance_first;

  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  std::vector<double> w;
  BucketDraw out;
  while (out.bucket.size() < k) {
    w.clear();
    for (auto i : pool) w.push_back(distance_first ? inputs[i].w_d : inputs[i].w_b);
    const std::size_t at = weighted_or_uniform(w, rng);
    out.bucket.push_back(pool[at]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(at));
  }
  w.clear();
  for (auto i : out.bucket) w.push_back(distance_first ? inputs[i].w_b : inputs[i].w_d);
  out.chosen = out.bucket[weighted_or_uniform(w, rng)];
  return out;
}

inline std::size_t bucket_select(std::span<const WeightInputs> inputs, BucketOrder order,
                                 Rng& rng) {
  return bucket_draw(inputs, order, rng).chosen;
}

// Dispatches on the selection mode.
inline std::size_t pick_by_mode(std::span<const WeightInputs> inputs,
                                const SelectionParams& params, Rng& rng) {
  switch (params.mode) {
    case SelectionMode::vanilla:
    case SelectionMode::combined: {
      // every weight can be zero (alpha = 0 with a lone candidate, which is
      // also the farthest); all candidates are then equally acceptable
      const auto w = combine(inputs, params);
      return weighted_or_uniform(w, rng);
    }
    case SelectionMode::tuning: {
      const auto w = combine(inputs, params);
      return tuning_select(w, params.tuning, rng);
    }
    case SelectionMode::distance_first:
      return bucket_select(inputs, BucketOrder::distance_first, rng);
    case SelectionMode::bandwidth_first:
      return bucket_select(inputs, BucketOrder::bandwidth_first, rng);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Path construction.

// Exit first (measured from the pinned guard when there is one), then the
// entry anchored on that exit, then the middle between them. No relay
// appears twice.
inline PathTriple build_path(const GeoPoint& client, const GeoPoint& dest,
                             const NetworkSnapshot& snap, const SelectionParams& params,
                             std::optional<RelayIndex> pinned_guard, Rng& rng) {
  DistanceContext ctx{client, dest, std::nullopt, std::nullopt, std::nullopt};
  std::vector<RelayIndex> used;
  if (pinned_guard) {
    if (!snap.relay(*pinned_guard).guard_flag) {
      throw SelectionError("pinned guard '" + snap.relay(*pinned_guard).id + "' lacks guard flag");
    }
    ctx.guard = snap.relay(*pinned_guard).location;
    used.push_back(*pinned_guard);
  }

  auto choose = [&](Position pos) {
    const auto cand = position_candidates(snap, pos, used);
    if (cand.empty()) {
      throw SelectionError(std::string("exhausted candidates for position ") + to_string(pos));
    }
    const auto inputs = position_inputs(snap, cand, pos, ctx, params);
    const RelayIndex r = cand[pick_by_mode(inputs, params, rng)];
    used.push_back(r);
    return r;
  };

  PathTriple path;
  path.exit = choose(Position::exit);
  ctx.exit = snap.relay(path.exit).location;
  if (pinned_guard) {
    path.entry = *pinned_guard;
  } else {
    // guard pinning is the only case where the guard term is not anchored on
    // the chosen exit
    SelectionParams entry_params = params;
    entry_params.guard_distance = GuardDistance::anchored;
    const auto cand = position_candidates(snap, Position::guard, used);
    if (cand.empty()) throw SelectionError("exhausted candidates for position guard");
    const auto inputs = position_inputs(snap, cand, Position::guard, ctx, entry_params);
    path.entry = cand[pick_by_mode(inputs, params, rng)];
    used.push_back(path.entry);
  }
  ctx.entry = snap.relay(path.entry).location;
  path.middle = choose(Position::middle);
  return path;
}

// Long-lived guard choice. The anchor is the target centroid nearest the
// client (or the client itself when no centroids are known).
inline RelayIndex select_guard(const GeoPoint& client, const NetworkSnapshot& snap,
                               const SelectionParams& params, const CentroidSet& centroids,
                               Rng& rng) {
  const auto cand = position_candidates(snap, Position::guard);
  if (cand.empty()) throw SelectionError("no guard-flagged relays");
  const GeoPoint anchor = centroids.empty() ? client : centroids[closest_centroid(client, centroids)];
  DistanceContext ctx{client, anchor, std::nullopt, std::nullopt, std::nullopt};
  const auto inputs = position_inputs(snap, cand, Position::guard, ctx, params);
  return cand[pick_by_mode(inputs, params, rng)];
}

// ---------------------------------------------------------------------------
// Greedy-versus-optimal path length.

struct MapdReport {
  std::vector<double> lambdas;
  std::vector<double> deviations;  // mean |L_greedy - L_opt| / L_opt per lambda

  std::size_t argmin() const {
    return static_cast<std::size_t>(
        std::min_element(deviations.begin(), deviations.end()) - deviations.begin());
  }
};

struct MapdOptions {
  std::size_t max_triples = 50'000'000;
};

namespace selection_detail {

// Highest weight wins; equal weights go to the lexicographically lowest id.
inline RelayIndex argmax_weight(const NetworkSnapshot& snap, std::span<const RelayIndex> cand,
                                std::span<const double> w) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < cand.size(); ++k) {
    if (w[k] > w[best] || (w[k] == w[best] && snap.relay(cand[k]).id < snap.relay(cand[best]).id)) {
      best = k;
    }
  }
  return cand[best];
}

}  // namespace selection_detail

// The path the weighting prefers when every draw is replaced by its argmax.
inline PathTriple greedy_path(const GeoPoint& client, const GeoPoint& dest,
                              const NetworkSnapshot& snap, const SelectionParams& params) {
  DistanceContext ctx{client, dest, std::nullopt, std::nullopt, std::nullopt};
  std::vector<RelayIndex> used;
  auto choose = [&](Position pos) {
    const auto cand = position_candidates(snap, pos, used);
    const auto w = position_weights(snap, cand, pos, ctx, params);
    const auto r = selection_detail::argmax_weight(snap, cand, w);
    used.push_back(r);
    return r;
  };
  PathTriple p;
  p.exit = choose(Position::exit);
  ctx.exit = snap.relay(p.exit).location;
  p.entry = choose(Position::guard);
  ctx.entry = snap.relay(p.entry).location;
  p.middle = choose(Position::middle);
  return p;
}

// Shortest client->guard->middle->exit->dest length over every distinct
// triple, by exhaustive enumeration.
inline double optimal_path_length(const GeoPoint& client, const GeoPoint& dest,
                                  const NetworkSnapshot& snap, const MapdOptions& opts = {}) {
  const auto guards = snap.eligible(Position::guard);
  const auto middles = snap.eligible(Position::middle);
  const auto exits = snap.eligible(Position::exit);
  const double triples = static_cast<double>(guards.size()) * static_cast<double>(middles.size()) *
                         static_cast<double>(exits.size());
  if (triples > static_cast<double>(opts.max_triples)) {
    throw UsageError("mapd: brute-force budget exceeded (" + std::to_string(triples) + " triples)");
  }
  std::vector<double> to_dest(exits.size());
  for (std::size_t e = 0; e < exits.size(); ++e) {
    to_dest[e] = great_circle_km(snap.relay(exits[e]).location, dest);
  }
  double best = std::numeric_limits<double>::infinity();
  for (auto g : guards) {
    const auto& gl = snap.relay(g).location;
    const double cg = great_circle_km(client, gl);
    for (auto m : middles) {
      if (m == g) continue;
      const auto& ml = snap.relay(m).location;
      const double gm = cg + great_circle_km(gl, ml);
      if (gm >= best) continue;
      for (std::size_t e = 0; e < exits.size(); ++e) {
        const auto x = exits[e];
        if (x == g || x == m) continue;
        const double len = gm + great_circle_km(ml, snap.relay(x).location) + to_dest[e];
        best = std::min(best, len);
      }
    }
  }
  if (!std::isfinite(best)) throw SelectionError("mapd: no feasible triple");
  return best;
}

inline MapdReport mapd_eval(const GeoPoint& client, std::span<const GeoPoint> dests,
                            const NetworkSnapshot& snap, std::span<const double> lambda_grid,
                            SelectionParams params, const MapdOptions& opts = {}) {
  if (dests.empty()) throw UsageError("mapd: no destinations");
  std::vector<double> optimal;
  optimal.reserve(dests.size());
  for (const auto& d : dests) optimal.push_back(optimal_path_length(client, d, snap, opts));

  MapdReport report;
  for (double lambda : lambda_grid) {
    params.lambda = lambda;
    params.validate();
    double sum = 0.0;
    for (std::size_t i = 0; i < dests.size(); ++i) {
      const auto p = greedy_path(client, dests[i], snap, params);
      const double len = path_length_km(client, snap.relay(p.entry).location,
                                        snap.relay(p.middle).location,
                                        snap.relay(p.exit).location, dests[i]);
      if (optimal[i] > 0.0) {
        sum += std::abs(len - optimal[i]) / optimal[i];
      } else if (len > 0.0) {
        sum += std::numeric_limits<double>::infinity();
      }
    }
    report.lambdas.push_back(lambda);
    report.deviations.push_back(sum / static_cast<double>(dests.size()));
  }
  return report;
}

}  // namespace relaysel

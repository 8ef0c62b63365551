#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "relaysel/error.hpp"
#include "relaysel/rng.hpp"

namespace relaysel {

inline constexpr double kEarthRadiusKm = 6371.0;

// A validated latitude/longitude pair in degrees.
class GeoPoint {
 public:
  GeoPoint() = default;
  GeoPoint(double lat, double lon) : lat_(lat), lon_(lon) {
    if (!std::isfinite(lat) || !std::isfinite(lon) || lat < -90.0 || lat > 90.0 ||
        lon < -180.0 || lon > 180.0) {
      throw InvariantError("invalid geo point (" + std::to_string(lat) + ", " +
                           std::to_string(lon) + ")");
    }
  }

  double lat() const noexcept { return lat_; }
  double lon() const noexcept { return lon_; }

  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;

 private:
  double lat_ = 0.0;
  double lon_ = 0.0;
};

namespace geo_detail {

inline double radians(double deg) { return deg * std::numbers::pi / 180.0; }
inline double degrees(double rad) { return rad * 180.0 / std::numbers::pi; }

inline std::array<double, 3> to_unit(const GeoPoint& p) {
  const double phi = radians(p.lat());
  const double lam = radians(p.lon());
  return {std::cos(phi) * std::cos(lam), std::cos(phi) * std::sin(lam), std::sin(phi)};
}

inline GeoPoint from_vector(const std::array<double, 3>& v) {
  const double norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  const double z = std::clamp(v[2] / norm, -1.0, 1.0);
  return GeoPoint(degrees(std::asin(z)), degrees(std::atan2(v[1], v[0])));
}

}  // namespace geo_detail

// Great-circle distance on a spherical Earth. The central angle is taken from
// atan2(|a x b|, a . b), which stays accurate for coincident and antipodal
// points alike. Arguments are put in a canonical order so the result is
// bit-for-bit symmetric.
inline double great_circle_km(const GeoPoint& a, const GeoPoint& b) {
  const bool swap = b.lat() < a.lat() || (b.lat() == a.lat() && b.lon() < a.lon());
  const GeoPoint& p = swap ? b : a;
  const GeoPoint& q = swap ? a : b;
  using geo_detail::radians;
  const double phi1 = radians(p.lat());
  const double phi2 = radians(q.lat());
  const double dlam = radians(q.lon() - p.lon());
  const double c1 = std::cos(phi1), s1 = std::sin(phi1);
  const double c2 = std::cos(phi2), s2 = std::sin(phi2);
  const double x = c2 * std::sin(dlam);
  const double y = c1 * s2 - s1 * c2 * std::cos(dlam);
  const double num = std::hypot(x, y);
  const double den = s1 * s2 + c1 * c2 * std::cos(dlam);
  return kEarthRadiusKm * std::atan2(num, den);
}

struct CentroidSet {
  std::vector<GeoPoint> centroids;

  std::size_t k() const noexcept { return centroids.size(); }
  bool empty() const noexcept { return centroids.empty(); }
  const GeoPoint& operator[](std::size_t i) const { return centroids.at(i); }
};

// Index of the nearest centroid; ties go to the lowest index.
inline std::size_t closest_centroid(const GeoPoint& p, const CentroidSet& c) {
  if (c.empty()) throw UsageError("closest_centroid: empty centroid set");
  std::size_t best = 0;
  double best_d = great_circle_km(p, c.centroids[0]);
  for (std::size_t i = 1; i < c.k(); ++i) {
    const double d = great_circle_km(p, c.centroids[i]);
    if (d < best_d) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

enum class KMeansInit { uniform, plus_plus };

struct KMeansOptions {
  std::size_t max_iterations = 100;
  std::size_t restarts = 10;            // best of this many seeded runs
  KMeansInit init = KMeansInit::plus_plus;
};

namespace geo_detail {

// Sum of squared great-circle distances to the nearest centroid.
inline double inertia(std::span<const GeoPoint> points, const CentroidSet& c) {
  double s = 0.0;
  for (const auto& p : points) {
    const double d = great_circle_km(p, c[closest_centroid(p, c)]);
    s += d * d;
  }
  return s;
}

inline CentroidSet initial_centroids(std::span<const GeoPoint> points, std::size_t k,
                                     KMeansInit init, Rng& rng) {
  CentroidSet out;
  std::vector<std::size_t> order(points.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (init == KMeansInit::uniform) {
    // k distinct points by partial Fisher-Yates
    for (std::size_t i = 0; i < k; ++i) std::swap(order[i], order[i + rng.index(order.size() - i)]);
    for (std::size_t i = 0; i < k; ++i) out.centroids.push_back(points[order[i]]);
    return out;
  }
  // k-means++: each further seed drawn with probability proportional to the
  // squared distance to the nearest seed so far
  std::vector<bool> taken(points.size(), false);
  std::size_t first = rng.index(points.size());
  taken[first] = true;
  out.centroids.push_back(points[first]);
  std::vector<double> d2(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double d = great_circle_km(points[i], points[first]);
    d2[i] = d * d;
  }
  while (out.k() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) total += taken[i] ? 0.0 : d2[i];
    std::size_t pick = points.size();
    if (total > 0.0) {
      double target = rng.uniform() * total;
      for (std::size_t i = 0; i < points.size(); ++i) {
        if (taken[i] || d2[i] <= 0.0) continue;
        pick = i;
        if (target < d2[i]) break;
        target -= d2[i];
      }
    }
    if (pick == points.size()) {
      // the rest coincide with chosen seeds: take untaken points uniformly
      std::vector<std::size_t> rest;
      for (std::size_t i = 0; i < points.size(); ++i) {
        if (!taken[i]) rest.push_back(i);
      }
      pick = rest[rng.index(rest.size())];
    }
    taken[pick] = true;
    out.centroids.push_back(points[pick]);
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double d = great_circle_km(points[i], points[pick]);
      d2[i] = std::min(d2[i], d * d);
    }
  }
  return out;
}

// Lloyd iterations from the given start. The update takes the mean of the
// members' unit vectors and projects it back onto the sphere.
inline CentroidSet lloyd(std::span<const GeoPoint> points, CentroidSet out, std::size_t max_iterations) {
  const std::size_t k = out.k();
  std::vector<std::array<double, 3>> unit;
  unit.reserve(points.size());
  for (const auto& p : points) unit.push_back(to_unit(p));

  std::vector<std::size_t> assign(points.size(), k);
  for (std::size_t iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const std::size_t c = closest_centroid(points[i], out);
      if (c != assign[i]) {
        assign[i] = c;
        changed = true;
      }
    }
    if (!changed) break;

    std::vector<std::array<double, 3>> sum(k, {0.0, 0.0, 0.0});
    std::vector<std::size_t> members(k, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      for (int d = 0; d < 3; ++d) sum[assign[i]][d] += unit[i][d];
      ++members[assign[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      const auto& s = sum[c];
      const double norm = std::sqrt(s[0] * s[0] + s[1] * s[1] + s[2] * s[2]);
      // empty cluster or members that cancel out: keep the old centroid
      if (members[c] == 0 || norm < 1e-12) continue;
      out.centroids[c] = from_vector(s);
    }
  }
  return out;
}

}  // namespace geo_detail

// Lloyd's algorithm under the great-circle metric, restarted from several
// seeded initialisations; the run with the lowest inertia wins (first one on
// ties).
inline CentroidSet kmeans(std::span<const GeoPoint> points, std::size_t k, std::uint64_t seed,
                          KMeansOptions opts = {}) {
  if (points.empty()) throw UsageError("kmeans: no points");
  if (k == 0 || k > points.size()) {
    throw UsageError("kmeans: k=" + std::to_string(k) + " with " +
                     std::to_string(points.size()) + " points");
  }
  if (opts.restarts == 0) throw UsageError("kmeans: restarts must be positive");
  Rng rng(seed);
  CentroidSet best;
  double best_inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < opts.restarts; ++r) {
    auto c = geo_detail::lloyd(points, geo_detail::initial_centroids(points, k, opts.init, rng),
                               opts.max_iterations);
    const double in = geo_detail::inertia(points, c);
    if (in < best_inertia) {
      best_inertia = in;
      best = std::move(c);
    }
  }
  return best;
}

// A lat/lon box used to scatter synthetic nodes. Latitude is sampled
// area-uniformly (uniform in sin(lat)).
struct Region {
  std::string name;
  double lat_min = -90.0, lat_max = 90.0;
  double lon_min = -180.0, lon_max = 180.0;
  double weight = 1.0;
};

inline GeoPoint sample_in_region(const Region& r, Rng& rng) {
  using geo_detail::degrees;
  using geo_detail::radians;
  const double z0 = std::sin(radians(r.lat_min));
  const double z1 = std::sin(radians(r.lat_max));
  const double lat = degrees(std::asin(std::clamp(rng.uniform(z0, z1), -1.0, 1.0)));
  const double lon = rng.uniform(r.lon_min, r.lon_max);
  return GeoPoint(std::clamp(lat, -90.0, 90.0), std::clamp(lon, -180.0, 180.0));
}

// Picks a region proportionally to its weight, then a point inside it.
inline GeoPoint sample_location(std::span<const Region> regions, Rng& rng) {
  if (regions.empty()) throw UsageError("sample_location: no regions");
  double total = 0.0;
  for (const auto& r : regions) total += r.weight;
  double target = rng.uniform() * total;
  for (const auto& r : regions) {
    if (target < r.weight) return sample_in_region(r, rng);
    target -= r.weight;
  }
  return sample_in_region(regions.back(), rng);
}

namespace regions {

inline std::vector<Region> whole_globe() { return {Region{"globe"}}; }

// Rough shape of where relays sit: mostly Europe and North America.
inline std::vector<Region> relay_like() {
  return {
      {"western-europe", 43.0, 56.0, -5.0, 16.0, 0.45},
      {"northern-europe", 55.0, 65.0, 5.0, 30.0, 0.08},
      {"eastern-europe", 44.0, 58.0, 16.0, 40.0, 0.08},
      {"north-america-east", 30.0, 47.0, -90.0, -70.0, 0.15},
      {"north-america-west", 32.0, 49.0, -124.0, -100.0, 0.08},
      {"east-asia", 22.0, 40.0, 110.0, 142.0, 0.05},
      {"south-america", -35.0, -5.0, -70.0, -40.0, 0.03},
      {"oceania", -38.0, -27.0, 140.0, 153.0, 0.03},
      {"russia", 50.0, 60.0, 37.0, 90.0, 0.06},
  };
}

// Rough shape of where clients sit.
inline std::vector<Region> client_like() {
  return {
      {"north-america", 30.0, 48.0, -122.0, -72.0, 0.20},
      {"western-europe", 42.0, 56.0, -5.0, 16.0, 0.25},
      {"russia", 50.0, 60.0, 30.0, 90.0, 0.12},
      {"middle-east", 25.0, 38.0, 44.0, 60.0, 0.08},
      {"south-america", -30.0, -5.0, -65.0, -38.0, 0.07},
      {"south-asia", 10.0, 30.0, 70.0, 88.0, 0.08},
      {"east-asia", 22.0, 40.0, 105.0, 140.0, 0.08},
      {"eastern-europe", 44.0, 56.0, 16.0, 40.0, 0.08},
      {"oceania", -38.0, -27.0, 140.0, 153.0, 0.04},
  };
}

// Where popular destinations sit.
inline std::vector<Region> destination_like() {
  return {
      {"us-west", 33.0, 48.0, -123.0, -117.0, 0.30},
      {"us-east", 35.0, 42.0, -80.0, -72.0, 0.30},
      {"europe", 48.0, 54.0, -2.0, 12.0, 0.25},
      {"east-asia", 22.0, 37.0, 113.0, 140.0, 0.15},
  };
}

}  // namespace regions

}  // namespace relaysel

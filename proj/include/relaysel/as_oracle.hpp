#pragma once

#include <algorithm>
#include <array>
#include <iterator>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "relaysel/error.hpp"
#include "relaysel/geo.hpp"

namespace relaysel {

using AsNumber = std::uint32_t;
using AsSet = std::vector<AsNumber>;  // sorted, unique

struct Endpoint {
  std::string id;
  GeoPoint location;
};

// Source of autonomous-system paths between two endpoints. Directions are
// distinct: path(a, b) need not equal path(b, a).
class AsPathOracle {
 public:
  virtual ~AsPathOracle() = default;
  virtual std::optional<AsSet> path(const Endpoint& from, const Endpoint& to) const = 0;
  virtual std::optional<AsNumber> home_as(const Endpoint& e) const = 0;
};

inline AsSet normalize(AsSet s) {
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

// Synthetic default: the globe is cut into square lat/lon cells, each cell an
// AS. A path collects the cells under its great-circle segment. Eastbound and
// westbound traffic use grids offset by half a cell, so forward and reverse
// routes differ.
class GridAsOracle final : public AsPathOracle {
 public:
  explicit GridAsOracle(double cell_deg = 10.0, double step_km = 50.0)
      : cell_deg_(cell_deg), step_km_(step_km) {
    if (!(cell_deg > 0.0 && cell_deg <= 90.0 && step_km > 0.0)) {
      throw UsageError("grid oracle: cell size in (0, 90] and positive step required");
    }
  }

  std::optional<AsSet> path(const Endpoint& from, const Endpoint& to) const override {
    const bool westbound = to.location.lon() < from.location.lon();
    const double offset = westbound ? cell_deg_ / 2.0 : 0.0;
    const AsNumber grid_base = westbound ? kWestBase : 0;
    AsSet out{cell(from.location, 0.0, 0), cell(to.location, 0.0, 0)};
    const double d = great_circle_km(from.location, to.location);
    const auto steps = static_cast<std::size_t>(std::ceil(d / step_km_));
    if (steps > 1) {
      const auto a = geo_detail::to_unit(from.location);
      const auto b = geo_detail::to_unit(to.location);
      const double omega = d / kEarthRadiusKm;
      const double so = std::sin(omega);
      for (std::size_t i = 1; i < steps; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(steps);
        std::array<double, 3> v{};
        if (so < 1e-12) break;
        const double ka = std::sin((1.0 - t) * omega) / so;
        const double kb = std::sin(t * omega) / so;
        for (int k = 0; k < 3; ++k) v[k] = ka * a[k] + kb * b[k];
        out.push_back(cell(geo_detail::from_vector(v), offset, grid_base));
      }
    }
    return normalize(std::move(out));
  }

  std::optional<AsNumber> home_as(const Endpoint& e) const override {
    return cell(e.location, 0.0, 0);
  }

 private:
  static constexpr AsNumber kWestBase = 1'000'000;

  AsNumber cell(const GeoPoint& p, double offset, AsNumber base) const {
    const auto rows = static_cast<long>(std::ceil(180.0 / cell_deg_)) + 1;
    const auto cols = static_cast<long>(std::ceil(360.0 / cell_deg_)) + 1;
    const auto r = std::clamp(static_cast<long>(std::floor((p.lat() + 90.0 + offset) / cell_deg_)), 0L, rows - 1);
    const auto c = std::clamp(static_cast<long>(std::floor((p.lon() + 180.0 + offset) / cell_deg_)), 0L, cols - 1);
    return base + static_cast<AsNumber>(r * cols + c) + 1;
  }

  double cell_deg_;
  double step_km_;
};

// Explicit (from id, to id) -> AS set table. Unknown pairs fail.
class TableAsOracle final : public AsPathOracle {
 public:
  void set_path(const std::string& from, const std::string& to, AsSet ases) {
    paths_[{from, to}] = normalize(std::move(ases));
  }
  void set_home(const std::string& id, AsNumber as) { home_[id] = as; }

  std::optional<AsSet> path(const Endpoint& from, const Endpoint& to) const override {
    auto it = paths_.find({from.id, to.id});
    if (it == paths_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<AsNumber> home_as(const Endpoint& e) const override {
    auto it = home_.find(e.id);
    if (it == home_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::map<std::pair<std::string, std::string>, AsSet> paths_;
  std::map<std::string, AsNumber> home_;
};

// True when some AS (other than the client's or destination's own) sits on
// both the entry side (client<->guard, either direction) and the exit side
// (exit<->destination, either direction).
inline bool as_compromised(const AsPathOracle& oracle, const Endpoint& client,
                           const Endpoint& guard, const Endpoint& exit, const Endpoint& dest) {
  auto fetch = [&](const Endpoint& a, const Endpoint& b) {
    auto p = oracle.path(a, b);
    if (!p) throw Error("oracle", "AS oracle has no path " + a.id + " -> " + b.id);
    return normalize(std::move(*p));
  };
  AsSet entry = fetch(client, guard);
  auto back = fetch(guard, client);
  entry.insert(entry.end(), back.begin(), back.end());
  AsSet exit_side = fetch(exit, dest);
  auto back2 = fetch(dest, exit);
  exit_side.insert(exit_side.end(), back2.begin(), back2.end());
  entry = normalize(std::move(entry));
  exit_side = normalize(std::move(exit_side));

  const auto client_as = oracle.home_as(client);
  const auto dest_as = oracle.home_as(dest);
  AsSet shared;
  std::set_intersection(entry.begin(), entry.end(), exit_side.begin(), exit_side.end(),
                        std::back_inserter(shared));
  return std::any_of(shared.begin(), shared.end(), [&](AsNumber a) {
    return !(client_as && a == *client_as) && !(dest_as && a == *dest_as);
  });
}

}  // namespace relaysel

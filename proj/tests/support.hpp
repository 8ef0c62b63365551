#pragma once

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "relaysel/error.hpp"
#include "relaysel/network.hpp"

namespace testing_support {

using namespace relaysel;

// Independent great-circle reference (haversine form).
inline double haversine_km(const GeoPoint& a, const GeoPoint& b) {
  const double r = std::numbers::pi / 180.0;
  const double dphi = (b.lat() - a.lat()) * r;
  const double dlam = (b.lon() - a.lon()) * r;
  const double h = std::pow(std::sin(dphi / 2), 2) +
                   std::cos(a.lat() * r) * std::cos(b.lat() * r) * std::pow(std::sin(dlam / 2), 2);
  return 2.0 * 6371.0 * std::asin(std::min(1.0, std::sqrt(h)));
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("relaysel_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path file(const std::string& name, const std::string& body) const {
    auto p = path_ / name;
    std::ofstream(p) << body;
    return p;
  }

 private:
  std::filesystem::path path_;
};

inline RelayDescriptor guard(std::string id, double bw, GeoPoint at = {}) {
  RelayDescriptor r;
  r.id = std::move(id);
  r.location = at;
  r.bw_guard = bw;
  r.guard_flag = true;
  return r;
}

inline RelayDescriptor exit_relay(std::string id, double bw, GeoPoint at = {}) {
  RelayDescriptor r;
  r.id = std::move(id);
  r.location = at;
  r.bw_exit = bw;
  r.exit_flag = true;
  return r;
}

inline RelayDescriptor middle(std::string id, double bw, GeoPoint at = {}) {
  RelayDescriptor r;
  r.id = std::move(id);
  r.location = at;
  r.bw_middle = bw;
  return r;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <class F>
std::string error_text(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace testing_support

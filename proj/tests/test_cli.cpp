#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "relaysel/geo.hpp"
#include "relaysel/io.hpp"
#include "relaysel/network.hpp"
#include "support.hpp"

using namespace relaysel;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string err;
};

Result run_cli(const std::string& args, const fs::path& scratch) {
  const auto err_file = scratch / "stderr.txt";
  const std::string cmd = std::string("\"") + RELAYSEL_CLI + "\" " + args + " --quiet 2> \"" +
                          err_file.string() + "\"";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err_file);
  fs::remove(err_file);
  return r;
}

Result run_raw(const std::string& args, const fs::path& scratch) {
  const auto err_file = scratch / "stderr.txt";
  const std::string cmd = std::string("\"") + RELAYSEL_CLI + "\" " + args + " > /dev/null 2> \"" +
                          err_file.string() + "\"";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err_file);
  fs::remove(err_file);
  return r;
}

std::map<std::string, std::string> dir_contents(const fs::path& dir) {
  std::map<std::string, std::string> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = slurp(e.path());
  return out;
}

// Small enough that every subcommand finishes in a second or two.
const char* kTinyScenario = R"({
  "seeds": [3, 4, 5],
  "network": {"synthetic": {"guards": 6, "middles": 10, "exits": 6,
              "bandwidth": {"kind": "log_uniform", "min": 2e6, "max": 6e7}, "seed": 2}},
  "clients": {"synthetic": {"count": 8, "bulk_fraction": 0.25, "seed": 3}},
  "destinations": {"synthetic": {"count": 16, "seed": 4}},
  "centroids": {"k": 3, "seed": 5},
  "selection": {"alpha": 0.7, "lambda": 0.5},
  "pool": {"n_circuits": 2},
  "strategy": "rtt_only",
  "sim": {"duration_s": 400, "warmup_s": 100, "as_oracle": {"cell_deg": 15}},
  "malicious": {"guard_fraction": 0.3, "exit_fraction": 0.3},
  "compare": {"strategies": ["vanilla", "rtt_only:3"]},
  "pathgen": {"paths_per_client": 30, "alphas": [1.0, 0.5]},
  "mapd": {"lambda_step": 0.25},
  "attack": {"paths": 40, "runs": 3, "alphas": [0.5]},
  "nearby_guards": {"months": 2, "client_count": 4, "alphas": [0.0, 1.0]}
})";

}  // namespace

TEST(Cli, ClusterFourBlobs) {
  TempDir tmp;
  const auto out = tmp.path() / "out";
  const auto r = run_cli("cluster --destinations \"" + std::string(RELAYSEL_FIXTURES) +
                             "/four_blobs.jsonl\" --k 4 --out \"" + out.string() + "\"",
                         tmp.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = io::read_json(out / "centroids.json");
  EXPECT_EQ(j["schema_version"], io::kSchemaVersion);
  ASSERT_EQ(j["centroids"].size(), 4u);
  const std::vector<GeoPoint> centers{GeoPoint(48, 8), GeoPoint(38, -95), GeoPoint(-25, 135), GeoPoint(-15, -50)};
  for (const auto& want : centers) {
    double best = 1e9;
    for (const auto& c : j["centroids"]) {
      best = std::min(best, haversine_km(want, GeoPoint(c["lat"].get<double>(), c["lon"].get<double>())));
    }
    EXPECT_LT(best, 150.0);
  }
}

TEST(Cli, MissingSnapshotLeavesNoFiles) {
  TempDir tmp;
  const auto scenario = tmp.file("s.json", R"({"seeds": [1], "network": {"snapshot": "nowhere.jsonl"},
    "clients": {"synthetic": {"count": 3}}, "destinations": {"synthetic": {"count": 3}}})");
  const auto out = tmp.path() / "out";
  fs::create_directories(out);
  const auto r = run_cli("simulate --scenario \"" + scenario.string() + "\" --out \"" + out.string() + "\"", tmp.path());
  EXPECT_NE(r.code, 0);
  EXPECT_TRUE(dir_contents(out).empty());
  // exactly one line, and it parses
  ASSERT_FALSE(r.err.empty());
  EXPECT_EQ(r.err.find('\n'), r.err.size() - 1) << r.err;
  const auto j = io::Json::parse(r.err);
  EXPECT_TRUE(j.contains("error"));
  EXPECT_NE(j["message"].get<std::string>().find("nowhere.jsonl"), std::string::npos);
}

TEST(Cli, UsageErrors) {
  TempDir tmp;
  auto r = run_raw("teleport", tmp.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(io::Json::parse(r.err)["error"], "usage");
  r = run_raw("simulate", tmp.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(io::Json::parse(r.err)["error"], "usage");
  r = run_raw("cluster --k 2 --out \"" + tmp.path().string() + "\"", tmp.path());
  EXPECT_NE(r.code, 0);
  EXPECT_TRUE(io::Json::parse(r.err).contains("error"));
}

TEST(Cli, BadScenarioFieldIsParseError) {
  TempDir tmp;
  const auto scenario = tmp.file("s.json", R"({"seeds": [1], "strategy": "teleport",
    "network": {"synthetic": {"guards": 3, "middles": 3, "exits": 3}},
    "clients": {"synthetic": {"count": 3}}, "destinations": {"synthetic": {"count": 3}}})");
  const auto r = run_cli("simulate --scenario \"" + scenario.string() + "\" --out \"" +
                             (tmp.path() / "o").string() + "\"",
                         tmp.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(io::Json::parse(r.err)["error"], "parse");
  EXPECT_FALSE(fs::exists(tmp.path() / "o" / "summary.json"));
}

TEST(Cli, EverySubcommandIsReplayable) {
  TempDir tmp;
  const auto scenario = tmp.file("tiny.json", kTinyScenario);
  const std::vector<std::string> commands{"simulate", "compare", "pathgen", "mapd",
                                          "attack",   "nearby_guards", "cluster"};
  for (const auto& cmd : commands) {
    std::map<std::string, std::string> first;
    for (int rep = 0; rep < 2; ++rep) {
      const auto out = tmp.path() / (cmd + std::to_string(rep));
      const auto r = run_cli(cmd + " --scenario \"" + scenario.string() + "\" --out \"" + out.string() + "\"",
                             tmp.path());
      ASSERT_EQ(r.code, 0) << cmd << ": " << r.err;
      auto files = dir_contents(out);
      ASSERT_FALSE(files.empty()) << cmd;
      for (const auto& [name, body] : files) {
        if (name.ends_with(".json")) {
          EXPECT_EQ(io::Json::parse(body)["schema_version"], io::kSchemaVersion) << cmd << " " << name;
        }
      }
      if (rep == 0) {
        first = std::move(files);
      } else {
        EXPECT_EQ(files, first) << cmd;
      }
    }
  }
  // gen_network has no scenario
  std::map<std::string, std::string> first;
  for (int rep = 0; rep < 2; ++rep) {
    const auto out = tmp.path() / ("gen" + std::to_string(rep));
    const auto r = run_cli("gen_network --guards 5 --middles 7 --exits 4 --clients 6 --destinations 9 --seed 8 --out \"" +
                               out.string() + "\"",
                           tmp.path());
    ASSERT_EQ(r.code, 0) << r.err;
    auto files = dir_contents(out);
    EXPECT_EQ(files.size(), 3u);
    if (rep == 0) {
      first = std::move(files);
    } else {
      EXPECT_EQ(files, first);
    }
  }
}

TEST(Cli, SeedOverrideChangesOutput) {
  TempDir tmp;
  const auto scenario = tmp.file("tiny.json", kTinyScenario);
  auto go = [&](const std::string& extra, const std::string& name) {
    const auto out = tmp.path() / name;
    const auto r = run_cli("simulate --scenario \"" + scenario.string() + "\" --out \"" + out.string() + "\" " + extra,
                           tmp.path());
    EXPECT_EQ(r.code, 0) << r.err;
    return slurp(out / "streams.csv");
  };
  const auto base = go("", "a");
  EXPECT_EQ(go("--seed 3", "b"), base);
  EXPECT_NE(go("--seed 99", "c"), base);
}

TEST(Cli, GeneratedFilesFeedAScenario) {
  TempDir tmp;
  const auto gen = tmp.path() / "net";
  ASSERT_EQ(run_cli("gen_network --guards 6 --middles 9 --exits 5 --bw-kind uniform --bw-min 1e6 --bw-max 9e6 "
                    "--clients 5 --destinations 12 --seed 2 --out \"" + gen.string() + "\"",
                    tmp.path()).code,
            0);
  const auto snap = load_snapshot(gen / "snapshot.jsonl");
  EXPECT_EQ(snap.size(), 20u);
  const auto scenario = tmp.file("s.json", R"({"seeds": [1, 2, 3],
    "network": {"snapshot": "net/snapshot.jsonl"},
    "clients": {"file": "net/clients.jsonl"},
    "destinations": {"file": "net/destinations.jsonl"},
    "selection": {"mode": "vanilla"},
    "sim": {"duration_s": 300, "warmup_s": 60},
    "output": "results"})");
  const auto r = run_cli("simulate --scenario \"" + scenario.string() + "\"", tmp.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto summary = io::read_json(tmp.path() / "results" / "summary.json");
  EXPECT_EQ(summary["clients"].size(), 5u);
  EXPECT_GT(summary["streams_after_warmup"].get<int>(), 0);
}

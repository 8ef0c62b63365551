#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "relaysel/selection.hpp"
#include "support.hpp"

using namespace relaysel;
using namespace testing_support;

namespace {

SelectionParams combined(double alpha, double lambda) {
  SelectionParams p;
  p.alpha = alpha;
  p.lambda = lambda;
  return p;
}

NetworkSnapshot random_net(Rng& gen, std::size_t ng, std::size_t nm, std::size_t ne,
                           bool overlap) {
  std::vector<RelayDescriptor> relays;
  auto at = [&] { return GeoPoint(gen.uniform(-60, 70), gen.uniform(-180, 180)); };
  for (std::size_t i = 0; i < ng; ++i) relays.push_back(guard("g" + std::to_string(i), gen.uniform(1, 100), at()));
  for (std::size_t i = 0; i < nm; ++i) relays.push_back(middle("m" + std::to_string(i), gen.uniform(1, 100), at()));
  for (std::size_t i = 0; i < ne; ++i) relays.push_back(exit_relay("e" + std::to_string(i), gen.uniform(1, 100), at()));
  if (overlap) {
    // a few relays that can serve every position
    for (int i = 0; i < 3; ++i) {
      auto r = guard("x" + std::to_string(i), gen.uniform(1, 100), at());
      r.bw_middle = gen.uniform(1, 100);
      r.bw_exit = gen.uniform(1, 100);
      r.exit_flag = true;
      relays.push_back(r);
    }
  }
  return NetworkSnapshot(std::move(relays));
}

// Inverse-CDF walk written out independently of the library.
std::size_t replay_pick(const std::vector<double>& w, double u) {
  double total = 0;
  for (double x : w) total += x;
  double cum = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    cum += w[i];
    if (u * total < cum) return i;
  }
  return w.size() - 1;
}

}  // namespace

// ---------------------------------------------------------------------------
// Weight arithmetic

TEST(CombinedWeight, Examples) {
  EXPECT_DOUBLE_EQ(combined_weight(0.4, 0.8, 1.0), 0.4);
  EXPECT_DOUBLE_EQ(combined_weight(0.4, 0.8, 0.0), 0.8);
  EXPECT_DOUBLE_EQ(combined_weight(0.4, 0.8, 0.5), 0.6);
}

TEST(CombinedWeight, RangeAndLinearityInAlpha) {
  Rng gen(5);
  for (int i = 0; i < 10000; ++i) {
    const double b = gen.uniform(), d = gen.uniform(), a1 = gen.uniform(), a2 = gen.uniform();
    const double w1 = combined_weight(b, d, a1);
    EXPECT_GE(w1, 0.0);
    EXPECT_LE(w1, 1.0);
    const double mid = combined_weight(b, d, (a1 + a2) / 2);
    EXPECT_NEAR(mid, (w1 + combined_weight(b, d, a2)) / 2, 1e-12);
  }
}

TEST(Distances, ExitEndpointsOfLambda) {
  const GeoPoint c(10, 10), e(40, -3), d(-20, 100);
  EXPECT_NEAR(exit_distance(c, e, d, 1.0), haversine_km(e, d), 1e-7);
  EXPECT_NEAR(exit_distance(c, e, d, 0.0), haversine_km(c, e), 1e-7);
}

TEST(Distances, ExitOnEquator) {
  const GeoPoint c(0, 0), e(0, 10), d(0, 20);
  const double ref = 0.5 * haversine_km(c, e) + 0.5 * haversine_km(e, d);
  EXPECT_NEAR(exit_distance(c, e, d, 0.5), ref, 1e-7);
  EXPECT_NEAR(ref, 1111.95, 0.01);
}

TEST(Distances, EntryEndpointsOfLambda) {
  const GeoPoint c(51, 0), g(48, 2), a(35, 139);
  EXPECT_NEAR(entry_distance(c, g, a, 1.0), haversine_km(c, g), 1e-7);
  EXPECT_NEAR(entry_distance(c, g, a, 0.0), haversine_km(g, a), 1e-7);
  EXPECT_NEAR(entry_distance(c, g, a, 0.3), 0.3 * haversine_km(c, g) + 0.7 * haversine_km(g, a), 1e-7);
}

TEST(Distances, ClientOnlyGuardTermIgnoresAnchor) {
  SelectionParams p = combined(0.0, 0.5);
  p.guard_distance = GuardDistance::client_only;
  DistanceContext ctx{GeoPoint(10, 10), GeoPoint(-40, 170), std::nullopt, std::nullopt, std::nullopt};
  const GeoPoint g(12, 9);
  EXPECT_NEAR(position_distance(Position::guard, g, ctx, p), haversine_km(ctx.client, g), 1e-7);
  ctx.exit = GeoPoint(80, 0);
  EXPECT_NEAR(position_distance(Position::guard, g, ctx, p), haversine_km(ctx.client, g), 1e-7);
}

TEST(Distances, Middle) {
  const GeoPoint a(0, 0), b(0, 10), c(0, 20);
  EXPECT_NEAR(middle_distance(a, a, c), haversine_km(a, c), 1e-7);
  EXPECT_NEAR(middle_distance(a, b, c), haversine_km(a, b) + haversine_km(b, c), 1e-7);
  EXPECT_NEAR(middle_distance(a, b, c), haversine_km(a, c), 1e-6);  // collinear
  const GeoPoint m(33, -70);
  EXPECT_DOUBLE_EQ(middle_distance(a, m, a), 2 * great_circle_km(a, m));
}

TEST(PositionWeights, SingleCandidate) {
  auto snap = NetworkSnapshot({guard("g", 4, GeoPoint(0, 0)), guard("g2", 8, GeoPoint(5, 5)),
                               exit_relay("e", 1, GeoPoint(0, 30))});
  DistanceContext ctx{GeoPoint(0, 10), GeoPoint(0, 20), std::nullopt, std::nullopt, std::nullopt};
  const std::vector<RelayIndex> one{0};
  auto in = position_inputs(snap, one, Position::guard, ctx, combined(0.3, 0.5));
  ASSERT_EQ(in.size(), 1u);
  EXPECT_DOUBLE_EQ(in[0].w_b, 0.5);  // B_max is snapshot-wide
  EXPECT_GT(in[0].d_i, 0.0);
  EXPECT_EQ(in[0].d_i, in[0].d_max);
  EXPECT_EQ(in[0].w_d, 0.0);
  EXPECT_DOUBLE_EQ(position_weights(snap, one, Position::guard, ctx, combined(0.3, 0.5))[0], 0.15);

  // zero distance everywhere: the lone candidate counts as closest
  DistanceContext here{GeoPoint(0, 0), GeoPoint(0, 0), std::nullopt, std::nullopt, std::nullopt};
  in = position_inputs(snap, one, Position::guard, here, combined(0.3, 0.5));
  EXPECT_EQ(in[0].d_max, 0.0);
  EXPECT_EQ(in[0].w_d, 1.0);
  EXPECT_DOUBLE_EQ(combine(in, combined(0.3, 0.5))[0], 0.3 * 0.5 + 0.7);

  const std::vector<RelayIndex> none;
  EXPECT_THROW(position_inputs(snap, none, Position::guard, ctx, combined(0.3, 0.5)), SelectionError);
}

TEST(PositionWeights, AlphaOneIsBandwidthRatio) {
  Rng gen(8);
  auto snap = random_net(gen, 6, 6, 6, false);
  const auto cand = position_candidates(snap, Position::exit);
  for (double lambda : {0.0, 0.4, 1.0}) {
    DistanceContext ctx{GeoPoint(gen.uniform(-50, 50), 0), GeoPoint(0, gen.uniform(-50, 50)),
                        std::nullopt, std::nullopt, std::nullopt};
    auto w = position_weights(snap, cand, Position::exit, ctx, combined(1.0, lambda));
    for (std::size_t k = 0; k < cand.size(); ++k) {
      EXPECT_DOUBLE_EQ(w[k], snap.relay(cand[k]).bw_exit / snap.max_bandwidth(Position::exit));
    }
  }
}

TEST(PositionWeights, ThreeExitsByHand) {
  const GeoPoint client(0, 0), dest(0, 40);
  const GeoPoint l0(0, 10), l1(20, 20), l2(-10, 35);
  auto snap = NetworkSnapshot({guard("g", 1, client), exit_relay("e0", 10, l0),
                               exit_relay("e1", 40, l1), exit_relay("e2", 20, l2)});
  const double alpha = 0.25, lambda = 0.6;
  std::vector<double> d;
  for (auto l : {l0, l1, l2}) d.push_back((1 - lambda) * haversine_km(client, l) + lambda * haversine_km(l, dest));
  const double dmax = *std::max_element(d.begin(), d.end());
  const double bw[] = {10, 40, 20};
  DistanceContext ctx{client, dest, std::nullopt, std::nullopt, std::nullopt};
  const auto cand = position_candidates(snap, Position::exit);
  auto w = position_weights(snap, cand, Position::exit, ctx, combined(alpha, lambda));
  ASSERT_EQ(w.size(), 3u);
  for (int k = 0; k < 3; ++k) {
    EXPECT_NEAR(w[k], alpha * bw[k] / 40.0 + (1 - alpha) * (1 - d[k] / dmax), 1e-9) << k;
  }
}

TEST(PositionWeights, ExtremesOfDistanceProperty) {
  Rng gen(77);
  for (int trial = 0; trial < 200; ++trial) {
    auto snap = random_net(gen, 4, 5, 4, trial % 2 == 0);
    DistanceContext ctx{GeoPoint(gen.uniform(-60, 60), gen.uniform(-180, 180)),
                        GeoPoint(gen.uniform(-60, 60), gen.uniform(-180, 180)), std::nullopt,
                        std::nullopt, std::nullopt};
    const auto cand = position_candidates(snap, Position::exit);
    auto in = position_inputs(snap, cand, Position::exit, ctx, combined(0.5, gen.uniform()));
    double dmax = 0, dmin = 1e300;
    for (auto& x : in) {
      EXPECT_GE(x.w_b, 0.0);
      EXPECT_LE(x.w_b, 1.0);
      EXPECT_GE(x.w_d, 0.0);
      EXPECT_LE(x.w_d, 1.0);
      EXPECT_LE(x.d_i, x.d_max);
      dmax = std::max(dmax, x.d_i);
      dmin = std::min(dmin, x.d_i);
    }
    for (auto& x : in) {
      if (x.d_i == dmax) {
        EXPECT_EQ(x.w_d, 0.0);
      }
    }
    // a relay sitting on the client with lambda 0 has distance zero
    std::vector<RelayDescriptor> extra{exit_relay("zero", 1, ctx.client)};
    auto grown = snap.with_added(extra);
    const auto cand2 = position_candidates(grown, Position::exit);
    auto in2 = position_inputs(grown, cand2, Position::exit, ctx, combined(0.5, 0.0));
    EXPECT_EQ(in2.back().w_d, 1.0);
  }
}

// ---------------------------------------------------------------------------
// Samplers

TEST(WeightedPick, OneCandidate) {
  Rng rng(1);
  const std::vector<double> w{0.3};
  for (int i = 0; i < 100; ++i) EXPECT_EQ(weighted_pick(w, rng), 0u);
}

TEST(WeightedPick, ZeroWeightNeverChosen) {
  Rng rng(2);
  const std::vector<double> w{0.0, 1.0, 0.0, 2.0, 0.0};
  for (int i = 0; i < 1'000'000; ++i) {
    const auto k = weighted_pick(w, rng);
    ASSERT_TRUE(k == 1 || k == 3);
  }
}

TEST(WeightedPick, FrequenciesFollowWeights) {
  Rng rng(3);
  const std::vector<double> w{1.0, 3.0};
  int second = 0;
  const int n = 1'000'000;
  for (int i = 0; i < n; ++i) second += weighted_pick(w, rng) == 1;
  EXPECT_NEAR(static_cast<double>(second) / n, 0.75, 0.01);
}

TEST(WeightedPick, Errors) {
  Rng rng(4);
  EXPECT_THROW(weighted_pick(std::vector<double>{0.0, 0.0}, rng), SelectionError);
  EXPECT_THROW(weighted_pick(std::vector<double>{}, rng), SelectionError);
  EXPECT_THROW(weighted_pick(std::vector<double>{1.0, -1.0}, rng), SelectionError);
  EXPECT_THROW(weighted_pick(std::vector<double>{1.0, NAN}, rng), SelectionError);
}

TEST(WeightedPick, DeterministicGivenState) {
  const std::vector<double> w{0.2, 0.5, 0.1, 0.9};
  Rng a(9), b(9);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(weighted_pick(w, a), weighted_pick(w, b));
}

TEST(Tuning, FunctionEndpoints) {
  Rng gen(10);
  for (int i = 0; i < 1000; ++i) {
    TuningParams t;
    t.s_max = gen.uniform(1, 30);
    t.s = gen.uniform(0, t.s_max);
    t.p = gen.uniform() < 0.5 ? gen.uniform(0.05, 0.95) : gen.uniform(1.05, 4);
    t.g_min = gen.uniform();
    EXPECT_DOUBLE_EQ(tuning_f(0.0, t), 0.0);
    EXPECT_NEAR(tuning_f(1.0, t), 1 - (1 - t.g_min) / t.s_max * t.s, 1e-12);
  }
}

TEST(Tuning, ReducesToSnaderBorisov) {
  for (double s : {0.5, 1.0, 3.0, 7.5}) {
    TuningParams t{s, 2.0, 1.0, 20.0};
    for (double x = 0; x <= 1.0; x += 0.05) {
      EXPECT_NEAR(tuning_f(x, t), (1 - std::pow(2.0, s * x)) / (1 - std::pow(2.0, s)), 1e-12);
    }
  }
  TuningParams zero{0.0, 2.0, 0.5, 20.0};
  EXPECT_EQ(tuning_f(0.37, zero), 0.37);
}

TEST(Tuning, IncreasingAndBoundedProperty) {
  Rng gen(11);
  for (int i = 0; i < 500; ++i) {
    TuningParams t;
    t.s_max = gen.uniform(1, 30);
    t.s = gen.uniform(0.01, t.s_max);
    t.p = gen.uniform() < 0.5 ? gen.uniform(0.05, 0.95) : gen.uniform(1.05, 4);
    t.g_min = gen.uniform(0.01, 1.0);
    const double cap = 1 - (1 - t.g_min) / t.s_max * t.s;
    // beyond this the curve saturates to the cap in double precision
    const bool resolvable = t.s * std::abs(std::log(t.p)) < 20.0;
    double prev = -1;
    for (int k = 0; k <= 50; ++k) {
      const double f = tuning_f(k / 50.0, t);
      if (resolvable) {
        EXPECT_GT(f, prev);
      } else {
        EXPECT_GE(f, prev);
      }
      EXPECT_LE(f, cap + 1e-12);
      prev = f;
    }
  }
}

TEST(Tuning, ParamValidation) {
  EXPECT_THROW((TuningParams{21, 2, 1, 20}.validate()), UsageError);
  EXPECT_THROW((TuningParams{1, 1, 1, 20}.validate()), UsageError);
  EXPECT_THROW((TuningParams{1, -2, 1, 20}.validate()), UsageError);
  EXPECT_THROW((TuningParams{1, 2, 1.5, 20}.validate()), UsageError);
  EXPECT_NO_THROW((TuningParams{20, 0.5, 0, 20}.validate()));
}

TEST(TuningSelect, SingleCandidate) {
  Rng rng(12);
  TuningParams t{5, 2, 0.5, 20};
  for (int i = 0; i < 100; ++i) EXPECT_EQ(tuning_select(std::vector<double>{0.4}, t, rng), 0u);
}

TEST(TuningSelect, ZeroSIsUniform) {
  Rng rng(13);
  TuningParams t{0, 2, 0.5, 20};
  std::vector<double> w{5, 1, 3, 2, 4, 0.5, 9, 7, 6, 8};
  std::vector<int> hits(w.size());
  const int n = 200'000;
  for (int i = 0; i < n; ++i) ++hits[tuning_select(w, t, rng)];
  for (int h : hits) EXPECT_NEAR(h / static_cast<double>(n), 0.1, 0.005);
}

TEST(TuningSelect, FloorOfTopPoolAtMaximumS) {
  Rng rng(14);
  TuningParams t{20, 2, 0.25, 20};
  std::vector<double> w(100);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<double>(i);  // rank = 99 - index
  for (int i = 0; i < 100'000; ++i) {
    const auto rank = 99 - tuning_select(w, t, rng);
    ASSERT_LT(rank, 25u);
  }
}

TEST(TuningSelect, RankBoundProperty) {
  Rng gen(15);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + gen.index(200);
    TuningParams t;
    t.s_max = gen.uniform(1, 30);
    t.s = t.s_max;
    t.p = gen.uniform() < 0.5 ? gen.uniform(0.05, 0.95) : gen.uniform(1.05, 4);
    t.g_min = gen.uniform(0.05, 1.0);
    std::vector<double> w(n);
    for (auto& x : w) x = gen.uniform();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return w[a] > w[b]; });
    const auto bound = static_cast<std::size_t>(std::ceil(t.g_min * static_cast<double>(n)));
    for (int i = 0; i < 500; ++i) {
      const auto pick = tuning_select(w, t, gen);
      const auto rank = static_cast<std::size_t>(std::find(order.begin(), order.end(), pick) - order.begin());
      ASSERT_LT(rank, std::max<std::size_t>(bound, 1)) << n << " " << t.g_min;
    }
  }
}

TEST(TuningSelect, LargerSFavoursHeavierRelays) {
  std::vector<double> w{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  auto mean_weight = [&](double s) {
    Rng rng(16);
    TuningParams t{s, 2, 1.0, 20};
    double sum = 0;
    for (int i = 0; i < 50'000; ++i) sum += w[tuning_select(w, t, rng)];
    return sum / 50'000;
  };
  EXPECT_LT(mean_weight(0), mean_weight(2));
  EXPECT_LT(mean_weight(2), mean_weight(8));
}

TEST(Bucket, SingleCandidate) {
  Rng rng(17);
  std::vector<WeightInputs> in{{0.3, 0.2, 5, 5}};
  EXPECT_EQ(bucket_select(in, BucketOrder::distance_first, rng), 0u);
  EXPECT_EQ(bucket_select(in, BucketOrder::bandwidth_first, rng), 0u);
}

TEST(Bucket, BucketIsFloorSqrtDistinct) {
  Rng rng(18);
  for (std::size_t n : {1u, 2u, 3u, 4u, 15u, 16u, 17u, 99u, 100u, 101u}) {
    std::vector<WeightInputs> in(n);
    for (auto& x : in) {
      x.w_b = rng.uniform();
      x.w_d = rng.uniform() < 0.2 ? 0.0 : rng.uniform();
    }
    for (auto order : {BucketOrder::distance_first, BucketOrder::bandwidth_first}) {
      auto draw = bucket_draw(in, order, rng);
      EXPECT_EQ(draw.bucket.size(), static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n)))));
      EXPECT_EQ(std::set<std::size_t>(draw.bucket.begin(), draw.bucket.end()).size(), draw.bucket.size());
      EXPECT_NE(std::find(draw.bucket.begin(), draw.bucket.end(), draw.chosen), draw.bucket.end());
    }
  }
}

TEST(Bucket, ClosestRelayEntersBucketMostOften) {
  Rng rng(19);
  const std::size_t n = 16;
  std::vector<WeightInputs> in(n);
  for (std::size_t i = 0; i < n; ++i) {
    in[i].w_b = 0.5;
    in[i].d_i = 100.0 + 50.0 * static_cast<double>(i);
  }
  in[7].d_i = 0.0;
  const double dmax = 100.0 + 50.0 * 15;
  for (auto& x : in) {
    x.d_max = dmax;
    x.w_d = 1 - x.d_i / dmax;
  }
  std::vector<int> in_bucket(n);
  for (int t = 0; t < 100'000; ++t) {
    for (auto i : bucket_draw(in, BucketOrder::distance_first, rng).bucket) ++in_bucket[i];
  }
  const auto top = std::max_element(in_bucket.begin(), in_bucket.end()) - in_bucket.begin();
  EXPECT_EQ(top, 7);
  EXPECT_EQ(in_bucket[15], 0);  // farthest has zero stage-one weight
}

// ---------------------------------------------------------------------------
// Path construction

TEST(BuildPath, ForcedTriple) {
  auto snap = NetworkSnapshot({middle("m", 3, GeoPoint(1, 1)), exit_relay("e", 2, GeoPoint(2, 2)),
                               guard("g", 1, GeoPoint(3, 3))});
  Rng rng(20);
  for (double alpha : {0.0, 0.5, 1.0}) {
    auto p = build_path(GeoPoint(0, 0), GeoPoint(9, 9), snap, combined(alpha, 0.5), std::nullopt, rng);
    EXPECT_EQ(p, (PathTriple{2, 0, 1}));
  }
}

TEST(BuildPath, HandReplayOnFiveRelays) {
  const GeoPoint client(50, 10), dest(40, -75);
  const GeoPoint lg0(48, 2), lg1(35, 135), lm(52, 5), le0(45, -70), le1(1, 104);
  auto snap = NetworkSnapshot({guard("g0", 4e6, lg0), guard("g1", 8e6, lg1), middle("m0", 2e6, lm),
                               exit_relay("e0", 3e6, le0), exit_relay("e1", 6e6, le1)});
  const double alpha = 0.4, lambda = 0.5;

  for (std::uint64_t seed = 100; seed < 140; ++seed) {
    Rng probe(seed);
    const double u_exit = probe.uniform();
    const double u_entry = probe.uniform();

    const double de0 = 0.5 * haversine_km(client, le0) + 0.5 * haversine_km(le0, dest);
    const double de1 = 0.5 * haversine_km(client, le1) + 0.5 * haversine_km(le1, dest);
    const double dem = std::max(de0, de1);
    const std::vector<double> we{alpha * 0.5 + (1 - alpha) * (1 - de0 / dem),
                                 alpha * 1.0 + (1 - alpha) * (1 - de1 / dem)};
    const std::size_t e = replay_pick(we, u_exit);
    const GeoPoint lx = e == 0 ? le0 : le1;

    const double dg0 = 0.5 * haversine_km(client, lg0) + 0.5 * haversine_km(lg0, lx);
    const double dg1 = 0.5 * haversine_km(client, lg1) + 0.5 * haversine_km(lg1, lx);
    const double dgm = std::max(dg0, dg1);
    const std::vector<double> wg{alpha * 0.5 + (1 - alpha) * (1 - dg0 / dgm),
                                 alpha * 1.0 + (1 - alpha) * (1 - dg1 / dgm)};
    const std::size_t g = replay_pick(wg, u_entry);

    Rng rng(seed);
    auto p = build_path(client, dest, snap, combined(alpha, lambda), std::nullopt, rng);
    EXPECT_EQ(p.exit, 3 + e) << seed;
    EXPECT_EQ(p.entry, g) << seed;
    EXPECT_EQ(p.middle, 2u);
  }
}

TEST(BuildPath, PinnedGuardDrivesExitDistance) {
  // with lambda 0 the exit term is the distance from the pinned guard, so
  // with alpha 0 the exit next to the guard always wins over the far one
  const GeoPoint client(0, 0), g(60, 100), near_g(60, 101), far(-60, -100);
  auto snap = NetworkSnapshot({guard("g", 1, g), guard("g2", 1, client), middle("m", 1, client),
                               exit_relay("near", 1, near_g), exit_relay("far", 1, far)});
  Rng rng(21);
  for (int i = 0; i < 200; ++i) {
    auto p = build_path(client, GeoPoint(0, 1), snap, combined(0.0, 0.0), RelayIndex{0}, rng);
    EXPECT_EQ(p.entry, 0u);
    EXPECT_EQ(p.exit, 3u);
  }
  EXPECT_THROW(build_path(client, client, snap, combined(0.5, 0.5), RelayIndex{2}, rng), SelectionError);
}

TEST(BuildPath, ExhaustedCandidates) {
  auto r = guard("x", 5);
  r.exit_flag = true;
  r.bw_exit = 5;
  auto snap = NetworkSnapshot({r, middle("m", 1)});
  Rng rng(22);
  EXPECT_THROW(build_path(GeoPoint(), GeoPoint(), snap, combined(0.5, 0.5), std::nullopt, rng),
               SelectionError);
}

TEST(BuildPath, NoRepeatsAndFlagsProperty) {
  Rng gen(23);
  for (int trial = 0; trial < 200; ++trial) {
    auto snap = random_net(gen, 1 + gen.index(4), 1 + gen.index(4), 1 + gen.index(4), true);
    SelectionParams params = combined(gen.uniform(), gen.uniform());
    const SelectionMode modes[] = {SelectionMode::vanilla, SelectionMode::combined,
                                   SelectionMode::tuning, SelectionMode::distance_first,
                                   SelectionMode::bandwidth_first};
    params.mode = modes[gen.index(5)];
    params.tuning = TuningParams{gen.uniform(0, 20), 2, 0.5, 20};
    std::optional<RelayIndex> pin;
    if (gen.uniform() < 0.5) {
      const auto guards = snap.eligible(Position::guard);
      pin = guards[gen.index(guards.size())];
    }
    for (int k = 0; k < 20; ++k) {
      const GeoPoint c(gen.uniform(-60, 60), gen.uniform(-180, 180));
      const GeoPoint d(gen.uniform(-60, 60), gen.uniform(-180, 180));
      auto p = build_path(c, d, snap, params, pin, gen);
      EXPECT_NE(p.entry, p.middle);
      EXPECT_NE(p.entry, p.exit);
      EXPECT_NE(p.middle, p.exit);
      EXPECT_TRUE(snap.relay(p.entry).guard_flag);
      EXPECT_TRUE(snap.relay(p.exit).exit_flag);
      EXPECT_TRUE(snap.relay(p.middle).eligible(Position::middle));
      if (pin) {
        EXPECT_EQ(p.entry, *pin);
      }
    }
  }
}

TEST(BuildPath, AlphaOneMatchesBandwidthOnly) {
  Rng gen(24);
  // 10 relays; two can act as guard, middle or exit so exclusions matter
  std::vector<RelayDescriptor> relays;
  for (int i = 0; i < 3; ++i) relays.push_back(guard("g" + std::to_string(i), gen.uniform(1, 10), GeoPoint(gen.uniform(-50, 50), gen.uniform(-150, 150))));
  for (int i = 0; i < 3; ++i) relays.push_back(middle("m" + std::to_string(i), gen.uniform(1, 10), GeoPoint(gen.uniform(-50, 50), gen.uniform(-150, 150))));
  for (int i = 0; i < 2; ++i) relays.push_back(exit_relay("e" + std::to_string(i), gen.uniform(1, 10), GeoPoint(gen.uniform(-50, 50), gen.uniform(-150, 150))));
  for (int i = 0; i < 2; ++i) {
    auto r = guard("x" + std::to_string(i), gen.uniform(1, 10), GeoPoint(gen.uniform(-50, 50), gen.uniform(-150, 150)));
    r.bw_middle = gen.uniform(1, 10);
    r.bw_exit = gen.uniform(1, 10);
    r.exit_flag = true;
    relays.push_back(r);
  }
  NetworkSnapshot snap(relays);

  // exact sequential distribution: exit, then guard, then middle, each
  // proportional to bandwidth among relays not yet used
  std::map<std::tuple<RelayIndex, RelayIndex, RelayIndex>, double> exact;
  auto share = [&](Position pos, RelayIndex i, std::vector<RelayIndex> used) {
    double tot = 0;
    for (RelayIndex k = 0; k < snap.size(); ++k) {
      if (snap.relay(k).eligible(pos) && std::find(used.begin(), used.end(), k) == used.end()) {
        tot += snap.relay(k).bandwidth(pos);
      }
    }
    return snap.relay(i).bandwidth(pos) / tot;
  };
  for (RelayIndex e = 0; e < snap.size(); ++e) {
    if (!snap.relay(e).exit_flag) continue;
    for (RelayIndex g = 0; g < snap.size(); ++g) {
      if (!snap.relay(g).guard_flag || g == e) continue;
      for (RelayIndex m = 0; m < snap.size(); ++m) {
        if (!snap.relay(m).eligible(Position::middle) || m == e || m == g) continue;
        exact[{g, m, e}] = share(Position::exit, e, {}) * share(Position::guard, g, {e}) *
                           share(Position::middle, m, {e, g});
      }
    }
  }

  const int n = 100'000;
  std::map<std::tuple<RelayIndex, RelayIndex, RelayIndex>, double> seen;
  Rng rng(25), rng_v(25);
  SelectionParams vanilla;
  vanilla.mode = SelectionMode::vanilla;
  for (int i = 0; i < n; ++i) {
    const GeoPoint c(gen.uniform(-60, 60), gen.uniform(-180, 180));
    const GeoPoint d(gen.uniform(-60, 60), gen.uniform(-180, 180));
    auto p = build_path(c, d, snap, combined(1.0, gen.uniform()), std::nullopt, rng);
    seen[{p.entry, p.middle, p.exit}] += 1.0 / n;
    // identical draws to the vanilla path selector
    ASSERT_EQ(p, build_path(c, d, snap, vanilla, std::nullopt, rng_v));
  }
  // per-position marginals; the joint table has ~60 cells, where sampling
  // noise alone is close to 0.01 at this sample size
  for (int pos = 0; pos < 3; ++pos) {
    std::vector<double> want(snap.size()), got(snap.size());
    auto at = [pos](const std::tuple<RelayIndex, RelayIndex, RelayIndex>& k) {
      return pos == 0 ? std::get<0>(k) : pos == 1 ? std::get<1>(k) : std::get<2>(k);
    };
    for (auto& [k, p] : exact) want[at(k)] += p;
    for (auto& [k, p] : seen) got[at(k)] += p;
    double tv = 0;
    for (std::size_t i = 0; i < snap.size(); ++i) tv += std::abs(want[i] - got[i]);
    EXPECT_LT(tv / 2, 0.01) << "position " << pos;
  }
  for (auto& [k, p] : seen) EXPECT_TRUE(exact.count(k));
}

TEST(SelectGuard, SingleGuard) {
  auto snap = NetworkSnapshot({guard("g", 1, GeoPoint(10, 10)), exit_relay("e", 1)});
  Rng rng(26);
  CentroidSet cs{{GeoPoint(0, 0)}};
  EXPECT_EQ(select_guard(GeoPoint(0, 5), snap, combined(0.0, 0.5), cs, rng), 0u);
}

TEST(SelectGuard, ColocatedGuardHasStrictlyMaximalWeight) {
  const GeoPoint here(45, 7);
  auto snap = NetworkSnapshot({guard("far1", 9, GeoPoint(-30, 120)), guard("near", 1, here),
                               guard("far2", 9, GeoPoint(20, -80)), exit_relay("e", 1)});
  DistanceContext ctx{here, here, std::nullopt, std::nullopt, std::nullopt};
  const auto cand = position_candidates(snap, Position::guard);
  auto w = position_weights(snap, cand, Position::guard, ctx, combined(0.0, 0.5));
  EXPECT_EQ(w[1], 1.0);
  EXPECT_LT(w[0], 1.0);
  EXPECT_LT(w[2], 1.0);
}

TEST(SelectGuard, AnchorIsNearestCentroid) {
  // guard a is near the client's nearest centroid, guard b near another;
  // alpha 0 and lambda 0 make the anchor term everything
  const GeoPoint client(0, 0);
  CentroidSet cs{{GeoPoint(0, 90), GeoPoint(0, 10)}};
  auto snap = NetworkSnapshot({guard("a", 1, GeoPoint(0, 11)), guard("b", 1, GeoPoint(0, 89)),
                               guard("c", 1, GeoPoint(0, -170)), exit_relay("e", 1)});
  Rng rng(27);
  std::vector<int> hits(3);
  for (int i = 0; i < 20000; ++i) ++hits[select_guard(client, snap, combined(0.0, 0.0), cs, rng)];
  EXPECT_GT(hits[0], hits[1]);
  EXPECT_EQ(hits[2], 0);

  // client_only ignores the anchor: c is the farthest from the client
  SelectionParams near = combined(0.0, 0.0);
  near.guard_distance = GuardDistance::client_only;
  std::fill(hits.begin(), hits.end(), 0);
  for (int i = 0; i < 20000; ++i) ++hits[select_guard(client, snap, near, cs, rng)];
  EXPECT_GT(hits[0], hits[1]);
  EXPECT_EQ(hits[2], 0);
}

// ---------------------------------------------------------------------------
// Greedy versus optimal

namespace {

double brute_optimum(const GeoPoint& c, const GeoPoint& d, const NetworkSnapshot& s) {
  double best = 1e300;
  for (RelayIndex g = 0; g < s.size(); ++g) {
    if (!s.relay(g).guard_flag) continue;
    for (RelayIndex m = 0; m < s.size(); ++m) {
      if (!s.relay(m).eligible(Position::middle) || m == g) continue;
      for (RelayIndex e = 0; e < s.size(); ++e) {
        if (!s.relay(e).exit_flag || e == g || e == m) continue;
        best = std::min(best, haversine_km(c, s.relay(g).location) +
                                  haversine_km(s.relay(g).location, s.relay(m).location) +
                                  haversine_km(s.relay(m).location, s.relay(e).location) +
                                  haversine_km(s.relay(e).location, d));
      }
    }
  }
  return best;
}

// Greedy walk with alpha = 0, written against the oracle distances.
double greedy_length(const GeoPoint& c, const GeoPoint& d, const NetworkSnapshot& s, double lambda) {
  auto argmin = [&](Position pos, auto dist, std::vector<RelayIndex> used) {
    RelayIndex best = 0;
    double bd = 1e300;
    for (RelayIndex k = 0; k < s.size(); ++k) {
      if (!s.relay(k).eligible(pos) || std::find(used.begin(), used.end(), k) != used.end()) continue;
      const double x = dist(s.relay(k).location);
      if (x < bd || (x == bd && s.relay(k).id < s.relay(best).id)) {
        bd = x;
        best = k;
      }
    }
    return best;
  };
  const auto e = argmin(Position::exit, [&](GeoPoint l) { return (1 - lambda) * haversine_km(c, l) + lambda * haversine_km(l, d); }, {});
  const auto le = s.relay(e).location;
  const auto g = argmin(Position::guard, [&](GeoPoint l) { return lambda * haversine_km(c, l) + (1 - lambda) * haversine_km(l, le); }, {e});
  const auto lg = s.relay(g).location;
  const auto m = argmin(Position::middle, [&](GeoPoint l) { return haversine_km(lg, l) + haversine_km(l, le); }, {e, g});
  const auto lm = s.relay(m).location;
  return haversine_km(c, lg) + haversine_km(lg, lm) + haversine_km(lm, le) + haversine_km(le, d);
}

}  // namespace

TEST(Mapd, SingleRelayPerPositionHasZeroDeviation) {
  auto snap = NetworkSnapshot({guard("g", 1, GeoPoint(10, 10)), middle("m", 1, GeoPoint(20, 20)),
                               exit_relay("e", 1, GeoPoint(30, 30))});
  std::vector<GeoPoint> dests{GeoPoint(0, 50), GeoPoint(-20, -20)};
  std::vector<double> grid{0.0, 0.5, 1.0};
  auto r = mapd_eval(GeoPoint(0, 0), dests, snap, grid, combined(0.0, 0.5));
  for (double dv : r.deviations) EXPECT_NEAR(dv, 0.0, 1e-12);
}

TEST(Mapd, ThreeByThreeByThreeMatchesEnumeration) {
  Rng gen(28);
  for (int trial = 0; trial < 20; ++trial) {
    auto snap = random_net(gen, 3, 3, 3, false);
    const GeoPoint client(gen.uniform(-50, 50), gen.uniform(-150, 150));
    std::vector<GeoPoint> dests;
    for (int i = 0; i < 5; ++i) dests.emplace_back(gen.uniform(-50, 50), gen.uniform(-150, 150));
    std::vector<double> grid;
    for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);
    auto r = mapd_eval(client, dests, snap, grid, combined(0.0, 0.5));
    ASSERT_EQ(r.deviations.size(), grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
      double sum = 0;
      for (auto& d : dests) {
        const double opt = brute_optimum(client, d, snap);
        EXPECT_NEAR(optimal_path_length(client, d, snap), opt, 1e-6);
        sum += std::abs(greedy_length(client, d, snap, grid[k]) - opt) / opt;
      }
      EXPECT_NEAR(r.deviations[k], sum / dests.size(), 1e-9) << "lambda " << grid[k];
      EXPECT_GE(r.deviations[k], 0.0);
    }
  }
}

TEST(Mapd, OverlappingRolesAndBudget) {
  Rng gen(29);
  auto snap = random_net(gen, 2, 2, 2, true);
  const GeoPoint c(10, 10), d(-10, 60);
  EXPECT_NEAR(optimal_path_length(c, d, snap), brute_optimum(c, d, snap), 1e-6);
  MapdOptions tight;
  tight.max_triples = 10;
  EXPECT_THROW(optimal_path_length(c, d, snap, tight), UsageError);
  std::vector<GeoPoint> none;
  std::vector<double> grid{0.5};
  EXPECT_THROW(mapd_eval(c, none, snap, grid, combined(0, 0.5)), UsageError);
}

TEST(SelectionParams, Validation) {
  EXPECT_THROW(combined(1.1, 0.5).validate(), UsageError);
  EXPECT_THROW(combined(0.5, -0.1).validate(), UsageError);
  EXPECT_NO_THROW(combined(0, 1).validate());
  EXPECT_EQ(parse_selection_mode("bandwidth_first"), SelectionMode::bandwidth_first);
  EXPECT_THROW(parse_selection_mode("fastest"), ParseError);
  EXPECT_FALSE(combined(1.0, 0.5).uses_geography());
  EXPECT_TRUE(combined(0.9, 0.5).uses_geography());
}

#include "streamseg/propagation.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>

using namespace streamseg;
using descriptor::DescriptorField;
using propagation::PropagationConfig;
using selection::PseudoLabelEntry;
using selection::PseudoLabelSet;
using selection::Provenance;

namespace {

DescriptorField random_field(int n, int dim, Rng& rng, double zero_fraction = 0.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DescriptorField f;
  f.descriptors.resize(n, dim);
  f.zero_flag.assign(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    if (u(rng) < zero_fraction) {
      f.descriptors.row(i).setZero();
      f.zero_flag[static_cast<std::size_t>(i)] = 1;
      continue;
    }
    for (int j = 0; j < dim; ++j) f.descriptors(i, j) = u(rng);
  }
  return f;
}

PseudoLabelSet random_seeds(const DescriptorField& field, int count, Rng& rng) {
  std::set<int> chosen;
  std::uniform_int_distribution<int> pick(0, static_cast<int>(field.size()) - 1);
  while (static_cast<int>(chosen.size()) < count) {
    int p = pick(rng);
    if (!field.zero_flag[static_cast<std::size_t>(p)]) chosen.insert(p);
  }
  PseudoLabelSet seeds;
  int label = 1;
  for (int p : chosen) {
    PseudoLabelEntry e;
    e.point = p;
    e.label = 1 + (label++ % geom::kClassCount);
    e.seed_point = p;
    e.rank = 1;
    seeds.entries.push_back(e);
  }
  return seeds;
}

// Sort-and-resolve reference implementation.
PseudoLabelSet brute_propagate(const PseudoLabelSet& seeds,
                               const DescriptorField& field,
                               const PropagationConfig& cfg) {
  std::set<int> seed_points;
  for (const auto& e : seeds.entries) seed_points.insert(e.point);

  struct Claim {
    double distance;
    int seed_point;
    int label;
    int rank;
  };
  std::map<int, Claim> claims;
  for (const auto& seed : seeds.entries) {
    std::vector<std::pair<double, int>> order;
    for (int i = 0; i < field.size(); ++i) {
      if (i == seed.point) continue;
      if (field.zero_flag[static_cast<std::size_t>(i)]) continue;
      if (cfg.exclude_seeds_as_targets && seed_points.count(i)) continue;
      order.emplace_back(
          (field.descriptors.row(i) - field.descriptors.row(seed.point)).norm(), i);
    }
    std::sort(order.begin(), order.end());
    const int take = std::min<int>(cfg.k, static_cast<int>(order.size()));
    for (int j = 0; j < take; ++j) {
      const auto [dist, idx] = order[static_cast<std::size_t>(j)];
      Claim c{dist, seed.point, seed.label, j + 2};
      auto it = claims.find(idx);
      if (it == claims.end() || c.distance < it->second.distance ||
          (c.distance == it->second.distance && c.seed_point < it->second.seed_point))
        claims[idx] = c;
    }
  }
  PseudoLabelSet out = seeds;
  for (const auto& [point, c] : claims) {
    if (seed_points.count(point)) continue;
    PseudoLabelEntry e;
    e.point = point;
    e.label = c.label;
    e.provenance = Provenance::kPropagated;
    e.seed_point = c.seed_point;
    e.rank = c.rank;
    out.entries.push_back(e);
  }
  std::sort(out.entries.begin(), out.entries.end(),
            [](const PseudoLabelEntry& a, const PseudoLabelEntry& b) {
              return a.point < b.point;
            });
  return out;
}

void expect_same(const PseudoLabelSet& got, const PseudoLabelSet& want) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.entries.size(); ++i) {
    const auto& g = got.entries[i];
    const auto& w = want.entries[i];
    EXPECT_EQ(g.point, w.point);
    EXPECT_EQ(g.label, w.label);
    EXPECT_EQ(g.provenance, w.provenance);
    EXPECT_EQ(g.seed_point, w.seed_point);
    EXPECT_EQ(g.rank, w.rank);
  }
}

}  // namespace

TEST(GeometricSimilarities, LengthAndOrder) {
  Rng rng(31);
  const DescriptorField f = random_field(7, 4, rng);
  const Eigen::VectorXd d = propagation::geometric_similarities(2, f);
  ASSERT_EQ(d.size(), 6);
  // entry 0 compares against point 0, entry 2 against point 3 (seed skipped)
  EXPECT_NEAR(d(0), (f.descriptors.row(0) - f.descriptors.row(2)).norm(), 1e-12);
  EXPECT_NEAR(d(2), (f.descriptors.row(3) - f.descriptors.row(2)).norm(), 1e-12);
  EXPECT_THROW(propagation::geometric_similarities(7, f), ShapeMismatchError);
}

TEST(Propagate, MatchesBruteForceRandomized) {
  Rng rng(32);
  for (int rep = 0; rep < 30; ++rep) {
    const int n = 20 + static_cast<int>(rng() % 300);
    const int dim = (rep % 2 == 0) ? 4 : 33;
    const DescriptorField field = random_field(n, dim, rng, rep % 3 == 0 ? 0.1 : 0.0);
    PropagationConfig cfg;
    cfg.k = 1 + static_cast<int>(rng() % 10);
    cfg.exclude_seeds_as_targets = (rep % 4 != 0);
    const int seed_count = 1 + static_cast<int>(rng() % 10);
    const PseudoLabelSet seeds = random_seeds(field, seed_count, rng);
    expect_same(propagation::propagate(seeds, field, cfg),
                brute_propagate(seeds, field, cfg));
  }
}

TEST(Propagate, CollisionGoesToCloserSeed) {
  // target point 2 sits between seeds 0 (distance 1) and 4 (distance 2)
  DescriptorField f;
  f.descriptors.resize(5, 1);
  f.descriptors << 0.0, 10.0, 1.0, 20.0, 3.0;
  f.zero_flag.assign(5, 0);
  PseudoLabelSet seeds;
  seeds.entries.push_back({0, 1, Provenance::kSeed, 0, 1});
  seeds.entries.push_back({4, 2, Provenance::kSeed, 4, 1});
  PropagationConfig cfg;
  cfg.k = 1;
  const PseudoLabelSet out = propagation::propagate(seeds, f, cfg);
  ASSERT_EQ(out.size(), 3u);
  const auto& e = out.entries[1];
  EXPECT_EQ(e.point, 2);
  EXPECT_EQ(e.label, 1);  // seed 0 is closer
  EXPECT_EQ(e.seed_point, 0);
}

TEST(Propagate, CollisionTieBreaksOnLowerSeedIndex) {
  // point 1 is exactly halfway between seeds 0 and 2
  DescriptorField f;
  f.descriptors.resize(3, 1);
  f.descriptors << 0.0, 1.0, 2.0;
  f.zero_flag.assign(3, 0);
  PseudoLabelSet seeds;
  seeds.entries.push_back({0, 3, Provenance::kSeed, 0, 1});
  seeds.entries.push_back({2, 5, Provenance::kSeed, 2, 1});
  PropagationConfig cfg;
  cfg.k = 2;
  const PseudoLabelSet out = propagation::propagate(seeds, f, cfg);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out.entries[1].point, 1);
  EXPECT_EQ(out.entries[1].label, 3);
  EXPECT_EQ(out.entries[1].seed_point, 0);
}

TEST(Propagate, ZeroFlaggedNeverTargets) {
  Rng rng(33);
  DescriptorField f = random_field(50, 3, rng, 0.3);
  const PseudoLabelSet seeds = random_seeds(f, 3, rng);
  PropagationConfig cfg;
  cfg.k = 10;
  const PseudoLabelSet out = propagation::propagate(seeds, f, cfg);
  for (const auto& e : out.entries)
    if (e.provenance == Provenance::kPropagated)
      EXPECT_EQ(f.zero_flag[static_cast<std::size_t>(e.point)], 0);
}

TEST(Propagate, MonotoneInK) {
  Rng rng(34);
  const DescriptorField f = random_field(200, 5, rng);
  const PseudoLabelSet seeds = random_seeds(f, 5, rng);
  PropagationConfig cfg;
  std::size_t prev = 0;
  for (int k : {1, 2, 5, 10, 20}) {
    cfg.k = k;
    const std::size_t size = propagation::propagate(seeds, f, cfg).size();
    EXPECT_GE(size, prev);
    prev = size;
  }
}

TEST(Propagate, UniquePointsAndSeedLabelsKept) {
  Rng rng(35);
  const DescriptorField f = random_field(100, 4, rng);
  const PseudoLabelSet seeds = random_seeds(f, 8, rng);
  PropagationConfig cfg;
  cfg.k = 10;
  cfg.exclude_seeds_as_targets = false;  // seeds may be claimed, never relabelled
  const PseudoLabelSet out = propagation::propagate(seeds, f, cfg);
  std::set<int> seen;
  for (const auto& e : out.entries) EXPECT_TRUE(seen.insert(e.point).second);
  for (const auto& s : seeds.entries) {
    auto it = std::find_if(out.entries.begin(), out.entries.end(),
                           [&](const PseudoLabelEntry& e) { return e.point == s.point; });
    ASSERT_NE(it, out.entries.end());
    EXPECT_EQ(it->label, s.label);
    EXPECT_EQ(it->provenance, Provenance::kSeed);
  }
}

TEST(Propagate, ErrorsAndEdgeCases) {
  Rng rng(36);
  const DescriptorField f = random_field(20, 3, rng);
  PropagationConfig cfg;
  EXPECT_THROW(propagation::propagate(PseudoLabelSet{}, f, cfg), EmptySeedSetError);

  PseudoLabelSet bad;
  bad.entries.push_back({25, 1, Provenance::kSeed, 25, 1});
  EXPECT_THROW(propagation::propagate(bad, f, cfg), FrameDescriptorMismatchError);

  PseudoLabelSet ok;
  ok.entries.push_back({0, 1, Provenance::kSeed, 0, 1});
  cfg.k = 0;
  EXPECT_THROW(propagation::propagate(ok, f, cfg), InvalidConfigError);
}

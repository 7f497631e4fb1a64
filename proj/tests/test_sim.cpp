#include "wmqre/random.hpp"
#include "wmqre/sim.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace wmqre;
using namespace wmqre::sim;

TEST(Philox, KnownAnswerVectors) {
  // Reference outputs of Philox4x32-10 from the Random123 distribution.
  auto out = Philox4x32::bijection({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(out, (Philox4x32::Block{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
  out = Philox4x32::bijection({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(out, (Philox4x32::Block{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
  out = Philox4x32::bijection({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
  EXPECT_EQ(out, (Philox4x32::Block{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(RandomStream, StreamsAreReproducibleAndDistinct) {
  RandomStream a(7, 3), b(7, 3), c(7, 4), d(8, 3);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
    EXPECT_NE(x, d.next_u64());
  }
}

TEST(RandomStream, UniformAndNormalMoments) {
  RandomStream rng(1, 0);
  const int n = 200000;
  double su = 0, sz = 0, sz2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = rng.normal();
    sz += z;
    sz2 += z * z;
  }
  EXPECT_NEAR(su / n, 0.5, 0.003);
  EXPECT_NEAR(sz / n, 0.0, 0.01);
  EXPECT_NEAR(sz2 / n, 1.0, 0.015);
  double sv = 0;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal(9.0, 20.0);
    sv += (v - 9.0) * (v - 9.0);
  }
  EXPECT_NEAR(sv / n, 20.0, 0.3);
}

TEST(RandomStream, BoundedIntegersAndSampling) {
  RandomStream rng(2, 0);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[rng.below(7)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 400);
  std::vector<int> pool(50);
  std::iota(pool.begin(), pool.end(), 0);
  const auto s = rng.sample_without_replacement(pool, 15);
  EXPECT_EQ(s.size(), 15u);
  EXPECT_EQ(std::set<int>(s.begin(), s.end()).size(), 15u);
  EXPECT_EQ(rng.sample_without_replacement(pool, 80).size(), 50u);
}

TEST(Allocate, LargestRemainderPreservesTotal) {
  EXPECT_EQ(allocate<2>(15, {0.75, 0.25}), (std::array<int, 2>{11, 4}));
  EXPECT_EQ(allocate<3>(100, {0.15, 0.65, 0.20}), (std::array<int, 3>{15, 65, 20}));
  EXPECT_EQ(allocate<3>(25, {0.15, 0.65, 0.20}), (std::array<int, 3>{4, 16, 5}));
  const auto a = allocate<3>(7, {1.0 / 3, 1.0 / 3, 1.0 / 3});
  EXPECT_EQ(a[0] + a[1] + a[2], 7);
}

TEST(Population, ShapeAndModel) {
  SimConfig cfg;
  RandomStream rng(cfg.seed, 0);
  const Population pop = generate_population(cfg, rng);
  ASSERT_EQ(pop.clusters.size(), 170u);
  EXPECT_EQ(pop.size(), 170u * 50u);
  for (const auto& c : pop.clusters) {
    for (Eigen::Index i = 0; i < c.y.size(); ++i) {
      EXPECT_GE(c.x[i], 0.0);
      EXPECT_LT(c.x[i], 20.0);
      EXPECT_DOUBLE_EQ(c.y[i], 100.0 + 2.0 * c.x[i] + c.gamma + c.eps[i]);
    }
  }
}

TEST(Sampling, SizesAndHorvitzThompsonSums) {
  SimConfig cfg;
  double w2_sum = 0.0;
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    RandomStream rng(cfg.seed, static_cast<std::uint64_t>(r));
    const Population pop = generate_population(cfg, rng);
    SamplingLog log;
    const GroupedDesign d = informative_sample(pop, cfg, rng, log);
    ASSERT_EQ(d.clusters.size(), 100u);
    if (log.shortfall_events == 0) {
      EXPECT_EQ(d.total_units(), 1500u);
      double s = 0.0;
      for (const auto& c : d.clusters) s += c.w2;
      EXPECT_NEAR(s, 170.0, 1e-9);
    }
    for (const auto& c : d.clusters) {
      EXPECT_EQ(c.size(), 15u);
      EXPECT_NEAR(c.w1.sum(), 50.0, 1e-9);
      w2_sum += c.w2;
    }
  }
  EXPECT_NEAR(w2_sum / reps, 170.0, 1e-6);
}

TEST(Sampling, StrataAreInformative) {
  SimConfig cfg;
  RandomStream rng(cfg.seed, 1);
  const Population pop = generate_population(cfg, rng);
  SamplingLog log;
  const GroupedDesign d = informative_sample(pop, cfg, rng, log);
  int high = 0, low = 0;
  for (const auto& c : d.clusters) {
    const double g = pop.clusters[static_cast<std::size_t>(std::stoi(c.id))].gamma;
    high += g > 1.0;
    low += g < -1.0;
  }
  if (log.shortfall_events == 0) {
    EXPECT_EQ(high, 20);
    EXPECT_EQ(low, 15);
  }
}

TEST(Sampling, ShortfallIsToppedUp) {
  std::array<std::vector<int>, 3> strata{std::vector<int>{0, 1}, std::vector<int>{2, 3, 4, 5, 6, 7},
                                         std::vector<int>{8, 9, 10}};
  RandomStream rng(3, 0);
  SamplingLog log;
  const auto chosen = sim::detail::stratified_draw(strata, std::array<int, 3>{4, 2, 1}, rng, log);
  EXPECT_EQ(log.shortfall_events, 1);
  EXPECT_EQ(chosen[0].size(), 2u);
  EXPECT_EQ(chosen[0].size() + chosen[1].size() + chosen[2].size(), 7u);
  EXPECT_EQ(chosen[1].size(), 4u);
}

TEST(Targets, ModelTargetUsesCleanErrorQuantile) {
  SimConfig cfg;
  EXPECT_NEAR(model_target(cfg, 0.1)[0], 97.672, 5e-4);
  EXPECT_NEAR(model_target(cfg, 0.25)[0], 98.775, 5e-4);
  EXPECT_DOUBLE_EQ(model_target(cfg, 0.5)[0], 100.0);
  EXPECT_DOUBLE_EQ(model_target(cfg, 0.1)[1], 2.0);
}

TEST(Targets, CensusFitWithoutContamination) {
  SimConfig cfg;
  cfg.gamma.contamination = 0.0;
  cfg.eps.contamination = 0.0;
  RandomStream rng(5, 0);
  const Population pop = generate_population(cfg, rng);
  const Vector t = census_target(pop, InfluenceSpec::identity(0.5));
  EXPECT_NEAR(t[0], 100.0, 0.3);
  EXPECT_NEAR(t[1], 2.0, 0.01);
}

TEST(Targets, CensusInvariantToRelabeling) {
  SimConfig cfg;
  RandomStream rng(6, 0);
  Population pop = generate_population(cfg, rng);
  const Vector a = census_target(pop, InfluenceSpec::huber(0.25));
  std::reverse(pop.clusters.begin(), pop.clusters.end());
  const Vector b = census_target(pop, InfluenceSpec::huber(0.25));
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(MonteCarlo, DeterministicAcrossThreadCounts) {
  SimConfig cfg;
  cfg.replications = 6;
  cfg.threads = 1;
  const SimReport a = run_monte_carlo(cfg);
  cfg.threads = 3;
  const SimReport b = run_monte_carlo(cfg);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t k = 0; k < a.rows.size(); ++k) {
    EXPECT_EQ(a.rows[k].mean_estimate, b.rows[k].mean_estimate);
    EXPECT_EQ(a.rows[k].empirical_se, b.rows[k].empirical_se);
    EXPECT_EQ(a.rows[k].mean_estimated_se, b.rows[k].mean_estimated_se);
  }
  EXPECT_EQ(a.rows.size(), 14u);
  EXPECT_EQ(a.rng, "philox4x32-10");
}

TEST(MonteCarlo, CleanNonInformativeIsUnbiased) {
  SimConfig cfg;
  cfg.replications = 40;
  cfg.gamma.contamination = 0.0;
  cfg.eps.contamination = 0.0;
  cfg.informative = false;
  cfg.quantiles = {0.5};
  const SimReport rep = run_monte_carlo(cfg);
  for (const auto& r : rep.rows) {
    if (r.parameter == 0) {
      EXPECT_LT(std::abs(r.arb_model), 0.1) << r.method;
    }
  }
}

TEST(MonteCarlo, ConfigValidation) {
  SimConfig cfg;
  cfg.sampled_clusters = 500;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = SimConfig{};
  cfg.cluster_fractions = {0.5, 0.5, 0.5};
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = SimConfig{};
  cfg.quantiles = {1.0};
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

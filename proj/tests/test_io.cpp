#include "wmqre/core.hpp"
#include "wmqre/io.hpp"
#include "wmqre/report.hpp"
#include "wmqre/sim.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace wmqre;

namespace {

LoadedData load(const std::string& text, const DatasetSchema& schema) {
  std::istringstream in(text);
  return load_design(read_csv(in), schema);
}

DatasetSchema basic_schema() { return {"y", {"x"}, "g", std::nullopt, std::nullopt, true}; }

}  // namespace

TEST(Csv, QuotedFieldsAndBlankLines) {
  std::istringstream in("a,\"b,c\",d\r\n1,\"x \"\"y\"\"\",3\n\n4,5,6\n");
  const CsvTable t = read_csv(in);
  ASSERT_EQ(t.header.size(), 3u);
  EXPECT_EQ(t.header[1], "b,c");
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][1], "x \"y\"");
  EXPECT_EQ(t.line[1], 4u);
}

TEST(Csv, RaggedRowIsAnError) {
  std::istringstream in("a,b\n1,2\n3\n");
  EXPECT_THROW(read_csv(in), InputError);
}

TEST(LoadDesign, GroupsByClusterInFirstAppearanceOrder) {
  const auto d = load("g,y,x\nb,1,2\na,2,3\nb,3,4\na,4,5\n", basic_schema());
  ASSERT_EQ(d.design.clusters.size(), 2u);
  EXPECT_EQ(d.design.clusters[0].id, "b");
  EXPECT_EQ(d.design.clusters[0].y[1], 3.0);
  EXPECT_EQ(d.design.clusters[1].X(1, 1), 5.0);
  EXPECT_EQ(d.design.clusters[1].X(1, 0), 1.0);
  EXPECT_EQ(d.coefficient_names, (std::vector<std::string>{"(Intercept)", "x"}));
}

TEST(LoadDesign, DropsMissingRowsWithCount) {
  const auto d = load("g,y,x\n1,1,2\n1,NA,3\n1,3,\n2,4,5\n2,5,.\n2,6,1\n,7,7\n", basic_schema());
  EXPECT_EQ(d.rows_read, 7u);
  EXPECT_EQ(d.rows_dropped, 4u);
  EXPECT_EQ(d.design.total_units(), 3u);
}

TEST(LoadDesign, MissingColumnIsNamed) {
  try {
    load("g,y,z\n1,1,2\n", basic_schema());
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("'x'"), std::string::npos);
  }
}

TEST(LoadDesign, NonNumericValueHasLineContext) {
  try {
    load("g,y,x\n1,1,2\n1,abc,3\n", basic_schema());
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(LoadDesign, ClusterWeightMustBeConstant) {
  DatasetSchema s = basic_schema();
  s.cluster_weight = "w2";
  try {
    load("g,y,x,w2\n1,1,2,3\n1,2,3,4\n2,1,1,1\n", s);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("cluster '1'"), std::string::npos);
  }
}

TEST(LoadDesign, EmptyClusterAfterDropsIsAnError) {
  EXPECT_THROW(load("g,y,x\n1,1,2\n1,2,3\n2,NA,3\n3,1,1\n", basic_schema()), InputError);
}

TEST(LoadDesign, WeightsAreRead) {
  DatasetSchema s = basic_schema();
  s.unit_weight = "w1";
  s.cluster_weight = "w2";
  const auto d = load("g,y,x,w1,w2\n1,1,2,0.5,3\n1,2,3,1.5,3\n2,1,1,2,7\n", s);
  EXPECT_EQ(d.design.clusters[0].w2, 3.0);
  EXPECT_EQ(d.design.clusters[0].w1[1], 1.5);
  EXPECT_EQ(d.design.clusters[1].w2, 7.0);
  EXPECT_THROW(load("g,y,x,w1,w2\n1,1,2,0,3\n2,1,1,2,7\n", s), InputError);
}

TEST(RoundTrip, WrittenDesignFitsIdentically) {
  sim::SimConfig cfg;
  RandomStream rng(cfg.seed, 0);
  const sim::Population pop = sim::generate_population(cfg, rng);
  sim::SamplingLog log;
  const GroupedDesign d = sim::informative_sample(pop, cfg, rng, log);
  std::ostringstream out;
  write_design_csv(out, d, {"x"});
  std::istringstream in(out.str());
  const LoadedData back = load_design(read_csv(in), written_design_schema({"x"}));
  ASSERT_EQ(back.design.clusters.size(), d.clusters.size());
  for (std::size_t j = 0; j < d.clusters.size(); ++j) {
    EXPECT_EQ(back.design.clusters[j].id, d.clusters[j].id);
    EXPECT_TRUE(back.design.clusters[j].X == d.clusters[j].X);
    EXPECT_TRUE(back.design.clusters[j].y == d.clusters[j].y);
    EXPECT_TRUE(back.design.clusters[j].w1 == d.clusters[j].w1);
    EXPECT_EQ(back.design.clusters[j].w2, d.clusters[j].w2);
  }
  const auto spec = InfluenceSpec::huber(0.25);
  const FitResult a = fit_wmqre(apply_weight_scaling(d, WeightScaling::Method2), spec);
  const FitResult b = fit_wmqre(apply_weight_scaling(back.design, WeightScaling::Method2), spec);
  EXPECT_TRUE(a.beta == b.beta);
  EXPECT_TRUE(a.se == b.se);
}

TEST(RoundTrip, IdsWithCommasAreQuoted) {
  GroupedDesign d;
  d.p = 2;
  for (const char* id : {"a,b", "c\"d"}) {
    ClusterBlock b;
    b.id = id;
    b.X = Matrix::Ones(2, 2);
    b.X(1, 1) = 3.0;
    b.y = Vector::Ones(2);
    b.w1 = Vector::Ones(2);
    d.clusters.push_back(b);
  }
  std::ostringstream out;
  write_design_csv(out, d, {"x"});
  std::istringstream in(out.str());
  const LoadedData back = load_design(read_csv(in), written_design_schema({"x"}));
  EXPECT_EQ(back.design.clusters[0].id, "a,b");
  EXPECT_EQ(back.design.clusters[1].id, "c\"d");
}

TEST(Report, SignificanceStars) {
  EXPECT_EQ(significance_stars(0.009), "***");
  EXPECT_EQ(significance_stars(0.01), "**");
  EXPECT_EQ(significance_stars(0.049), "**");
  EXPECT_EQ(significance_stars(0.05), "*");
  EXPECT_EQ(significance_stars(0.0999), "*");
  EXPECT_EQ(significance_stars(0.1), "");
  EXPECT_EQ(significance_stars(NAN), "");
}

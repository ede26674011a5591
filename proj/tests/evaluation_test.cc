#include "spanprobe/evaluation.h"

#include <algorithm>
#include <numeric>
#include <random>
#include <tuple>

#include <gtest/gtest.h>

#include "spanprobe/csv.h"
#include "spanprobe/errors.h"
#include "test_util.h"

namespace spanprobe {
namespace {

using Probs = std::vector<std::vector<double>>;
using Golds = std::vector<std::vector<int>>;

TEST(Score, TwoThirdsExample) {
  // Label 0: tp, tp, fp; label 1: fn.
  const Probs p{{0.9, 0.1}, {0.8, 0.2}, {0.7, 0.3}};
  const Golds g{{0}, {0, 1}, {}};
  const MetricsReport r = Score(p, g, 2);
  EXPECT_EQ(r.tp, 2);
  EXPECT_EQ(r.fp, 1);
  EXPECT_EQ(r.fn, 1);
  EXPECT_DOUBLE_EQ(r.precision, 2.0 / 3);
  EXPECT_DOUBLE_EQ(r.recall, 2.0 / 3);
  EXPECT_DOUBLE_EQ(r.f1, 2.0 / 3);
  EXPECT_EQ(r.target_count, 3u);
  EXPECT_EQ(r.per_label[0].support(), 2);
}

TEST(Score, PerfectAndSilent) {
  const Golds g{{0}, {1}, {0, 1}};
  EXPECT_EQ(Score(Probs{{1, 0}, {0, 1}, {1, 1}}, g, 2).f1, 1.0);
  const MetricsReport silent = Score(Probs{{0, 0}, {0, 0}, {0, 0}}, g, 2);
  EXPECT_EQ(silent.precision, 0.0);
  EXPECT_EQ(silent.f1, 0.0);
}

TEST(Score, ThresholdIsStrict) {
  const MetricsReport r = Score(Probs{{0.5}}, Golds{{0}}, 1);
  EXPECT_EQ(r.tp, 0);
  EXPECT_EQ(r.fn, 1);
}

TEST(Score, MisalignedStreams) {
  EXPECT_THROW(Score(Probs{{0.1}}, Golds{}, 1), DataError);
  EXPECT_THROW(Score(Probs{{0.1, 0.2}}, Golds{{0}}, 1), DataError);
  EXPECT_THROW(Score(Probs{{0.1}}, Golds{{3}}, 1), DataError);
}

TEST(F1Score, Formula) {
  EXPECT_EQ(F1Score(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(F1Score(0.5, 1.0), 2.0 / 3);
}

struct RandomInstance {
  Probs p;
  Golds g;
  int labels;
};

RandomInstance MakeInstance(std::mt19937_64& rng) {
  RandomInstance r{{}, {}, 1 + static_cast<int>(rng() % 5)};
  const int targets = rng() % 12;
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < targets; ++t) {
    std::vector<double> probs;
    std::vector<int> gold;
    for (int l = 0; l < r.labels; ++l) {
      probs.push_back(u(rng));
      if (rng() % 3 == 0) gold.push_back(l);
    }
    r.p.push_back(probs);
    r.g.push_back(gold);
  }
  return r;
}

TEST(ScoreProperty, MatchesDecisionTupleOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const RandomInstance in = MakeInstance(rng);
    // Brute force: enumerate (target, label, predicted, gold) tuples.
    std::vector<std::tuple<int, int, bool, bool>> tuples;
    for (std::size_t t = 0; t < in.p.size(); ++t) {
      for (int l = 0; l < in.labels; ++l) {
        const bool gold = std::count(in.g[t].begin(), in.g[t].end(), l) > 0;
        tuples.emplace_back(t, l, in.p[t][l] > 0.5, gold);
      }
    }
    double tp = 0, fp = 0, fn = 0;
    for (const auto& [t, l, pred, gold] : tuples) {
      tp += pred && gold;
      fp += pred && !gold;
      fn += !pred && gold;
    }
    const double p = tp + fp > 0 ? tp / (tp + fp) : 0;
    const double r = tp + fn > 0 ? tp / (tp + fn) : 0;
    const double f1 = p + r > 0 ? 2 * p * r / (p + r) : 0;
    const MetricsReport got = Score(in.p, in.g, in.labels);
    EXPECT_NEAR(got.f1, f1, 1e-15);
    EXPECT_EQ(got.tp, tp);
    EXPECT_EQ(got.fp, fp);
    EXPECT_EQ(got.fn, fn);
    EXPECT_GE(got.f1, 0.0);
    EXPECT_LE(got.f1, 1.0);
  }
}

TEST(ScoreProperty, PermutationInvariant) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    RandomInstance in = MakeInstance(rng);
    const MetricsReport before = Score(in.p, in.g, in.labels);
    std::vector<std::size_t> order(in.p.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    Probs p;
    Golds g;
    for (std::size_t i : order) {
      p.push_back(in.p[i]);
      g.push_back(in.g[i]);
    }
    const MetricsReport after = Score(p, g, in.labels);
    EXPECT_EQ(after.f1, before.f1);
    EXPECT_EQ(after.tp, before.tp);
    EXPECT_EQ(after.fp, before.fp);
  }
}

// A run over `gold_count` targets of label "ARG0" that recalls the first `hits`.
RunDecisions RunWithHits(int gold_count, int hits) {
  RunDecisions run;
  run.labels = {"ARG0"};
  for (int t = 0; t < gold_count; ++t) {
    run.gold.push_back({0});
    run.predicted.push_back(t < hits ? std::vector<int>{0} : std::vector<int>{});
  }
  return run;
}

TEST(GroupDelta, MeanRecallExample) {
  const std::vector<RunDecisions> a{RunWithHits(10, 8), RunWithHits(10, 9), RunWithHits(10, 10)};
  const std::vector<RunDecisions> b(3, RunWithHits(10, 5));
  const auto d = GroupDeltaRecall(a, b, 1);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_NEAR(d[0].delta_recall, 40.0, 1e-12);
  EXPECT_NEAR(d[0].recall_a, 90.0, 1e-12);
  EXPECT_NEAR(d[0].recall_b, 50.0, 1e-12);
  EXPECT_EQ(d[0].support, 10);
}

TEST(GroupDelta, UnionRule) {
  const std::vector<RunDecisions> a{RunWithHits(10, 8), RunWithHits(10, 9), RunWithHits(10, 10)};
  const std::vector<RunDecisions> b(3, RunWithHits(10, 5));
  const auto d = GroupDeltaRecall(a, b, 1, PoolingRule::kUnion);
  EXPECT_NEAR(d[0].delta_recall, 50.0, 1e-12);
}

TEST(GroupDelta, MinSupportFilters) {
  const std::vector<RunDecisions> a{RunWithHits(3, 3)};
  EXPECT_TRUE(GroupDeltaRecall(a, a, 100).empty());
  EXPECT_EQ(GroupDeltaRecall(a, a, 3).size(), 1u);
}

TEST(GroupDelta, MismatchedGoldRejected) {
  const std::vector<RunDecisions> a{RunWithHits(10, 8)};
  const std::vector<RunDecisions> b{RunWithHits(9, 5)};
  EXPECT_THROW(GroupDeltaRecall(a, b, 1), DataError);
  EXPECT_THROW(GroupDeltaRecall(a, {}, 1), DataError);
}

TEST(GroupDeltaProperty, SelfComparisonIsZeroAndSorted) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const RandomInstance in = MakeInstance(rng);
    std::vector<std::string> labels;
    for (int l = 0; l < in.labels; ++l) labels.push_back("L" + std::to_string(l));
    std::vector<RunDecisions> a;
    for (int k = 0; k < 3; ++k) {
      Probs p = in.p;
      for (auto& row : p) std::shuffle(row.begin(), row.end(), rng);
      a.push_back(MakeRunDecisions(p, in.g, labels));
    }
    for (const GroupDelta& d : GroupDeltaRecall(a, a, 0)) EXPECT_EQ(d.delta_recall, 0.0);
    std::vector<RunDecisions> b{MakeRunDecisions(in.p, in.g, labels)};
    const auto d = GroupDeltaRecall(a, b, 0);
    for (std::size_t i = 0; i + 1 < d.size(); ++i) {
      EXPECT_GE(d[i].delta_recall, d[i + 1].delta_recall);
    }
    for (const GroupDelta& x : d) {
      EXPECT_GE(x.delta_recall, -100.0);
      EXPECT_LE(x.delta_recall, 100.0);
    }
  }
}

TEST(Grid, TwoByTwoMaxima) {
  const std::vector<GridCell> cells{
      {"bert", "avg", 90}, {"xlnet", "avg", 92}, {"bert", "max", 91}, {"xlnet", "max", 89}};
  const Grid g = BuildGrid(cells);
  EXPECT_EQ(g.methods, (std::vector<std::string>{"avg", "max"}));
  EXPECT_EQ(g.encoders, (std::vector<std::string>{"bert", "xlnet"}));
  EXPECT_EQ(g.row_max[0], 92);
  EXPECT_EQ(g.row_max[1], 91);
  EXPECT_EQ(g.col_max[0], 91);
  EXPECT_EQ(g.col_max[1], 92);
  EXPECT_EQ(GridCsv(g),
            "method,bert,xlnet,row_max\n"
            "avg,90.0000,92.0000,92.0000\n"
            "max,91.0000,89.0000,91.0000\n"
            "col_max,91.0000,92.0000,\n");
}

TEST(Grid, SingleCellAndMissingCells) {
  const Grid one = BuildGrid(std::vector<GridCell>{{"e", "m", 0.5}});
  EXPECT_EQ(one.row_max[0], 0.5);
  EXPECT_EQ(one.col_max[0], 0.5);
  const Grid sparse = BuildGrid(std::vector<GridCell>{{"e1", "m1", 1}, {"e2", "m2", 2}});
  EXPECT_FALSE(sparse.cells[0][1].has_value());
  EXPECT_EQ(ParseCsv(GridCsv(sparse))[1], (std::vector<std::string>{"m1", "1.0000", "", "1.0000"}));
  EXPECT_THROW(BuildGrid(std::vector<GridCell>{}), DataError);
  EXPECT_THROW(BuildGrid(std::vector<GridCell>{{"e", "m", 1}, {"e", "m", 2}}), DataError);
}

TEST(Grid, SixMethodsEightEncoders) {
  std::vector<GridCell> cells;
  for (int m = 0; m < 6; ++m) {
    for (int e = 0; e < 8; ++e) cells.push_back({"enc" + std::to_string(e), "m" + std::to_string(m), m * 8.0 + e});
  }
  const Grid g = BuildGrid(cells);
  int filled = 0;
  for (const auto& row : g.cells) filled += std::count_if(row.begin(), row.end(), [](auto& c) { return c.has_value(); });
  EXPECT_EQ(filled, 48);
  EXPECT_EQ(ParseCsv(GridCsv(g)).size(), 8u);
  EXPECT_EQ(g.row_max[5], 47);
  EXPECT_EQ(g.col_max[0], 40);
}

TEST(MetricsCsv, Layout) {
  const MetricsReport r = Score(Probs{{0.9, 0.1}, {0.8, 0.7}}, Golds{{0}, {1}}, 2);
  const std::vector<std::string> labels{"NP", "VP"};
  EXPECT_EQ(MetricsCsv(r, labels),
            "label,tp,fp,fn,support,precision,recall,f1\n"
            "NP,1,1,0,1,0.500000,1.000000,0.666667\n"
            "VP,1,0,0,1,1.000000,1.000000,1.000000\n"
            "micro,2,1,0,2,0.666667,1.000000,0.800000\n");
}

TEST(PredictionsCsv, RoundTripsDecisions) {
  std::mt19937_64 rng(4);
  testing::TempDir dir;
  for (int trial = 0; trial < 50; ++trial) {
    RandomInstance in = MakeInstance(rng);
    if (in.p.empty()) continue;
    std::vector<std::string> labels;
    for (int l = 0; l < in.labels; ++l) labels.push_back("L," + std::to_string(l));
    WriteFileAtomically(dir / "p.csv", PredictionsCsv(in.p, in.g, labels));
    const RunDecisions back = ReadPredictionsCsv(dir / "p.csv");
    const RunDecisions want = MakeRunDecisions(in.p, in.g, labels);
    EXPECT_EQ(back.labels, want.labels);
    EXPECT_EQ(back.gold, want.gold);
    EXPECT_EQ(back.predicted, want.predicted);
  }
  WriteFileAtomically(dir / "bad.csv", "a,b\n");
  EXPECT_THROW(ReadPredictionsCsv(dir / "bad.csv"), DataError);
}

}  // namespace
}  // namespace spanprobe

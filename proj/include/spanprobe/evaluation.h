#ifndef SPANPROBE_EVALUATION_H_
#define SPANPROBE_EVALUATION_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace spanprobe {

struct LabelCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;

  std::int64_t support() const { return tp + fn; }
  double precision() const;
  double recall() const;
};

struct MetricsReport {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<LabelCounts> per_label;
  std::size_t target_count = 0;
};

// F1 = 2PR / (P + R), 0 when P + R = 0; P (R) is 0 when its denominator is 0.
double F1Score(double precision, double recall);
MetricsReport FinalizeCounts(std::vector<LabelCounts> per_label,
                             std::size_t target_count);

// Micro-averaged scores over every (target, label) decision. A label is
// predicted when its probability exceeds `threshold`. Throws DataError when the
// streams are not aligned.
MetricsReport Score(std::span<const std::vector<double>> probabilities,
                    std::span<const std::vector<int>> golds, int label_count,
                    double threshold = 0.5);

// Columns: label,tp,fp,fn,support,precision,recall,f1; a final "micro" row.
std::string MetricsCsv(const MetricsReport& report,
                       std::span<const std::string> labels);

// Thresholded decisions of one probe run over an evaluation set.
struct RunDecisions {
  std::vector<std::string> labels;
  std::vector<std::vector<int>> predicted;  // per target, sorted label ids
  std::vector<std::vector<int>> gold;       // per target, sorted label ids
};

RunDecisions MakeRunDecisions(std::span<const std::vector<double>> probabilities,
                              std::span<const std::vector<int>> golds,
                              std::vector<std::string> labels,
                              double threshold = 0.5);

// Columns: target,label,gold,probability; one row per (target, label).
std::string PredictionsCsv(std::span<const std::vector<double>> probabilities,
                           std::span<const std::vector<int>> golds,
                           std::span<const std::string> labels);
RunDecisions ReadPredictionsCsv(const std::filesystem::path& path,
                                double threshold = 0.5);

enum class PoolingRule {
  kMeanRecall,  // recalled count summed over runs / (runs * gold count)
  kUnion,       // recalled when any run of the group predicts the label
};

struct GroupDelta {
  std::string label;
  double delta_recall = 0.0;  // percentage points, group A minus group B
  double recall_a = 0.0;      // percent
  double recall_b = 0.0;      // percent
  std::int64_t support = 0;
};

// Per-label recall difference between two groups of runs over the same gold
// set. Labels with fewer than `min_support` gold instances are dropped; the
// result is sorted by descending delta. Throws DataError when runs disagree
// on gold or labels.
std::vector<GroupDelta> GroupDeltaRecall(std::span<const RunDecisions> group_a,
                                         std::span<const RunDecisions> group_b,
                                         std::int64_t min_support,
                                         PoolingRule rule = PoolingRule::kMeanRecall);

std::string GroupDeltaCsv(std::span<const GroupDelta> deltas);

struct GridCell {
  std::string encoder;
  std::string method;
  double value = 0.0;
};

// Heatmap data: methods as rows, encoders as columns, both in first-seen
// order, with per-row and per-column maxima.
struct Grid {
  std::vector<std::string> methods;
  std::vector<std::string> encoders;
  std::vector<std::vector<std::optional<double>>> cells;  // [method][encoder]
  std::vector<std::optional<double>> row_max;
  std::vector<std::optional<double>> col_max;
};

Grid BuildGrid(std::span<const GridCell> cells);
std::string GridCsv(const Grid& grid);

}  // namespace spanprobe

#endif  // SPANPROBE_EVALUATION_H_

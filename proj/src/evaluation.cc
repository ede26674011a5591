#include "spanprobe/evaluation.h"

#include <algorithm>
#include <map>
#include <string_view>

#include "spanprobe/csv.h"
#include "spanprobe/errors.h"

namespace spanprobe {
namespace {

double SafeRatio(std::int64_t num, std::int64_t den) {
  return den > 0 ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
}

void CheckRunsAgree(const RunDecisions& reference, const RunDecisions& run) {
  if (run.labels != reference.labels) {
    throw DataError("runs use different label vocabularies");
  }
  if (run.gold != reference.gold) {
    throw DataError("runs were scored against different gold annotations");
  }
  if (run.predicted.size() != run.gold.size()) {
    throw DataError("run has mismatched prediction and gold counts");
  }
}

// Per-label count of gold instances recalled by a group.
std::vector<double> GroupRecalled(std::span<const RunDecisions> group,
                                  PoolingRule rule, std::size_t label_count) {
  std::vector<double> recalled(label_count, 0.0);
  const std::size_t targets = group.front().gold.size();
  for (std::size_t t = 0; t < targets; ++t) {
    for (int label : group.front().gold[t]) {
      std::size_t hits = 0;
      for (const RunDecisions& run : group) {
        const auto& predicted = run.predicted[t];
        if (std::binary_search(predicted.begin(), predicted.end(), label)) ++hits;
      }
      if (rule == PoolingRule::kMeanRecall) {
        recalled[label] += static_cast<double>(hits) / static_cast<double>(group.size());
      } else if (hits > 0) {
        recalled[label] += 1.0;
      }
    }
  }
  return recalled;
}

std::string FormatOptional(const std::optional<double>& value) {
  return value ? FormatReal(*value, 4) : std::string();
}

}  // namespace

double LabelCounts::precision() const { return SafeRatio(tp, tp + fp); }
double LabelCounts::recall() const { return SafeRatio(tp, tp + fn); }

double F1Score(double precision, double recall) {
  const double sum = precision + recall;
  return sum > 0.0 ? 2.0 * precision * recall / sum : 0.0;
}

MetricsReport FinalizeCounts(std::vector<LabelCounts> per_label,
                             std::size_t target_count) {
  MetricsReport report;
  for (const LabelCounts& counts : per_label) {
    report.tp += counts.tp;
    report.fp += counts.fp;
    report.fn += counts.fn;
  }
  report.precision = SafeRatio(report.tp, report.tp + report.fp);
  report.recall = SafeRatio(report.tp, report.tp + report.fn);
  report.f1 = F1Score(report.precision, report.recall);
  report.per_label = std::move(per_label);
  report.target_count = target_count;
  return report;
}

MetricsReport Score(std::span<const std::vector<double>> probabilities,
                    std::span<const std::vector<int>> golds, int label_count,
                    double threshold) {
  if (probabilities.size() != golds.size()) {
    throw DataError("score: " + std::to_string(probabilities.size()) +
                    " predictions for " + std::to_string(golds.size()) + " golds");
  }
  std::vector<LabelCounts> per_label(label_count);
  std::vector<char> is_gold(label_count);
  for (std::size_t t = 0; t < probabilities.size(); ++t) {
    if (static_cast<int>(probabilities[t].size()) != label_count) {
      throw DataError("score: target " + std::to_string(t) +
                      " has the wrong number of probabilities");
    }
    std::fill(is_gold.begin(), is_gold.end(), 0);
    for (int label : golds[t]) {
      if (label < 0 || label >= label_count) {
        throw DataError("score: gold label out of range");
      }
      is_gold[label] = 1;
    }
    for (int label = 0; label < label_count; ++label) {
      const bool predicted = probabilities[t][label] > threshold;
      if (predicted && is_gold[label]) ++per_label[label].tp;
      if (predicted && !is_gold[label]) ++per_label[label].fp;
      if (!predicted && is_gold[label]) ++per_label[label].fn;
    }
  }
  return FinalizeCounts(std::move(per_label), probabilities.size());
}

std::string MetricsCsv(const MetricsReport& report,
                       std::span<const std::string> labels) {
  std::string out = "label,tp,fp,fn,support,precision,recall,f1\n";
  for (std::size_t i = 0; i < report.per_label.size(); ++i) {
    const LabelCounts& c = report.per_label[i];
    const std::vector<std::string> row = {
        i < labels.size() ? labels[i] : std::to_string(i),
        std::to_string(c.tp), std::to_string(c.fp), std::to_string(c.fn),
        std::to_string(c.support()), FormatReal(c.precision()),
        FormatReal(c.recall()), FormatReal(F1Score(c.precision(), c.recall()))};
    out += CsvRow(row);
  }
  const std::vector<std::string> micro = {
      "micro", std::to_string(report.tp), std::to_string(report.fp),
      std::to_string(report.fn), std::to_string(report.tp + report.fn),
      FormatReal(report.precision), FormatReal(report.recall), FormatReal(report.f1)};
  out += CsvRow(micro);
  return out;
}

RunDecisions MakeRunDecisions(std::span<const std::vector<double>> probabilities,
                              std::span<const std::vector<int>> golds,
                              std::vector<std::string> labels, double threshold) {
  if (probabilities.size() != golds.size()) {
    throw DataError("predictions and golds differ in length");
  }
  RunDecisions run;
  run.labels = std::move(labels);
  run.predicted.resize(probabilities.size());
  run.gold.resize(golds.size());
  for (std::size_t t = 0; t < probabilities.size(); ++t) {
    for (std::size_t l = 0; l < probabilities[t].size(); ++l) {
      if (probabilities[t][l] > threshold) run.predicted[t].push_back(static_cast<int>(l));
    }
    run.gold[t] = golds[t];
    std::sort(run.gold[t].begin(), run.gold[t].end());
  }
  return run;
}

std::string PredictionsCsv(std::span<const std::vector<double>> probabilities,
                           std::span<const std::vector<int>> golds,
                           std::span<const std::string> labels) {
  std::string out = "target,label,gold,probability\n";
  for (std::size_t t = 0; t < probabilities.size(); ++t) {
    for (std::size_t l = 0; l < labels.size(); ++l) {
      const bool gold = std::find(golds[t].begin(), golds[t].end(),
                                  static_cast<int>(l)) != golds[t].end();
      const std::vector<std::string> row = {std::to_string(t), labels[l],
                                            gold ? "1" : "0",
                                            FormatReal(probabilities[t][l], 9)};
      out += CsvRow(row);
    }
  }
  return out;
}

RunDecisions ReadPredictionsCsv(const std::filesystem::path& path, double threshold) {
  const auto rows = ReadCsvFile(path);
  if (rows.empty() || rows[0] != std::vector<std::string>{"target", "label", "gold",
                                                          "probability"}) {
    throw DataError(path.string() + ": not a predictions CSV");
  }
  RunDecisions run;
  std::map<std::string, int> label_ids;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != 4) throw DataError(path.string() + ": malformed row " + std::to_string(r + 1));
    std::size_t target = 0;
    double probability = 0.0;
    try {
      target = std::stoul(row[0]);
      probability = std::stod(row[3]);
    } catch (const std::exception&) {
      throw DataError(path.string() + ": malformed number in row " + std::to_string(r + 1));
    }
    auto [it, inserted] = label_ids.emplace(row[1], static_cast<int>(run.labels.size()));
    if (inserted) run.labels.push_back(row[1]);
    if (target >= run.gold.size()) {
      run.gold.resize(target + 1);
      run.predicted.resize(target + 1);
    }
    if (row[2] == "1") run.gold[target].push_back(it->second);
    if (probability > threshold) run.predicted[target].push_back(it->second);
  }
  for (auto& g : run.gold) std::sort(g.begin(), g.end());
  for (auto& p : run.predicted) std::sort(p.begin(), p.end());
  return run;
}

std::vector<GroupDelta> GroupDeltaRecall(std::span<const RunDecisions> group_a,
                                         std::span<const RunDecisions> group_b,
                                         std::int64_t min_support, PoolingRule rule) {
  if (group_a.empty() || group_b.empty()) {
    throw DataError("each group needs at least one run");
  }
  const RunDecisions& reference = group_a.front();
  for (const RunDecisions& run : group_a) CheckRunsAgree(reference, run);
  for (const RunDecisions& run : group_b) CheckRunsAgree(reference, run);

  const std::size_t label_count = reference.labels.size();
  std::vector<std::int64_t> support(label_count, 0);
  for (const auto& gold : reference.gold) {
    for (int label : gold) {
      if (label < 0 || static_cast<std::size_t>(label) >= label_count) {
        throw DataError("gold label out of range");
      }
      ++support[label];
    }
  }
  const std::vector<double> recalled_a = GroupRecalled(group_a, rule, label_count);
  const std::vector<double> recalled_b = GroupRecalled(group_b, rule, label_count);

  std::vector<GroupDelta> deltas;
  for (std::size_t l = 0; l < label_count; ++l) {
    if (support[l] == 0 || support[l] < min_support) continue;
    GroupDelta delta;
    delta.label = reference.labels[l];
    delta.support = support[l];
    delta.recall_a = 100.0 * recalled_a[l] / static_cast<double>(support[l]);
    delta.recall_b = 100.0 * recalled_b[l] / static_cast<double>(support[l]);
    delta.delta_recall = delta.recall_a - delta.recall_b;
    deltas.push_back(std::move(delta));
  }
  std::stable_sort(deltas.begin(), deltas.end(),
                   [](const GroupDelta& x, const GroupDelta& y) {
                     return x.delta_recall > y.delta_recall;
                   });
  return deltas;
}

std::string GroupDeltaCsv(std::span<const GroupDelta> deltas) {
  std::string out = "label,delta_recall,recall_a,recall_b,support\n";
  for (const GroupDelta& d : deltas) {
    const std::vector<std::string> row = {d.label, FormatReal(d.delta_recall, 2),
                                          FormatReal(d.recall_a, 2),
                                          FormatReal(d.recall_b, 2),
                                          std::to_string(d.support)};
    out += CsvRow(row);
  }
  return out;
}

Grid BuildGrid(std::span<const GridCell> cells) {
  if (cells.empty()) throw DataError("grid needs at least one cell");
  Grid grid;
  std::map<std::string, std::size_t> method_index;
  std::map<std::string, std::size_t> encoder_index;
  for (const GridCell& cell : cells) {
    if (method_index.emplace(cell.method, grid.methods.size()).second) {
      grid.methods.push_back(cell.method);
    }
    if (encoder_index.emplace(cell.encoder, grid.encoders.size()).second) {
      grid.encoders.push_back(cell.encoder);
    }
  }
  grid.cells.assign(grid.methods.size(),
                    std::vector<std::optional<double>>(grid.encoders.size()));
  for (const GridCell& cell : cells) {
    auto& slot = grid.cells[method_index[cell.method]][encoder_index[cell.encoder]];
    if (slot) {
      throw DataError("duplicate grid cell (" + cell.encoder + ", " + cell.method + ")");
    }
    slot = cell.value;
  }
  auto keep_max = [](std::optional<double>& current, const std::optional<double>& v) {
    if (v && (!current || *v > *current)) current = v;
  };
  grid.row_max.assign(grid.methods.size(), std::nullopt);
  grid.col_max.assign(grid.encoders.size(), std::nullopt);
  for (std::size_t m = 0; m < grid.methods.size(); ++m) {
    for (std::size_t e = 0; e < grid.encoders.size(); ++e) {
      keep_max(grid.row_max[m], grid.cells[m][e]);
      keep_max(grid.col_max[e], grid.cells[m][e]);
    }
  }
  return grid;
}

std::string GridCsv(const Grid& grid) {
  std::vector<std::string> header = {"method"};
  header.insert(header.end(), grid.encoders.begin(), grid.encoders.end());
  header.push_back("row_max");
  std::string out = CsvRow(header);
  for (std::size_t m = 0; m < grid.methods.size(); ++m) {
    std::vector<std::string> row = {grid.methods[m]};
    for (const auto& cell : grid.cells[m]) row.push_back(FormatOptional(cell));
    row.push_back(FormatOptional(grid.row_max[m]));
    out += CsvRow(row);
  }
  std::vector<std::string> footer = {"col_max"};
  for (const auto& value : grid.col_max) footer.push_back(FormatOptional(value));
  footer.emplace_back();
  out += CsvRow(footer);
  return out;
}

}  // namespace spanprobe

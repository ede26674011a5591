#ifndef SPANPROBE_DATA_MODEL_H_
#define SPANPROBE_DATA_MODEL_H_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace spanprobe {

// Half-open word span [start, end).
struct SpanIndex {
  int start = 0;
  int end = 0;

  int length() const { return end - start; }
  bool operator==(const SpanIndex&) const = default;
  auto operator<=>(const SpanIndex&) const = default;
};

enum class Arity { kOneSpan = 1, kTwoSpan = 2 };

struct ProbingTarget {
  SpanIndex span1;
  std::optional<SpanIndex> span2;
  std::set<std::string> labels;

  bool operator==(const ProbingTarget&) const = default;
};

struct ProbingExample {
  std::vector<std::string> words;
  std::vector<ProbingTarget> targets;
  // Opaque metadata; null when the record carried none.
  nlohmann::json info;

  bool operator==(const ProbingExample&) const = default;
};

struct TaskSpec {
  std::string name;
  Arity arity = Arity::kOneSpan;
  std::vector<std::string> label_vocabulary;

  // Index of `label` in the vocabulary, or -1.
  int LabelIndex(std::string_view label) const;
};

// Static facts about the probing tasks this toolkit knows.
struct TaskInfo {
  std::string_view name;
  Arity arity;
  // SRL projects its two spans with separate matrices.
  bool separate_projections;
  // Label count of the reference corpus (0 when open-ended).
  int reference_label_count;
};

std::span<const TaskInfo> KnownTasks();
// Throws ConfigError for unknown names.
const TaskInfo& LookupTask(std::string_view name);

// Parses a JSON-lines corpus. When `arity` is given every target is checked
// against it. Errors carry the 1-based line number.
std::vector<ProbingExample> ParseExamples(std::istream& in,
                                          std::optional<Arity> arity = {});
ProbingExample ParseExampleLine(std::string_view line, std::size_t line_number,
                                std::optional<Arity> arity = {});

std::string SerializeExample(const ProbingExample& example);
void WriteExamples(std::ostream& out, std::span<const ProbingExample> examples);

// Sorted, duplicate-free label list. Throws DataError on an empty corpus.
std::vector<std::string> BuildLabelVocab(
    std::span<const ProbingExample> examples);

TaskSpec MakeTaskSpec(std::string_view task_name,
                      std::span<const ProbingExample> examples);

// Store sentence id for an example: info.sentence_id when present, otherwise
// its position in the corpus.
std::uint64_t SentenceIdOf(const ProbingExample& example, std::size_t position);

}  // namespace spanprobe

#endif  // SPANPROBE_DATA_MODEL_H_

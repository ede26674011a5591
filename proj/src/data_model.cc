#include "spanprobe/data_model.h"

#include <algorithm>
#include <array>
#include <istream>
#include <ostream>
#include <sstream>

#include "spanprobe/errors.h"

namespace spanprobe {
namespace {

using nlohmann::json;

constexpr std::array<TaskInfo, 7> kTasks = {{
    {"constituent_labeling", Arity::kOneSpan, false, 30},
    {"constituent_detection", Arity::kOneSpan, false, 2},
    {"nel", Arity::kOneSpan, false, 18},
    {"srl", Arity::kTwoSpan, true, 66},
    {"mention_detection", Arity::kOneSpan, false, 2},
    {"coref_arc", Arity::kTwoSpan, false, 2},
    {"synthetic", Arity::kOneSpan, false, 0},
}};

std::string LinePrefix(std::size_t line_number) {
  return "line " + std::to_string(line_number) + ": ";
}

SpanIndex ParseSpan(const json& value, int word_count, std::size_t line_number,
                    const char* key) {
  if (!value.is_array() || value.size() != 2 || !value[0].is_number_integer() ||
      !value[1].is_number_integer()) {
    throw DataError(LinePrefix(line_number) + key +
                    " must be an array of two integers");
  }
  SpanIndex span{value[0].get<int>(), value[1].get<int>()};
  if (span.start < 0 || span.start >= span.end || span.end > word_count) {
    throw DataError(LinePrefix(line_number) + "span out of bounds: " + key +
                    "=[" + std::to_string(span.start) + "," +
                    std::to_string(span.end) + ") with " +
                    std::to_string(word_count) + " words");
  }
  return span;
}

std::vector<std::string> SplitWords(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream stream(text);
  std::string word;
  while (stream >> word) words.push_back(std::move(word));
  return words;
}

json SpanToJson(const SpanIndex& span) { return json::array({span.start, span.end}); }

}  // namespace

int TaskSpec::LabelIndex(std::string_view label) const {
  auto it = std::find(label_vocabulary.begin(), label_vocabulary.end(), label);
  if (it == label_vocabulary.end()) return -1;
  return static_cast<int>(it - label_vocabulary.begin());
}

std::span<const TaskInfo> KnownTasks() { return kTasks; }

const TaskInfo& LookupTask(std::string_view name) {
  for (const TaskInfo& task : kTasks) {
    if (task.name == name) return task;
  }
  std::string known;
  for (const TaskInfo& task : kTasks) {
    if (!known.empty()) known += ", ";
    known += task.name;
  }
  throw ConfigError("unknown task '" + std::string(name) + "' (known: " +
                    known + ")");
}

ProbingExample ParseExampleLine(std::string_view line, std::size_t line_number,
                                std::optional<Arity> arity) {
  json record;
  try {
    record = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError(LinePrefix(line_number) + "malformed record: " + e.what());
  }
  if (!record.is_object()) {
    throw DataError(LinePrefix(line_number) + "record is not a JSON object");
  }
  if (!record.contains("text") || !record["text"].is_string()) {
    throw DataError(LinePrefix(line_number) + "missing string field 'text'");
  }

  ProbingExample example;
  example.words = SplitWords(record["text"].get<std::string>());
  if (example.words.empty()) {
    throw DataError(LinePrefix(line_number) + "empty sentence");
  }
  const int word_count = static_cast<int>(example.words.size());

  if (record.contains("info")) example.info = record["info"];

  if (!record.contains("targets")) return example;
  const json& targets = record["targets"];
  if (!targets.is_array()) {
    throw DataError(LinePrefix(line_number) + "'targets' must be an array");
  }
  for (const json& entry : targets) {
    if (!entry.is_object() || !entry.contains("span1")) {
      throw DataError(LinePrefix(line_number) + "target without span1");
    }
    ProbingTarget target;
    target.span1 = ParseSpan(entry["span1"], word_count, line_number, "span1");
    if (entry.contains("span2")) {
      target.span2 =
          ParseSpan(entry["span2"], word_count, line_number, "span2");
    }
    if (arity == Arity::kOneSpan && target.span2) {
      throw DataError(LinePrefix(line_number) +
                      "two-span target in one-span task");
    }
    if (arity == Arity::kTwoSpan && !target.span2) {
      throw DataError(LinePrefix(line_number) +
                      "one-span target in two-span task");
    }

    if (!entry.contains("label")) {
      throw DataError(LinePrefix(line_number) + "target without label");
    }
    const json& label = entry["label"];
    if (label.is_string()) {
      target.labels.insert(label.get<std::string>());
    } else if (label.is_array()) {
      for (const json& item : label) {
        if (!item.is_string()) {
          throw DataError(LinePrefix(line_number) + "labels must be strings");
        }
        target.labels.insert(item.get<std::string>());
      }
    } else {
      throw DataError(LinePrefix(line_number) +
                      "label must be a string or an array of strings");
    }
    if (target.labels.empty()) {
      throw DataError(LinePrefix(line_number) + "target with no labels");
    }
    example.targets.push_back(std::move(target));
  }
  return example;
}

std::vector<ProbingExample> ParseExamples(std::istream& in,
                                          std::optional<Arity> arity) {
  std::vector<ProbingExample> examples;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    examples.push_back(ParseExampleLine(line, line_number, arity));
  }
  return examples;
}

std::string SerializeExample(const ProbingExample& example) {
  std::string text;
  for (const std::string& word : example.words) {
    if (!text.empty()) text += ' ';
    text += word;
  }
  json targets = json::array();
  for (const ProbingTarget& target : example.targets) {
    json entry = json::object();
    entry["span1"] = SpanToJson(target.span1);
    if (target.span2) entry["span2"] = SpanToJson(*target.span2);
    if (target.labels.size() == 1) {
      entry["label"] = *target.labels.begin();
    } else {
      entry["label"] = json(target.labels);
    }
    targets.push_back(std::move(entry));
  }
  json record = json::object();
  record["text"] = std::move(text);
  record["targets"] = std::move(targets);
  if (!example.info.is_null()) record["info"] = example.info;
  return record.dump();
}

void WriteExamples(std::ostream& out, std::span<const ProbingExample> examples) {
  for (const ProbingExample& example : examples) {
    out << SerializeExample(example) << '\n';
  }
}

std::vector<std::string> BuildLabelVocab(
    std::span<const ProbingExample> examples) {
  std::set<std::string> labels;
  std::size_t target_count = 0;
  for (const ProbingExample& example : examples) {
    for (const ProbingTarget& target : example.targets) {
      ++target_count;
      labels.insert(target.labels.begin(), target.labels.end());
    }
  }
  if (target_count == 0) {
    throw DataError("cannot build a label vocabulary from a corpus with zero targets");
  }
  return {labels.begin(), labels.end()};
}

TaskSpec MakeTaskSpec(std::string_view task_name,
                      std::span<const ProbingExample> examples) {
  const TaskInfo& info = LookupTask(task_name);
  return TaskSpec{std::string(info.name), info.arity, BuildLabelVocab(examples)};
}

std::uint64_t SentenceIdOf(const ProbingExample& example, std::size_t position) {
  if (example.info.is_object()) {
    auto it = example.info.find("sentence_id");
    if (it != example.info.end() && it->is_number_unsigned()) {
      return it->get<std::uint64_t>();
    }
    if (it != example.info.end() && it->is_number_integer() &&
        it->get<std::int64_t>() >= 0) {
      return static_cast<std::uint64_t>(it->get<std::int64_t>());
    }
  }
  return position;
}

}  // namespace spanprobe

#ifndef SPANPROBE_DATASET_BUILDERS_H_
#define SPANPROBE_DATASET_BUILDERS_H_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spanprobe/data_model.h"
#include "spanprobe/embedding_store.h"

namespace spanprobe {

struct SamplerConfig {
  int negative_ratio = 1;
  std::uint64_t seed = 0;
  // Rejection-sampling attempts per negative before falling back to an
  // exhaustive draw over the remaining candidates.
  int max_attempts = 100;

  // Throws ConfigError.
  void Validate() const;
};

struct SentenceSampling {
  std::uint64_t sentence_id = 0;
  int positives = 0;
  int negatives = 0;
  int requested = 0;  // negatives wanted
  int skipped = 0;    // positives dropped for lack of a negative
  int shortfall = 0;  // requested - negatives
};

struct SamplerReport {
  std::vector<SentenceSampling> sentences;

  int positives() const;
  int negatives() const;
  int skipped() const;
  int shortfall() const;
};

struct BuiltDataset {
  std::vector<ProbingExample> examples;  // one per input example, same order
  SamplerReport report;
};

// Gold spans are span1 of every input target. Each distinct constituent gets
// one negative of the same length that is neither gold nor already drawn in
// that sentence; constituents without such a span are dropped and counted.
BuiltDataset BuildConstituentDetection(std::span<const ProbingExample> source,
                                       const SamplerConfig& config);

// Gold mentions are span1 and span2 of every input target. Each sentence gets
// negative_ratio negatives per mention where enough non-mention spans exist.
// Negative lengths follow the corpus-wide mention length distribution when
// the sentence allows it.
BuiltDataset BuildMentionDetection(std::span<const ProbingExample> source,
                                   const SamplerConfig& config);

// sentence_id,positives,negatives,requested,skipped,shortfall plus a total row.
std::string SamplerReportCsv(const SamplerReport& report);

enum class SyntheticRegime { kBoundary, kContent, kSeparable };

SyntheticRegime ParseSyntheticRegime(std::string_view name);
std::string_view RegimeName(SyntheticRegime regime);

struct SyntheticConfig {
  SyntheticRegime regime = SyntheticRegime::kBoundary;
  int train_targets = 5000;
  int valid_targets = 1000;
  int d_model = 32;
  int layer_count = 2;
  int class_count = 8;
  int targets_per_sentence = 5;
  int min_words = 12;
  int max_words = 24;
  // Probability that a word is split into two subtokens.
  double split_rate = 0.2;
  // content regime: probability that a word carries the trigger class.
  double trigger_rate = 0.12;
  // separable regime: spans whose mean score is within this of 0 are rejected.
  double margin = 0.05;
  std::uint64_t seed = 0;

  void Validate() const;
};

struct SyntheticCorpus {
  std::vector<ProbingExample> train;
  std::vector<ProbingExample> valid;
  std::vector<LayeredEmbeddings> sentences;  // covers train and valid ids
};

// Labels are "1" and "0".
//   boundary:  1 iff class(first word) < class(last word)
//   content:   1 iff class 0 occurs strictly inside the span; endpoints never
//              carry class 0 and the two labels are drawn with equal odds
//   separable: 1 iff the span's mean of a per-class score is positive; the
//              score is written to coordinate 0 of every layer
// Each word class has a fixed pseudo-random vector per layer; every subtoken
// of a word carries its class vector. Each sentence is framed by two special
// subtokens that belong to no word.
SyntheticCorpus GenerateSynthetic(const SyntheticConfig& config);

// The per-class, per-layer vector used by GenerateSynthetic.
std::vector<float> ClassVector(const SyntheticConfig& config, int word_class,
                               int layer);

}  // namespace spanprobe

#endif  // SPANPROBE_DATASET_BUILDERS_H_

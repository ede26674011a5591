#include "spanprobe/dataset_builders.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "spanprobe/csv.h"
#include "spanprobe/errors.h"
#include "spanprobe/random.h"

namespace spanprobe {
namespace {

using SpanSet = std::set<SpanIndex>;

std::mt19937_64 SentenceRng(std::uint64_t seed, std::uint64_t sentence_id,
                            std::uint64_t stream) {
  return std::mt19937_64(HashCounters({seed, stream, sentence_id}));
}

int UniformInt(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

ProbingTarget LabeledSpan(SpanIndex span, const char* label) {
  ProbingTarget target;
  target.span1 = span;
  target.labels = {label};
  return target;
}

// Free spans (not in `taken`) of word count n, optionally restricted to the
// given lengths.
std::vector<SpanIndex> FreeSpans(int n, const SpanSet& taken,
                                 const std::set<int>* lengths) {
  std::vector<SpanIndex> free;
  for (int length = 1; length <= n; ++length) {
    if (lengths && !lengths->contains(length)) continue;
    for (int start = 0; start + length <= n; ++start) {
      const SpanIndex span{start, start + length};
      if (!taken.contains(span)) free.push_back(span);
    }
  }
  return free;
}

}  // namespace

void SamplerConfig::Validate() const {
  if (negative_ratio < 1) throw ConfigError("negative_ratio must be at least 1");
  if (max_attempts < 1) throw ConfigError("max_attempts must be at least 1");
}

int SamplerReport::positives() const {
  int total = 0;
  for (const auto& s : sentences) total += s.positives;
  return total;
}
int SamplerReport::negatives() const {
  int total = 0;
  for (const auto& s : sentences) total += s.negatives;
  return total;
}
int SamplerReport::skipped() const {
  int total = 0;
  for (const auto& s : sentences) total += s.skipped;
  return total;
}
int SamplerReport::shortfall() const {
  int total = 0;
  for (const auto& s : sentences) total += s.shortfall;
  return total;
}

BuiltDataset BuildConstituentDetection(std::span<const ProbingExample> source,
                                       const SamplerConfig& config) {
  config.Validate();
  BuiltDataset built;
  for (std::size_t i = 0; i < source.size(); ++i) {
    const ProbingExample& in = source[i];
    const int n = static_cast<int>(in.words.size());
    const std::uint64_t id = SentenceIdOf(in, i);
    std::mt19937_64 rng = SentenceRng(config.seed, id, 1);

    SpanSet gold;
    for (const ProbingTarget& t : in.targets) gold.insert(t.span1);
    SpanSet taken = gold;

    ProbingExample out{in.words, {}, in.info};
    SentenceSampling row{id};
    for (const SpanIndex& positive : gold) {
      const int length = positive.length();
      std::vector<SpanIndex> drawn;
      for (int r = 0; r < config.negative_ratio; ++r) {
        std::optional<SpanIndex> negative;
        for (int a = 0; a < config.max_attempts && !negative; ++a) {
          const int start = UniformInt(rng, 0, n - length);
          const SpanIndex candidate{start, start + length};
          if (!taken.contains(candidate)) negative = candidate;
        }
        if (!negative) {
          const std::set<int> only{length};
          const std::vector<SpanIndex> free = FreeSpans(n, taken, &only);
          if (free.empty()) break;
          negative = free[UniformInt(rng, 0, static_cast<int>(free.size()) - 1)];
        }
        taken.insert(*negative);
        drawn.push_back(*negative);
      }
      row.requested += config.negative_ratio;
      if (drawn.empty()) {
        ++row.skipped;
        continue;
      }
      ++row.positives;
      out.targets.push_back(LabeledSpan(positive, "1"));
      for (const SpanIndex& negative : drawn) {
        out.targets.push_back(LabeledSpan(negative, "0"));
        ++row.negatives;
      }
    }
    row.shortfall = row.requested - row.negatives;
    built.report.sentences.push_back(row);
    built.examples.push_back(std::move(out));
  }
  return built;
}

BuiltDataset BuildMentionDetection(std::span<const ProbingExample> source,
                                   const SamplerConfig& config) {
  config.Validate();
  std::vector<SpanSet> golds(source.size());
  std::vector<int> lengths;
  for (std::size_t i = 0; i < source.size(); ++i) {
    for (const ProbingTarget& t : source[i].targets) {
      golds[i].insert(t.span1);
      if (t.span2) golds[i].insert(*t.span2);
    }
    for (const SpanIndex& m : golds[i]) lengths.push_back(m.length());
  }
  const std::set<int> length_support(lengths.begin(), lengths.end());

  BuiltDataset built;
  for (std::size_t i = 0; i < source.size(); ++i) {
    const ProbingExample& in = source[i];
    const int n = static_cast<int>(in.words.size());
    const std::uint64_t id = SentenceIdOf(in, i);
    std::mt19937_64 rng = SentenceRng(config.seed, id, 2);

    const SpanSet& gold = golds[i];
    SpanSet taken = gold;
    ProbingExample out{in.words, {}, in.info};
    SentenceSampling row{id};
    row.positives = static_cast<int>(gold.size());
    row.requested = config.negative_ratio * row.positives;
    for (const SpanIndex& mention : gold) out.targets.push_back(LabeledSpan(mention, "1"));

    for (int r = 0; r < row.requested; ++r) {
      std::optional<SpanIndex> negative;
      for (int a = 0; a < config.max_attempts && !negative; ++a) {
        const int length =
            lengths[UniformInt(rng, 0, static_cast<int>(lengths.size()) - 1)];
        if (length > n) continue;
        const int start = UniformInt(rng, 0, n - length);
        const SpanIndex candidate{start, start + length};
        if (!taken.contains(candidate)) negative = candidate;
      }
      if (!negative) {
        std::vector<SpanIndex> free = FreeSpans(n, taken, &length_support);
        if (free.empty()) free = FreeSpans(n, taken, nullptr);
        if (free.empty()) break;
        negative = free[UniformInt(rng, 0, static_cast<int>(free.size()) - 1)];
      }
      taken.insert(*negative);
      out.targets.push_back(LabeledSpan(*negative, "0"));
      ++row.negatives;
    }
    row.shortfall = row.requested - row.negatives;
    built.report.sentences.push_back(row);
    built.examples.push_back(std::move(out));
  }
  return built;
}

std::string SamplerReportCsv(const SamplerReport& report) {
  std::string out = "sentence_id,positives,negatives,requested,skipped,shortfall\n";
  int requested = 0;
  for (const SentenceSampling& s : report.sentences) {
    requested += s.requested;
    const std::vector<std::string> row = {
        std::to_string(s.sentence_id), std::to_string(s.positives),
        std::to_string(s.negatives),   std::to_string(s.requested),
        std::to_string(s.skipped),     std::to_string(s.shortfall)};
    out += CsvRow(row);
  }
  const std::vector<std::string> total = {
      "total",
      std::to_string(report.positives()),
      std::to_string(report.negatives()),
      std::to_string(requested),
      std::to_string(report.skipped()),
      std::to_string(report.shortfall())};
  out += CsvRow(total);
  return out;
}

SyntheticRegime ParseSyntheticRegime(std::string_view name) {
  if (name == "boundary") return SyntheticRegime::kBoundary;
  if (name == "content") return SyntheticRegime::kContent;
  if (name == "separable") return SyntheticRegime::kSeparable;
  throw ConfigError("unknown synthetic regime '" + std::string(name) +
                    "' (expected boundary, content or separable)");
}

std::string_view RegimeName(SyntheticRegime regime) {
  switch (regime) {
    case SyntheticRegime::kBoundary: return "boundary";
    case SyntheticRegime::kContent: return "content";
    case SyntheticRegime::kSeparable: return "separable";
  }
  return "?";
}

void SyntheticConfig::Validate() const {
  if (train_targets < 1 || valid_targets < 1) {
    throw ConfigError("synthetic target counts must be positive");
  }
  if (d_model < 1 || layer_count < 1) {
    throw ConfigError("d_model and layer_count must be positive");
  }
  if (class_count < 2) throw ConfigError("class_count must be at least 2");
  if (targets_per_sentence < 1) throw ConfigError("targets_per_sentence must be positive");
  if (min_words < 10 || max_words < min_words) {
    throw ConfigError("need 10 <= min_words <= max_words");
  }
  if (!(split_rate >= 0.0 && split_rate < 1.0)) throw ConfigError("split_rate must be in [0, 1)");
  if (!(trigger_rate > 0.0 && trigger_rate < 1.0)) {
    throw ConfigError("trigger_rate must be in (0, 1)");
  }
  if (!(margin >= 0.0 && margin < 1.0)) throw ConfigError("margin must be in [0, 1)");
}

namespace {

constexpr std::uint64_t kVectorStream = 0xc1a55;
constexpr std::uint64_t kScoreStream = 0x5c02e;
constexpr std::uint64_t kSentenceStream = 0x5e47;

double ClassScore(const SyntheticConfig& config, int word_class) {
  return 2.0 * UnitInterval(HashCounters(
                   {config.seed, kScoreStream, static_cast<std::uint64_t>(word_class)})) -
         1.0;
}

struct SyntheticSentence {
  std::vector<int> classes;      // per word
  std::vector<WordRange> alignment;
  std::uint32_t subtokens = 0;
};

SyntheticSentence DrawSentence(const SyntheticConfig& config, std::mt19937_64& rng) {
  SyntheticSentence s;
  const int n = UniformInt(rng, config.min_words, config.max_words);
  std::bernoulli_distribution split(config.split_rate);
  std::bernoulli_distribution trigger(config.trigger_rate);
  std::uint32_t t = 1;  // subtoken 0 is the opening special token
  for (int w = 0; w < n; ++w) {
    int c = 0;
    if (config.regime == SyntheticRegime::kContent) {
      c = trigger(rng) ? 0 : UniformInt(rng, 1, config.class_count - 1);
    } else {
      c = UniformInt(rng, 0, config.class_count - 1);
    }
    s.classes.push_back(c);
    const std::uint32_t width = split(rng) ? 2 : 1;
    s.alignment.push_back({t, t + width});
    t += width;
  }
  s.subtokens = t + 1;  // closing special token
  return s;
}

std::optional<ProbingTarget> DrawTarget(const SyntheticConfig& config,
                                        const SyntheticSentence& s,
                                        const std::set<SpanIndex>& used,
                                        std::mt19937_64& rng) {
  const int n = static_cast<int>(s.classes.size());
  const int min_length = config.regime == SyntheticRegime::kContent ? 3 : 2;
  const int max_length = std::min(10, n);
  bool want_positive = false;
  if (config.regime == SyntheticRegime::kContent) {
    want_positive = std::bernoulli_distribution(0.5)(rng);
  }
  for (int attempt = 0; attempt < 200; ++attempt) {
    const int length = UniformInt(rng, min_length, max_length);
    const int start = UniformInt(rng, 0, n - length);
    const SpanIndex span{start, start + length};
    if (used.contains(span)) continue;
    const int first = s.classes[span.start];
    const int last = s.classes[span.end - 1];
    bool label = false;
    switch (config.regime) {
      case SyntheticRegime::kBoundary:
        label = first < last;
        break;
      case SyntheticRegime::kContent: {
        if (first == 0 || last == 0) continue;
        label = std::find(s.classes.begin() + span.start + 1,
                          s.classes.begin() + span.end - 1, 0) !=
                s.classes.begin() + span.end - 1;
        if (label != want_positive) continue;
        break;
      }
      case SyntheticRegime::kSeparable: {
        double total = 0.0;
        std::uint32_t count = 0;
        for (int w = span.start; w < span.end; ++w) {
          const WordRange& r = s.alignment[w];
          total += ClassScore(config, s.classes[w]) * (r.end - r.start);
          count += r.end - r.start;
        }
        const double mean = total / count;
        if (std::abs(mean) < config.margin) continue;
        label = mean > 0.0;
        break;
      }
    }
    return LabeledSpan(span, label ? "1" : "0");
  }
  return std::nullopt;
}

}  // namespace

std::vector<float> ClassVector(const SyntheticConfig& config, int word_class,
                               int layer) {
  std::vector<float> v(config.d_model);
  const double scale = std::sqrt(3.0);
  for (int k = 0; k < config.d_model; ++k) {
    const double u = UnitInterval(HashCounters(
        {config.seed, kVectorStream, static_cast<std::uint64_t>(word_class),
         static_cast<std::uint64_t>(layer), static_cast<std::uint64_t>(k)}));
    v[k] = static_cast<float>((2.0 * u - 1.0) * scale);
  }
  if (config.regime == SyntheticRegime::kSeparable && word_class < config.class_count) {
    v[0] = static_cast<float>(ClassScore(config, word_class));
  }
  return v;
}

SyntheticCorpus GenerateSynthetic(const SyntheticConfig& config) {
  config.Validate();
  // Class ids class_count and class_count + 1 are the two special tokens.
  std::vector<std::vector<std::vector<float>>> vectors(config.class_count + 2);
  for (int c = 0; c < config.class_count + 2; ++c) {
    for (int l = 0; l < config.layer_count; ++l) {
      vectors[c].push_back(ClassVector(config, c, l));
    }
  }

  SyntheticCorpus corpus;
  std::uint64_t next_id = 0;
  auto fill = [&](int wanted, std::vector<ProbingExample>* out) {
    int made = 0;
    while (made < wanted) {
      const std::uint64_t id = next_id++;
      std::mt19937_64 rng(HashCounters({config.seed, kSentenceStream, id}));
      const SyntheticSentence s = DrawSentence(config, rng);

      ProbingExample example;
      for (int c : s.classes) example.words.push_back("c" + std::to_string(c));
      example.info = {{"sentence_id", id}};
      std::set<SpanIndex> used;
      for (int k = 0; k < config.targets_per_sentence && made < wanted; ++k) {
        std::optional<ProbingTarget> target = DrawTarget(config, s, used, rng);
        if (!target) continue;
        used.insert(target->span1);
        example.targets.push_back(std::move(*target));
        ++made;
      }

      LayeredEmbeddings e;
      e.sentence_id = id;
      e.layer_count = static_cast<std::uint32_t>(config.layer_count);
      e.subtoken_count = s.subtokens;
      e.dim = static_cast<std::uint32_t>(config.d_model);
      e.alignment = s.alignment;
      std::vector<int> token_class(s.subtokens, config.class_count);
      token_class.back() = config.class_count + 1;
      for (std::size_t w = 0; w < s.classes.size(); ++w) {
        for (std::uint32_t t = s.alignment[w].start; t < s.alignment[w].end; ++t) {
          token_class[t] = s.classes[w];
        }
      }
      e.values.reserve(static_cast<std::size_t>(config.layer_count) * s.subtokens *
                       config.d_model);
      for (int l = 0; l < config.layer_count; ++l) {
        for (std::uint32_t t = 0; t < s.subtokens; ++t) {
          const std::vector<float>& v = vectors[token_class[t]][l];
          e.values.insert(e.values.end(), v.begin(), v.end());
        }
      }
      corpus.sentences.push_back(std::move(e));
      out->push_back(std::move(example));
    }
  };
  fill(config.train_targets, &corpus.train);
  fill(config.valid_targets, &corpus.valid);
  return corpus;
}

}  // namespace spanprobe

#include "spanprobe/data_model.h"

#include <algorithm>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "spanprobe/errors.h"

namespace spanprobe {
namespace {

TEST(ParseExamples, MapsFields) {
  std::istringstream in(
      R"({"text":"Mary goes to the market","targets":[{"span1":[0,1],"label":"1"}]})");
  const auto examples = ParseExamples(in);
  ASSERT_EQ(examples.size(), 1u);
  EXPECT_EQ(examples[0].words.size(), 5u);
  ASSERT_EQ(examples[0].targets.size(), 1u);
  EXPECT_EQ(examples[0].targets[0].span1, (SpanIndex{0, 1}));
  EXPECT_EQ(examples[0].targets[0].labels, std::set<std::string>{"1"});
  EXPECT_FALSE(examples[0].targets[0].span2.has_value());
}

TEST(ParseExamples, SpanOutOfBounds) {
  std::istringstream in(
      R"({"text":"Mary goes to the market","targets":[{"span1":[4,6],"label":"1"}]})");
  try {
    ParseExamples(in);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("span out of bounds"), std::string::npos);
  }
}

TEST(ParseExamples, EmptyTargetsIsValid) {
  std::istringstream in(R"({"text":"a b","targets":[]})");
  const auto examples = ParseExamples(in);
  ASSERT_EQ(examples.size(), 1u);
  EXPECT_TRUE(examples[0].targets.empty());
}

TEST(ParseExamples, ReportsLineNumber) {
  std::istringstream in("{\"text\":\"a\",\"targets\":[]}\n\n{not json\n");
  try {
    ParseExamples(in);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_EQ(msg.rfind("line 3: ", 0), 0u) << msg;
    EXPECT_NE(msg.find("malformed record"), std::string::npos);
  }
}

TEST(ParseExamples, ArityIsEnforced) {
  const std::string two =
      R"({"text":"a b c","targets":[{"span1":[0,1],"span2":[1,3],"label":"ARG0"}]})";
  std::istringstream in(two);
  EXPECT_THROW(ParseExamples(in, Arity::kOneSpan), DataError);
  std::istringstream in2(two);
  EXPECT_NO_THROW(ParseExamples(in2, Arity::kTwoSpan));
  std::istringstream in3(R"({"text":"a b c","targets":[{"span1":[0,1],"label":"x"}]})");
  EXPECT_THROW(ParseExamples(in3, Arity::kTwoSpan), DataError);
}

TEST(ParseExamples, RejectsBadSpans) {
  for (const char* line : {
           R"({"text":"a b","targets":[{"span1":[1,1],"label":"x"}]})",
           R"({"text":"a b","targets":[{"span1":[-1,1],"label":"x"}]})",
           R"({"text":"a b","targets":[{"span1":[0],"label":"x"}]})",
           R"({"text":"a b","targets":[{"span1":[0,1]}]})",
           R"({"text":"a b","targets":[{"span1":[0,1],"label":[]}]})",
           R"({"text":"","targets":[]})",
           R"({"targets":[]})",
       }) {
    EXPECT_THROW(ParseExampleLine(line, 1), DataError) << line;
  }
}

TEST(ParseExamples, MultiLabelTargets) {
  const auto e = ParseExampleLine(
      R"({"text":"a b","targets":[{"span1":[0,2],"label":["B","A","B"]}]})", 1);
  EXPECT_EQ(e.targets[0].labels, (std::set<std::string>{"A", "B"}));
}

ProbingExample RandomExample(std::mt19937_64& rng, bool two_span) {
  ProbingExample e;
  const int n = std::uniform_int_distribution<int>(1, 12)(rng);
  for (int i = 0; i < n; ++i) e.words.push_back("w" + std::to_string(rng() % 50));
  const int targets = std::uniform_int_distribution<int>(0, 4)(rng);
  auto span = [&] {
    const int s = std::uniform_int_distribution<int>(0, n - 1)(rng);
    const int t = std::uniform_int_distribution<int>(s + 1, n)(rng);
    return SpanIndex{s, t};
  };
  for (int k = 0; k < targets; ++k) {
    ProbingTarget t;
    t.span1 = span();
    if (two_span) t.span2 = span();
    const int labels = std::uniform_int_distribution<int>(1, 3)(rng);
    for (int j = 0; j < labels; ++j) t.labels.insert("L" + std::to_string(rng() % 7));
    e.targets.push_back(t);
  }
  if (rng() % 2) e.info = {{"sentence_id", rng() % 1000}, {"source", "x"}};
  return e;
}

TEST(ParseExamples, RoundTripProperty) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const bool two = trial % 2 == 1;
    std::vector<ProbingExample> corpus;
    for (int i = 0; i < 5; ++i) corpus.push_back(RandomExample(rng, two));
    std::ostringstream out;
    WriteExamples(out, corpus);
    std::istringstream in(out.str());
    const auto parsed = ParseExamples(in, two ? Arity::kTwoSpan : Arity::kOneSpan);
    ASSERT_EQ(parsed, corpus);
    for (const auto& e : parsed) {
      for (const auto& t : e.targets) {
        EXPECT_LE(0, t.span1.start);
        EXPECT_LT(t.span1.start, t.span1.end);
        EXPECT_LE(t.span1.end, static_cast<int>(e.words.size()));
      }
    }
  }
}

TEST(BuildLabelVocab, DedupsAndSorts) {
  const auto e = ParseExampleLine(
      R"({"text":"a b c","targets":[{"span1":[0,1],"label":"VP"},{"span1":[0,2],"label":"NP"},{"span1":[1,2],"label":"NP"}]})",
      1);
  const std::vector<ProbingExample> corpus{e};
  EXPECT_EQ(BuildLabelVocab(corpus), (std::vector<std::string>{"NP", "VP"}));
}

TEST(BuildLabelVocab, SingleLabel) {
  const std::vector<ProbingExample> corpus{
      ParseExampleLine(R"({"text":"a","targets":[{"span1":[0,1],"label":"1"}]})", 1)};
  EXPECT_EQ(BuildLabelVocab(corpus), std::vector<std::string>{"1"});
}

TEST(BuildLabelVocab, ZeroTargetsIsAnError) {
  const std::vector<ProbingExample> corpus{ParseExampleLine(R"({"text":"a","targets":[]})", 1)};
  EXPECT_THROW(BuildLabelVocab(corpus), DataError);
}

TEST(BuildLabelVocab, ThirtyConstituentLabels) {
  const std::vector<std::string> tags = {
      "ADJP", "ADVP", "CONJP", "EMBED", "FRAG",  "INTJ",   "LST",  "META", "NAC",  "NML",
      "NP",   "NX",   "PP",    "PRN",   "PRT",   "QP",     "RRC",  "S",    "SBAR", "SBARQ",
      "SINV", "SQ",   "TOP",   "UCP",   "VP",    "WHADJP", "WHADVP", "WHNP", "WHPP", "X"};
  ASSERT_EQ(tags.size(), 30u);
  std::vector<ProbingExample> corpus;
  std::mt19937_64 rng(3);
  for (int i = 0; i < 300; ++i) {
    ProbingExample e;
    e.words = {"a", "b", "c"};
    ProbingTarget t;
    t.span1 = {0, 2};
    t.labels = {tags[(i * 7) % tags.size()]};
    e.targets.push_back(t);
    corpus.push_back(e);
  }
  std::shuffle(corpus.begin(), corpus.end(), rng);
  const TaskSpec spec = MakeTaskSpec("constituent_labeling", corpus);
  EXPECT_EQ(static_cast<int>(spec.label_vocabulary.size()),
            LookupTask("constituent_labeling").reference_label_count);
}

TEST(BuildLabelVocab, OrderIndependent) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ProbingExample> corpus;
    for (int i = 0; i < 8; ++i) corpus.push_back(RandomExample(rng, false));
    corpus[0].targets.push_back({{0, 1}, std::nullopt, {"Z"}});
    const auto reference = BuildLabelVocab(corpus);
    EXPECT_TRUE(std::is_sorted(reference.begin(), reference.end()));
    EXPECT_EQ(std::adjacent_find(reference.begin(), reference.end()), reference.end());
    std::shuffle(corpus.begin(), corpus.end(), rng);
    EXPECT_EQ(BuildLabelVocab(corpus), reference);
  }
}

TEST(TaskRegistry, ReferenceLabelCounts) {
  EXPECT_EQ(LookupTask("constituent_labeling").reference_label_count, 30);
  EXPECT_EQ(LookupTask("nel").reference_label_count, 18);
  EXPECT_EQ(LookupTask("srl").reference_label_count, 66);
  EXPECT_EQ(LookupTask("constituent_detection").reference_label_count, 2);
  EXPECT_EQ(LookupTask("mention_detection").reference_label_count, 2);
  EXPECT_EQ(LookupTask("coref_arc").reference_label_count, 2);
}

TEST(TaskRegistry, AritiesAndProjections) {
  for (const TaskInfo& t : KnownTasks()) {
    const bool pair = t.name == "srl" || t.name == "coref_arc";
    EXPECT_EQ(t.arity, pair ? Arity::kTwoSpan : Arity::kOneSpan) << t.name;
    EXPECT_EQ(t.separate_projections, t.name == "srl") << t.name;
  }
  EXPECT_THROW(LookupTask("pos"), ConfigError);
}

TEST(TaskSpec, LabelIndex) {
  const TaskSpec spec{"x", Arity::kOneSpan, {"a", "b", "c"}};
  EXPECT_EQ(spec.LabelIndex("b"), 1);
  EXPECT_EQ(spec.LabelIndex("d"), -1);
}

TEST(SentenceIdOf, InfoOrPosition) {
  ProbingExample e;
  e.words = {"a"};
  EXPECT_EQ(SentenceIdOf(e, 4), 4u);
  e.info = {{"sentence_id", 99}};
  EXPECT_EQ(SentenceIdOf(e, 4), 99u);
}

}  // namespace
}  // namespace spanprobe

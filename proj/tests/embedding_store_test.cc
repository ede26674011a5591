#include "spanprobe/embedding_store.h"

#include <cstring>
#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "spanprobe/errors.h"
#include "test_util.h"

namespace spanprobe {
namespace {

using testing::TempDir;

// Little-endian byte writer independent of the store implementation.
struct Bytes {
  std::vector<std::byte> data;
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) data.push_back(std::byte{b[i]});
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) data.push_back(std::byte((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) data.push_back(std::byte((v >> (8 * i)) & 0xff));
  }
  void f32(float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    u32(bits);
  }
};

LayeredEmbeddings RandomSentence(std::uint64_t id, std::uint32_t layers, std::uint32_t dim,
                                 std::mt19937_64& rng) {
  LayeredEmbeddings s;
  s.sentence_id = id;
  s.layer_count = layers;
  s.dim = dim;
  const int words = std::uniform_int_distribution<int>(1, 8)(rng);
  std::uint32_t t = rng() % 2;  // optional leading special token
  for (int w = 0; w < words; ++w) {
    const std::uint32_t width = 1 + rng() % 3;
    s.alignment.push_back({t, t + width});
    t += width;
  }
  s.subtoken_count = t + rng() % 2;
  std::normal_distribution<float> n(0.0f, 3.0f);
  s.values.resize(static_cast<std::size_t>(layers) * s.subtoken_count * dim);
  for (float& v : s.values) v = n(rng);
  return s;
}

TEST(StoreLayout, MatchesHandLaidBytes) {
  LayeredEmbeddings a;
  a.sentence_id = 7;
  a.layer_count = 2;
  a.dim = 3;
  a.subtoken_count = 4;
  a.alignment = {{1, 2}, {2, 3}};
  for (int i = 0; i < 24; ++i) a.values.push_back(0.5f * i - 3.25f);
  LayeredEmbeddings b;
  b.sentence_id = 3;
  b.layer_count = 2;
  b.dim = 3;
  b.subtoken_count = 2;
  b.alignment = {{0, 2}};
  for (int i = 0; i < 12; ++i) b.values.push_back(-1.0f / (i + 1));

  Bytes x;
  x.raw("SPE1", 4);
  x.u32(1);
  x.u64(2);
  x.u32(2);
  x.u32(3);
  const std::uint64_t header = 4 + 4 + 8 + 4 + 4 + 2 * 8;
  const std::uint64_t rec_a = 8 + 4 + 4 + 2 * 8 + 24 * 4;
  x.u64(header);
  x.u64(header + rec_a);
  for (const auto* s : {&a, &b}) {
    x.u64(s->sentence_id);
    x.u32(static_cast<std::uint32_t>(s->alignment.size()));
    x.u32(s->subtoken_count);
    for (const auto& r : s->alignment) {
      x.u32(r.start);
      x.u32(r.end);
    }
    for (float v : s->values) x.f32(v);
  }

  const std::vector<LayeredEmbeddings> sentences{a, b};
  EXPECT_EQ(SerializeStore(sentences), x.data);

  const EmbeddingStore store = EmbeddingStore::FromBytes(x.data);
  EXPECT_EQ(store.sentence_count(), 2u);
  EXPECT_EQ(store.layer_count(), 2u);
  EXPECT_EQ(store.dim(), 3u);
  EXPECT_EQ(store.Get(0), a);
  EXPECT_EQ(store.GetById(3), b);
  EXPECT_EQ(store.Alignment(1), b.alignment);
  // values[(l*T + t)*dim + k]: layer 1, token 2, k 1
  EXPECT_EQ(store.Get(0).at(1, 2, 1), a.values[(1 * 4 + 2) * 3 + 1]);
}

TEST(StoreRoundTrip, FileTwoSentences) {
  TempDir dir;
  std::mt19937_64 rng(1);
  const std::vector<LayeredEmbeddings> sentences{RandomSentence(0, 3, 5, rng),
                                                 RandomSentence(1, 3, 5, rng)};
  WriteStore(sentences, dir / "s.spe");
  const EmbeddingStore store = EmbeddingStore::Open(dir / "s.spe");
  EXPECT_EQ(store.sentence_count(), 2u);
  EXPECT_EQ(store.Get(0), sentences[0]);
  EXPECT_EQ(store.Get(1), sentences[1]);
  EXPECT_FALSE(std::filesystem::exists(dir / "s.spe.tmp"));
}

TEST(StoreRoundTrip, BitExactProperty) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::uint32_t layers = 1 + rng() % 4;
    const std::uint32_t dim = 1 + rng() % 9;
    std::vector<LayeredEmbeddings> sentences;
    const int count = 1 + rng() % 6;
    for (int i = 0; i < count; ++i) {
      sentences.push_back(RandomSentence(rng() % 100000 * 10 + i, layers, dim, rng));
    }
    sentences[0].values[0] = -0.0f;
    const auto bytes = SerializeStore(sentences);
    const EmbeddingStore store = EmbeddingStore::FromBytes(bytes);
    for (int i = 0; i < count; ++i) {
      const LayeredEmbeddings got = store.Get(i);
      ASSERT_EQ(got.alignment, sentences[i].alignment);
      ASSERT_EQ(got.values.size(), sentences[i].values.size());
      ASSERT_EQ(std::memcmp(got.values.data(), sentences[i].values.data(),
                            got.values.size() * sizeof(float)),
                0);
    }
  }
}

TEST(StoreRoundTrip, DeterministicBytes) {
  TempDir dir;
  std::mt19937_64 rng(3);
  const std::vector<LayeredEmbeddings> sentences{RandomSentence(5, 2, 4, rng)};
  WriteStore(sentences, dir / "a.spe");
  WriteStore(sentences, dir / "b.spe");
  EXPECT_EQ(testing::ReadAll(dir / "a.spe"), testing::ReadAll(dir / "b.spe"));
}

TEST(StoreWrite, MixedDimsRejected) {
  std::mt19937_64 rng(4);
  const std::vector<LayeredEmbeddings> sentences{RandomSentence(0, 2, 256, rng),
                                                 RandomSentence(1, 2, 512, rng)};
  EXPECT_THROW(SerializeStore(sentences), StoreError);
}

TEST(StoreWrite, BadAlignmentRejected) {
  std::mt19937_64 rng(5);
  LayeredEmbeddings s = RandomSentence(0, 1, 2, rng);
  s.alignment = {{0, 2}, {1, 3}};  // overlapping
  s.subtoken_count = 3;
  s.values.assign(6, 0.0f);
  const std::vector<LayeredEmbeddings> one{s};
  EXPECT_THROW(SerializeStore(one), StoreError);
  EXPECT_THROW(ValidateAlignment(std::vector<WordRange>{{0, 1}, {2, 3}}, 3), StoreError);
  EXPECT_THROW(ValidateAlignment(std::vector<WordRange>{{1, 1}}, 3), StoreError);
  EXPECT_THROW(ValidateAlignment(std::vector<WordRange>{{0, 4}}, 3), StoreError);
  EXPECT_NO_THROW(ValidateAlignment(std::vector<WordRange>{{1, 2}, {2, 4}}, 5));
}

std::string OpenError(std::vector<std::byte> bytes) {
  try {
    EmbeddingStore::FromBytes(std::move(bytes));
  } catch (const StoreError& e) {
    return e.what();
  }
  return "";
}

TEST(StoreOpen, BadMagic) {
  std::mt19937_64 rng(6);
  const std::vector<LayeredEmbeddings> s{RandomSentence(0, 1, 2, rng)};
  auto bytes = SerializeStore(s);
  std::memcpy(bytes.data(), "XXXX", 4);
  EXPECT_NE(OpenError(bytes).find("bad magic"), std::string::npos);
}

TEST(StoreOpen, VersionMismatch) {
  std::mt19937_64 rng(6);
  const std::vector<LayeredEmbeddings> s{RandomSentence(0, 1, 2, rng)};
  auto bytes = SerializeStore(s);
  bytes[4] = std::byte{2};
  EXPECT_NE(OpenError(bytes).find("version mismatch"), std::string::npos);
}

TEST(StoreOpen, TruncatedAnywhere) {
  std::mt19937_64 rng(7);
  const std::vector<LayeredEmbeddings> s{RandomSentence(0, 2, 3, rng),
                                         RandomSentence(1, 2, 3, rng)};
  const auto bytes = SerializeStore(s);
  for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
    std::vector<std::byte> prefix(bytes.begin(), bytes.begin() + cut);
    const std::string error = OpenError(prefix);
    if (cut < 4) {
      EXPECT_NE(error.find("bad magic"), std::string::npos) << cut;
    } else {
      EXPECT_NE(error.find("truncated"), std::string::npos) << cut;
    }
  }
}

TEST(StoreOpen, MissingFile) {
  EXPECT_THROW(EmbeddingStore::Open("/nonexistent/store.spe"), StoreError);
}

TEST(StoreOpen, DuplicateIdsRejected) {
  std::mt19937_64 rng(8);
  const std::vector<LayeredEmbeddings> s{RandomSentence(4, 1, 2, rng),
                                         RandomSentence(4, 1, 2, rng)};
  EXPECT_THROW(EmbeddingStore::FromBytes(SerializeStore(s)), StoreError);
}

TEST(StoreLookup, ById) {
  std::mt19937_64 rng(9);
  const std::vector<LayeredEmbeddings> s{RandomSentence(10, 1, 2, rng),
                                         RandomSentence(20, 1, 2, rng)};
  const EmbeddingStore store = EmbeddingStore::FromBytes(SerializeStore(s));
  EXPECT_EQ(store.FindOrdinal(20), 1u);
  EXPECT_FALSE(store.FindOrdinal(30).has_value());
  EXPECT_THROW(store.GetById(30), StoreError);
  EXPECT_THROW(store.Get(2), StoreError);
}

TEST(StoreConcurrency, ParallelReadersSeeIdenticalData) {
  TempDir dir;
  std::mt19937_64 rng(10);
  std::vector<LayeredEmbeddings> sentences;
  for (int i = 0; i < 40; ++i) sentences.push_back(RandomSentence(i, 3, 16, rng));
  WriteStore(sentences, dir / "c.spe");
  const EmbeddingStore store = EmbeddingStore::Open(dir / "c.spe");
  std::vector<int> mismatches(8, 0);
  std::vector<std::thread> threads;
  for (int w = 0; w < 8; ++w) {
    threads.emplace_back([&, w] {
      const EmbeddingStore copy = store;
      for (int rep = 0; rep < 20; ++rep) {
        for (int i = 0; i < 40; ++i) {
          const int ordinal = (i * 7 + w + rep) % 40;
          if (!(copy.Get(ordinal) == sentences[ordinal])) ++mismatches[w];
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  for (int m : mismatches) EXPECT_EQ(m, 0);
}

TEST(MapSpan, Examples) {
  const std::vector<WordRange> identity{{0, 1}, {1, 2}, {2, 3}, {3, 4}};
  EXPECT_EQ(MapSpan(identity, {1, 3}), (SubtokenSpan{1, 3}));
  const std::vector<WordRange> split{{0, 2}, {2, 3}};
  EXPECT_EQ(MapSpan(split, {0, 2}), (SubtokenSpan{0, 3}));
  const std::vector<WordRange> wide{{0, 1}, {1, 2}, {2, 5}};
  EXPECT_EQ(MapSpan(wide, {1, 2}), (SubtokenSpan{1, 2}));
  EXPECT_EQ(MapSpan(wide, {2, 3}), (SubtokenSpan{2, 5}));
}

TEST(MapSpan, MonotoneProperty) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const LayeredEmbeddings s = RandomSentence(0, 1, 1, rng);
    const int n = static_cast<int>(s.alignment.size());
    const int a = std::uniform_int_distribution<int>(0, n - 1)(rng);
    const int b = std::uniform_int_distribution<int>(a + 1, n)(rng);
    const int a2 = std::uniform_int_distribution<int>(0, a)(rng);
    const int b2 = std::uniform_int_distribution<int>(b, n)(rng);
    const SubtokenSpan inner = MapSpan(s.alignment, {a, b});
    const SubtokenSpan outer = MapSpan(s.alignment, {a2, b2});
    EXPECT_LT(inner.start, inner.end);
    EXPECT_LE(outer.start, inner.start);
    EXPECT_GE(outer.end, inner.end);
  }
}

}  // namespace
}  // namespace spanprobe

#ifndef SPANPROBE_EMBEDDING_STORE_H_
#define SPANPROBE_EMBEDDING_STORE_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "spanprobe/data_model.h"

namespace spanprobe {

// Subtoken range [start, end) covered by one word.
struct WordRange {
  std::uint32_t start = 0;
  std::uint32_t end = 0;

  bool operator==(const WordRange&) const = default;
};

// Half-open subtoken span produced by MapSpan.
struct SubtokenSpan {
  int start = 0;
  int end = 0;

  int length() const { return end - start; }
  bool operator==(const SubtokenSpan&) const = default;
};

// All encoder layers (embedding layer first) for one sentence.
struct LayeredEmbeddings {
  std::uint64_t sentence_id = 0;
  std::uint32_t layer_count = 0;
  std::uint32_t subtoken_count = 0;
  std::uint32_t dim = 0;
  std::vector<WordRange> alignment;
  // layer-major, then token-major: values[(l * subtoken_count + t) * dim + k]
  std::vector<float> values;

  std::size_t word_count() const { return alignment.size(); }
  float at(std::uint32_t layer, std::uint32_t token, std::uint32_t k) const {
    return values[(static_cast<std::size_t>(layer) * subtoken_count + token) *
                      dim + k];
  }

  bool operator==(const LayeredEmbeddings&) const = default;
};

// Throws StoreError unless the ranges are non-empty, ordered, adjacent and
// inside [0, subtoken_count). Subtokens before the first word and after the
// last one are special tokens that belong to no word.
void ValidateAlignment(std::span<const WordRange> alignment,
                       std::uint32_t subtoken_count);

// First subtoken of the first word to the end of the last word.
SubtokenSpan MapSpan(std::span<const WordRange> alignment, SpanIndex words);

inline constexpr char kStoreMagic[4] = {'S', 'P', 'E', '1'};
inline constexpr std::uint32_t kStoreVersion = 1;

std::vector<std::byte> SerializeStore(
    std::span<const LayeredEmbeddings> sentences);
// Writes through a temporary file so a failed write leaves no partial store.
void WriteStore(std::span<const LayeredEmbeddings> sentences,
                const std::filesystem::path& path);

// Read-only random-access view of a store file. Copies share the mapping and
// are safe to use from several threads.
class EmbeddingStore {
 public:
  static EmbeddingStore Open(const std::filesystem::path& path);
  static EmbeddingStore FromBytes(std::vector<std::byte> bytes);

  std::uint64_t sentence_count() const { return offsets_.size(); }
  std::uint32_t layer_count() const { return layer_count_; }
  std::uint32_t dim() const { return dim_; }

  LayeredEmbeddings Get(std::size_t ordinal) const;
  // Word to subtoken alignment only, without copying the values.
  std::vector<WordRange> Alignment(std::size_t ordinal) const;
  std::optional<std::size_t> FindOrdinal(std::uint64_t sentence_id) const;
  // Throws StoreError when the id is absent.
  LayeredEmbeddings GetById(std::uint64_t sentence_id) const;

 private:
  EmbeddingStore(std::shared_ptr<const void> owner,
                 std::span<const std::byte> bytes);

  std::shared_ptr<const void> owner_;
  std::span<const std::byte> bytes_;
  std::uint32_t layer_count_ = 0;
  std::uint32_t dim_ = 0;
  std::vector<std::uint64_t> offsets_;
  std::unordered_map<std::uint64_t, std::size_t> ordinal_by_id_;
};

}  // namespace spanprobe

#endif  // SPANPROBE_EMBEDDING_STORE_H_

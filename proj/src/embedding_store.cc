#include "spanprobe/embedding_store.h"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <string>

#include "spanprobe/errors.h"

namespace spanprobe {

static_assert(std::endian::native == std::endian::little,
              "store I/O assumes a little-endian host");

namespace {

constexpr std::size_t kHeaderBytes = 4 + 4 + 8 + 4 + 4;
constexpr std::size_t kRecordHeaderBytes = 8 + 4 + 4;

template <typename T>
void Append(std::vector<std::byte>& out, T value) {
  const auto* raw = reinterpret_cast<const std::byte*>(&value);
  out.insert(out.end(), raw, raw + sizeof(T));
}

// Bounds-checked little-endian cursor.
class Cursor {
 public:
  Cursor(std::span<const std::byte> bytes, std::size_t offset)
      : bytes_(bytes), offset_(offset) {}

  template <typename T>
  T Read() {
    Require(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + offset_, sizeof(T));
    offset_ += sizeof(T);
    return value;
  }

  void ReadFloats(std::span<float> out) {
    Require(out.size_bytes());
    std::memcpy(out.data(), bytes_.data() + offset_, out.size_bytes());
    offset_ += out.size_bytes();
  }

  void Require(std::size_t count) const {
    if (offset_ > bytes_.size() || bytes_.size() - offset_ < count) {
      throw StoreError("truncated store: need " + std::to_string(count) +
                       " bytes at offset " + std::to_string(offset_) +
                       ", file has " + std::to_string(bytes_.size()));
    }
  }

  std::size_t offset() const { return offset_; }

 private:
  std::span<const std::byte> bytes_;
  std::size_t offset_;
};

std::uint64_t RecordBytes(std::uint32_t word_count, std::uint32_t subtoken_count,
                          std::uint32_t layer_count, std::uint32_t dim) {
  return kRecordHeaderBytes + 8ull * word_count +
         4ull * layer_count * subtoken_count * dim;
}

class MappedFile {
 public:
  MappedFile(void* addr, std::size_t size) : addr_(addr), size_(size) {}
  ~MappedFile() {
    if (addr_ != nullptr) munmap(addr_, size_);
  }
  MappedFile(const MappedFile&) = delete;
  MappedFile& operator=(const MappedFile&) = delete;

  std::span<const std::byte> bytes() const {
    return {static_cast<const std::byte*>(addr_), size_};
  }

 private:
  void* addr_;
  std::size_t size_;
};

}  // namespace

void ValidateAlignment(std::span<const WordRange> alignment,
                       std::uint32_t subtoken_count) {
  for (std::size_t w = 0; w < alignment.size(); ++w) {
    const WordRange& range = alignment[w];
    if (range.start >= range.end || range.end > subtoken_count) {
      throw StoreError("word " + std::to_string(w) + " has invalid subtoken range [" +
                       std::to_string(range.start) + "," +
                       std::to_string(range.end) + ") for " +
                       std::to_string(subtoken_count) + " subtokens");
    }
    if (w > 0 && range.start != alignment[w - 1].end) {
      throw StoreError("word " + std::to_string(w) +
                       " is not adjacent to the previous word");
    }
  }
}

SubtokenSpan MapSpan(std::span<const WordRange> alignment, SpanIndex words) {
  return {static_cast<int>(alignment[words.start].start),
          static_cast<int>(alignment[words.end - 1].end)};
}

std::vector<std::byte> SerializeStore(
    std::span<const LayeredEmbeddings> sentences) {
  std::uint32_t layer_count = 0;
  std::uint32_t dim = 0;
  if (!sentences.empty()) {
    layer_count = sentences.front().layer_count;
    dim = sentences.front().dim;
  }
  for (const LayeredEmbeddings& s : sentences) {
    if (s.layer_count != layer_count || s.dim != dim) {
      throw StoreError("inconsistent geometry: sentence " +
                       std::to_string(s.sentence_id) + " has " +
                       std::to_string(s.layer_count) + " layers x dim " +
                       std::to_string(s.dim) + ", expected " +
                       std::to_string(layer_count) + " x " + std::to_string(dim));
    }
    if (s.values.size() !=
        static_cast<std::size_t>(s.layer_count) * s.subtoken_count * s.dim) {
      throw StoreError("sentence " + std::to_string(s.sentence_id) +
                       " value count does not match its shape");
    }
    if (s.alignment.empty()) {
      throw StoreError("sentence " + std::to_string(s.sentence_id) +
                       " has no words");
    }
    ValidateAlignment(s.alignment, s.subtoken_count);
  }

  std::vector<std::byte> out;
  out.insert(out.end(), reinterpret_cast<const std::byte*>(kStoreMagic),
             reinterpret_cast<const std::byte*>(kStoreMagic) + 4);
  Append<std::uint32_t>(out, kStoreVersion);
  Append<std::uint64_t>(out, sentences.size());
  Append<std::uint32_t>(out, layer_count);
  Append<std::uint32_t>(out, dim);

  std::uint64_t offset = kHeaderBytes + 8ull * sentences.size();
  for (const LayeredEmbeddings& s : sentences) {
    Append<std::uint64_t>(out, offset);
    offset += RecordBytes(static_cast<std::uint32_t>(s.alignment.size()),
                          s.subtoken_count, layer_count, dim);
  }
  out.reserve(offset);
  for (const LayeredEmbeddings& s : sentences) {
    Append<std::uint64_t>(out, s.sentence_id);
    Append<std::uint32_t>(out, static_cast<std::uint32_t>(s.alignment.size()));
    Append<std::uint32_t>(out, s.subtoken_count);
    for (const WordRange& range : s.alignment) {
      Append<std::uint32_t>(out, range.start);
      Append<std::uint32_t>(out, range.end);
    }
    const auto* raw = reinterpret_cast<const std::byte*>(s.values.data());
    out.insert(out.end(), raw, raw + s.values.size() * sizeof(float));
  }
  return out;
}

void WriteStore(std::span<const LayeredEmbeddings> sentences,
                const std::filesystem::path& path) {
  const std::vector<std::byte> bytes = SerializeStore(sentences);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StoreError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      std::filesystem::remove(tmp);
      throw StoreError("write failed for " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

EmbeddingStore EmbeddingStore::Open(const std::filesystem::path& path) {
  const int fd = ::open(path.c_str(), O_RDONLY);
  if (fd < 0) {
    throw StoreError("cannot open store " + path.string() + ": " +
                     std::strerror(errno));
  }
  struct stat st {};
  if (::fstat(fd, &st) != 0) {
    ::close(fd);
    throw StoreError("cannot stat store " + path.string());
  }
  const auto size = static_cast<std::size_t>(st.st_size);
  if (size == 0) {
    ::close(fd);
    throw StoreError("truncated store: " + path.string() + " is empty");
  }
  void* addr = ::mmap(nullptr, size, PROT_READ, MAP_PRIVATE, fd, 0);
  ::close(fd);
  if (addr == MAP_FAILED) {
    throw StoreError("cannot map store " + path.string());
  }
  auto mapping = std::make_shared<MappedFile>(addr, size);
  const std::span<const std::byte> bytes = mapping->bytes();
  return EmbeddingStore(std::move(mapping), bytes);
}

EmbeddingStore EmbeddingStore::FromBytes(std::vector<std::byte> bytes) {
  auto owned = std::make_shared<std::vector<std::byte>>(std::move(bytes));
  const std::span<const std::byte> view(owned->data(), owned->size());
  return EmbeddingStore(std::move(owned), view);
}

EmbeddingStore::EmbeddingStore(std::shared_ptr<const void> owner,
                               std::span<const std::byte> bytes)
    : owner_(std::move(owner)), bytes_(bytes) {
  if (bytes_.size() < 4 || std::memcmp(bytes_.data(), kStoreMagic, 4) != 0) {
    throw StoreError("bad magic: not an embedding store");
  }
  Cursor cursor(bytes_, 4);
  const auto version = cursor.Read<std::uint32_t>();
  if (version != kStoreVersion) {
    throw StoreError("version mismatch: store has version " +
                     std::to_string(version) + ", reader supports " +
                     std::to_string(kStoreVersion));
  }
  const auto count = cursor.Read<std::uint64_t>();
  layer_count_ = cursor.Read<std::uint32_t>();
  dim_ = cursor.Read<std::uint32_t>();
  if (count > bytes_.size() / 8) {
    throw StoreError("truncated store: offset table exceeds file size");
  }
  cursor.Require(8 * count);
  offsets_.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    offsets_[i] = cursor.Read<std::uint64_t>();
  }

  std::uint64_t min_offset = cursor.offset();
  ordinal_by_id_.reserve(count);
  for (std::size_t i = 0; i < offsets_.size(); ++i) {
    if (offsets_[i] < min_offset) {
      throw StoreError("corrupt offset table at sentence ordinal " +
                       std::to_string(i));
    }
    Cursor record(bytes_, offsets_[i]);
    const auto id = record.Read<std::uint64_t>();
    const auto words = record.Read<std::uint32_t>();
    const auto subtokens = record.Read<std::uint32_t>();
    const std::uint64_t length = RecordBytes(words, subtokens, layer_count_, dim_);
    Cursor(bytes_, offsets_[i]).Require(length);
    if (!ordinal_by_id_.emplace(id, i).second) {
      throw StoreError("duplicate sentence id " + std::to_string(id));
    }
    min_offset = offsets_[i] + length;
  }
}

LayeredEmbeddings EmbeddingStore::Get(std::size_t ordinal) const {
  if (ordinal >= offsets_.size()) {
    throw StoreError("sentence ordinal " + std::to_string(ordinal) +
                     " out of range");
  }
  Cursor cursor(bytes_, offsets_[ordinal]);
  LayeredEmbeddings sentence;
  sentence.sentence_id = cursor.Read<std::uint64_t>();
  const auto words = cursor.Read<std::uint32_t>();
  sentence.subtoken_count = cursor.Read<std::uint32_t>();
  sentence.layer_count = layer_count_;
  sentence.dim = dim_;
  sentence.alignment.resize(words);
  for (WordRange& range : sentence.alignment) {
    range.start = cursor.Read<std::uint32_t>();
    range.end = cursor.Read<std::uint32_t>();
  }
  ValidateAlignment(sentence.alignment, sentence.subtoken_count);
  sentence.values.resize(static_cast<std::size_t>(layer_count_) *
                         sentence.subtoken_count * dim_);
  cursor.ReadFloats(sentence.values);
  return sentence;
}

std::vector<WordRange> EmbeddingStore::Alignment(std::size_t ordinal) const {
  if (ordinal >= offsets_.size()) {
    throw StoreError("sentence ordinal " + std::to_string(ordinal) +
                     " out of range");
  }
  Cursor cursor(bytes_, offsets_[ordinal] + 8);
  const auto words = cursor.Read<std::uint32_t>();
  const auto subtokens = cursor.Read<std::uint32_t>();
  std::vector<WordRange> alignment(words);
  for (WordRange& range : alignment) {
    range.start = cursor.Read<std::uint32_t>();
    range.end = cursor.Read<std::uint32_t>();
  }
  ValidateAlignment(alignment, subtokens);
  return alignment;
}

std::optional<std::size_t> EmbeddingStore::FindOrdinal(
    std::uint64_t sentence_id) const {
  auto it = ordinal_by_id_.find(sentence_id);
  if (it == ordinal_by_id_.end()) return std::nullopt;
  return it->second;
}

LayeredEmbeddings EmbeddingStore::GetById(std::uint64_t sentence_id) const {
  const auto ordinal = FindOrdinal(sentence_id);
  if (!ordinal) {
    throw StoreError("sentence id " + std::to_string(sentence_id) +
                     " not found in store");
  }
  return Get(*ordinal);
}

}  // namespace spanprobe

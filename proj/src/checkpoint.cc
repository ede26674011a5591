#include "spanprobe/checkpoint.h"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "spanprobe/csv.h"
#include "spanprobe/errors.h"

namespace spanprobe {
namespace {

using nlohmann::json;

template <typename T>
void Append(std::vector<std::byte>& out, T value) {
  const auto* raw = reinterpret_cast<const std::byte*>(&value);
  out.insert(out.end(), raw, raw + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  template <typename T>
  T Read() {
    if (bytes_.size() - offset_ < sizeof(T)) {
      throw DataError("truncated checkpoint");
    }
    T value;
    std::memcpy(&value, bytes_.data() + offset_, sizeof(T));
    offset_ += sizeof(T);
    return value;
  }

  std::string ReadString(std::size_t length) {
    if (bytes_.size() - offset_ < length) throw DataError("truncated checkpoint");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + offset_), length);
    offset_ += length;
    return s;
  }

  bool done() const { return offset_ == bytes_.size(); }

 private:
  std::span<const std::byte> bytes_;
  std::size_t offset_ = 0;
};

std::vector<std::byte> ReadFileBytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  std::vector<std::byte> bytes(raw.size());
  std::memcpy(bytes.data(), raw.data(), raw.size());
  return bytes;
}

}  // namespace

std::vector<std::byte> SerializeParams(const ProbeParams& params) {
  std::vector<std::byte> out;
  out.insert(out.end(), reinterpret_cast<const std::byte*>(kCheckpointMagic),
             reinterpret_cast<const std::byte*>(kCheckpointMagic) + 4);
  Append<std::uint32_t>(out, kCheckpointVersion);
  std::uint32_t count = 0;
  ForEachTensor([&](const std::string&, const auto&) { ++count; }, params);
  Append<std::uint32_t>(out, count);
  ForEachTensor(
      [&](const std::string& name, const auto& tensor) {
        Append<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        const auto* raw = reinterpret_cast<const std::byte*>(name.data());
        out.insert(out.end(), raw, raw + name.size());
        Append<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rows()));
        Append<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.cols()));
        for (Eigen::Index r = 0; r < tensor.rows(); ++r) {
          for (Eigen::Index c = 0; c < tensor.cols(); ++c) {
            Append<double>(out, tensor(r, c));
          }
        }
      },
      params);
  return out;
}

ProbeParams DeserializeParams(std::span<const std::byte> bytes,
                              const ProbeConfig& config) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw DataError("bad magic: not a probe checkpoint");
  }
  Reader reader(bytes.subspan(4));
  const auto version = reader.Read<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint version mismatch: " + std::to_string(version));
  }
  const auto count = reader.Read<std::uint32_t>();
  std::map<std::string, Eigen::MatrixXd> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = reader.ReadString(reader.Read<std::uint32_t>());
    const auto rows = reader.Read<std::uint32_t>();
    const auto cols = reader.Read<std::uint32_t>();
    Eigen::MatrixXd m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = reader.Read<double>();
    }
    tensors.emplace(name, std::move(m));
  }
  if (!reader.done()) throw DataError("trailing bytes after checkpoint tensors");

  ProbeParams params = ProbeParams::Zeros(config);
  std::size_t used = 0;
  ForEachTensor(
      [&](const std::string& name, auto& tensor) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw DataError("checkpoint lacks tensor " + name);
        if (it->second.rows() != tensor.rows() || it->second.cols() != tensor.cols()) {
          throw DataError("checkpoint tensor " + name + " has shape " +
                          std::to_string(it->second.rows()) + "x" +
                          std::to_string(it->second.cols()) + ", expected " +
                          std::to_string(tensor.rows()) + "x" +
                          std::to_string(tensor.cols()));
        }
        tensor = it->second;
        ++used;
      },
      params);
  if (used != tensors.size()) {
    throw DataError("checkpoint carries tensors this probe does not use");
  }
  return params;
}

void SaveParams(const ProbeParams& params, const std::filesystem::path& path) {
  const std::vector<std::byte> bytes = SerializeParams(params);
  WriteFileAtomically(path, std::string_view(reinterpret_cast<const char*>(bytes.data()),
                                             bytes.size()));
}

ProbeParams LoadParams(const std::filesystem::path& path, const ProbeConfig& config) {
  return DeserializeParams(ReadFileBytes(path), config);
}

json MetadataToJson(const CheckpointMetadata& metadata) {
  const ProbeConfig& p = metadata.probe;
  json probe = {
      {"arity", static_cast<int>(p.arity)},
      {"separate_projections", p.separate_projections},
      {"label_count", p.label_count},
      {"input_dim", p.input_dim},
      {"layer_count", p.layer_count},
      {"proj_dim", p.proj_dim},
      {"hidden_dim", p.hidden_dim},
      {"dropout", p.dropout},
      {"norm_eps", p.norm_eps},
      {"method", std::string(MethodName(p.method))},
      {"mix", std::string(MixModeName(p.mix_mode))},
  };
  if (p.coherent_split) {
    probe["coherent_split"] = {p.coherent_split->a, p.coherent_split->b};
  }
  return json{
      {"format", "spanprobe-checkpoint"},
      {"version", kCheckpointVersion},
      {"task", metadata.task},
      {"encoder", metadata.encoder},
      {"seed", metadata.seed},
      {"labels", metadata.label_vocabulary},
      {"probe", probe},
      {"extra", metadata.extra},
  };
}

CheckpointMetadata MetadataFromJson(const json& j) {
  try {
    CheckpointMetadata m;
    m.task = j.at("task").get<std::string>();
    m.encoder = j.at("encoder").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.label_vocabulary = j.at("labels").get<std::vector<std::string>>();
    const json& probe = j.at("probe");
    ProbeConfig& p = m.probe;
    p.arity = probe.at("arity").get<int>() == 2 ? Arity::kTwoSpan : Arity::kOneSpan;
    p.separate_projections = probe.at("separate_projections").get<bool>();
    p.label_count = probe.at("label_count").get<int>();
    p.input_dim = probe.at("input_dim").get<int>();
    p.layer_count = probe.at("layer_count").get<int>();
    p.proj_dim = probe.at("proj_dim").get<int>();
    p.hidden_dim = probe.at("hidden_dim").get<int>();
    p.dropout = probe.at("dropout").get<double>();
    p.norm_eps = probe.at("norm_eps").get<double>();
    p.method = ParseSpanMethod(probe.at("method").get<std::string>());
    p.mix_mode = ParseMixMode(probe.at("mix").get<std::string>());
    if (probe.contains("coherent_split")) {
      p.coherent_split = CoherentSplit{probe["coherent_split"][0].get<int>(),
                                       probe["coherent_split"][1].get<int>()};
    }
    if (j.contains("extra")) m.extra = j["extra"];
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed checkpoint metadata: ") + e.what());
  }
}

void SaveMetadata(const CheckpointMetadata& metadata,
                  const std::filesystem::path& path) {
  WriteFileAtomically(path, MetadataToJson(metadata).dump(2) + "\n");
}

CheckpointMetadata LoadMetadata(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read checkpoint metadata " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("malformed checkpoint metadata " + path.string() + ": " + e.what());
  }
  return MetadataFromJson(j);
}

}  // namespace spanprobe

#ifndef SPANPROBE_CHECKPOINT_H_
#define SPANPROBE_CHECKPOINT_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "spanprobe/probe_network.h"

namespace spanprobe {

// Binary layout (little-endian): magic "SPCK", u32 version, u32 tensor count,
// then per tensor: u32 name length, name bytes, u32 rows, u32 cols,
// rows * cols f64 in row-major order.
inline constexpr char kCheckpointMagic[4] = {'S', 'P', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::byte> SerializeParams(const ProbeParams& params);
// Tensors are matched by name; shapes must agree with `config`.
ProbeParams DeserializeParams(std::span<const std::byte> bytes,
                              const ProbeConfig& config);

void SaveParams(const ProbeParams& params, const std::filesystem::path& path);
ProbeParams LoadParams(const std::filesystem::path& path, const ProbeConfig& config);

// Human-readable sidecar describing how a checkpoint was produced.
struct CheckpointMetadata {
  std::string task;
  std::string encoder;
  std::uint64_t seed = 0;
  std::vector<std::string> label_vocabulary;
  ProbeConfig probe;
  nlohmann::json extra = nlohmann::json::object();
};

nlohmann::json MetadataToJson(const CheckpointMetadata& metadata);
CheckpointMetadata MetadataFromJson(const nlohmann::json& j);

void SaveMetadata(const CheckpointMetadata& metadata,
                  const std::filesystem::path& path);
CheckpointMetadata LoadMetadata(const std::filesystem::path& path);

}  // namespace spanprobe

#endif  // SPANPROBE_CHECKPOINT_H_

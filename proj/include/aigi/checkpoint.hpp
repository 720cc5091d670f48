#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "aigi/graph.hpp"

namespace aigi::grad {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  Tensor value;
};

/// Parameter file: an 8-byte magic, a format version, a free-form header
/// string (the detector layer stores JSON there), then ordered
/// (name, shape, raw little-endian doubles) records.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string header;
  std::vector<CheckpointRecord> records;
};

Checkpoint snapshot(const Graph& graph, std::string header = {});

/// Copies record values into same-named parameters. Every graph parameter
/// must be present with a matching shape.
void restore(Graph& graph, const Checkpoint& checkpoint);

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace aigi::grad

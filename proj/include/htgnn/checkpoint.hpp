#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace htgnn {

uint64_t fnv1a64(std::string_view bytes);

struct CheckpointEntry {
  std::string name;
  std::vector<int> shape;
  std::vector<double> values;
};

// Container layout: magic "HTGNN1", fnv1a64 digest of the resolved config
// text, the config text itself, then repeated entries of (name length, name
// bytes, rank, dims, row-major little-endian doubles). Loading verifies the
// digest against the embedded config and fails on mismatch.
void save_checkpoint(const std::string& path, const std::string& config_text,
                     const std::vector<CheckpointEntry>& entries);

struct Checkpoint {
  std::string config_text;
  std::vector<CheckpointEntry> entries;
  std::unordered_map<std::string, size_t> index;

  const CheckpointEntry* find(const std::string& name) const;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace htgnn

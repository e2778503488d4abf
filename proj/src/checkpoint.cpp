#include "htgnn/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "htgnn/errors.hpp"

namespace htgnn {

namespace {

constexpr char kMagic[6] = {'H', 'T', 'G', 'N', 'N', '1'};

template <class T>
void write_pod(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& is, const std::string& path) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("truncated checkpoint file: " + path);
  return v;
}

}  // namespace

uint64_t fnv1a64(std::string_view bytes) {
  uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void save_checkpoint(const std::string& path, const std::string& config_text,
                     const std::vector<CheckpointEntry>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_pod<uint64_t>(os, fnv1a64(config_text));
  write_pod<uint64_t>(os, config_text.size());
  os.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
  write_pod<uint64_t>(os, entries.size());
  for (const CheckpointEntry& e : entries) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    write_pod<uint32_t>(os, static_cast<uint32_t>(e.shape.size()));
    for (int d : e.shape) write_pod<uint64_t>(os, static_cast<uint64_t>(d));
    os.write(reinterpret_cast<const char*>(e.values.data()),
             static_cast<std::streamsize>(e.values.size() * sizeof(double)));
  }
  if (!os) throw DataError("write failure on checkpoint: " + path);
}

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  auto it = index.find(name);
  return it == index.end() ? nullptr : &entries[it->second];
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[6];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("not a checkpoint file (bad magic): " + path);
  const uint64_t digest = read_pod<uint64_t>(is, path);
  const uint64_t cfg_len = read_pod<uint64_t>(is, path);
  Checkpoint ckpt;
  ckpt.config_text.resize(cfg_len);
  is.read(ckpt.config_text.data(), static_cast<std::streamsize>(cfg_len));
  if (!is) throw DataError("truncated checkpoint file: " + path);
  if (fnv1a64(ckpt.config_text) != digest)
    throw DataError("checkpoint config digest mismatch: " + path);
  const uint64_t count = read_pod<uint64_t>(is, path);
  ckpt.entries.reserve(count);
  for (uint64_t k = 0; k < count; ++k) {
    CheckpointEntry e;
    const uint32_t name_len = read_pod<uint32_t>(is, path);
    e.name.resize(name_len);
    is.read(e.name.data(), name_len);
    const uint32_t rank = read_pod<uint32_t>(is, path);
    long total = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      const auto d = static_cast<long>(read_pod<uint64_t>(is, path));
      e.shape.push_back(static_cast<int>(d));
      total *= d;
    }
    e.values.resize(static_cast<size_t>(total));
    is.read(reinterpret_cast<char*>(e.values.data()),
            static_cast<std::streamsize>(e.values.size() * sizeof(double)));
    if (!is) throw DataError("truncated checkpoint file: " + path);
    ckpt.index[e.name] = ckpt.entries.size();
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

}  // namespace htgnn

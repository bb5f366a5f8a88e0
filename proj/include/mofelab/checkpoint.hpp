#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mofelab {

// Versioned binary container for named parameter blobs. Layout (all integers
// and doubles little-endian):
//
//   "MOFELAB1"            8-byte magic
//   u32 version (=1)
//   u32 entry count
//   per entry: u32 name length, name bytes,
//              u32 dim count, u64 dims...,
//              u64 param count, f64 params...
//   u32 meta count, u64 meta words...
//   u64 FNV-1a of every preceding byte
//
// Round-trips are bit-exact. Load failures (bad magic, version, truncation,
// checksum) throw DataError.

struct CheckpointEntry {
  std::string name;
  std::vector<std::size_t> dims;
  std::vector<double> params;
};

struct Checkpoint {
  std::vector<CheckpointEntry> entries;
  std::vector<std::uint64_t> meta;

  const CheckpointEntry* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::uint64_t fnv1a64(const unsigned char* data, std::size_t n);

}  // namespace mofelab

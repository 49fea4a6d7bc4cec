#pragma once

// NDTC columnar file: a header, a schema block, a descriptor table and
// 64-byte aligned little-endian buffers. See format.md for the byte layout.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ndt/columnar.hpp"

namespace ndt {

inline constexpr char kFileMagic[4] = {'N', 'D', 'T', 'C'};
inline constexpr std::uint32_t kFileVersion = 1;
inline constexpr std::size_t kFileHeaderBytes = 32;
inline constexpr std::size_t kBufferAlignment = 64;

struct ColumnarFile {
  TxId snapshot_ts = kNoTx;
  ColumnSet columns;  // visibility always populated, ceil(row_count/64) words
};

// An empty visibility vector in `set` is written as all rows current.
std::vector<std::uint8_t> encode_file(const ColumnSet& set, TxId snapshot_ts);
ColumnarFile decode_file(std::span<const std::uint8_t> bytes);

void write_file(const std::filesystem::path& path, const ColumnSet& set, TxId snapshot_ts);
ColumnarFile read_file(const std::filesystem::path& path);

}  // namespace ndt

#pragma once

// NSM (row) persistent layout: field types, schemas, record encoding, and the
// slotted 8 KiB page. All multi-byte values are little-endian.
//
// Record layout:
//   [0..8)    vid
//   [8..16)   create_ts
//   [16..24)  pred RecordId
//   [24]      flags (bit 0 = tombstone)
//   [25..)    null bitmap, ceil(n/8) bytes, bit i = attribute i is NULL
//   fixed-width fields in schema order, each aligned to its width relative
//   to the record start; NULL fields occupy no bytes
//   varlen fields in schema order: u16 length, payload (unaligned)
//
// Page layout:
//   [0..4) page_lid, [4..6) slot_count, [6..8) free_offset
//   record area grows upward from offset 8, records start 8-byte aligned
//   slot i lives at kPageSize - 4*(i+1): u16 offset, u16 length

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ndt/types.hpp"

namespace ndt {

enum class TypeKind : std::uint8_t {
  kInt32 = 1,
  kInt64 = 2,
  kDecimal = 3,
  kTimestampPg = 4,  // microseconds since 2000-01-01T00:00:00Z
  kVarChar = 5,
  kTimestampUnix = 6,  // seconds since 1970-01-01T00:00:00Z (columnar output only)
};

struct FieldType {
  TypeKind kind = TypeKind::kInt32;
  std::uint8_t precision = 0;
  std::uint8_t scale = 0;
  std::uint16_t max_len = 0;

  static FieldType int32() { return {TypeKind::kInt32}; }
  static FieldType int64() { return {TypeKind::kInt64}; }
  static FieldType decimal(std::uint8_t precision, std::uint8_t scale);
  static FieldType timestamp_pg() { return {TypeKind::kTimestampPg}; }
  static FieldType timestamp_unix() { return {TypeKind::kTimestampUnix}; }
  static FieldType varchar(std::uint16_t max_len);

  bool is_varlen() const { return kind == TypeKind::kVarChar; }
  // Bytes of the fixed-width representation; 0 for varlen.
  std::size_t width() const;

  friend bool operator==(const FieldType&, const FieldType&) = default;
};

// Throws kInvalidSchema on a malformed type.
void validate_type(const FieldType& type);

struct Attribute {
  std::string name;
  FieldType type;
  bool nullable = false;

  friend bool operator==(const Attribute&, const Attribute&) = default;
};

class Schema {
 public:
  Schema(std::string table_name, std::vector<Attribute> attributes);

  const std::string& table_name() const { return table_name_; }
  const std::vector<Attribute>& attributes() const { return attributes_; }
  const Attribute& attribute(std::size_t i) const { return attributes_.at(i); }
  std::size_t size() const { return attributes_.size(); }
  std::optional<std::size_t> index_of(std::string_view name) const;

  friend bool operator==(const Schema&, const Schema&) = default;

 private:
  std::string table_name_;
  std::vector<Attribute> attributes_;
};

struct Decimal {
  std::int64_t scaled = 0;
  friend auto operator<=>(const Decimal&, const Decimal&) = default;
};

struct PgTimestamp {
  std::int64_t micros = 0;
  friend auto operator<=>(const PgTimestamp&, const PgTimestamp&) = default;
};

using Null = std::monostate;
using Value = std::variant<Null, std::int32_t, std::int64_t, Decimal, PgTimestamp, std::string>;

inline bool is_null(const Value& v) { return std::holds_alternative<Null>(v); }
std::string to_string(const Value& v);

struct RecordHeader {
  Vid vid = 0;
  TxId create_ts = kNoTx;
  RecordId pred = RecordId::none();
  bool tombstone = false;
  std::vector<bool> null_bitmap;  // one entry per attribute; empty means no NULLs
};

inline constexpr std::size_t kHeaderFixedBytes = 25;
inline constexpr std::uint8_t kFlagTombstone = 0x01;

constexpr std::size_t header_size(std::size_t attribute_count) {
  return kHeaderFixedBytes + (attribute_count + 7) / 8;
}

// Schema-independent leading part of every record header.
struct HeaderPrefix {
  Vid vid = 0;
  TxId create_ts = kNoTx;
  RecordId pred = RecordId::none();
  bool tombstone = false;
};

HeaderPrefix decode_header_prefix(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_record(const Schema& schema, const RecordHeader& header,
                                        std::span<const Value> values);
RecordHeader decode_header(const Schema& schema, std::span<const std::uint8_t> bytes);
Value decode_field(const Schema& schema, std::span<const std::uint8_t> bytes, std::size_t attr_index);
std::vector<Value> decode_record(const Schema& schema, std::span<const std::uint8_t> bytes);

// Layout accessor: byte offset of every attribute's stored representation
// inside one record (varlen: offset of the u16 length prefix), or nullopt for
// NULL attributes. Validates bounds against the record length.
std::vector<std::optional<std::size_t>> locate_fields(const Schema& schema,
                                                      std::span<const std::uint8_t> bytes);

inline constexpr std::int64_t kPgEpochOffsetSeconds = 946'684'800;

std::int64_t pg_timestamp_to_unix_epoch(std::int64_t pg_micros);

// ---------------------------------------------------------------------------
// Slotted page

inline constexpr std::size_t kPageHeaderBytes = 8;
inline constexpr std::size_t kSlotEntryBytes = 4;
inline constexpr std::size_t kRecordAlignment = 8;

struct SlotEntry {
  std::uint16_t offset = 0;
  std::uint16_t length = 0;
};

constexpr std::size_t slot_entry_offset(std::uint32_t slot) {
  return kPageSize - kSlotEntryBytes * (static_cast<std::size_t>(slot) + 1);
}

inline SlotEntry parse_slot_entry(const std::uint8_t* p) {
  return {load_le<std::uint16_t>(p), load_le<std::uint16_t>(p + 2)};
}

// In-place page operations on a kPageSize byte span.
void page_init(std::span<std::uint8_t> page, PageLid lid);
PageLid page_lid_of(std::span<const std::uint8_t> page);
std::uint16_t page_slot_count(std::span<const std::uint8_t> page);
std::size_t page_free_space(std::span<const std::uint8_t> page);
bool page_fits(std::span<const std::uint8_t> page, std::size_t record_len);
// Reserves space and a slot entry for a record of `len` bytes; the caller
// copies the payload to the returned offset.
SlotEntry page_reserve(std::span<std::uint8_t> page, std::size_t len, std::uint32_t* slot_out);
std::span<const std::uint8_t> page_lookup(std::span<const std::uint8_t> page, std::uint32_t slot);

class NsmPage {
 public:
  explicit NsmPage(PageLid lid);

  PageLid lid() const { return page_lid_of(bytes_); }
  std::uint16_t slot_count() const { return page_slot_count(bytes_); }
  std::size_t free_space() const { return page_free_space(bytes_); }
  bool fits(std::size_t record_len) const { return page_fits(bytes_, record_len); }

  RecordId insert(std::span<const std::uint8_t> record);
  std::span<const std::uint8_t> slot_lookup(std::uint32_t slot) const;

  std::span<const std::uint8_t> bytes() const { return bytes_; }

 private:
  std::array<std::uint8_t, kPageSize> bytes_{};
};

}  // namespace ndt

#include "ndt/layout.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace ndt {

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::kArityMismatch: return "ArityMismatch";
    case Errc::kTypeMismatch: return "TypeMismatch";
    case Errc::kNullNotAllowed: return "NullNotAllowed";
    case Errc::kVarCharTooLong: return "VarCharTooLong";
    case Errc::kCorruptRecord: return "CorruptRecord";
    case Errc::kInvalidSchema: return "InvalidSchema";
    case Errc::kPageFull: return "PageFull";
    case Errc::kSlotOutOfRange: return "SlotOutOfRange";
    case Errc::kUnknownTx: return "UnknownTx";
    case Errc::kAlreadyFinished: return "AlreadyFinished";
    case Errc::kStaleWrite: return "StaleWrite";
    case Errc::kDeviceUnavailable: return "DeviceUnavailable";
    case Errc::kInvalidConfig: return "InvalidConfig";
    case Errc::kOutOfRange: return "OutOfRange";
    case Errc::kOutOfSpace: return "OutOfSpace";
    case Errc::kAccessDenied: return "AccessDenied";
    case Errc::kTooManyPEsRequested: return "TooManyPEsRequested";
    case Errc::kScratchpadTooSmall: return "ScratchpadTooSmall";
    case Errc::kInvalidProjection: return "InvalidProjection";
    case Errc::kDanglingReference: return "DanglingReference";
    case Errc::kHostDenied: return "HostDenied";
    case Errc::kStaleHandle: return "StaleHandle";
    case Errc::kMissingColumn: return "MissingColumn";
    case Errc::kIoError: return "IoError";
    case Errc::kBadMagic: return "BadMagic";
    case Errc::kUnsupportedVersion: return "UnsupportedVersion";
    case Errc::kCorruptDescriptor: return "CorruptDescriptor";
    case Errc::kSchemaMismatch: return "SchemaMismatch";
  }
  return "Unknown";
}

FieldType FieldType::decimal(std::uint8_t precision, std::uint8_t scale) {
  FieldType t{TypeKind::kDecimal, precision, scale, 0};
  validate_type(t);
  return t;
}

FieldType FieldType::varchar(std::uint16_t max_len) {
  FieldType t{TypeKind::kVarChar, 0, 0, max_len};
  validate_type(t);
  return t;
}

std::size_t FieldType::width() const {
  switch (kind) {
    case TypeKind::kInt32: return 4;
    case TypeKind::kInt64:
    case TypeKind::kDecimal:
    case TypeKind::kTimestampPg:
    case TypeKind::kTimestampUnix: return 8;
    case TypeKind::kVarChar: return 0;
  }
  return 0;
}

void validate_type(const FieldType& type) {
  switch (type.kind) {
    case TypeKind::kDecimal:
      if (type.precision == 0 || type.precision > 18 || type.scale > type.precision) {
        fail(Errc::kInvalidSchema, "decimal requires 0 < precision <= 18 and scale <= precision");
      }
      break;
    case TypeKind::kVarChar:
      if (type.max_len < 1) fail(Errc::kInvalidSchema, "varchar max_len must be >= 1");
      break;
    case TypeKind::kInt32:
    case TypeKind::kInt64:
    case TypeKind::kTimestampPg:
    case TypeKind::kTimestampUnix:
      break;
    default:
      fail(Errc::kInvalidSchema, "unknown type kind");
  }
}

Schema::Schema(std::string table_name, std::vector<Attribute> attributes)
    : table_name_(std::move(table_name)), attributes_(std::move(attributes)) {
  if (attributes_.empty()) fail(Errc::kInvalidSchema, "schema needs at least one attribute");
  std::set<std::string> seen;
  for (const auto& a : attributes_) {
    if (a.name.empty()) fail(Errc::kInvalidSchema, "empty attribute name");
    if (!seen.insert(a.name).second) fail(Errc::kInvalidSchema, "duplicate attribute " + a.name);
    validate_type(a.type);
  }
}

std::optional<std::size_t> Schema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < attributes_.size(); ++i) {
    if (attributes_[i].name == name) return i;
  }
  return std::nullopt;
}

std::string to_string(const Value& v) {
  struct Visitor {
    std::string operator()(Null) const { return "NULL"; }
    std::string operator()(std::int32_t x) const { return std::to_string(x); }
    std::string operator()(std::int64_t x) const { return std::to_string(x); }
    std::string operator()(Decimal d) const { return "dec:" + std::to_string(d.scaled); }
    std::string operator()(PgTimestamp t) const { return "pgts:" + std::to_string(t.micros); }
    std::string operator()(const std::string& s) const { return "\"" + s + "\""; }
  };
  return std::visit(Visitor{}, v);
}

namespace {

std::int64_t pow10(int n) {
  std::int64_t r = 1;
  for (int i = 0; i < n; ++i) r *= 10;
  return r;
}

void check_value(const Attribute& a, const Value& v) {
  if (is_null(v)) {
    if (!a.nullable) fail(Errc::kNullNotAllowed, a.name);
    return;
  }
  bool ok = false;
  switch (a.type.kind) {
    case TypeKind::kInt32: ok = std::holds_alternative<std::int32_t>(v); break;
    case TypeKind::kInt64:
    case TypeKind::kTimestampUnix: ok = std::holds_alternative<std::int64_t>(v); break;
    case TypeKind::kDecimal:
      ok = std::holds_alternative<Decimal>(v);
      if (ok) {
        auto s = std::get<Decimal>(v).scaled;
        auto limit = pow10(a.type.precision);
        if (s >= limit || s <= -limit) fail(Errc::kTypeMismatch, a.name + ": decimal exceeds precision");
      }
      break;
    case TypeKind::kTimestampPg: ok = std::holds_alternative<PgTimestamp>(v); break;
    case TypeKind::kVarChar:
      ok = std::holds_alternative<std::string>(v);
      if (ok && std::get<std::string>(v).size() > a.type.max_len) fail(Errc::kVarCharTooLong, a.name);
      break;
  }
  if (!ok) fail(Errc::kTypeMismatch, a.name);
}

std::uint64_t fixed_bits(const Value& v) {
  if (auto p = std::get_if<std::int32_t>(&v)) return static_cast<std::uint32_t>(*p);
  if (auto p = std::get_if<std::int64_t>(&v)) return static_cast<std::uint64_t>(*p);
  if (auto p = std::get_if<Decimal>(&v)) return static_cast<std::uint64_t>(p->scaled);
  if (auto p = std::get_if<PgTimestamp>(&v)) return static_cast<std::uint64_t>(p->micros);
  return 0;
}

}  // namespace

std::vector<std::uint8_t> encode_record(const Schema& schema, const RecordHeader& header,
                                        std::span<const Value> values) {
  const std::size_t n = schema.size();
  if (header.tombstone) {
    if (!values.empty()) fail(Errc::kArityMismatch, "tombstone carries no payload");
  } else {
    if (values.size() != n) fail(Errc::kArityMismatch, "expected " + std::to_string(n) + " values");
    for (std::size_t i = 0; i < n; ++i) check_value(schema.attribute(i), values[i]);
  }

  std::vector<std::uint8_t> out(header_size(n), 0);
  store_le<std::uint64_t>(out.data(), header.vid);
  store_le<std::uint64_t>(out.data() + 8, header.create_ts);
  store_record_id(out.data() + 16, header.pred);
  out[24] = header.tombstone ? kFlagTombstone : 0;
  if (header.tombstone) return out;

  for (std::size_t i = 0; i < n; ++i) {
    if (is_null(values[i])) out[kHeaderFixedBytes + i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = schema.attribute(i);
    if (a.type.is_varlen() || is_null(values[i])) continue;
    const std::size_t w = a.type.width();
    const std::size_t off = align_up(out.size(), w);
    out.resize(off + w, 0);
    if (w == 4) {
      store_le<std::uint32_t>(out.data() + off, static_cast<std::uint32_t>(fixed_bits(values[i])));
    } else {
      store_le<std::uint64_t>(out.data() + off, fixed_bits(values[i]));
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = schema.attribute(i);
    if (!a.type.is_varlen() || is_null(values[i])) continue;
    const auto& s = std::get<std::string>(values[i]);
    const std::size_t off = out.size();
    out.resize(off + 2 + s.size());
    store_le<std::uint16_t>(out.data() + off, static_cast<std::uint16_t>(s.size()));
    std::copy(s.begin(), s.end(), out.begin() + static_cast<std::ptrdiff_t>(off + 2));
  }
  return out;
}

HeaderPrefix decode_header_prefix(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderFixedBytes) fail(Errc::kCorruptRecord, "record shorter than header");
  HeaderPrefix h;
  h.vid = load_le<std::uint64_t>(bytes.data());
  h.create_ts = load_le<std::uint64_t>(bytes.data() + 8);
  h.pred = load_record_id(bytes.data() + 16);
  h.tombstone = (bytes[24] & kFlagTombstone) != 0;
  return h;
}

RecordHeader decode_header(const Schema& schema, std::span<const std::uint8_t> bytes) {
  const std::size_t n = schema.size();
  if (bytes.size() < header_size(n)) fail(Errc::kCorruptRecord, "record shorter than header");
  auto p = decode_header_prefix(bytes);
  RecordHeader h{p.vid, p.create_ts, p.pred, p.tombstone, std::vector<bool>(n, false)};
  for (std::size_t i = 0; i < n; ++i) {
    h.null_bitmap[i] = (bytes[kHeaderFixedBytes + i / 8] >> (i % 8)) & 1u;
  }
  return h;
}

std::vector<std::optional<std::size_t>> locate_fields(const Schema& schema,
                                                      std::span<const std::uint8_t> bytes) {
  const std::size_t n = schema.size();
  if (bytes.size() < header_size(n)) fail(Errc::kCorruptRecord, "record shorter than header");
  if (bytes[24] & kFlagTombstone) fail(Errc::kCorruptRecord, "tombstone has no fields");
  std::vector<std::optional<std::size_t>> loc(n);
  auto is_null_bit = [&](std::size_t i) { return (bytes[kHeaderFixedBytes + i / 8] >> (i % 8)) & 1u; };
  std::size_t pos = header_size(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = schema.attribute(i);
    if (a.type.is_varlen() || is_null_bit(i)) continue;
    const std::size_t w = a.type.width();
    pos = align_up(pos, w);
    if (pos + w > bytes.size()) fail(Errc::kCorruptRecord, "fixed field beyond record end");
    loc[i] = pos;
    pos += w;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = schema.attribute(i);
    if (!a.type.is_varlen() || is_null_bit(i)) continue;
    if (pos + 2 > bytes.size()) fail(Errc::kCorruptRecord, "varlen prefix beyond record end");
    const std::size_t len = load_le<std::uint16_t>(bytes.data() + pos);
    if (len > a.type.max_len || pos + 2 + len > bytes.size()) {
      fail(Errc::kCorruptRecord, "varlen length inconsistent");
    }
    loc[i] = pos;
    pos += 2 + len;
  }
  return loc;
}

namespace {

Value read_at(const Attribute& a, std::span<const std::uint8_t> bytes, std::size_t pos) {
  const auto* p = bytes.data() + pos;
  switch (a.type.kind) {
    case TypeKind::kInt32: return load_le<std::int32_t>(p);
    case TypeKind::kInt64:
    case TypeKind::kTimestampUnix: return load_le<std::int64_t>(p);
    case TypeKind::kDecimal: return Decimal{load_le<std::int64_t>(p)};
    case TypeKind::kTimestampPg: return PgTimestamp{load_le<std::int64_t>(p)};
    case TypeKind::kVarChar: {
      const std::size_t len = load_le<std::uint16_t>(p);
      return std::string(reinterpret_cast<const char*>(p + 2), len);
    }
  }
  return Null{};
}

}  // namespace

Value decode_field(const Schema& schema, std::span<const std::uint8_t> bytes, std::size_t attr_index) {
  if (attr_index >= schema.size()) fail(Errc::kOutOfRange, "attribute index");
  auto loc = locate_fields(schema, bytes);
  if (!loc[attr_index]) return Null{};
  return read_at(schema.attribute(attr_index), bytes, *loc[attr_index]);
}

std::vector<Value> decode_record(const Schema& schema, std::span<const std::uint8_t> bytes) {
  auto loc = locate_fields(schema, bytes);
  std::vector<Value> out(schema.size());
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (loc[i]) out[i] = read_at(schema.attribute(i), bytes, *loc[i]);
  }
  return out;
}

std::int64_t pg_timestamp_to_unix_epoch(std::int64_t pg_micros) {
  std::int64_t secs = pg_micros / 1'000'000;
  if (pg_micros % 1'000'000 < 0) --secs;  // floor for pre-2000 values
  return secs + kPgEpochOffsetSeconds;
}

// ---------------------------------------------------------------------------

void page_init(std::span<std::uint8_t> page, PageLid lid) {
  std::fill(page.begin(), page.end(), 0);
  store_le<std::uint32_t>(page.data(), lid);
  store_le<std::uint16_t>(page.data() + 4, 0);
  store_le<std::uint16_t>(page.data() + 6, static_cast<std::uint16_t>(kPageHeaderBytes));
}

PageLid page_lid_of(std::span<const std::uint8_t> page) { return load_le<std::uint32_t>(page.data()); }

std::uint16_t page_slot_count(std::span<const std::uint8_t> page) {
  return load_le<std::uint16_t>(page.data() + 4);
}

namespace {

std::size_t record_area_end(std::span<const std::uint8_t> page) {
  return align_up(load_le<std::uint16_t>(page.data() + 6), kRecordAlignment);
}

}  // namespace

std::size_t page_free_space(std::span<const std::uint8_t> page) {
  const std::size_t slots_begin = kPageSize - kSlotEntryBytes * page_slot_count(page);
  const std::size_t used = record_area_end(page);
  return slots_begin > used ? slots_begin - used : 0;
}

bool page_fits(std::span<const std::uint8_t> page, std::size_t record_len) {
  return record_len + kSlotEntryBytes <= page_free_space(page);
}

SlotEntry page_reserve(std::span<std::uint8_t> page, std::size_t len, std::uint32_t* slot_out) {
  if (!page_fits(page, len)) fail(Errc::kPageFull, "record of " + std::to_string(len) + " bytes");
  const std::uint16_t slot = page_slot_count(page);
  const std::size_t off = record_area_end(page);
  SlotEntry e{static_cast<std::uint16_t>(off), static_cast<std::uint16_t>(len)};
  auto* se = page.data() + slot_entry_offset(slot);
  store_le<std::uint16_t>(se, e.offset);
  store_le<std::uint16_t>(se + 2, e.length);
  store_le<std::uint16_t>(page.data() + 4, static_cast<std::uint16_t>(slot + 1));
  store_le<std::uint16_t>(page.data() + 6, static_cast<std::uint16_t>(off + len));
  *slot_out = slot;
  return e;
}

std::span<const std::uint8_t> page_lookup(std::span<const std::uint8_t> page, std::uint32_t slot) {
  if (slot >= page_slot_count(page)) fail(Errc::kSlotOutOfRange, "slot " + std::to_string(slot));
  auto e = parse_slot_entry(page.data() + slot_entry_offset(slot));
  if (std::size_t{e.offset} + e.length > kPageSize) fail(Errc::kCorruptRecord, "slot beyond page");
  return page.subspan(e.offset, e.length);
}

NsmPage::NsmPage(PageLid lid) { page_init(bytes_, lid); }

RecordId NsmPage::insert(std::span<const std::uint8_t> record) {
  std::uint32_t slot = 0;
  auto e = page_reserve(bytes_, record.size(), &slot);
  std::copy(record.begin(), record.end(), bytes_.begin() + e.offset);
  return {lid(), slot};
}

std::span<const std::uint8_t> NsmPage::slot_lookup(std::uint32_t slot) const {
  return page_lookup(bytes_, slot);
}

}  // namespace ndt

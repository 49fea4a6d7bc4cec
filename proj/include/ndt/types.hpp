#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace ndt {

using TxId = std::uint64_t;
using Vid = std::uint64_t;
using PageLid = std::uint32_t;

inline constexpr TxId kNoTx = 0;
inline constexpr PageLid kInvalidPageLid = 0xFFFFFFFFu;
inline constexpr std::size_t kPageSize = 8192;

// Logical address of a version record: (logical page, slot). Encoded on
// pages and in the VID_map as 8 bytes: page_lid u32 LE, slot u32 LE.
struct RecordId {
  PageLid page_lid = kInvalidPageLid;
  std::uint32_t slot = 0xFFFFFFFFu;

  static constexpr RecordId none() { return {}; }
  constexpr bool valid() const { return page_lid != kInvalidPageLid; }

  friend constexpr auto operator<=>(const RecordId&, const RecordId&) = default;
};

inline constexpr std::size_t kRecordIdBytes = 8;

enum class Errc {
  kArityMismatch,
  kTypeMismatch,
  kNullNotAllowed,
  kVarCharTooLong,
  kCorruptRecord,
  kInvalidSchema,
  kPageFull,
  kSlotOutOfRange,
  kUnknownTx,
  kAlreadyFinished,
  kStaleWrite,
  kDeviceUnavailable,
  kInvalidConfig,
  kOutOfRange,
  kOutOfSpace,
  kAccessDenied,
  kTooManyPEsRequested,
  kScratchpadTooSmall,
  kInvalidProjection,
  kDanglingReference,
  kHostDenied,
  kStaleHandle,
  kMissingColumn,
  kIoError,
  kBadMagic,
  kUnsupportedVersion,
  kCorruptDescriptor,
  kSchemaMismatch,
};

const char* errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

// Little-endian load/store, independent of host byte order.
template <typename T>
  requires std::is_integral_v<T>
inline void store_le(std::uint8_t* dst, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    dst[i] = static_cast<std::uint8_t>(u >> (8 * i));
  }
}

template <typename T>
  requires std::is_integral_v<T>
inline T load_le(const std::uint8_t* src) {
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    u |= static_cast<U>(static_cast<U>(src[i]) << (8 * i));
  }
  return static_cast<T>(u);
}

inline void store_record_id(std::uint8_t* dst, RecordId rid) {
  store_le<std::uint32_t>(dst, rid.page_lid);
  store_le<std::uint32_t>(dst + 4, rid.slot);
}

inline RecordId load_record_id(const std::uint8_t* src) {
  return {load_le<std::uint32_t>(src), load_le<std::uint32_t>(src + 4)};
}

constexpr std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }
constexpr std::uint64_t align_up(std::uint64_t v, std::uint64_t a) { return ceil_div(v, a) * a; }

}  // namespace ndt

template <>
struct std::hash<ndt::RecordId> {
  std::size_t operator()(const ndt::RecordId& r) const noexcept {
    return std::hash<std::uint64_t>{}((std::uint64_t{r.page_lid} << 32) | r.slot);
  }
};

#pragma once

// Software model of the smart-storage device: processing elements with
// private scratchpads, NVM and DDR page regions, and a transfer ledger from
// which all modeled timings are derived.

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ndt/types.hpp"

namespace ndt {

enum class Region : std::uint8_t { kNvm = 0, kDdr = 1, kHost = 2 };

const char* region_name(Region r);

struct DeviceConfig {
  std::uint32_t pe_count = 8;
  std::size_t scratchpad_bytes = 64 * 1024;
  double pe_clock_hz = 200e6;
  double internal_read_gib_s = 16.0;
  double internal_write_gib_s = 30.0;
  double host_read_gib_s = 6.4;  // device -> host
  double host_write_gib_s = 12.0;  // host -> device
  double nvm_read_latency_ns = 300.0;
  double nvm_write_latency_ns = 1000.0;
  double host_roundtrip_ns = 10'000.0;
  double pe_record_cost_ns = 0.0;
  std::uint32_t nvm_pages = 1u << 20;  // 8 GiB addressable, allocated lazily
  std::uint32_t ddr_pages = 1u << 18;
};

void validate(const DeviceConfig& cfg);

inline constexpr std::uint32_t kMaxPes = 8;

struct PhysPage {
  Region region = Region::kNvm;
  std::uint32_t index = 0;

  std::uint64_t offset() const { return std::uint64_t{index} * kPageSize; }
  friend auto operator<=>(const PhysPage&, const PhysPage&) = default;
};

struct Requester {
  enum class Kind : std::uint8_t { kPe, kHost, kFirmware };
  Kind kind = Kind::kFirmware;
  std::uint32_t pe = 0;

  static Requester host() { return {Kind::kHost, 0}; }
  static Requester pe_of(std::uint32_t pe) { return {Kind::kPe, pe}; }
  static Requester firmware() { return {Kind::kFirmware, 0}; }
  bool is_host() const { return kind == Kind::kHost; }
};

struct TransferLedger {
  std::uint64_t internal_read_bytes = 0;
  std::uint64_t internal_write_bytes = 0;
  std::uint64_t device_to_host_bytes = 0;
  std::uint64_t host_to_device_bytes = 0;
  std::uint64_t internal_read_ops = 0;
  std::uint64_t internal_write_ops = 0;
  std::uint64_t device_to_host_ops = 0;
  std::uint64_t host_to_device_ops = 0;
  std::uint64_t nvm_read_accesses = 0;
  std::uint64_t nvm_write_accesses = 0;
  std::uint64_t header_probes = 0;
  std::uint64_t host_roundtrips = 0;
  std::array<std::uint64_t, kMaxPes> pe_records{};
  std::array<std::uint64_t, kMaxPes> pe_ops{};

  std::uint64_t internal_bytes() const { return internal_read_bytes + internal_write_bytes; }
  std::uint64_t pe_records_total() const;

  // Counter-wise difference; `*this` must dominate `earlier`.
  TransferLedger since(const TransferLedger& earlier) const;

  friend bool operator==(const TransferLedger&, const TransferLedger&) = default;
};

struct ModeledTime {
  double internal_read_ns = 0;
  double internal_write_ns = 0;
  double device_to_host_ns = 0;
  double host_to_device_ns = 0;
  double nvm_latency_ns = 0;
  double roundtrip_ns = 0;
  double pe_compute_ns = 0;

  double total_ns() const {
    return internal_read_ns + internal_write_ns + device_to_host_ns + host_to_device_ns + nvm_latency_ns +
           roundtrip_ns + pe_compute_ns;
  }
};

ModeledTime modeled_time(const TransferLedger& ledger, const DeviceConfig& cfg);

// CSV rows "category,bytes,ops,modeled_ns" including a header line.
void write_ledger_csv(std::ostream& os, const TransferLedger& ledger, const DeviceConfig& cfg);

// Bytes charged for the record-header probe of the visibility check.
inline constexpr std::size_t kHeaderProbeBytes = 4;

using OwnerId = std::uint64_t;
inline constexpr OwnerId kFreeOwner = 0;
inline constexpr OwnerId kStorageOwner = 1;

class Device {
 public:
  explicit Device(const DeviceConfig& cfg);

  Device(const Device&) = delete;
  Device& operator=(const Device&) = delete;

  const DeviceConfig& config() const { return cfg_; }
  // Applies a new configuration and starts a fresh ledger; memory contents are kept.
  void reconfigure(const DeviceConfig& cfg);

  void read(Region region, std::uint64_t offset, std::span<std::uint8_t> dst, Requester who);
  std::vector<std::uint8_t> read(Region region, std::uint64_t offset, std::size_t len, Requester who);
  void write(Region region, std::uint64_t offset, std::span<const std::uint8_t> src, Requester who);

  // Visibility-check header probe: fills `dst` with the record header prefix
  // but charges kHeaderProbeBytes of internal read traffic.
  void probe_header(Region region, std::uint64_t offset, std::span<std::uint8_t> dst, std::uint32_t pe);

  std::vector<PhysPage> allocate_pages(Region region, std::size_t count, OwnerId owner);
  void free_pages(std::span<const PhysPage> pages);
  void free_owner(OwnerId owner);
  std::size_t free_page_count(Region region) const;
  std::size_t owned_page_count(OwnerId owner) const;
  OwnerId owner_of(PhysPage page) const;

  // Grants the host read access to materialized NVM pages.
  void expose_to_host(std::span<const PhysPage> pages);
  void revoke_from_host(std::span<const PhysPage> pages);

  void charge_host_roundtrip();
  void charge_pe_record(std::uint32_t pe);

  // Uncharged access used by device firmware bookkeeping (page headers,
  // slot reservation) and by test inspection.
  std::span<std::uint8_t> raw_page(PhysPage page);

  TransferLedger ledger() const;
  void reset_ledger();

 private:
  struct Arena {
    std::uint32_t capacity = 0;
    std::vector<std::unique_ptr<std::array<std::uint8_t, kPageSize>>> pages;
    std::vector<OwnerId> owner;
    std::set<std::uint32_t> free_list;
    std::uint32_t high_water = 0;
  };

  Arena& arena(Region r);
  const Arena& arena(Region r) const;
  void check_range(Region region, std::uint64_t offset, std::size_t len, Requester who) const;
  void charge_read(Region region, std::size_t len, Requester who);
  void charge_write(Region region, std::size_t len, Requester who);

  DeviceConfig cfg_;
  Arena nvm_;
  Arena ddr_;
  std::set<std::uint32_t> host_visible_nvm_;
  TransferLedger ledger_;
  mutable std::mutex mu_;
};

}  // namespace ndt

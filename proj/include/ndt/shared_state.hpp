#pragma once

// Shared-state: the host Delta-Buffer plus VID_map / L2P_map deltas, and the
// device-resident mirror (InSituStore) they are propagated into.

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "ndt/device.hpp"
#include "ndt/mvcc.hpp"

namespace ndt {

// A VID_map change; an invalid head erases the entry.
struct VidMapDelta {
  Vid vid = 0;
  RecordId head = RecordId::none();
};

struct DeltaRecord {
  RecordId rid;
  std::vector<std::uint8_t> bytes;
};

struct SharedStateSnapshot {
  std::uint64_t generation = 0;
  std::vector<DeltaRecord> records;
  std::vector<VidMapDelta> vid_map_delta;
  std::vector<L2PEntry> l2p_delta;
  std::optional<SnapshotDescriptor> descriptor;  // set for invocation propagations

  std::uint64_t record_bytes() const;
  bool empty() const { return records.empty() && vid_map_delta.empty() && l2p_delta.empty(); }
};

enum class PropagationMode { kRegular, kWithInvocation };

// Receives propagated shared-state on the device and acknowledges with the
// physical placement of newly seen logical pages.
class DeviceLink {
 public:
  virtual ~DeviceLink() = default;
  virtual std::vector<L2PEntry> deliver(const SharedStateSnapshot& snapshot) = 0;
};

inline constexpr std::size_t kDefaultDeltaBufferBytes = 512 * 1024;

class SharedState {
 public:
  explicit SharedState(std::size_t capacity_bytes = kDefaultDeltaBufferBytes);

  void attach(DeviceLink* link) { link_ = link; }
  void set_placement_sink(std::function<void(std::span<const L2PEntry>)> sink) { placement_sink_ = std::move(sink); }

  // Appends a version record and stages map deltas. Propagates in regular
  // mode once the buffer reaches capacity.
  void record_change(std::span<const std::uint8_t> record_bytes, RecordId rid, VidMapDelta vid_entry,
                     std::optional<L2PEntry> l2p_entry);
  // Buffers a change without propagating; true once the buffer is at
  // capacity. Writers stage while holding their own ordering lock.
  bool stage_change(std::span<const std::uint8_t> record_bytes, RecordId rid, VidMapDelta vid_entry,
                    std::optional<L2PEntry> l2p_entry);
  void stage_vid_entry(VidMapDelta vid_entry);

  std::shared_ptr<const SharedStateSnapshot> propagate(PropagationMode mode,
                                                       std::optional<SnapshotDescriptor> descriptor = std::nullopt);

  std::size_t capacity() const { return capacity_; }
  std::size_t size_bytes() const;
  std::size_t pending_records() const;
  std::uint64_t propagation_count() const;
  std::uint64_t regular_propagations() const;

 private:
  struct Generation {
    std::vector<DeltaRecord> records;
    std::map<Vid, RecordId> vid_map_delta;  // newest head per vid
    std::vector<L2PEntry> l2p_delta;
    std::size_t bytes = 0;
  };

  std::size_t capacity_;
  DeviceLink* link_ = nullptr;
  std::function<void(std::span<const L2PEntry>)> placement_sink_;
  mutable std::mutex buffer_mu_;
  std::mutex propagation_mu_;  // at most one propagation in flight
  Generation current_;
  std::uint64_t generation_ = 0;
  std::uint64_t propagations_ = 0;
  std::uint64_t regular_ = 0;
};

// Device-resident state: table pages (Delta-Buffer mirror in DDR, cold pages
// in NVM), the in-situ VID_map (8-byte RecordId entries) and L2P_map (4-byte
// entries: bit 31 = DDR, low bits = physical page index), all stored in DDR
// pages and read through the device like any other data.
class InSituStore {
 public:
  static constexpr std::uint32_t kL2PUnmapped = 0xFFFFFFFFu;
  static constexpr std::size_t kVidEntriesPerPage = kPageSize / kRecordIdBytes;
  static constexpr std::size_t kL2PEntriesPerPage = kPageSize / 4;

  explicit InSituStore(Device& device);

  std::vector<L2PEntry> apply(const SharedStateSnapshot& snapshot);

  // Maintenance: moves Delta-Buffer mirror pages from DDR into cold NVM pages.
  std::size_t merge_delta_pages();

  std::uint64_t vid_entry_count() const { return vid_entries_; }
  std::uint64_t vid_entry_offset(std::uint64_t entry) const;
  std::optional<std::uint64_t> vid_entry_index(Vid vid) const;
  std::uint64_t l2p_entry_offset(PageLid lid) const;
  bool l2p_in_table(PageLid lid) const { return lid < l2p_pages_.size() * kL2PEntriesPerPage; }

  static std::uint32_t encode_l2p(PhysPage page);
  static PhysPage decode_l2p(std::uint32_t entry);

  std::size_t data_page_count() const { return data_pages_.size(); }
  std::size_t delta_page_count() const;
  std::uint64_t applied_generations() const { return applied_; }

  Device& device() { return device_; }

 private:
  void ensure_l2p_capacity(PageLid lid);
  void set_l2p(PageLid lid, PhysPage page, Requester who);
  std::uint64_t append_vid_entry(Vid vid);

  Device& device_;
  std::vector<PhysPage> vid_pages_;
  std::vector<PhysPage> l2p_pages_;
  std::unordered_map<Vid, std::uint64_t> vid_index_;
  std::uint64_t vid_entries_ = 0;
  std::map<PageLid, PhysPage> data_pages_;
  std::uint64_t applied_ = 0;
};

}  // namespace ndt

#pragma once

// Host-side MVCC: N2O version chains, the VID_map, transaction lifecycle and
// the reference visibility semantics every device-side result is checked
// against.

#include <atomic>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <unordered_map>
#include <vector>

#include "ndt/device.hpp"
#include "ndt/layout.hpp"

namespace ndt {

class SharedState;

struct SnapshotDescriptor {
  TxId caller = kNoTx;
  std::vector<TxId> in_flight;  // sorted ascending

  bool is_in_flight(TxId t) const;
  // A version is visible iff it was created by a transaction that began
  // before the caller and is not in the in-flight list.
  bool sees(TxId create_ts) const { return create_ts != kNoTx && create_ts < caller && !is_in_flight(create_ts); }

  friend bool operator==(const SnapshotDescriptor&, const SnapshotDescriptor&) = default;
};

struct ChainEntry {
  RecordId rid;
  TxId create_ts = kNoTx;
  bool tombstone = false;
};

// Newest version visible to `snap`, walking a newest-first chain. NONE when no
// version qualifies or the visible version is a tombstone.
std::optional<RecordId> oracle_visible_version(std::span<const ChainEntry> chain, const SnapshotDescriptor& snap);

struct L2PLocation {
  Region region = Region::kHost;
  std::uint64_t offset = 0;
};

struct L2PEntry {
  PageLid lid = kInvalidPageLid;
  L2PLocation location;
};

class MvccStore {
 public:
  explicit MvccStore(Schema schema, SharedState* shared = nullptr);

  MvccStore(const MvccStore&) = delete;
  MvccStore& operator=(const MvccStore&) = delete;

  const Schema& schema() const { return schema_; }

  TxId begin_tx();
  void commit_tx(TxId t);
  void abort_tx(TxId t);

  RecordId install_version(TxId t, Vid vid, std::span<const Value> values);
  RecordId install_tombstone(TxId t, Vid vid);

  std::optional<RecordId> oracle_visible_version(Vid vid, const SnapshotDescriptor& snap) const;

  // Snapshot for an invocation by `caller`: the full in-flight set at call time.
  SnapshotDescriptor snapshot(TxId caller) const;
  std::vector<TxId> in_flight() const;
  bool is_in_flight(TxId t) const;

  std::vector<ChainEntry> chain(Vid vid) const;
  std::optional<RecordId> vid_head(Vid vid) const;
  std::vector<Vid> vids() const;  // ascending
  std::size_t vid_count() const;
  std::vector<std::uint8_t> record(RecordId rid) const;
  std::vector<Value> values(RecordId rid) const;

  std::optional<L2PLocation> l2p(PageLid lid) const;
  void apply_placements(std::span<const L2PEntry> placements);
  std::size_t page_count() const;

  // Count of host-side begin/install/commit/abort operations.
  std::uint64_t host_ops() const { return host_ops_.load(); }
  std::uint64_t versions_created() const { return versions_created_.load(); }

 private:
  enum class TxStatus : std::uint8_t { kUnknown, kActive, kCommitted, kAborted };
  struct TxWrite {
    Vid vid;
    std::optional<RecordId> previous_head;
  };

  RecordId install(TxId t, Vid vid, const RecordHeader& header, std::span<const Value> values);
  RecordId append_record(std::span<const std::uint8_t> bytes, bool* new_page);
  std::span<const std::uint8_t> record_span(RecordId rid) const;
  TxStatus status_of(TxId t) const;

  Schema schema_;
  SharedState* shared_;
  mutable std::shared_mutex mu_;
  TxId next_tx_ = 1;
  std::vector<TxStatus> status_;  // indexed by TxId
  std::map<TxId, std::vector<TxWrite>> active_;
  std::unordered_map<Vid, RecordId> vid_map_;
  std::vector<std::unique_ptr<NsmPage>> pages_;  // indexed by page_lid
  mutable std::mutex l2p_mu_;
  std::vector<L2PLocation> l2p_;
  std::atomic<std::uint64_t> host_ops_{0};
  std::atomic<std::uint64_t> versions_created_{0};
};

}  // namespace ndt

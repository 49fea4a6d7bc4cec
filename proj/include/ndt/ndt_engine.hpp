#pragma once

// On-device nDT execution: round-robin PE scheduling over the in-situ
// VID_map, device-side visibility checks, scratchpad-partitioned NSM to
// columnar transformation, and streaming / materialized result handling.

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "ndt/columnar.hpp"
#include "ndt/device.hpp"
#include "ndt/layout.hpp"
#include "ndt/mvcc.hpp"
#include "ndt/shared_state.hpp"

namespace ndt {

enum class ResultMode { kStreaming, kMaterialize };

enum class BufferKind : std::uint8_t { kValues = 0, kValidity = 1, kOffsets = 2, kRowIds = 3 };

const char* buffer_kind_name(BufferKind kind);

inline constexpr std::size_t kRecordLoadBytes = 8 * 1024;
inline constexpr std::size_t kRowIdStageBytes = 4 * 1024;

// Owner id under which an invocation's device pages are allocated.
constexpr OwnerId invocation_owner(std::uint64_t invocation_id) { return 1000 + invocation_id; }

struct NdtInvocation {
  std::uint64_t id = 0;
  std::shared_ptr<const SharedStateSnapshot> shared_state;
  SnapshotDescriptor snapshot;
  Schema table;
  std::vector<std::size_t> projection;
  std::uint32_t pe_count = 1;
  ResultMode mode = ResultMode::kMaterialize;
  std::vector<PhysPage> result_pages;
};

void validate_projection(const Schema& schema, std::span<const std::size_t> projection);

// Leading vid column followed by the projected attributes in result types.
std::vector<Attribute> result_attributes(const Schema& schema, std::span<const std::size_t> projection);

struct Partition {
  std::size_t column = 0;  // index into the projection
  BufferKind kind = BufferKind::kValues;
  std::size_t bytes = 0;

  friend bool operator==(const Partition&, const Partition&) = default;
};

struct ScratchpadLayout {
  std::size_t scratchpad_bytes = 0;
  std::size_t record_load_bytes = kRecordLoadBytes;
  std::vector<Partition> partitions;

  std::size_t total_bytes() const;
  std::optional<std::size_t> find(std::size_t column, BufferKind kind) const;
};

// 8 KiB record-load partition; the rest split equally over one value
// partition per projected attribute, one validity partition per nullable
// attribute and one offsets partition per varlen attribute.
ScratchpadLayout plan_scratchpad(const Schema& schema, std::span<const std::size_t> projection,
                                 std::size_t scratchpad_bytes);

enum class JobStatus { kRunning, kSuspended, kDone };

struct PeJobState {
  std::uint32_t pe = 0;
  std::vector<std::uint64_t> vid_entries;
  std::vector<PhysPage> result_pages;
  std::uint64_t rows_emitted = 0;
  JobStatus status = JobStatus::kRunning;
};

// VID_map entry i goes to PE (i mod pe_count); result pages likewise.
std::vector<PeJobState> schedule(const NdtInvocation& inv, std::uint64_t vid_entry_count, const DeviceConfig& cfg);

struct BufferDescriptor {
  std::vector<PhysPage> pages;
  std::uint64_t size = 0;
};

struct ColumnBuffers {
  BufferDescriptor values;
  BufferDescriptor validity;
  BufferDescriptor offsets;
};

// One PE's output of one invocation.
struct Fragment {
  std::uint32_t pe = 0;
  std::uint64_t row_count = 0;
  BufferDescriptor row_ids;
  std::vector<ColumnBuffers> columns;

  std::uint64_t bytes() const;
};

struct ExecutionStats {
  ScratchpadLayout layout;
  std::vector<std::uint64_t> rows_per_pe;
  std::vector<std::vector<std::uint64_t>> flushes;  // [pe][partition]
  std::uint64_t suspensions = 0;
  std::uint64_t result_bytes = 0;
  std::uint64_t batches = 0;
  std::uint64_t vid_entries_scanned = 0;
  TransferLedger ledger;

  std::uint64_t rows() const;
  std::uint64_t total_flushes() const;
};

struct MaterializationHandle {
  std::uint64_t id = 0;
  Schema table;
  std::vector<std::size_t> projection;
  SnapshotDescriptor snapshot;
  std::vector<Fragment> fragments;
  std::uint64_t row_count = 0;
  std::unordered_map<Vid, std::uint64_t> vid_position;
  std::vector<std::uint64_t> visibility;  // mirror of the device-resident bitmap
  BufferDescriptor visibility_pages;
  std::vector<OwnerId> owners;
  bool freed = false;

  TxId snapshot_ts() const { return snapshot.caller; }
  std::uint64_t live_rows() const;
  std::uint64_t result_bytes() const;
};

// Serialized form of the descriptors the device returns on completion.
std::vector<std::uint8_t> encode_descriptors(const MaterializationHandle& handle,
                                             std::span<const Fragment> fragments);

struct VisibleVersion {
  RecordId rid;
  PhysPage page;
  SlotEntry slot;
  HeaderPrefix header;
};

// Pages granted by the host for a suspended invocation, or nullopt on denial.
using SpaceGrantor = std::function<std::optional<std::vector<PhysPage>>(std::uint64_t invocation_id, std::size_t pages)>;

// Decides whether a PE emits a row for the version it found visible (nullopt
// when no version is visible).
using RowFilter = std::function<bool(std::uint32_t pe, const std::optional<VisibleVersion>& visible)>;

struct StreamChunk {
  std::uint32_t pe = 0;
  std::uint32_t column = 0;
  BufferKind kind = BufferKind::kValues;
  std::vector<std::uint8_t> bytes;
};

struct StreamBatch {
  std::uint64_t sequence = 0;
  std::vector<StreamChunk> chunks;
  std::uint64_t payload_bytes = 0;
};

using BatchConsumer = std::function<void(const StreamBatch&)>;

struct StreamConfig {
  std::size_t buffer_count = 2;
  std::size_t buffer_bytes = 64 * 1024;
};

// Host-side reassembly of streamed chunks into per-PE fragments.
class StreamAssembler {
 public:
  StreamAssembler(const Schema& schema, std::vector<std::size_t> projection, std::uint32_t pe_count);
  void consume(const StreamBatch& batch);
  ColumnSet finish() const;
  std::uint64_t payload_bytes() const { return payload_bytes_; }

 private:
  std::vector<Attribute> attributes_;
  std::size_t columns_;
  // [pe][slot] where slot 0 = row ids, then 3 per column (values, validity, offsets)
  std::vector<std::vector<std::vector<std::uint8_t>>> buffers_;
  std::uint64_t payload_bytes_ = 0;
};

struct MaterializeRun {
  std::vector<Fragment> fragments;
  std::vector<std::vector<Vid>> vids;  // emitted row identities per PE, in row order
  ExecutionStats stats;
};

class NdtEngine {
 public:
  NdtEngine(Device& device, InSituStore& store);

  std::vector<PeJobState> schedule(const NdtInvocation& inv) const;

  // Device-side visibility check; NONE for tombstones. Charges the ledger.
  std::optional<RecordId> pe_visibility_check(std::uint32_t pe, std::uint64_t vid_entry,
                                              const SnapshotDescriptor& snap);
  // Same traversal, returning the visible version including tombstones.
  std::optional<VisibleVersion> locate_visible(std::uint32_t pe, std::uint64_t vid_entry,
                                               const SnapshotDescriptor& snap);

  MaterializationHandle materialize_results(const NdtInvocation& inv, const SpaceGrantor& grantor);
  ExecutionStats stream_results(const NdtInvocation& inv, const BatchConsumer& consumer,
                                const StreamConfig& stream = {});

  // Materialize-mode execution emitting only rows accepted by `filter`.
  MaterializeRun run_materialize(const NdtInvocation& inv, const SpaceGrantor& grantor, const RowFilter& filter);
  // Hands completed fragment descriptors to the host (device-to-host transfer)
  // and exposes their pages for host reads.
  void return_descriptors(const MaterializationHandle& handle, std::span<const Fragment> fragments,
                          OwnerId owner);
  // Writes visibility-bitmap words [first_word, last_word] of `handle` to its
  // device pages, allocating pages under `owner` as needed.
  void store_visibility_words(MaterializationHandle& handle, std::uint64_t first_word, std::uint64_t last_word,
                              OwnerId owner);

  Device& device() { return device_; }
  InSituStore& store() { return store_; }

 private:
  class Sink;
  class MaterializeSink;
  class StreamSink;
  struct PeRuntime;

  ExecutionStats execute(const NdtInvocation& inv, Sink& sink, const RowFilter& filter,
                         std::vector<PeJobState>& jobs, std::vector<std::vector<Vid>>* vids);
  void transform_record(PeRuntime& pe, Sink& sink, std::span<const std::uint8_t> record, const Schema& schema,
                        std::span<const std::size_t> projection);
  void flush_partition(PeRuntime& pe, Sink& sink, std::size_t partition);
  void flush_row_ids(PeRuntime& pe, Sink& sink);

  Device& device_;
  InSituStore& store_;
};

// Reads every row of a materialization (outdated rows included) together with
// its visibility bitmap through the device on behalf of `who`.
ColumnSet read_materialized(Device& device, const MaterializationHandle& handle, Requester who);

// Reads one buffer spread over device pages.
std::vector<std::uint8_t> read_buffer(Device& device, const BufferDescriptor& buffer, Requester who);

}  // namespace ndt

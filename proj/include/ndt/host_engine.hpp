#pragma once

// Host side of the NDP-DBMS: the Orderline OLTP driver, the NdpSystem facade
// wiring MVCC, shared-state and the device together, and Q6 evaluators.

#include <atomic>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <vector>

#include "ndt/columnar.hpp"
#include "ndt/delta.hpp"
#include "ndt/device.hpp"
#include "ndt/mvcc.hpp"
#include "ndt/ndt_engine.hpp"
#include "ndt/shared_state.hpp"

namespace ndt {

// ol_o_id, ol_d_id, ol_w_id, ol_number, ol_i_id, ol_delivery_d (nullable),
// ol_quantity, ol_amount, ol_dist_info
Schema orderline_schema();

inline constexpr std::size_t kOlDeliveryD = 5;
inline constexpr std::size_t kOlQuantity = 6;
inline constexpr std::size_t kOlAmount = 7;

// 2024-01-01T00:00:00Z as microseconds since 2000-01-01.
inline constexpr std::int64_t kWorkloadEpochPgMicros = 757'382'400LL * 1'000'000;

struct WorkloadConfig {
  std::uint64_t seed = 1;
  double scale_factor = 1.0;  // 1.0 = 30,000 orders, about 300k order lines
  std::uint64_t new_order_txns = 0;
  std::uint64_t delivery_txns = 0;
};

struct WorkloadReport {
  std::uint64_t committed = 0;
  std::uint64_t versions_created = 0;
  std::uint64_t host_ops = 0;
  std::uint64_t rows = 0;  // live order lines
};

class OltpDriver {
 public:
  OltpDriver(MvccStore& store, const WorkloadConfig& cfg);

  // Initial population: one transaction per order. Orders below 70% of each
  // district are delivered, the rest have a NULL delivery date.
  void load();
  // Interleaved new-order and delivery transactions in a seed-determined order.
  void run();
  void new_order();
  // Sets delivery date and a new amount on the oldest undelivered order of a district.
  bool delivery();
  // Updates `fraction` of the live order lines (amount and delivery date) in
  // transactions of `batch` lines. Returns the updated row count.
  std::uint64_t update_fraction(double fraction, std::size_t batch = 256);

  std::uint64_t orders() const { return next_order_; }
  WorkloadReport report() const;

 private:
  struct Order {
    std::int32_t w, d, o;
    std::vector<Vid> lines;
  };
  std::vector<Value> line_values(const Order& order, std::int32_t number, bool delivered);
  std::int64_t clock_micros();

  MvccStore& store_;
  WorkloadConfig cfg_;
  std::mt19937_64 rng_;
  Vid next_vid_ = 1;
  std::uint64_t next_order_ = 0;
  std::uint64_t ticks_ = 0;
  std::uint64_t committed_ = 0;
  std::int32_t warehouses_ = 1;
  std::map<std::pair<std::int32_t, std::int32_t>, std::int32_t> next_o_id_;
  std::map<std::pair<std::int32_t, std::int32_t>, std::vector<Order>> undelivered_;
};

WorkloadReport run_oltp(MvccStore& store, const WorkloadConfig& cfg);

struct SystemConfig {
  DeviceConfig device;
  std::size_t delta_buffer_bytes = kDefaultDeltaBufferBytes;
  double estimate_headroom = 1.25;
  std::optional<std::size_t> grant_limit_pages;  // total pages the host will grant
};

// Owns the whole host/device stack for one table.
class NdpSystem {
 public:
  NdpSystem(Schema schema, SystemConfig cfg = {});
  NdpSystem(const NdpSystem&) = delete;
  NdpSystem& operator=(const NdpSystem&) = delete;

  MvccStore& store() { return store_; }
  Device& device() { return device_; }
  SharedState& shared_state() { return shared_; }
  InSituStore& in_situ() { return in_situ_; }
  NdtEngine& engine() { return engine_; }
  const SystemConfig& config() const { return cfg_; }

  // Result pages the estimator reserves: per PE and buffer the estimated
  // bytes in pages, summed, times the headroom; at least one page per PE.
  std::size_t estimate_pages(std::span<const std::size_t> projection, std::uint32_t pe_count,
                             double headroom) const;

  // Propagates shared-state with the caller's snapshot and pre-allocates
  // result pages (`result_pages` overrides the estimate).
  NdtInvocation prepare_invocation(TxId caller, std::vector<std::size_t> projection, ResultMode mode,
                                   std::uint32_t pe_count, std::optional<std::size_t> result_pages = std::nullopt);

  MaterializationHandle materialize(const NdtInvocation& inv);
  ExecutionStats stream(const NdtInvocation& inv, const BatchConsumer& consumer, const StreamConfig& stream = {});
  DeltaResult delta(MaterializationHandle& handle, const NdtInvocation& inv);
  MaterializationHandle compact(const MaterializationHandle& handle, const NdtInvocation& inv);
  void free_handle(MaterializationHandle& handle);

  // Host side of a suspended invocation's space request.
  std::optional<std::vector<PhysPage>> grant_space(std::uint64_t invocation_id, std::size_t pages);

  // Moves the Delta-Buffer mirror into cold NVM pages.
  std::size_t merge_cold();

  // Convenience: snapshot transaction around a full materialization.
  MaterializationHandle materialize_now(std::vector<std::size_t> projection, std::uint32_t pe_count);

  // MVCC operations plus invocation preparations plus space grants.
  std::uint64_t host_work() const { return store_.host_ops() + invocation_ops_.load() + grants_.load(); }
  std::uint64_t invocation_ops() const { return invocation_ops_.load(); }
  std::uint64_t grants() const { return grants_.load(); }

 private:
  class Link : public DeviceLink {
   public:
    explicit Link(NdpSystem& sys) : sys_(sys) {}
    std::vector<L2PEntry> deliver(const SharedStateSnapshot& snapshot) override;

   private:
    NdpSystem& sys_;
  };

  SpaceGrantor grantor();

  SystemConfig cfg_;
  Device device_;
  SharedState shared_;
  MvccStore store_;
  InSituStore in_situ_;
  NdtEngine engine_;
  Link link_;
  std::mutex channel_;  // orders propagations and invocation executions
  std::mutex grant_mu_;
  std::size_t granted_pages_ = 0;
  std::atomic<std::uint64_t> next_invocation_{1};
  std::atomic<std::uint64_t> invocation_ops_{0};
  std::atomic<std::uint64_t> grants_{0};
};

// Export-then-transform baseline: every data page crosses the host link
// and the host transforms the records itself.
struct ExportBaseline {
  std::uint64_t pages = 0;
  std::uint64_t records = 0;
  TransferLedger ledger;
  ModeledTime time;
};

ExportBaseline simulate_export(NdpSystem& sys);

struct Q6Params {
  std::int64_t delivery_from = 0;  // unix seconds, inclusive
  std::int64_t delivery_to = 0;    // unix seconds, exclusive
  std::int32_t quantity_min = 1;
  std::int32_t quantity_max = 100000;
};

// Default window: the first half of 2024.
Q6Params default_q6_params();

// SUM(ol_amount) over the current rows of a columnar result.
Decimal q6_columnar(const ColumnSet& view, const Q6Params& params);
// Same predicate over the host row store at `snap`.
Decimal q6_rowstore(const MvccStore& store, const SnapshotDescriptor& snap, const Q6Params& params);

// Host oracle for a transformation: the visible rows at `snap`, projected,
// in result types with the leading vid column.
ColumnSet oracle_columns(const MvccStore& store, const SnapshotDescriptor& snap,
                         std::span<const std::size_t> projection);

}  // namespace ndt

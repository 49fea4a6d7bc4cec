#include "ndt/delta.hpp"

#include <set>

namespace ndt {

DeltaResult delta_transform(NdtEngine& engine, MaterializationHandle& handle, const NdtInvocation& inv,
                            const SpaceGrantor& grantor) {
  if (handle.freed) fail(Errc::kStaleHandle, "materialization " + std::to_string(handle.id) + " was freed");
  if (inv.mode != ResultMode::kMaterialize) fail(Errc::kInvalidConfig, "delta needs materialize mode");
  if (!(inv.table == handle.table) || inv.projection != handle.projection) {
    fail(Errc::kSchemaMismatch, "delta invocation targets a different table or projection");
  }
  if (inv.snapshot.caller <= handle.snapshot_ts()) {
    fail(Errc::kInvalidConfig, "delta snapshot " + std::to_string(inv.snapshot.caller) + " is not newer than " +
                                   std::to_string(handle.snapshot_ts()));
  }

  Device& device = engine.device();
  const auto before = device.ledger();
  const SnapshotDescriptor old = handle.snapshot;
  DeltaResult out;
  std::vector<std::uint64_t> cleared;
  std::vector<Vid> deleted;

  // A version is new to the handle if the old snapshot could not see it:
  // created after the old caller or by a transaction in flight back then.
  RowFilter filter = [&](std::uint32_t, const std::optional<VisibleVersion>& v) {
    ++out.scanned_vids;
    if (!v) return false;
    const TxId ts = v->header.create_ts;
    if (ts < old.caller && !old.is_in_flight(ts)) return false;
    ++out.changed_vids;
    auto it = handle.vid_position.find(v->header.vid);
    if (it != handle.vid_position.end()) cleared.push_back(it->second);
    if (v->header.tombstone) {
      deleted.push_back(v->header.vid);
      return false;
    }
    return true;
  };

  auto run = engine.run_materialize(inv, grantor, filter);
  const OwnerId owner = invocation_owner(inv.id);

  std::set<std::uint64_t> dirty;
  for (auto pos : cleared) {
    handle.visibility[pos / 64] &= ~(std::uint64_t{1} << (pos % 64));
    dirty.insert(pos / 64);
  }
  for (Vid v : deleted) handle.vid_position.erase(v);

  const std::uint64_t first_new = handle.row_count;
  for (const auto& pe_vids : run.vids) {
    for (Vid v : pe_vids) handle.vid_position[v] = handle.row_count++;
  }
  handle.visibility.resize(ceil_div(handle.row_count, 64), 0);
  for (std::uint64_t pos = first_new; pos < handle.row_count; ++pos) {
    handle.visibility[pos / 64] |= std::uint64_t{1} << (pos % 64);
    dirty.insert(pos / 64);
  }

  const std::size_t first_fragment = handle.fragments.size();
  for (auto& f : run.fragments) {
    if (f.row_count > 0) handle.fragments.push_back(std::move(f));
  }
  handle.snapshot = inv.snapshot;
  handle.owners.push_back(owner);

  // Coalesce dirty words into contiguous runs.
  for (auto it = dirty.begin(); it != dirty.end();) {
    const auto first = *it;
    auto last = first;
    while (++it != dirty.end() && *it == last + 1) last = *it;
    engine.store_visibility_words(handle, first, last, owner);
  }

  engine.return_descriptors(handle, std::span(handle.fragments).subspan(first_fragment), owner);

  out.cleared_rows = cleared.size();
  out.appended_rows = run.stats.rows();
  out.appended_bytes = run.stats.result_bytes;
  out.stats = std::move(run.stats);
  out.cost = device.ledger().since(before);
  return out;
}

ColumnSet masked_view(Device& device, const MaterializationHandle& handle, Requester who) {
  return read_materialized(device, handle, who).masked();
}

MaterializationHandle compact(NdtEngine& engine, const MaterializationHandle& handle, NdtInvocation inv,
                              const SpaceGrantor& grantor) {
  if (handle.freed) fail(Errc::kStaleHandle, "materialization " + std::to_string(handle.id) + " was freed");
  if (!(inv.table == handle.table) || inv.projection != handle.projection) {
    fail(Errc::kSchemaMismatch, "compaction targets a different table or projection");
  }
  inv.snapshot = handle.snapshot;
  inv.mode = ResultMode::kMaterialize;
  return engine.materialize_results(inv, grantor);
}

}  // namespace ndt

#pragma once

// Incremental transformation over a prior materialization. Rows whose visible
// version changed since the handle's snapshot are appended; their old
// positions are masked out in the visibility bitmap.

#include <cstdint>

#include "ndt/columnar.hpp"
#include "ndt/ndt_engine.hpp"

namespace ndt {

struct DeltaResult {
  std::uint64_t scanned_vids = 0;
  std::uint64_t changed_vids = 0;
  std::uint64_t appended_rows = 0;
  std::uint64_t cleared_rows = 0;
  std::uint64_t appended_bytes = 0;
  TransferLedger cost;  // everything the delta moved, bitmap and descriptors included
  ExecutionStats stats;
};

// `inv` must target the handle's table and projection with a newer snapshot.
// Its result pages become owned by the handle.
DeltaResult delta_transform(NdtEngine& engine, MaterializationHandle& handle, const NdtInvocation& inv,
                            const SpaceGrantor& grantor);

// Current rows of the handle in position order.
ColumnSet masked_view(Device& device, const MaterializationHandle& handle, Requester who);

// Rewrites the materialization at the handle's snapshot without outdated rows.
// The caller frees the old handle.
MaterializationHandle compact(NdtEngine& engine, const MaterializationHandle& handle, NdtInvocation inv,
                              const SpaceGrantor& grantor);

}  // namespace ndt

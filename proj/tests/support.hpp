#pragma once

// Test helpers: error codes, small schemas and an oracle for device output
// built directly from version chains.

#include <chrono>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "ndt/columnar.hpp"
#include "ndt/host_engine.hpp"
#include "ndt/layout.hpp"
#include "ndt/mvcc.hpp"
#include "history.hpp"

namespace ndt::test {

// Error code thrown by `fn`; records a failure when nothing is thrown.
inline Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return Errc::kIoError;
}

// PostgreSQL micros to unix seconds via the calendar, not via the library.
inline std::int64_t chrono_unix_seconds(std::int64_t pg_micros) {
  using namespace std::chrono;
  const auto t = sys_days{year{2000} / January / 1} + microseconds{pg_micros};
  return floor<seconds>(t).time_since_epoch().count();
}

// Newest version of the chain the snapshot can see, by linear search.
inline std::optional<ChainEntry> brute_visible(const std::vector<ChainEntry>& chain, const SnapshotDescriptor& snap) {
  for (const auto& e : chain) {
    bool in_flight = false;
    for (auto t : snap.in_flight) in_flight |= t == e.create_ts;
    if (e.create_ts != 0 && e.create_ts < snap.caller && !in_flight) return e;
  }
  return std::nullopt;
}

// Expected rows keyed by vid, projected and converted to result types.
using ExpectedRows = std::map<Vid, std::vector<Value>>;

inline ExpectedRows expected_rows(const MvccStore& store, const SnapshotDescriptor& snap,
                                  const std::vector<std::size_t>& projection) {
  ExpectedRows out;
  for (Vid vid : store.vids()) {
    auto v = brute_visible(store.chain(vid), snap);
    if (!v || v->tombstone) continue;
    const auto values = store.values(v->rid);
    std::vector<Value> row;
    for (auto i : projection) {
      Value x = values[i];
      if (auto* ts = std::get_if<PgTimestamp>(&x)) x = chrono_unix_seconds(ts->micros);
      row.push_back(x);
    }
    out.emplace(vid, std::move(row));
  }
  return out;
}

// Current rows of a result keyed by vid. Fails the test on duplicates.
inline ExpectedRows rows_of(const ColumnSet& set) {
  ExpectedRows out;
  for (std::uint64_t r = 0; r < set.row_count; ++r) {
    if (!set.row_visible(r)) continue;
    const Vid vid = static_cast<Vid>(std::get<std::int64_t>(set.columns[0].value(r)));
    std::vector<Value> row;
    for (std::size_t c = 1; c < set.columns.size(); ++c) {
      row.push_back(set.columns[c].value(r));
    }
    EXPECT_TRUE(out.emplace(vid, std::move(row)).second) << "vid " << vid << " appears twice";
  }
  return out;
}

}  // namespace ndt::test

#include "ndt/mvcc.hpp"

#include <algorithm>
#include <mutex>

#include "ndt/shared_state.hpp"

namespace ndt {

bool SnapshotDescriptor::is_in_flight(TxId t) const {
  return std::binary_search(in_flight.begin(), in_flight.end(), t);
}

std::optional<RecordId> oracle_visible_version(std::span<const ChainEntry> chain, const SnapshotDescriptor& snap) {
  for (const auto& v : chain) {
    if (snap.sees(v.create_ts)) {
      if (v.tombstone) return std::nullopt;
      return v.rid;
    }
  }
  return std::nullopt;
}

MvccStore::MvccStore(Schema schema, SharedState* shared)
    : schema_(std::move(schema)), shared_(shared), status_(1, TxStatus::kUnknown) {}

MvccStore::TxStatus MvccStore::status_of(TxId t) const {
  return t < status_.size() ? status_[t] : TxStatus::kUnknown;
}

TxId MvccStore::begin_tx() {
  std::unique_lock lock(mu_);
  const TxId t = next_tx_++;
  status_.push_back(TxStatus::kActive);
  active_.emplace(t, std::vector<TxWrite>{});
  ++host_ops_;
  return t;
}

void MvccStore::commit_tx(TxId t) {
  std::unique_lock lock(mu_);
  switch (status_of(t)) {
    case TxStatus::kUnknown: fail(Errc::kUnknownTx, std::to_string(t));
    case TxStatus::kCommitted:
    case TxStatus::kAborted: fail(Errc::kAlreadyFinished, std::to_string(t));
    case TxStatus::kActive: break;
  }
  status_[t] = TxStatus::kCommitted;
  active_.erase(t);
  ++host_ops_;
}

void MvccStore::abort_tx(TxId t) {
  std::unique_lock lock(mu_);
  switch (status_of(t)) {
    case TxStatus::kUnknown: fail(Errc::kUnknownTx, std::to_string(t));
    case TxStatus::kCommitted:
    case TxStatus::kAborted: fail(Errc::kAlreadyFinished, std::to_string(t));
    case TxStatus::kActive: break;
  }
  auto writes = std::move(active_.at(t));
  for (auto it = writes.rbegin(); it != writes.rend(); ++it) {
    if (it->previous_head) {
      vid_map_[it->vid] = *it->previous_head;
    } else {
      vid_map_.erase(it->vid);
    }
    if (shared_) shared_->stage_vid_entry({it->vid, it->previous_head.value_or(RecordId::none())});
  }
  status_[t] = TxStatus::kAborted;
  active_.erase(t);
  ++host_ops_;
}

RecordId MvccStore::append_record(std::span<const std::uint8_t> bytes, bool* new_page) {
  *new_page = false;
  if (pages_.empty() || !pages_.back()->fits(bytes.size())) {
    const auto lid = static_cast<PageLid>(pages_.size());
    pages_.push_back(std::make_unique<NsmPage>(lid));
    std::lock_guard l2p_lock(l2p_mu_);
    l2p_.push_back({Region::kHost, std::uint64_t{lid} * kPageSize});
    *new_page = true;
  }
  return pages_.back()->insert(bytes);
}

RecordId MvccStore::install(TxId t, Vid vid, const RecordHeader& header_in, std::span<const Value> values) {
  RecordId rid;
  bool full = false;
  {
    std::unique_lock lock(mu_);
    if (status_of(t) != TxStatus::kActive) fail(Errc::kUnknownTx, "install by inactive tx " + std::to_string(t));
    std::optional<RecordId> previous;
    if (auto it = vid_map_.find(vid); it != vid_map_.end()) {
      previous = it->second;
      const TxId head_ts = decode_header_prefix(record_span(it->second)).create_ts;
      if (t <= head_ts) fail(Errc::kStaleWrite, "vid " + std::to_string(vid) + " head is newer");
      if (status_of(head_ts) == TxStatus::kActive) {
        fail(Errc::kStaleWrite, "vid " + std::to_string(vid) + " head is uncommitted");
      }
    }
    RecordHeader header = header_in;
    header.vid = vid;
    header.create_ts = t;
    header.pred = previous.value_or(RecordId::none());
    const auto bytes = encode_record(schema_, header, values);
    bool new_page = false;
    rid = append_record(bytes, &new_page);
    vid_map_[vid] = rid;
    active_.at(t).push_back({vid, previous});
    ++host_ops_;
    ++versions_created_;
    // Staged under the lock so the Delta-Buffer sees records in slot order.
    if (shared_) {
      std::optional<L2PEntry> l2p;
      if (new_page) l2p = L2PEntry{rid.page_lid, {Region::kHost, std::uint64_t{rid.page_lid} * kPageSize}};
      full = shared_->stage_change(bytes, rid, {vid, rid}, l2p);
    }
  }
  if (full) shared_->propagate(PropagationMode::kRegular);
  return rid;
}

RecordId MvccStore::install_version(TxId t, Vid vid, std::span<const Value> values) {
  return install(t, vid, RecordHeader{}, values);
}

RecordId MvccStore::install_tombstone(TxId t, Vid vid) {
  RecordHeader h;
  h.tombstone = true;
  return install(t, vid, h, {});
}

std::span<const std::uint8_t> MvccStore::record_span(RecordId rid) const {
  if (!rid.valid() || rid.page_lid >= pages_.size()) fail(Errc::kDanglingReference, "host record lookup");
  return pages_[rid.page_lid]->slot_lookup(rid.slot);
}

std::vector<ChainEntry> MvccStore::chain(Vid vid) const {
  std::shared_lock lock(mu_);
  std::vector<ChainEntry> out;
  auto it = vid_map_.find(vid);
  if (it == vid_map_.end()) return out;
  for (RecordId rid = it->second; rid.valid();) {
    auto h = decode_header_prefix(record_span(rid));
    out.push_back({rid, h.create_ts, h.tombstone});
    rid = h.pred;
  }
  return out;
}

std::optional<RecordId> MvccStore::oracle_visible_version(Vid vid, const SnapshotDescriptor& snap) const {
  auto c = chain(vid);
  return ndt::oracle_visible_version(c, snap);
}

SnapshotDescriptor MvccStore::snapshot(TxId caller) const {
  std::shared_lock lock(mu_);
  SnapshotDescriptor s{caller, {}};
  s.in_flight.reserve(active_.size());
  for (const auto& [t, _] : active_) s.in_flight.push_back(t);
  return s;
}

std::vector<TxId> MvccStore::in_flight() const { return snapshot(kNoTx).in_flight; }

bool MvccStore::is_in_flight(TxId t) const {
  std::shared_lock lock(mu_);
  return active_.contains(t);
}

std::optional<RecordId> MvccStore::vid_head(Vid vid) const {
  std::shared_lock lock(mu_);
  auto it = vid_map_.find(vid);
  if (it == vid_map_.end()) return std::nullopt;
  return it->second;
}

std::vector<Vid> MvccStore::vids() const {
  std::shared_lock lock(mu_);
  std::vector<Vid> out;
  out.reserve(vid_map_.size());
  for (const auto& [v, _] : vid_map_) out.push_back(v);
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t MvccStore::vid_count() const {
  std::shared_lock lock(mu_);
  return vid_map_.size();
}

std::vector<std::uint8_t> MvccStore::record(RecordId rid) const {
  std::shared_lock lock(mu_);
  auto s = record_span(rid);
  return {s.begin(), s.end()};
}

std::vector<Value> MvccStore::values(RecordId rid) const {
  std::shared_lock lock(mu_);
  return decode_record(schema_, record_span(rid));
}

std::optional<L2PLocation> MvccStore::l2p(PageLid lid) const {
  std::lock_guard lock(l2p_mu_);
  if (lid >= l2p_.size()) return std::nullopt;
  return l2p_[lid];
}

void MvccStore::apply_placements(std::span<const L2PEntry> placements) {
  std::lock_guard lock(l2p_mu_);
  for (const auto& p : placements) {
    if (p.lid < l2p_.size()) l2p_[p.lid] = p.location;
  }
}

std::size_t MvccStore::page_count() const {
  std::shared_lock lock(mu_);
  return pages_.size();
}

}  // namespace ndt

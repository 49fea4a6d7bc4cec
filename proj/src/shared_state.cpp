#include "ndt/shared_state.hpp"

#include <algorithm>

namespace ndt {

std::uint64_t SharedStateSnapshot::record_bytes() const {
  std::uint64_t n = 0;
  for (const auto& r : records) n += r.bytes.size();
  return n;
}

SharedState::SharedState(std::size_t capacity_bytes) : capacity_(capacity_bytes) {
  if (capacity_ < kPageSize) fail(Errc::kInvalidConfig, "delta buffer must hold at least one page");
}

void SharedState::record_change(std::span<const std::uint8_t> record_bytes, RecordId rid, VidMapDelta vid_entry,
                                std::optional<L2PEntry> l2p_entry) {
  if (stage_change(record_bytes, rid, vid_entry, l2p_entry)) propagate(PropagationMode::kRegular);
}

bool SharedState::stage_change(std::span<const std::uint8_t> record_bytes, RecordId rid, VidMapDelta vid_entry,
                               std::optional<L2PEntry> l2p_entry) {
  std::lock_guard lock(buffer_mu_);
  current_.records.push_back({rid, {record_bytes.begin(), record_bytes.end()}});
  current_.bytes += record_bytes.size();
  current_.vid_map_delta[vid_entry.vid] = vid_entry.head;
  if (l2p_entry) current_.l2p_delta.push_back(*l2p_entry);
  return current_.bytes >= capacity_;
}

void SharedState::stage_vid_entry(VidMapDelta vid_entry) {
  std::lock_guard lock(buffer_mu_);
  current_.vid_map_delta[vid_entry.vid] = vid_entry.head;
}

std::shared_ptr<const SharedStateSnapshot> SharedState::propagate(PropagationMode mode,
                                                                  std::optional<SnapshotDescriptor> descriptor) {
  std::lock_guard in_flight(propagation_mu_);
  if (link_ == nullptr) fail(Errc::kDeviceUnavailable, "no device attached to shared-state");
  if (mode == PropagationMode::kWithInvocation && !descriptor) {
    fail(Errc::kInvalidConfig, "invocation propagation needs a snapshot descriptor");
  }

  Generation frozen;
  auto snap = std::make_shared<SharedStateSnapshot>();
  {
    std::lock_guard lock(buffer_mu_);
    std::swap(frozen, current_);
    snap->generation = ++generation_;
  }
  snap->records = frozen.records;
  snap->l2p_delta = frozen.l2p_delta;
  snap->vid_map_delta.reserve(frozen.vid_map_delta.size());
  for (const auto& [vid, head] : frozen.vid_map_delta) snap->vid_map_delta.push_back({vid, head});
  if (mode == PropagationMode::kWithInvocation) snap->descriptor = std::move(descriptor);

  std::vector<L2PEntry> placements;
  try {
    placements = link_->deliver(*snap);
  } catch (...) {
    // Not acknowledged: the frozen generation goes back in front of whatever
    // accumulated meanwhile.
    std::lock_guard lock(buffer_mu_);
    frozen.records.insert(frozen.records.end(), current_.records.begin(), current_.records.end());
    for (const auto& [vid, head] : current_.vid_map_delta) frozen.vid_map_delta[vid] = head;
    frozen.l2p_delta.insert(frozen.l2p_delta.end(), current_.l2p_delta.begin(), current_.l2p_delta.end());
    frozen.bytes += current_.bytes;
    current_ = std::move(frozen);
    throw;
  }
  if (placement_sink_) placement_sink_(placements);
  {
    std::lock_guard lock(buffer_mu_);
    ++propagations_;
    if (mode == PropagationMode::kRegular) ++regular_;
  }
  return snap;
}

std::size_t SharedState::size_bytes() const {
  std::lock_guard lock(buffer_mu_);
  return current_.bytes;
}

std::size_t SharedState::pending_records() const {
  std::lock_guard lock(buffer_mu_);
  return current_.records.size();
}

std::uint64_t SharedState::propagation_count() const {
  std::lock_guard lock(buffer_mu_);
  return propagations_;
}

std::uint64_t SharedState::regular_propagations() const {
  std::lock_guard lock(buffer_mu_);
  return regular_;
}

// ---------------------------------------------------------------------------

InSituStore::InSituStore(Device& device) : device_(device) {}

std::uint32_t InSituStore::encode_l2p(PhysPage page) {
  return (page.region == Region::kDdr ? 0x80000000u : 0u) | (page.index & 0x7FFFFFFFu);
}

PhysPage InSituStore::decode_l2p(std::uint32_t entry) {
  return {(entry & 0x80000000u) ? Region::kDdr : Region::kNvm, entry & 0x7FFFFFFFu};
}

std::uint64_t InSituStore::vid_entry_offset(std::uint64_t entry) const {
  if (entry >= vid_entries_) fail(Errc::kOutOfRange, "vid entry " + std::to_string(entry));
  return vid_pages_[entry / kVidEntriesPerPage].offset() + (entry % kVidEntriesPerPage) * kRecordIdBytes;
}

std::optional<std::uint64_t> InSituStore::vid_entry_index(Vid vid) const {
  auto it = vid_index_.find(vid);
  if (it == vid_index_.end()) return std::nullopt;
  return it->second;
}

std::uint64_t InSituStore::l2p_entry_offset(PageLid lid) const {
  if (!l2p_in_table(lid)) fail(Errc::kDanglingReference, "page_lid " + std::to_string(lid) + " not in L2P_map");
  return l2p_pages_[lid / kL2PEntriesPerPage].offset() + (lid % kL2PEntriesPerPage) * 4;
}

std::size_t InSituStore::delta_page_count() const {
  return static_cast<std::size_t>(std::count_if(data_pages_.begin(), data_pages_.end(),
                                                [](const auto& kv) { return kv.second.region == Region::kDdr; }));
}

void InSituStore::ensure_l2p_capacity(PageLid lid) {
  while (!l2p_in_table(lid)) {
    auto page = device_.allocate_pages(Region::kDdr, 1, kStorageOwner).front();
    auto raw = device_.raw_page(page);
    std::fill(raw.begin(), raw.end(), 0xFF);
    l2p_pages_.push_back(page);
  }
}

void InSituStore::set_l2p(PageLid lid, PhysPage page, Requester who) {
  ensure_l2p_capacity(lid);
  std::uint8_t buf[4];
  store_le<std::uint32_t>(buf, encode_l2p(page));
  device_.write(Region::kDdr, l2p_entry_offset(lid), buf, who);
}

std::uint64_t InSituStore::append_vid_entry(Vid vid) {
  if (vid_entries_ == vid_pages_.size() * kVidEntriesPerPage) {
    auto page = device_.allocate_pages(Region::kDdr, 1, kStorageOwner).front();
    auto raw = device_.raw_page(page);
    std::fill(raw.begin(), raw.end(), 0xFF);
    vid_pages_.push_back(page);
  }
  const std::uint64_t idx = vid_entries_++;
  vid_index_.emplace(vid, idx);
  return idx;
}

std::vector<L2PEntry> InSituStore::apply(const SharedStateSnapshot& snap) {
  std::vector<L2PEntry> placements;
  for (const auto& rec : snap.records) {
    auto it = data_pages_.find(rec.rid.page_lid);
    if (it == data_pages_.end()) {
      auto page = device_.allocate_pages(Region::kDdr, 1, kStorageOwner).front();
      page_init(device_.raw_page(page), rec.rid.page_lid);
      set_l2p(rec.rid.page_lid, page, Requester::firmware());
      it = data_pages_.emplace(rec.rid.page_lid, page).first;
      placements.push_back({rec.rid.page_lid, {page.region, page.offset()}});
    }
    const PhysPage page = it->second;
    std::uint32_t slot = 0;
    const SlotEntry e = page_reserve(device_.raw_page(page), rec.bytes.size(), &slot);
    if (slot != rec.rid.slot) {
      fail(Errc::kCorruptRecord, "propagated record lands in slot " + std::to_string(slot) + ", expected " +
                                     std::to_string(rec.rid.slot));
    }
    device_.write(page.region, page.offset() + e.offset, rec.bytes, Requester::host());
    std::uint8_t slot_bytes[kSlotEntryBytes];
    store_le<std::uint16_t>(slot_bytes, e.offset);
    store_le<std::uint16_t>(slot_bytes + 2, e.length);
    device_.write(page.region, page.offset() + slot_entry_offset(slot), slot_bytes, Requester::host());
  }
  for (const auto& d : snap.vid_map_delta) {
    auto idx = vid_entry_index(d.vid);
    if (!idx) {
      if (!d.head.valid()) continue;
      idx = append_vid_entry(d.vid);
    }
    std::uint8_t buf[kRecordIdBytes];
    store_record_id(buf, d.head);
    device_.write(Region::kDdr, vid_entry_offset(*idx), buf, Requester::host());
  }
  ++applied_;
  return placements;
}

std::size_t InSituStore::merge_delta_pages() {
  std::size_t moved = 0;
  std::vector<std::uint8_t> buf(kPageSize);
  for (auto& [lid, page] : data_pages_) {
    if (page.region != Region::kDdr) continue;
    auto cold = device_.allocate_pages(Region::kNvm, 1, kStorageOwner).front();
    device_.read(Region::kDdr, page.offset(), buf, Requester::firmware());
    device_.write(Region::kNvm, cold.offset(), buf, Requester::firmware());
    set_l2p(lid, cold, Requester::firmware());
    const PhysPage old = page;
    device_.free_pages({&old, 1});
    page = cold;
    ++moved;
  }
  return moved;
}

}  // namespace ndt

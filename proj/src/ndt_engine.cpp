#include "ndt/ndt_engine.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>

namespace ndt {

const char* buffer_kind_name(BufferKind kind) {
  switch (kind) {
    case BufferKind::kValues: return "values";
    case BufferKind::kValidity: return "validity";
    case BufferKind::kOffsets: return "offsets";
    case BufferKind::kRowIds: return "row_ids";
  }
  return "?";
}

void validate_projection(const Schema& schema, std::span<const std::size_t> projection) {
  if (projection.empty()) fail(Errc::kInvalidProjection, "projection is empty");
  std::vector<bool> seen(schema.size(), false);
  for (auto i : projection) {
    if (i >= schema.size()) fail(Errc::kInvalidProjection, "attribute index " + std::to_string(i));
    if (seen[i]) fail(Errc::kInvalidProjection, "attribute projected twice: " + schema.attribute(i).name);
    if (schema.attribute(i).name == kVidColumn) fail(Errc::kInvalidProjection, "attribute name collides with vid");
    seen[i] = true;
  }
}

std::vector<Attribute> result_attributes(const Schema& schema, std::span<const std::size_t> projection) {
  std::vector<Attribute> out;
  out.push_back({kVidColumn, FieldType::int64(), false});
  for (auto i : projection) {
    const auto& a = schema.attribute(i);
    out.push_back({a.name, result_type(a.type), a.nullable});
  }
  return out;
}

std::size_t ScratchpadLayout::total_bytes() const {
  std::size_t n = record_load_bytes;
  for (const auto& p : partitions) n += p.bytes;
  return n;
}

std::optional<std::size_t> ScratchpadLayout::find(std::size_t column, BufferKind kind) const {
  for (std::size_t i = 0; i < partitions.size(); ++i) {
    if (partitions[i].column == column && partitions[i].kind == kind) return i;
  }
  return std::nullopt;
}

ScratchpadLayout plan_scratchpad(const Schema& schema, std::span<const std::size_t> projection,
                                 std::size_t scratchpad_bytes) {
  validate_projection(schema, projection);
  if (scratchpad_bytes <= kRecordLoadBytes) {
    fail(Errc::kScratchpadTooSmall, std::to_string(scratchpad_bytes) + " bytes leave no room after the record load partition");
  }
  ScratchpadLayout layout;
  layout.scratchpad_bytes = scratchpad_bytes;
  for (std::size_t k = 0; k < projection.size(); ++k) {
    const auto& a = schema.attribute(projection[k]);
    layout.partitions.push_back({k, BufferKind::kValues, 0});
    if (a.nullable) layout.partitions.push_back({k, BufferKind::kValidity, 0});
    if (a.type.is_varlen()) layout.partitions.push_back({k, BufferKind::kOffsets, 0});
  }
  const std::size_t share = (scratchpad_bytes - kRecordLoadBytes) / layout.partitions.size();
  for (auto& p : layout.partitions) {
    const auto& type = schema.attribute(projection[p.column]).type;
    std::size_t quantum = 1;
    std::size_t minimum = 1;
    switch (p.kind) {
      case BufferKind::kValues:
        quantum = type.is_varlen() ? 1 : result_type(type).width();
        minimum = type.is_varlen() ? type.max_len : quantum;
        break;
      case BufferKind::kValidity: quantum = minimum = 8; break;
      case BufferKind::kOffsets: quantum = 4; minimum = 8; break;
      case BufferKind::kRowIds: break;
    }
    p.bytes = share - share % quantum;
    if (p.bytes < minimum) {
      fail(Errc::kScratchpadTooSmall, "partition of " + std::to_string(p.bytes) + " bytes for " +
                                          schema.attribute(projection[p.column]).name);
    }
  }
  return layout;
}

std::vector<PeJobState> schedule(const NdtInvocation& inv, std::uint64_t vid_entry_count, const DeviceConfig& cfg) {
  if (inv.pe_count == 0 || inv.pe_count > cfg.pe_count) {
    fail(Errc::kTooManyPEsRequested, std::to_string(inv.pe_count) + " PEs requested, device has " +
                                         std::to_string(cfg.pe_count));
  }
  std::vector<PeJobState> jobs(inv.pe_count);
  for (std::uint32_t p = 0; p < inv.pe_count; ++p) jobs[p].pe = p;
  for (std::uint64_t i = 0; i < vid_entry_count; ++i) jobs[i % inv.pe_count].vid_entries.push_back(i);
  for (std::size_t i = 0; i < inv.result_pages.size(); ++i) {
    jobs[i % inv.pe_count].result_pages.push_back(inv.result_pages[i]);
  }
  for (auto& j : jobs) j.status = j.vid_entries.empty() ? JobStatus::kDone : JobStatus::kRunning;
  return jobs;
}

std::uint64_t Fragment::bytes() const {
  std::uint64_t n = row_ids.size;
  for (const auto& c : columns) n += c.values.size + c.validity.size + c.offsets.size;
  return n;
}

std::uint64_t ExecutionStats::rows() const {
  std::uint64_t n = 0;
  for (auto r : rows_per_pe) n += r;
  return n;
}

std::uint64_t ExecutionStats::total_flushes() const {
  std::uint64_t n = 0;
  for (const auto& pe : flushes) {
    for (auto f : pe) n += f;
  }
  return n;
}

std::uint64_t MaterializationHandle::live_rows() const {
  std::uint64_t n = 0;
  for (auto w : visibility) n += static_cast<std::uint64_t>(__builtin_popcountll(w));
  return n;
}

std::uint64_t MaterializationHandle::result_bytes() const {
  std::uint64_t n = 0;
  for (const auto& f : fragments) n += f.bytes();
  return n;
}

namespace {

void put_buffer(std::vector<std::uint8_t>& out, const BufferDescriptor& b) {
  const auto base = out.size();
  out.resize(base + 12 + 4 * b.pages.size());
  store_le<std::uint64_t>(out.data() + base, b.size);
  store_le<std::uint32_t>(out.data() + base + 8, static_cast<std::uint32_t>(b.pages.size()));
  for (std::size_t i = 0; i < b.pages.size(); ++i) {
    store_le<std::uint32_t>(out.data() + base + 12 + 4 * i, b.pages[i].index);
  }
}

std::size_t buffer_slot(std::uint32_t column, BufferKind kind) {
  return kind == BufferKind::kRowIds ? 0 : 1 + 3 * std::size_t{column} + static_cast<std::size_t>(kind);
}

}  // namespace

std::vector<std::uint8_t> encode_descriptors(const MaterializationHandle& handle, std::span<const Fragment> fragments) {
  std::vector<std::uint8_t> out(20);
  store_le<std::uint64_t>(out.data(), handle.snapshot_ts());
  store_le<std::uint64_t>(out.data() + 8, handle.row_count);
  store_le<std::uint32_t>(out.data() + 16, static_cast<std::uint32_t>(fragments.size()));
  for (const auto& f : fragments) {
    const auto base = out.size();
    out.resize(base + 12);
    store_le<std::uint32_t>(out.data() + base, f.pe);
    store_le<std::uint64_t>(out.data() + base + 4, f.row_count);
    put_buffer(out, f.row_ids);
    for (const auto& c : f.columns) {
      put_buffer(out, c.values);
      put_buffer(out, c.validity);
      put_buffer(out, c.offsets);
    }
  }
  put_buffer(out, handle.visibility_pages);
  return out;
}

// ---------------------------------------------------------------------------
// PE runtime state and output sinks

struct NdtEngine::PeRuntime {
  struct Part {
    Partition spec;
    std::vector<std::uint8_t> buf;
    std::size_t fill = 0;
    std::uint64_t bits = 0;
    std::uint64_t flushes = 0;
  };

  std::uint32_t pe = 0;
  std::vector<std::uint8_t> record_load;
  std::vector<Part> parts;
  std::vector<int> values_part;
  std::vector<int> validity_part;
  std::vector<int> offsets_part;
  std::vector<std::uint32_t> varlen_end;
  std::vector<std::uint8_t> row_ids;
  std::size_t row_id_fill = 0;
  std::uint64_t rows = 0;

  PeRuntime(std::uint32_t id, const ScratchpadLayout& layout, std::size_t columns)
      : pe(id), record_load(layout.record_load_bytes), values_part(columns, -1), validity_part(columns, -1),
        offsets_part(columns, -1), varlen_end(columns, 0), row_ids(kRowIdStageBytes) {
    for (std::size_t i = 0; i < layout.partitions.size(); ++i) {
      const auto& p = layout.partitions[i];
      parts.push_back({p, std::vector<std::uint8_t>(p.bytes, 0)});
      auto idx = static_cast<int>(i);
      switch (p.kind) {
        case BufferKind::kValues: values_part[p.column] = idx; break;
        case BufferKind::kValidity: validity_part[p.column] = idx; break;
        case BufferKind::kOffsets: offsets_part[p.column] = idx; break;
        case BufferKind::kRowIds: break;
      }
    }
  }
};

class NdtEngine::Sink {
 public:
  virtual ~Sink() = default;
  virtual void append(std::uint32_t pe, std::uint32_t column, BufferKind kind, std::span<const std::uint8_t> bytes) = 0;
  virtual void finish() {}
};

class NdtEngine::MaterializeSink : public NdtEngine::Sink {
 public:
  MaterializeSink(Device& device, const NdtInvocation& inv, const SpaceGrantor& grantor, std::vector<PeJobState>& jobs,
                  ExecutionStats& stats)
      : device_(device), inv_(inv), grantor_(grantor), jobs_(jobs), stats_(stats), cursor_(jobs.size(), 0),
        buffers_(jobs.size(), std::vector<BufferDescriptor>(1 + 3 * inv.projection.size())) {
    for (const auto& p : inv.result_pages) {
      if (p.region != Region::kNvm) fail(Errc::kInvalidConfig, "materialization pages must be NVM");
    }
  }

  void append(std::uint32_t pe, std::uint32_t column, BufferKind kind, std::span<const std::uint8_t> bytes) override {
    auto& buf = buffers_[pe][buffer_slot(column, kind)];
    std::size_t done = 0;
    while (done < bytes.size()) {
      std::size_t used = buf.pages.empty() ? kPageSize : buf.size - (buf.pages.size() - 1) * kPageSize;
      if (used == kPageSize) {
        buf.pages.push_back(take_page(pe));
        used = 0;
      }
      const std::size_t n = std::min(bytes.size() - done, kPageSize - used);
      device_.write(Region::kNvm, buf.pages.back().offset() + used, bytes.subspan(done, n), Requester::pe_of(pe));
      buf.size += n;
      done += n;
    }
  }

  std::vector<Fragment> fragments(const std::vector<std::uint64_t>& rows) const {
    std::vector<Fragment> out;
    for (std::uint32_t pe = 0; pe < jobs_.size(); ++pe) {
      Fragment f;
      f.pe = pe;
      f.row_count = rows[pe];
      f.row_ids = buffers_[pe][0];
      for (std::size_t c = 0; c < inv_.projection.size(); ++c) {
        f.columns.push_back({buffers_[pe][1 + 3 * c], buffers_[pe][2 + 3 * c], buffers_[pe][3 + 3 * c]});
      }
      out.push_back(std::move(f));
    }
    return out;
  }

  // Pages assigned to PEs but never written.
  std::vector<PhysPage> unused_pages() const {
    std::vector<PhysPage> out;
    for (std::size_t pe = 0; pe < jobs_.size(); ++pe) {
      const auto& pages = jobs_[pe].result_pages;
      out.insert(out.end(), pages.begin() + static_cast<std::ptrdiff_t>(cursor_[pe]), pages.end());
    }
    return out;
  }

 private:
  PhysPage take_page(std::uint32_t pe) {
    if (cursor_[pe] == jobs_[pe].result_pages.size()) suspend_for_space(pe);
    return jobs_[pe].result_pages[cursor_[pe]++];
  }

  // All PE jobs pause while the host grants more pages (one round-trip).
  void suspend_for_space(std::uint32_t pe) {
    for (auto& j : jobs_) {
      if (j.status == JobStatus::kRunning) j.status = JobStatus::kSuspended;
    }
    ++stats_.suspensions;
    device_.charge_host_roundtrip();
    const std::size_t request = std::max<std::size_t>(jobs_.size(), inv_.result_pages.size() / 2);
    std::optional<std::vector<PhysPage>> granted;
    if (grantor_) granted = grantor_(inv_.id, request);
    if (!granted || granted->empty()) fail(Errc::kHostDenied, "host denied result space for invocation " + std::to_string(inv_.id));
    for (std::size_t i = 0; i < granted->size(); ++i) {
      jobs_[(pe + i) % jobs_.size()].result_pages.push_back((*granted)[i]);
    }
    for (auto& j : jobs_) {
      if (j.status == JobStatus::kSuspended) j.status = JobStatus::kRunning;
    }
  }

  Device& device_;
  const NdtInvocation& inv_;
  const SpaceGrantor& grantor_;
  std::vector<PeJobState>& jobs_;
  ExecutionStats& stats_;
  std::vector<std::size_t> cursor_;
  std::vector<std::vector<BufferDescriptor>> buffers_;
};

class NdtEngine::StreamSink : public NdtEngine::Sink {
 public:
  struct ChunkRef {
    std::uint32_t pe;
    std::uint32_t column;
    BufferKind kind;
    std::size_t offset;
    std::size_t length;
  };
  struct Buffer {
    std::vector<PhysPage> pages;
    std::size_t used = 0;
    std::vector<ChunkRef> chunks;
  };

  StreamSink(Device& device, const StreamConfig& cfg, OwnerId owner) : device_(device), cfg_(cfg) {
    if (cfg.buffer_count < 1 || cfg.buffer_bytes < 1) fail(Errc::kInvalidConfig, "stream buffers");
    const std::size_t pages_per_buffer = ceil_div(cfg.buffer_bytes, kPageSize);
    for (std::size_t i = 0; i < cfg.buffer_count; ++i) {
      Buffer b;
      b.pages = device_.allocate_pages(Region::kDdr, pages_per_buffer, owner);
      buffers_.push_back(std::move(b));
      free_.push_back(i);
    }
  }

  void append(std::uint32_t pe, std::uint32_t column, BufferKind kind, std::span<const std::uint8_t> bytes) override {
    std::size_t done = 0;
    while (done < bytes.size()) {
      if (!current_) current_ = acquire();
      auto& b = buffers_[*current_];
      if (b.used == cfg_.buffer_bytes) {
        publish();
        continue;
      }
      const std::size_t n = std::min(bytes.size() - done, cfg_.buffer_bytes - b.used);
      if (n < bytes.size() - done && b.used > 0) {
        // Keep chunks whole where a fresh buffer can hold them.
        if (bytes.size() - done <= cfg_.buffer_bytes) {
          publish();
          continue;
        }
      }
      write_into(b, bytes.subspan(done, n), pe);
      b.chunks.push_back({pe, column, kind, b.used, n});
      b.used += n;
      done += n;
    }
  }

  void finish() override {
    if (current_ && buffers_[*current_].used > 0) {
      publish();
    } else if (current_) {
      std::lock_guard lock(mu_);
      free_.push_back(*current_);
      current_.reset();
    }
    std::lock_guard lock(mu_);
    closed_ = true;
    cv_.notify_all();
  }

  void abort() {
    std::lock_guard lock(mu_);
    aborted_ = true;
    cv_.notify_all();
  }

  std::optional<std::size_t> take_full() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !full_.empty() || closed_ || aborted_; });
    if (full_.empty()) return std::nullopt;
    auto idx = full_.front();
    full_.pop_front();
    return idx;
  }

  StreamBatch pull(std::size_t idx, std::uint64_t sequence) {
    auto& b = buffers_[idx];
    StreamBatch batch;
    batch.sequence = sequence;
    std::vector<std::uint8_t> payload(b.used);
    std::size_t done = 0;
    for (const auto& page : b.pages) {
      if (done == b.used) break;
      const std::size_t n = std::min(kPageSize, b.used - done);
      device_.read(Region::kDdr, page.offset(), std::span(payload).subspan(done, n), Requester::host());
      done += n;
    }
    for (const auto& c : b.chunks) {
      batch.chunks.push_back({c.pe, c.column, c.kind,
                              {payload.begin() + static_cast<std::ptrdiff_t>(c.offset),
                               payload.begin() + static_cast<std::ptrdiff_t>(c.offset + c.length)}});
    }
    batch.payload_bytes = b.used;
    return batch;
  }

  void release(std::size_t idx) {
    std::lock_guard lock(mu_);
    buffers_[idx].used = 0;
    buffers_[idx].chunks.clear();
    free_.push_back(idx);
    cv_.notify_all();
  }

  std::uint64_t published() const { return published_; }

  std::vector<PhysPage> pages() const {
    std::vector<PhysPage> out;
    for (const auto& b : buffers_) out.insert(out.end(), b.pages.begin(), b.pages.end());
    return out;
  }

 private:
  std::size_t acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !free_.empty() || aborted_; });
    if (aborted_) fail(Errc::kIoError, "stream consumer stopped");
    auto idx = free_.front();
    free_.pop_front();
    return idx;
  }

  void publish() {
    std::lock_guard lock(mu_);
    full_.push_back(*current_);
    current_.reset();
    ++published_;
    cv_.notify_all();
  }

  void write_into(Buffer& b, std::span<const std::uint8_t> bytes, std::uint32_t pe) {
    std::size_t done = 0;
    while (done < bytes.size()) {
      const std::size_t pos = b.used + done;
      const std::size_t n = std::min(bytes.size() - done, kPageSize - pos % kPageSize);
      device_.write(Region::kDdr, b.pages[pos / kPageSize].offset() + pos % kPageSize, bytes.subspan(done, n),
                    Requester::pe_of(pe));
      done += n;
    }
  }

  Device& device_;
  StreamConfig cfg_;
  std::vector<Buffer> buffers_;
  std::optional<std::size_t> current_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::size_t> free_;
  std::deque<std::size_t> full_;
  bool closed_ = false;
  bool aborted_ = false;
  std::uint64_t published_ = 0;
};

// ---------------------------------------------------------------------------

NdtEngine::NdtEngine(Device& device, InSituStore& store) : device_(device), store_(store) {}

std::vector<PeJobState> NdtEngine::schedule(const NdtInvocation& inv) const {
  return ndt::schedule(inv, store_.vid_entry_count(), device_.config());
}

std::optional<VisibleVersion> NdtEngine::locate_visible(std::uint32_t pe, std::uint64_t vid_entry,
                                                        const SnapshotDescriptor& snap) {
  const auto who = Requester::pe_of(pe);
  std::uint8_t entry[kRecordIdBytes];
  device_.read(Region::kDdr, store_.vid_entry_offset(vid_entry), entry, who);
  RecordId rid = load_record_id(entry);

  std::optional<TxId> newer_ts;  // creation ts of the already visited successor
  while (rid.valid()) {
    std::uint8_t l2p[4];
    device_.read(Region::kDdr, store_.l2p_entry_offset(rid.page_lid), l2p, who);
    const auto raw = load_le<std::uint32_t>(l2p);
    if (raw == InSituStore::kL2PUnmapped) {
      fail(Errc::kDanglingReference, "page_lid " + std::to_string(rid.page_lid) + " unmapped");
    }
    const PhysPage page = InSituStore::decode_l2p(raw);

    std::uint8_t slot_bytes[kSlotEntryBytes];
    device_.read(page.region, page.offset() + slot_entry_offset(rid.slot), slot_bytes, who);
    const SlotEntry slot = parse_slot_entry(slot_bytes);
    if (slot.length < kHeaderFixedBytes || std::size_t{slot.offset} + slot.length > kPageSize) {
      fail(Errc::kDanglingReference, "slot " + std::to_string(rid.slot) + " of page " + std::to_string(rid.page_lid));
    }

    std::uint8_t header[kHeaderFixedBytes];
    device_.probe_header(page.region, page.offset() + slot.offset, header, pe);
    const HeaderPrefix h = decode_header_prefix(header);

    // Visible iff created before the snapshot and not invalidated by a
    // successor that is itself visible.
    if (snap.sees(h.create_ts) && !(newer_ts && snap.sees(*newer_ts))) {
      return VisibleVersion{rid, page, slot, h};
    }
    newer_ts = h.create_ts;
    rid = h.pred;
  }
  return std::nullopt;
}

std::optional<RecordId> NdtEngine::pe_visibility_check(std::uint32_t pe, std::uint64_t vid_entry,
                                                       const SnapshotDescriptor& snap) {
  auto v = locate_visible(pe, vid_entry, snap);
  if (!v || v->header.tombstone) return std::nullopt;
  return v->rid;
}

void NdtEngine::flush_partition(PeRuntime& rt, Sink& sink, std::size_t idx) {
  auto& p = rt.parts[idx];
  const std::size_t n = p.spec.kind == BufferKind::kValidity ? ceil_div(p.bits, 8) : p.fill;
  if (n == 0) return;
  sink.append(rt.pe, static_cast<std::uint32_t>(p.spec.column), p.spec.kind, std::span(p.buf).first(n));
  if (p.spec.kind == BufferKind::kValidity) std::fill(p.buf.begin(), p.buf.begin() + static_cast<std::ptrdiff_t>(n), 0);
  p.fill = 0;
  p.bits = 0;
  ++p.flushes;
}

void NdtEngine::flush_row_ids(PeRuntime& rt, Sink& sink) {
  if (rt.row_id_fill == 0) return;
  sink.append(rt.pe, 0, BufferKind::kRowIds, std::span(rt.row_ids).first(rt.row_id_fill));
  rt.row_id_fill = 0;
}

void NdtEngine::transform_record(PeRuntime& rt, Sink& sink, std::span<const std::uint8_t> record,
                                 const Schema& schema, std::span<const std::size_t> projection) {
  const auto loc = locate_fields(schema, record);

  auto append_u32 = [&](std::size_t idx, std::uint32_t v) {
    auto& p = rt.parts[idx];
    if (p.fill + 4 > p.buf.size()) flush_partition(rt, sink, idx);
    store_le<std::uint32_t>(rt.parts[idx].buf.data() + rt.parts[idx].fill, v);
    rt.parts[idx].fill += 4;
  };

  for (std::size_t k = 0; k < projection.size(); ++k) {
    const auto& a = schema.attribute(projection[k]);
    const auto& at = loc[projection[k]];
    const bool valid = at.has_value();

    if (rt.validity_part[k] >= 0) {
      const auto idx = static_cast<std::size_t>(rt.validity_part[k]);
      if (rt.parts[idx].bits == rt.parts[idx].buf.size() * 8) flush_partition(rt, sink, idx);
      auto& p = rt.parts[idx];
      if (valid) p.buf[p.bits / 8] |= static_cast<std::uint8_t>(1u << (p.bits % 8));
      ++p.bits;
    }

    const auto vidx = static_cast<std::size_t>(rt.values_part[k]);
    if (a.type.is_varlen()) {
      // Format parser path: length-prefixed payload.
      const std::size_t len = valid ? load_le<std::uint16_t>(record.data() + *at) : 0;
      if (len > 0) {
        if (rt.parts[vidx].fill + len > rt.parts[vidx].buf.size()) flush_partition(rt, sink, vidx);
        auto& p = rt.parts[vidx];
        std::memcpy(p.buf.data() + p.fill, record.data() + *at + 2, len);
        p.fill += len;
      }
      const auto oidx = static_cast<std::size_t>(rt.offsets_part[k]);
      if (rt.rows == 0) append_u32(oidx, 0);
      rt.varlen_end[k] += static_cast<std::uint32_t>(len);
      append_u32(oidx, rt.varlen_end[k]);
      continue;
    }

    const std::size_t w = result_type(a.type).width();
    if (rt.parts[vidx].fill + w > rt.parts[vidx].buf.size()) flush_partition(rt, sink, vidx);
    auto& p = rt.parts[vidx];
    auto* dst = p.buf.data() + p.fill;
    if (!valid) {
      std::memset(dst, 0, w);
    } else if (a.type.kind == TypeKind::kTimestampPg) {
      // Format parser path: PostgreSQL timestamp to UNIX epoch seconds.
      store_le<std::int64_t>(dst, pg_timestamp_to_unix_epoch(load_le<std::int64_t>(record.data() + *at)));
    } else {
      // Layout accessor path: aligned little-endian copy.
      std::memcpy(dst, record.data() + *at, w);
    }
    p.fill += w;
  }
}

ExecutionStats NdtEngine::execute(const NdtInvocation& inv, Sink& sink, const RowFilter& filter,
                                  std::vector<PeJobState>& jobs, std::vector<std::vector<Vid>>* vids) {
  ExecutionStats stats;
  stats.layout = plan_scratchpad(inv.table, inv.projection, device_.config().scratchpad_bytes);
  const auto before = device_.ledger();

  std::vector<PeRuntime> pes;
  pes.reserve(jobs.size());
  for (const auto& j : jobs) pes.emplace_back(j.pe, stats.layout, inv.projection.size());
  if (vids) vids->assign(jobs.size(), {});

  std::size_t rounds = 0;
  for (const auto& j : jobs) rounds = std::max(rounds, j.vid_entries.size());

  for (std::size_t r = 0; r < rounds; ++r) {
    for (auto& job : jobs) {
      if (r >= job.vid_entries.size()) continue;
      auto& rt = pes[job.pe];
      const auto visible = locate_visible(job.pe, job.vid_entries[r], inv.snapshot);
      ++stats.vid_entries_scanned;
      const bool emit = filter ? filter(job.pe, visible) : (visible && !visible->header.tombstone);
      if (!emit) continue;

      auto load = std::span(rt.record_load).first(visible->slot.length);
      device_.read(visible->page.region, visible->page.offset() + visible->slot.offset, load,
                   Requester::pe_of(job.pe));
      device_.charge_pe_record(job.pe);
      transform_record(rt, sink, load, inv.table, inv.projection);

      if (rt.row_id_fill == rt.row_ids.size()) flush_row_ids(rt, sink);
      store_le<std::uint64_t>(rt.row_ids.data() + rt.row_id_fill, visible->header.vid);
      rt.row_id_fill += 8;
      ++rt.rows;
      ++job.rows_emitted;
      if (vids) (*vids)[job.pe].push_back(visible->header.vid);
    }
  }

  for (auto& job : jobs) {
    auto& rt = pes[job.pe];
    for (std::size_t i = 0; i < rt.parts.size(); ++i) flush_partition(rt, sink, i);
    flush_row_ids(rt, sink);
    job.status = JobStatus::kDone;
  }
  sink.finish();

  for (const auto& rt : pes) {
    stats.rows_per_pe.push_back(rt.rows);
    std::vector<std::uint64_t> f;
    for (const auto& p : rt.parts) f.push_back(p.flushes);
    stats.flushes.push_back(std::move(f));
  }
  stats.ledger = device_.ledger().since(before);
  return stats;
}

MaterializeRun NdtEngine::run_materialize(const NdtInvocation& inv, const SpaceGrantor& grantor,
                                          const RowFilter& filter) {
  const OwnerId owner = invocation_owner(inv.id);
  try {
    auto jobs = schedule(inv);
    MaterializeRun run;
    ExecutionStats sink_stats;
    MaterializeSink sink(device_, inv, grantor, jobs, sink_stats);
    run.stats = execute(inv, sink, filter, jobs, &run.vids);
    run.stats.suspensions = sink_stats.suspensions;
    run.fragments = sink.fragments(run.stats.rows_per_pe);
    for (const auto& f : run.fragments) run.stats.result_bytes += f.bytes();
    const auto unused = sink.unused_pages();
    device_.free_pages(unused);
    return run;
  } catch (...) {
    device_.free_owner(owner);
    throw;
  }
}

void NdtEngine::return_descriptors(const MaterializationHandle& handle, std::span<const Fragment> fragments,
                                   OwnerId owner) {
  for (const auto& f : fragments) {
    device_.expose_to_host(f.row_ids.pages);
    for (const auto& c : f.columns) {
      device_.expose_to_host(c.values.pages);
      device_.expose_to_host(c.validity.pages);
      device_.expose_to_host(c.offsets.pages);
    }
  }
  device_.expose_to_host(handle.visibility_pages.pages);

  const auto bytes = encode_descriptors(handle, fragments);
  const auto pages = device_.allocate_pages(Region::kDdr, ceil_div(bytes.size(), kPageSize), owner);
  std::vector<std::uint8_t> readback(bytes.size());
  for (std::size_t i = 0; i < pages.size(); ++i) {
    const std::size_t off = i * kPageSize;
    const std::size_t n = std::min(kPageSize, bytes.size() - off);
    device_.write(Region::kDdr, pages[i].offset(), std::span(bytes).subspan(off, n), Requester::firmware());
    device_.read(Region::kDdr, pages[i].offset(), std::span(readback).subspan(off, n), Requester::host());
  }
  device_.free_pages(pages);
}

void NdtEngine::store_visibility_words(MaterializationHandle& h, std::uint64_t first, std::uint64_t last,
                                       OwnerId owner) {
  if (h.visibility.empty() || first > last) return;
  auto& buf = h.visibility_pages;
  const std::uint64_t need = h.visibility.size() * 8;
  if (need > buf.pages.size() * kPageSize) {
    auto more = device_.allocate_pages(Region::kNvm, ceil_div(need, kPageSize) - buf.pages.size(), owner);
    device_.expose_to_host(more);
    buf.pages.insert(buf.pages.end(), more.begin(), more.end());
  }
  buf.size = need;
  std::vector<std::uint8_t> bytes((last - first + 1) * 8);
  for (std::uint64_t w = first; w <= last; ++w) store_le<std::uint64_t>(bytes.data() + (w - first) * 8, h.visibility[w]);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const std::uint64_t pos = first * 8 + done;
    const std::size_t n = std::min<std::size_t>(bytes.size() - done, kPageSize - pos % kPageSize);
    device_.write(Region::kNvm, buf.pages[pos / kPageSize].offset() + pos % kPageSize,
                  std::span(bytes).subspan(done, n), Requester::firmware());
    done += n;
  }
}

MaterializationHandle NdtEngine::materialize_results(const NdtInvocation& inv, const SpaceGrantor& grantor) {
  if (inv.mode != ResultMode::kMaterialize) fail(Errc::kInvalidConfig, "invocation is not in materialize mode");
  auto run = run_materialize(inv, grantor, nullptr);
  const OwnerId owner = invocation_owner(inv.id);

  MaterializationHandle h{inv.id, inv.table, inv.projection, inv.snapshot, {}, 0, {}, {}, {}, {}, false};
  h.fragments = std::move(run.fragments);
  h.owners.push_back(owner);
  for (const auto& pe_vids : run.vids) {
    for (Vid v : pe_vids) h.vid_position.emplace(v, h.row_count++);
  }
  h.visibility = all_visible_bitmap(h.row_count);
  try {
    if (!h.visibility.empty()) store_visibility_words(h, 0, h.visibility.size() - 1, owner);
    return_descriptors(h, h.fragments, owner);
  } catch (...) {
    device_.free_owner(owner);
    throw;
  }
  return h;
}

ExecutionStats NdtEngine::stream_results(const NdtInvocation& inv, const BatchConsumer& consumer,
                                         const StreamConfig& stream) {
  if (inv.mode != ResultMode::kStreaming) fail(Errc::kInvalidConfig, "invocation is not in streaming mode");
  const OwnerId owner = invocation_owner(inv.id);
  auto jobs = schedule(inv);
  StreamSink sink(device_, stream, owner);

  ExecutionStats stats;
  std::exception_ptr producer_error;
  std::thread producer([&] {
    try {
      stats = execute(inv, sink, nullptr, jobs, nullptr);
    } catch (...) {
      producer_error = std::current_exception();
      sink.abort();
    }
  });

  std::exception_ptr consumer_error;
  std::uint64_t sequence = 0;
  std::uint64_t payload = 0;
  try {
    while (auto idx = sink.take_full()) {
      auto batch = sink.pull(*idx, sequence++);
      payload += batch.payload_bytes;
      if (consumer) consumer(batch);
      sink.release(*idx);
    }
  } catch (...) {
    consumer_error = std::current_exception();
    sink.abort();
  }
  producer.join();
  const auto pages = sink.pages();
  device_.free_pages(pages);
  device_.free_owner(owner);  // pre-allocated result pages are not used when streaming
  if (consumer_error) std::rethrow_exception(consumer_error);
  if (producer_error) std::rethrow_exception(producer_error);

  stats.batches = sink.published();
  stats.result_bytes = payload;
  return stats;
}

// ---------------------------------------------------------------------------

StreamAssembler::StreamAssembler(const Schema& schema, std::vector<std::size_t> projection, std::uint32_t pe_count)
    : attributes_(result_attributes(schema, projection)), columns_(projection.size()),
      buffers_(pe_count, std::vector<std::vector<std::uint8_t>>(1 + 3 * projection.size())) {}

void StreamAssembler::consume(const StreamBatch& batch) {
  for (const auto& c : batch.chunks) {
    if (c.pe >= buffers_.size() || (c.kind != BufferKind::kRowIds && c.column >= columns_)) {
      fail(Errc::kCorruptDescriptor, "stream chunk addresses unknown fragment");
    }
    auto& dst = buffers_[c.pe][buffer_slot(c.column, c.kind)];
    dst.insert(dst.end(), c.bytes.begin(), c.bytes.end());
    payload_bytes_ += c.bytes.size();
  }
}

ColumnSet StreamAssembler::finish() const {
  ColumnSetBuilder builder(attributes_);
  for (const auto& pe : buffers_) {
    const std::uint64_t rows = pe[0].size() / 8;
    std::vector<ColumnSetBuilder::FragmentColumn> cols;
    cols.push_back({pe[0], {}, {}});
    for (std::size_t c = 0; c < columns_; ++c) cols.push_back({pe[1 + 3 * c], pe[2 + 3 * c], pe[3 + 3 * c]});
    builder.append_fragment(rows, cols);
  }
  return std::move(builder).finish();
}

std::vector<std::uint8_t> read_buffer(Device& device, const BufferDescriptor& buffer, Requester who) {
  std::vector<std::uint8_t> out(buffer.size);
  std::size_t done = 0;
  for (const auto& page : buffer.pages) {
    if (done == out.size()) break;
    const std::size_t n = std::min<std::size_t>(kPageSize, out.size() - done);
    device.read(page.region, page.offset(), std::span(out).subspan(done, n), who);
    done += n;
  }
  if (done != out.size()) fail(Errc::kCorruptDescriptor, "buffer larger than its pages");
  return out;
}

ColumnSet read_materialized(Device& device, const MaterializationHandle& handle, Requester who) {
  if (handle.freed) fail(Errc::kStaleHandle, "materialization " + std::to_string(handle.id) + " was freed");
  ColumnSetBuilder builder(result_attributes(handle.table, handle.projection));
  for (const auto& f : handle.fragments) {
    std::vector<std::vector<std::uint8_t>> storage;
    storage.reserve(1 + 3 * f.columns.size());
    storage.push_back(read_buffer(device, f.row_ids, who));
    for (const auto& c : f.columns) {
      storage.push_back(read_buffer(device, c.values, who));
      storage.push_back(read_buffer(device, c.validity, who));
      storage.push_back(read_buffer(device, c.offsets, who));
    }
    std::vector<ColumnSetBuilder::FragmentColumn> cols;
    cols.push_back({storage[0], {}, {}});
    for (std::size_t c = 0; c < f.columns.size(); ++c) {
      cols.push_back({storage[1 + 3 * c], storage[2 + 3 * c], storage[3 + 3 * c]});
    }
    builder.append_fragment(f.row_count, cols);
  }
  auto set = std::move(builder).finish();
  if (set.row_count != handle.row_count) fail(Errc::kCorruptDescriptor, "fragment rows disagree with handle");
  const auto bitmap = read_buffer(device, handle.visibility_pages, who);
  set.visibility.resize(ceil_div(set.row_count, 64));
  if (bitmap.size() != set.visibility.size() * 8) fail(Errc::kCorruptDescriptor, "visibility bitmap length");
  for (std::size_t w = 0; w < set.visibility.size(); ++w) set.visibility[w] = load_le<std::uint64_t>(bitmap.data() + 8 * w);
  return set;
}

}  // namespace ndt

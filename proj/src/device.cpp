#include "ndt/device.hpp"

#include <algorithm>
#include <cstring>
#include <iomanip>

namespace ndt {

const char* region_name(Region r) {
  switch (r) {
    case Region::kNvm: return "NVM";
    case Region::kDdr: return "DDR";
    case Region::kHost: return "HOST";
  }
  return "?";
}

void validate(const DeviceConfig& cfg) {
  if (cfg.pe_count < 1 || cfg.pe_count > kMaxPes) fail(Errc::kInvalidConfig, "pe_count must be in [1,8]");
  if (cfg.scratchpad_bytes == 0) fail(Errc::kInvalidConfig, "scratchpad_bytes must be > 0");
  for (double bw : {cfg.internal_read_gib_s, cfg.internal_write_gib_s, cfg.host_read_gib_s, cfg.host_write_gib_s}) {
    if (!(bw > 0)) fail(Errc::kInvalidConfig, "bandwidths must be > 0");
  }
  if (!(cfg.pe_clock_hz > 0)) fail(Errc::kInvalidConfig, "pe_clock_hz must be > 0");
  if (cfg.nvm_read_latency_ns < 0 || cfg.nvm_write_latency_ns < 0 || cfg.host_roundtrip_ns < 0 ||
      cfg.pe_record_cost_ns < 0) {
    fail(Errc::kInvalidConfig, "latencies must be >= 0");
  }
  if (cfg.nvm_pages == 0 || cfg.ddr_pages == 0) fail(Errc::kInvalidConfig, "regions need capacity");
}

std::uint64_t TransferLedger::pe_records_total() const {
  std::uint64_t s = 0;
  for (auto v : pe_records) s += v;
  return s;
}

TransferLedger TransferLedger::since(const TransferLedger& e) const {
  TransferLedger d;
  d.internal_read_bytes = internal_read_bytes - e.internal_read_bytes;
  d.internal_write_bytes = internal_write_bytes - e.internal_write_bytes;
  d.device_to_host_bytes = device_to_host_bytes - e.device_to_host_bytes;
  d.host_to_device_bytes = host_to_device_bytes - e.host_to_device_bytes;
  d.internal_read_ops = internal_read_ops - e.internal_read_ops;
  d.internal_write_ops = internal_write_ops - e.internal_write_ops;
  d.device_to_host_ops = device_to_host_ops - e.device_to_host_ops;
  d.host_to_device_ops = host_to_device_ops - e.host_to_device_ops;
  d.nvm_read_accesses = nvm_read_accesses - e.nvm_read_accesses;
  d.nvm_write_accesses = nvm_write_accesses - e.nvm_write_accesses;
  d.header_probes = header_probes - e.header_probes;
  d.host_roundtrips = host_roundtrips - e.host_roundtrips;
  for (std::size_t i = 0; i < kMaxPes; ++i) {
    d.pe_records[i] = pe_records[i] - e.pe_records[i];
    d.pe_ops[i] = pe_ops[i] - e.pe_ops[i];
  }
  return d;
}

namespace {

constexpr double kGiB = 1024.0 * 1024.0 * 1024.0;

double transfer_ns(std::uint64_t bytes, double gib_s) { return static_cast<double>(bytes) / (gib_s * kGiB) * 1e9; }

}  // namespace

ModeledTime modeled_time(const TransferLedger& l, const DeviceConfig& cfg) {
  ModeledTime t;
  t.internal_read_ns = transfer_ns(l.internal_read_bytes, cfg.internal_read_gib_s);
  t.internal_write_ns = transfer_ns(l.internal_write_bytes, cfg.internal_write_gib_s);
  t.device_to_host_ns = transfer_ns(l.device_to_host_bytes, cfg.host_read_gib_s);
  t.host_to_device_ns = transfer_ns(l.host_to_device_bytes, cfg.host_write_gib_s);
  t.nvm_latency_ns = static_cast<double>(l.nvm_read_accesses) * cfg.nvm_read_latency_ns +
                     static_cast<double>(l.nvm_write_accesses) * cfg.nvm_write_latency_ns;
  t.roundtrip_ns = static_cast<double>(l.host_roundtrips) * cfg.host_roundtrip_ns;
  t.pe_compute_ns = static_cast<double>(l.pe_records_total()) * cfg.pe_record_cost_ns;
  return t;
}

void write_ledger_csv(std::ostream& os, const TransferLedger& l, const DeviceConfig& cfg) {
  const auto t = modeled_time(l, cfg);
  const auto flags = os.flags();
  const auto precision = os.precision();
  os << std::fixed << std::setprecision(1);
  os << "category,bytes,ops,modeled_ns\n";
  os << "internal_read," << l.internal_read_bytes << ',' << l.internal_read_ops << ',' << t.internal_read_ns << '\n';
  os << "internal_write," << l.internal_write_bytes << ',' << l.internal_write_ops << ',' << t.internal_write_ns
     << '\n';
  os << "device_to_host," << l.device_to_host_bytes << ',' << l.device_to_host_ops << ',' << t.device_to_host_ns
     << '\n';
  os << "host_to_device," << l.host_to_device_bytes << ',' << l.host_to_device_ops << ',' << t.host_to_device_ns
     << '\n';
  os << "nvm_latency,0," << (l.nvm_read_accesses + l.nvm_write_accesses) << ',' << t.nvm_latency_ns << '\n';
  os << "host_roundtrip,0," << l.host_roundtrips << ',' << t.roundtrip_ns << '\n';
  os << "pe_compute,0," << l.pe_records_total() << ',' << t.pe_compute_ns << '\n';
  os << "total," << (l.internal_bytes() + l.device_to_host_bytes + l.host_to_device_bytes) << ",,"
     << t.total_ns() << '\n';
  os.flags(flags);
  os.precision(precision);
}

Device::Device(const DeviceConfig& cfg) : cfg_(cfg) {
  validate(cfg_);
  nvm_.capacity = cfg_.nvm_pages;
  ddr_.capacity = cfg_.ddr_pages;
}

void Device::reconfigure(const DeviceConfig& cfg) {
  validate(cfg);
  std::lock_guard lock(mu_);
  if (cfg.nvm_pages < nvm_.high_water || cfg.ddr_pages < ddr_.high_water) {
    fail(Errc::kInvalidConfig, "cannot shrink regions below allocated pages");
  }
  cfg_ = cfg;
  nvm_.capacity = cfg.nvm_pages;
  ddr_.capacity = cfg.ddr_pages;
  ledger_ = {};
}

Device::Arena& Device::arena(Region r) {
  if (r == Region::kNvm) return nvm_;
  if (r == Region::kDdr) return ddr_;
  fail(Errc::kOutOfRange, "host region is not device memory");
}

const Device::Arena& Device::arena(Region r) const {
  if (r == Region::kNvm) return nvm_;
  if (r == Region::kDdr) return ddr_;
  fail(Errc::kOutOfRange, "host region is not device memory");
}

void Device::check_range(Region region, std::uint64_t offset, std::size_t len, Requester who) const {
  const auto& a = arena(region);
  if (len == 0) return;
  const std::uint64_t end = offset + len;
  if (end < offset || end > std::uint64_t{a.high_water} * kPageSize) {
    fail(Errc::kOutOfRange, std::string(region_name(region)) + " access beyond allocated pages");
  }
  for (std::uint64_t p = offset / kPageSize; p <= (end - 1) / kPageSize; ++p) {
    if (a.owner[p] == kFreeOwner) fail(Errc::kOutOfRange, "access to unallocated page");
    if (who.is_host() && region == Region::kNvm && !host_visible_nvm_.contains(static_cast<std::uint32_t>(p))) {
      fail(Errc::kAccessDenied, "host read of unexposed NVM page " + std::to_string(p));
    }
  }
}

void Device::charge_read(Region region, std::size_t len, Requester who) {
  if (who.is_host()) {
    ledger_.device_to_host_bytes += len;
    ++ledger_.device_to_host_ops;
  } else {
    ledger_.internal_read_bytes += len;
    ++ledger_.internal_read_ops;
    if (who.kind == Requester::Kind::kPe) ++ledger_.pe_ops[who.pe];
  }
  if (region == Region::kNvm) ++ledger_.nvm_read_accesses;
}

void Device::charge_write(Region region, std::size_t len, Requester who) {
  if (who.is_host()) {
    ledger_.host_to_device_bytes += len;
    ++ledger_.host_to_device_ops;
  } else {
    ledger_.internal_write_bytes += len;
    ++ledger_.internal_write_ops;
    if (who.kind == Requester::Kind::kPe) ++ledger_.pe_ops[who.pe];
  }
  if (region == Region::kNvm) ++ledger_.nvm_write_accesses;
}

void Device::read(Region region, std::uint64_t offset, std::span<std::uint8_t> dst, Requester who) {
  std::lock_guard lock(mu_);
  check_range(region, offset, dst.size(), who);
  auto& a = arena(region);
  std::size_t done = 0;
  while (done < dst.size()) {
    const std::uint64_t pos = offset + done;
    const std::size_t in_page = pos % kPageSize;
    const std::size_t n = std::min(dst.size() - done, kPageSize - in_page);
    std::memcpy(dst.data() + done, a.pages[pos / kPageSize]->data() + in_page, n);
    done += n;
  }
  charge_read(region, dst.size(), who);
}

std::vector<std::uint8_t> Device::read(Region region, std::uint64_t offset, std::size_t len, Requester who) {
  std::vector<std::uint8_t> out(len);
  read(region, offset, out, who);
  return out;
}

void Device::write(Region region, std::uint64_t offset, std::span<const std::uint8_t> src, Requester who) {
  std::lock_guard lock(mu_);
  if (who.is_host() && region == Region::kNvm) {
    // Host writes land in device memory through the device, never into
    // exposed result pages directly.
    for (std::uint64_t p = offset / kPageSize; src.size() && p <= (offset + src.size() - 1) / kPageSize; ++p) {
      if (host_visible_nvm_.contains(static_cast<std::uint32_t>(p))) {
        fail(Errc::kAccessDenied, "host write into exposed result page");
      }
    }
    check_range(region, offset, src.size(), Requester::firmware());
  } else {
    check_range(region, offset, src.size(), who.is_host() ? Requester::firmware() : who);
  }
  auto& a = arena(region);
  std::size_t done = 0;
  while (done < src.size()) {
    const std::uint64_t pos = offset + done;
    const std::size_t in_page = pos % kPageSize;
    const std::size_t n = std::min(src.size() - done, kPageSize - in_page);
    std::memcpy(a.pages[pos / kPageSize]->data() + in_page, src.data() + done, n);
    done += n;
  }
  charge_write(region, src.size(), who);
}

void Device::probe_header(Region region, std::uint64_t offset, std::span<std::uint8_t> dst, std::uint32_t pe) {
  std::lock_guard lock(mu_);
  check_range(region, offset, dst.size(), Requester::pe_of(pe));
  auto& a = arena(region);
  const std::size_t in_page = offset % kPageSize;
  if (in_page + dst.size() > kPageSize) fail(Errc::kOutOfRange, "header probe crosses page");
  std::memcpy(dst.data(), a.pages[offset / kPageSize]->data() + in_page, dst.size());
  ledger_.internal_read_bytes += kHeaderProbeBytes;
  ++ledger_.internal_read_ops;
  ++ledger_.header_probes;
  ++ledger_.pe_ops[pe];
  if (region == Region::kNvm) ++ledger_.nvm_read_accesses;
}

std::vector<PhysPage> Device::allocate_pages(Region region, std::size_t count, OwnerId owner) {
  if (owner == kFreeOwner) fail(Errc::kInvalidConfig, "owner id 0 is reserved");
  std::lock_guard lock(mu_);
  auto& a = arena(region);
  const std::size_t available = a.free_list.size() + (a.capacity - a.high_water);
  if (count > available) {
    fail(Errc::kOutOfSpace, std::to_string(count) + " pages requested, " + std::to_string(available) + " free in " +
                                region_name(region));
  }
  std::vector<PhysPage> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t idx = 0;
    if (!a.free_list.empty()) {
      idx = *a.free_list.begin();
      a.free_list.erase(a.free_list.begin());
    } else {
      idx = a.high_water++;
      a.pages.emplace_back();
      a.owner.push_back(kFreeOwner);
    }
    if (!a.pages[idx]) a.pages[idx] = std::make_unique<std::array<std::uint8_t, kPageSize>>();
    a.pages[idx]->fill(0);
    a.owner[idx] = owner;
    out.push_back({region, idx});
  }
  return out;
}

void Device::free_pages(std::span<const PhysPage> pages) {
  std::lock_guard lock(mu_);
  for (const auto& p : pages) {
    auto& a = arena(p.region);
    if (p.index >= a.high_water || a.owner[p.index] == kFreeOwner) {
      fail(Errc::kOutOfRange, "double free of page " + std::to_string(p.index));
    }
    a.owner[p.index] = kFreeOwner;
    a.free_list.insert(p.index);
    if (p.region == Region::kNvm) host_visible_nvm_.erase(p.index);
  }
}

void Device::free_owner(OwnerId owner) {
  std::lock_guard lock(mu_);
  for (Arena* a : {&nvm_, &ddr_}) {
    for (std::uint32_t i = 0; i < a->high_water; ++i) {
      if (a->owner[i] == owner) {
        a->owner[i] = kFreeOwner;
        a->free_list.insert(i);
        if (a == &nvm_) host_visible_nvm_.erase(i);
      }
    }
  }
}

std::size_t Device::free_page_count(Region region) const {
  std::lock_guard lock(mu_);
  const auto& a = arena(region);
  return a.free_list.size() + (a.capacity - a.high_water);
}

std::size_t Device::owned_page_count(OwnerId owner) const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const Arena* a : {&nvm_, &ddr_}) n += static_cast<std::size_t>(std::count(a->owner.begin(), a->owner.end(), owner));
  return n;
}

OwnerId Device::owner_of(PhysPage page) const {
  std::lock_guard lock(mu_);
  const auto& a = arena(page.region);
  return page.index < a.high_water ? a.owner[page.index] : kFreeOwner;
}

void Device::expose_to_host(std::span<const PhysPage> pages) {
  std::lock_guard lock(mu_);
  for (const auto& p : pages) {
    if (p.region == Region::kNvm) host_visible_nvm_.insert(p.index);
  }
}

void Device::revoke_from_host(std::span<const PhysPage> pages) {
  std::lock_guard lock(mu_);
  for (const auto& p : pages) {
    if (p.region == Region::kNvm) host_visible_nvm_.erase(p.index);
  }
}

void Device::charge_host_roundtrip() {
  std::lock_guard lock(mu_);
  ++ledger_.host_roundtrips;
}

void Device::charge_pe_record(std::uint32_t pe) {
  std::lock_guard lock(mu_);
  ++ledger_.pe_records[pe];
}

std::span<std::uint8_t> Device::raw_page(PhysPage page) {
  std::lock_guard lock(mu_);
  auto& a = arena(page.region);
  if (page.index >= a.high_water || a.owner[page.index] == kFreeOwner) {
    fail(Errc::kOutOfRange, "raw access to unallocated page");
  }
  return {a.pages[page.index]->data(), kPageSize};
}

TransferLedger Device::ledger() const {
  std::lock_guard lock(mu_);
  return ledger_;
}

void Device::reset_ledger() {
  std::lock_guard lock(mu_);
  ledger_ = {};
}

}  // namespace ndt

#include <sstream>

#include <gtest/gtest.h>

#include "ndt/device.hpp"
#include "support.hpp"

using namespace ndt;
using ndt::test::code_of;

namespace {

DeviceConfig small() {
  DeviceConfig cfg;
  cfg.nvm_pages = 64;
  cfg.ddr_pages = 16;
  return cfg;
}

}  // namespace

TEST(DeviceConfigTest, Validation) {
  DeviceConfig cfg;
  EXPECT_NO_THROW(validate(cfg));
  cfg.pe_count = 0;
  EXPECT_EQ(code_of([&] { validate(cfg); }), Errc::kInvalidConfig);
  cfg.pe_count = 9;
  EXPECT_EQ(code_of([&] { validate(cfg); }), Errc::kInvalidConfig);
  cfg = DeviceConfig{};
  cfg.scratchpad_bytes = 0;
  EXPECT_EQ(code_of([&] { validate(cfg); }), Errc::kInvalidConfig);
  cfg = DeviceConfig{};
  cfg.internal_read_gib_s = 0;
  EXPECT_EQ(code_of([&] { Device d(cfg); }), Errc::kInvalidConfig);
}

TEST(DeviceTest, ReadChargesExactBytes) {
  Device d(small());
  auto pages = d.allocate_pages(Region::kNvm, 1, kStorageOwner);
  d.reset_ledger();
  d.read(Region::kNvm, pages[0].offset(), 8, Requester::pe_of(0));
  d.read(Region::kNvm, pages[0].offset() + 8, 4, Requester::pe_of(1));
  auto l = d.ledger();
  EXPECT_EQ(l.internal_read_bytes, 12u);
  EXPECT_EQ(l.internal_read_ops, 2u);
  EXPECT_EQ(l.nvm_read_accesses, 2u);
  EXPECT_EQ(l.pe_ops[0], 1u);
  EXPECT_EQ(l.pe_ops[1], 1u);
  EXPECT_EQ(l.device_to_host_bytes, 0u);
}

TEST(DeviceTest, HeaderProbeIsFourBytes) {
  Device d(small());
  auto pages = d.allocate_pages(Region::kDdr, 1, kStorageOwner);
  d.reset_ledger();
  std::array<std::uint8_t, 26> buf{};
  d.probe_header(Region::kDdr, pages[0].offset(), buf, 0);
  auto l = d.ledger();
  EXPECT_EQ(l.internal_read_bytes, kHeaderProbeBytes);
  EXPECT_EQ(l.header_probes, 1u);
}

TEST(DeviceTest, HostTransfersCountedSeparately) {
  Device d(small());
  auto pages = d.allocate_pages(Region::kNvm, 2, 7);
  d.expose_to_host(pages);
  auto ring = d.allocate_pages(Region::kDdr, 1, 7);
  d.reset_ledger();
  d.read(Region::kNvm, pages[0].offset(), 100, Requester::host());
  std::vector<std::uint8_t> src(50, 1);
  d.write(Region::kDdr, ring[0].offset(), src, Requester::host());
  auto l = d.ledger();
  EXPECT_EQ(l.device_to_host_bytes, 100u);
  EXPECT_EQ(l.host_to_device_bytes, 50u);
  EXPECT_EQ(l.internal_bytes(), 0u);
}

TEST(DeviceTest, HostAccessRules) {
  Device d(small());
  auto pages = d.allocate_pages(Region::kNvm, 1, 7);
  EXPECT_EQ(code_of([&] { d.read(Region::kNvm, pages[0].offset(), 8, Requester::host()); }), Errc::kAccessDenied);
  d.expose_to_host(pages);
  EXPECT_NO_THROW(d.read(Region::kNvm, pages[0].offset(), 8, Requester::host()));
  std::vector<std::uint8_t> src(8, 1);
  EXPECT_EQ(code_of([&] { d.write(Region::kNvm, pages[0].offset(), src, Requester::host()); }), Errc::kAccessDenied);
  d.revoke_from_host(pages);
  EXPECT_EQ(code_of([&] { d.read(Region::kNvm, pages[0].offset(), 8, Requester::host()); }), Errc::kAccessDenied);
}

TEST(DeviceTest, OutOfRangeAccess) {
  Device d(small());
  EXPECT_EQ(code_of([&] { d.read(Region::kDdr, 0, 8, Requester::firmware()); }), Errc::kOutOfRange);
  d.allocate_pages(Region::kDdr, 16, 3);
  EXPECT_EQ(code_of([&] { d.read(Region::kDdr, 16 * kPageSize - 4, 8, Requester::firmware()); }),
            Errc::kOutOfRange);
}

TEST(DeviceTest, AllocationAndFreeConserveCapacity) {
  Device d(small());
  EXPECT_EQ(d.free_page_count(Region::kDdr), 16u);
  auto a = d.allocate_pages(Region::kDdr, 10, 5);
  EXPECT_EQ(a.front().index, 0u);
  EXPECT_EQ(d.owned_page_count(5), 10u);
  EXPECT_EQ(code_of([&] { d.allocate_pages(Region::kDdr, 7, 6); }), Errc::kOutOfSpace);
  EXPECT_EQ(d.free_page_count(Region::kDdr), 6u);
  std::vector<PhysPage> some(a.begin(), a.begin() + 3);
  d.free_pages(some);
  EXPECT_EQ(d.owner_of(a[0]), kFreeOwner);
  auto b = d.allocate_pages(Region::kDdr, 1, 6);
  EXPECT_EQ(b[0].index, 0u);
  d.free_owner(5);
  d.free_owner(6);
  EXPECT_EQ(d.free_page_count(Region::kDdr), 16u);
  EXPECT_EQ(d.owned_page_count(5), 0u);
}

TEST(DeviceTest, ModeledTimeOneSecondAtSixteenGiB) {
  DeviceConfig cfg;
  TransferLedger l;
  l.internal_read_bytes = 16ull << 30;
  EXPECT_NEAR(modeled_time(l, cfg).internal_read_ns, 1e9, 1e-3);
  TransferLedger twice = l;
  twice.internal_read_bytes *= 2;
  EXPECT_NEAR(modeled_time(twice, cfg).internal_read_ns, 2 * modeled_time(l, cfg).internal_read_ns, 1e-3);
}

TEST(DeviceTest, ModeledTimeIsAdditive) {
  DeviceConfig cfg;
  TransferLedger l;
  l.device_to_host_bytes = 1 << 20;
  l.host_roundtrips = 3;
  auto t = modeled_time(l, cfg);
  EXPECT_NEAR(t.roundtrip_ns, 3 * cfg.host_roundtrip_ns, 1e-9);
  EXPECT_NEAR(t.device_to_host_ns, (1 << 20) / (cfg.host_read_gib_s * (1ull << 30)) * 1e9, 1e-6);
  EXPECT_NEAR(t.total_ns(), t.roundtrip_ns + t.device_to_host_ns, 1e-6);
}

TEST(DeviceTest, ReconfigureResetsLedger) {
  Device d(small());
  d.allocate_pages(Region::kDdr, 1, 3);
  d.read(Region::kDdr, 0, 8, Requester::firmware());
  auto cfg = small();
  cfg.pe_count = 2;
  d.reconfigure(cfg);
  EXPECT_EQ(d.ledger(), TransferLedger{});
  EXPECT_EQ(d.config().pe_count, 2u);
}

TEST(DeviceTest, LedgerCsvHasHeader) {
  std::ostringstream os;
  write_ledger_csv(os, TransferLedger{}, DeviceConfig{});
  EXPECT_EQ(os.str().substr(0, os.str().find(',')), "category");
}

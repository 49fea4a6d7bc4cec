#include <gtest/gtest.h>

#include "ndt/host_engine.hpp"
#include "support.hpp"

using namespace ndt;
using ndt::test::chrono_unix_seconds;
using ndt::test::code_of;

namespace {

WorkloadConfig small_workload(std::uint64_t seed) {
  WorkloadConfig cfg;
  cfg.seed = seed;
  cfg.scale_factor = 0.01;  // 300 orders
  cfg.new_order_txns = 40;
  cfg.delivery_txns = 40;
  return cfg;
}

// Sum of amounts by the definition, over rows produced by the generic oracle.
Decimal q6_oracle(const ndt::test::ExpectedRows& rows, const Q6Params& p) {
  // projection order: delivery_d, quantity, amount
  Decimal sum;
  for (const auto& [vid, r] : rows) {
    if (is_null(r[0])) continue;
    const auto secs = std::get<std::int64_t>(r[0]);
    const auto q = std::get<std::int32_t>(r[1]);
    if (secs >= p.delivery_from && secs < p.delivery_to && q >= p.quantity_min && q <= p.quantity_max) {
      sum.scaled += std::get<Decimal>(r[2]).scaled;
    }
  }
  return sum;
}

std::vector<Value> line(std::int64_t pg_micros, std::int32_t qty, std::int64_t cents, bool null_date = false) {
  Value date = null_date ? Value{Null{}} : Value{PgTimestamp{pg_micros}};
  return {std::int32_t{1}, std::int32_t{1}, std::int32_t{1}, std::int32_t{1}, std::int32_t{1},
          date,           qty,            Decimal{cents}, std::string("x")};
}

std::int64_t pg_micros_of_unix(std::int64_t unix_seconds) {
  return (unix_seconds - chrono_unix_seconds(0)) * 1'000'000;
}

}  // namespace

TEST(WorkloadTest, EpochIsStartOf2024) {
  EXPECT_EQ(chrono_unix_seconds(kWorkloadEpochPgMicros), 1'704'067'200);
  const auto q6 = default_q6_params();
  EXPECT_EQ(q6.delivery_from, chrono_unix_seconds(kWorkloadEpochPgMicros));
  using namespace std::chrono;
  EXPECT_EQ(q6.delivery_to, sys_seconds{sys_days{year{2024} / July / 1}}.time_since_epoch().count());
}

TEST(WorkloadTest, LoadShape) {
  MvccStore store(orderline_schema());
  OltpDriver driver(store, small_workload(1));
  driver.load();
  EXPECT_EQ(driver.orders(), 300u);
  EXPECT_GE(store.vid_count(), 300u * 5);
  EXPECT_LE(store.vid_count(), 300u * 15);
  std::uint64_t delivered = 0;
  for (Vid v : store.vids()) {
    EXPECT_EQ(store.chain(v).size(), 1u);
    const auto values = store.values(*store.vid_head(v));
    if (!is_null(values[kOlDeliveryD])) ++delivered;
    const auto q = std::get<std::int32_t>(values[kOlQuantity]);
    EXPECT_GE(q, 1);
    EXPECT_LE(q, 10);
  }
  EXPECT_GT(delivered, 0u);
  EXPECT_LT(delivered, store.vid_count());
  EXPECT_EQ(driver.report().rows, store.vid_count());
}

TEST(WorkloadTest, Deterministic) {
  MvccStore a(orderline_schema());
  MvccStore b(orderline_schema());
  auto ra = run_oltp(a, small_workload(7));
  auto rb = run_oltp(b, small_workload(7));
  EXPECT_EQ(ra.committed, rb.committed);
  EXPECT_EQ(ra.versions_created, rb.versions_created);
  ASSERT_EQ(a.vids(), b.vids());
  for (Vid v : a.vids()) EXPECT_EQ(a.values(*a.vid_head(v)), b.values(*b.vid_head(v)));
  MvccStore c(orderline_schema());
  run_oltp(c, small_workload(8));
  bool differs = c.vids() != a.vids();
  for (Vid v : a.vids()) differs |= c.vid_head(v) && c.values(*c.vid_head(v)) != a.values(*a.vid_head(v));
  EXPECT_TRUE(differs);
}

TEST(WorkloadTest, DeliveriesGrowChains) {
  MvccStore store(orderline_schema());
  auto report = run_oltp(store, small_workload(2));
  std::size_t long_chains = 0;
  for (Vid v : store.vids()) long_chains += store.chain(v).size() >= 2;
  EXPECT_GT(long_chains, 0u);
  EXPECT_GT(report.versions_created, report.rows);
  // deliveries against an empty district queue commit nothing
  EXPECT_GE(report.committed, 300u + 40);
  EXPECT_LE(report.committed, 300u + 40 + 40);
}

TEST(WorkloadTest, UpdateFraction) {
  MvccStore store(orderline_schema());
  OltpDriver driver(store, small_workload(3));
  driver.load();
  const auto rows = store.vid_count();
  const auto versions = store.versions_created();
  const auto updated = driver.update_fraction(0.25, 100);
  EXPECT_EQ(updated, static_cast<std::uint64_t>(std::llround(0.25 * static_cast<double>(rows))));
  EXPECT_EQ(store.versions_created() - versions, updated);
  EXPECT_EQ(code_of([&] { driver.update_fraction(1.5); }), Errc::kInvalidConfig);
}

TEST(WorkloadTest, WrongSchema) {
  MvccStore store(ndt::test::mixed_schema());
  EXPECT_EQ(code_of([&] { OltpDriver d(store, small_workload(1)); }), Errc::kSchemaMismatch);
}

TEST(Q6Test, WindowEdges) {
  MvccStore store(orderline_schema());
  const auto p = default_q6_params();
  auto t = store.begin_tx();
  store.install_version(t, 1, line(pg_micros_of_unix(p.delivery_from), 5, 100));       // included
  store.install_version(t, 2, line(pg_micros_of_unix(p.delivery_from) - 1, 5, 200));   // just before
  store.install_version(t, 3, line(pg_micros_of_unix(p.delivery_to), 5, 400));         // excluded end
  store.install_version(t, 4, line(pg_micros_of_unix(p.delivery_to) - 1, 5, 800));     // last micro
  store.install_version(t, 5, line(0, 5, 1600, true));                                 // undelivered
  store.commit_tx(t);
  auto snap = store.snapshot(store.begin_tx());
  EXPECT_EQ(q6_rowstore(store, snap, p).scaled, 900);

  Q6Params narrow = p;
  narrow.quantity_min = 6;
  EXPECT_EQ(q6_rowstore(store, snap, narrow).scaled, 0);
  narrow.quantity_min = 5;
  narrow.quantity_max = 5;
  EXPECT_EQ(q6_rowstore(store, snap, narrow).scaled, 900);
}

TEST(Q6Test, ColumnarMatchesRowstoreAndOracle) {
  NdpSystem sys(orderline_schema());
  run_oltp(sys.store(), small_workload(4));
  auto caller = sys.store().begin_tx();
  const std::vector<std::size_t> projection{kOlDeliveryD, kOlQuantity, kOlAmount};
  auto inv = sys.prepare_invocation(caller, projection, ResultMode::kMaterialize, 4);
  auto h = sys.materialize(inv);
  auto view = read_materialized(sys.device(), h, Requester::host());
  const auto p = default_q6_params();
  const auto want = q6_oracle(ndt::test::expected_rows(sys.store(), inv.snapshot, projection), p);
  EXPECT_GT(want.scaled, 0);
  EXPECT_EQ(q6_columnar(view, p), want);
  EXPECT_EQ(q6_rowstore(sys.store(), inv.snapshot, p), want);
  view.columns.erase(view.columns.begin() + 2);
  EXPECT_EQ(code_of([&] { q6_columnar(view, p); }), Errc::kMissingColumn);
}

TEST(NdpSystemTest, PrepareCarriesInFlightSet) {
  NdpSystem sys(ndt::test::mixed_schema());
  auto a = sys.store().begin_tx();
  auto caller = sys.store().begin_tx();
  auto inv = sys.prepare_invocation(caller, {0}, ResultMode::kStreaming, 1);
  EXPECT_EQ(inv.snapshot.caller, caller);
  EXPECT_EQ(inv.snapshot.in_flight, (std::vector<TxId>{a, caller}));
  ASSERT_TRUE(inv.shared_state && inv.shared_state->descriptor);
  EXPECT_EQ(*inv.shared_state->descriptor, inv.snapshot);
  EXPECT_TRUE(inv.result_pages.empty());
  EXPECT_EQ(code_of([&] { sys.prepare_invocation(caller, {0}, ResultMode::kStreaming, 9); }),
            Errc::kTooManyPEsRequested);
}

TEST(NdpSystemTest, EstimateFromRowCounts) {
  NdpSystem sys(Schema("t", {{"x", FieldType::int64(), false}}));
  EXPECT_EQ(sys.estimate_pages(std::vector<std::size_t>{0}, 4, 1.0), 4u);
  auto t = sys.store().begin_tx();
  for (Vid v = 1; v <= 4096; ++v) sys.store().install_version(t, v, std::vector<Value>{std::int64_t{1}});
  sys.store().commit_tx(t);
  // 4096 rows on one PE: 32 KiB of row ids and 32 KiB of values
  EXPECT_EQ(sys.estimate_pages(std::vector<std::size_t>{0}, 1, 1.0), 8u);
  EXPECT_EQ(sys.estimate_pages(std::vector<std::size_t>{0}, 1, 1.25), 10u);
}

TEST(NdpSystemTest, GrantLimitDeniesAndCleansUp) {
  SystemConfig cfg;
  cfg.grant_limit_pages = 0;
  NdpSystem sys(ndt::test::mixed_schema(), cfg);
  ndt::test::HistoryConfig h;
  h.tuples = 300;
  h.versions = 600;
  ndt::test::random_history(sys.store(), h);
  auto caller = sys.store().begin_tx();
  const auto nvm = sys.device().free_page_count(Region::kNvm);
  auto inv = sys.prepare_invocation(caller, ndt::test::all_columns(sys.store().schema()), ResultMode::kMaterialize,
                                    2, 2);
  EXPECT_EQ(code_of([&] { sys.materialize(inv); }), Errc::kHostDenied);
  EXPECT_EQ(sys.device().free_page_count(Region::kNvm), nvm);
  EXPECT_GE(sys.grants(), 1u);
}

TEST(NdpSystemTest, HostWorkPerInvocation) {
  NdpSystem sys(orderline_schema());
  run_oltp(sys.store(), small_workload(5));
  const auto w0 = sys.host_work();
  const auto g0 = sys.grants();
  auto h = sys.materialize_now(ndt::test::all_columns(orderline_schema()), 4);
  const auto grants = sys.grants() - g0;
  // begin, prepare, commit, plus one per grant
  EXPECT_EQ(sys.host_work() - w0, 3 + grants);
  EXPECT_GT(h.row_count, 0u);
}

TEST(NdpSystemTest, MergeColdKeepsResults) {
  NdpSystem sys(ndt::test::mixed_schema());
  ndt::test::HistoryConfig h;
  h.tuples = 300;
  h.versions = 1200;
  ndt::test::random_history(sys.store(), h);
  EXPECT_GT(sys.merge_cold(), 0u);
  EXPECT_EQ(sys.in_situ().delta_page_count(), 0u);
  auto caller = sys.store().begin_tx();
  const auto projection = ndt::test::all_columns(sys.store().schema());
  auto inv = sys.prepare_invocation(caller, projection, ResultMode::kMaterialize, 3);
  auto handle = sys.materialize(inv);
  EXPECT_EQ(ndt::test::rows_of(read_materialized(sys.device(), handle, Requester::host())),
            ndt::test::expected_rows(sys.store(), inv.snapshot, projection));
}

TEST(OracleColumnsTest, AgreesWithRowOracle) {
  MvccStore store(ndt::test::mixed_schema());
  ndt::test::random_history(store, {});
  auto snap = store.snapshot(store.begin_tx());
  const std::vector<std::size_t> projection{4, 2, 3};
  EXPECT_EQ(ndt::test::rows_of(oracle_columns(store, snap, projection)),
            ndt::test::expected_rows(store, snap, projection));
}

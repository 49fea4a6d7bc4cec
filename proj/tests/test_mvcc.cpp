#include <algorithm>
#include <set>
#include <thread>

#include <gtest/gtest.h>

#include "ndt/mvcc.hpp"
#include "support.hpp"

using namespace ndt;
using ndt::test::code_of;

namespace {

Schema one_int() { return Schema("t", {{"a", FieldType::int32(), false}}); }

std::vector<Value> row(std::int32_t v) { return {v}; }

}  // namespace

TEST(MvccTxTest, IdsStartAtOneAndIncrease) {
  MvccStore store(one_int());
  EXPECT_EQ(store.begin_tx(), 1u);
  EXPECT_EQ(store.begin_tx(), 2u);
}

TEST(MvccTxTest, ConcurrentBeginsAreDistinct) {
  MvccStore store(one_int());
  std::vector<std::vector<TxId>> got(4);
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 2500; ++i) got[t].push_back(store.begin_tx());
    });
  }
  for (auto& th : threads) th.join();
  std::set<TxId> all;
  for (const auto& v : got) all.insert(v.begin(), v.end());
  EXPECT_EQ(all.size(), 10000u);
}

TEST(MvccTxTest, CommitClearsInFlight) {
  MvccStore store(one_int());
  auto t = store.begin_tx();
  EXPECT_EQ(store.in_flight(), std::vector<TxId>{t});
  store.commit_tx(t);
  EXPECT_TRUE(store.in_flight().empty());
  EXPECT_EQ(code_of([&] { store.commit_tx(t); }), Errc::kAlreadyFinished);
  EXPECT_EQ(code_of([&] { store.abort_tx(t); }), Errc::kAlreadyFinished);
  EXPECT_EQ(code_of([&] { store.commit_tx(99); }), Errc::kUnknownTx);
}

TEST(MvccTxTest, AbortRemovesInsert) {
  MvccStore store(one_int());
  auto t = store.begin_tx();
  store.install_version(t, 5, row(1));
  store.abort_tx(t);
  EXPECT_FALSE(store.vid_head(5).has_value());
  EXPECT_EQ(store.vid_count(), 0u);
}

TEST(MvccTxTest, AbortRestoresPreviousHeadInReverse) {
  MvccStore store(one_int());
  auto t1 = store.begin_tx();
  auto first = store.install_version(t1, 5, row(1));
  store.commit_tx(t1);
  auto t2 = store.begin_tx();
  store.install_version(t2, 5, row(2));
  store.install_version(t2, 6, row(3));
  store.abort_tx(t2);
  EXPECT_EQ(store.vid_head(5), first);
  EXPECT_FALSE(store.vid_head(6).has_value());
}

TEST(MvccInstallTest, ChainShape) {
  MvccStore store(one_int());
  auto t1 = store.begin_tx();
  auto r1 = store.install_version(t1, 1, row(10));
  store.commit_tx(t1);
  EXPECT_EQ(store.chain(1).size(), 1u);
  EXPECT_EQ(store.vid_head(1), r1);

  auto t2 = store.begin_tx();
  auto r2 = store.install_version(t2, 1, row(11));
  store.commit_tx(t2);
  auto chain = store.chain(1);
  ASSERT_EQ(chain.size(), 2u);
  EXPECT_EQ(chain[0].rid, r2);
  EXPECT_EQ(chain[1].rid, r1);
  EXPECT_GT(chain[0].create_ts, chain[1].create_ts);
  EXPECT_EQ(decode_header(store.schema(), store.record(r2)).pred, r1);
  EXPECT_EQ(store.values(r2), row(11));
}

TEST(MvccInstallTest, OlderWriterIsStale) {
  MvccStore store(one_int());
  auto old_tx = store.begin_tx();
  auto new_tx = store.begin_tx();
  store.install_version(new_tx, 1, row(1));
  store.commit_tx(new_tx);
  EXPECT_EQ(code_of([&] { store.install_version(old_tx, 1, row(2)); }), Errc::kStaleWrite);
}

TEST(MvccInstallTest, UncommittedHeadIsStale) {
  MvccStore store(one_int());
  auto a = store.begin_tx();
  auto b = store.begin_tx();
  store.install_version(a, 1, row(1));
  EXPECT_EQ(code_of([&] { store.install_version(b, 1, row(2)); }), Errc::kStaleWrite);
}

TEST(MvccInstallTest, InactiveWriterRejected) {
  MvccStore store(one_int());
  EXPECT_EQ(code_of([&] { store.install_version(3, 1, row(1)); }), Errc::kUnknownTx);
}

TEST(VisibilityTest, HandWrittenChains) {
  const RecordId r5{0, 0}, r12{0, 1};
  std::vector<ChainEntry> one{{r5, 5, false}};
  std::vector<ChainEntry> two{{r12, 12, false}, {r5, 5, false}};
  EXPECT_EQ(oracle_visible_version(one, {10, {}}), r5);
  EXPECT_EQ(oracle_visible_version(two, {10, {}}), r5);
  EXPECT_FALSE(oracle_visible_version(one, {10, {5}}).has_value());
  std::vector<ChainEntry> dead{{r12, 7, true}, {r5, 5, false}};
  EXPECT_FALSE(oracle_visible_version(dead, {10, {}}).has_value());
  EXPECT_EQ(oracle_visible_version(dead, {7, {}}), r5);
}

TEST(VisibilityTest, MatchesBruteForceOnRandomHistories) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    MvccStore store(ndt::test::mixed_schema());
    ndt::test::HistoryConfig cfg;
    cfg.seed = seed;
    cfg.tuples = 200;
    cfg.versions = 1000;
    std::vector<TxId> open;
    ndt::test::random_history(store, cfg, &open);
    const TxId caller = store.begin_tx();
    const auto snap = store.snapshot(caller);
    EXPECT_TRUE(std::is_sorted(snap.in_flight.begin(), snap.in_flight.end()));
    EXPECT_TRUE(snap.is_in_flight(caller));
    for (auto t : open) EXPECT_TRUE(snap.is_in_flight(t));
    for (Vid vid : store.vids()) {
      const auto chain = store.chain(vid);
      for (std::size_t i = 1; i < chain.size(); ++i) EXPECT_GT(chain[i - 1].create_ts, chain[i].create_ts);
      auto want = ndt::test::brute_visible(chain, snap);
      std::optional<RecordId> expected;
      if (want && !want->tombstone) expected = want->rid;
      EXPECT_EQ(store.oracle_visible_version(vid, snap), expected) << "seed " << seed << " vid " << vid;
    }
  }
}

#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "ndt/host_engine.hpp"
#include "ndt/result_format.hpp"
#include "support.hpp"

using namespace ndt;
using ndt::test::code_of;

namespace {

void expect_same(const ColumnSet& a, const ColumnSet& b) {
  ASSERT_EQ(a.row_count, b.row_count);
  EXPECT_EQ(a.visibility, b.visibility);
  ASSERT_EQ(a.columns.size(), b.columns.size());
  for (std::size_t i = 0; i < a.columns.size(); ++i) {
    EXPECT_EQ(a.columns[i].attr, b.columns[i].attr);
    EXPECT_EQ(a.columns[i].values, b.columns[i].values) << a.columns[i].attr.name;
    EXPECT_EQ(a.columns[i].validity, b.columns[i].validity) << a.columns[i].attr.name;
    EXPECT_EQ(a.columns[i].offsets, b.columns[i].offsets) << a.columns[i].attr.name;
  }
}

// A result set from a random history with some rows masked out.
ColumnSet random_set(std::uint64_t seed, std::size_t tuples) {
  MvccStore store(ndt::test::mixed_schema());
  ndt::test::HistoryConfig h;
  h.seed = seed;
  h.tuples = tuples;
  h.versions = tuples * 2;
  ndt::test::random_history(store, h);
  auto snap = store.snapshot(store.begin_tx());
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> projection;
  for (std::size_t i = 0; i < 5; ++i) {
    if (rng() % 2) projection.push_back(i);
  }
  if (projection.empty()) projection.push_back(rng() % 5);
  auto set = oracle_columns(store, snap, projection);
  set.visibility = all_visible_bitmap(set.row_count);
  for (std::uint64_t r = 0; r < set.row_count; ++r) {
    if (rng() % 7 == 0) set.visibility[r / 64] &= ~(std::uint64_t{1} << (r % 64));
  }
  return set;
}

ColumnSet two_ints() {
  ColumnSetBuilder b({{"a", FieldType::int32(), false}});
  std::vector<std::uint8_t> values{1, 0, 0, 0, 2, 0, 0, 0};
  std::vector<ColumnSetBuilder::FragmentColumn> cols{{values, {}, {}}};
  b.append_fragment(2, cols);
  auto set = std::move(b).finish();
  set.visibility = all_visible_bitmap(2);
  return set;
}

}  // namespace

TEST(FormatTest, HandComputedLayout) {
  auto bytes = encode_file(two_ints(), 9);
  // header 32, schema 2+1+6 padded to 48, table of 8 words to 112,
  // values at 128, visibility at 192
  ASSERT_EQ(bytes.size(), 200u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "NDTC");
  EXPECT_EQ(load_le<std::uint32_t>(bytes.data() + 4), 1u);
  EXPECT_EQ(load_le<std::uint64_t>(bytes.data() + 8), 9u);
  EXPECT_EQ(load_le<std::uint64_t>(bytes.data() + 16), 2u);
  EXPECT_EQ(load_le<std::uint32_t>(bytes.data() + 24), 1u);
  EXPECT_EQ(load_le<std::uint32_t>(bytes.data() + 28), 0u);
  EXPECT_EQ(load_le<std::uint16_t>(bytes.data() + 32), 1u);
  EXPECT_EQ(bytes[34], 'a');
  EXPECT_EQ(bytes[35], static_cast<std::uint8_t>(TypeKind::kInt32));
  const std::uint8_t* table = bytes.data() + 48;
  EXPECT_EQ(load_le<std::uint64_t>(table), 128u);
  EXPECT_EQ(load_le<std::uint64_t>(table + 8), 8u);
  for (int w = 2; w < 6; ++w) EXPECT_EQ(load_le<std::uint64_t>(table + 8 * w), 0u);
  EXPECT_EQ(load_le<std::uint64_t>(table + 48), 192u);
  EXPECT_EQ(load_le<std::uint64_t>(table + 56), 8u);
  EXPECT_EQ(load_le<std::int32_t>(bytes.data() + 132), 2);
  EXPECT_EQ(load_le<std::uint64_t>(bytes.data() + 192), 3u);
}

TEST(FormatTest, EmptyResult) {
  ColumnSetBuilder b(result_attributes(ndt::test::mixed_schema(), std::vector<std::size_t>{0, 2}));
  auto set = std::move(b).finish();
  auto file = decode_file(encode_file(set, 4));
  EXPECT_EQ(file.snapshot_ts, 4u);
  EXPECT_EQ(file.columns.row_count, 0u);
  EXPECT_TRUE(file.columns.visibility.empty());
  EXPECT_EQ(file.columns.columns.size(), 3u);
  EXPECT_EQ(code_of([] { encode_file(ColumnSet{}, 1); }), Errc::kInvalidSchema);
}

TEST(FormatTest, RoundTripAndDeterminism) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto set = random_set(seed, 50 + seed * 13);
    auto bytes = encode_file(set, seed);
    EXPECT_EQ(bytes, encode_file(set, seed));
    auto file = decode_file(bytes);
    EXPECT_EQ(file.snapshot_ts, seed);
    expect_same(file.columns, set);
  }
}

TEST(FormatTest, BuffersAligned) {
  auto set = random_set(3, 200);
  auto bytes = encode_file(set, 1);
  const std::uint32_t n = load_le<std::uint32_t>(bytes.data() + 24);
  std::size_t pos = 32;
  for (std::uint32_t i = 0; i < n; ++i) pos += 2 + load_le<std::uint16_t>(bytes.data() + pos) + 6;
  pos = (pos + 7) / 8 * 8;
  std::uint64_t last_end = 0;
  for (std::uint32_t k = 0; k < 3 * n + 1; ++k) {
    const auto off = load_le<std::uint64_t>(bytes.data() + pos + 16 * k);
    const auto len = load_le<std::uint64_t>(bytes.data() + pos + 16 * k + 8);
    if (len == 0) {
      EXPECT_EQ(off, 0u);
      continue;
    }
    EXPECT_EQ(off % 64, 0u);
    EXPECT_GE(off, last_end);
    last_end = off + len;
  }
  EXPECT_EQ(last_end, bytes.size());
}

TEST(FormatTest, HeaderErrors) {
  auto bytes = encode_file(two_ints(), 1);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(code_of([&] { decode_file(bad); }), Errc::kBadMagic);
  EXPECT_EQ(code_of([&] { decode_file(std::span(bytes).first(3)); }), Errc::kBadMagic);
  bad = bytes;
  bad[4] = 2;
  EXPECT_EQ(code_of([&] { decode_file(bad); }), Errc::kUnsupportedVersion);
  bad = bytes;
  bad[28] = 1;
  EXPECT_EQ(code_of([&] { decode_file(bad); }), Errc::kCorruptDescriptor);
}

TEST(FormatTest, TruncationIsCorrupt) {
  auto bytes = encode_file(random_set(5, 100), 1);
  for (std::size_t len = 8; len < bytes.size(); len += 1 + len / 16) {
    EXPECT_EQ(code_of([&] { decode_file(std::span(bytes).first(len)); }), Errc::kCorruptDescriptor) << len;
  }
}

TEST(FormatTest, StrayVisibilityBits) {
  auto bytes = encode_file(two_ints(), 1);
  bytes[192] = 0x07;
  EXPECT_EQ(code_of([&] { decode_file(bytes); }), Errc::kCorruptDescriptor);
}

TEST(FormatTest, OverlappingBuffers) {
  auto bytes = encode_file(two_ints(), 1);
  // point the bitmap at the values buffer
  store_le<std::uint64_t>(bytes.data() + 48 + 48, 128);
  EXPECT_EQ(code_of([&] { decode_file(bytes); }), Errc::kCorruptDescriptor);
}

TEST(FormatTest, CorruptionFuzzNeverCrashes) {
  std::mt19937_64 rng(99);
  auto base = encode_file(random_set(8, 120), 3);
  for (int i = 0; i < 2000; ++i) {
    auto bytes = base;
    const int flips = 1 + static_cast<int>(rng() % 4);
    for (int f = 0; f < flips; ++f) bytes[rng() % bytes.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);
    if (rng() % 4 == 0) bytes.resize(rng() % bytes.size());
    try {
      decode_file(bytes);
    } catch (const Error& e) {
      EXPECT_TRUE(e.code() == Errc::kBadMagic || e.code() == Errc::kUnsupportedVersion ||
                  e.code() == Errc::kCorruptDescriptor)
          << e.what();
    }
  }
}

TEST(FormatTest, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "ndt_format_test.ndtc";
  auto set = random_set(11, 80);
  write_file(path, set, 12);
  auto file = read_file(path);
  EXPECT_EQ(file.snapshot_ts, 12u);
  expect_same(file.columns, set);
  std::filesystem::remove(path);
  EXPECT_EQ(code_of([&] { read_file(path); }), Errc::kIoError);
}

TEST(FormatTest, MaterializedResultRoundTrip) {
  NdpSystem sys(ndt::test::mixed_schema());
  ndt::test::random_history(sys.store(), {});
  auto h = sys.materialize_now(ndt::test::all_columns(sys.store().schema()), 4);
  auto set = read_materialized(sys.device(), h, Requester::host());
  auto file = decode_file(encode_file(set, h.snapshot_ts()));
  expect_same(file.columns, set);
  EXPECT_EQ(file.snapshot_ts, h.snapshot_ts());
}

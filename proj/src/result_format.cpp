#include "ndt/result_format.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace ndt {

namespace {

constexpr std::size_t kDescriptorWords = 6;
constexpr std::uint64_t kMaxRows = std::uint64_t{1} << 40;

struct Range {
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
};

std::vector<std::uint8_t> offsets_bytes(const Column& c) {
  std::vector<std::uint8_t> out(c.offsets.size() * 4);
  for (std::size_t i = 0; i < c.offsets.size(); ++i) store_le<std::uint32_t>(out.data() + 4 * i, c.offsets[i]);
  return out;
}

[[noreturn]] void corrupt(const std::string& what) { fail(Errc::kCorruptDescriptor, what); }

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v = load_le<T>(bytes_.data() + pos_);
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void seek(std::size_t pos) {
    if (pos > bytes_.size()) corrupt("truncated file");
    pos_ = pos;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) corrupt("truncated file");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_file(const ColumnSet& set, TxId snapshot_ts) {
  if (set.columns.empty()) fail(Errc::kInvalidSchema, "column set has no columns");
  set.validate();
  const auto visibility = set.visibility.empty() ? all_visible_bitmap(set.row_count) : set.visibility;
  const std::uint32_t n = static_cast<std::uint32_t>(set.columns.size());

  std::vector<std::uint8_t> out(kFileHeaderBytes);
  std::memcpy(out.data(), kFileMagic, 4);
  store_le<std::uint32_t>(out.data() + 4, kFileVersion);
  store_le<std::uint64_t>(out.data() + 8, snapshot_ts);
  store_le<std::uint64_t>(out.data() + 16, set.row_count);
  store_le<std::uint32_t>(out.data() + 24, n);
  store_le<std::uint32_t>(out.data() + 28, 0);

  for (const auto& c : set.columns) {
    const auto& a = c.attr;
    const auto base = out.size();
    out.resize(base + 2 + a.name.size() + 6);
    auto* p = out.data() + base;
    store_le<std::uint16_t>(p, static_cast<std::uint16_t>(a.name.size()));
    std::memcpy(p + 2, a.name.data(), a.name.size());
    p += 2 + a.name.size();
    p[0] = static_cast<std::uint8_t>(a.type.kind);
    p[1] = a.nullable ? 1 : 0;
    p[2] = a.type.precision;
    p[3] = a.type.scale;
    store_le<std::uint16_t>(p + 4, a.type.max_len);
  }
  out.resize(align_up(out.size(), 8), 0);

  const std::size_t table = out.size();
  out.resize(table + (kDescriptorWords * n + 2) * 8, 0);

  // Buffers in file order: per column values, validity, offsets; then visibility.
  std::vector<std::vector<std::uint8_t>> offsets(set.columns.size());
  std::vector<std::span<const std::uint8_t>> buffers;
  for (std::size_t i = 0; i < set.columns.size(); ++i) {
    offsets[i] = offsets_bytes(set.columns[i]);
    buffers.push_back(set.columns[i].values);
    buffers.push_back(set.columns[i].validity);
    buffers.push_back(offsets[i]);
  }
  std::vector<std::uint8_t> vis(visibility.size() * 8);
  for (std::size_t w = 0; w < visibility.size(); ++w) store_le<std::uint64_t>(vis.data() + 8 * w, visibility[w]);
  buffers.push_back(vis);

  std::size_t end = align_up(out.size(), kBufferAlignment);
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    const auto& b = buffers[i];
    std::uint64_t offset = 0;
    if (!b.empty()) {
      offset = end;
      out.resize(offset + b.size(), 0);
      std::memcpy(out.data() + offset, b.data(), b.size());
      end = align_up(out.size(), kBufferAlignment);
    }
    store_le<std::uint64_t>(out.data() + table + 16 * i, offset);
    store_le<std::uint64_t>(out.data() + table + 16 * i + 8, b.size());
  }
  return out;
}

ColumnarFile decode_file(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kFileMagic, 4) != 0) fail(Errc::kBadMagic, "not an NDTC file");
  Reader r(bytes);
  r.seek(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kFileVersion) fail(Errc::kUnsupportedVersion, "format version " + std::to_string(version));
  ColumnarFile file;
  file.snapshot_ts = r.get<std::uint64_t>();
  const auto rows = r.get<std::uint64_t>();
  const auto n = r.get<std::uint32_t>();
  if (r.get<std::uint32_t>() != 0) corrupt("reserved header field is not zero");
  if (rows > kMaxRows) corrupt("row count " + std::to_string(rows));
  // Every attribute needs at least 8 schema bytes and 48 descriptor bytes.
  if (n == 0 || std::uint64_t{n} * 56 > bytes.size()) corrupt("attribute count " + std::to_string(n));

  std::vector<Attribute> attrs;
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto len = r.get<std::uint16_t>();
    Attribute a;
    a.name = r.get_string(len);
    const auto tag = r.get<std::uint8_t>();
    const auto nullable = r.get<std::uint8_t>();
    a.type.precision = r.get<std::uint8_t>();
    a.type.scale = r.get<std::uint8_t>();
    a.type.max_len = r.get<std::uint16_t>();
    if (tag < 1 || tag > 6) corrupt("type tag " + std::to_string(tag));
    if (nullable > 1) corrupt("nullable flag " + std::to_string(nullable));
    a.type.kind = static_cast<TypeKind>(tag);
    a.nullable = nullable == 1;
    try {
      validate_type(a.type);
    } catch (const Error& e) {
      corrupt(std::string("attribute type: ") + e.what());
    }
    attrs.push_back(std::move(a));
  }
  try {
    Schema check("file", attrs);
  } catch (const Error& e) {
    corrupt(std::string("schema: ") + e.what());
  }

  r.seek(align_up(r.pos(), 8));
  std::vector<Range> ranges(kDescriptorWords / 2 * n + 1);
  for (auto& range : ranges) {
    range.offset = r.get<std::uint64_t>();
    range.length = r.get<std::uint64_t>();
  }
  const std::uint64_t data_start = align_up(r.pos(), kBufferAlignment);

  std::vector<Range> used;
  for (const auto& range : ranges) {
    if (range.length == 0) {
      if (range.offset != 0) corrupt("empty buffer with nonzero offset");
      continue;
    }
    if (range.offset % kBufferAlignment != 0) corrupt("misaligned buffer");
    if (range.offset < data_start || range.offset > bytes.size() || range.length > bytes.size() - range.offset) {
      corrupt("buffer outside file");
    }
    used.push_back(range);
  }
  std::sort(used.begin(), used.end(), [](const Range& a, const Range& b) { return a.offset < b.offset; });
  for (std::size_t i = 1; i < used.size(); ++i) {
    if (used[i - 1].offset + used[i - 1].length > used[i].offset) corrupt("overlapping buffers");
  }

  auto slice = [&](const Range& range) {
    return bytes.subspan(static_cast<std::size_t>(range.offset), static_cast<std::size_t>(range.length));
  };

  auto& set = file.columns;
  set.row_count = rows;
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto& a = attrs[i];
    const Range values = ranges[3 * i];
    const Range validity = ranges[3 * i + 1];
    const Range offsets = ranges[3 * i + 2];
    const std::uint64_t want_validity = a.nullable ? ceil_div(rows, 8) : 0;
    if (validity.length != want_validity) corrupt(a.name + ": validity length");
    const std::uint64_t want_offsets = a.type.is_varlen() && rows > 0 ? (rows + 1) * 4 : 0;
    if (offsets.length != want_offsets) corrupt(a.name + ": offsets length");
    if (!a.type.is_varlen() && values.length != rows * a.type.width()) corrupt(a.name + ": values length");

    Column c{a, {}, {}, {}};
    auto v = slice(values);
    c.values.assign(v.begin(), v.end());
    auto b = slice(validity);
    c.validity.assign(b.begin(), b.end());
    auto o = slice(offsets);
    c.offsets.resize(o.size() / 4);
    for (std::size_t k = 0; k < c.offsets.size(); ++k) c.offsets[k] = load_le<std::uint32_t>(o.data() + 4 * k);
    set.columns.push_back(std::move(c));
  }
  const Range vis = ranges.back();
  if (vis.length != ceil_div(rows, 64) * 8) corrupt("visibility bitmap length");
  auto vb = slice(vis);
  set.visibility.resize(vb.size() / 8);
  for (std::size_t w = 0; w < set.visibility.size(); ++w) set.visibility[w] = load_le<std::uint64_t>(vb.data() + 8 * w);
  if (rows % 64 && (set.visibility.back() >> (rows % 64)) != 0) corrupt("visibility bits beyond row count");

  set.validate();
  return file;
}

void write_file(const std::filesystem::path& path, const ColumnSet& set, TxId snapshot_ts) {
  const auto bytes = encode_file(set, snapshot_ts);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(Errc::kIoError, "cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  os.close();
  if (!os) fail(Errc::kIoError, "write to " + path.string() + " failed");
}

ColumnarFile read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(Errc::kIoError, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (is.bad()) fail(Errc::kIoError, "read from " + path.string() + " failed");
  return decode_file(bytes);
}

}  // namespace ndt

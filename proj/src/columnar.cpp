#include "ndt/columnar.hpp"

#include <algorithm>
#include <numeric>

namespace ndt {

FieldType result_type(const FieldType& stored) {
  if (stored.kind == TypeKind::kTimestampPg) return FieldType::timestamp_unix();
  return stored;
}

bool Column::is_valid(std::uint64_t row) const {
  if (!attr.nullable) return true;
  return (validity[row / 8] >> (row % 8)) & 1u;
}

Value Column::value(std::uint64_t row) const {
  if (!is_valid(row)) return Null{};
  if (attr.type.is_varlen()) {
    const auto b = offsets[row];
    const auto e = offsets[row + 1];
    return std::string(reinterpret_cast<const char*>(values.data()) + b, e - b);
  }
  const auto w = attr.type.width();
  const auto* p = values.data() + row * w;
  switch (attr.type.kind) {
    case TypeKind::kInt32: return load_le<std::int32_t>(p);
    case TypeKind::kDecimal: return Decimal{load_le<std::int64_t>(p)};
    case TypeKind::kTimestampPg: return PgTimestamp{load_le<std::int64_t>(p)};
    default: return load_le<std::int64_t>(p);
  }
}

std::optional<std::size_t> ColumnSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].attr.name == name) return i;
  }
  return std::nullopt;
}

bool ColumnSet::row_visible(std::uint64_t row) const {
  if (visibility.empty()) return true;
  return (visibility[row / 64] >> (row % 64)) & 1u;
}

std::uint64_t ColumnSet::visible_rows() const {
  if (visibility.empty()) return row_count;
  std::uint64_t n = 0;
  for (std::uint64_t r = 0; r < row_count; ++r) n += row_visible(r);
  return n;
}

ColumnSet ColumnSet::masked() const {
  if (visibility.empty()) return *this;
  ColumnSet out;
  out.row_count = visible_rows();
  for (const auto& c : columns) {
    Column m{c.attr, {}, {}, {}};
    if (c.attr.nullable) m.validity.assign(ceil_div(out.row_count, 8), 0);
    if (c.attr.type.is_varlen() && out.row_count > 0) m.offsets.push_back(0);
    std::uint64_t k = 0;
    for (std::uint64_t r = 0; r < row_count; ++r) {
      if (!row_visible(r)) continue;
      if (c.attr.nullable && c.is_valid(r)) m.validity[k / 8] |= static_cast<std::uint8_t>(1u << (k % 8));
      if (c.attr.type.is_varlen()) {
        m.values.insert(m.values.end(), c.values.begin() + c.offsets[r], c.values.begin() + c.offsets[r + 1]);
        m.offsets.push_back(static_cast<std::uint32_t>(m.values.size()));
      } else {
        const auto w = c.attr.type.width();
        m.values.insert(m.values.end(), c.values.begin() + static_cast<std::ptrdiff_t>(r * w),
                        c.values.begin() + static_cast<std::ptrdiff_t>((r + 1) * w));
      }
      ++k;
    }
    out.columns.push_back(std::move(m));
  }
  return out;
}

void ColumnSet::validate() const {
  auto bad = [](const std::string& what) { fail(Errc::kCorruptDescriptor, what); };
  if (!visibility.empty() && visibility.size() != ceil_div(row_count, 64)) bad("visibility bitmap length");
  for (const auto& c : columns) {
    validate_type(c.attr.type);
    if (c.attr.nullable) {
      if (c.validity.size() != ceil_div(row_count, 8)) bad(c.attr.name + ": validity length");
    } else if (!c.validity.empty()) {
      bad(c.attr.name + ": validity on non-nullable column");
    }
    if (c.attr.type.is_varlen()) {
      if (row_count == 0) {
        if (!c.offsets.empty() || !c.values.empty()) bad(c.attr.name + ": buffers on empty column");
        continue;
      }
      if (c.offsets.size() != row_count + 1 || c.offsets.front() != 0) bad(c.attr.name + ": offsets length");
      for (std::size_t i = 1; i < c.offsets.size(); ++i) {
        if (c.offsets[i] < c.offsets[i - 1]) bad(c.attr.name + ": offsets not monotone");
        if (c.offsets[i] - c.offsets[i - 1] > c.attr.type.max_len) bad(c.attr.name + ": value exceeds max_len");
      }
      if (c.offsets.back() != c.values.size()) bad(c.attr.name + ": offsets end");
    } else {
      if (!c.offsets.empty()) bad(c.attr.name + ": offsets on fixed-width column");
      if (c.values.size() != row_count * c.attr.type.width()) bad(c.attr.name + ": values length");
    }
  }
}

ColumnSetBuilder::ColumnSetBuilder(std::vector<Attribute> attributes) {
  for (auto& a : attributes) set_.columns.push_back(Column{std::move(a), {}, {}, {}});
}

void ColumnSetBuilder::append_fragment(std::uint64_t rows, std::span<const FragmentColumn> cols) {
  if (cols.size() != set_.columns.size()) fail(Errc::kSchemaMismatch, "fragment column count");
  if (rows == 0) return;
  const std::uint64_t base = set_.row_count;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    auto& c = set_.columns[i];
    const auto& f = cols[i];
    if (c.attr.nullable) {
      if (f.validity.size() < ceil_div(rows, 8)) fail(Errc::kCorruptDescriptor, c.attr.name + ": short validity");
      c.validity.resize(ceil_div(base + rows, 8), 0);
      for (std::uint64_t r = 0; r < rows; ++r) {
        if ((f.validity[r / 8] >> (r % 8)) & 1u) {
          const auto k = base + r;
          c.validity[k / 8] |= static_cast<std::uint8_t>(1u << (k % 8));
        }
      }
    }
    if (c.attr.type.is_varlen()) {
      if (f.offsets.size() != (rows + 1) * 4) fail(Errc::kCorruptDescriptor, c.attr.name + ": offsets length");
      const auto shift = static_cast<std::uint32_t>(c.values.size());
      if (c.offsets.empty()) c.offsets.push_back(0);
      for (std::uint64_t r = 1; r <= rows; ++r) {
        c.offsets.push_back(shift + load_le<std::uint32_t>(f.offsets.data() + r * 4));
      }
    }
    c.values.insert(c.values.end(), f.values.begin(), f.values.end());
  }
  set_.row_count += rows;
}

ColumnSet ColumnSetBuilder::finish() && { return std::move(set_); }

std::vector<std::uint64_t> all_visible_bitmap(std::uint64_t rows) {
  std::vector<std::uint64_t> bits(ceil_div(rows, 64), ~std::uint64_t{0});
  if (rows % 64) bits.back() = (std::uint64_t{1} << (rows % 64)) - 1;
  return bits;
}

std::optional<Divergence> canonical_compare(const ColumnSet& a_in, const ColumnSet& b_in) {
  if (a_in.columns.size() != b_in.columns.size()) fail(Errc::kSchemaMismatch, "column count differs");
  for (std::size_t i = 0; i < a_in.columns.size(); ++i) {
    if (!(a_in.columns[i].attr == b_in.columns[i].attr)) {
      fail(Errc::kSchemaMismatch, "column " + a_in.columns[i].attr.name + " vs " + b_in.columns[i].attr.name);
    }
  }
  const auto vid_col = a_in.index_of(kVidColumn);
  if (!vid_col) fail(Errc::kSchemaMismatch, "no vid column");

  const ColumnSet a = a_in.masked();
  const ColumnSet b = b_in.masked();
  auto sorted_rows = [&](const ColumnSet& s) {
    std::vector<std::pair<Vid, std::uint64_t>> rows(s.row_count);
    for (std::uint64_t r = 0; r < s.row_count; ++r) {
      rows[r] = {static_cast<Vid>(std::get<std::int64_t>(s.columns[*vid_col].value(r))), r};
    }
    std::sort(rows.begin(), rows.end());
    return rows;
  };
  const auto ra = sorted_rows(a);
  const auto rb = sorted_rows(b);
  const std::size_t n = std::min(ra.size(), rb.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (ra[i].first != rb[i].first) {
      return Divergence{std::min(ra[i].first, rb[i].first), kVidColumn, "row present on one side only"};
    }
    for (std::size_t c = 0; c < a.columns.size(); ++c) {
      const auto va = a.columns[c].value(ra[i].second);
      const auto vb = b.columns[c].value(rb[i].second);
      if (va != vb) {
        return Divergence{ra[i].first, a.columns[c].attr.name, to_string(va) + " != " + to_string(vb)};
      }
    }
  }
  if (ra.size() != rb.size()) {
    const Vid extra = ra.size() > n ? ra[n].first : rb[n].first;
    return Divergence{extra, kVidColumn, "row count " + std::to_string(ra.size()) + " vs " + std::to_string(rb.size())};
  }
  return std::nullopt;
}

}  // namespace ndt

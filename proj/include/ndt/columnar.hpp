#pragma once

// Logical columnar result: per-attribute value / validity / offset buffers in
// the Arrow buffer convention, plus a positional visibility bitmap.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ndt/layout.hpp"

namespace ndt {

// Name of the row-identity column every transformation result leads with.
inline constexpr const char* kVidColumn = "vid";

// Columnar representation type of a stored field type.
FieldType result_type(const FieldType& stored);

struct Column {
  Attribute attr;
  std::vector<std::uint8_t> values;
  std::vector<std::uint8_t> validity;  // bit i = row i is valid; empty for non-nullable
  std::vector<std::uint32_t> offsets;  // varlen only: row_count + 1 entries, empty when no rows

  bool is_valid(std::uint64_t row) const;
  Value value(std::uint64_t row) const;
};

struct ColumnSet {
  std::vector<Column> columns;
  std::uint64_t row_count = 0;
  // One bit per row (1 = current), 64-bit words. Empty means every row is current.
  std::vector<std::uint64_t> visibility;

  std::optional<std::size_t> index_of(std::string_view name) const;
  bool row_visible(std::uint64_t row) const;
  std::uint64_t visible_rows() const;
  // Rows with a set visibility bit, in position order.
  ColumnSet masked() const;
  // Checks buffer sizes against row_count and column types.
  void validate() const;
};

// Appends fragments column by column; validity bits and offsets are rebased.
class ColumnSetBuilder {
 public:
  explicit ColumnSetBuilder(std::vector<Attribute> attributes);

  struct FragmentColumn {
    std::span<const std::uint8_t> values;
    std::span<const std::uint8_t> validity;
    std::span<const std::uint8_t> offsets;  // little-endian u32s
  };

  void append_fragment(std::uint64_t rows, std::span<const FragmentColumn> columns);
  ColumnSet finish() &&;

 private:
  ColumnSet set_;
};

std::vector<std::uint64_t> all_visible_bitmap(std::uint64_t rows);

struct Divergence {
  Vid vid = 0;
  std::string attribute;
  std::string detail;
};

// Compares the current rows of both sets sorted by vid, field by field.
// Throws kSchemaMismatch when the column lists differ.
std::optional<Divergence> canonical_compare(const ColumnSet& a, const ColumnSet& b);

}  // namespace ndt

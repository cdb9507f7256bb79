#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace fsnt {

// Column roles for one flow dataset. Label derivation is binary: a row is
// benign (0) iff its label cell equals `benign_label`, otherwise attack (1).
struct DatasetSpec {
  std::string name;
  std::vector<std::string> categorical_fields;
  std::vector<std::string> numerical_fields;
  std::string label_column;
  std::string benign_label;
  std::optional<std::string> class_column;  // attack subtype, metadata only
  std::vector<std::string> dropped_columns;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

DatasetSpec parse_spec(const nlohmann::json& doc);
nlohmann::json spec_to_json(const DatasetSpec& spec);
DatasetSpec load_spec(const std::filesystem::path& path);

inline constexpr const char* kMissingCategory = "__missing__";

using Cell = std::variant<double, std::string>;

// Immutable after construction. Numerical feature cells hold doubles, all
// other cells hold the raw string.
struct RawFlowTable {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;
  std::vector<std::string> origin;  // dataset name per row
  std::vector<int> labels;          // BinaryLabel per row
  bool has_labels = true;

  std::size_t row_count() const { return rows.size(); }
  // Throws DataError if absent.
  std::size_t column_index(const std::string& name) const;
  std::optional<std::size_t> find_column(const std::string& name) const;
};

struct IngestOptions {
  // When false, a CSV without the label column is accepted (prediction
  // inputs); labels are then all 0 and has_labels is false.
  bool require_label = true;
};

// Sanitizes as it reads: empty numerical -> 0, negative numerical -> 0,
// empty categorical -> "__missing__". Dropped columns are removed.
RawFlowTable ingest_csv(const std::filesystem::path& path, const DatasetSpec& spec,
                        IngestOptions options = {});
RawFlowTable ingest_csv(std::istream& in, const DatasetSpec& spec,
                        IngestOptions options = {});

// Concatenates tables with identical column sets (column order follows the
// first table) and applies a seeded permutation to the rows.
RawFlowTable fuse(const std::vector<RawFlowTable>& tables, std::uint64_t seed);

// Seeded membership shuffle: floor(train_fraction * N) rows go to train.
// Rows keep their original relative order inside each part.
std::pair<RawFlowTable, RawFlowTable> split(const RawFlowTable& table,
                                            double train_fraction,
                                            std::uint64_t seed);

}  // namespace fsnt

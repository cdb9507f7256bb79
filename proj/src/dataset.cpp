#include "fsnt/dataset.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "fsnt/csv.hpp"
#include "fsnt/errors.hpp"

namespace fsnt {

namespace {

std::vector<std::string> string_list(const nlohmann::json& doc, const char* key) {
  if (!doc.contains(key)) return {};
  const auto& v = doc.at(key);
  if (!v.is_array()) throw ConfigError(std::string("dataset spec: '") + key + "' must be a list");
  std::vector<std::string> out;
  for (const auto& item : v) {
    if (!item.is_string()) {
      throw ConfigError(std::string("dataset spec: '") + key + "' must hold strings");
    }
    out.push_back(item.get<std::string>());
  }
  return out;
}

std::string required_string(const nlohmann::json& doc, const char* key) {
  if (!doc.contains(key) || !doc.at(key).is_string()) {
    throw ConfigError(std::string("dataset spec: missing string field '") + key + "'");
  }
  return doc.at(key).get<std::string>();
}

}  // namespace

void DatasetSpec::validate() const {
  if (categorical_fields.empty() && numerical_fields.empty()) {
    throw ConfigError("dataset spec '" + name + "': no features declared");
  }
  if (label_column.empty()) {
    throw ConfigError("dataset spec '" + name + "': missing label column");
  }
  std::unordered_map<std::string, const char*> role;
  auto claim = [&](const std::vector<std::string>& fields, const char* what) {
    for (const auto& f : fields) {
      auto [it, inserted] = role.emplace(f, what);
      if (!inserted) {
        throw ConfigError("dataset spec '" + name + "': overlapping field '" + f +
                          "' listed as both " + it->second + " and " + what);
      }
    }
  };
  claim(categorical_fields, "categorical");
  claim(numerical_fields, "numerical");
  claim(dropped_columns, "dropped");
  if (role.contains(label_column)) {
    throw ConfigError("dataset spec '" + name + "': label column '" + label_column +
                      "' is also listed as " + role.at(label_column));
  }
  if (class_column && (role.contains(*class_column) && role.at(*class_column) != std::string("dropped"))) {
    throw ConfigError("dataset spec '" + name + "': class column '" + *class_column +
                      "' is also listed as a feature");
  }
}

DatasetSpec parse_spec(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("dataset spec: expected a JSON object");
  DatasetSpec spec;
  spec.name = doc.value("name", std::string("dataset"));
  spec.categorical_fields = string_list(doc, "categorical_fields");
  spec.numerical_fields = string_list(doc, "numerical_fields");
  if (!doc.contains("label_column")) {
    throw ConfigError("dataset spec '" + spec.name + "': missing label column");
  }
  spec.label_column = required_string(doc, "label_column");
  spec.benign_label = required_string(doc, "benign_label");
  if (doc.contains("class_column") && !doc.at("class_column").is_null()) {
    spec.class_column = required_string(doc, "class_column");
  }
  spec.dropped_columns = string_list(doc, "dropped_columns");
  spec.validate();
  return spec;
}

nlohmann::json spec_to_json(const DatasetSpec& spec) {
  nlohmann::json doc;
  doc["name"] = spec.name;
  doc["categorical_fields"] = spec.categorical_fields;
  doc["numerical_fields"] = spec.numerical_fields;
  doc["label_column"] = spec.label_column;
  doc["benign_label"] = spec.benign_label;
  doc["class_column"] = spec.class_column ? nlohmann::json(*spec.class_column) : nlohmann::json();
  doc["dropped_columns"] = spec.dropped_columns;
  return doc;
}

DatasetSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset spec " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("dataset spec " + path.string() + ": parse failure: " + e.what());
  }
  return parse_spec(doc);
}

std::optional<std::size_t> RawFlowTable::find_column(const std::string& name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) return std::nullopt;
  return static_cast<std::size_t>(it - columns.begin());
}

std::size_t RawFlowTable::column_index(const std::string& name) const {
  if (auto i = find_column(name)) return *i;
  throw DataError("table has no column '" + name + "'");
}

RawFlowTable ingest_csv(const std::filesystem::path& path, const DatasetSpec& spec,
                        IngestOptions options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read flow file " + path.string());
  try {
    return ingest_csv(in, spec, options);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

RawFlowTable ingest_csv(std::istream& in, const DatasetSpec& spec, IngestOptions options) {
  csv::Reader reader(in);
  std::vector<std::string> header;
  if (!reader.next(header)) throw DataError("empty CSV (no header row)");
  if (!header.empty() && header[0].starts_with("\xEF\xBB\xBF")) header[0].erase(0, 3);

  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < header.size(); ++i) position.emplace(header[i], i);
  auto require = [&](const std::string& col) {
    if (!position.contains(col)) throw DataError("CSV header is missing declared column '" + col + "'");
  };
  for (const auto& f : spec.categorical_fields) require(f);
  for (const auto& f : spec.numerical_fields) require(f);
  if (spec.class_column) require(*spec.class_column);
  const bool has_label = position.contains(spec.label_column);
  if (options.require_label) require(spec.label_column);

  const std::unordered_set<std::string> dropped(spec.dropped_columns.begin(),
                                                spec.dropped_columns.end());
  const std::unordered_set<std::string> numerical(spec.numerical_fields.begin(),
                                                  spec.numerical_fields.end());
  const std::unordered_set<std::string> categorical(spec.categorical_fields.begin(),
                                                    spec.categorical_fields.end());
  enum class Kind { numerical, categorical, other };
  struct Keep {
    std::size_t source;
    Kind kind;
  };
  RawFlowTable table;
  table.has_labels = has_label;
  std::vector<Keep> keep;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (dropped.contains(header[i])) continue;
    Kind kind = numerical.contains(header[i])     ? Kind::numerical
                : categorical.contains(header[i]) ? Kind::categorical
                                                  : Kind::other;
    keep.push_back({i, kind});
    table.columns.push_back(header[i]);
  }
  const std::size_t label_pos = has_label ? position.at(spec.label_column) : 0;

  std::vector<std::string> fields;
  std::size_t data_row = 0;
  while (reader.next(fields)) {
    if (fields.size() == 1 && fields[0].empty() && header.size() > 1) continue;  // blank line
    if (fields.size() != header.size()) {
      throw DataError("row " + std::to_string(data_row) + " (line " +
                      std::to_string(reader.line()) + ") has " + std::to_string(fields.size()) +
                      " fields, header has " + std::to_string(header.size()));
    }
    std::vector<Cell> row;
    row.reserve(keep.size());
    for (const Keep& k : keep) {
      const std::string& raw = fields[k.source];
      switch (k.kind) {
        case Kind::numerical: {
          double v = 0.0;
          if (!raw.empty()) {
            char* end = nullptr;
            errno = 0;
            v = std::strtod(raw.c_str(), &end);
            if (end == raw.c_str() || *end != '\0' || !std::isfinite(v)) {
              throw DataError("row " + std::to_string(data_row) + ": column '" +
                              header[k.source] + "' has non-numeric value '" + raw + "'");
            }
            if (v < 0.0) v = 0.0;
          }
          row.emplace_back(v);
          break;
        }
        case Kind::categorical:
          row.emplace_back(raw.empty() ? std::string(kMissingCategory) : raw);
          break;
        case Kind::other:
          row.emplace_back(raw);
          break;
      }
    }
    table.rows.push_back(std::move(row));
    table.origin.push_back(spec.name);
    table.labels.push_back(has_label && fields[label_pos] != spec.benign_label ? 1 : 0);
    ++data_row;
  }
  return table;
}

RawFlowTable fuse(const std::vector<RawFlowTable>& tables, std::uint64_t seed) {
  RawFlowTable out;
  if (tables.empty()) return out;
  out.columns = tables.front().columns;
  out.has_labels = true;
  const std::set<std::string> reference(out.columns.begin(), out.columns.end());
  for (const auto& t : tables) {
    const std::set<std::string> cols(t.columns.begin(), t.columns.end());
    if (cols != reference || t.columns.size() != out.columns.size()) {
      std::vector<std::string> diff;
      std::set_symmetric_difference(reference.begin(), reference.end(), cols.begin(),
                                    cols.end(), std::back_inserter(diff));
      std::string listed;
      for (const auto& d : diff) listed += (listed.empty() ? "" : ", ") + d;
      throw DataError("fuse: schema mismatch, columns not shared: " + listed);
    }
    out.has_labels = out.has_labels && t.has_labels;
  }

  std::vector<Cell> reordered;
  for (const auto& t : tables) {
    std::vector<std::size_t> map;
    for (const auto& c : out.columns) map.push_back(t.column_index(c));
    for (std::size_t r = 0; r < t.row_count(); ++r) {
      reordered.clear();
      for (std::size_t m : map) reordered.push_back(t.rows[r][m]);
      out.rows.push_back(reordered);
      out.origin.push_back(t.origin[r]);
      out.labels.push_back(t.labels[r]);
    }
  }

  std::vector<std::size_t> perm(out.row_count());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  RawFlowTable shuffled;
  shuffled.columns = out.columns;
  shuffled.has_labels = out.has_labels;
  for (std::size_t i : perm) {
    shuffled.rows.push_back(std::move(out.rows[i]));
    shuffled.origin.push_back(out.origin[i]);
    shuffled.labels.push_back(out.labels[i]);
  }
  return shuffled;
}

std::pair<RawFlowTable, RawFlowTable> split(const RawFlowTable& table, double train_fraction,
                                            std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("split: train fraction must lie in (0, 1), got " +
                      std::to_string(train_fraction));
  }
  const std::size_t n = table.row_count();
  if (n == 0) throw DataError("split: empty table");
  const auto n_train = static_cast<std::size_t>(
      std::floor(train_fraction * static_cast<double>(n)));

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<char> in_train(n, 0);
  for (std::size_t i = 0; i < n_train; ++i) in_train[perm[i]] = 1;

  RawFlowTable train;
  RawFlowTable eval;
  for (RawFlowTable* part : {&train, &eval}) {
    part->columns = table.columns;
    part->has_labels = table.has_labels;
  }
  for (std::size_t r = 0; r < n; ++r) {
    RawFlowTable& dst = in_train[r] ? train : eval;
    dst.rows.push_back(table.rows[r]);
    dst.origin.push_back(table.origin[r]);
    dst.labels.push_back(table.labels[r]);
  }
  return {std::move(train), std::move(eval)};
}

}  // namespace fsnt

#include "fsnt/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "fsnt/errors.hpp"
#include "fsnt/hash.hpp"

namespace fsnt {

std::string to_string(EncodingMode mode) {
  return mode == EncodingMode::one_hot ? "one_hot" : "integer";
}

EncodingMode parse_encoding_mode(const std::string& s) {
  if (s == "one_hot") return EncodingMode::one_hot;
  if (s == "integer") return EncodingMode::integer;
  throw ConfigError("unknown encoding mode '" + s + "' (expected one_hot or integer)");
}

// ---- field states -----------------------------------------------------------

void CategoricalFieldState::rebuild_lookup() {
  lookup_.clear();
  for (std::size_t i = 0; i < top_categories.size(); ++i) {
    if (!lookup_.emplace(top_categories[i], i).second) {
      throw FormatError("categorical field '" + field + "' lists category '" +
                        top_categories[i] + "' twice");
    }
  }
}

std::size_t CategoricalFieldState::index_of(const std::string& value) const {
  if (lookup_.size() != top_categories.size()) {
    // Built by hand without rebuild_lookup(); fall back to a scan.
    auto it = std::find(top_categories.begin(), top_categories.end(), value);
    return static_cast<std::size_t>(it - top_categories.begin());
  }
  auto it = lookup_.find(value);
  return it == lookup_.end() ? other_index() : it->second;
}

double NumericalFieldState::scale(double x) const {
  if (max_log == min_log) return 0.5;
  const double scaled = (std::log1p(x) - min_log) / (max_log - min_log);
  return std::clamp(scaled, 0.0, 1.0);
}

// ---- state ------------------------------------------------------------------

std::size_t PreprocessorState::categorical_offset(std::size_t field) const {
  if (mode == EncodingMode::integer) return field;
  std::size_t off = 0;
  for (std::size_t i = 0; i < field; ++i) off += categorical[i].cardinality();
  return off;
}

std::size_t PreprocessorState::numerical_offset() const {
  return categorical_offset(categorical.size());
}

std::vector<std::size_t> PreprocessorState::cardinalities() const {
  std::vector<std::size_t> out;
  for (const auto& c : categorical) out.push_back(c.cardinality());
  return out;
}

nlohmann::json PreprocessorState::to_json() const {
  nlohmann::json doc;
  doc["format"] = "fsnt-preprocessor";
  doc["version"] = kFormatVersion;
  doc["mode"] = to_string(mode);
  doc["n_top"] = n_top;
  doc["feature_width"] = feature_width;
  doc["categorical"] = nlohmann::json::array();
  for (const auto& c : categorical) {
    doc["categorical"].push_back({{"field", c.field}, {"top_categories", c.top_categories}});
  }
  doc["numerical"] = nlohmann::json::array();
  for (const auto& n : numerical) {
    doc["numerical"].push_back({{"field", n.field}, {"min_log", n.min_log}, {"max_log", n.max_log}});
  }
  return doc;
}

PreprocessorState PreprocessorState::from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format") != "fsnt-preprocessor") {
      throw FormatError("not a preprocessor state document");
    }
    if (doc.at("version").get<int>() != kFormatVersion) {
      throw FormatError("unsupported preprocessor state version " +
                        doc.at("version").dump());
    }
    PreprocessorState s;
    s.mode = parse_encoding_mode(doc.at("mode").get<std::string>());
    s.n_top = doc.at("n_top").get<std::size_t>();
    for (const auto& c : doc.at("categorical")) {
      CategoricalFieldState fs;
      fs.field = c.at("field").get<std::string>();
      fs.top_categories = c.at("top_categories").get<std::vector<std::string>>();
      fs.rebuild_lookup();
      s.categorical.push_back(std::move(fs));
    }
    for (const auto& n : doc.at("numerical")) {
      NumericalFieldState ns{n.at("field").get<std::string>(), n.at("min_log").get<double>(),
                             n.at("max_log").get<double>()};
      if (!(ns.min_log <= ns.max_log) || !std::isfinite(ns.min_log) ||
          !std::isfinite(ns.max_log)) {
        throw FormatError("numerical field '" + ns.field + "' has invalid extrema");
      }
      s.numerical.push_back(std::move(ns));
    }
    s.feature_width = doc.at("feature_width").get<std::size_t>();
    const std::size_t expected = s.numerical_offset() + s.numerical.size();
    if (s.feature_width != expected) {
      throw FormatError("feature_width " + std::to_string(s.feature_width) +
                        " disagrees with the field layout (" + std::to_string(expected) + ")");
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("preprocessor state: ") + e.what());
  }
}

std::string PreprocessorState::hash() const { return sha256_hex(to_json().dump()); }

// ---- fit / transform ----------------------------------------------------------

PreprocessorState fit(const RawFlowTable& train, const DatasetSpec& spec, std::size_t n_top,
                      EncodingMode mode) {
  if (train.row_count() == 0) throw DataError("fit: empty training table");
  if (n_top < 1) throw ConfigError("fit: n_top must be >= 1");
  PreprocessorState state;
  state.mode = mode;
  state.n_top = n_top;

  for (const auto& field : spec.categorical_fields) {
    const std::size_t col = train.column_index(field);
    std::map<std::string, std::size_t> counts;  // ordered -> lexicographic ties
    for (const auto& row : train.rows) {
      const auto* s = std::get_if<std::string>(&row[col]);
      if (!s) throw DataError("fit: categorical column '" + field + "' holds a number");
      ++counts[*s];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    CategoricalFieldState fs;
    fs.field = field;
    for (std::size_t i = 0; i < ranked.size() && i < n_top; ++i) {
      fs.top_categories.push_back(ranked[i].first);
    }
    fs.rebuild_lookup();
    state.categorical.push_back(std::move(fs));
  }

  for (const auto& field : spec.numerical_fields) {
    const std::size_t col = train.column_index(field);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& row : train.rows) {
      const auto* v = std::get_if<double>(&row[col]);
      if (!v) throw DataError("fit: numerical column '" + field + "' holds a string");
      const double l = std::log1p(*v);
      lo = std::min(lo, l);
      hi = std::max(hi, l);
    }
    state.numerical.push_back({field, lo, hi});
  }

  state.feature_width = state.numerical_offset() + state.numerical.size();
  return state;
}

std::vector<double> encode_categorical(const std::string& value,
                                       const CategoricalFieldState& field_state,
                                       EncodingMode mode) {
  const std::size_t idx = field_state.index_of(value);
  if (mode == EncodingMode::integer) return {static_cast<double>(idx)};
  std::vector<double> out(field_state.cardinality(), 0.0);
  out[idx] = 1.0;
  return out;
}

EncodedFlows transform(const RawFlowTable& table, const PreprocessorState& state) {
  std::vector<std::size_t> cat_cols;
  std::vector<std::size_t> num_cols;
  for (const auto& c : state.categorical) cat_cols.push_back(table.column_index(c.field));
  for (const auto& n : state.numerical) num_cols.push_back(table.column_index(n.field));

  EncodedFlows out;
  out.width = state.feature_width;
  out.values.assign(table.row_count() * out.width, 0.0);
  out.labels = table.labels;
  const std::size_t num_off = state.numerical_offset();
  for (std::size_t r = 0; r < table.row_count(); ++r) {
    double* dst = out.values.data() + r * out.width;
    const auto& row = table.rows[r];
    for (std::size_t f = 0; f < cat_cols.size(); ++f) {
      const auto* s = std::get_if<std::string>(&row[cat_cols[f]]);
      if (!s) throw DataError("transform: categorical column '" + state.categorical[f].field + "' holds a number");
      const std::size_t idx = state.categorical[f].index_of(*s);
      if (state.mode == EncodingMode::integer) {
        dst[f] = static_cast<double>(idx);
      } else {
        dst[state.categorical_offset(f) + idx] = 1.0;
      }
    }
    for (std::size_t f = 0; f < num_cols.size(); ++f) {
      const auto* v = std::get_if<double>(&row[num_cols[f]]);
      if (!v) throw DataError("transform: numerical column '" + state.numerical[f].field + "' holds a string");
      const double scaled = state.numerical[f].scale(*v);
      if (!std::isfinite(scaled)) {
        throw NumericError("transform: non-finite value in '" + state.numerical[f].field + "'");
      }
      dst[num_off + f] = scaled;
    }
  }
  return out;
}

// ---- windows -----------------------------------------------------------------

WindowSet::WindowSet(std::shared_ptr<const EncodedFlows> flows, std::size_t window)
    : flows_(std::move(flows)), window_(window), width_(flows_ ? flows_->width : 0) {
  if (window_ < 1) throw ConfigError("window length must be >= 1");
}

WindowSet WindowSet::from_windows(std::vector<EncodedWindow> windows) {
  WindowSet set;
  if (!windows.empty()) {
    set.window_ = windows.front().features.rows();
    set.width_ = windows.front().features.cols();
    for (const auto& w : windows) {
      if (w.features.rows() != set.window_ || w.features.cols() != set.width_) {
        throw ShapeError("from_windows: windows have differing shapes");
      }
    }
  }
  set.explicit_ = std::move(windows);
  return set;
}

std::size_t WindowSet::size() const {
  return flows_ ? flows_->count() : explicit_.size();
}

int WindowSet::label(std::size_t i) const {
  return flows_ ? flows_->labels.at(i) : explicit_.at(i).label;
}

std::size_t WindowSet::pad_count(std::size_t i) const {
  if (!flows_) return explicit_.at(i).pad_count;
  return i + 1 >= window_ ? 0 : window_ - 1 - i;
}

void WindowSet::copy_features(std::size_t i, double* dst) const {
  if (!flows_) {
    const Tensor& f = explicit_.at(i).features;
    std::copy_n(f.data(), f.size(), dst);
    return;
  }
  if (i >= flows_->count()) throw ShapeError("window index out of range");
  const std::size_t pad = pad_count(i);
  std::fill_n(dst, pad * width_, 0.0);
  const std::size_t first = i + 1 + pad - window_;
  std::copy_n(flows_->row(first), (window_ - pad) * width_, dst + pad * width_);
}

EncodedWindow WindowSet::at(std::size_t i) const {
  if (!flows_) return explicit_.at(i);
  EncodedWindow w;
  w.features = Tensor({window_, width_});
  copy_features(i, w.features.data());
  w.label = label(i);
  w.pad_count = pad_count(i);
  return w;
}

WindowSet WindowSet::subset(const std::vector<std::size_t>& indices) const {
  std::vector<EncodedWindow> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(at(i));
  return from_windows(std::move(out));
}

WindowSet make_windows(EncodedFlows encoded, std::size_t window) {
  if (window < 1) throw ConfigError("make_windows: T must be >= 1");
  return WindowSet(std::make_shared<const EncodedFlows>(std::move(encoded)), window);
}

}  // namespace fsnt

#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsnt/dataset.hpp"
#include "fsnt/tensor.hpp"

namespace fsnt {

enum class EncodingMode { one_hot, integer };

std::string to_string(EncodingMode mode);
EncodingMode parse_encoding_mode(const std::string& s);

struct CategoricalFieldState {
  std::string field;
  // Most frequent training categories, descending count, ties lexicographic.
  std::vector<std::string> top_categories;

  std::size_t other_index() const { return top_categories.size(); }
  std::size_t cardinality() const { return top_categories.size() + 1; }
  // Index of `value`, or other_index() for unseen/overflow categories.
  std::size_t index_of(const std::string& value) const;

  void rebuild_lookup();

 private:
  std::unordered_map<std::string, std::size_t> lookup_;
};

struct NumericalFieldState {
  std::string field;
  double min_log = 0.0;
  double max_log = 0.0;

  // clamp((log1p(x) - min_log) / (max_log - min_log), 0, 1); 0.5 when the
  // training column was constant.
  double scale(double x) const;
};

struct PreprocessorState {
  static constexpr int kFormatVersion = 1;

  EncodingMode mode = EncodingMode::one_hot;
  std::size_t n_top = 32;
  std::vector<CategoricalFieldState> categorical;
  std::vector<NumericalFieldState> numerical;
  std::size_t feature_width = 0;

  // Encoded vector layout: categorical fields first (spec order), then the
  // numerical fields. One-hot mode spends cardinality() slots per field,
  // integer mode one slot holding the category index.
  std::size_t categorical_offset(std::size_t field) const;
  std::size_t numerical_offset() const;
  std::vector<std::size_t> cardinalities() const;

  nlohmann::json to_json() const;
  static PreprocessorState from_json(const nlohmann::json& doc);
  // SHA-256 of the canonical JSON dump; recorded in checkpoints.
  std::string hash() const;
};

inline constexpr std::size_t kDefaultTopN = 32;
inline constexpr std::size_t kDefaultWindow = 8;

// Fits category maps and log-space extrema on the training table only.
PreprocessorState fit(const RawFlowTable& train, const DatasetSpec& spec,
                      std::size_t n_top, EncodingMode mode);

// One-hot: vector of cardinality() with a single 1. Integer: one element
// holding the category index.
std::vector<double> encode_categorical(const std::string& value,
                                       const CategoricalFieldState& field_state,
                                       EncodingMode mode);

// Row-major N x width matrix of encoded flows with their binary labels.
struct EncodedFlows {
  std::size_t width = 0;
  std::vector<double> values;
  std::vector<int> labels;

  std::size_t count() const { return labels.size(); }
  const double* row(std::size_t i) const { return values.data() + i * width; }
};

EncodedFlows transform(const RawFlowTable& table, const PreprocessorState& state);

struct EncodedWindow {
  Tensor features;  // T x width, oldest flow first
  int label = 0;    // label of the last flow
  std::size_t pad_count = 0;
};

// Indexed collection of windows. Either a sliding view over an encoded
// flow stream (one window per flow, zero left-padding at the stream start)
// or an explicit list of windows.
class WindowSet {
 public:
  WindowSet() = default;
  WindowSet(std::shared_ptr<const EncodedFlows> flows, std::size_t window);
  static WindowSet from_windows(std::vector<EncodedWindow> windows);

  std::size_t size() const;
  bool empty() const { return size() == 0; }
  std::size_t window() const { return window_; }
  std::size_t width() const { return width_; }

  int label(std::size_t i) const;
  std::size_t pad_count(std::size_t i) const;
  EncodedWindow at(std::size_t i) const;
  // Writes window i as window() x width() values at dst.
  void copy_features(std::size_t i, double* dst) const;

  // Windows at the given positions, materialized.
  WindowSet subset(const std::vector<std::size_t>& indices) const;

 private:
  std::shared_ptr<const EncodedFlows> flows_;
  std::vector<EncodedWindow> explicit_;
  std::size_t window_ = 0;
  std::size_t width_ = 0;
};

WindowSet make_windows(EncodedFlows encoded, std::size_t window);

}  // namespace fsnt

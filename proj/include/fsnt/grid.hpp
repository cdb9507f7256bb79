#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsnt/clock.hpp"
#include "fsnt/model.hpp"
#include "fsnt/training.hpp"

namespace fsnt {

// Value lists for the seven searched dimensions. Cells are the Cartesian
// product, enumerated with the last list varying fastest.
struct GridSpec {
  std::vector<InputEncodingKind> input_encodings;
  std::vector<BlockType> block_types;
  std::vector<std::size_t> layers;
  std::vector<std::size_t> d_ff;
  std::vector<std::size_t> heads;
  std::vector<HeadKind> classification_heads;
  std::vector<double> learning_rates;

  void validate() const;
  std::size_t cell_count() const;
  nlohmann::json to_json() const;
  static GridSpec from_json(const nlohmann::json& doc);
};

struct GridCell {
  ModelConfig model;
  double learning_rate = 0.0;
};

struct GridRow {
  std::size_t cell = 0;
  GridCell config;
  std::size_t best_repeat = 0;
  std::uint64_t best_seed = 0;
  double f1 = 0.0;
  double accuracy = 0.0;
  double false_alarm_rate = 0.0;
  double eval_loss = 0.0;
  std::size_t param_count = 0;
  double train_flows_per_sec = 0.0;
  double inference_flows_per_sec = 0.0;
};

struct SkippedCell {
  std::size_t cell = 0;
  GridCell config;
  std::string reason;
};

struct GridResult {
  std::vector<GridRow> rows;
  std::vector<SkippedCell> skipped;

  std::string to_csv() const;
  nlohmann::json to_json() const;
};

struct GridOptions {
  std::size_t threads = 1;
  Clock* clock = nullptr;  // defaults to the real clock
  std::function<void(const std::string&)> log;
};

// splitmix64 step; derives per-cell and per-repeat seeds from the master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t cell, std::uint64_t repeat);

std::vector<GridCell> enumerate_cells(const GridSpec& spec, const ModelConfig& base);

// Trains train_config.repeats models per valid cell and keeps the repeat with
// the highest eval F1 (lower eval loss, then lower repeat index break ties).
GridResult grid_search(const GridSpec& spec, const ModelConfig& base_model,
                       const FeatureLayout& layout, const WindowSet& train_windows,
                       const WindowSet& eval_windows, const TrainConfig& train_config,
                       std::uint64_t master_seed, const GridOptions& options = {});

}  // namespace fsnt

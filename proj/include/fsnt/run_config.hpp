#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsnt/bench.hpp"
#include "fsnt/dataset.hpp"
#include "fsnt/grid.hpp"
#include "fsnt/model.hpp"
#include "fsnt/preprocess.hpp"
#include "fsnt/training.hpp"

namespace fsnt {

struct DatasetSource {
  std::filesystem::path spec_path;
  std::filesystem::path csv_path;
  DatasetSpec spec;
};

// One reproducible run. Relative paths resolve against the config file's
// directory.
//
//   {
//     "datasets": [{"spec": "a.json", "csv": "a.csv"}],
//     "fusion_seed": 0,
//     "split": {"train_fraction": 0.8, "seed": 0},
//     "preprocess": {"n_top": 32, "mode": "one_hot", "window": 8},
//     "model": {...}, "train": {...}, "bench": {...}, "grid": {...},
//     "seed": 0,
//     "output_dir": "runs/demo"
//   }
struct RunConfig {
  std::vector<DatasetSource> datasets;
  std::uint64_t fusion_seed = 0;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 0;
  std::size_t n_top = kDefaultTopN;
  EncodingMode mode = EncodingMode::one_hot;
  std::size_t window = kDefaultWindow;
  ModelConfig model;
  TrainConfig train;
  BenchConfig bench;
  std::optional<GridSpec> grid;
  std::uint64_t seed = 0;  // grid master seed
  std::filesystem::path output_dir;
  std::filesystem::path source_path;
  nlohmann::json document;

  // Throws ConfigError on malformed JSON, invalid nested configs, or
  // referenced files that do not exist.
  static RunConfig load(const std::filesystem::path& path);
  static RunConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);

  // Applies a --seed override to every seeded stage.
  void override_seed(std::uint64_t s);
  std::string hash() const;
};

struct PreparedData {
  PreprocessorState state;
  WindowSet train;
  WindowSet eval;
  std::size_t train_flows = 0;
  std::size_t eval_flows = 0;
};

// Ingest, fuse, split, then either fit the preprocessor on the training part
// or reuse `state` when given.
PreparedData prepare_data(const RunConfig& config,
                          const std::optional<PreprocessorState>& state = std::nullopt);

PreprocessorState load_preprocessor(const std::filesystem::path& path);
void save_preprocessor(const std::filesystem::path& path, const PreprocessorState& state);

// ---- manifests -----------------------------------------------------------------

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  std::string sha256;
};

struct Manifest {
  std::string command;
  std::string config_hash;
  nlohmann::json seeds;
  std::vector<ManifestEntry> datasets;  // absolute or config-relative paths
  std::vector<ManifestEntry> files;
  std::string tool_version;

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& doc);
};

// Hashes `files` (relative to out_dir) and writes out_dir/manifest.json.
Manifest run_manifest(const std::filesystem::path& out_dir, const std::string& command,
                      const RunConfig* config, const std::vector<std::string>& files);

// Returns one message per missing or modified file; empty means intact.
std::vector<std::string> verify_manifest(const std::filesystem::path& manifest_path);

std::string tool_version();

}  // namespace fsnt

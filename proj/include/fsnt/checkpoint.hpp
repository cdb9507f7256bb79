#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fsnt/model.hpp"

namespace fsnt {

// Little-endian binary layout:
//   "FSNT" | u32 version | u32 header_len | header JSON (config, layout,
//   preprocessor hash) | u32 tensor_count | per tensor: u32 name_len, name,
//   u32 rank, u64 extents[rank], f64 values[prod(extents)]
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string save_checkpoint(const Model& model, const std::string& preprocessor_hash);

struct LoadedCheckpoint {
  Model model;
  std::string preprocessor_hash;
  // Non-fatal findings, e.g. a preprocessor hash that differs from the one
  // the caller expects.
  std::vector<std::string> warnings;
};

// Throws FormatError on a bad magic/version, truncated payload, or tensors
// that disagree with the shapes the stored config implies.
LoadedCheckpoint load_checkpoint(std::string_view bytes,
                                 const std::string& expected_preprocessor_hash = {});

void write_checkpoint_file(const std::filesystem::path& path, const Model& model,
                           const std::string& preprocessor_hash);
LoadedCheckpoint read_checkpoint_file(const std::filesystem::path& path,
                                      const std::string& expected_preprocessor_hash = {});

}  // namespace fsnt

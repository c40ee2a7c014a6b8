#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "mis/optim.hpp"

namespace mis {

// Checkpoint layout, little-endian:
//   "MISC", u32 version, u32 dtype (0 = f32, 1 = f64), str config, u64 step,
//   u32 count, count x {str name, u32 rank, rank x u32 extent, u64 offset,
//   u32 has_moments}, u64 data size, data, u64 FNV-1a of all preceding bytes.
// Each data record is the values followed, when present, by the first and
// second Adam moments.
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterStore<T>& store, const std::string& config);

/// Restores values, Adam moments and step into a store whose parameter
/// names and shapes match the file. Returns the stored config text. Throws
/// FormatError for foreign, corrupt or mismatched files and IoError when
/// the file cannot be read.
template <typename T>
std::string load_checkpoint(const std::filesystem::path& path, ParameterStore<T>& store);

/// Reads only the config text, so a model can be built before loading.
std::string read_checkpoint_config(const std::filesystem::path& path);

}  // namespace mis

#pragma once

// "MTS3DAT1" dataset files: 8-byte magic, little-endian u32 {version, B, T, d_o, d_a},
// f32 observations, f32 actions, u8 valid flags, u32 length + UTF-8 JSON metadata.

#include <string>
#include <vector>

#include "mts3/datagen.hpp"

namespace mts3 {

inline constexpr unsigned kDatasetVersion = 1;

std::vector<char> encode_dataset(const TrajectoryBatch& batch);
TrajectoryBatch decode_dataset(const std::vector<char>& bytes);

void write_dataset(const std::string& path, const TrajectoryBatch& batch);
/// Throws DataError on missing files, bad magic, truncation or invalid contents.
TrajectoryBatch read_dataset(const std::string& path);

std::string norm_stats_to_json(const NormStats& s);
NormStats norm_stats_from_json(const std::string& text);

}  // namespace mts3

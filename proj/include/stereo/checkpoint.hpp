#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stereo/parameters.hpp"

namespace stereo {

// Binary layout, all integers little-endian uint32:
//   version | count | count x (name_len, utf8 name) | count x (rank, extents..., f32 LE data)
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

std::vector<uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> decode_checkpoint(const std::vector<uint8_t>& bytes);

std::vector<CheckpointEntry> snapshot(const ParameterSet& params);
// Copies values into `params`. Every entry in `params` must be present with an
// identical shape; extra entries in the file are ignored unless `strict`.
void restore(ParameterSet& params, const std::vector<CheckpointEntry>& entries, bool strict = true);

void save_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> load_checkpoint(const std::filesystem::path& path);

} // namespace stereo

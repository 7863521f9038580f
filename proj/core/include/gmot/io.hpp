#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "gmot/geometry.hpp"
#include "gmot/neural.hpp"

namespace gmot::io {

// Shortest decimal representation that parses back to the same double.
std::string format_double(double v);

// CSV with header x0,...,x{d-1},weight and one row per point.
void write_points_csv(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_points_csv(const std::filesystem::path& path);

// ASCII PLY with one vertex element; coordinates are named x, y, z when d = 3
// and x0, x1, ... otherwise, followed by a weight property.
void write_points_ply(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_points_ply(const std::filesystem::path& path);

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  std::string name;
};

struct Checkpoint {
  nn::MlpMap map;
  CheckpointMeta meta;
};

// JSON document: header (layer_dims, residual, seed, step, name) plus one
// {weight, bias} entry per layer, weights as row lists.
std::string checkpoint_to_json(const nn::MlpMap& map, const CheckpointMeta& meta);
Checkpoint checkpoint_from_json(const std::string& text);
void save_checkpoint(const std::filesystem::path& path, const nn::MlpMap& map,
                     const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace gmot::io

#pragma once

#include <cstdint>
#include <vector>

#include "milpf/embedset.hpp"

namespace milpf {

struct GridSpec {
  std::int32_t image_width = 0;
  std::int32_t image_height = 0;
  std::int32_t tile_size = 0;
  double overlap_fraction = 0.0;

  // round-half-up(tile_size * (1 - overlap)); throws ConfigError if < 1.
  std::int32_t stride() const;
};

// Start offsets along one axis. The last tile is clamped so its far edge
// meets the image edge; an axis shorter than the tile gets one start at 0.
std::vector<std::int32_t> axis_starts(std::int32_t length, std::int32_t tile, std::int32_t stride);

// Row-major tiles, all with view_index 0.
std::vector<TileGeom> tile_grid(const GridSpec& spec);

// Number of grid tiles containing pixel (x, y). Throws std::out_of_range
// outside the image.
int coverage_count(const GridSpec& spec, std::int32_t x, std::int32_t y);

// Per-axis coverage counts; coverage_count(x, y) == cx[x] * cy[y].
std::vector<int> axis_coverage(std::int32_t length, std::int32_t tile, std::int32_t stride);

}  // namespace milpf

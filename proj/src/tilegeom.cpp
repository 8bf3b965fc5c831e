#include "milpf/tilegeom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "milpf/error.hpp"

namespace milpf {

namespace {

void check(const GridSpec& s) {
  if (s.image_width < 1 || s.image_height < 1) throw ConfigError("grid: image dimensions must be >= 1");
  if (s.tile_size < 1) throw ConfigError("grid: tile_size must be >= 1");
  if (!(s.overlap_fraction >= 0.0 && s.overlap_fraction < 1.0))
    throw ConfigError("grid: overlap must lie in [0, 1)");
}

}  // namespace

std::int32_t GridSpec::stride() const {
  const double raw = static_cast<double>(tile_size) * (1.0 - overlap_fraction);
  const auto s = static_cast<std::int32_t>(std::floor(raw + 0.5));
  if (s < 1)
    throw ConfigError("grid: stride rounds to " + std::to_string(s) + " for tile " +
                      std::to_string(tile_size) + " at overlap " + std::to_string(overlap_fraction));
  return s;
}

std::vector<std::int32_t> axis_starts(std::int32_t length, std::int32_t tile, std::int32_t stride) {
  if (tile >= length) return {0};
  std::vector<std::int32_t> starts;
  for (std::int32_t p = 0; p + tile <= length; p += stride) starts.push_back(p);
  if (starts.back() + tile < length) starts.push_back(length - tile);
  starts.erase(std::unique(starts.begin(), starts.end()), starts.end());
  return starts;
}

std::vector<TileGeom> tile_grid(const GridSpec& spec) {
  check(spec);
  const auto stride = spec.stride();
  const auto xs = axis_starts(spec.image_width, spec.tile_size, stride);
  const auto ys = axis_starts(spec.image_height, spec.tile_size, stride);
  const auto w = std::min(spec.tile_size, spec.image_width);
  const auto h = std::min(spec.tile_size, spec.image_height);
  std::vector<TileGeom> tiles;
  tiles.reserve(xs.size() * ys.size());
  for (auto y : ys)
    for (auto x : xs) tiles.push_back({0, x, y, x + w, y + h});
  return tiles;
}

std::vector<int> axis_coverage(std::int32_t length, std::int32_t tile, std::int32_t stride) {
  std::vector<int> diff(static_cast<std::size_t>(length) + 1, 0);
  const auto extent = std::min(tile, length);
  for (auto p : axis_starts(length, tile, stride)) {
    ++diff[static_cast<std::size_t>(p)];
    --diff[static_cast<std::size_t>(p + extent)];
  }
  std::vector<int> cover(static_cast<std::size_t>(length));
  int run = 0;
  for (std::int32_t i = 0; i < length; ++i) cover[static_cast<std::size_t>(i)] = run += diff[static_cast<std::size_t>(i)];
  return cover;
}

int coverage_count(const GridSpec& spec, std::int32_t x, std::int32_t y) {
  check(spec);
  if (x < 0 || y < 0 || x >= spec.image_width || y >= spec.image_height)
    throw std::out_of_range("pixel (" + std::to_string(x) + "," + std::to_string(y) +
                            ") outside " + std::to_string(spec.image_width) + "x" +
                            std::to_string(spec.image_height) + " image");
  const auto stride = spec.stride();
  auto count = [&](std::int32_t length, std::int32_t c) {
    const auto extent = std::min(spec.tile_size, length);
    int n = 0;
    for (auto p : axis_starts(length, spec.tile_size, stride)) n += (p <= c && c < p + extent);
    return n;
  };
  return count(spec.image_width, x) * count(spec.image_height, y);
}

}  // namespace milpf

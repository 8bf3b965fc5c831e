#pragma once

// Attention heatmaps from the local stream and box extraction from them.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "milpf/embedset.hpp"
#include "milpf/matrix.hpp"
#include "milpf/metrics.hpp"
#include "milpf/milhead.hpp"

namespace milpf {

struct Heatmap {
  std::string view_id;
  std::int32_t width = 0;
  std::int32_t height = 0;
  Matrix<double> heat;  // height x width, max-normalized to [0,1]
};

struct WeightedTile {
  TileGeom geom;
  double weight = 0.0;
};

// raw(p) = sum of weights of tiles covering p / coverage_count(p), where the
// coverage is that of the full grid at `overlap`; heat = raw / max(raw).
// Throws DataError for tiles outside the view.
Heatmap attention_heatmap(const ViewRecord& view, const std::vector<WeightedTile>& tiles,
                          double overlap);

// Unnormalized raw(p) from the formula above.
Matrix<double> raw_attention(const ViewRecord& view, const std::vector<WeightedTile>& tiles,
                             double overlap);

// One heatmap per view of the bag, from the bag-wide attention softmax.
std::vector<Heatmap> bag_heatmaps(const EmbedBag& bag, const HeadParams& p, double overlap);

// 8-connected components of {heat >= threshold}; bounding box per component,
// score = peak heat, sorted by descending score.
std::vector<ScoredBox> boxes_from_heatmap(const Heatmap& h, double threshold = 0.5);

// Binary PGM (P5, maxval 255).
void write_pgm(const Heatmap& h, const std::filesystem::path& path);
Heatmap read_pgm(const std::filesystem::path& path);

}  // namespace milpf

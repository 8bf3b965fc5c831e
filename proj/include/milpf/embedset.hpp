#pragma once

// Embeddings dataset: bags of precomputed global (per-view) and tile
// embeddings, their on-disk container, patient-grouped splitting and a
// synthetic sparse-signal generator.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "milpf/matrix.hpp"

namespace milpf {

enum class Split : std::uint8_t { unassigned, train, val, test };

const char* to_string(Split s);
Split split_from_string(const std::string& s);

struct ViewRecord {
  std::string view_id;
  std::int32_t width = 0;
  std::int32_t height = 0;
  std::int32_t tile_size = 0;

  bool operator==(const ViewRecord&) const = default;
};

// Half-open pixel box of one tile, in the coordinates of views[view_index].
struct TileGeom {
  std::int32_t view_index = 0;
  std::int32_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  bool operator==(const TileGeom&) const = default;
};

struct EmbedBag {
  std::string bag_id;
  std::string patient_id;
  int label = 0;
  Split split = Split::unassigned;
  std::vector<ViewRecord> views;
  Matrix<float> global_embeds;  // one row per view
  Matrix<float> tile_embeds;    // all tiles of all views, grouped by view
  std::vector<TileGeom> tile_geoms;
  // Indices into tile_embeds of tiles carrying planted signal. Only synthetic
  // data fills this; it is the localization ground truth.
  std::vector<std::int32_t> planted_tiles;

  std::size_t n_views() const { return views.size(); }
  std::size_t n_tiles() const { return tile_embeds.rows; }
  // [begin, end) tile rows belonging to one view.
  std::pair<std::size_t, std::size_t> view_tile_range(std::size_t view) const;

  bool operator==(const EmbedBag&) const = default;
};

struct EmbedDataset {
  std::string encoder_name;
  std::size_t embed_dim = 0;
  std::int32_t tile_size = 0;
  std::vector<EmbedBag> bags;

  std::map<std::string, Split> split_assignments() const;
  std::vector<std::size_t> indices(Split s) const;
  const EmbedBag& find(const std::string& bag_id) const;

  bool operator==(const EmbedDataset&) const = default;
};

// Throws DataError naming the offending bag (or patient, for leakage).
void validate(const EmbedDataset& ds);

void write_dataset(const EmbedDataset& ds, const std::filesystem::path& dir);
EmbedDataset read_dataset(const std::filesystem::path& dir);

struct SplitRatios {
  double train = 0.70;
  double val = 0.10;
  double test = 0.20;
};

// Patient-grouped split stratified on each patient's maximum label.
std::map<std::string, Split> split_patients(const std::vector<EmbedBag>& bags,
                                            SplitRatios ratios, std::uint64_t seed);
void apply_splits(EmbedDataset& ds, const std::map<std::string, Split>& assignments);

struct IntRange {
  int lo = 0;
  int hi = 0;
};

struct SynthConfig {
  std::size_t n_bags = 600;
  std::size_t d = 32;
  IntRange views_per_bag{1, 3};
  IntRange tiles_per_view{20, 200};
  IntRange signal_tiles_per_positive{1, 3};
  IntRange bags_per_patient{1, 2};
  double positive_fraction = 0.5;
  double signal_shift = 2.0;
  double noise_scale = 1.0;
  std::int32_t tile_size = 64;
  std::uint64_t seed = 7;
};

// Deterministic in cfg. Bags come back unassigned; call split_patients next.
EmbedDataset synth_dataset(const SynthConfig& cfg);

// The fixed unit direction synth_dataset plants its signal along.
std::vector<double> synth_signal_direction(const SynthConfig& cfg);

}  // namespace milpf

#include "milpf/embedset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "milpf/error.hpp"

namespace milpf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;
constexpr const char* kFormatTag = "milpf.embeddings";

template <class T>
T to_little_endian(T v) {
  static_assert(sizeof(T) == 4);
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    u = (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
    std::memcpy(&v, &u, 4);
    return v;
  }
}

template <class T>
void write_array(const fs::path& path, const std::vector<T>& values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  for (T v : values) {
    const T le = to_little_endian(v);
    out.write(reinterpret_cast<const char*>(&le), sizeof(T));
  }
  if (!out) throw DataError("write failed: " + path.string());
}

template <class T>
std::vector<T> read_array(const fs::path& path, std::size_t expected_count, std::size_t row_len,
                          const char* what) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("missing payload file " + path.string());
  const auto found = static_cast<std::size_t>(in.tellg());
  const std::size_t expected = expected_count * sizeof(T);
  if (found != expected) {
    std::ostringstream msg;
    msg << path.filename().string() << ": expected " << expected << " bytes, found " << found;
    const std::size_t rows = row_len ? expected_count / row_len : 0;
    if (rows > 0 && found % (rows * sizeof(T)) == 0 && found != 0)
      msg << " (dimension mismatch: manifest declares " << row_len << " " << what
          << " per row, payload holds " << found / (rows * sizeof(T)) << ")";
    else if (found < expected)
      msg << " (truncated)";
    throw DataError(msg.str());
  }
  in.seekg(0);
  std::vector<T> values(expected_count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(expected));
  if (!in) throw DataError("read failed: " + path.string());
  for (T& v : values) v = to_little_endian(v);
  return values;
}

std::string bag_context(const EmbedBag& b) { return "bag '" + b.bag_id + "'"; }

}  // namespace

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unassigned: break;
  }
  return "unassigned";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "unassigned") return Split::unassigned;
  throw DataError("unknown split '" + s + "'");
}

std::pair<std::size_t, std::size_t> EmbedBag::view_tile_range(std::size_t view) const {
  // Tiles are grouped by view in non-decreasing view_index order.
  auto lo = std::lower_bound(tile_geoms.begin(), tile_geoms.end(), static_cast<std::int32_t>(view),
                             [](const TileGeom& g, std::int32_t v) { return g.view_index < v; });
  auto hi = std::upper_bound(lo, tile_geoms.end(), static_cast<std::int32_t>(view),
                             [](std::int32_t v, const TileGeom& g) { return v < g.view_index; });
  return {static_cast<std::size_t>(lo - tile_geoms.begin()),
          static_cast<std::size_t>(hi - tile_geoms.begin())};
}

std::map<std::string, Split> EmbedDataset::split_assignments() const {
  std::map<std::string, Split> out;
  for (const auto& b : bags) out[b.bag_id] = b.split;
  return out;
}

std::vector<std::size_t> EmbedDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < bags.size(); ++i)
    if (bags[i].split == s) out.push_back(i);
  return out;
}

const EmbedBag& EmbedDataset::find(const std::string& bag_id) const {
  for (const auto& b : bags)
    if (b.bag_id == bag_id) return b;
  throw DataError("no bag with id '" + bag_id + "'");
}

void validate(const EmbedDataset& ds) {
  std::set<std::string> ids;
  std::map<std::string, std::pair<Split, std::string>> patient_split;
  for (const auto& b : ds.bags) {
    const std::string ctx = bag_context(b);
    if (b.bag_id.empty()) throw DataError("bag with empty bag_id");
    if (!ids.insert(b.bag_id).second) throw DataError("duplicate bag_id '" + b.bag_id + "'");
    if (b.label != 0 && b.label != 1)
      throw DataError(ctx + ": label must be 0 or 1, got " + std::to_string(b.label));
    if (b.views.empty()) throw DataError(ctx + ": bag has no views");
    if (b.global_embeds.rows != b.views.size())
      throw DataError(ctx + ": " + std::to_string(b.global_embeds.rows) +
                      " global embeddings for " + std::to_string(b.views.size()) + " views");
    if (b.global_embeds.cols != ds.embed_dim || b.tile_embeds.cols != ds.embed_dim)
      throw DataError(ctx + ": embedding dimension differs from dataset embed_dim " +
                      std::to_string(ds.embed_dim));
    if (b.tile_geoms.size() != b.tile_embeds.rows)
      throw DataError(ctx + ": tile geometry count does not match tile embedding rows");
    for (const auto& v : b.views)
      if (v.width < 1 || v.height < 1 || v.tile_size < 1)
        throw DataError(ctx + ": view '" + v.view_id + "' has non-positive geometry");
    std::int32_t prev_view = 0;
    for (std::size_t t = 0; t < b.tile_geoms.size(); ++t) {
      const auto& g = b.tile_geoms[t];
      if (g.view_index < 0 || static_cast<std::size_t>(g.view_index) >= b.views.size())
        throw DataError(ctx + ": tile " + std::to_string(t) + " references view " +
                        std::to_string(g.view_index));
      if (g.view_index < prev_view)
        throw DataError(ctx + ": tiles are not grouped by view");
      prev_view = g.view_index;
      const auto& v = b.views[static_cast<std::size_t>(g.view_index)];
      if (!(0 <= g.x0 && g.x0 < g.x1 && g.x1 <= v.width && 0 <= g.y0 && g.y0 < g.y1 &&
            g.y1 <= v.height))
        throw DataError(ctx + ": tile " + std::to_string(t) + " lies outside view '" +
                        v.view_id + "'");
    }
    for (auto t : b.planted_tiles)
      if (t < 0 || static_cast<std::size_t>(t) >= b.n_tiles())
        throw DataError(ctx + ": planted tile index out of range");
    auto finite = [](const Matrix<float>& m) {
      return std::all_of(m.data.begin(), m.data.end(), [](float x) { return std::isfinite(x); });
    };
    if (!finite(b.global_embeds) || !finite(b.tile_embeds))
      throw DataError(ctx + ": non-finite embedding value");

    auto [it, inserted] = patient_split.try_emplace(b.patient_id, b.split, b.bag_id);
    if (!inserted && it->second.first != b.split)
      throw DataError("patient leakage: patient '" + b.patient_id + "' appears in split " +
                      to_string(it->second.first) + " (bag '" + it->second.second +
                      "') and split " + to_string(b.split) + " (bag '" + b.bag_id + "')");
  }
}

void write_dataset(const EmbedDataset& ds, const fs::path& dir) {
  validate(ds);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());

  json manifest;
  manifest["format"] = kFormatTag;
  manifest["format_version"] = kFormatVersion;
  manifest["encoder_name"] = ds.encoder_name;
  manifest["embed_dim"] = ds.embed_dim;
  manifest["tile_size"] = ds.tile_size;

  std::vector<float> globals, tiles;
  std::vector<std::int32_t> geoms;
  std::size_t g_off = 0, t_off = 0;
  json bags = json::array();
  for (const auto& b : ds.bags) {
    json jb;
    jb["bag_id"] = b.bag_id;
    jb["patient_id"] = b.patient_id;
    jb["label"] = b.label;
    jb["split"] = to_string(b.split);
    jb["global_offset"] = g_off;
    jb["tile_offset"] = t_off;
    json views = json::array();
    for (std::size_t v = 0; v < b.views.size(); ++v) {
      const auto& vr = b.views[v];
      auto [lo, hi] = b.view_tile_range(v);
      json jv{{"view_id", vr.view_id}, {"width", vr.width}, {"height", vr.height},
              {"n_tiles", hi - lo}};
      if (vr.tile_size != ds.tile_size) jv["tile_size"] = vr.tile_size;
      views.push_back(std::move(jv));
    }
    jb["views"] = std::move(views);
    if (!b.planted_tiles.empty()) jb["planted_tiles"] = b.planted_tiles;
    bags.push_back(std::move(jb));

    globals.insert(globals.end(), b.global_embeds.data.begin(), b.global_embeds.data.end());
    tiles.insert(tiles.end(), b.tile_embeds.data.begin(), b.tile_embeds.data.end());
    for (const auto& g : b.tile_geoms)
      geoms.insert(geoms.end(), {g.view_index, g.x0, g.y0, g.x1, g.y1});
    g_off += b.n_views();
    t_off += b.n_tiles();
  }
  manifest["n_global_rows"] = g_off;
  manifest["n_tile_rows"] = t_off;
  manifest["bags"] = std::move(bags);

  {
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(1) << '\n';
  }
  write_array(dir / "global.f32", globals);
  write_array(dir / "tiles.f32", tiles);
  write_array(dir / "tile_geoms.i32", geoms);
}

EmbedDataset read_dataset(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw DataError("missing manifest: " + mpath.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("manifest.json is not valid JSON: " + std::string(e.what()));
  }

  try {
    if (m.value("format", std::string{}) != kFormatTag)
      throw DataError("manifest.json: not a milpf embeddings container (format tag mismatch)");
    const int version = m.at("format_version").get<int>();
    if (version != kFormatVersion)
      throw DataError("manifest.json: unsupported format_version " + std::to_string(version) +
                      " (expected " + std::to_string(kFormatVersion) + ")");

    EmbedDataset ds;
    ds.encoder_name = m.at("encoder_name").get<std::string>();
    ds.embed_dim = m.at("embed_dim").get<std::size_t>();
    ds.tile_size = m.at("tile_size").get<std::int32_t>();
    if (ds.embed_dim == 0) throw DataError("manifest.json: embed_dim must be positive");
    const auto n_global = m.at("n_global_rows").get<std::size_t>();
    const auto n_tile = m.at("n_tile_rows").get<std::size_t>();
    const std::size_t d = ds.embed_dim;

    const auto globals = read_array<float>(dir / "global.f32", n_global * d, d, "reals");
    const auto tiles = read_array<float>(dir / "tiles.f32", n_tile * d, d, "reals");
    const auto geoms = read_array<std::int32_t>(dir / "tile_geoms.i32", n_tile * 5, 5, "integers");

    std::size_t g_off = 0, t_off = 0;
    for (const auto& jb : m.at("bags")) {
      EmbedBag b;
      b.bag_id = jb.at("bag_id").get<std::string>();
      b.patient_id = jb.at("patient_id").get<std::string>();
      b.label = jb.at("label").get<int>();
      b.split = split_from_string(jb.at("split").get<std::string>());
      if (jb.at("global_offset").get<std::size_t>() != g_off ||
          jb.at("tile_offset").get<std::size_t>() != t_off)
        throw DataError(bag_context(b) + ": row offsets are not contiguous");
      std::size_t bag_tiles = 0;
      std::vector<std::size_t> per_view;
      for (const auto& jv : jb.at("views")) {
        ViewRecord v;
        v.view_id = jv.at("view_id").get<std::string>();
        v.width = jv.at("width").get<std::int32_t>();
        v.height = jv.at("height").get<std::int32_t>();
        v.tile_size = jv.value("tile_size", ds.tile_size);
        per_view.push_back(jv.at("n_tiles").get<std::size_t>());
        bag_tiles += per_view.back();
        b.views.push_back(std::move(v));
      }
      if (g_off + b.views.size() > n_global || t_off + bag_tiles > n_tile)
        throw DataError(bag_context(b) + ": rows exceed the declared payload size");
      b.global_embeds = Matrix<float>(b.views.size(), d);
      std::copy_n(globals.begin() + static_cast<std::ptrdiff_t>(g_off * d), b.views.size() * d,
                  b.global_embeds.data.begin());
      b.tile_embeds = Matrix<float>(bag_tiles, d);
      std::copy_n(tiles.begin() + static_cast<std::ptrdiff_t>(t_off * d), bag_tiles * d,
                  b.tile_embeds.data.begin());
      b.tile_geoms.resize(bag_tiles);
      for (std::size_t t = 0; t < bag_tiles; ++t) {
        const auto* g = &geoms[(t_off + t) * 5];
        b.tile_geoms[t] = TileGeom{g[0], g[1], g[2], g[3], g[4]};
      }
      for (std::size_t v = 0; v < per_view.size(); ++v) {
        auto [lo, hi] = b.view_tile_range(v);
        if (hi - lo != per_view[v])
          throw DataError(bag_context(b) + ": view '" + b.views[v].view_id + "' declares " +
                          std::to_string(per_view[v]) + " tiles, geometry has " +
                          std::to_string(hi - lo));
      }
      if (jb.contains("planted_tiles"))
        b.planted_tiles = jb.at("planted_tiles").get<std::vector<std::int32_t>>();
      g_off += b.views.size();
      t_off += bag_tiles;
      ds.bags.push_back(std::move(b));
    }
    if (g_off != n_global || t_off != n_tile)
      throw DataError("manifest.json: bags cover " + std::to_string(g_off) + "/" +
                      std::to_string(t_off) + " rows but n_global_rows/n_tile_rows declare " +
                      std::to_string(n_global) + "/" + std::to_string(n_tile));
    validate(ds);
    return ds;
  } catch (const json::exception& e) {
    throw DataError("manifest.json: " + std::string(e.what()));
  }
}

std::map<std::string, Split> split_patients(const std::vector<EmbedBag>& bags, SplitRatios ratios,
                                            std::uint64_t seed) {
  const double total = ratios.train + ratios.val + ratios.test;
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 || std::abs(total - 1.0) > 1e-9)
    throw ConfigError("split ratios must be non-negative and sum to 1");
  if (bags.empty()) throw ConfigError("cannot split an empty bag list");

  // Patients in first-appearance order, keyed by max label.
  std::vector<std::string> patients;
  std::map<std::string, int> max_label;
  for (const auto& b : bags) {
    auto [it, inserted] = max_label.try_emplace(b.patient_id, b.label);
    if (inserted) patients.push_back(b.patient_id);
    else it->second = std::max(it->second, b.label);
  }
  const Split order[3] = {Split::train, Split::val, Split::test};
  const double r[3] = {ratios.train, ratios.val, ratios.test};
  const int wanted = (r[0] > 0) + (r[1] > 0) + (r[2] > 0);
  if (static_cast<int>(patients.size()) < wanted)
    throw ConfigError("split needs at least " + std::to_string(wanted) + " patients, got " +
                      std::to_string(patients.size()));

  std::mt19937_64 rng(seed);
  std::map<std::string, Split> patient_split;
  std::vector<std::string> members[3];
  for (int stratum = 0; stratum <= 1; ++stratum) {
    std::vector<std::string> group;
    for (const auto& p : patients)
      if (max_label[p] == stratum) group.push_back(p);
    std::shuffle(group.begin(), group.end(), rng);
    // Systematic assignment: rank r maps to quantile (r + 0.5) / n.
    const double n = static_cast<double>(group.size());
    for (std::size_t i = 0; i < group.size(); ++i) {
      const double u = (static_cast<double>(i) + 0.5) / n;
      int s = 2;
      if (u < r[0]) s = 0;
      else if (u < r[0] + r[1]) s = 1;
      members[s].push_back(group[i]);
    }
  }
  // Small inputs can leave a requested split empty; borrow from the largest.
  for (int s = 0; s < 3; ++s) {
    if (r[s] <= 0 || !members[s].empty()) continue;
    int donor = 0;
    for (int k = 1; k < 3; ++k)
      if (members[k].size() > members[donor].size()) donor = k;
    members[s].push_back(members[donor].back());
    members[donor].pop_back();
  }
  for (int s = 0; s < 3; ++s)
    for (const auto& p : members[s]) patient_split[p] = order[s];

  std::map<std::string, Split> out;
  for (const auto& b : bags) out[b.bag_id] = patient_split.at(b.patient_id);
  return out;
}

void apply_splits(EmbedDataset& ds, const std::map<std::string, Split>& assignments) {
  for (auto& b : ds.bags) {
    auto it = assignments.find(b.bag_id);
    if (it == assignments.end()) throw DataError("no split assignment for bag '" + b.bag_id + "'");
    b.split = it->second;
  }
}

namespace {

void check_range(const IntRange& r, int min_lo, const char* name) {
  if (r.lo < min_lo || r.hi < r.lo)
    throw ConfigError(std::string("synth: invalid range for ") + name);
}

std::vector<double> draw_direction(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> dir(d);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& x : dir) {
      x = normal(rng);
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (auto& x : dir) x /= norm;
  return dir;
}

std::string padded(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%05zu", prefix, i);
  return buf;
}

}  // namespace

std::vector<double> synth_signal_direction(const SynthConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  return draw_direction(rng, cfg.d);
}

EmbedDataset synth_dataset(const SynthConfig& cfg) {
  if (cfg.d < 2) throw ConfigError("synth: d must be at least 2");
  check_range(cfg.views_per_bag, 1, "views_per_bag");
  check_range(cfg.tiles_per_view, 1, "tiles_per_view");
  check_range(cfg.signal_tiles_per_positive, 0, "signal_tiles_per_positive");
  check_range(cfg.bags_per_patient, 1, "bags_per_patient");
  if (cfg.signal_tiles_per_positive.hi > cfg.views_per_bag.lo * cfg.tiles_per_view.lo)
    throw ConfigError("synth: signal_tiles_per_positive exceeds the smallest possible bag (" +
                      std::to_string(cfg.views_per_bag.lo * cfg.tiles_per_view.lo) + " tiles)");
  if (!(cfg.positive_fraction >= 0.0 && cfg.positive_fraction <= 1.0))
    throw ConfigError("synth: positive_fraction must lie in [0,1]");
  if (cfg.noise_scale < 0.0 || cfg.tile_size < 1)
    throw ConfigError("synth: noise_scale must be >= 0 and tile_size >= 1");

  std::mt19937_64 rng(cfg.seed);
  const auto dir = draw_direction(rng, cfg.d);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution positive(cfg.positive_fraction);
  auto uniform = [&](IntRange r) { return std::uniform_int_distribution<int>(r.lo, r.hi)(rng); };

  EmbedDataset ds;
  ds.encoder_name = "synthetic";
  ds.embed_dim = cfg.d;
  ds.tile_size = cfg.tile_size;

  auto fill_row = [&](std::span<float> row, double shift) {
    for (std::size_t k = 0; k < row.size(); ++k)
      row[k] = static_cast<float>(cfg.noise_scale * normal(rng) + shift * dir[k]);
  };

  std::size_t patient = 0;
  int left_for_patient = 0;
  for (std::size_t i = 0; i < cfg.n_bags; ++i) {
    if (left_for_patient == 0) {
      ++patient;
      left_for_patient = uniform(cfg.bags_per_patient);
    }
    --left_for_patient;

    EmbedBag b;
    b.bag_id = padded("bag", i);
    b.patient_id = padded("pat", patient);
    b.label = positive(rng) ? 1 : 0;
    const int n_views = uniform(cfg.views_per_bag);
    std::vector<int> tiles_per_view(static_cast<std::size_t>(n_views));
    for (int v = 0; v < n_views; ++v) {
      const int n = uniform(cfg.tiles_per_view);
      tiles_per_view[static_cast<std::size_t>(v)] = n;
      // Grid with a few spare cells; a random subset stands in for the
      // tissue-containing tiles of a real view.
      const int cols = static_cast<int>(std::ceil(std::sqrt(1.25 * n)));
      const int rows = (n + cols - 1) / cols + 1;
      std::vector<int> cells(static_cast<std::size_t>(cols * rows));
      std::iota(cells.begin(), cells.end(), 0);
      std::shuffle(cells.begin(), cells.end(), rng);
      cells.resize(static_cast<std::size_t>(n));
      std::sort(cells.begin(), cells.end());
      ViewRecord vr{b.bag_id + "_v" + std::to_string(v), cols * cfg.tile_size,
                    rows * cfg.tile_size, cfg.tile_size};
      for (int c : cells) {
        const int x0 = (c % cols) * cfg.tile_size, y0 = (c / cols) * cfg.tile_size;
        b.tile_geoms.push_back({v, x0, y0, x0 + cfg.tile_size, y0 + cfg.tile_size});
      }
      b.views.push_back(std::move(vr));
    }
    const std::size_t m = b.tile_geoms.size();
    b.global_embeds = Matrix<float>(static_cast<std::size_t>(n_views), cfg.d);
    b.tile_embeds = Matrix<float>(m, cfg.d);
    for (int v = 0; v < n_views; ++v)
      fill_row(b.global_embeds.row(static_cast<std::size_t>(v)),
               b.label ? cfg.signal_shift / 4.0 : 0.0);
    std::vector<char> is_signal(m, 0);
    if (b.label) {
      const int k = uniform(cfg.signal_tiles_per_positive);
      std::vector<std::int32_t> idx(m);
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(k));
      std::sort(idx.begin(), idx.end());
      for (auto t : idx) is_signal[static_cast<std::size_t>(t)] = 1;
      b.planted_tiles = std::move(idx);
    }
    for (std::size_t t = 0; t < m; ++t)
      fill_row(b.tile_embeds.row(t), is_signal[t] ? cfg.signal_shift : 0.0);
    ds.bags.push_back(std::move(b));
  }
  return ds;
}

}  // namespace milpf

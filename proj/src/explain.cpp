#include "milpf/explain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <tuple>

#include "milpf/error.hpp"
#include "milpf/tilegeom.hpp"

namespace milpf {

Matrix<double> raw_attention(const ViewRecord& view, const std::vector<WeightedTile>& tiles,
                             double overlap) {
  const GridSpec spec{view.width, view.height, view.tile_size, overlap};
  const auto stride = spec.stride();
  const auto cx = axis_coverage(view.width, view.tile_size, stride);
  const auto cy = axis_coverage(view.height, view.tile_size, stride);
  const auto W = static_cast<std::size_t>(view.width);
  const auto H = static_cast<std::size_t>(view.height);

  // 2-D difference array: each tile adds its weight to a rectangle.
  Matrix<double> acc(H + 1, W + 1);
  for (const auto& t : tiles) {
    const auto& g = t.geom;
    if (!(0 <= g.x0 && g.x0 < g.x1 && g.x1 <= view.width && 0 <= g.y0 && g.y0 < g.y1 &&
          g.y1 <= view.height))
      throw DataError("tile geometry outside view '" + view.view_id + "'");
    const auto x0 = static_cast<std::size_t>(g.x0), x1 = static_cast<std::size_t>(g.x1);
    const auto y0 = static_cast<std::size_t>(g.y0), y1 = static_cast<std::size_t>(g.y1);
    acc(y0, x0) += t.weight;
    acc(y0, x1) -= t.weight;
    acc(y1, x0) -= t.weight;
    acc(y1, x1) += t.weight;
  }
  Matrix<double> raw(H, W);
  std::vector<double> col(W + 1, 0.0);
  for (std::size_t y = 0; y < H; ++y) {
    double run = 0.0;
    for (std::size_t x = 0; x < W; ++x) {
      col[x] += acc(y, x);
      run += col[x];
      const int cover = cx[x] * cy[y];
      raw(y, x) = cover > 0 ? run / cover : 0.0;
    }
  }
  return raw;
}

Heatmap attention_heatmap(const ViewRecord& view, const std::vector<WeightedTile>& tiles,
                          double overlap) {
  Heatmap h;
  h.view_id = view.view_id;
  h.width = view.width;
  h.height = view.height;
  h.heat = raw_attention(view, tiles, overlap);
  const double peak = h.heat.empty() ? 0.0 : *std::max_element(h.heat.data.begin(), h.heat.data.end());
  if (peak > 0.0)
    for (auto& v : h.heat.data) v = std::clamp(v / peak, 0.0, 1.0);
  else
    std::fill(h.heat.data.begin(), h.heat.data.end(), 0.0);
  return h;
}

std::vector<Heatmap> bag_heatmaps(const EmbedBag& bag, const HeadParams& p, double overlap) {
  if (p.local.kind != AggKind::attention)
    throw ConfigError("heatmaps need a model whose local stream uses attention");
  const auto fr = forward(bag, p);
  const auto& alpha = *fr.local_weights;
  std::vector<Heatmap> out;
  for (std::size_t v = 0; v < bag.n_views(); ++v) {
    auto [lo, hi] = bag.view_tile_range(v);
    std::vector<WeightedTile> tiles;
    for (std::size_t t = lo; t < hi; ++t) tiles.push_back({bag.tile_geoms[t], alpha[t]});
    out.push_back(attention_heatmap(bag.views[v], tiles, overlap));
  }
  return out;
}

std::vector<ScoredBox> boxes_from_heatmap(const Heatmap& h, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0,1)");
  const auto W = static_cast<std::size_t>(h.width), H = static_cast<std::size_t>(h.height);
  std::vector<char> seen(W * H, 0);
  std::vector<ScoredBox> out;
  std::vector<std::pair<std::size_t, std::size_t>> stack;
  for (std::size_t y0 = 0; y0 < H; ++y0)
    for (std::size_t x0 = 0; x0 < W; ++x0) {
      if (seen[y0 * W + x0] || h.heat(y0, x0) < threshold) continue;
      std::size_t minx = x0, maxx = x0, miny = y0, maxy = y0;
      double peak = 0.0;
      stack.assign(1, {x0, y0});
      seen[y0 * W + x0] = 1;
      while (!stack.empty()) {
        auto [x, y] = stack.back();
        stack.pop_back();
        peak = std::max(peak, h.heat(y, x));
        minx = std::min(minx, x);
        maxx = std::max(maxx, x);
        miny = std::min(miny, y);
        maxy = std::max(maxy, y);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const auto nx = static_cast<std::ptrdiff_t>(x) + dx;
            const auto ny = static_cast<std::ptrdiff_t>(y) + dy;
            if (nx < 0 || ny < 0 || nx >= static_cast<std::ptrdiff_t>(W) ||
                ny >= static_cast<std::ptrdiff_t>(H))
              continue;
            const auto i = static_cast<std::size_t>(ny) * W + static_cast<std::size_t>(nx);
            if (seen[i] || h.heat.data[i] < threshold) continue;
            seen[i] = 1;
            stack.emplace_back(static_cast<std::size_t>(nx), static_cast<std::size_t>(ny));
          }
      }
      out.push_back({Box{static_cast<double>(minx), static_cast<double>(miny),
                         static_cast<double>(maxx + 1), static_cast<double>(maxy + 1)},
                     peak, h.view_id});
    }
  std::stable_sort(out.begin(), out.end(),
                   [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
  return out;
}

void write_pgm(const Heatmap& h, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << h.width << ' ' << h.height << "\n255\n";
  std::vector<unsigned char> px(h.heat.size());
  for (std::size_t i = 0; i < px.size(); ++i)
    px[i] = static_cast<unsigned char>(std::lround(std::clamp(h.heat.data[i], 0.0, 1.0) * 255.0));
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

Heatmap read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing heatmap " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  auto skip_comments = [&] {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string line;
      std::getline(in, line);
      in >> std::ws;
    }
  };
  in >> magic;
  skip_comments();
  in >> w;
  skip_comments();
  in >> h;
  skip_comments();
  in >> maxval;
  if (!in || magic != "P5" || w < 1 || h < 1 || maxval < 1 || maxval > 255)
    throw DataError(path.string() + ": not an 8-bit binary PGM (P5)");
  in.get();
  std::vector<unsigned char> px(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (in.gcount() != static_cast<std::streamsize>(px.size()))
    throw DataError(path.string() + ": truncated pixel data");
  Heatmap out;
  out.view_id = path.stem().string();
  out.width = w;
  out.height = h;
  out.heat = Matrix<double>(static_cast<std::size_t>(h), static_cast<std::size_t>(w));
  for (std::size_t i = 0; i < px.size(); ++i) out.heat.data[i] = px[i] / static_cast<double>(maxval);
  return out;
}

}  // namespace milpf

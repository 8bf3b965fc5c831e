// milpf: command-line entry point.
//
// Exit codes: 0 success, 1 usage error, 2 data or validation error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "milpf/checkpoint.hpp"
#include "milpf/embedset.hpp"
#include "milpf/error.hpp"
#include "milpf/explain.hpp"
#include "milpf/metrics.hpp"
#include "milpf/milhead.hpp"
#include "milpf/tilegeom.hpp"
#include "milpf/trainer.hpp"

namespace fs = std::filesystem;
using namespace milpf;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<double> parse_list(const std::string& s, std::size_t n, const char* what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(std::string("bad ") + what + " '" + s + "'");
    }
  }
  if (out.size() != n)
    throw UsageError(std::string(what) + " expects " + std::to_string(n) + " comma-separated values");
  return out;
}

IntRange parse_range(const std::string& s, const char* what) {
  const auto v = parse_list(s, 2, what);
  return {static_cast<int>(v[0]), static_cast<int>(v[1])};
}

SplitRatios parse_ratios(const std::string& s) {
  const auto v = parse_list(s, 3, "--ratios");
  return {v[0], v[1], v[2]};
}

void write_json(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

TrainConfig resolve_config(const std::string& path, std::optional<std::uint64_t> seed) {
  auto parsed = load_config(path);
  if (seed) parsed.config.seed = *seed;
  else if (!parsed.has_seed)
    throw UsageError("no seed: pass --seed or set seed in " + path);
  return parsed.config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"milpf: two-stream MIL head on precomputed embeddings"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic sparse-signal dataset");
  SynthConfig sc;
  std::string synth_out, synth_views = "1,3", synth_tiles = "20,200", synth_signal = "1,3",
                         synth_bpp = "1,2", synth_ratios = "0.7,0.1,0.2";
  std::uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "Output container directory")->required();
  synth->add_option("--seed", synth_seed, "RNG seed (also used for the split)")->required();
  synth->add_option("--n-bags", sc.n_bags, "Number of bags")->capture_default_str();
  synth->add_option("--dim", sc.d, "Embedding dimension")->capture_default_str();
  synth->add_option("--views", synth_views, "Views per bag LO,HI")->capture_default_str();
  synth->add_option("--tiles", synth_tiles, "Tiles per view LO,HI")->capture_default_str();
  synth->add_option("--signal-tiles", synth_signal, "Signal tiles per positive bag LO,HI")->capture_default_str();
  synth->add_option("--bags-per-patient", synth_bpp, "Bags per patient LO,HI")->capture_default_str();
  synth->add_option("--positive-fraction", sc.positive_fraction, "Fraction of positive bags")->capture_default_str();
  synth->add_option("--shift", sc.signal_shift, "Signal shift along the planted direction")->capture_default_str();
  synth->add_option("--noise", sc.noise_scale, "Per-coordinate noise scale")->capture_default_str();
  synth->add_option("--tile-size", sc.tile_size, "Tile size in pixels")->capture_default_str();
  synth->add_option("--ratios", synth_ratios, "Train,val,test ratios")->capture_default_str();

  // validate
  auto* validate_cmd = app.add_subcommand("validate", "Load and validate a container");
  std::string data_dir;
  validate_cmd->add_option("--data", data_dir, "Container directory")->required();

  // split
  auto* split = app.add_subcommand("split", "Re-split a container by patient");
  std::uint64_t split_seed = 0;
  std::string split_ratios = "0.7,0.1,0.2";
  split->add_option("--data", data_dir, "Container directory (rewritten in place)")->required();
  split->add_option("--seed", split_seed, "RNG seed")->required();
  split->add_option("--ratios", split_ratios, "Train,val,test ratios")->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Train one run and save the best-validation model");
  std::string config_path, model_path, log_path;
  std::optional<std::uint64_t> seed_flag;
  train->add_option("--data", data_dir, "Container directory")->required();
  train->add_option("--config", config_path, "key=value training config")->required();
  train->add_option("--out", model_path, "Output model checkpoint")->required();
  train->add_option("--seed", seed_flag, "Seed (overrides the config)");
  train->add_option("--log", log_path, "Optional CSV run log (epoch,train_loss,val_auc)");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Multi-run training with best-validation selection");
  std::optional<int> runs_flag;
  int jobs = 1;
  std::string sweep_out;
  sweep->add_option("--data", data_dir, "Container directory")->required();
  sweep->add_option("--config", config_path, "key=value training config")->required();
  sweep->add_option("--runs", runs_flag, "Number of runs (default: config runs, 36)");
  sweep->add_option("--out", sweep_out, "Output directory")->required();
  sweep->add_option("--seed", seed_flag, "First seed (overrides the config)");
  sweep->add_option("--jobs", jobs, "Parallel runs")->capture_default_str();

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a model on the test split");
  std::string report_path;
  eval->add_option("--data", data_dir, "Container directory")->required();
  eval->add_option("--model", model_path, "Model checkpoint")->required();
  eval->add_option("--report", report_path, "Output JSON report")->required();

  // heatmap
  auto* heatmap = app.add_subcommand("heatmap", "Write attention heatmaps (PGM) for one bag");
  std::string bag_id, heat_out;
  double overlap = 0.75;
  heatmap->add_option("--data", data_dir, "Container directory")->required();
  heatmap->add_option("--model", model_path, "Model checkpoint")->required();
  heatmap->add_option("--bag", bag_id, "Bag id")->required();
  heatmap->add_option("--overlap", overlap, "Tile overlap the container was extracted with")->capture_default_str();
  heatmap->add_option("--out", heat_out, "Output directory")->required();

  // detect
  auto* detect = app.add_subcommand("detect", "Extract scored boxes from a heatmap");
  std::string pgm_path, boxes_path;
  double threshold = 0.5;
  detect->add_option("--heatmap", pgm_path, "Heatmap PGM (view id = file stem)")->required();
  detect->add_option("--threshold", threshold, "Foreground threshold on the normalized map")->capture_default_str();
  detect->add_option("--out", boxes_path, "Output CSV")->required();

  // grid
  auto* grid = app.add_subcommand("grid", "Print the tile grid of an image");
  GridSpec gs;
  gs.overlap_fraction = 0.0;
  grid->add_option("--width", gs.image_width, "Image width")->required();
  grid->add_option("--height", gs.image_height, "Image height")->required();
  grid->add_option("--tile", gs.tile_size, "Tile size")->required();
  grid->add_option("--overlap", gs.overlap_fraction, "Overlap fraction in [0,1)")->capture_default_str();

  // params
  auto* params = app.add_subcommand("params", "Print the trainable parameter count");
  std::size_t dim = 0;
  params->add_option("--config", config_path, "key=value training config")->required();
  params->add_option("--dim", dim, "Embedding dimension")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) {
      sc.seed = synth_seed;
      sc.views_per_bag = parse_range(synth_views, "--views");
      sc.tiles_per_view = parse_range(synth_tiles, "--tiles");
      sc.signal_tiles_per_positive = parse_range(synth_signal, "--signal-tiles");
      sc.bags_per_patient = parse_range(synth_bpp, "--bags-per-patient");
      auto ds = synth_dataset(sc);
      apply_splits(ds, split_patients(ds.bags, parse_ratios(synth_ratios), synth_seed));
      write_dataset(ds, synth_out);
      std::cout << "wrote " << ds.bags.size() << " bags to " << synth_out << '\n';
    } else if (validate_cmd->parsed()) {
      const auto ds = read_dataset(data_dir);
      std::size_t tiles = 0, pos = 0;
      for (const auto& b : ds.bags) {
        tiles += b.n_tiles();
        pos += b.label;
      }
      std::cout << "ok: " << ds.bags.size() << " bags (" << pos << " positive), d=" << ds.embed_dim
                << ", " << tiles << " tiles; train/val/test = " << ds.indices(Split::train).size()
                << '/' << ds.indices(Split::val).size() << '/' << ds.indices(Split::test).size()
                << '\n';
    } else if (split->parsed()) {
      auto ds = read_dataset(data_dir);
      apply_splits(ds, split_patients(ds.bags, parse_ratios(split_ratios), split_seed));
      write_dataset(ds, data_dir);
      std::cout << "train/val/test = " << ds.indices(Split::train).size() << '/'
                << ds.indices(Split::val).size() << '/' << ds.indices(Split::test).size() << '\n';
    } else if (train->parsed()) {
      const auto cfg = resolve_config(config_path, seed_flag);
      const auto ds = read_dataset(data_dir);
      const auto r = train_once(ds, cfg, cfg.seed);
      save_checkpoint(r.params, model_path);
      if (!log_path.empty()) write_run_log(r, log_path);
      std::cout << "best epoch " << r.best_epoch << ": val AUC " << r.val_auc << ", test AUC "
                << r.test_metrics.auc << '\n';
    } else if (sweep->parsed()) {
      auto cfg = resolve_config(config_path, seed_flag);
      if (runs_flag) cfg.runs = *runs_flag;
      cfg.check();
      const auto ds = read_dataset(data_dir);
      const auto mr = multi_run(ds, cfg, jobs);
      fs::create_directories(sweep_out);
      for (const auto& r : mr.all) {
        const std::string stem = "run_" + std::to_string(r.seed);
        save_checkpoint(r.params, fs::path(sweep_out) / (stem + ".milpf"));
        write_run_log(r, fs::path(sweep_out) / (stem + ".csv"));
      }
      save_checkpoint(mr.best.params, fs::path(sweep_out) / "best.milpf");
      write_json(spread_report(mr), fs::path(sweep_out) / "report.json");
      std::ofstream(fs::path(sweep_out) / "config.txt") << to_text(cfg);
      std::cout << "best seed " << mr.best.seed << ": val AUC " << mr.best.val_auc
                << ", test AUC " << mr.best.test_metrics.auc << '\n';
    } else if (eval->parsed()) {
      const auto ds = read_dataset(data_dir);
      const auto p = load_checkpoint(model_path);
      const auto rep = evaluate_model(ds, p);
      write_json(to_json(rep), report_path);
      std::cout << "test AUC " << rep.auc << ", bACC " << rep.bacc << ", Spec@Sens=0.9 "
                << rep.spec_at_sens90 << '\n';
    } else if (heatmap->parsed()) {
      const auto ds = read_dataset(data_dir);
      const auto p = load_checkpoint(model_path);
      const auto maps = bag_heatmaps(ds.find(bag_id), p, overlap);
      fs::create_directories(heat_out);
      for (const auto& h : maps) write_pgm(h, fs::path(heat_out) / (h.view_id + ".pgm"));
      std::cout << "wrote " << maps.size() << " heatmaps to " << heat_out << '\n';
    } else if (detect->parsed()) {
      const auto boxes = boxes_from_heatmap(read_pgm(pgm_path), threshold);
      write_boxes_csv(boxes, boxes_path);
      std::cout << boxes.size() << " boxes\n";
    } else if (grid->parsed()) {
      for (const auto& t : tile_grid(gs))
        std::cout << t.x0 << ',' << t.y0 << ',' << t.x1 << ',' << t.y1 << '\n';
    } else if (params->parsed()) {
      const auto cfg = load_config(config_path).config;
      std::cout << count_params(cfg.agg(), dim) << '\n';
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

#pragma once

// Full-batch Adam training of the head, best-validation-epoch selection
// within a run, the multi-run sweep and the single-instance (SIL) ablation.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "milpf/embedset.hpp"
#include "milpf/metrics.hpp"
#include "milpf/milhead.hpp"

namespace milpf {

struct TrainConfig {
  AggKind global_agg = AggKind::max;
  AggKind local_agg = AggKind::attention;
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 300;
  std::uint64_t seed = 0;
  double init_scale = 1.0;
  int runs = 36;
  InferenceMode mode = InferenceMode::mil;
  std::size_t h1 = 16;
  std::size_t h2 = 8;

  void check() const;
  // Aggregators actually trained (SIL modes train the global stream alone).
  AggConfig agg() const;
};

// Flat key=value text; '#' starts a comment. Keys are the field names above.
// Returns the config and whether a seed key was present.
struct ParsedConfig {
  TrainConfig config;
  bool has_seed = false;
};
ParsedConfig parse_config(std::istream& in);
ParsedConfig load_config(const std::filesystem::path& path);
std::string to_text(const TrainConfig& cfg);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  int step = 0;
};

void adam_step(std::span<double> params, std::span<const double> grad, AdamState& state,
               const TrainConfig& cfg);

// Weights ~ U(-s/sqrt(fan_in), s/sqrt(fan_in)) with s = init_scale, the
// latent query and attention projections likewise (fan_in = h2); biases 0.
HeadParams init_params(const AggConfig& agg, std::size_t d, double init_scale, std::uint64_t seed);

std::vector<double> score_bags(const EmbedDataset& data, std::span<const std::size_t> idx,
                               const HeadParams& p);
std::vector<int> labels_of(const EmbedDataset& data, std::span<const std::size_t> idx);

// Test-split report: bACC threshold tuned on validation scores.
EvalReport evaluate_model(const EmbedDataset& data, const HeadParams& p);

struct RunResult {
  HeadParams params;
  double val_auc = 0.0;
  EvalReport test_metrics;
  std::vector<double> loss_history;     // train loss before each step
  std::vector<double> val_auc_history;  // after each step
  int best_epoch = 0;                   // 1-based
  std::uint64_t seed = 0;
};

// Dispatches on cfg.mode: MIL training or per-view SIL training.
RunResult train_once(const EmbedDataset& data, const TrainConfig& cfg, std::uint64_t seed);
RunResult train_sil(const EmbedDataset& data, const TrainConfig& cfg, std::uint64_t seed);

struct MultiRunResult {
  RunResult best;
  std::size_t best_index = 0;
  std::vector<RunResult> all;
};

// Seeds cfg.seed, cfg.seed + 1, ...; best = highest val AUC, ties to the
// lowest seed. `jobs` > 1 runs in parallel with identical results.
MultiRunResult multi_run(const EmbedDataset& data, const TrainConfig& cfg, int jobs = 1);

nlohmann::json spread_report(const MultiRunResult& r);

// CSV: epoch,train_loss,val_auc
void write_run_log(const RunResult& r, const std::filesystem::path& path);

}  // namespace milpf

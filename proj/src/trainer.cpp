#include "milpf/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iostream>
#include <random>
#include <string_view>
#include <thread>

#include "milpf/backprop.hpp"
#include "milpf/error.hpp"

namespace milpf {

void adam_step(std::span<double> params, std::span<const double> grad, AdamState& st,
               const TrainConfig& cfg) {
  if (st.m.size() != params.size()) {
    st.m.assign(params.size(), 0.0);
    st.v.assign(params.size(), 0.0);
    st.step = 0;
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, st.step);
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, st.step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m[i] = cfg.adam_beta1 * st.m[i] + (1.0 - cfg.adam_beta1) * grad[i];
    st.v[i] = cfg.adam_beta2 * st.v[i] + (1.0 - cfg.adam_beta2) * grad[i] * grad[i];
    params[i] -= cfg.lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + cfg.adam_eps);
  }
}

HeadParams init_params(const AggConfig& agg, std::size_t d, double init_scale, std::uint64_t seed) {
  HeadParams p = HeadParams::zeros(agg, d);
  std::mt19937_64 rng(seed);
  p.for_each_tensor([&](const char* name, std::span<double> t) {
    const std::string_view n(name);
    std::size_t fan_in = 0;
    if (n.ends_with(".w1")) fan_in = p.d;
    else if (n.ends_with(".w2")) fan_in = p.h1;
    else if (n.ends_with(".attn.z") || n.ends_with(".attn.wk") || n.ends_with(".attn.wv")) fan_in = p.h2;
    else if (n == "head.w") fan_in = 2 * p.h2;
    if (fan_in == 0) return;  // biases
    const double a = init_scale / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-a, a);
    for (double& x : t) x = a > 0.0 ? u(rng) : 0.0;
  });
  return p;
}

std::vector<double> score_bags(const EmbedDataset& data, std::span<const std::size_t> idx,
                               const HeadParams& p) {
  const auto ph = prepare(p);
  std::vector<double> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(bag_score(data.bags[i], ph));
  return out;
}

std::vector<int> labels_of(const EmbedDataset& data, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(data.bags[i].label);
  return out;
}

EvalReport evaluate_model(const EmbedDataset& data, const HeadParams& p) {
  const auto val = data.indices(Split::val);
  const auto test = data.indices(Split::test);
  return evaluate(score_bags(data, val, p), labels_of(data, val), score_bags(data, test, p),
                  labels_of(data, test));
}

namespace {

void require_both_classes(const EmbedDataset& data, Split s) {
  const auto idx = data.indices(s);
  const auto labels = labels_of(data, idx);
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  if (pos == 0 || pos == static_cast<long>(labels.size()))
    throw DataError(std::string(to_string(s)) + " split has " + std::to_string(labels.size()) +
                    " bags but only one class; AUC is undefined");
}

// Shared optimization loop. `train` are the examples the loss is taken over
// (bags for MIL, single-view bags for SIL); validation always scores real bags.
RunResult optimize(const EmbedDataset& data, std::span<const EmbedBag* const> train,
                   const TrainConfig& cfg, std::uint64_t seed) {
  RunResult r;
  r.seed = seed;
  HeadParams params = init_params(cfg.agg(), data.embed_dim, cfg.init_scale, seed);
  params.mode = cfg.mode;
  const auto val = data.indices(Split::val);
  const auto val_labels = labels_of(data, val);

  AdamState adam;
  std::vector<double> flat;
  r.val_auc = -1.0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto lg = loss_and_grad(train, params);
    r.loss_history.push_back(lg.loss);
    flat = params.flatten();
    const auto g = lg.grad.flatten();
    adam_step(flat, g, adam, cfg);
    params.assign(flat);
    const double a = auc(score_bags(data, val, params), val_labels);
    r.val_auc_history.push_back(a);
    if (a > r.val_auc) {
      r.val_auc = a;
      r.params = params;
      r.best_epoch = epoch;
    }
  }
  r.test_metrics = evaluate_model(data, r.params);
  return r;
}

}  // namespace

RunResult train_once(const EmbedDataset& data, const TrainConfig& cfg, std::uint64_t seed) {
  cfg.check();
  if (cfg.mode != InferenceMode::mil) return train_sil(data, cfg, seed);
  require_both_classes(data, Split::train);
  require_both_classes(data, Split::val);
  std::vector<const EmbedBag*> train;
  std::size_t tileless = 0;
  for (auto i : data.indices(Split::train)) {
    train.push_back(&data.bags[i]);
    tileless += data.bags[i].n_tiles() == 0;
  }
  if (cfg.local_agg != AggKind::none && tileless > 0)
    std::cerr << "warning: " << tileless
              << " training bags have no tiles; their local summary is zero\n";
  return optimize(data, train, cfg, seed);
}

RunResult train_sil(const EmbedDataset& data, const TrainConfig& cfg, std::uint64_t seed) {
  cfg.check();
  if (cfg.mode == InferenceMode::mil) throw ConfigError("train_sil needs mode sil_mean or sil_max");
  require_both_classes(data, Split::train);
  require_both_classes(data, Split::val);
  // Every view becomes its own example carrying the bag label.
  std::vector<EmbedBag> views;
  for (auto i : data.indices(Split::train)) {
    const auto& b = data.bags[i];
    for (std::size_t v = 0; v < b.n_views(); ++v) {
      EmbedBag e;
      e.bag_id = b.bag_id + "#" + std::to_string(v);
      e.label = b.label;
      e.views = {b.views[v]};
      e.global_embeds = Matrix<float>(1, data.embed_dim);
      std::copy(b.global_embeds.row(v).begin(), b.global_embeds.row(v).end(),
                e.global_embeds.data.begin());
      e.tile_embeds = Matrix<float>(0, data.embed_dim);
      views.push_back(std::move(e));
    }
  }
  const auto ptrs = bag_pointers(views);
  return optimize(data, ptrs, cfg, seed);
}

MultiRunResult multi_run(const EmbedDataset& data, const TrainConfig& cfg, int jobs) {
  cfg.check();
  const auto runs = static_cast<std::size_t>(cfg.runs);
  MultiRunResult out;
  out.all.resize(runs);
  std::vector<std::exception_ptr> errors(runs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < runs;) {
      try {
        out.all[i] = train_once(data, cfg, cfg.seed + i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n_threads = std::clamp(jobs, 1, static_cast<int>(runs));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (std::size_t i = 1; i < runs; ++i)
    if (out.all[i].val_auc > out.all[out.best_index].val_auc) out.best_index = i;
  out.best = out.all[out.best_index];
  return out;
}

namespace {

nlohmann::json stats(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(n);
  const double median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  return {{"min", v.front()}, {"max", v.back()}, {"spread", v.back() - v.front()},
          {"mean", mean}, {"median", median}};
}

}  // namespace

nlohmann::json spread_report(const MultiRunResult& r) {
  std::vector<double> val, auc_t, spec, bacc;
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : r.all) {
    val.push_back(run.val_auc);
    auc_t.push_back(run.test_metrics.auc);
    spec.push_back(run.test_metrics.spec_at_sens90);
    bacc.push_back(run.test_metrics.bacc);
    runs.push_back({{"seed", run.seed},
                    {"val_auc", run.val_auc},
                    {"best_epoch", run.best_epoch},
                    {"final_train_loss", run.loss_history.empty() ? 0.0 : run.loss_history.back()},
                    {"test", to_json(run.test_metrics)}});
  }
  const double max_test = *std::max_element(auc_t.begin(), auc_t.end());
  return {{"n_runs", r.all.size()},
          {"best_index", r.best_index},
          {"best_seed", r.best.seed},
          {"best_val_auc", r.best.val_auc},
          {"best_test", to_json(r.best.test_metrics)},
          {"max_test_auc", max_test},
          {"best_gap_to_max_test_auc", max_test - r.best.test_metrics.auc},
          {"spread",
           {{"val_auc", stats(val)},
            {"test_auc", stats(auc_t)},
            {"test_spec_at_sens90", stats(spec)},
            {"test_bacc", stats(bacc)}}},
          {"runs", runs}};
}

void write_run_log(const RunResult& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "epoch,train_loss,val_auc\n";
  for (std::size_t i = 0; i < r.loss_history.size(); ++i)
    out << i + 1 << ',' << r.loss_history[i] << ',' << r.val_auc_history[i] << '\n';
}

}  // namespace milpf

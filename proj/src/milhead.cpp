#include "milpf/milhead.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "milpf/error.hpp"
#include "milpf/simd.hpp"

namespace milpf {

const char* to_string(AggKind k) {
  switch (k) {
    case AggKind::mean: return "mean";
    case AggKind::max: return "max";
    case AggKind::attention: return "attention";
    case AggKind::none: break;
  }
  return "none";
}

AggKind agg_from_string(std::string_view s) {
  if (s == "none") return AggKind::none;
  if (s == "mean") return AggKind::mean;
  if (s == "max") return AggKind::max;
  if (s == "attention" || s == "attn") return AggKind::attention;
  throw ConfigError("unknown aggregator '" + std::string(s) + "' (none|mean|max|attention)");
}

const char* to_string(InferenceMode m) {
  switch (m) {
    case InferenceMode::sil_mean: return "sil_mean";
    case InferenceMode::sil_max: return "sil_max";
    case InferenceMode::mil: break;
  }
  return "mil";
}

InferenceMode mode_from_string(std::string_view s) {
  if (s == "mil") return InferenceMode::mil;
  if (s == "sil_mean") return InferenceMode::sil_mean;
  if (s == "sil_max") return InferenceMode::sil_max;
  throw ConfigError("unknown mode '" + std::string(s) + "' (mil|sil_mean|sil_max)");
}

void AggConfig::check() const {
  if (global == AggKind::none && local == AggKind::none)
    throw ConfigError("at least one of the global and local streams must be enabled");
  if (h1 == 0 || h2 == 0) throw ConfigError("hidden widths must be positive");
}

namespace {

StreamParams zero_stream(AggKind kind, std::size_t d, std::size_t h1, std::size_t h2) {
  StreamParams s;
  s.kind = kind;
  if (kind == AggKind::none) return s;
  s.w1 = Matrix<double>(h1, d);
  s.b1.assign(h1, 0.0);
  s.w2 = Matrix<double>(h2, h1);
  s.b2.assign(h2, 0.0);
  if (kind == AggKind::attention) {
    s.attn.z.assign(h2, 0.0);
    s.attn.wk = Matrix<double>(h2, h2);
    s.attn.wv = Matrix<double>(h2, h2);
  }
  return s;
}

}  // namespace

HeadParams HeadParams::zeros(const AggConfig& cfg, std::size_t d) {
  cfg.check();
  if (d == 0) throw ConfigError("embedding dimension must be positive");
  HeadParams p;
  p.d = d;
  p.h1 = cfg.h1;
  p.h2 = cfg.h2;
  p.global = zero_stream(cfg.global, d, cfg.h1, cfg.h2);
  p.local = zero_stream(cfg.local, d, cfg.h1, cfg.h2);
  p.head_w.assign(2 * cfg.h2, 0.0);
  return p;
}

bool HeadParams::same_shape(const HeadParams& o) const {
  return d == o.d && h1 == o.h1 && h2 == o.h2 && global.kind == o.global.kind &&
         local.kind == o.local.kind;
}

std::size_t HeadParams::count() const {
  std::size_t n = 0;
  for_each_tensor([&](const char*, std::span<const double> t) { n += t.size(); });
  return n;
}

std::vector<double> HeadParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(count());
  for_each_tensor([&](const char*, std::span<const double> t) {
    flat.insert(flat.end(), t.begin(), t.end());
  });
  return flat;
}

void HeadParams::assign(std::span<const double> flat) {
  if (flat.size() != count()) throw ConfigError("flat parameter vector has the wrong length");
  std::size_t off = 0;
  for_each_tensor([&](const char*, std::span<double> t) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.size(), t.begin());
    off += t.size();
  });
}

std::string HeadParams::tensor_name(std::size_t i) const {
  std::string name;
  std::size_t off = 0;
  for_each_tensor([&](const char* n, std::span<const double> t) {
    if (name.empty() && i < off + t.size()) name = std::string(n) + "[" + std::to_string(i - off) + "]";
    off += t.size();
  });
  return name;
}

std::size_t count_params(const AggConfig& cfg, std::size_t d) {
  cfg.check();
  std::size_t n = 0;
  for (AggKind k : {cfg.global, cfg.local}) {
    if (k == AggKind::none) continue;
    n += d * cfg.h1 + cfg.h1 + cfg.h1 * cfg.h2 + cfg.h2;
    if (k == AggKind::attention) n += 2 * cfg.h2 * cfg.h2 + cfg.h2;
  }
  return n + 2 * cfg.h2 + 1;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double bce_loss(double logit, int label) {
  return std::max(logit, 0.0) - logit * label + std::log1p(std::exp(-std::abs(logit)));
}

std::vector<double> softmax(std::span<const double> scores) {
  std::vector<double> out(scores.size());
  if (scores.empty()) return out;
  const double m = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) z += out[i] = std::exp(scores[i] - m);
  for (auto& o : out) o /= z;
  return out;
}

// --------------------------------------------------------------------------

PreparedHead prepare(const HeadParams& p) {
  PreparedHead ph;
  ph.params = &p;
  auto prep = [&](const StreamParams& s, PreparedStream& out) {
    out.params = &s;
    if (!s.active()) return;
    out.w1t = s.w1.transposed();
    out.w2t = s.w2.transposed();
    if (s.kind == AggKind::attention) {
      if (s.attn.z.size() != p.h2 || s.attn.wk.rows != p.h2 || s.attn.wv.rows != p.h2)
        throw ConfigError("attention aggregator without attention parameters");
      out.wvt = s.attn.wv.transposed();
      out.query.assign(p.h2, 0.0);
      // query_i = sum_r Wk[r][i] z_r
      simd::active().affine_f64(s.attn.z.data(), p.h2, s.attn.wk.data.data(), nullptr, p.h2,
                                out.query.data());
    }
  };
  prep(p.global, ph.global);
  prep(p.local, ph.local);
  return ph;
}

namespace {

void relu_into(std::span<const double> in, std::span<double> out) {
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

void run_mlp(const Matrix<float>& x, const PreparedStream& ps, std::size_t h1, std::size_t h2,
             StreamTrace& t) {
  const auto& k = simd::active();
  const auto& s = *ps.params;
  const std::size_t d = x.cols;
  t.n = x.rows;
  t.a1 = Matrix<double>(t.n, h1);
  t.h = Matrix<double>(t.n, h1);
  t.a2 = Matrix<double>(t.n, h2);
  t.v = Matrix<double>(t.n, h2);
  for (std::size_t j = 0; j < t.n; ++j) {
    k.affine_f32(x.row(j).data(), d, ps.w1t.data.data(), s.b1.data(), h1, t.a1.row(j).data());
    relu_into(t.a1.row(j), t.h.row(j));
    k.affine_f64(t.h.row(j).data(), h1, ps.w2t.data.data(), s.b2.data(), h2, t.a2.row(j).data());
    relu_into(t.a2.row(j), t.v.row(j));
  }
}

void run_aggregate(AggKind kind, const PreparedStream& ps, std::size_t h2, StreamTrace& t) {
  t.summary.assign(h2, 0.0);
  t.weights.clear();
  t.pooled.clear();
  t.argmax.clear();
  if (t.n == 0) return;  // empty set: zero summary
  switch (kind) {
    case AggKind::mean: {
      for (std::size_t j = 0; j < t.n; ++j)
        for (std::size_t c = 0; c < h2; ++c) t.summary[c] += t.v(j, c);
      const double inv = 1.0 / static_cast<double>(t.n);
      for (auto& s : t.summary) s *= inv;
      break;
    }
    case AggKind::max: {
      t.argmax.assign(h2, 0);
      for (std::size_t c = 0; c < h2; ++c) t.summary[c] = t.v(0, c);
      for (std::size_t j = 1; j < t.n; ++j)
        for (std::size_t c = 0; c < h2; ++c)
          if (t.v(j, c) > t.summary[c]) {
            t.summary[c] = t.v(j, c);
            t.argmax[c] = static_cast<std::uint32_t>(j);
          }
      break;
    }
    case AggKind::attention: {
      const auto& k = simd::active();
      const double scale = 1.0 / std::sqrt(static_cast<double>(h2));
      std::vector<double> scores(t.n);
      for (std::size_t j = 0; j < t.n; ++j)
        scores[j] = scale * k.dot(ps.query.data(), t.v.row(j).data(), h2);
      t.weights = softmax(scores);
      t.pooled.assign(h2, 0.0);
      for (std::size_t j = 0; j < t.n; ++j)
        for (std::size_t c = 0; c < h2; ++c) t.pooled[c] += t.weights[j] * t.v(j, c);
      k.affine_f64(t.pooled.data(), h2, ps.wvt.data.data(), nullptr, h2, t.summary.data());
      break;
    }
    case AggKind::none:
      break;
  }
}

void check_dim(const EmbedBag& bag, const HeadParams& p) {
  if (bag.global_embeds.cols != p.d || bag.tile_embeds.cols != p.d)
    throw DataError("bag '" + bag.bag_id + "' has embedding dimension " +
                    std::to_string(bag.global_embeds.cols) + " but the model expects " +
                    std::to_string(p.d));
}

}  // namespace

double head_logit(const HeadParams& p, std::span<const double> global_summary,
                  std::span<const double> local_summary) {
  const auto& k = simd::active();
  return p.head_b + k.dot(p.head_w.data(), global_summary.data(), p.h2) +
         k.dot(p.head_w.data() + p.h2, local_summary.data(), p.h2);
}

void forward_traced(const EmbedBag& bag, const PreparedHead& ph, BagTrace& trace) {
  const HeadParams& p = *ph.params;
  check_dim(bag, p);
  auto stream = [&](const Matrix<float>& x, const PreparedStream& ps, StreamTrace& t) {
    const auto& s = *ps.params;
    if (!s.active()) {
      t = StreamTrace{};
      t.summary.assign(p.h2, 0.0);
      return;
    }
    run_mlp(x, ps, p.h1, p.h2, t);
    run_aggregate(s.kind, ps, p.h2, t);
  };
  stream(bag.global_embeds, ph.global, trace.global);
  stream(bag.tile_embeds, ph.local, trace.local);
  trace.logit = head_logit(p, trace.global.summary, trace.local.summary);
}

std::vector<double> view_logits(const EmbedBag& bag, const PreparedHead& ph) {
  const HeadParams& p = *ph.params;
  check_dim(bag, p);
  if (!p.global.active()) throw ConfigError("per-view scoring needs the global stream");
  StreamTrace t;
  run_mlp(bag.global_embeds, ph.global, p.h1, p.h2, t);
  const std::vector<double> zeros(p.h2, 0.0);
  std::vector<double> out(t.n);
  for (std::size_t j = 0; j < t.n; ++j) {
    const auto v = t.v.row(j);
    out[j] = head_logit(p, std::span<const double>(v.data(), v.size()), zeros);
  }
  return out;
}

std::vector<double> mlp_forward(std::span<const float> e, const StreamParams& s) {
  if (!s.active()) throw ConfigError("mlp_forward on a disabled stream");
  if (e.size() != s.w1.cols)
    throw DataError("input has length " + std::to_string(e.size()) + ", stream expects " +
                    std::to_string(s.w1.cols));
  HeadParams holder;
  holder.d = s.w1.cols;
  holder.h1 = s.w1.rows;
  holder.h2 = s.w2.rows;
  PreparedStream ps;
  ps.params = &s;
  ps.w1t = s.w1.transposed();
  ps.w2t = s.w2.transposed();
  Matrix<float> x(1, e.size());
  std::copy(e.begin(), e.end(), x.data.begin());
  StreamTrace t;
  run_mlp(x, ps, holder.h1, holder.h2, t);
  return t.v.data;
}

Aggregate aggregate(AggKind kind, const Matrix<double>& features, const StreamParams& s) {
  if (kind == AggKind::none) throw ConfigError("aggregate: kind is none");
  if (features.rows == 0) throw ConfigError("aggregate: empty feature set");
  const std::size_t h2 = features.cols;
  PreparedStream ps;
  ps.params = &s;
  if (kind == AggKind::attention) {
    if (s.attn.z.size() != h2 || s.attn.wk.rows != h2 || s.attn.wk.cols != h2 ||
        s.attn.wv.rows != h2 || s.attn.wv.cols != h2)
      throw ConfigError("aggregate: attention parameters missing or mis-sized");
    ps.wvt = s.attn.wv.transposed();
    ps.query.assign(h2, 0.0);
    simd::active().affine_f64(s.attn.z.data(), h2, s.attn.wk.data.data(), nullptr, h2,
                              ps.query.data());
  }
  StreamTrace t;
  t.n = features.rows;
  t.v = features;
  run_aggregate(kind, ps, h2, t);
  Aggregate out;
  out.summary = std::move(t.summary);
  if (kind == AggKind::attention) out.weights = std::move(t.weights);
  return out;
}

ForwardResult forward(const EmbedBag& bag, const HeadParams& p) {
  const auto ph = prepare(p);
  BagTrace trace;
  forward_traced(bag, ph, trace);
  ForwardResult r;
  r.logit = trace.logit;
  if (p.local.kind == AggKind::attention) r.local_weights = std::move(trace.local.weights);
  return r;
}

double bag_score(const EmbedBag& bag, const HeadParams& p) { return bag_score(bag, prepare(p)); }

double bag_score(const EmbedBag& bag, const PreparedHead& ph) {
  const HeadParams& p = *ph.params;
  if (p.mode == InferenceMode::mil) {
    BagTrace trace;
    forward_traced(bag, ph, trace);
    return sigmoid(trace.logit);
  }
  const auto logits = view_logits(bag, ph);
  double agg = 0.0;
  for (double l : logits) {
    const double prob = sigmoid(l);
    agg = p.mode == InferenceMode::sil_max ? std::max(agg, prob) : agg + prob;
  }
  if (p.mode == InferenceMode::sil_mean) agg /= static_cast<double>(logits.size());
  return agg;
}

}  // namespace milpf

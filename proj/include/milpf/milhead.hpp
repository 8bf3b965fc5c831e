#pragma once

// The two-stream MIL head: a per-instance MLP in each stream, a
// permutation-invariant aggregator (mean, max or single-latent cross
// attention), late fusion by concatenation and a linear logit.
//
//   logit = w . concat(A_global(MLP(G)), A_local(MLP(T))) + b
//
// A disabled stream contributes a zero block, so w always has 2*h2 entries.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "milpf/embedset.hpp"
#include "milpf/matrix.hpp"

namespace milpf {

enum class AggKind : std::uint8_t { none = 0, mean = 1, max = 2, attention = 3 };

const char* to_string(AggKind k);
AggKind agg_from_string(std::string_view s);

// How bag scores are produced. sil_* models were trained per view and
// aggregate per-view probabilities only at inference.
enum class InferenceMode : std::uint8_t { mil = 0, sil_mean = 1, sil_max = 2 };

const char* to_string(InferenceMode m);
InferenceMode mode_from_string(std::string_view s);

struct AggConfig {
  AggKind global = AggKind::max;
  AggKind local = AggKind::attention;
  std::size_t h1 = 16;
  std::size_t h2 = 8;

  // Throws ConfigError when both streams are disabled or widths are zero.
  void check() const;
  bool operator==(const AggConfig&) const = default;
};

struct AttnParams {
  std::vector<double> z;  // latent query, h2
  Matrix<double> wk;      // h2 x h2
  Matrix<double> wv;      // h2 x h2

  bool operator==(const AttnParams&) const = default;
};

struct StreamParams {
  AggKind kind = AggKind::none;
  Matrix<double> w1;  // h1 x d
  std::vector<double> b1;
  Matrix<double> w2;  // h2 x h1
  std::vector<double> b2;
  AttnParams attn;  // empty unless kind == attention

  bool active() const { return kind != AggKind::none; }
  bool operator==(const StreamParams&) const = default;
};

struct HeadParams {
  std::size_t d = 0;
  std::size_t h1 = 16;
  std::size_t h2 = 8;
  InferenceMode mode = InferenceMode::mil;
  StreamParams global;
  StreamParams local;
  std::vector<double> head_w;  // 2 * h2: [global block | local block]
  double head_b = 0.0;

  static HeadParams zeros(const AggConfig& cfg, std::size_t d);
  AggConfig config() const { return {global.kind, local.kind, h1, h2}; }
  bool same_shape(const HeadParams& o) const;

  // Visits every trainable tensor in checkpoint order with a dotted name.
  template <class F>
  void for_each_tensor(F&& f) {
    visit_stream("global", global, f);
    visit_stream("local", local, f);
    f("head.w", std::span<double>(head_w));
    f("head.b", std::span<double>(&head_b, 1));
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    const_cast<HeadParams*>(this)->for_each_tensor(
        [&](const char* name, std::span<double> t) { f(name, std::span<const double>(t)); });
  }

  std::size_t count() const;
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
  // Name of the tensor holding flat index i.
  std::string tensor_name(std::size_t i) const;

  bool operator==(const HeadParams&) const = default;

 private:
  template <class F>
  static void visit_stream(const std::string& prefix, StreamParams& s, F& f) {
    if (!s.active()) return;
    f((prefix + ".w1").c_str(), std::span<double>(s.w1.data));
    f((prefix + ".b1").c_str(), std::span<double>(s.b1));
    f((prefix + ".w2").c_str(), std::span<double>(s.w2.data));
    f((prefix + ".b2").c_str(), std::span<double>(s.b2));
    if (s.kind == AggKind::attention) {
      f((prefix + ".attn.z").c_str(), std::span<double>(s.attn.z));
      f((prefix + ".attn.wk").c_str(), std::span<double>(s.attn.wk.data));
      f((prefix + ".attn.wv").c_str(), std::span<double>(s.attn.wv.data));
    }
  }
};

// Gradients share the parameter layout.
using Grad = HeadParams;

std::size_t count_params(const AggConfig& cfg, std::size_t d);

double sigmoid(double x);
double bce_loss(double logit, int label);

// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> scores);

// ReLU(W2 ReLU(W1 e + b1) + b2).
std::vector<double> mlp_forward(std::span<const float> e, const StreamParams& s);

struct Aggregate {
  std::vector<double> summary;
  std::optional<std::vector<double>> weights;  // attention only
};

// features: one row of width h2 per instance. Throws ConfigError on an empty
// set or missing attention parameters.
Aggregate aggregate(AggKind kind, const Matrix<double>& features, const StreamParams& s);

struct ForwardResult {
  double logit = 0.0;
  std::optional<std::vector<double>> local_weights;
};

ForwardResult forward(const EmbedBag& bag, const HeadParams& p);

// Bag probability under the model's inference mode.
double bag_score(const EmbedBag& bag, const HeadParams& p);

// ---------------------------------------------------------------------------
// Traced evaluation. Shared by forward(), training and the gradient code so
// that every consumer sees bit-identical logits.

struct PreparedStream {
  const StreamParams* params = nullptr;
  Matrix<double> w1t;  // d x h1
  Matrix<double> w2t;  // h1 x h2
  Matrix<double> wvt;  // h2 x h2 (transpose of Wv)
  std::vector<double> query;  // Wk^T z
};

struct PreparedHead {
  const HeadParams* params = nullptr;
  PreparedStream global;
  PreparedStream local;
};

PreparedHead prepare(const HeadParams& p);

struct StreamTrace {
  std::size_t n = 0;
  Matrix<double> a1, h, a2, v;  // pre/post activations per instance
  std::vector<double> summary;
  std::vector<double> weights;             // attention
  std::vector<double> pooled;              // attention: sum_j alpha_j v_j
  std::vector<std::uint32_t> argmax;       // max: per coordinate
};

struct BagTrace {
  StreamTrace global;
  StreamTrace local;
  double logit = 0.0;
};

void forward_traced(const EmbedBag& bag, const PreparedHead& ph, BagTrace& trace);

// Logit of each view on its own through the global stream (SIL scoring).
std::vector<double> view_logits(const EmbedBag& bag, const PreparedHead& ph);

double bag_score(const EmbedBag& bag, const PreparedHead& ph);

double head_logit(const HeadParams& p, std::span<const double> global_summary,
                  std::span<const double> local_summary);

}  // namespace milpf

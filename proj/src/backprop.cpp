#include "milpf/backprop.hpp"

#include <cmath>
#include <string>

#include "milpf/error.hpp"
#include "milpf/simd.hpp"

namespace milpf {

namespace {

// Weight gradients are accumulated transposed to match the kernel layout.
struct StreamAcc {
  Matrix<double> dw1t;  // d x h1
  std::vector<double> db1;
  Matrix<double> dw2t;  // h1 x h2
  std::vector<double> db2;
  std::vector<double> dz;
  Matrix<double> dwk, dwv;

  StreamAcc(const StreamParams& s, std::size_t d, std::size_t h1, std::size_t h2) {
    if (!s.active()) return;
    dw1t = Matrix<double>(d, h1);
    db1.assign(h1, 0.0);
    dw2t = Matrix<double>(h1, h2);
    db2.assign(h2, 0.0);
    if (s.kind == AggKind::attention) {
      dz.assign(h2, 0.0);
      dwk = Matrix<double>(h2, h2);
      dwv = Matrix<double>(h2, h2);
    }
  }

  void store(StreamParams& g) const {
    if (!g.active()) return;
    g.w1 = dw1t.transposed();
    g.b1 = db1;
    g.w2 = dw2t.transposed();
    g.b2 = db2;
    if (g.kind == AggKind::attention) {
      g.attn.z = dz;
      g.attn.wk = dwk;
      g.attn.wv = dwv;
    }
  }
};

void backward_stream(const Matrix<float>& x, const PreparedStream& ps, const StreamTrace& t,
                     std::span<const double> g, std::size_t h1, std::size_t h2, StreamAcc& acc) {
  const StreamParams& s = *ps.params;
  if (!s.active() || t.n == 0) return;
  const auto& k = simd::active();
  const std::size_t n = t.n, d = x.cols;

  Matrix<double> dv(n, h2);
  switch (s.kind) {
    case AggKind::mean: {
      const double inv = 1.0 / static_cast<double>(n);
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < h2; ++c) dv(j, c) = g[c] * inv;
      break;
    }
    case AggKind::max:
      for (std::size_t c = 0; c < h2; ++c) dv(t.argmax[c], c) = g[c];
      break;
    case AggKind::attention: {
      // summary = Wv pooled, pooled = sum_j a_j v_j, a = softmax(scale * q.v_j),
      // q = Wk^T z.
      const double scale = 1.0 / std::sqrt(static_cast<double>(h2));
      k.outer_acc_f64(g.data(), h2, t.pooled.data(), h2, acc.dwv.data.data());
      std::vector<double> dpooled(h2);
      k.affine_f64(g.data(), h2, s.attn.wv.data.data(), nullptr, h2, dpooled.data());
      std::vector<double> dalpha(n);
      double mean_dalpha = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        dalpha[j] = k.dot(t.v.row(j).data(), dpooled.data(), h2);
        mean_dalpha += t.weights[j] * dalpha[j];
      }
      std::vector<double> dq(h2, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const double a = t.weights[j];
        const double dscore = a * (dalpha[j] - mean_dalpha) * scale;
        for (std::size_t c = 0; c < h2; ++c) {
          dq[c] += dscore * t.v(j, c);
          dv(j, c) = a * dpooled[c] + dscore * ps.query[c];
        }
      }
      // q_i = sum_r Wk[r][i] z_r
      k.outer_acc_f64(s.attn.z.data(), h2, dq.data(), h2, acc.dwk.data.data());
      for (std::size_t r = 0; r < h2; ++r)
        acc.dz[r] += k.dot(s.attn.wk.row(r).data(), dq.data(), h2);
      break;
    }
    case AggKind::none:
      return;
  }

  std::vector<double> da2(h2), dh(h1), da1(h1);
  for (std::size_t j = 0; j < n; ++j) {
    bool any = false;
    for (std::size_t c = 0; c < h2; ++c) {
      da2[c] = t.a2(j, c) > 0.0 ? dv(j, c) : 0.0;
      any |= da2[c] != 0.0;
    }
    if (!any) continue;
    k.outer_acc_f64(t.h.row(j).data(), h1, da2.data(), h2, acc.dw2t.data.data());
    for (std::size_t c = 0; c < h2; ++c) acc.db2[c] += da2[c];
    k.affine_f64(da2.data(), h2, s.w2.data.data(), nullptr, h1, dh.data());
    for (std::size_t c = 0; c < h1; ++c) {
      da1[c] = t.a1(j, c) > 0.0 ? dh[c] : 0.0;
      acc.db1[c] += da1[c];
    }
    k.outer_acc_f32(x.row(j).data(), d, da1.data(), h1, acc.dw1t.data.data());
  }
}

void check_finite(const Grad& g) {
  g.for_each_tensor([](const char* name, std::span<const double> t) {
    for (double v : t)
      if (!std::isfinite(v)) throw NumericError(std::string("non-finite gradient in ") + name);
  });
}

}  // namespace

std::vector<const EmbedBag*> bag_pointers(const std::vector<EmbedBag>& bags) {
  std::vector<const EmbedBag*> out;
  out.reserve(bags.size());
  for (const auto& b : bags) out.push_back(&b);
  return out;
}

LossGrad loss_and_grad(std::span<const EmbedBag* const> bags, const HeadParams& p) {
  if (bags.empty()) throw ConfigError("loss_and_grad: empty bag list");
  const auto ph = prepare(p);
  StreamAcc gacc(p.global, p.d, p.h1, p.h2), lacc(p.local, p.d, p.h1, p.h2);
  LossGrad out;
  out.grad = HeadParams::zeros(p.config(), p.d);
  out.grad.mode = p.mode;
  const double inv_b = 1.0 / static_cast<double>(bags.size());
  BagTrace trace;
  std::vector<double> gsum(p.h2), lsum(p.h2);
  double loss = 0.0;
  for (const EmbedBag* bag : bags) {
    forward_traced(*bag, ph, trace);
    loss += bce_loss(trace.logit, bag->label);
    const double dlogit = (sigmoid(trace.logit) - bag->label) * inv_b;
    for (std::size_t c = 0; c < p.h2; ++c) {
      out.grad.head_w[c] += dlogit * trace.global.summary[c];
      out.grad.head_w[p.h2 + c] += dlogit * trace.local.summary[c];
      gsum[c] = dlogit * p.head_w[c];
      lsum[c] = dlogit * p.head_w[p.h2 + c];
    }
    out.grad.head_b += dlogit;
    backward_stream(bag->global_embeds, ph.global, trace.global, gsum, p.h1, p.h2, gacc);
    backward_stream(bag->tile_embeds, ph.local, trace.local, lsum, p.h1, p.h2, lacc);
  }
  out.loss = loss * inv_b;
  if (!std::isfinite(out.loss)) throw NumericError("non-finite loss");
  gacc.store(out.grad.global);
  lacc.store(out.grad.local);
  check_finite(out.grad);
  return out;
}

LossGrad loss_and_grad(const std::vector<EmbedBag>& bags, const HeadParams& p) {
  const auto ptrs = bag_pointers(bags);
  return loss_and_grad(std::span<const EmbedBag* const>(ptrs), p);
}

double mean_loss(std::span<const EmbedBag* const> bags, const HeadParams& p) {
  if (bags.empty()) throw ConfigError("mean_loss: empty bag list");
  const auto ph = prepare(p);
  BagTrace trace;
  double loss = 0.0;
  for (const EmbedBag* bag : bags) {
    forward_traced(*bag, ph, trace);
    loss += bce_loss(trace.logit, bag->label);
  }
  return loss / static_cast<double>(bags.size());
}

std::vector<double> fd_gradient(const std::function<double(std::span<const double>)>& f,
                                std::span<const double> x, double step) {
  if (!(step > 0.0)) throw ConfigError("fd_gradient: step must be positive");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double h = step * (1.0 + std::abs(x[i]));
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

Grad fd_grad(std::span<const EmbedBag* const> bags, const HeadParams& p, double step) {
  HeadParams work = p;
  const auto flat = p.flatten();
  const auto g = fd_gradient(
      [&](std::span<const double> x) {
        work.assign(x);
        return mean_loss(bags, work);
      },
      flat, step);
  Grad out = p;
  out.assign(g);
  return out;
}

std::vector<std::uint32_t> kink_signature(std::span<const EmbedBag* const> bags,
                                          const HeadParams& p) {
  const auto ph = prepare(p);
  BagTrace trace;
  std::vector<std::uint32_t> sig;
  auto add = [&](const StreamTrace& t) {
    for (double a : t.a1.data) sig.push_back(a > 0.0);
    for (double a : t.a2.data) sig.push_back(a > 0.0);
    sig.insert(sig.end(), t.argmax.begin(), t.argmax.end());
  };
  for (const EmbedBag* bag : bags) {
    forward_traced(*bag, ph, trace);
    add(trace.global);
    add(trace.local);
  }
  return sig;
}

}  // namespace milpf

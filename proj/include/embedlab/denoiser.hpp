#pragma once

// Conditional noise predictor eps_hat = f(x_t, t, e).
//
//   h   = relu(x_t W_in + tf(t) W_time + b_h)
//   q   = h W_q;  K = E W_k;  V = E W_v          (E: allowed rows of e)
//   a   = softmax(q K^T / sqrt(d_a)) V
//   h2  = h + a W_o
//   eps = relu(h2 W_1 + b_1) W_2 + b_2 + x_t W_skip
//
// Masking removes embedding rows from the key/value set, so an excluded row
// takes no part in the softmax normalisation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "embedlab/errors.hpp"
#include "embedlab/matrix.hpp"
#include "embedlab/rng.hpp"
#include "embedlab/text_encoder.hpp"

namespace embedlab {

struct DenoiserConfig {
  std::size_t image_dim = 64;
  std::size_t time_dim = 32;
  std::size_t hidden = 64;
  std::size_t attn = 32;
  std::size_t embed_dim = 32;
};

struct DenoiserParams {
  Matrix w_in;     // image_dim x hidden
  Matrix w_time;   // time_dim x hidden
  Matrix b_hidden; // 1 x hidden
  Matrix w_q;      // hidden x attn
  Matrix w_k;      // embed_dim x attn
  Matrix w_v;      // embed_dim x attn
  Matrix w_o;      // attn x hidden
  Matrix w_mlp1;   // hidden x hidden
  Matrix b_mlp1;   // 1 x hidden
  Matrix w_mlp2;   // hidden x image_dim
  Matrix b_mlp2;   // 1 x image_dim
  Matrix w_skip;   // image_dim x image_dim

  std::size_t time_dim() const noexcept { return w_time.rows(); }
  std::size_t embed_dim() const noexcept { return w_k.rows(); }
};

inline std::vector<NamedTensor> tensors(DenoiserParams& p) {
  return {{"w_in", &p.w_in},     {"w_time", &p.w_time}, {"b_hidden", &p.b_hidden},
          {"w_q", &p.w_q},       {"w_k", &p.w_k},       {"w_v", &p.w_v},
          {"w_o", &p.w_o},       {"w_mlp1", &p.w_mlp1}, {"b_mlp1", &p.b_mlp1},
          {"w_mlp2", &p.w_mlp2}, {"b_mlp2", &p.b_mlp2}, {"w_skip", &p.w_skip}};
}

inline std::vector<ConstNamedTensor> tensors(const DenoiserParams& p) {
  std::vector<ConstNamedTensor> out;
  for (auto& t : tensors(const_cast<DenoiserParams&>(p))) out.push_back({t.name, t.tensor});
  return out;
}

inline DenoiserParams zeros_like(const DenoiserParams& p) {
  DenoiserParams z = p;
  for (auto& t : tensors(z)) t.tensor->fill(0.0);
  return z;
}

// Weights ~ N(0, 1/fan_in), biases 0.
inline DenoiserParams init_denoiser(const DenoiserConfig& c, CounterRng& rng) {
  auto w = [&](std::size_t r, std::size_t cols) {
    return detail::gaussian_matrix(r, cols, 1.0 / std::sqrt(static_cast<double>(r)), rng);
  };
  DenoiserParams p;
  p.w_in = w(c.image_dim, c.hidden);
  p.w_time = w(c.time_dim, c.hidden);
  p.b_hidden = Matrix(1, c.hidden);
  p.w_q = w(c.hidden, c.attn);
  p.w_k = w(c.embed_dim, c.attn);
  p.w_v = w(c.embed_dim, c.attn);
  p.w_o = w(c.attn, c.hidden);
  p.w_mlp1 = w(c.hidden, c.hidden);
  p.b_mlp1 = Matrix(1, c.hidden);
  p.w_mlp2 = w(c.hidden, c.image_dim);
  p.b_mlp2 = Matrix(1, c.image_dim);
  p.w_skip = w(c.image_dim, c.image_dim);
  return p;
}

// All parameters zero: predicts eps_hat = 0 everywhere.
inline DenoiserParams zero_denoiser(const DenoiserConfig& c) {
  DenoiserParams p;
  p.w_in = Matrix(c.image_dim, c.hidden);
  p.w_time = Matrix(c.time_dim, c.hidden);
  p.b_hidden = Matrix(1, c.hidden);
  p.w_q = Matrix(c.hidden, c.attn);
  p.w_k = Matrix(c.embed_dim, c.attn);
  p.w_v = Matrix(c.embed_dim, c.attn);
  p.w_o = Matrix(c.attn, c.hidden);
  p.w_mlp1 = Matrix(c.hidden, c.hidden);
  p.b_mlp1 = Matrix(1, c.hidden);
  p.w_mlp2 = Matrix(c.hidden, c.image_dim);
  p.b_mlp2 = Matrix(1, c.image_dim);
  p.w_skip = Matrix(c.image_dim, c.image_dim);
  return p;
}

class AttnMask {
 public:
  AttnMask() = default;
  explicit AttnMask(std::vector<bool> allowed) : allowed_(std::move(allowed)) {}

  static AttnMask all(std::size_t length) { return AttnMask(std::vector<bool>(length, true)); }

  // Allowed everywhere except the half-open 0-based range [first, last).
  static AttnMask excluding_range(std::size_t length, std::size_t first, std::size_t last) {
    if (first > last || last > length) throw ArgumentError("mask range outside sequence");
    std::vector<bool> a(length, true);
    for (std::size_t i = first; i < last; ++i) a[i] = false;
    return AttnMask(std::move(a));
  }

  std::size_t length() const noexcept { return allowed_.size(); }
  bool allowed(std::size_t i) const { return allowed_.at(i); }
  std::size_t allowed_count() const noexcept {
    return static_cast<std::size_t>(std::count(allowed_.begin(), allowed_.end(), true));
  }
  bool is_noop() const noexcept { return allowed_count() == allowed_.size(); }
  const std::vector<bool>& flags() const noexcept { return allowed_; }

 private:
  std::vector<bool> allowed_;
};

// Sinusoidal features: sin(t w_i) for the first half, cos(t w_i) for the second,
// with w_i = 10000^(-i / half).
inline Matrix time_features(int t, std::size_t dim) {
  const std::size_t half = dim / 2;
  Matrix f(1, dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double w = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    f[i] = std::sin(t * w);
    f[half + i] = std::cos(t * w);
  }
  return f;
}

// Keys and values of the allowed embedding rows; reused across timesteps.
struct Conditioning {
  Matrix keys;                     // n_allowed x attn
  Matrix values;                   // n_allowed x attn
  std::vector<std::size_t> rows;   // source row of each key
};

inline Conditioning make_conditioning(const DenoiserParams& p, const Matrix& embedding,
                                      const AttnMask& mask) {
  if (embedding.cols() != p.embed_dim())
    throw ArgumentError("denoiser: embedding width " + std::to_string(embedding.cols()) +
                        " does not match " + std::to_string(p.embed_dim()));
  if (mask.length() != embedding.rows())
    throw ArgumentError("denoiser: mask length does not match embedding rows");
  Conditioning c;
  for (std::size_t i = 0; i < embedding.rows(); ++i)
    if (mask.allowed(i)) c.rows.push_back(i);
  if (c.rows.empty()) throw ArgumentError("denoiser: attention mask excludes every position");
  Matrix sliced(c.rows.size(), embedding.cols());
  for (std::size_t r = 0; r < c.rows.size(); ++r) {
    const auto src = embedding.row(c.rows[r]);
    std::copy(src.begin(), src.end(), sliced.row(r).begin());
  }
  c.keys = matmul(sliced, p.w_k);
  c.values = matmul(sliced, p.w_v);
  return c;
}

struct DenoiserTrace {
  Matrix x_t, time_feat;
  Matrix pre, h;                 // 1 x hidden
  Matrix q;                      // 1 x attn
  std::vector<double> probs;     // over allowed keys
  Matrix attended;               // 1 x attn
  Matrix h2;                     // 1 x hidden
  Matrix m_pre, m;               // 1 x hidden
};

inline Matrix predict_eps(const DenoiserParams& p, const Matrix& x_t, int t, const Conditioning& c,
                          DenoiserTrace* trace = nullptr) {
  Matrix tf = time_features(t, p.time_dim());
  Matrix pre = matmul(x_t, p.w_in);
  pre += matmul(tf, p.w_time);
  pre += p.b_hidden;
  Matrix h = pre;
  for (double& v : h.values()) v = std::max(v, 0.0);

  Matrix q = matmul(h, p.w_q);
  const std::size_t n = c.keys.rows();
  const std::size_t da = c.keys.cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(da));
  std::vector<double> probs(n);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < da; ++k) s += q[k] * c.keys(j, k);
    probs[j] = s * scale;
    mx = std::max(mx, probs[j]);
  }
  double z = 0.0;
  for (double& v : probs) {
    v = std::exp(v - mx);
    z += v;
  }
  Matrix attended(1, da);
  for (std::size_t j = 0; j < n; ++j) {
    probs[j] /= z;
    for (std::size_t k = 0; k < da; ++k) attended[k] += probs[j] * c.values(j, k);
  }

  Matrix h2 = h + matmul(attended, p.w_o);
  Matrix m_pre = matmul(h2, p.w_mlp1);
  m_pre += p.b_mlp1;
  Matrix m = m_pre;
  for (double& v : m.values()) v = std::max(v, 0.0);
  Matrix eps = matmul(m, p.w_mlp2);
  eps += p.b_mlp2;
  eps += matmul(x_t, p.w_skip);

  if (trace) {
    trace->x_t = x_t;
    trace->time_feat = std::move(tf);
    trace->pre = std::move(pre);
    trace->h = std::move(h);
    trace->q = std::move(q);
    trace->probs = std::move(probs);
    trace->attended = std::move(attended);
    trace->h2 = std::move(h2);
    trace->m_pre = std::move(m_pre);
    trace->m = std::move(m);
  }
  return eps;
}

inline Matrix predict_eps(const DenoiserParams& p, const Matrix& x_t, int t,
                          const TextEmbedding& emb, const AttnMask& mask) {
  return predict_eps(p, x_t, t, make_conditioning(p, emb.data, mask));
}

// Backward through one prediction. Accumulates parameter gradients (except
// w_k / w_v, which depend on the embedding and are finished by the caller)
// and the gradients w.r.t. the conditioning keys and values.
inline void predict_eps_backward(const DenoiserParams& p, const Conditioning& c,
                                 const DenoiserTrace& t, const Matrix& d_eps, DenoiserParams& g,
                                 Matrix& d_keys, Matrix& d_values) {
  g.w_mlp2 += matmul_tn(t.m, d_eps);
  g.b_mlp2 += d_eps;
  g.w_skip += matmul_tn(t.x_t, d_eps);
  Matrix dm = matmul_nt(d_eps, p.w_mlp2);
  for (std::size_t i = 0; i < dm.size(); ++i)
    if (t.m_pre[i] <= 0.0) dm[i] = 0.0;
  g.w_mlp1 += matmul_tn(t.h2, dm);
  g.b_mlp1 += dm;
  Matrix dh2 = matmul_nt(dm, p.w_mlp1);

  g.w_o += matmul_tn(t.attended, dh2);
  Matrix da = matmul_nt(dh2, p.w_o);

  const std::size_t n = c.keys.rows();
  const std::size_t dk = c.keys.cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<double> dp(n);
  double weighted = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < dk; ++k) {
      s += da[k] * c.values(j, k);
      d_values(j, k) += t.probs[j] * da[k];
    }
    dp[j] = s;
    weighted += t.probs[j] * s;
  }
  Matrix dq(1, dk);
  for (std::size_t j = 0; j < n; ++j) {
    const double ds = t.probs[j] * (dp[j] - weighted) * scale;
    for (std::size_t k = 0; k < dk; ++k) {
      dq[k] += ds * c.keys(j, k);
      d_keys(j, k) += ds * t.q[k];
    }
  }
  g.w_q += matmul_tn(t.h, dq);

  Matrix dh = dh2;
  dh += matmul_nt(dq, p.w_q);
  for (std::size_t i = 0; i < dh.size(); ++i)
    if (t.pre[i] <= 0.0) dh[i] = 0.0;
  g.w_in += matmul_tn(t.x_t, dh);
  g.w_time += matmul_tn(t.time_feat, dh);
  g.b_hidden += dh;
}

}  // namespace embedlab

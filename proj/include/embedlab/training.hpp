#pragma once

// Joint training of the text encoder and the denoiser on the L1 noise
// objective, with exact hand-derived gradients and Adam updates.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "embedlab/diffusion.hpp"
#include "embedlab/errors.hpp"
#include "embedlab/model.hpp"
#include "embedlab/rng.hpp"
#include "embedlab/toyworld.hpp"

namespace embedlab {

struct TrainingExample {
  std::size_t prompt = 0;  // index into the prompt table
  Matrix x_t;              // 1 x 64
  int t = 1;
  Matrix eps;              // 1 x 64, the noise that produced x_t
};

namespace detail {

inline std::vector<std::size_t> prompts_in(std::span<const TrainingExample> batch) {
  std::vector<std::size_t> ids;
  for (const auto& ex : batch) ids.push_back(ex.prompt);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

inline double sign_or_zero(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace detail

// Mean absolute error of the predicted noise over the batch and all pixels.
// When `grads` is non-null it receives the exact gradient (subgradient 0 at
// |0|) w.r.t. every encoder and denoiser parameter; it must be zeroed and
// shaped like `params`.
inline double batch_loss(const JointParams& params, std::span<const TokenSeq> prompts,
                         std::span<const TrainingExample> batch, const EncodeOptions& enc_opt,
                         JointParams* grads = nullptr) {
  if (batch.empty()) return 0.0;
  const DenoiserParams& dp = params.denoiser;
  const auto used = detail::prompts_in(batch);

  std::map<std::size_t, std::size_t> slot;
  std::vector<EncoderTrace> traces(used.size());
  std::vector<TextEmbedding> embs(used.size());
  std::vector<Conditioning> conds(used.size());
  std::vector<Matrix> d_keys(used.size()), d_values(used.size());
  for (std::size_t s = 0; s < used.size(); ++s) {
    slot[used[s]] = s;
    embs[s] = encode(params.encoder, prompts[used[s]], enc_opt, grads ? &traces[s] : nullptr);
    conds[s] = make_conditioning(dp, embs[s].data, AttnMask::all(embs[s].length()));
    if (grads) {
      d_keys[s] = Matrix(conds[s].keys.rows(), conds[s].keys.cols());
      d_values[s] = Matrix(conds[s].values.rows(), conds[s].values.cols());
    }
  }

  const double denom = static_cast<double>(batch.size() * batch.front().eps.size());
  double total = 0.0;
  DenoiserTrace trace;
  for (const auto& ex : batch) {
    const std::size_t s = slot[ex.prompt];
    Matrix pred = predict_eps(dp, ex.x_t, ex.t, conds[s], grads ? &trace : nullptr);
    double l = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) l += std::abs(ex.eps[i] - pred[i]);
    total += l;
    if (grads) {
      Matrix d_pred(1, pred.size());
      for (std::size_t i = 0; i < pred.size(); ++i)
        d_pred[i] = detail::sign_or_zero(pred[i] - ex.eps[i]) / denom;
      predict_eps_backward(dp, conds[s], trace, d_pred, grads->denoiser, d_keys[s], d_values[s]);
    }
  }

  if (grads) {
    for (std::size_t s = 0; s < used.size(); ++s) {
      const Matrix& e = embs[s].data;
      grads->denoiser.w_k += matmul_tn(e, d_keys[s]);
      grads->denoiser.w_v += matmul_tn(e, d_values[s]);
      Matrix d_emb = matmul_nt(d_keys[s], dp.w_k);
      d_emb += matmul_nt(d_values[s], dp.w_v);
      encode_backward(params.encoder, traces[s], d_emb, grads->encoder);
    }
  }
  return total / denom;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(const JointParams& shape, AdamConfig cfg)
      : cfg_(cfg), m_(zeros_like(shape)), v_(zeros_like(shape)) {}

  void step(JointParams& params, JointParams& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto p = tensors(params);
    auto g = tensors(grads);
    auto m = tensors(m_);
    auto v = tensors(v_);
    for (std::size_t k = 0; k < p.size(); ++k) {
      Matrix& pk = *p[k].tensor;
      const Matrix& gk = *g[k].tensor;
      Matrix& mk = *m[k].tensor;
      Matrix& vk = *v[k].tensor;
      for (std::size_t i = 0; i < pk.size(); ++i) {
        mk[i] = cfg_.beta1 * mk[i] + (1.0 - cfg_.beta1) * gk[i];
        vk[i] = cfg_.beta2 * vk[i] + (1.0 - cfg_.beta2) * gk[i] * gk[i];
        pk[i] -= cfg_.lr * (mk[i] / c1) / (std::sqrt(vk[i] / c2) + cfg_.eps);
      }
    }
  }

  long steps_taken() const noexcept { return t_; }

 private:
  AdamConfig cfg_;
  JointParams m_, v_;
  long t_ = 0;
};

struct TrainConfig {
  long steps = 20000;
  std::size_t batch = 64;
  AdamConfig adam;
  std::uint64_t seed = 1;
  long log_every = 100;
  std::size_t eval_samples = 2048;
};

struct LogEntry {
  long step;
  double loss;  // batch loss at that step
};

struct TrainResult {
  JointParams params;
  std::vector<LogEntry> log;
  double final_loss = 0.0;  // mean L1 over a fixed evaluation draw
};

// Prompt table and per-sample prompt index for a dataset.
struct PromptTable {
  std::vector<std::string> texts;
  std::vector<TokenSeq> tokens;
  std::vector<std::size_t> sample_prompt;
};

inline PromptTable build_prompt_table(const Vocabulary& vocab, std::size_t max_len,
                                      const std::vector<Sample>& data) {
  PromptTable pt;
  std::map<std::string, std::size_t> ids;
  for (const auto& s : data) {
    auto it = ids.find(s.prompt);
    if (it == ids.end()) {
      it = ids.emplace(s.prompt, pt.texts.size()).first;
      pt.texts.push_back(s.prompt);
      pt.tokens.push_back(tokenize(vocab, s.prompt, max_len));
    }
    pt.sample_prompt.push_back(it->second);
  }
  return pt;
}

// Draws a batch: dataset index, timestep uniform in 1..T, eps ~ N(0, I).
inline std::vector<TrainingExample> draw_batch(const Schedule& sched, const std::vector<Sample>& data,
                                               const PromptTable& pt, std::size_t n, CounterRng& rng) {
  std::vector<TrainingExample> batch;
  batch.reserve(n);
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t idx = rng.below(data.size());
    TrainingExample ex;
    ex.prompt = pt.sample_prompt[idx];
    ex.t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.steps())));
    ex.eps = gaussian_noise(1, data[idx].x0.size(), rng);
    ex.x_t = q_sample(sched, data[idx].x0, ex.t, ex.eps);
    batch.push_back(std::move(ex));
  }
  return batch;
}

inline double evaluate_loss(const JointParams& params, const Schedule& sched,
                            const std::vector<Sample>& data, const PromptTable& pt,
                            const EncodeOptions& enc_opt, std::size_t n, std::uint64_t seed) {
  CounterRng rng(seed, 0xE7A1ull);
  double total = 0.0;
  std::size_t done = 0;
  while (done < n) {
    const std::size_t chunk = std::min<std::size_t>(256, n - done);
    auto batch = draw_batch(sched, data, pt, chunk, rng);
    total += batch_loss(params, pt.tokens, batch, enc_opt) * static_cast<double>(chunk);
    done += chunk;
  }
  return total / static_cast<double>(n);
}

using TrainProgress = std::function<void(const LogEntry&)>;

// Sequential and deterministic for a fixed (init, data, config).
inline TrainResult train(const Vocabulary& vocab, const std::vector<Sample>& data, JointParams init,
                         const Schedule& sched, const TrainConfig& cfg,
                         const EncodeOptions& enc_opt = {true, false},
                         const TrainProgress& progress = {}) {
  if (data.empty()) throw ArgumentError("train: empty dataset");
  if (cfg.batch == 0) throw ArgumentError("train: batch size must be positive");
  const PromptTable pt = build_prompt_table(vocab, init.encoder.max_len(), data);

  TrainResult r;
  r.params = std::move(init);
  Adam adam(r.params, cfg.adam);
  const CounterRng base(cfg.seed, 0x7EA1ull);
  for (long step = 1; step <= cfg.steps; ++step) {
    CounterRng rng = base.split(static_cast<std::uint64_t>(step));
    auto batch = draw_batch(sched, data, pt, cfg.batch, rng);
    JointParams grads = zeros_like(r.params);
    const double loss = batch_loss(r.params, pt.tokens, batch, enc_opt, &grads);
    if (!std::isfinite(loss))
      throw TrainingError("training diverged: loss is " + std::to_string(loss) + " at step " +
                              std::to_string(step),
                          step);
    adam.step(r.params, grads);
    if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step == cfg.steps)) {
      r.log.push_back({step, loss});
      if (progress) progress(r.log.back());
    }
  }
  r.final_loss = evaluate_loss(r.params, sched, data, pt, enc_opt, cfg.eval_samples, cfg.seed);
  return r;
}

}  // namespace embedlab

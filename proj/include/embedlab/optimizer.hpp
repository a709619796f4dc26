#pragma once

// Learns the per-position soft mixing weight lambda (one scalar per
// embedding row) with frozen models. Each loss evaluation regenerates I*
// from soft_mix(e_s, e_t, lambda) along a fixed DDIM trajectory, so the
// gradient is taken by central differences on the L logits.

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "embedlab/edit_ops.hpp"
#include "embedlab/errors.hpp"
#include "embedlab/model.hpp"
#include "embedlab/toyworld.hpp"

namespace embedlab {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Logit giving lambda = 0.95; its negation gives 0.05.
inline const double kSoftInitLogit = std::log(19.0);

struct LambdaParams {
  std::vector<double> theta;  // unconstrained logits

  std::vector<double> lambda() const {
    std::vector<double> out(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) out[i] = sigmoid(theta[i]);
    return out;
  }
};

struct OptConfig {
  int steps = 150;
  double learning_rate = 0.5;
  double gamma = 1.0;        // preservation weight
  double fd_step = 1e-3;     // central-difference step on theta
  int max_halvings = 5;
  std::uint64_t seed = 0;    // generation seed (fixes x_T)
};

struct OptContext {
  const Model* model = nullptr;
  TextEmbedding e_s, e_t;
  TokenSeq t_s, t_t;
  Matrix x_T;
  Matrix image_src;
  Matrix pattern_src, pattern_tgt;
  std::vector<bool> background;
  double gamma = 1.0;
};

inline OptContext make_opt_context(const Model& model, std::string_view source_text,
                                   std::string_view target_text, std::uint64_t seed, double gamma) {
  if (gamma < 0.0) throw ArgumentError("optimizer: gamma must be >= 0");
  OptContext c;
  c.model = &model;
  c.t_s = model.tokens(source_text);
  c.t_t = model.tokens(target_text);
  c.e_s = encode(model.params.encoder, c.t_s, model.encode_options);
  c.e_t = encode(model.params.encoder, c.t_t, model.encode_options);
  c.x_T = initial_noise(seed);
  c.image_src = generate(model, c.e_s, AttnMask::all(c.e_s.length()), c.x_T);
  const auto ks = prompt_class(model.world, source_text);
  const auto kt = prompt_class(model.world, target_text);
  if (!ks || !kt) throw ArgumentError("optimizer: both prompts must name a class");
  c.pattern_src = model.world.classes[*ks].pattern;
  c.pattern_tgt = model.world.classes[*kt].pattern;
  c.background = background_cells(model.world, *ks, *kt);
  c.gamma = gamma;
  return c;
}

struct SurrogateLoss {
  double total = 0.0;
  double semantic = 0.0;      // negative directional cosine
  double preservation = 0.0;  // squared background change
};

inline constexpr double kCosineGuard = 1e-8;

// Scores an already generated I* against the context.
inline SurrogateLoss score_image(const OptContext& c, const Matrix& image_star) {
  const Matrix d = image_star - c.image_src;
  const Matrix b = c.pattern_tgt - c.pattern_src;
  SurrogateLoss l;
  l.semantic = -dot(d, b) / (frobenius_norm(d) * frobenius_norm(b) + kCosineGuard);
  for (std::size_t i = 0; i < d.size(); ++i)
    if (c.background[i]) l.preservation += d[i] * d[i];
  l.total = l.semantic + c.gamma * l.preservation;
  return l;
}

inline Matrix render_mix(const OptContext& c, const std::vector<double>& lambda) {
  const TextEmbedding mixed = soft_mix(c.e_s, c.e_t, lambda);
  return generate(*c.model, mixed, AttnMask::all(mixed.length()), c.x_T);
}

inline SurrogateLoss surrogate_loss(const std::vector<double>& lambda, const OptContext& c) {
  return score_image(c, render_mix(c, lambda));
}

// Central differences: (f(theta + h e_i) - f(theta - h e_i)) / 2h per coordinate.
template <class LossFn>
  requires std::invocable<LossFn&, const std::vector<double>&>
std::vector<double> fd_gradient(const std::vector<double>& theta, LossFn&& loss, double h) {
  if (!(h > 0.0)) throw ArgumentError("fd_gradient: step must be positive");
  std::vector<double> g(theta.size());
  std::vector<double> probe = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    probe[i] = theta[i] + h;
    const double up = loss(static_cast<const std::vector<double>&>(probe));
    probe[i] = theta[i] - h;
    const double down = loss(static_cast<const std::vector<double>&>(probe));
    probe[i] = theta[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double theta_loss(const std::vector<double>& theta, const OptContext& c) {
  return surrogate_loss(LambdaParams{theta}.lambda(), c).total;
}

inline std::vector<double> fd_gradient(const std::vector<double>& theta, const OptContext& c, double h) {
  return fd_gradient(theta, [&](const std::vector<double>& th) { return theta_loss(th, c); }, h);
}

// Hard swap pattern softened to {0.05, 0.95}: low where the tokens differ.
inline LambdaParams swap_initialization(const TokenSeq& t_s, const TokenSeq& t_t) {
  LambdaParams p;
  p.theta.assign(t_s.length(), kSoftInitLogit);
  for (std::size_t i : diff_positions(t_s, t_t)) p.theta[i] = -kSoftInitLogit;
  return p;
}

struct TrajectoryEntry {
  int step = 0;
  double loss = 0.0;
  std::vector<double> lambda;
};

struct OptResult {
  LambdaParams params;
  std::vector<TrajectoryEntry> trajectory;  // step 0 is the initialization
};

// Gradient descent with backtracking: a step that raises the loss is halved
// up to `max_halvings` times and skipped if it still does not descend.
inline OptResult optimize(const OptContext& c, const OptConfig& cfg) {
  OptResult r;
  r.params = swap_initialization(c.t_s, c.t_t);
  double loss = theta_loss(r.params.theta, c);
  if (!std::isfinite(loss)) throw OptimizationError("optimizer: non-finite initial loss", 0);
  r.trajectory.push_back({0, loss, r.params.lambda()});

  for (int step = 1; step <= cfg.steps; ++step) {
    const auto g = fd_gradient(r.params.theta, c, cfg.fd_step);
    double rate = cfg.learning_rate;
    for (int attempt = 0; attempt <= cfg.max_halvings; ++attempt, rate *= 0.5) {
      std::vector<double> trial = r.params.theta;
      for (std::size_t i = 0; i < trial.size(); ++i) trial[i] -= rate * g[i];
      const double trial_loss = theta_loss(trial, c);
      if (!std::isfinite(trial_loss))
        throw OptimizationError("optimizer: non-finite loss at step " + std::to_string(step), step);
      if (trial_loss <= loss) {
        r.params.theta = std::move(trial);
        loss = trial_loss;
        break;
      }
    }
    const auto lam = r.params.lambda();
    for (double l : lam)
      if (!(l > 0.0 && l < 1.0))
        throw OptimizationError("optimizer: lambda left (0, 1) at step " + std::to_string(step), step);
    r.trajectory.push_back({step, loss, lam});
  }
  return r;
}

// `step,loss,lambda_0..lambda_{L-1}`
inline void write_trajectory_csv(std::ostream& os, const std::vector<TrajectoryEntry>& traj) {
  const std::size_t L = traj.empty() ? 0 : traj.front().lambda.size();
  os << "step,loss";
  for (std::size_t i = 0; i < L; ++i) os << ",lambda_" << i;
  os << '\n';
  char buf[40];
  for (const auto& e : traj) {
    std::snprintf(buf, sizeof buf, "%.17g", e.loss);
    os << e.step << ',' << buf;
    for (double l : e.lambda) {
      std::snprintf(buf, sizeof buf, "%.17g", l);
      os << ',' << buf;
    }
    os << '\n';
  }
}

}  // namespace embedlab

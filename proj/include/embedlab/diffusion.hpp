#pragma once

// DDPM forward/reverse Gaussian algebra and deterministic DDIM sampling and
// inversion.
//
// Timesteps are 1-based (t = 1..T). alpha_bar(0) is defined as 1, which makes
// the posterior at t = 1 collapse onto x0 with zero variance.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "embedlab/errors.hpp"
#include "embedlab/matrix.hpp"
#include "embedlab/rng.hpp"

namespace embedlab {

class Schedule {
 public:
  Schedule() = default;

  // Per-step alphas (alpha_t for t = 1..T). Derived quantities are filled in.
  explicit Schedule(std::vector<double> alphas) : alphas_(std::move(alphas)) {
    if (alphas_.empty()) throw ArgumentError("schedule: T must be >= 1");
    alpha_bars_.resize(alphas_.size());
    posterior_var_.resize(alphas_.size());
    double running = 1.0;
    for (std::size_t i = 0; i < alphas_.size(); ++i) {
      if (!(alphas_[i] > 0.0 && alphas_[i] <= 1.0))
        throw ArgumentError("schedule: alpha outside (0, 1]");
      const double prev = running;
      running *= alphas_[i];
      alpha_bars_[i] = running;
      const double denom = 1.0 - running;
      posterior_var_[i] = denom == 0.0 ? 0.0 : (1.0 - prev) / denom * (1.0 - alphas_[i]);
    }
  }

  int steps() const noexcept { return static_cast<int>(alphas_.size()); }
  double alpha(int t) const { return alphas_.at(index(t)); }
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars_.at(index(t)); }
  double posterior_variance(int t) const { return posterior_var_.at(index(t)); }

  const std::vector<double>& alphas() const noexcept { return alphas_; }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bars_; }
  const std::vector<double>& posterior_variances() const noexcept { return posterior_var_; }

  void check_step(int t) const {
    if (t < 1 || t > steps())
      throw ArgumentError("timestep " + std::to_string(t) + " outside [1, " +
                          std::to_string(steps()) + "]");
  }

 private:
  std::size_t index(int t) const {
    check_step(t);
    return static_cast<std::size_t>(t - 1);
  }

  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  std::vector<double> posterior_var_;
};

// Linear beta schedule. beta = 0 is rejected unless `allow_zero_beta` is set
// (a noise-free chain is only useful for tests).
inline Schedule make_schedule(int steps, double beta_start, double beta_end,
                              bool allow_zero_beta = false) {
  if (steps < 1) throw ArgumentError("make_schedule: T must be >= 1");
  const double lo = allow_zero_beta ? 0.0 : std::nextafter(0.0, 1.0);
  if (!(beta_start >= lo && beta_start <= beta_end && beta_end < 1.0))
    throw ArgumentError("make_schedule: need 0 < beta_start <= beta_end < 1");
  std::vector<double> alphas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    alphas[static_cast<std::size_t>(i)] = 1.0 - (beta_start + (beta_end - beta_start) * frac);
  }
  return Schedule(std::move(alphas));
}

struct GaussianParams {
  Matrix mean;
  double variance = 0.0;  // isotropic
};

inline Matrix gaussian_noise(std::size_t rows, std::size_t cols, CounterRng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.normal();
  return m;
}

// One draw from q(x_t | x_{t-1}) = N(sqrt(alpha_t) x_{t-1}, (1 - alpha_t) I).
inline Matrix forward_step(const Schedule& s, const Matrix& x_prev, int t, CounterRng& rng) {
  const double a = s.alpha(t);
  const double mean_coef = std::sqrt(a);
  const double sd = std::sqrt(1.0 - a);
  Matrix out = x_prev * mean_coef;
  if (sd > 0.0)
    for (double& v : out.values()) v += sd * rng.normal();
  return out;
}

// q(x_t | x0) = N(sqrt(abar_t) x0, (1 - abar_t) I).
inline GaussianParams marginal_params(const Schedule& s, const Matrix& x0, int t) {
  const double ab = s.alpha_bar(t);
  return {x0 * std::sqrt(ab), 1.0 - ab};
}

// Closed-form draw x_t = sqrt(abar) x0 + sqrt(1 - abar) eps.
inline Matrix q_sample(const Schedule& s, const Matrix& x0, int t, const Matrix& eps) {
  const double ab = s.alpha_bar(t);
  Matrix out = x0 * std::sqrt(ab);
  out.add_scaled(eps, std::sqrt(1.0 - ab));
  return out;
}

// q(x_{t-1} | x_t, x0).
inline GaussianParams posterior_params(const Schedule& s, const Matrix& x_t, const Matrix& x0,
                                       int t) {
  const double a = s.alpha(t);
  const double ab = s.alpha_bar(t);
  const double ab_prev = s.alpha_bar(t - 1);
  if (1.0 - ab == 0.0)
    throw NumericError("posterior_params: alpha_bar(" + std::to_string(t) +
                       ") = 1, posterior coefficients are undefined");
  const double c0 = std::sqrt(ab_prev) * (1.0 - a) / (1.0 - ab);
  const double ct = std::sqrt(a) * (1.0 - ab_prev) / (1.0 - ab);
  Matrix mean = x0 * c0;
  mean.add_scaled(x_t, ct);
  return {std::move(mean), s.posterior_variance(t)};
}

// Inverts the marginal: x0_hat = (x_t - sqrt(1 - abar) eps_hat) / sqrt(abar).
inline Matrix eps_to_x0(const Schedule& s, const Matrix& x_t, const Matrix& eps_hat, int t) {
  const double ab = s.alpha_bar(t);
  if (ab == 0.0) throw NumericError("eps_to_x0: alpha_bar = 0");
  Matrix out = x_t;
  out.add_scaled(eps_hat, -std::sqrt(1.0 - ab));
  out *= 1.0 / std::sqrt(ab);
  return out;
}

// Ancestral step: sample the posterior with x0 replaced by its estimate.
// At t = 1 the variance is zero and the mean is returned.
inline Matrix ddpm_reverse_step(const Schedule& s, const Matrix& x_t, const Matrix& eps_hat, int t,
                                CounterRng& rng) {
  GaussianParams p = posterior_params(s, x_t, eps_to_x0(s, x_t, eps_hat, t), t);
  if (t > 1 && p.variance > 0.0) {
    const double sd = std::sqrt(p.variance);
    for (double& v : p.mean.values()) v += sd * rng.normal();
  }
  return std::move(p.mean);
}

// Deterministic (eta = 0) DDIM update from t to t-1.
inline Matrix ddim_step(const Schedule& s, const Matrix& x_t, const Matrix& eps_hat, int t) {
  const double ab_prev = s.alpha_bar(t - 1);
  Matrix out = eps_to_x0(s, x_t, eps_hat, t) * std::sqrt(ab_prev);
  out.add_scaled(eps_hat, std::sqrt(1.0 - ab_prev));
  return out;
}

// Algebraic inverse of ddim_step for the same eps_hat: t-1 to t.
inline Matrix ddim_invert_step(const Schedule& s, const Matrix& x_prev, const Matrix& eps_hat,
                               int t) {
  const double ab_prev = s.alpha_bar(t - 1);
  const double ab = s.alpha_bar(t);
  Matrix x0_hat = x_prev;
  x0_hat.add_scaled(eps_hat, -std::sqrt(1.0 - ab_prev));
  x0_hat *= 1.0 / std::sqrt(ab_prev);
  Matrix out = x0_hat * std::sqrt(ab);
  out.add_scaled(eps_hat, std::sqrt(1.0 - ab));
  return out;
}

// Mean absolute error over every coordinate (and so over the batch).
inline double l1_objective(const Matrix& eps_true, const Matrix& eps_pred) {
  if (!eps_true.same_shape(eps_pred))
    throw ArgumentError("l1_objective: shape mismatch " + eps_true.shape_string() + " vs " +
                        eps_pred.shape_string());
  if (eps_true.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < eps_true.size(); ++i) s += std::abs(eps_true[i] - eps_pred[i]);
  return s / static_cast<double>(eps_true.size());
}

enum class SamplerMode { kDdpm, kDdim };

// Runs the reverse chain from x_T. `predict(x_t, t)` returns eps_hat.
// `rng` is only consumed in DDPM mode.
template <class EpsFn>
Matrix sample(const Schedule& s, EpsFn&& predict, Matrix x_T, SamplerMode mode, CounterRng* rng) {
  if (mode == SamplerMode::kDdpm && rng == nullptr)
    throw ArgumentError("sample: DDPM mode needs a random stream");
  Matrix x = std::move(x_T);
  for (int t = s.steps(); t >= 1; --t) {
    const Matrix eps_hat = predict(static_cast<const Matrix&>(x), t);
    x = mode == SamplerMode::kDdim ? ddim_step(s, x, eps_hat, t)
                                   : ddpm_reverse_step(s, x, eps_hat, t, *rng);
  }
  return x;
}

// Deterministic DDIM inversion x0 -> x_T. Each step re-predicts eps at the
// lower-noise point x_{t-1}, which is the usual approximation.
template <class EpsFn>
Matrix ddim_invert(const Schedule& s, EpsFn&& predict, Matrix x0) {
  Matrix x = std::move(x0);
  for (int t = 1; t <= s.steps(); ++t) {
    const Matrix eps_hat = predict(static_cast<const Matrix&>(x), t);
    x = ddim_invert_step(s, x, eps_hat, t);
  }
  return x;
}

}  // namespace embedlab

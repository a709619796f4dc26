#pragma once

// Oracle and invariant suites that need no trained model. `embedlab verify`
// runs all of them; the acceptance binary maps several onto its criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <functional>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "embedlab/embedlab.hpp"
#include "embedlab/testing/oracles.hpp"

namespace embedlab::verify {

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SuiteResult {
  std::string name;
  std::vector<Check> checks;
  double seconds = 0.0;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
  }
  void add(std::string check, bool ok, std::string detail = {}) {
    checks.push_back({std::move(check), ok, std::move(detail)});
  }
  std::size_t failures() const {
    return static_cast<std::size_t>(
        std::count_if(checks.begin(), checks.end(), [](const Check& c) { return !c.passed; }));
  }
};

inline std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

template <class Body>
SuiteResult timed_suite(std::string name, Body&& body) {
  SuiteResult r;
  r.name = std::move(name);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(r);
  } catch (const std::exception& e) {
    r.add("unexpected exception", false, e.what());
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

template <class Ex, class F>
bool throws_as(F&& f) {
  try {
    f();
  } catch (const Ex&) {
    return true;
  } catch (...) {
    return false;
  }
  return false;
}

inline Matrix scalar(double v) { return Matrix(1, 1, v); }

inline double orthogonality_error(const Matrix& q) {
  const Matrix g = matmul_tn(q, q);
  double s = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j) {
      const double d = g(i, j) - (i == j ? 1.0 : 0.0);
      s += d * d;
    }
  return std::sqrt(s);
}

inline std::vector<double> column(const Matrix& m, std::size_t k) {
  const Matrix c = m.column_copy(k);
  return {c.values().begin(), c.values().end()};
}

inline double abs_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return std::abs(ab) / std::sqrt(aa * bb);
}

// ---------------------------------------------------------------- diffusion

inline SuiteResult diffusion_suite(std::uint64_t seed = 11) {
  return timed_suite("diffusion", [&](SuiteResult& r) {
    const Schedule s = make_schedule(100, 1e-4, 0.02);
    CounterRng rng(seed, 1);

    double worst_mean = 0.0, worst_var = 0.0;
    for (int i = 0; i < 100; ++i) {
      const int t = 1 + static_cast<int>(rng.below(100));
      const double x0 = rng.normal(), xt = rng.normal();
      const auto p = posterior_params(s, scalar(xt), scalar(x0), t);
      const auto o = oracle::bayes_posterior(s.alpha(t), s.alpha_bar(t - 1), x0, xt);
      worst_mean = std::max(worst_mean, std::abs(p.mean[0] - o.mean));
      worst_var = std::max(worst_var, std::abs(p.variance - o.variance));
    }
    r.add("posterior vs Bayes product, 100 cases", worst_mean < 1e-12 && worst_var < 1e-12,
          fmt("max |dmean| %.2e, max |dvar| %.2e", worst_mean, worst_var));

    {
      const Schedule two({0.95, 0.9});
      const auto p = posterior_params(two, scalar(0.5), scalar(1.0), 2);
      const auto o = oracle::bayes_posterior(0.9, 0.95, 1.0, 0.5);
      r.add("posterior worked example", std::abs(p.mean[0] - 0.835759) < 1e-6 &&
                                            std::abs(p.variance - 0.034483) < 1e-6 &&
                                            std::abs(p.mean[0] - o.mean) < 1e-12,
            fmt("mean %.6f variance %.6f", p.mean[0], p.variance));
      const auto p1 = posterior_params(s, scalar(0.3), scalar(-0.7), 1);
      r.add("posterior at t=1 collapses to x0", p1.mean[0] == -0.7 && p1.variance == 0.0);
    }

    {
      // Chain composition vs closed-form marginal, x0 = 1.
      const std::size_t n = 20000;
      const std::vector<int> probes{1, 50, 100};
      std::vector<double> sum(3, 0.0), sq(3, 0.0);
      const CounterRng base(seed, 2);
      for (std::size_t c = 0; c < n; ++c) {
        CounterRng cr = base.split(c);
        Matrix x = scalar(1.0);
        std::size_t p = 0;
        for (int t = 1; t <= 100; ++t) {
          x = forward_step(s, x, t, cr);
          if (t == probes[p]) {
            sum[p] += x[0];
            sq[p] += x[0] * x[0];
            ++p;
          }
        }
      }
      for (std::size_t p = 0; p < probes.size(); ++p) {
        const auto m = marginal_params(s, scalar(1.0), probes[p]);
        const double mean = sum[p] / n;
        const double var = (sq[p] - n * mean * mean) / (n - 1);
        const double se_mean = std::sqrt(m.variance / n);
        const double se_var = m.variance * std::sqrt(2.0 / (n - 1));
        const bool ok = std::abs(mean - m.mean[0]) <= 3 * se_mean && std::abs(var - m.variance) <= 3 * se_var;
        r.add(fmt("chain vs marginal at t=%d", probes[p]), ok,
              fmt("mean %.5f (%.5f), var %.6f (%.6f)", mean, m.mean[0], var, m.variance));
      }
    }

    {
      bool decreasing = true, product = true, post = true;
      for (int t = 1; t <= s.steps(); ++t) {
        decreasing = decreasing && s.alpha_bar(t) < s.alpha_bar(t - 1);
        product = product && std::abs(s.alpha_bar(t) - s.alpha_bar(t - 1) * s.alpha(t)) <= 1e-14;
        const double expect = (1 - s.alpha_bar(t - 1)) / (1 - s.alpha_bar(t)) * (1 - s.alpha(t));
        post = post && std::abs(s.posterior_variance(t) - expect) <= 1e-14 &&
               s.posterior_variance(t) >= 0.0 && s.posterior_variance(t) <= 1 - s.alpha(t);
      }
      r.add("schedule: alpha_bar strictly decreasing", decreasing);
      r.add("schedule: alpha_bar running product", product);
      r.add("schedule: posterior variance formula and bounds", post && s.posterior_variance(1) == 0.0);
      const double o = oracle::alpha_bar_product(100, 1e-4, 0.02, 100);
      r.add("schedule: alpha_bar_T vs product oracle", std::abs(s.alpha_bar(100) - o) < 1e-12,
            fmt("%.15f vs %.15f", s.alpha_bar(100), o));
    }

    {
      double worst_rt = 0.0, worst_ddim = 0.0;
      for (int i = 0; i < 1000; ++i) {
        const int t = 1 + static_cast<int>(rng.below(100));
        const Matrix x0 = gaussian_noise(1, 4, rng), eps = gaussian_noise(1, 4, rng);
        const Matrix xt = q_sample(s, x0, t, eps);
        worst_rt = std::max(worst_rt, max_abs(eps_to_x0(s, xt, eps, t) - x0));
        worst_ddim = std::max(worst_ddim, max_abs(ddim_invert_step(s, ddim_step(s, xt, eps, t), eps, t) - xt));
      }
      r.add("eps_to_x0 round trip, 1000 triples", worst_rt < 1e-12, fmt("max error %.2e", worst_rt));
      r.add("ddim step / inverse step", worst_ddim < 1e-12, fmt("max error %.2e", worst_ddim));
    }

    {
      const Matrix xT = gaussian_noise(1, 64, rng);
      auto zero = [](const Matrix& x, int) { return Matrix(x.rows(), x.cols()); };
      const Matrix out = sample(s, zero, xT, SamplerMode::kDdim, nullptr);
      Matrix expect = xT;
      expect *= 1.0 / std::sqrt(s.alpha_bar(100));
      r.add("zero predictor DDIM trajectory", max_abs(out - expect) <= 1e-12 * max_abs(expect),
            fmt("max error %.2e", max_abs(out - expect)));
    }

    {
      const Matrix a = gaussian_noise(3, 64, rng), b = gaussian_noise(3, 64, rng);
      double direct = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) direct += std::abs(a[i] - b[i]);
      direct /= static_cast<double>(a.size());
      r.add("l1 objective vs direct sum", std::abs(l1_objective(a, b) - direct) < 1e-15);
      r.add("l1 objective, constant 0.5", l1_objective(Matrix(1, 64), Matrix(1, 64, 0.5)) == 0.5);
    }
  });
}

// --------------------------------------------------------------------- svd

inline SuiteResult svd_suite(std::uint64_t seed = 12) {
  return timed_suite("svd", [&](SuiteResult& r) {
    CounterRng rng(seed, 1);
    double worst_rec = 0.0, worst_u = 0.0, worst_v = 0.0, worst_cos = 1.0;
    bool ordered = true, signs = true;
    for (int i = 0; i < 200; ++i) {
      const std::size_t m = 1 + rng.below(12), n = 1 + rng.below(12);
      const Matrix a = gaussian_noise(m, n, rng);
      const SvdFactors f = svd(a);
      worst_rec = std::max(worst_rec, frobenius_norm(f.reconstruct() - a) / frobenius_norm(a));
      worst_u = std::max(worst_u, orthogonality_error(f.u));
      worst_v = std::max(worst_v, orthogonality_error(f.v()));
      for (std::size_t k = 0; k < f.sigma.size(); ++k) {
        ordered = ordered && f.sigma[k] >= 0.0 && (k == 0 || f.sigma[k] <= f.sigma[k - 1]);
      }
      for (std::size_t k = 0; k < n; ++k) {
        double best = 0.0, val = 0.0;
        for (std::size_t j = 0; j < n; ++j)
          if (std::abs(f.vt(k, j)) > best) {
            best = std::abs(f.vt(k, j));
            val = f.vt(k, j);
          }
        signs = signs && val >= 0.0;
      }
      const PcaResult p = pca(a, false);
      const Matrix v = f.v();
      for (std::size_t k = 0; k < std::min(m, n); ++k)
        worst_cos = std::min(worst_cos, abs_cosine(column(p.components, k), column(v, k)));
    }
    r.add("reconstruction, 200 random matrices", worst_rec < 1e-8, fmt("max rel %.2e", worst_rec));
    r.add("U orthogonal", worst_u < 1e-8, fmt("max %.2e", worst_u));
    r.add("V orthogonal", worst_v < 1e-8, fmt("max %.2e", worst_v));
    r.add("singular values descending, non-negative", ordered);
    r.add("sign canonicalization", signs);
    r.add("uncentered pca equals right singular vectors", worst_cos > 1 - 1e-8,
          fmt("min |cos| %.12f", worst_cos));

    {
      const auto f = svd(Matrix::identity(2));
      r.add("identity 2x2", std::abs(f.sigma[0] - 1) < 1e-15 && std::abs(f.sigma[1] - 1) < 1e-15);
      const auto g = svd(Matrix::from_rows({{2, 0}, {0, 1}}));
      r.add("diag(2,1)", std::abs(g.sigma[0] - 2) < 1e-15 && std::abs(g.sigma[1] - 1) < 1e-15);
    }
    {
      const Matrix a = gaussian_noise(5, 3, rng);
      const auto f = svd(a);
      const auto ev = oracle::symmetric3_eigenvalues(oracle::gram(oracle::to_grid(a)));
      double worst = 0.0;
      for (int k = 0; k < 3; ++k) worst = std::max(worst, std::abs(f.sigma[k] * f.sigma[k] - ev[k]) / ev[0]);
      r.add("5x3 sigma^2 vs cubic roots of Gram", worst < 1e-10 &&
                frobenius_norm(f.reconstruct() - a) / frobenius_norm(a) < 1e-10,
            fmt("max rel %.2e", worst));
    }
    {
      const Matrix a = gaussian_noise(6, 4, rng);
      const auto g = gram_eigendecomposition(a);
      const auto top = oracle::power_iteration(oracle::gram(oracle::to_grid(a)));
      const double rel = std::abs(g.eigenvalues[0] - top.value) / top.value;
      const double c = abs_cosine(column(g.eigenvectors, 0), top.vector);
      r.add("6x4 top Gram eigenpair vs power iteration", rel < 1e-9 && c > 1 - 1e-8,
            fmt("rel %.2e, |cos| %.12f", rel, c));
    }
    {
      const Matrix u = gaussian_noise(5, 1, rng), v = gaussian_noise(1, 4, rng);
      const auto g = gram_eigendecomposition(matmul(u, v));
      const double expect = dot(u, u) * dot(v, v);
      bool ok = std::abs(g.eigenvalues[0] - expect) < 1e-10 * expect;
      for (std::size_t k = 1; k < g.eigenvalues.size(); ++k) ok = ok && g.eigenvalues[k] < 1e-10 * expect;
      r.add("rank-1 Gram spectrum", ok);
    }
    {
      const Matrix a = gaussian_noise(8, 3, rng);
      const auto p = pca(a, true);
      const auto pairs = oracle::deflated_eigenpairs(oracle::covariance(oracle::to_grid(a)));
      double worst_val = 0.0, worst_cos2 = 1.0;
      for (std::size_t k = 0; k < 3; ++k) {
        worst_val = std::max(worst_val, std::abs(p.variances[k] - pairs[k].value) / pairs[0].value);
        worst_cos2 = std::min(worst_cos2, abs_cosine(column(p.components, k), pairs[k].vector));
      }
      r.add("8x3 centered pca vs explicit covariance", worst_val < 1e-8 && worst_cos2 > 1 - 1e-8,
            fmt("rel %.2e, min |cos| %.12f", worst_val, worst_cos2));
    }
    {
      Matrix axis(6, 3);
      for (std::size_t i = 0; i < 6; ++i) {
        axis(i, 0) = 2.0;
        axis(i, 1) = static_cast<double>(i);
        axis(i, 2) = -1.0;
      }
      const auto p = pca(axis, true);
      r.add("centered pca finds the varying axis", std::abs(std::abs(p.components(1, 0)) - 1.0) < 1e-12);
      r.add("centered pca zero-variance diagnostic", pca(Matrix(4, 3, 1.5), true).zero_variance);
    }
    {
      Matrix bad(2, 2);
      bad(0, 1) = std::nan("");
      r.add("non-finite input rejected", throws_as<ArgumentError>([&] { svd(bad); }));
    }
  });
}

// ------------------------------------------------------------------ encoder

namespace detail {

inline std::vector<std::string> random_words(const Vocabulary& v, std::size_t count, CounterRng& rng) {
  const auto words = v.user_words();
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(words[rng.below(words.size())]);
  return out;
}

inline std::string join(const std::vector<std::string>& w) {
  std::string s;
  for (const auto& x : w) s += (s.empty() ? "" : " ") + x;
  return s;
}

inline bool rows_equal(const Matrix& a, const Matrix& b, std::size_t first, std::size_t last) {
  for (std::size_t i = first; i < last; ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (a(i, j) != b(i, j)) return false;
  return true;
}

}  // namespace detail

inline SuiteResult encoder_suite(std::uint64_t seed = 13, int draws = 100) {
  return timed_suite("encoder masks", [&](SuiteResult& r) {
    const WorldSpec w = default_world();
    const Vocabulary vocab = world_vocabulary(w);
    const EncoderConfig cfg;
    CounterRng rng(seed, 1);
    bool prefix = true, bos = true, witness = true, isolation = true;
    double min_witness = 1e300;
    const TokenSeq dog = tokenize(vocab, "a photo of hbar bright", cfg.max_len);
    const TokenSeq cat = tokenize(vocab, "a photo of vbar bright", cfg.max_len);
    for (int d = 0; d < draws; ++d) {
      CounterRng prng = CounterRng(seed, 2).split(static_cast<std::uint64_t>(d));
      const EncoderParams p = init_encoder(cfg, vocab.size(), prng);
      for (int pair = 0; pair < 10; ++pair) {
        const auto a_words = detail::random_words(vocab, rng.below(cfg.max_len - 1), rng);
        auto b_words = a_words;
        b_words.resize(rng.below(a_words.size() + 1));
        const auto tail = detail::random_words(vocab, rng.below(cfg.max_len - 1 - b_words.size()), rng);
        b_words.insert(b_words.end(), tail.begin(), tail.end());
        const TokenSeq ta = tokenize(vocab, detail::join(a_words), cfg.max_len);
        const TokenSeq tb = tokenize(vocab, detail::join(b_words), cfg.max_len);
        std::size_t agree = 0;
        while (agree < ta.length() && ta.ids[agree] == tb.ids[agree]) ++agree;
        for (bool pad : {false, true}) {
          const auto ea = encode(p, ta, {true, pad}), eb = encode(p, tb, {true, pad});
          prefix = prefix && detail::rows_equal(ea.data, eb.data, 0, agree);
          if (!pad && d == 0) bos = bos && detail::rows_equal(ea.data, eb.data, 0, 1);
        }
      }
      // Padding carries semantic information when PAD keys are visible.
      const auto e1 = encode(p, dog, {true, false}), e2 = encode(p, cat, {true, false});
      double best = 0.0;
      for (std::size_t i = dog.semantic_len; i < dog.length(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < e1.dim(); ++j) s += std::pow(e1.data(i, j) - e2.data(i, j), 2);
        best = std::max(best, std::sqrt(s));
      }
      min_witness = std::min(min_witness, best);
      witness = witness && best > 1e-6;
      bos = bos && detail::rows_equal(e1.data, e2.data, 0, 1);

      // With PAD keys masked, semantic rows ignore the amount of padding.
      const TokenSeq shorter = tokenize(vocab, "a photo of hbar bright", cfg.max_len - 5);
      for (bool causal : {true, false}) {
        const auto full = encode(p, dog, {causal, true}), cut = encode(p, shorter, {causal, true});
        isolation = isolation && detail::rows_equal(full.data, cut.data, 0, dog.semantic_len);
      }
    }
    r.add(fmt("causal prefix property, %d draws x 10 pairs", draws), prefix);
    r.add("BOS row constant across prompts", bos);
    r.add("PAD rows carry semantics without pad mask", witness, fmt("min witness L2 %.3e", min_witness));
    r.add("pad mask isolates semantic rows from padding length", isolation);

    int changed = 0;
    for (int d = 0; d < 20; ++d) {
      CounterRng prng = CounterRng(seed, 3).split(static_cast<std::uint64_t>(d));
      const EncoderParams p = init_encoder(cfg, vocab.size(), prng);
      const auto a = encode(p, dog, {false, false}), b = encode(p, cat, {false, false});
      changed += detail::rows_equal(a.data, b.data, 0, 1) ? 0 : 1;
      (void)b;
    }
    {
      // Change the last semantic word only.
      int last_changed = 0;
      const TokenSeq x = tokenize(vocab, "a photo of hbar bright", cfg.max_len);
      const TokenSeq y = tokenize(vocab, "a photo of hbar dim", cfg.max_len);
      for (int d = 0; d < 20; ++d) {
        CounterRng prng = CounterRng(seed, 4).split(static_cast<std::uint64_t>(d));
        const EncoderParams p = init_encoder(cfg, vocab.size(), prng);
        last_changed += detail::rows_equal(encode(p, x, {false, false}).data,
                                           encode(p, y, {false, false}).data, 0, 1) ? 0 : 1;
      }
      r.add("without causal mask the last word reaches row 0 (20 draws)", last_changed == 20 && changed == 20,
            fmt("%d/20", last_changed));
    }

    double worst = 0.0;
    for (int d = 0; d < 4; ++d) {
      EncoderConfig big = cfg;
      big.init_std = 0.3;
      CounterRng prng = CounterRng(seed, 5).split(static_cast<std::uint64_t>(d));
      EncoderParams p = init_encoder(big, vocab.size(), prng);
      for (auto& t : tensors(p))
        if (t.name.find("gain") != std::string::npos)
          for (double& v : t.tensor->values()) v += 1.0;
      for (bool causal : {true, false})
        for (bool pad : {true, false}) {
          const auto e = encode(p, dog, {causal, pad});
          const auto o = oracle::from_grid(oracle::encoder_forward(p, dog, causal, pad));
          worst = std::max(worst, max_abs(e.data - o));
        }
    }
    r.add("encoder vs straight-line oracle", worst < 1e-12, fmt("max error %.2e", worst));
    r.add("tokenize worked example",
          [&] {
            const Vocabulary v({"a", "photo", "of", "dog"});
            const TokenSeq t = tokenize(v, "a photo of dog", 8);
            return t.ids == std::vector<int>{0, 3, 4, 5, 6, 1, 2, 2} && t.semantic_len == 6;
          }());
    r.add("unknown word rejected",
          throws_as<VocabularyError>([&] { tokenize(vocab, "a photo of zebra", 16); }));
  });
}

// ----------------------------------------------------------- gradient gate

struct GateStats {
  std::size_t checked = 0;
  std::size_t failed = 0;
  std::size_t kinks = 0;  // probe pair straddles a ReLU or |.| kink
  double worst = 0.0;
  std::string worst_name;
};

inline bool gradient_close(double g, double fd) {
  return std::abs(g - fd) <= 1e-4 * std::max(std::abs(g), std::abs(fd)) + 1e-9;
}

// Signs of every ReLU pre-activation and every L1 residual in the batch.
inline std::vector<char> kink_signature(const JointParams& params, std::span<const TokenSeq> prompts,
                                        std::span<const TrainingExample> batch, const EncodeOptions& opt) {
  std::vector<char> sig;
  auto push = [&](const Matrix& m) {
    for (double v : m.values()) sig.push_back(static_cast<char>((v > 0) - (v < 0)));
  };
  std::map<std::size_t, Conditioning> conds;
  for (const auto& ex : batch) {
    if (conds.count(ex.prompt)) continue;
    EncoderTrace tr;
    const TextEmbedding e = encode(params.encoder, prompts[ex.prompt], opt, &tr);
    for (const auto& b : tr.blocks) push(b.hidden_pre);
    conds[ex.prompt] = make_conditioning(params.denoiser, e.data, AttnMask::all(e.length()));
  }
  DenoiserTrace dt;
  for (const auto& ex : batch) {
    push(predict_eps(params.denoiser, ex.x_t, ex.t, conds[ex.prompt], &dt) - ex.eps);
    push(dt.pre);
    push(dt.m_pre);
  }
  return sig;
}

// Loss with fixed text embeddings; used when only denoiser tensors move.
inline double denoiser_only_loss(const DenoiserParams& dp, const std::vector<TextEmbedding>& embs,
                                 std::span<const TrainingExample> batch) {
  std::vector<Conditioning> conds;
  for (const auto& e : embs) conds.push_back(make_conditioning(dp, e.data, AttnMask::all(e.length())));
  double total = 0.0;
  for (const auto& ex : batch) {
    const Matrix pred = predict_eps(dp, ex.x_t, ex.t, conds[ex.prompt]);
    for (std::size_t i = 0; i < pred.size(); ++i) total += std::abs(ex.eps[i] - pred[i]);
  }
  return total / static_cast<double>(batch.size() * batch.front().eps.size());
}

// Compares batch_loss gradients with central differences (h = 1e-5).
// `per_tensor` = 0 checks every entry; otherwise that many sampled entries.
// A mismatch only counts when the loss is smooth between the two probes,
// i.e. the kink signature is the same at theta + h and theta - h. Entries
// whose probes straddle a kink are retried once at h = 1e-7.
inline GateStats gradient_check(JointParams params, const std::vector<TokenSeq>& prompts,
                                const std::vector<TrainingExample>& batch, std::size_t per_tensor,
                                CounterRng& rng) {
  const EncodeOptions opt{true, false};
  JointParams grads = zeros_like(params);
  batch_loss(params, prompts, batch, opt, &grads);
  std::vector<TextEmbedding> embs;
  for (const auto& t : prompts) embs.push_back(encode(params.encoder, t, opt));
  GateStats st;
  auto p = tensors(params);
  auto g = tensors(grads);
  for (std::size_t k = 0; k < p.size(); ++k) {
    Matrix& m = *p[k].tensor;
    const bool denoiser_only = p[k].name.rfind("denoiser.", 0) == 0;
    auto loss = [&] {
      return denoiser_only ? denoiser_only_loss(params.denoiser, embs, batch)
                           : batch_loss(params, prompts, batch, opt);
    };
    std::vector<std::size_t> idx;
    if (per_tensor == 0 || per_tensor >= m.size()) {
      for (std::size_t i = 0; i < m.size(); ++i) idx.push_back(i);
    } else {
      for (std::size_t i = 0; i < per_tensor; ++i) idx.push_back(rng.below(m.size()));
    }
    for (std::size_t i : idx) {
      const double an = (*g[k].tensor)[i];
      ++st.checked;
      bool crossed = false;
      for (double h : {1e-5, 1e-7}) {
        const double fd = oracle::central_difference(m, i, h, loss);
        if (gradient_close(an, fd)) {
          crossed = false;
          break;
        }
        const double saved = m[i];
        m[i] = saved + h;
        const auto plus = kink_signature(params, prompts, batch, opt);
        m[i] = saved - h;
        const auto minus = kink_signature(params, prompts, batch, opt);
        m[i] = saved;
        crossed = plus != minus;
        if (!crossed) {
          ++st.failed;
          const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-300});
          if (rel > st.worst) {
            st.worst = rel;
            st.worst_name = p[k].name + "[" + std::to_string(i) + "]";
          }
          break;
        }
      }
      st.kinks += crossed ? 1 : 0;
    }
  }
  return st;
}

inline std::string describe(const GateStats& st) {
  return fmt("%zu entries, %zu mismatches, %zu unresolved kink crossings%s%s", st.checked, st.failed, st.kinks,
             st.failed ? ", worst " : "", st.worst_name.c_str());
}

inline std::vector<TrainingExample> random_batch(const Schedule& s, std::size_t prompts,
                                                 std::size_t n, std::size_t image_dim, CounterRng& rng) {
  std::vector<TrainingExample> b;
  for (std::size_t i = 0; i < n; ++i) {
    TrainingExample ex;
    ex.prompt = i % prompts;
    ex.t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(s.steps())));
    const Matrix x0 = gaussian_noise(1, image_dim, rng);
    ex.eps = gaussian_noise(1, image_dim, rng);
    ex.x_t = q_sample(s, x0, ex.t, ex.eps);
    b.push_back(std::move(ex));
  }
  return b;
}

inline SuiteResult gradient_suite(std::uint64_t seed = 14) {
  return timed_suite("gradient gate", [&](SuiteResult& r) {
    const WorldSpec w = default_world();
    const Vocabulary vocab = world_vocabulary(w);
    const Schedule s = make_schedule(100, 1e-4, 0.02);
    const std::vector<std::string> texts{"a photo of hbar bright", "a photo of cross", "diag dim of a"};
    CounterRng rng(seed, 1);

    {
      // Reduced model: every entry of every tensor.
      ModelConfig mc;
      mc.encoder = {8, 8, 2, 2, 0.3};
      mc.denoiser = {16, 8, 8, 4, 8};
      JointParams p = init_joint(mc, vocab.size(), seed);
      for (auto& t : tensors(p))
        if (t.name.find("gain") != std::string::npos || t.name.find("bias") != std::string::npos)
          for (double& v : t.tensor->values()) v += 0.1 * rng.normal();
      std::vector<TokenSeq> prompts;
      for (const auto& t : texts) prompts.push_back(tokenize(vocab, t, 8));
      const auto batch = random_batch(s, prompts.size(), 6, 16, rng);
      const GateStats st = gradient_check(p, prompts, batch, 0, rng);
      r.add("reduced model, every parameter", st.failed == 0, describe(st));
    }
    {
      // Default model, every entry of every tensor.
      ModelConfig mc;
      JointParams p = init_joint(mc, vocab.size(), seed + 1);
      std::vector<TokenSeq> prompts;
      for (std::size_t i = 0; i < 2; ++i) prompts.push_back(tokenize(vocab, texts[i], mc.encoder.max_len));
      const auto batch = random_batch(s, prompts.size(), 4, kImageDim, rng);
      const GateStats st = gradient_check(p, prompts, batch, 0, rng);
      r.add("default model, every parameter", st.failed == 0, describe(st));
    }
    {
      // eps == prediction: zero loss and zero gradient away from kinks.
      ModelConfig mc;
      mc.encoder = {8, 8, 1, 2, 0.3};
      mc.denoiser = {16, 8, 8, 4, 8};
      JointParams p = init_joint(mc, vocab.size(), seed + 2);
      const std::vector<TokenSeq> prompts{tokenize(vocab, texts[0], 8)};
      auto batch = random_batch(s, 1, 3, 16, rng);
      for (auto& ex : batch) ex.eps = predict_eps(p.denoiser, ex.x_t, ex.t, encode(p.encoder, prompts[0]),
                                                  AttnMask::all(8));
      JointParams g = zeros_like(p);
      const double l = batch_loss(p, prompts, batch, {true, false}, &g);
      double mx = 0.0;
      for (const auto& t : tensors(g)) mx = std::max(mx, max_abs(*t.tensor));
      r.add("exact fit gives zero loss and gradient", l == 0.0 && mx == 0.0);

      // Duplicating the batch leaves the mean gradient unchanged.
      auto b2 = random_batch(s, 1, 3, 16, rng);
      auto doubled = b2;
      doubled.insert(doubled.end(), b2.begin(), b2.end());
      JointParams g1 = zeros_like(p), g2 = zeros_like(p);
      batch_loss(p, prompts, b2, {true, false}, &g1);
      batch_loss(p, prompts, doubled, {true, false}, &g2);
      double diff = 0.0;
      auto t1 = tensors(g1);
      auto t2 = tensors(g2);
      for (std::size_t k = 0; k < t1.size(); ++k) diff = std::max(diff, max_abs(*t1[k].tensor - *t2[k].tensor));
      r.add("duplicated batch keeps the mean gradient", diff < 1e-15, fmt("max diff %.2e", diff));
    }
  });
}

// ------------------------------------------------------------------ denoiser

inline SuiteResult denoiser_suite(std::uint64_t seed = 15) {
  return timed_suite("denoiser", [&](SuiteResult& r) {
    CounterRng rng(seed, 1);
    DenoiserConfig c;
    DenoiserParams p = init_denoiser(c, rng);
    for (auto& t : tensors(p))
      if (t.name.rfind("b_", 0) == 0)
        for (double& v : t.tensor->values()) v = 0.1 * rng.normal();
    const Matrix emb = gaussian_noise(16, 32, rng);
    const Matrix x = gaussian_noise(1, 64, rng);

    double worst = 0.0;
    for (int t : {1, 37, 100}) {
      std::vector<bool> allowed(16, true);
      for (std::size_t i = 0; i < 16; ++i) allowed[i] = rng.uniform() > 0.3;
      allowed[0] = true;
      const Matrix a = predict_eps(p, x, t, TextEmbedding{emb, 7}, AttnMask(allowed));
      const auto o = oracle::denoiser_forward(p, column(transpose(x), 0), t, oracle::to_grid(emb), allowed);
      worst = std::max(worst, max_abs(a - Matrix::row_vector(o)));
    }
    r.add("masked forward vs slice-and-recompute oracle", worst < 1e-12, fmt("max error %.2e", worst));

    {
      Matrix padded = emb;
      for (double& v : padded.row(15)) v = 0.0;
      const TextEmbedding e{padded, 7};
      const Matrix excluded = predict_eps(p, x, 10, e, AttnMask::excluding_range(16, 15, 16));
      Matrix sliced(15, 32);
      for (std::size_t i = 0; i < 15; ++i)
        for (std::size_t j = 0; j < 32; ++j) sliced(i, j) = padded(i, j);
      const Matrix removed = predict_eps(p, x, 10, TextEmbedding{sliced, 7}, AttnMask::all(15));
      const Matrix included = predict_eps(p, x, 10, e, AttnMask::all(16));
      r.add("excluding a zero row equals removing it", max_abs(excluded - removed) < 1e-12);
      r.add("including a zero row changes the output (masking is not zeroing)",
            max_abs(included - excluded) > 1e-9, fmt("difference %.3e", max_abs(included - excluded)));
    }
    {
      Matrix dup = emb;
      for (std::size_t j = 0; j < 32; ++j) dup(9, j) = dup(3, j);
      Matrix swapped = dup;
      for (std::size_t j = 0; j < 32; ++j) std::swap(swapped(3, j), swapped(4, j));
      Matrix swapped_back = dup;
      for (std::size_t j = 0; j < 32; ++j) std::swap(swapped_back(3, j), swapped_back(9, j));
      const Matrix a = predict_eps(p, x, 20, TextEmbedding{dup, 7}, AttnMask::all(16));
      const Matrix b = predict_eps(p, x, 20, TextEmbedding{swapped_back, 7}, AttnMask::all(16));
      const Matrix d = predict_eps(p, x, 20, TextEmbedding{swapped, 7}, AttnMask::all(16));
      r.add("swapping equal rows leaves the output unchanged", a == b);
      r.add("permuting key rows is invariant up to rounding", max_abs(a - d) < 1e-12);
    }
    r.add("all-false mask rejected", throws_as<ArgumentError>([&] {
            predict_eps(p, x, 1, TextEmbedding{emb, 7}, AttnMask::excluding_range(16, 0, 16));
          }));
    {
      const DenoiserParams z = zero_denoiser(c);
      r.add("zero denoiser predicts zero",
            max_abs(predict_eps(z, x, 5, TextEmbedding{emb, 7}, AttnMask::all(16))) == 0.0);
    }
  });
}

// ----------------------------------------------------------------- toyworld

inline SuiteResult toyworld_suite(std::uint64_t seed = 16) {
  return timed_suite("toyworld", [&](SuiteResult& r) {
    const WorldSpec w = default_world();
    CounterRng rng(seed, 1);
    auto ones = [](const Matrix& m) {
      std::size_t n = 0;
      for (double v : m.values()) n += v == 1.0;
      return n;
    };
    r.add("hbar has 16 cells", ones(w.classes[0].pattern) == 16);
    r.add("hbar vs vbar correlation 0.25",
          std::abs(pattern_correlation(w.classes[0].pattern, w.classes[1].pattern) - 0.25) < 1e-15);
    double worst = 0.0;
    for (std::size_t a = 0; a < w.classes.size(); ++a)
      for (std::size_t b = a + 1; b < w.classes.size(); ++b)
        worst = std::max(worst, pattern_correlation(w.classes[a].pattern, w.classes[b].pattern));
    r.add("pairwise correlations below 0.5", worst < 0.5, fmt("max %.4f", worst));

    WorldSpec quiet = w;
    quiet.noise_sigma = 0.0;
    r.add("noise-free render equals the pattern", render(quiet, 0, 1.0, rng).x0 == w.classes[0].pattern);
    {
      Matrix scaled = w.classes[2].pattern;
      scaled *= 0.4;
      r.add("noise-free render scales by style", render(quiet, 2, 0.4, rng).x0 == scaled);
      r.add("oracle_style recovers 0.4", std::abs(oracle_style(w, scaled, 2) - 0.4) < 1e-15);
      const auto c = oracle_classify(w, w.classes[2].pattern);
      r.add("oracle_classify on a pattern", c.class_index == 2 && std::abs(c.score - 1.0) < 1e-12);
      r.add("zero image ties to class 0", oracle_classify(w, Matrix(1, 64)).class_index == 0);
    }
    {
      const std::size_t n = 10000;
      Matrix mean(1, 64);
      std::size_t correct = 0;
      double style_sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const Sample s = render(w, 1, 0.7, rng);
        mean.add_scaled(s.x0, 1.0 / n);
        correct += oracle_classify(w, s.x0).class_index == 1;
        style_sum += oracle_style(w, s.x0, 1);
      }
      Matrix expect = w.classes[1].pattern;
      expect *= 0.7;
      // Grand mean within 3 SE; per-pixel within a Bonferroni-safe 4.5 SE.
      const double se = w.noise_sigma / std::sqrt(static_cast<double>(n));
      double grand = 0.0;
      for (std::size_t i = 0; i < 64; ++i) grand += (mean[i] - expect[i]) / 64.0;
      r.add("Monte-Carlo render mean", std::abs(grand) <= 3 * se / 8.0 && max_abs(mean - expect) <= 4.5 * se,
            fmt("grand dev %.5f, max pixel dev %.5f (se %.5f)", grand, max_abs(mean - expect), se));
      r.add("render/classify round trip >= 99%", correct >= 9900, fmt("%zu/10000", correct));
      r.add("style estimator mean 0.7 +- 0.01", std::abs(style_sum / n - 0.7) <= 0.01,
            fmt("%.5f", style_sum / n));
    }
    {
      std::size_t correct = 0;
      for (int i = 0; i < 1000; ++i) {
        Matrix x = w.classes[1].pattern;
        x *= 0.7;
        x += gaussian_noise(1, 64, rng) * w.noise_sigma;
        correct += oracle_classify(w, x).class_index == 1;
      }
      r.add("noisy 0.7 * pattern classified, >= 99.9%", correct >= 999, fmt("%zu/1000", correct));
    }
  });
}

// ------------------------------------------------------------------ edit ops

inline SuiteResult edit_suite(std::uint64_t seed = 17) {
  return timed_suite("edit identities", [&](SuiteResult& r) {
    const WorldSpec w = default_world();
    const Vocabulary vocab = world_vocabulary(w);
    CounterRng rng(seed, 1);
    const TokenSeq ts = tokenize(vocab, "a photo of hbar bright", 16);
    const TokenSeq tt = tokenize(vocab, "a photo of vbar bright", 16);
    const TextEmbedding es{gaussian_noise(16, 32, rng), ts.semantic_len};
    const TextEmbedding et{gaussian_noise(16, 32, rng), tt.semantic_len};
    std::vector<std::size_t> all(16);
    for (std::size_t i = 0; i < 16; ++i) all[i] = i;

    r.add("diff_positions of identical prompts is empty", diff_positions(ts, ts).empty());
    r.add("diff_positions hbar vs vbar is {4}", diff_positions(ts, tt) == std::vector<std::size_t>{4});
    {
      const auto d = diff_positions(tokenize(vocab, "a photo of hbar", 16), ts);
      r.add("diff_positions covers the EOS shift", d == std::vector<std::size_t>{5, 6});
    }
    r.add("swap of nothing is the source", mix_swap(es, et, {}).data == es.data);
    r.add("swap of everything is the target", mix_swap(es, et, all).data == et.data);
    {
      const auto m = mix_swap(es, et, {4});
      bool ok = true;
      for (std::size_t i = 0; i < 16; ++i)
        ok = ok && detail::rows_equal(m.data, i == 4 ? et.data : es.data, i, i + 1);
      r.add("swap {4} changes row 4 only", ok);
    }
    r.add("soft_swap w=1 is the source", soft_swap(es, et, {4, 5}, 1.0).data == es.data);
    r.add("soft_swap w=0 is the hard swap", soft_swap(es, et, {4, 5}, 0.0).data == mix_swap(es, et, {4, 5}).data);
    {
      const auto m = soft_swap(es, et, {4}, 0.5);
      bool ok = true;
      for (std::size_t j = 0; j < 32; ++j) ok = ok && m.data(4, j) == 0.5 * (es.data(4, j) + et.data(4, j));
      r.add("soft_swap w=0.5 is the mean", ok && detail::rows_equal(m.data, es.data, 5, 16));
      bool bound = true;
      for (double a : {0.0, 0.3, 0.9})
        for (double b : {0.1, 0.5, 1.0}) {
          const double lhs = frobenius_norm(soft_swap(es, et, {4}, a).data - soft_swap(es, et, {4}, b).data);
          double rhs = 0.0;
          for (std::size_t j = 0; j < 32; ++j) rhs += std::pow(es.data(4, j) - et.data(4, j), 2);
          bound = bound && lhs <= std::abs(a - b) * std::sqrt(rhs) * (1 + 1e-12);
        }
      r.add("soft_swap Lipschitz bound", bound);
      r.add("soft_swap rejects w outside [0,1]", throws_as<ArgumentError>([&] { soft_swap(es, et, {4}, 1.5); }));
    }
    r.add("scale c=1 is the identity", mix_scale(es, 5, 1.0).data == es.data);
    {
      const auto z = mix_scale(es, 5, 0.0);
      r.add("scale c=0 zeroes the row", max_abs(z.data.row_copy(5)) == 0.0 &&
                                            detail::rows_equal(z.data, es.data, 0, 5) &&
                                            detail::rows_equal(z.data, es.data, 6, 16));
      const auto d = mix_scale(es, 5, 2.0);
      r.add("scale c=2 doubles the row norm", frobenius_norm(d.data.row_copy(5)) ==
                                                  2.0 * frobenius_norm(es.data.row_copy(5)));
    }
    r.add("style with equal prompts is the identity", mix_style(es, es).data == es.data);
    {
      const auto m = mix_style(es, et);
      const std::size_t sl = es.semantic_len;
      r.add("style boundary rows", detail::rows_equal(m.data, es.data, 0, sl) &&
                                       detail::rows_equal(m.data, et.data, sl, 16));
      double blocks = 0.0;
      for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t j = 0; j < 32; ++j) blocks += std::pow(i < sl ? es.data(i, j) : et.data(i, j), 2);
      r.add("style Frobenius norm vs block oracle", std::abs(frobenius_norm(m.data) - std::sqrt(blocks)) < 1e-12);
      const auto at = mix_style(es, et, StyleBoundary::kAtEos);
      r.add("at-eos boundary moves EOS to the target", detail::rows_equal(at.data, es.data, 0, sl - 1) &&
                                                           detail::rows_equal(at.data, et.data, sl - 1, 16));
    }
    r.add("soft_mix lambda=1 is the source", soft_mix(es, et, std::vector<double>(16, 1.0)).data == es.data);
    r.add("soft_mix lambda=0 is the target", soft_mix(es, et, std::vector<double>(16, 0.0)).data == et.data);
    {
      std::vector<double> ind(16, 1.0);
      ind[4] = 0.0;
      ind[9] = 0.0;
      r.add("soft_mix indicator equals hard swap", soft_mix(es, et, ind).data == mix_swap(es, et, {4, 9}).data);
      ind[3] = -0.1;
      r.add("soft_mix rejects lambda outside [0,1]", throws_as<ArgumentError>([&] { soft_mix(es, et, ind); }));
    }
    {
      ModelConfig mc;
      Model m{w, vocab, init_joint(mc, vocab.size(), seed), make_schedule(100, 1e-4, 0.02)};
      EditRecipe id;
      id.positions = std::vector<std::size_t>{};
      const auto out = run_edit(m, "a photo of hbar bright", "a photo of vbar bright", id, 3);
      r.add("identity swap regenerates I_s bitwise", out.image_star == out.image_src);
    }
  });
}

// --------------------------------------------------------------- semantics

inline SuiteResult semantics_suite(std::uint64_t seed = 18) {
  return timed_suite("semantic directions", [&](SuiteResult& r) {
    CounterRng rng(seed, 1);
    const TextEmbedding e{gaussian_noise(16, 32, rng), 7};
    const SvdFactors f = svd(e.data);
    r.add("s=0 leaves the embedding unchanged",
          semantic_shift(e, f, {DirectionSide::kRight, 2, 0.0}).data == e.data);
    double worst_norm = 0.0, worst_orth = 0.0;
    for (std::size_t k = 0; k < 16; ++k) {
      const Matrix c = compress_right(e.data, f, k);
      const double n = frobenius_norm(expand(c, 16, 32));
      worst_norm = std::max(worst_norm, std::abs(n - std::sqrt(32.0) * f.sigma[k]));
      for (std::size_t j = k + 1; j < 16; ++j)
        worst_orth = std::max(worst_orth, std::abs(dot(c, compress_right(e.data, f, j))));
    }
    r.add("right shift norm is sqrt(D) sigma_k", worst_norm < 1e-10, fmt("max error %.2e", worst_norm));
    r.add("distinct right compressions are orthogonal", worst_orth < 1e-10, fmt("max %.2e", worst_orth));
    r.add("compression shapes", compress_right(e.data, f, 0).rows() == 16 &&
                                    compress_right(e.data, f, 0).cols() == 1 &&
                                    compress_left(e.data, f, 0).rows() == 1 &&
                                    compress_left(e.data, f, 0).cols() == 32);
    {
      bool linear = true;
      for (DirectionSide side : {DirectionSide::kRight, DirectionSide::kLeft}) {
        const Matrix d1 = semantic_shift(e, f, {side, 1, 0.5}).data - e.data;
        const Matrix d2 = semantic_shift(e, f, {side, 1, -1.5}).data - e.data;
        Matrix scaled = d2;
        scaled *= 0.5 / -1.5;
        linear = linear && max_abs(d1 - scaled) < 1e-12 * std::max(1.0, max_abs(d1));
      }
      r.add("shifts are linear in s", linear);
    }
    {
      const PcaResult p = pca(e.data, false);
      double worst = 1.0;
      for (std::size_t k = 0; k < 16; ++k)
        worst = std::min(worst, abs_cosine(column(p.components, k), column(f.v(), k)));
      r.add("uncentered pca matches right directions", worst > 1 - 1e-8);
    }
    r.add("direction index out of range rejected",
          throws_as<ArgumentError>([&] { semantic_shift(e, f, {DirectionSide::kLeft, 16, 1.0}); }));
  });
}

// ---------------------------------------------------------------- optimizer

inline SuiteResult optimizer_suite(std::uint64_t seed = 19) {
  return timed_suite("lambda optimizer", [&](SuiteResult& r) {
    CounterRng rng(seed, 1);
    {
      std::vector<double> a(6), b(6), theta(6);
      for (std::size_t i = 0; i < 6; ++i) {
        a[i] = rng.normal();
        b[i] = rng.normal();
        theta[i] = rng.normal();
      }
      auto quad = [&](const std::vector<double>& th) {
        double s = 0.0;
        for (std::size_t i = 0; i < th.size(); ++i) s += a[i] * th[i] * th[i] + b[i] * th[i];
        return s;
      };
      const auto g = fd_gradient(theta, quad, 1e-3);
      double worst = 0.0;
      for (std::size_t i = 0; i < 6; ++i) worst = std::max(worst, std::abs(g[i] - (2 * a[i] * theta[i] + b[i])));
      r.add("quadratic gradient exact", worst < 1e-9, fmt("max error %.2e", worst));

      // A cubic term exposes the O(h^2) truncation error.
      auto cubic = [&](const std::vector<double>& th) {
        double s = quad(th);
        for (std::size_t i = 0; i < th.size(); ++i) s += b[i] * th[i] * th[i] * th[i];
        return s;
      };
      double min_ratio = 1e9, max_ratio = 0.0;
      const double h = 1e-2;
      const auto g1 = fd_gradient(theta, cubic, h), g2 = fd_gradient(theta, cubic, h / 2);
      for (std::size_t i = 0; i < 6; ++i) {
        const double exact = 2 * a[i] * theta[i] + b[i] + 3 * b[i] * theta[i] * theta[i];
        const double ratio = (g1[i] - exact) / (g2[i] - exact);
        min_ratio = std::min(min_ratio, ratio);
        max_ratio = std::max(max_ratio, ratio);
      }
      r.add("Richardson ratio about 4", min_ratio > 3.9 && max_ratio < 4.1,
            fmt("ratio in [%.4f, %.4f]", min_ratio, max_ratio));
      const auto zero = fd_gradient(theta, [](const std::vector<double>&) { return 2.5; }, 1e-3);
      r.add("constant loss has zero gradient",
            std::all_of(zero.begin(), zero.end(), [](double v) { return v == 0.0; }));
    }
    {
      const WorldSpec w = default_world();
      const Vocabulary vocab = world_vocabulary(w);
      ModelConfig mc;
      Model m{w, vocab, init_joint(mc, vocab.size(), seed), make_schedule(100, 1e-4, 0.02)};
      OptContext ctx = make_opt_context(m, "a photo of hbar bright", "a photo of vbar bright", 5, 1.0);
      const SurrogateLoss one = surrogate_loss(std::vector<double>(16, 1.0), ctx);
      r.add("lambda=1 gives zero loss", one.total == 0.0 && one.preservation == 0.0);

      OptContext flat = ctx;
      flat.gamma = 0.0;
      Matrix star = ctx.image_src;
      star.add_scaled(ctx.pattern_tgt - ctx.pattern_src, 0.3);
      r.add("parallel change with gamma=0 scores -1", std::abs(score_image(flat, star).total + 1.0) < 1e-8);

      std::vector<double> lam(16);
      for (double& v : lam) v = 0.2 + 0.6 * rng.uniform();
      const Matrix img = render_mix(ctx, lam);
      const SurrogateLoss l = score_image(ctx, img);
      // Recompute from the dumped image with plain loops.
      double dd = 0.0, bb = 0.0, db = 0.0, bg = 0.0;
      for (std::size_t i = 0; i < 64; ++i) {
        const double d = img[i] - ctx.image_src[i];
        const double b = ctx.pattern_tgt[i] - ctx.pattern_src[i];
        dd += d * d;
        bb += b * b;
        db += d * b;
        if (ctx.pattern_tgt[i] == 0.0 && ctx.pattern_src[i] == 0.0) bg += d * d;
      }
      const double expect = -db / (std::sqrt(dd) * std::sqrt(bb) + 1e-8) + bg;
      r.add("surrogate loss vs recomputation", std::abs(l.total - expect) < 1e-12,
            fmt("%.3e", std::abs(l.total - expect)));

      LambdaParams near_one;
      near_one.theta.assign(16, 30.0);
      const auto g = fd_gradient(near_one.theta, ctx, 1e-3);
      r.add("gradient near lambda=1 is finite",
            std::all_of(g.begin(), g.end(), [](double v) { return std::isfinite(v); }));

      OptConfig cfg;
      cfg.steps = 5;
      const OptResult res = optimize(ctx, cfg);
      bool mono = true, inside = true;
      for (std::size_t i = 1; i < res.trajectory.size(); ++i)
        mono = mono && res.trajectory[i].loss <= res.trajectory[i - 1].loss;
      for (const auto& e : res.trajectory)
        for (double v : e.lambda) inside = inside && v > 0.0 && v < 1.0;
      r.add("line search never increases the loss", mono);
      r.add("lambda stays inside (0, 1)", inside);
      const auto init = res.trajectory.front().lambda;
      r.add("initialization softens the hard swap",
            std::abs(init[4] - 0.05) < 1e-12 && std::abs(init[0] - 0.95) < 1e-12);
    }
  });
}

// ---------------------------------------------------------------- io

inline SuiteResult io_suite(std::uint64_t seed = 20) {
  return timed_suite("serialization", [&](SuiteResult& r) {
    CounterRng rng(seed, 1);
    const Matrix a = gaussian_noise(5, 7, rng);
    std::stringstream ss;
    write_csv(ss, a);
    r.add("matrix CSV round trip", read_csv(ss) == a);

    const WorldSpec w = default_world();
    const Vocabulary vocab = world_vocabulary(w);
    ModelConfig mc;
    Model m{w, vocab, init_joint(mc, vocab.size(), seed), make_schedule(100, 1e-4, 0.02)};
    std::stringstream bin;
    write_tensors(bin, model_tensors(m));
    const Model back = model_from_tensors(read_tensors(bin), w);
    bool same = true;
    auto t1 = tensors(m.params);
    auto t2 = tensors(back.params);
    for (std::size_t k = 0; k < t1.size(); ++k) same = same && *t1[k].tensor == *t2[k].tensor;
    r.add("checkpoint round trip", same && back.schedule.alpha_bar(100) == m.schedule.alpha_bar(100));
    std::stringstream vs;
    write_vocabulary(vs, vocab);
    r.add("vocabulary round trip", read_vocabulary(vs).user_words() == vocab.user_words());
  });
}

inline std::vector<SuiteResult> run_all() {
  return {diffusion_suite(), svd_suite(),       encoder_suite(),   gradient_suite(),
          denoiser_suite(),  toyworld_suite(),  edit_suite(),      semantics_suite(),
          optimizer_suite(), io_suite()};
}

}  // namespace embedlab::verify

#pragma once

// Singular value decomposition by one-sided Jacobi rotations, plus the
// Gram-matrix eigendecomposition and PCA built on top of it.
//
// Sign convention: every right singular vector has its largest-magnitude
// entry non-negative (first such entry on ties); the paired left vector is
// flipped with it. Results are therefore deterministic for a given input.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "embedlab/errors.hpp"
#include "embedlab/matrix.hpp"

namespace embedlab {

struct SvdFactors {
  Matrix u;                    // m x m, orthogonal
  std::vector<double> sigma;   // min(m, n), descending, >= 0
  Matrix vt;                   // n x n, orthogonal

  Matrix v() const { return transpose(vt); }

  // U * diag(sigma) * Vt, padded to m x n.
  Matrix reconstruct() const {
    const std::size_t m = u.rows();
    const std::size_t n = vt.rows();
    Matrix out(m, n);
    for (std::size_t k = 0; k < sigma.size(); ++k) {
      const double s = sigma[k];
      if (s == 0.0) continue;
      for (std::size_t i = 0; i < m; ++i) {
        const double us = u(i, k) * s;
        for (std::size_t j = 0; j < n; ++j) out(i, j) += us * vt(k, j);
      }
    }
    return out;
  }
};

struct SvdOptions {
  int max_sweeps = 60;
  // A column pair counts as orthogonal once |cos| drops below this.
  double orthogonality_tol = 1e-12;
};

namespace detail {

inline double column_dot(const std::vector<std::vector<double>>& cols, std::size_t p,
                         std::size_t q) {
  const auto& a = cols[p];
  const auto& b = cols[q];
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Extend `basis` (orthonormal columns, each of length m) to a full basis of R^m.
inline void complete_basis(std::vector<std::vector<double>>& basis, std::size_t m) {
  while (basis.size() < m) {
    std::vector<double> best;
    double best_norm = -1.0;
    for (std::size_t k = 0; k < m; ++k) {
      std::vector<double> r(m, 0.0);
      r[k] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (const auto& b : basis) {
          double d = 0.0;
          for (std::size_t i = 0; i < m; ++i) d += b[i] * r[i];
          for (std::size_t i = 0; i < m; ++i) r[i] -= d * b[i];
        }
      }
      double nr = 0.0;
      for (double v : r) nr += v * v;
      nr = std::sqrt(nr);
      if (nr > best_norm + 1e-12) {
        best_norm = nr;
        best = std::move(r);
      }
    }
    for (double& v : best) v /= best_norm;
    basis.push_back(std::move(best));
  }
}

// Requires a.rows() >= a.cols().
inline SvdFactors svd_tall(const Matrix& a, const SvdOptions& opt) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();

  std::vector<std::vector<double>> w(n, std::vector<double>(m));
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) w[j][i] = a(i, j);
    v[j][j] = 1.0;
  }

  // Columns at roundoff level relative to ||A|| never orthogonalize cleanly;
  // they are treated as zero and their left vectors come from basis completion.
  const double scale = frobenius_norm(a);
  const double negligible = scale * 1e-13;
  const double tiny = negligible * negligible;

  bool converged = n < 2;
  int sweeps = 0;
  while (!converged) {
    if (sweeps >= opt.max_sweeps) {
      throw NumericError("svd: one-sided Jacobi did not converge after " +
                         std::to_string(sweeps) + " sweeps");
    }
    ++sweeps;
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = column_dot(w, p, p);
        const double beta = column_dot(w, q, q);
        const double gamma = column_dot(w, p, q);
        if (alpha <= tiny || beta <= tiny || gamma == 0.0) continue;
        if (std::abs(gamma) < opt.orthogonality_tol * std::sqrt(alpha) * std::sqrt(beta)) continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        auto& wp = w[p];
        auto& wq = w[q];
        for (std::size_t i = 0; i < m; ++i) {
          const double x = wp[i];
          const double y = wq[i];
          wp[i] = c * x - s * y;
          wq[i] = s * x + c * y;
        }
        auto& vp = v[p];
        auto& vq = v[q];
        for (std::size_t i = 0; i < n; ++i) {
          const double x = vp[i];
          const double y = vq[i];
          vp[i] = c * x - s * y;
          vq[i] = s * x + c * y;
        }
      }
    }
  }

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) norms[j] = std::sqrt(column_dot(w, j, j));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  const double rank_tol = negligible * static_cast<double>(std::max(m, n));

  SvdFactors f;
  f.sigma.resize(n);
  std::vector<std::vector<double>> ucols;
  std::vector<std::vector<double>> vcols;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    f.sigma[k] = norms[j];
    vcols.push_back(v[j]);
  }
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    if (norms[j] <= rank_tol || norms[j] == 0.0) break;
    std::vector<double> col = w[j];
    for (double& x : col) x /= norms[j];
    ucols.push_back(std::move(col));
  }
  complete_basis(ucols, m);

  f.u = Matrix(m, m);
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t i = 0; i < m; ++i) f.u(i, k) = ucols[k][i];
  f.vt = Matrix(n, n);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i) f.vt(k, i) = vcols[k][i];
  return f;
}

inline void canonicalize_signs(SvdFactors& f) {
  const std::size_t n = f.vt.rows();
  const std::size_t m = f.u.rows();
  const std::size_t r = f.sigma.size();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double mag = std::abs(f.vt(k, i));
      if (mag > best) {
        best = mag;
        arg = i;
      }
    }
    if (f.vt(k, arg) >= 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) f.vt(k, i) = -f.vt(k, i);
    if (k < r)
      for (std::size_t i = 0; i < m; ++i) f.u(i, k) = -f.u(i, k);
  }
  // Left-only completion columns (m > n) get the same rule on their own.
  for (std::size_t k = r; k < m; ++k) {
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double mag = std::abs(f.u(i, k));
      if (mag > best) {
        best = mag;
        arg = i;
      }
    }
    if (f.u(arg, k) < 0.0)
      for (std::size_t i = 0; i < m; ++i) f.u(i, k) = -f.u(i, k);
  }
}

}  // namespace detail

inline SvdFactors svd(const Matrix& a, const SvdOptions& opt = {}) {
  if (a.empty()) throw ArgumentError("svd: empty matrix");
  if (!a.all_finite()) throw ArgumentError("svd: non-finite entry in input");

  SvdFactors f;
  if (a.rows() >= a.cols()) {
    f = detail::svd_tall(a, opt);
  } else {
    // A^T = U' S V'^T  =>  A = V' S U'^T
    SvdFactors t = detail::svd_tall(transpose(a), opt);
    f.u = transpose(t.vt);
    f.sigma = std::move(t.sigma);
    f.vt = transpose(t.u);
  }
  detail::canonicalize_signs(f);
  return f;
}

struct GramEigen {
  std::vector<double> eigenvalues;  // length n, descending
  Matrix eigenvectors;              // n x n, eigenvectors as columns
};

// Eigendecomposition of A^T A taken from the SVD: A^T A = V S^2 V^T.
inline GramEigen gram_eigendecomposition(const Matrix& a) {
  SvdFactors f = svd(a);
  GramEigen g;
  g.eigenvalues.assign(a.cols(), 0.0);
  for (std::size_t k = 0; k < f.sigma.size(); ++k) g.eigenvalues[k] = f.sigma[k] * f.sigma[k];
  g.eigenvectors = f.v();
  return g;
}

struct PcaResult {
  Matrix components;              // n x n, principal directions as columns
  std::vector<double> variances;  // per component; sigma^2 / (m - 1) when centered, sigma^2 otherwise
  bool zero_variance = false;     // centered input with all rows equal
};

inline PcaResult pca(const Matrix& a, bool centered) {
  if (a.empty()) throw ArgumentError("pca: empty matrix");
  if (centered && a.rows() < 2) throw ArgumentError("pca: centered mode needs at least 2 rows");

  Matrix x = a;
  if (centered) {
    Matrix mean = column_sums(a);
    mean *= 1.0 / static_cast<double>(a.rows());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) -= mean[j];
  }

  PcaResult r;
  r.zero_variance = centered && max_abs(x) == 0.0;
  SvdFactors f = svd(x);
  r.components = f.v();
  r.variances.assign(a.cols(), 0.0);
  const double denom = centered ? static_cast<double>(a.rows() - 1) : 1.0;
  for (std::size_t k = 0; k < f.sigma.size(); ++k) r.variances[k] = f.sigma[k] * f.sigma[k] / denom;
  return r;
}

}  // namespace embedlab

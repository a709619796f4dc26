#pragma once

// Semantic directions of a single text embedding from its SVD e = U S V^T.
//
// right (v_k): compress e to the column c = e v_k (L x 1), broadcast it
//              across the D columns, and add s * that to e.
// left  (u_k): compress e to the row r = u_k^T e (1 x D), broadcast it
//              across the L rows, and add s * that to e.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "embedlab/errors.hpp"
#include "embedlab/linalg.hpp"
#include "embedlab/model.hpp"
#include "embedlab/toyworld.hpp"

namespace embedlab {

enum class DirectionSide { kRight, kLeft };

inline std::string_view to_string(DirectionSide s) { return s == DirectionSide::kRight ? "right" : "left"; }

inline DirectionSide parse_direction_side(std::string_view s) {
  if (s == "right") return DirectionSide::kRight;
  if (s == "left") return DirectionSide::kLeft;
  throw ArgumentError("direction side must be 'right' or 'left', got '" + std::string(s) + "'");
}

struct DirectionSpec {
  DirectionSide side = DirectionSide::kRight;
  std::size_t index = 0;
  double strength = 0.0;
};

// e v_k: one entry per embedding row.
inline Matrix compress_right(const Matrix& e, const SvdFactors& f, std::size_t k) {
  Matrix c(e.rows(), 1);
  for (std::size_t i = 0; i < e.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < e.cols(); ++j) s += e(i, j) * f.vt(k, j);
    c[i] = s;
  }
  return c;
}

// u_k^T e: one entry per embedding column.
inline Matrix compress_left(const Matrix& e, const SvdFactors& f, std::size_t k) {
  Matrix r(1, e.cols());
  for (std::size_t i = 0; i < e.rows(); ++i) {
    const double u = f.u(i, k);
    for (std::size_t j = 0; j < e.cols(); ++j) r[j] += u * e(i, j);
  }
  return r;
}

// Broadcast a column (L x 1) or row (1 x D) to the full L x D shape.
inline Matrix expand(const Matrix& compressed, std::size_t rows, std::size_t cols) {
  Matrix out(rows, cols);
  if (compressed.cols() == 1 && compressed.rows() == rows) {
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) out(i, j) = compressed[i];
  } else if (compressed.rows() == 1 && compressed.cols() == cols) {
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) out(i, j) = compressed[j];
  } else {
    throw ArgumentError("expand: cannot broadcast " + compressed.shape_string() + " to " +
                        std::to_string(rows) + "x" + std::to_string(cols));
  }
  return out;
}

inline TextEmbedding semantic_shift(const TextEmbedding& e, const SvdFactors& f,
                                    const DirectionSpec& dir) {
  const std::size_t rank = std::min(e.length(), e.dim());
  if (dir.index >= rank)
    throw ArgumentError("direction index " + std::to_string(dir.index) + " outside [0, " +
                        std::to_string(rank) + ")");
  TextEmbedding out = e;
  if (dir.strength == 0.0) return out;
  const Matrix compressed = dir.side == DirectionSide::kRight ? compress_right(e.data, f, dir.index)
                                                             : compress_left(e.data, f, dir.index);
  out.data.add_scaled(expand(compressed, e.length(), e.dim()), dir.strength);
  return out;
}

inline TextEmbedding semantic_shift(const TextEmbedding& e, const DirectionSpec& dir) {
  return semantic_shift(e, svd(e.data), dir);
}

// Default sweep {-2, -1, -0.5, 0, 0.5, 1, 2} / sqrt(D), so a right shift of
// strength s has Frobenius norm sigma_k * |s * sqrt(D)|.
inline std::vector<double> default_strengths(std::size_t dim) {
  std::vector<double> s{-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0};
  for (double& v : s) v /= std::sqrt(static_cast<double>(dim));
  return s;
}

struct SweepEntry {
  DirectionSpec direction;
  std::size_t class_index = 0;
  double style = 0.0;
  double delta_l2 = 0.0;  // || I(s) - I(unedited) ||_2
  Matrix image;
};

struct SweepReport {
  std::string text;
  std::uint64_t seed = 0;
  Matrix unedited;
  std::vector<SweepEntry> entries;
};

inline SweepReport direction_sweep(const Model& model, std::string_view text, DirectionSide side,
                                   std::size_t k, const std::vector<double>& strengths,
                                   std::uint64_t seed) {
  const TextEmbedding e = model.embed(text);
  const SvdFactors f = svd(e.data);
  const Matrix x_T = initial_noise(seed);
  const AttnMask all = AttnMask::all(e.length());

  SweepReport r;
  r.text = std::string(text);
  r.seed = seed;
  r.unedited = generate(model, e, all, x_T);
  for (double s : strengths) {
    SweepEntry entry;
    entry.direction = {side, k, s};
    entry.image = generate(model, semantic_shift(e, f, entry.direction), all, x_T);
    entry.class_index = oracle_classify(model.world, entry.image).class_index;
    entry.style = oracle_style(model.world, entry.image, entry.class_index);
    entry.delta_l2 = frobenius_norm(entry.image - r.unedited);
    r.entries.push_back(std::move(entry));
  }
  return r;
}

// `side,k,s,class,style,delta_l2`; header written when `header` is set.
inline void write_sweep_csv(std::ostream& os, const WorldSpec& w, const SweepReport& r,
                            bool header = true) {
  if (header) os << "side,k,s,class,style,delta_l2\n";
  char buf[96];
  for (const auto& e : r.entries) {
    std::snprintf(buf, sizeof buf, "%.17g", e.direction.strength);
    os << to_string(e.direction.side) << ',' << e.direction.index << ',' << buf << ','
       << w.classes[e.class_index].name;
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g", e.style, e.delta_l2);
    os << buf << '\n';
  }
}

}  // namespace embedlab

#pragma once

// Synthetic 8x8 image universe: a few binary class patterns, brightness
// style words, a noisy renderer and the oracle measurements used to score
// generated images.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "embedlab/errors.hpp"
#include "embedlab/matrix.hpp"
#include "embedlab/rng.hpp"

namespace embedlab {

inline constexpr std::size_t kImageSide = 8;
inline constexpr std::size_t kImageDim = kImageSide * kImageSide;
inline constexpr double kClampLow = -0.2;
inline constexpr double kClampHigh = 1.2;

struct ClassPattern {
  std::string name;
  Matrix pattern;  // 1 x 64, entries in {0, 1}
};

struct StyleWord {
  std::string name;
  double brightness;
};

struct WorldSpec {
  std::vector<ClassPattern> classes;
  std::vector<StyleWord> styles;
  double noise_sigma = 0.05;

  std::size_t image_dim() const noexcept { return kImageDim; }

  std::size_t class_index(const std::string& name) const {
    for (std::size_t k = 0; k < classes.size(); ++k)
      if (classes[k].name == name) return k;
    throw ArgumentError("unknown class '" + name + "'");
  }

  std::size_t style_index(const std::string& name) const {
    for (std::size_t k = 0; k < styles.size(); ++k)
      if (styles[k].name == name) return k;
    throw ArgumentError("unknown style '" + name + "'");
  }
};

struct Sample {
  Matrix x0;  // 1 x 64
  std::size_t class_index = 0;
  double style_value = 1.0;
  std::string prompt;
};

inline double pattern_correlation(const Matrix& a, const Matrix& b) {
  return std::abs(dot(a, b)) / (frobenius_norm(a) * frobenius_norm(b));
}

inline void validate_world(const WorldSpec& w) {
  if (w.classes.size() < 3) throw ArgumentError("world needs at least 3 classes");
  if (w.styles.size() < 2) throw ArgumentError("world needs at least 2 style words");
  if (w.noise_sigma < 0.0) throw ArgumentError("noise_sigma must be >= 0");
  for (const auto& c : w.classes) {
    if (c.pattern.rows() != 1 || c.pattern.cols() != kImageDim)
      throw ArgumentError("class pattern '" + c.name + "' must be 1x64");
    if (frobenius_norm(c.pattern) == 0.0)
      throw ArgumentError("class pattern '" + c.name + "' is empty");
  }
  for (const auto& s : w.styles)
    if (!(s.brightness > 0.0 && s.brightness <= 1.0))
      throw ArgumentError("style '" + s.name + "' brightness outside (0, 1]");
  for (std::size_t i = 0; i < w.classes.size(); ++i) {
    for (std::size_t j = i + 1; j < w.classes.size(); ++j) {
      const double r = pattern_correlation(w.classes[i].pattern, w.classes[j].pattern);
      if (r >= 0.5)
        throw ArgumentError("patterns '" + w.classes[i].name + "' and '" + w.classes[j].name +
                            "' correlate at " + std::to_string(r));
    }
  }
}

namespace detail {

template <class Pred>
Matrix make_pattern(Pred on) {
  Matrix p(1, kImageDim);
  for (std::size_t r = 0; r < kImageSide; ++r)
    for (std::size_t c = 0; c < kImageSide; ++c) p[r * kImageSide + c] = on(r, c) ? 1.0 : 0.0;
  return p;
}

}  // namespace detail

// Four classes (hbar, vbar, cross, diag) and two styles (dim 0.4, bright 1.0).
// The cross sits off-centre (row 6, column 1) so that it stays below 0.5
// correlation with both bars.
inline WorldSpec default_world() {
  WorldSpec w;
  w.classes.push_back({"hbar", detail::make_pattern([](auto r, auto) { return r == 3 || r == 4; })});
  w.classes.push_back({"vbar", detail::make_pattern([](auto, auto c) { return c == 3 || c == 4; })});
  w.classes.push_back({"cross", detail::make_pattern([](auto r, auto c) { return r == 6 || c == 1; })});
  w.classes.push_back({"diag", detail::make_pattern([](auto r, auto c) { return c == r || c == r + 1; })});
  w.styles = {{"dim", 0.4}, {"bright", 1.0}};
  w.noise_sigma = 0.05;
  validate_world(w);
  return w;
}

inline std::size_t nearest_style(const WorldSpec& w, double style_value) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < w.styles.size(); ++k)
    if (std::abs(w.styles[k].brightness - style_value) <
        std::abs(w.styles[best].brightness - style_value))
      best = k;
  return best;
}

inline std::string make_prompt(const WorldSpec& w, std::size_t class_index, std::size_t style_index) {
  return "a photo of " + w.classes.at(class_index).name + " " + w.styles.at(style_index).name;
}

inline Sample render(const WorldSpec& w, std::size_t class_index, double style_value,
                     CounterRng& rng) {
  if (class_index >= w.classes.size()) throw ArgumentError("render: class index out of range");
  if (!(style_value > 0.0 && style_value <= 1.0))
    throw ArgumentError("render: style value outside (0, 1]");
  Sample s;
  s.class_index = class_index;
  s.style_value = style_value;
  s.x0 = w.classes[class_index].pattern * style_value;
  if (w.noise_sigma > 0.0) {
    for (double& v : s.x0.values())
      v = std::clamp(v + w.noise_sigma * rng.normal(), kClampLow, kClampHigh);
  }
  s.prompt = make_prompt(w, class_index, nearest_style(w, style_value));
  return s;
}

struct Classification {
  std::size_t class_index = 0;
  double score = 0.0;  // cosine between x and the winning pattern
};

// argmax_k <x, B_k> / ||B_k||; ties go to the lowest index.
inline Classification oracle_classify(const WorldSpec& w, const Matrix& x) {
  Classification out;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < w.classes.size(); ++k) {
    const Matrix& b = w.classes[k].pattern;
    const double v = dot(x, b) / frobenius_norm(b);
    if (v > best) {
      best = v;
      out.class_index = k;
    }
  }
  const double xn = frobenius_norm(x);
  out.score = xn == 0.0 ? 0.0 : best / xn;
  return out;
}

// Least-squares brightness: <x, B_k> / <B_k, B_k>.
inline double oracle_style(const WorldSpec& w, const Matrix& x, std::size_t class_index) {
  const Matrix& b = w.classes.at(class_index).pattern;
  return dot(x, b) / dot(b, b);
}

// Cells outside the support of both patterns.
inline std::vector<bool> background_cells(const WorldSpec& w, std::size_t class_a,
                                          std::size_t class_b) {
  const Matrix& a = w.classes.at(class_a).pattern;
  const Matrix& b = w.classes.at(class_b).pattern;
  std::vector<bool> bg(kImageDim);
  for (std::size_t i = 0; i < kImageDim; ++i) bg[i] = a[i] == 0.0 && b[i] == 0.0;
  return bg;
}

inline double masked_l2(const Matrix& x, const Matrix& y, const std::vector<bool>& cells) {
  double s = 0.0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!cells[i]) continue;
    const double d = x[i] - y[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline std::vector<Sample> generate_dataset(const WorldSpec& w, std::size_t n, CounterRng& rng) {
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = rng.below(w.classes.size());
    const std::size_t s = rng.below(w.styles.size());
    out.push_back(render(w, k, w.styles[s].brightness, rng));
  }
  return out;
}

// Header `class,style,x0_0,...,x0_63`.
inline void write_dataset_csv(std::ostream& os, const WorldSpec& w, const std::vector<Sample>& data) {
  os << "class,style";
  for (std::size_t i = 0; i < kImageDim; ++i) os << ",x0_" << i;
  os << '\n';
  char buf[40];
  for (const auto& s : data) {
    std::snprintf(buf, sizeof buf, "%.17g", s.style_value);
    os << w.classes[s.class_index].name << ',' << buf;
    for (double v : s.x0.values()) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << ',' << buf;
    }
    os << '\n';
  }
}

// ASCII PGM (P2, maxval 255). Images are laid out left to right with a
// one-pixel gap; values map linearly from [0, 1] and are clamped.
inline void write_pgm(std::ostream& os, const std::vector<Matrix>& images) {
  const std::size_t n = images.size();
  const std::size_t width = n == 0 ? 0 : n * kImageSide + (n - 1);
  os << "P2\n" << width << ' ' << kImageSide << "\n255\n";
  for (std::size_t r = 0; r < kImageSide; ++r) {
    std::vector<int> line;
    for (std::size_t k = 0; k < n; ++k) {
      if (k) line.push_back(0);
      for (std::size_t c = 0; c < kImageSide; ++c) {
        const double v = std::clamp(images[k][r * kImageSide + c], 0.0, 1.0);
        line.push_back(static_cast<int>(std::lround(v * 255.0)));
      }
    }
    for (std::size_t i = 0; i < line.size(); ++i) os << (i ? " " : "") << line[i];
    os << '\n';
  }
}

}  // namespace embedlab

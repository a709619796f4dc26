#pragma once

// Learning-free embedding edits: each operation builds a mixed embedding
// e* from a source embedding e_s (and optionally a target e_t), and
// run_edit() renders I_s and I* from the same starting noise.

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "embedlab/errors.hpp"
#include "embedlab/model.hpp"
#include "embedlab/text_encoder.hpp"
#include "embedlab/toyworld.hpp"

namespace embedlab {

enum class EditKind { kSwap, kSoftSwap, kScale, kStyle, kSoftMix, kMask };

// Where mix_style splits content from style.
enum class StyleBoundary {
  kAfterEos,  // rows [0, semantic_len) from the source: BOS and EOS count as content
  kAtEos,     // rows [0, semantic_len - 1) from the source: EOS goes with the padding
};

inline std::string_view to_string(EditKind k) {
  switch (k) {
    case EditKind::kSwap: return "swap";
    case EditKind::kSoftSwap: return "soft_swap";
    case EditKind::kScale: return "scale";
    case EditKind::kStyle: return "style";
    case EditKind::kSoftMix: return "soft_mix";
    case EditKind::kMask: return "mask";
  }
  return "?";
}

inline EditKind parse_edit_kind(std::string_view s) {
  for (EditKind k : {EditKind::kSwap, EditKind::kSoftSwap, EditKind::kScale, EditKind::kStyle,
                     EditKind::kSoftMix, EditKind::kMask})
    if (to_string(k) == s) return k;
  throw ArgumentError("unknown recipe '" + std::string(s) + "'");
}

struct EditRecipe {
  EditKind kind = EditKind::kSwap;
  // swap / soft_swap: rows taken from the target (default: diff_positions).
  // scale: the single row to rescale.
  std::optional<std::vector<std::size_t>> positions;
  double weight = 0.5;           // soft_swap: w * e_s + (1 - w) * e_t on swapped rows
  double scale = 1.0;            // scale: c
  std::vector<double> lambda;    // soft_mix
  std::size_t mask_first = 0;    // mask: 0-based half-open [first, last)
  std::size_t mask_last = 0;
  MaskMode mask_mode = MaskMode::kExclude;
  StyleBoundary boundary = StyleBoundary::kAfterEos;
};

namespace detail {

inline void require_same_shape(const TextEmbedding& a, const TextEmbedding& b, const char* op) {
  if (!a.data.same_shape(b.data))
    throw ArgumentError(std::string(op) + ": embedding shapes differ (" + a.data.shape_string() +
                        " vs " + b.data.shape_string() + ")");
}

inline void copy_row(const Matrix& from, Matrix& to, std::size_t r) {
  const auto src = from.row(r);
  std::copy(src.begin(), src.end(), to.row(r).begin());
}

inline void check_positions(const std::vector<std::size_t>& pos, std::size_t L) {
  for (std::size_t p : pos)
    if (p >= L) throw ArgumentError("position " + std::to_string(p) + " outside [0, " + std::to_string(L) + ")");
}

}  // namespace detail

// Positions whose token ids differ. Different word counts shift EOS and PAD,
// and those shifted slots count as differences too.
inline std::vector<std::size_t> diff_positions(const TokenSeq& a, const TokenSeq& b) {
  if (a.length() != b.length()) throw ArgumentError("diff_positions: sequence lengths differ");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < a.length(); ++i)
    if (a.ids[i] != b.ids[i]) out.push_back(i);
  return out;
}

inline TextEmbedding mix_swap(const TextEmbedding& e_s, const TextEmbedding& e_t,
                              const std::vector<std::size_t>& positions) {
  detail::require_same_shape(e_s, e_t, "mix_swap");
  detail::check_positions(positions, e_s.length());
  TextEmbedding out = e_s;
  for (std::size_t p : positions) detail::copy_row(e_t.data, out.data, p);
  return out;
}

inline TextEmbedding soft_swap(const TextEmbedding& e_s, const TextEmbedding& e_t,
                               const std::vector<std::size_t>& positions, double w) {
  detail::require_same_shape(e_s, e_t, "soft_swap");
  detail::check_positions(positions, e_s.length());
  if (!(w >= 0.0 && w <= 1.0)) throw ArgumentError("soft_swap: weight outside [0, 1]");
  TextEmbedding out = e_s;
  for (std::size_t p : positions) {
    if (w == 0.0) {
      detail::copy_row(e_t.data, out.data, p);
      continue;
    }
    if (w == 1.0) continue;
    for (std::size_t j = 0; j < out.dim(); ++j)
      out.data(p, j) = w * e_s.data(p, j) + (1.0 - w) * e_t.data(p, j);
  }
  return out;
}

inline TextEmbedding mix_scale(const TextEmbedding& e, std::size_t row, double c) {
  if (row >= e.length()) throw ArgumentError("mix_scale: row outside embedding");
  TextEmbedding out = e;
  for (double& v : out.data.row(row)) v *= c;
  return out;
}

// Content rows from the source, style (padding) rows from the target.
inline TextEmbedding mix_style(const TextEmbedding& e_s, const TextEmbedding& e_t,
                               StyleBoundary boundary = StyleBoundary::kAfterEos) {
  detail::require_same_shape(e_s, e_t, "mix_style");
  const std::size_t split =
      boundary == StyleBoundary::kAfterEos ? e_s.semantic_len : e_s.semantic_len - 1;
  TextEmbedding out = e_s;
  for (std::size_t r = split; r < e_s.length(); ++r) detail::copy_row(e_t.data, out.data, r);
  return out;
}

// Row i: lambda_i * e_s_i + (1 - lambda_i) * e_t_i. Rows with lambda exactly
// 0 or 1 are copied verbatim.
inline TextEmbedding soft_mix(const TextEmbedding& e_s, const TextEmbedding& e_t,
                              const std::vector<double>& lambda) {
  detail::require_same_shape(e_s, e_t, "soft_mix");
  if (lambda.size() != e_s.length())
    throw ArgumentError("soft_mix: lambda has " + std::to_string(lambda.size()) + " entries, need " +
                        std::to_string(e_s.length()));
  TextEmbedding out = e_s;
  for (std::size_t i = 0; i < lambda.size(); ++i) {
    const double l = lambda[i];
    if (!(l >= 0.0 && l <= 1.0)) throw ArgumentError("soft_mix: lambda outside [0, 1]");
    if (l == 1.0) continue;
    if (l == 0.0) {
      detail::copy_row(e_t.data, out.data, i);
      continue;
    }
    for (std::size_t j = 0; j < out.dim(); ++j)
      out.data(i, j) = l * e_s.data(i, j) + (1.0 - l) * e_t.data(i, j);
  }
  return out;
}

// e* plus the attention mask to generate it with.
struct MixedEmbedding {
  TextEmbedding embedding;
  AttnMask mask;
};

inline MixedEmbedding apply_recipe(const EditRecipe& r, const TextEmbedding& e_s,
                                   const TextEmbedding& e_t, const TokenSeq& t_s,
                                   const TokenSeq& t_t) {
  const std::size_t L = e_s.length();
  auto positions = [&] { return r.positions ? *r.positions : diff_positions(t_s, t_t); };
  switch (r.kind) {
    case EditKind::kSwap:
      return {mix_swap(e_s, e_t, positions()), AttnMask::all(L)};
    case EditKind::kSoftSwap:
      return {soft_swap(e_s, e_t, positions(), r.weight), AttnMask::all(L)};
    case EditKind::kScale: {
      if (!r.positions || r.positions->size() != 1)
        throw ArgumentError("scale recipe needs exactly one position");
      return {mix_scale(e_s, r.positions->front(), r.scale), AttnMask::all(L)};
    }
    case EditKind::kStyle:
      return {mix_style(e_s, e_t, r.boundary), AttnMask::all(L)};
    case EditKind::kSoftMix:
      return {soft_mix(e_s, e_t, r.lambda), AttnMask::all(L)};
    case EditKind::kMask:
      return {e_s, AttnMask::excluding_range(L, r.mask_first, r.mask_last)};
  }
  throw ArgumentError("unhandled recipe kind");
}

struct EditMetrics {
  std::size_t class_src = 0;
  std::size_t class_star = 0;
  double style_src = 0.0;
  double style_star = 0.0;
  double background_l2 = 0.0;
};

struct EditOutcome {
  Matrix image_src;   // I_s
  Matrix image_star;  // I*
  EditMetrics metrics;
};

// Class named in a prompt, if any.
inline std::optional<std::size_t> prompt_class(const WorldSpec& w, std::string_view text) {
  std::istringstream ss{std::string(text)};
  for (std::string word; ss >> word;)
    for (std::size_t k = 0; k < w.classes.size(); ++k)
      if (w.classes[k].name == word) return k;
  return std::nullopt;
}

// Background = cells outside both the source and target class patterns
// (classes read from the prompts; the oracle class stands in when a prompt
// names none).
inline EditMetrics measure_edit(const WorldSpec& w, const Matrix& image_src, const Matrix& image_star,
                                std::optional<std::size_t> src_class,
                                std::optional<std::size_t> tgt_class) {
  EditMetrics m;
  m.class_src = oracle_classify(w, image_src).class_index;
  m.class_star = oracle_classify(w, image_star).class_index;
  m.style_src = oracle_style(w, image_src, m.class_src);
  m.style_star = oracle_style(w, image_star, m.class_star);
  const auto bg = background_cells(w, src_class.value_or(m.class_src), tgt_class.value_or(m.class_star));
  m.background_l2 = masked_l2(image_src, image_star, bg);
  return m;
}

// Encode both prompts, mix, and generate both images from the same x_T with
// deterministic DDIM.
inline EditOutcome run_edit(const Model& model, std::string_view source_text,
                            std::string_view target_text, const EditRecipe& recipe,
                            std::uint64_t seed) {
  const TokenSeq t_s = model.tokens(source_text);
  const TokenSeq t_t = model.tokens(target_text);
  const TextEmbedding e_s = encode(model.params.encoder, t_s, model.encode_options);
  const TextEmbedding e_t = encode(model.params.encoder, t_t, model.encode_options);
  const MixedEmbedding mixed = apply_recipe(recipe, e_s, e_t, t_s, t_t);

  const Matrix x_T = initial_noise(seed);
  EditOutcome out;
  out.image_src = generate(model, e_s, AttnMask::all(e_s.length()), x_T);
  out.image_star = generate(model, mixed.embedding, mixed.mask, x_T, SamplerMode::kDdim, nullptr,
                            recipe.mask_mode);
  out.metrics = measure_edit(model.world, out.image_src, out.image_star,
                             prompt_class(model.world, source_text),
                             prompt_class(model.world, target_text));
  return out;
}

struct EditReportRow {
  std::uint64_t seed = 0;
  std::string recipe;
  EditMetrics metrics;
};

// `seed,recipe,class_src,class_star,style_src,style_star,background_l2`
inline void write_edit_report(std::ostream& os, const WorldSpec& w,
                              const std::vector<EditReportRow>& rows) {
  os << "seed,recipe,class_src,class_star,style_src,style_star,background_l2\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g", r.metrics.style_src, r.metrics.style_star,
                  r.metrics.background_l2);
    os << r.seed << ',' << r.recipe << ',' << w.classes[r.metrics.class_src].name << ','
       << w.classes[r.metrics.class_star].name << ',' << buf << '\n';
  }
}

}  // namespace embedlab

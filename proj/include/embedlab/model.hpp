#pragma once

// The frozen text-to-image pipeline: vocabulary, encoder, denoiser and noise
// schedule bundled together, plus the prompt -> embedding -> image helpers
// every experiment goes through.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "embedlab/denoiser.hpp"
#include "embedlab/diffusion.hpp"
#include "embedlab/rng.hpp"
#include "embedlab/text_encoder.hpp"
#include "embedlab/toyworld.hpp"

namespace embedlab {

struct JointParams {
  EncoderParams encoder;
  DenoiserParams denoiser;
};

inline std::vector<NamedTensor> tensors(JointParams& p) {
  std::vector<NamedTensor> out;
  for (auto& t : tensors(p.encoder)) out.push_back({"encoder." + t.name, t.tensor});
  for (auto& t : tensors(p.denoiser)) out.push_back({"denoiser." + t.name, t.tensor});
  return out;
}

inline std::vector<ConstNamedTensor> tensors(const JointParams& p) {
  std::vector<ConstNamedTensor> out;
  for (auto& t : tensors(const_cast<JointParams&>(p))) out.push_back({t.name, t.tensor});
  return out;
}

inline JointParams zeros_like(const JointParams& p) {
  return {zeros_like(p.encoder), zeros_like(p.denoiser)};
}

inline std::size_t parameter_count(const JointParams& p) {
  std::size_t n = 0;
  for (const auto& t : tensors(p)) n += t.tensor->size();
  return n;
}

// "a", "photo", "of", then class names, then style names.
inline Vocabulary world_vocabulary(const WorldSpec& w) {
  std::vector<std::string> words{"a", "photo", "of"};
  for (const auto& c : w.classes) words.push_back(c.name);
  for (const auto& s : w.styles) words.push_back(s.name);
  return Vocabulary(words);
}

struct ModelConfig {
  EncoderConfig encoder;
  DenoiserConfig denoiser;
  int steps = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;
};

inline JointParams init_joint(const ModelConfig& cfg, std::size_t vocab_size, std::uint64_t seed) {
  CounterRng enc_rng(seed, 101);
  CounterRng den_rng(seed, 102);
  DenoiserConfig dc = cfg.denoiser;
  dc.embed_dim = cfg.encoder.dim;
  return {init_encoder(cfg.encoder, vocab_size, enc_rng), init_denoiser(dc, den_rng)};
}

enum class MaskMode {
  kExclude,  // drop masked rows from the attention key set
  kZero,     // overwrite masked rows with zeros, keep them as keys
};

struct Model {
  WorldSpec world;
  Vocabulary vocab;
  JointParams params;
  Schedule schedule;
  EncodeOptions encode_options{true, false};

  std::size_t max_len() const noexcept { return params.encoder.max_len(); }

  TokenSeq tokens(std::string_view text) const { return tokenize(vocab, text, max_len()); }

  TextEmbedding embed(std::string_view text) const {
    return encode(params.encoder, tokens(text), encode_options);
  }
};

// Starting noise x_T for a generation seed.
inline Matrix initial_noise(std::uint64_t seed, std::size_t dim = kImageDim) {
  CounterRng rng(seed, 0x5EEDull);
  return gaussian_noise(1, dim, rng);
}

inline Matrix generate(const Model& m, const TextEmbedding& emb, const AttnMask& mask,
                       const Matrix& x_T, SamplerMode mode = SamplerMode::kDdim,
                       CounterRng* rng = nullptr, MaskMode mask_mode = MaskMode::kExclude) {
  Conditioning cond;
  if (mask_mode == MaskMode::kZero) {
    Matrix zeroed = emb.data;
    for (std::size_t i = 0; i < zeroed.rows(); ++i)
      if (!mask.allowed(i))
        for (double& v : zeroed.row(i)) v = 0.0;
    cond = make_conditioning(m.params.denoiser, zeroed, AttnMask::all(zeroed.rows()));
  } else {
    cond = make_conditioning(m.params.denoiser, emb.data, mask);
  }
  auto eps = [&](const Matrix& x, int t) { return predict_eps(m.params.denoiser, x, t, cond); };
  return sample(m.schedule, eps, x_T, mode, rng);
}

inline Matrix generate(const Model& m, const TextEmbedding& emb, std::uint64_t seed) {
  return generate(m, emb, AttnMask::all(emb.length()), initial_noise(seed));
}

// DDIM inversion of a clean image under the given conditioning.
inline Matrix invert(const Model& m, const TextEmbedding& emb, const Matrix& x0) {
  const Conditioning cond = make_conditioning(m.params.denoiser, emb.data, AttnMask::all(emb.length()));
  auto eps = [&](const Matrix& x, int t) { return predict_eps(m.params.denoiser, x, t, cond); };
  return ddim_invert(m.schedule, eps, x0);
}

}  // namespace embedlab

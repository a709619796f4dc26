#pragma once

// Toy CLIP-style text encoder: token + positional embedding, N pre-norm
// transformer blocks (multi-head self-attention, ReLU feed-forward) and a
// final layer norm. The causal mask and the padding mask are independent
// switches so their effect on the output rows can be studied in isolation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "embedlab/errors.hpp"
#include "embedlab/matrix.hpp"
#include "embedlab/rng.hpp"

namespace embedlab {

class Vocabulary {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kPad = 2;

  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

  // `words` excludes the three reserved tokens, which are implicit.
  explicit Vocabulary(const std::vector<std::string>& words) {
    words_ = {"<bos>", "<eos>", "<pad>"};
    for (const auto& w : words) {
      if (w.empty()) throw ArgumentError("vocabulary: empty word");
      if (index_.count(w) || w == "<bos>" || w == "<eos>" || w == "<pad>")
        throw ArgumentError("vocabulary: duplicate or reserved word '" + w + "'");
      index_.emplace(w, static_cast<int>(words_.size()));
      words_.push_back(w);
    }
  }

  std::size_t size() const noexcept { return words_.size(); }

  int id(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) throw VocabularyError(std::string(word));
    return it->second;
  }

  bool contains(std::string_view word) const { return index_.count(std::string(word)) != 0; }

  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }

  // Non-reserved words in id order.
  std::vector<std::string> user_words() const { return {words_.begin() + 3, words_.end()}; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

// One word per line; reserved tokens are not listed.
inline Vocabulary read_vocabulary(std::istream& is) {
  std::vector<std::string> words;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) words.push_back(line);
  }
  return Vocabulary(words);
}

inline void write_vocabulary(std::ostream& os, const Vocabulary& v) {
  for (const auto& w : v.user_words()) os << w << '\n';
}

struct TokenSeq {
  std::vector<int> ids;
  std::size_t semantic_len = 2;  // BOS through EOS inclusive

  std::size_t length() const noexcept { return ids.size(); }
  bool is_pad(std::size_t i) const noexcept { return ids[i] == Vocabulary::kPad; }
};

// [BOS, words..., EOS, PAD...] of total length `max_len`.
inline TokenSeq tokenize(const Vocabulary& vocab, std::string_view text, std::size_t max_len) {
  std::vector<std::string> words;
  std::istringstream ss{std::string(text)};
  for (std::string w; ss >> w;) words.push_back(std::move(w));
  if (max_len < 2 || words.size() > max_len - 2) {
    throw LengthError("text has " + std::to_string(words.size()) +
                      " words; at most " + std::to_string(max_len < 2 ? 0 : max_len - 2) +
                      " fit in length " + std::to_string(max_len));
  }
  TokenSeq seq;
  seq.ids.reserve(max_len);
  seq.ids.push_back(Vocabulary::kBos);
  for (const auto& w : words) seq.ids.push_back(vocab.id(w));
  seq.ids.push_back(Vocabulary::kEos);
  seq.semantic_len = seq.ids.size();
  seq.ids.resize(max_len, Vocabulary::kPad);
  return seq;
}

struct TextEmbedding {
  Matrix data;  // L x D
  std::size_t semantic_len = 2;

  std::size_t length() const noexcept { return data.rows(); }
  std::size_t dim() const noexcept { return data.cols(); }
};

struct EncoderConfig {
  std::size_t max_len = 16;
  std::size_t dim = 32;
  std::size_t blocks = 2;
  std::size_t heads = 2;
  double init_std = 0.02;
};

struct EncoderBlock {
  Matrix ln1_gain, ln1_bias;     // 1 x D
  Matrix wq, wk, wv, wo;         // D x D
  Matrix ln2_gain, ln2_bias;     // 1 x D
  Matrix ff_in, ff_in_bias;      // D x 4D, 1 x 4D
  Matrix ff_out, ff_out_bias;    // 4D x D, 1 x D
};

struct EncoderParams {
  Matrix token_embedding;        // |vocab| x D
  Matrix positional_embedding;   // L x D
  std::vector<EncoderBlock> blocks;
  Matrix final_gain, final_bias; // 1 x D
  std::size_t heads = 2;

  std::size_t dim() const noexcept { return token_embedding.cols(); }
  std::size_t max_len() const noexcept { return positional_embedding.rows(); }
};

struct NamedTensor {
  std::string name;
  Matrix* tensor;
};

struct ConstNamedTensor {
  std::string name;
  const Matrix* tensor;
};

// Every trainable tensor in a fixed order. Grad and Adam-moment buffers share
// this layout, so zipping two lists by index pairs matching tensors.
inline std::vector<NamedTensor> tensors(EncoderParams& p) {
  std::vector<NamedTensor> out{{"token_embedding", &p.token_embedding},
                               {"positional_embedding", &p.positional_embedding}};
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    auto& k = p.blocks[b];
    const std::string pre = "block" + std::to_string(b) + ".";
    out.push_back({pre + "ln1_gain", &k.ln1_gain});
    out.push_back({pre + "ln1_bias", &k.ln1_bias});
    out.push_back({pre + "wq", &k.wq});
    out.push_back({pre + "wk", &k.wk});
    out.push_back({pre + "wv", &k.wv});
    out.push_back({pre + "wo", &k.wo});
    out.push_back({pre + "ln2_gain", &k.ln2_gain});
    out.push_back({pre + "ln2_bias", &k.ln2_bias});
    out.push_back({pre + "ff_in", &k.ff_in});
    out.push_back({pre + "ff_in_bias", &k.ff_in_bias});
    out.push_back({pre + "ff_out", &k.ff_out});
    out.push_back({pre + "ff_out_bias", &k.ff_out_bias});
  }
  out.push_back({"final_gain", &p.final_gain});
  out.push_back({"final_bias", &p.final_bias});
  return out;
}

inline std::vector<ConstNamedTensor> tensors(const EncoderParams& p) {
  std::vector<ConstNamedTensor> out;
  for (auto& t : tensors(const_cast<EncoderParams&>(p))) out.push_back({t.name, t.tensor});
  return out;
}

inline EncoderParams zeros_like(const EncoderParams& p) {
  EncoderParams z = p;
  for (auto& t : tensors(z)) t.tensor->fill(0.0);
  return z;
}

namespace detail {

inline Matrix gaussian_matrix(std::size_t r, std::size_t c, double std, CounterRng& rng) {
  Matrix m(r, c);
  for (double& v : m.values()) v = std * rng.normal();
  return m;
}

}  // namespace detail

// Weights ~ N(0, init_std^2); layer-norm gains 1, all biases 0.
inline EncoderParams init_encoder(const EncoderConfig& cfg, std::size_t vocab_size, CounterRng& rng) {
  if (cfg.dim == 0 || cfg.heads == 0 || cfg.dim % cfg.heads != 0)
    throw ArgumentError("encoder: dim must be a positive multiple of heads");
  if (cfg.max_len < 2) throw ArgumentError("encoder: max_len must be >= 2");
  const std::size_t d = cfg.dim;
  const double s = cfg.init_std;
  EncoderParams p;
  p.heads = cfg.heads;
  p.token_embedding = detail::gaussian_matrix(vocab_size, d, s, rng);
  p.positional_embedding = detail::gaussian_matrix(cfg.max_len, d, s, rng);
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    EncoderBlock k;
    k.ln1_gain = Matrix(1, d, 1.0);
    k.ln1_bias = Matrix(1, d);
    k.wq = detail::gaussian_matrix(d, d, s, rng);
    k.wk = detail::gaussian_matrix(d, d, s, rng);
    k.wv = detail::gaussian_matrix(d, d, s, rng);
    k.wo = detail::gaussian_matrix(d, d, s, rng);
    k.ln2_gain = Matrix(1, d, 1.0);
    k.ln2_bias = Matrix(1, d);
    k.ff_in = detail::gaussian_matrix(d, 4 * d, s, rng);
    k.ff_in_bias = Matrix(1, 4 * d);
    k.ff_out = detail::gaussian_matrix(4 * d, d, s, rng);
    k.ff_out_bias = Matrix(1, d);
    p.blocks.push_back(std::move(k));
  }
  p.final_gain = Matrix(1, d, 1.0);
  p.final_bias = Matrix(1, d);
  return p;
}

struct EncodeOptions {
  bool causal = true;
  bool pad_mask = false;
};

inline constexpr double kLayerNormEps = 1e-5;

namespace detail {

struct LayerNormTrace {
  Matrix normalized;             // x-hat
  std::vector<double> inv_std;   // per row
};

inline Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias,
                         LayerNormTrace* trace) {
  const std::size_t n = x.cols();
  Matrix y(x.rows(), n);
  if (trace) {
    trace->normalized = Matrix(x.rows(), n);
    trace->inv_std.assign(x.rows(), 0.0);
  }
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto row = x.row(i);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < n; ++j) {
      const double xh = (row[j] - mean) * inv;
      y(i, j) = gain[j] * xh + bias[j];
      if (trace) trace->normalized(i, j) = xh;
    }
    if (trace) trace->inv_std[i] = inv;
  }
  return y;
}

// Returns dL/dx and accumulates dL/dgain, dL/dbias.
inline Matrix layer_norm_backward(const LayerNormTrace& t, const Matrix& gain, const Matrix& dy,
                                  Matrix& dgain, Matrix& dbias) {
  const std::size_t n = dy.cols();
  Matrix dx(dy.rows(), n);
  std::vector<double> dxh(n);
  for (std::size_t i = 0; i < dy.rows(); ++i) {
    double mean_dxh = 0.0;
    double mean_dxh_xh = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double xh = t.normalized(i, j);
      dgain[j] += dy(i, j) * xh;
      dbias[j] += dy(i, j);
      dxh[j] = dy(i, j) * gain[j];
      mean_dxh += dxh[j];
      mean_dxh_xh += dxh[j] * xh;
    }
    mean_dxh /= static_cast<double>(n);
    mean_dxh_xh /= static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j)
      dx(i, j) = t.inv_std[i] * (dxh[j] - mean_dxh - t.normalized(i, j) * mean_dxh_xh);
  }
  return dx;
}

inline void add_row_bias(Matrix& x, const Matrix& bias) {
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) += bias[j];
}

// allowed(i, j): may query i attend to key j.
inline std::vector<std::vector<char>> attention_pattern(const TokenSeq& tokens,
                                                        const EncodeOptions& opt) {
  const std::size_t L = tokens.length();
  std::vector<std::vector<char>> allowed(L, std::vector<char>(L, 1));
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = 0; j < L; ++j) {
      if (opt.causal && j > i) allowed[i][j] = 0;
      if (opt.pad_mask && tokens.is_pad(j)) allowed[i][j] = 0;
    }
  }
  return allowed;
}

struct BlockTrace {
  Matrix input;
  LayerNormTrace ln1;
  Matrix a1;                      // ln1 output
  Matrix q, k, v;                 // L x D
  std::vector<Matrix> probs;      // per head, L x L (0 where masked)
  Matrix attn;                    // concatenated head outputs, L x D
  Matrix mid;                     // after attention residual
  LayerNormTrace ln2;
  Matrix a2;                      // ln2 output
  Matrix hidden_pre;              // L x 4D
  Matrix hidden;                  // relu(hidden_pre)
};

}  // namespace detail

struct EncoderTrace {
  TokenSeq tokens;
  EncodeOptions options;
  std::vector<detail::BlockTrace> blocks;
  Matrix pre_final;
  detail::LayerNormTrace final_ln;
};

namespace detail {

inline Matrix block_forward(const EncoderBlock& k, std::size_t heads, const Matrix& x,
                            const std::vector<std::vector<char>>& allowed, BlockTrace* trace) {
  const std::size_t L = x.rows();
  const std::size_t D = x.cols();
  const std::size_t dh = D / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  LayerNormTrace ln1;
  Matrix a1 = layer_norm(x, k.ln1_gain, k.ln1_bias, trace ? &ln1 : nullptr);
  Matrix q = matmul(a1, k.wq);
  Matrix kk = matmul(a1, k.wk);
  Matrix v = matmul(a1, k.wv);

  Matrix attn(L, D);
  std::vector<Matrix> probs;
  std::vector<double> scores(L);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    Matrix p(L, L);
    for (std::size_t i = 0; i < L; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < L; ++j) {
        if (!allowed[i][j]) continue;
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += q(i, off + c) * kk(j, off + c);
        scores[j] = s * scale;
        mx = std::max(mx, scores[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < L; ++j) {
        if (!allowed[i][j]) continue;
        p(i, j) = std::exp(scores[j] - mx);
        z += p(i, j);
      }
      for (std::size_t j = 0; j < L; ++j) {
        if (!allowed[i][j]) continue;
        p(i, j) /= z;
        const double pij = p(i, j);
        for (std::size_t c = 0; c < dh; ++c) attn(i, off + c) += pij * v(j, off + c);
      }
    }
    if (trace) probs.push_back(std::move(p));
  }

  Matrix mid = x + matmul(attn, k.wo);
  LayerNormTrace ln2;
  Matrix a2 = layer_norm(mid, k.ln2_gain, k.ln2_bias, trace ? &ln2 : nullptr);
  Matrix hidden_pre = matmul(a2, k.ff_in);
  add_row_bias(hidden_pre, k.ff_in_bias);
  Matrix hidden = hidden_pre;
  for (double& val : hidden.values()) val = std::max(val, 0.0);
  Matrix ff = matmul(hidden, k.ff_out);
  add_row_bias(ff, k.ff_out_bias);
  Matrix out = mid + ff;

  if (trace) {
    trace->input = x;
    trace->ln1 = std::move(ln1);
    trace->a1 = std::move(a1);
    trace->q = std::move(q);
    trace->k = std::move(kk);
    trace->v = std::move(v);
    trace->probs = std::move(probs);
    trace->attn = std::move(attn);
    trace->mid = std::move(mid);
    trace->ln2 = std::move(ln2);
    trace->a2 = std::move(a2);
    trace->hidden_pre = std::move(hidden_pre);
    trace->hidden = std::move(hidden);
  }
  return out;
}

// Returns dL/dx for the block input and accumulates parameter gradients.
inline Matrix block_backward(const EncoderBlock& k, std::size_t heads, const BlockTrace& t,
                             const Matrix& dout, EncoderBlock& g) {
  const std::size_t L = dout.rows();
  const std::size_t D = dout.cols();
  const std::size_t dh = D / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // Feed-forward branch.
  g.ff_out += matmul_tn(t.hidden, dout);
  g.ff_out_bias += column_sums(dout);
  Matrix dhidden = matmul_nt(dout, k.ff_out);
  for (std::size_t i = 0; i < dhidden.size(); ++i)
    if (t.hidden_pre[i] <= 0.0) dhidden[i] = 0.0;
  g.ff_in += matmul_tn(t.a2, dhidden);
  g.ff_in_bias += column_sums(dhidden);
  Matrix da2 = matmul_nt(dhidden, k.ff_in);
  Matrix dmid = dout + layer_norm_backward(t.ln2, k.ln2_gain, da2, g.ln2_gain, g.ln2_bias);

  // Attention branch.
  g.wo += matmul_tn(t.attn, dmid);
  Matrix dattn = matmul_nt(dmid, k.wo);
  Matrix dq(L, D), dk(L, D), dv(L, D);
  std::vector<double> dp(L);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    const Matrix& p = t.probs[h];
    for (std::size_t i = 0; i < L; ++i) {
      double weighted = 0.0;
      for (std::size_t j = 0; j < L; ++j) {
        const double pij = p(i, j);
        if (pij == 0.0) {
          dp[j] = 0.0;
          continue;
        }
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) {
          s += dattn(i, off + c) * t.v(j, off + c);
          dv(j, off + c) += pij * dattn(i, off + c);
        }
        dp[j] = s;
        weighted += pij * s;
      }
      for (std::size_t j = 0; j < L; ++j) {
        const double pij = p(i, j);
        if (pij == 0.0) continue;
        const double ds = pij * (dp[j] - weighted) * scale;
        for (std::size_t c = 0; c < dh; ++c) {
          dq(i, off + c) += ds * t.k(j, off + c);
          dk(j, off + c) += ds * t.q(i, off + c);
        }
      }
    }
  }
  g.wq += matmul_tn(t.a1, dq);
  g.wk += matmul_tn(t.a1, dk);
  g.wv += matmul_tn(t.a1, dv);
  Matrix da1 = matmul_nt(dq, k.wq);
  da1 += matmul_nt(dk, k.wk);
  da1 += matmul_nt(dv, k.wv);
  return dmid + layer_norm_backward(t.ln1, k.ln1_gain, da1, g.ln1_gain, g.ln1_bias);
}

}  // namespace detail

inline TextEmbedding encode(const EncoderParams& params, const TokenSeq& tokens,
                            const EncodeOptions& opt = {}, EncoderTrace* trace = nullptr) {
  const std::size_t L = tokens.length();
  const std::size_t D = params.dim();
  if (L > params.max_len())
    throw ArgumentError("encode: sequence length " + std::to_string(L) + " exceeds positional table " +
                        std::to_string(params.max_len()));
  if (L < 2 || tokens.semantic_len < 2 || tokens.semantic_len > L)
    throw ArgumentError("encode: malformed token sequence");

  Matrix x(L, D);
  for (std::size_t i = 0; i < L; ++i) {
    const auto id = static_cast<std::size_t>(tokens.ids[i]);
    if (id >= params.token_embedding.rows()) throw ArgumentError("encode: token id out of range");
    for (std::size_t j = 0; j < D; ++j)
      x(i, j) = params.token_embedding(id, j) + params.positional_embedding(i, j);
  }

  const auto allowed = detail::attention_pattern(tokens, opt);
  if (trace) {
    trace->tokens = tokens;
    trace->options = opt;
    trace->blocks.assign(params.blocks.size(), {});
  }
  for (std::size_t b = 0; b < params.blocks.size(); ++b)
    x = detail::block_forward(params.blocks[b], params.heads, x, allowed,
                              trace ? &trace->blocks[b] : nullptr);

  TextEmbedding e;
  e.semantic_len = tokens.semantic_len;
  e.data = detail::layer_norm(x, params.final_gain, params.final_bias,
                              trace ? &trace->final_ln : nullptr);
  if (trace) trace->pre_final = std::move(x);
  return e;
}

// Accumulates dL/dparams into `grads` given dL/d(output embedding).
inline void encode_backward(const EncoderParams& params, const EncoderTrace& trace,
                            const Matrix& d_embedding, EncoderParams& grads) {
  Matrix dx = detail::layer_norm_backward(trace.final_ln, params.final_gain, d_embedding,
                                          grads.final_gain, grads.final_bias);
  for (std::size_t b = params.blocks.size(); b-- > 0;)
    dx = detail::block_backward(params.blocks[b], params.heads, trace.blocks[b], dx,
                                grads.blocks[b]);
  const std::size_t D = params.dim();
  for (std::size_t i = 0; i < trace.tokens.length(); ++i) {
    const auto id = static_cast<std::size_t>(trace.tokens.ids[i]);
    for (std::size_t j = 0; j < D; ++j) {
      grads.token_embedding(id, j) += dx(i, j);
      grads.positional_embedding(i, j) += dx(i, j);
    }
  }
}

}  // namespace embedlab

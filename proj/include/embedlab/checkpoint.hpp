#pragma once

// Binary checkpoint:
//   "EMB1", u32 tensor count, then per tensor
//   u32 name length, name bytes, u32 ndim, u32 dims[ndim], f64 data (row-major).
// All integers and doubles little-endian. Model files carry the parameters
// plus "meta.*" tensors for the head count, the beta schedule and the encoder
// mask options.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "embedlab/errors.hpp"
#include "embedlab/matrix.hpp"
#include "embedlab/model.hpp"

namespace embedlab {

inline constexpr char kCheckpointMagic[4] = {'E', 'M', 'B', '1'};

struct StoredTensor {
  std::vector<std::uint32_t> dims;
  std::vector<double> data;

  Matrix as_matrix() const {
    if (dims.size() == 1) return Matrix(1, dims[0], data);
    if (dims.size() == 2) return Matrix(dims[0], dims[1], data);
    throw ConfigError("checkpoint: tensor rank " + std::to_string(dims.size()) + " is not 1 or 2");
  }
};

using TensorMap = std::map<std::string, StoredTensor>;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 4);
}

inline void put_f64(std::ostream& os, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 8);
}

inline void read_exact(std::istream& is, char* buf, std::size_t n) {
  if (!is.read(buf, static_cast<std::streamsize>(n))) throw ConfigError("checkpoint: truncated file");
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  read_exact(is, reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline double get_f64(std::istream& is) {
  unsigned char b[8];
  read_exact(is, reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return std::bit_cast<double>(v);
}

}  // namespace detail

// Tensors are written in the map's (sorted) name order.
inline void write_tensors(std::ostream& os, const TensorMap& tensors) {
  os.write(kCheckpointMagic, 4);
  detail::put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) detail::put_u32(os, d);
    for (double v : t.data) detail::put_f64(os, v);
  }
  if (!os) throw ConfigError("checkpoint: write failed");
}

inline TensorMap read_tensors(std::istream& is) {
  char magic[4];
  detail::read_exact(is, magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw ConfigError("checkpoint: bad magic");
  const std::uint32_t count = detail::get_u32(is);
  TensorMap out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = detail::get_u32(is);
    if (len > 4096) throw ConfigError("checkpoint: implausible name length");
    std::string name(len, '\0');
    detail::read_exact(is, name.data(), len);
    StoredTensor t;
    const std::uint32_t ndim = detail::get_u32(is);
    if (ndim > 8) throw ConfigError("checkpoint: implausible rank for '" + name + "'");
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      t.dims.push_back(detail::get_u32(is));
      n *= t.dims.back();
    }
    if (n > (1u << 28)) throw ConfigError("checkpoint: tensor '" + name + "' too large");
    t.data.resize(n);
    for (auto& v : t.data) v = detail::get_f64(is);
    if (!out.emplace(name, std::move(t)).second)
      throw ConfigError("checkpoint: duplicate tensor '" + name + "'");
  }
  return out;
}

inline StoredTensor stored(const Matrix& m) {
  StoredTensor t;
  t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.data.assign(m.values().begin(), m.values().end());
  return t;
}

inline TensorMap model_tensors(const Model& m) {
  TensorMap out;
  for (const auto& t : tensors(m.params)) out.emplace(t.name, stored(*t.tensor));
  out["meta.heads"] = {{1}, {static_cast<double>(m.params.encoder.heads)}};
  std::vector<double> betas;
  for (int t = 1; t <= m.schedule.steps(); ++t) betas.push_back(1.0 - m.schedule.alpha(t));
  out["meta.betas"] = {{static_cast<std::uint32_t>(betas.size())}, betas};
  out["meta.encode"] = {{2},
                        {m.encode_options.causal ? 1.0 : 0.0, m.encode_options.pad_mask ? 1.0 : 0.0}};
  return out;
}

namespace detail {

inline const StoredTensor& require(const TensorMap& map, const std::string& name) {
  auto it = map.find(name);
  if (it == map.end()) throw ConfigError("checkpoint: missing tensor '" + name + "'");
  return it->second;
}

}  // namespace detail

// Rebuilds a model for `world` from a tensor map; shapes come from the file.
inline Model model_from_tensors(const TensorMap& map, const WorldSpec& world) {
  Model m;
  m.world = world;
  m.vocab = world_vocabulary(world);
  std::size_t blocks = 0;
  while (map.count("encoder.block" + std::to_string(blocks) + ".wq")) ++blocks;
  m.params.encoder.blocks.resize(blocks);
  m.params.encoder.heads = static_cast<std::size_t>(detail::require(map, "meta.heads").data.at(0));
  for (auto& t : tensors(m.params)) *t.tensor = detail::require(map, t.name).as_matrix();

  if (m.params.encoder.token_embedding.rows() != m.vocab.size())
    throw ConfigError("checkpoint: vocabulary size " +
                      std::to_string(m.params.encoder.token_embedding.rows()) + " does not match world (" +
                      std::to_string(m.vocab.size()) + ")");
  const std::size_t D = m.params.encoder.dim();
  if (m.params.encoder.heads == 0 || D % m.params.encoder.heads != 0)
    throw ConfigError("checkpoint: head count does not divide the embedding width");
  if (m.params.denoiser.embed_dim() != D)
    throw ConfigError("checkpoint: denoiser key width does not match the encoder");

  std::vector<double> alphas;
  for (double b : detail::require(map, "meta.betas").data) alphas.push_back(1.0 - b);
  m.schedule = Schedule(alphas);
  const auto& enc = detail::require(map, "meta.encode").data;
  if (enc.size() != 2) throw ConfigError("checkpoint: meta.encode must hold two flags");
  m.encode_options = {enc[0] != 0.0, enc[1] != 0.0};
  for (const auto& t : tensors(m.params))
    if (!t.tensor->all_finite()) throw ConfigError("checkpoint: tensor '" + t.name + "' is not finite");
  return m;
}

inline void save_model(const std::string& path, const Model& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open '" + path + "' for writing");
  write_tensors(os, model_tensors(m));
}

inline Model load_model(const std::string& path, const WorldSpec& world) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint '" + path + "'");
  return model_from_tensors(read_tensors(is), world);
}

}  // namespace embedlab

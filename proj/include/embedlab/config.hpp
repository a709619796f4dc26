#pragma once

// Run configuration: flat `key=value` lines, `#` starts a comment, unknown
// keys are rejected. Command-line flags are applied on top of the file.

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "embedlab/errors.hpp"
#include "embedlab/model.hpp"
#include "embedlab/training.hpp"

#ifndef EMBEDLAB_VERSION
#define EMBEDLAB_VERSION "v0.1.0"
#endif

namespace embedlab {

inline constexpr std::string_view kVersion = EMBEDLAB_VERSION;

struct RunConfig {
  std::uint64_t data_seed = 7;
  std::size_t data_samples = 4096;
  std::uint64_t init_seed = 1;
  std::size_t max_len = 16;   // L
  std::size_t dim = 32;       // D
  std::size_t blocks = 2;
  std::size_t heads = 2;
  std::size_t hidden = 64;    // d_h
  std::size_t attn = 32;      // d_a
  int steps = 100;            // T
  double beta_start = 1e-4;
  double beta_end = 0.02;
  long train_steps = 20000;
  std::size_t batch = 64;
  double lr = 1e-3;
  std::uint64_t train_seed = 1;
  double gamma = 1.0;
  int opt_steps = 150;
  double opt_lr = 0.5;
  double fd_step = 1e-3;
  std::string out = "out";
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end)
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

template <class Fn>
void for_each_field(RunConfig& c, Fn&& fn) {
  fn("data_seed", c.data_seed);
  fn("data_samples", c.data_samples);
  fn("init_seed", c.init_seed);
  fn("max_len", c.max_len);
  fn("dim", c.dim);
  fn("blocks", c.blocks);
  fn("heads", c.heads);
  fn("hidden", c.hidden);
  fn("attn", c.attn);
  fn("steps", c.steps);
  fn("beta_start", c.beta_start);
  fn("beta_end", c.beta_end);
  fn("train_steps", c.train_steps);
  fn("batch", c.batch);
  fn("lr", c.lr);
  fn("train_seed", c.train_seed);
  fn("gamma", c.gamma);
  fn("opt_steps", c.opt_steps);
  fn("opt_lr", c.opt_lr);
  fn("fd_step", c.fd_step);
  fn("out", c.out);
}

template <class T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_floating_point_v<T>) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  } else {
    return std::to_string(v);
  }
}

}  // namespace detail

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  bool found = false;
  detail::for_each_field(c, [&](std::string_view name, auto& field) {
    if (name != key) return;
    found = true;
    using T = std::decay_t<decltype(field)>;
    if constexpr (std::is_same_v<T, std::string>) {
      field = value;
    } else {
      field = detail::parse_number<T>(key, value);
    }
  });
  if (!found) throw ConfigError("config: unknown key '" + key + "'");
}

inline void validate(const RunConfig& c) {
  if (c.max_len < 3) throw ConfigError("config: max_len must be >= 3");
  if (c.dim == 0 || c.heads == 0 || c.dim % c.heads != 0)
    throw ConfigError("config: heads must divide dim");
  if (c.blocks == 0 || c.hidden == 0 || c.attn == 0) throw ConfigError("config: sizes must be positive");
  if (c.steps < 1) throw ConfigError("config: steps must be >= 1");
  if (!(c.beta_start > 0.0 && c.beta_start <= c.beta_end && c.beta_end < 1.0))
    throw ConfigError("config: need 0 < beta_start <= beta_end < 1");
  if (c.train_steps < 0 || c.batch == 0) throw ConfigError("config: bad training sizes");
  if (!(c.lr > 0.0) || !(c.opt_lr > 0.0) || !(c.fd_step > 0.0))
    throw ConfigError("config: learning rates and fd_step must be positive");
  if (c.gamma < 0.0) throw ConfigError("config: gamma must be >= 0");
  if (c.data_samples == 0) throw ConfigError("config: data_samples must be positive");
  if (c.out.empty()) throw ConfigError("config: out must not be empty");
}

inline void parse_config(std::istream& is, RunConfig& c) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    set_config_value(c, detail::trim(std::string_view(t).substr(0, eq)),
                     detail::trim(std::string_view(t).substr(eq + 1)));
  }
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config '" + path + "'");
  RunConfig c;
  parse_config(is, c);
  return c;
}

// Canonical `key=value` listing in field order.
inline std::string config_text(const RunConfig& c) {
  std::string out;
  RunConfig copy = c;
  detail::for_each_field(copy, [&](std::string_view name, auto& field) {
    out += std::string(name) + "=" + detail::format_value(field) + "\n";
  });
  return out;
}

// 64-bit FNV-1a of the canonical listing.
inline std::uint64_t config_hash(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : config_text(c)) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

// EMBEDLAB_OUT replaces the configured directory unless `explicit_out` is set.
inline std::filesystem::path output_dir(const RunConfig& c, bool explicit_out) {
  if (!explicit_out)
    if (const char* env = std::getenv("EMBEDLAB_OUT"); env && *env) return env;
  return c.out;
}

inline ModelConfig model_config(const RunConfig& c) {
  ModelConfig m;
  m.encoder.max_len = c.max_len;
  m.encoder.dim = c.dim;
  m.encoder.blocks = c.blocks;
  m.encoder.heads = c.heads;
  m.denoiser.hidden = c.hidden;
  m.denoiser.attn = c.attn;
  m.denoiser.embed_dim = c.dim;
  m.steps = c.steps;
  m.beta_start = c.beta_start;
  m.beta_end = c.beta_end;
  return m;
}

inline TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.steps = c.train_steps;
  t.batch = c.batch;
  t.adam.lr = c.lr;
  t.seed = c.train_seed;
  return t;
}

inline void write_manifest(const std::filesystem::path& dir, std::string_view command,
                           const RunConfig& c) {
  std::ofstream os(dir / "manifest.txt");
  if (!os) throw ConfigError("cannot write manifest in '" + dir.string() + "'");
  char hash[20];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(c)));
  os << "command=" << command << "\nversion=" << kVersion << "\nconfig_hash=" << hash << '\n'
     << config_text(c);
}

}  // namespace embedlab

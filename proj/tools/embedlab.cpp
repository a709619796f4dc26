// embedlab: experiment runner for the toy text-embedding editing lab.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "embedlab/embedlab.hpp"
#include "embedlab/testing/suites.hpp"

namespace fs = std::filesystem;
using namespace embedlab;

namespace {

enum Exit { kOk = 0, kUsage = 1, kConfig = 2, kNumeric = 3, kVerify = 4 };

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::string model_path;
  std::uint64_t seed = 0;
  std::size_t seeds = 1;
};

void add_common(CLI::App* sub, Common& c, bool needs_model, bool has_seeds) {
  sub->add_option("--config", c.config_path, "key=value config file");
  sub->add_option("--set", c.overrides, "override one config key (key=value); repeatable");
  sub->add_option("--out", c.out, "output directory (takes precedence over EMBEDLAB_OUT)");
  if (needs_model) sub->add_option("--model", c.model_path, "checkpoint (default <out>/model.bin)");
  if (has_seeds) {
    sub->add_option("--seed", c.seed, "first generation seed")->capture_default_str();
    sub->add_option("--seeds", c.seeds, "number of consecutive seeds")->capture_default_str();
  }
}

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  if (!c.out.empty()) cfg.out = c.out;
  validate(cfg);
  return cfg;
}

fs::path prepare_out(const Common& c, const RunConfig& cfg, std::string_view command) {
  const fs::path dir = output_dir(cfg, !c.out.empty());
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());
  write_manifest(dir, command, cfg);
  return dir;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw ConfigError("cannot write '" + p.string() + "'");
  return os;
}

Model require_model(const Common& c, const fs::path& dir) {
  const fs::path p = c.model_path.empty() ? dir / "model.bin" : fs::path(c.model_path);
  if (!fs::exists(p)) throw ConfigError("no checkpoint at '" + p.string() + "'; run `embedlab train` first");
  return load_model(p.string(), default_world());
}

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// "5" or "5-7", 1-based inclusive -> 0-based half-open.
std::pair<std::size_t, std::size_t> parse_span(const std::string& s, std::size_t L) {
  std::size_t a = 0, b = 0;
  try {
    const auto dash = s.find('-');
    a = std::stoul(s.substr(0, dash));
    b = dash == std::string::npos ? a : std::stoul(s.substr(dash + 1));
  } catch (const std::exception&) {
    throw ArgumentError("bad mask '" + s + "': expected i or i-j (1-based)");
  }
  if (a < 1 || b < a || b > L)
    throw ArgumentError("mask '" + s + "' outside 1.." + std::to_string(L));
  return {a - 1, b};
}

std::vector<std::size_t> parse_positions(const std::string& s, std::size_t L) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto [a, b] = parse_span(detail::trim(item), L);
    for (std::size_t i = a; i < b; ++i) out.push_back(i);
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ArgumentError("bad number '" + item + "'");
    }
  }
  return out;
}

// Wilson score interval, 95%.
std::pair<double, double> wilson(std::size_t k, std::size_t n) {
  if (n == 0) return {0.0, 1.0};
  const double z = 1.959963984540054;
  const double p = static_cast<double>(k) / n;
  const double d = 1 + z * z / n;
  const double c = (p + z * z / (2.0 * n)) / d;
  const double h = z * std::sqrt(p * (1 - p) / n + z * z / (4.0 * n * n)) / d;
  return {std::max(0.0, c - h), std::min(1.0, c + h)};
}

void write_pgm_file(const fs::path& p, const std::vector<Matrix>& images) {
  auto os = open_out(p);
  write_pgm(os, images);
}

// ------------------------------------------------------------------ commands

int cmd_gen_data(const Common& c) {
  const RunConfig cfg = resolve_config(c);
  const fs::path dir = prepare_out(c, cfg, "gen-data");
  const WorldSpec w = default_world();
  CounterRng rng(cfg.data_seed, 1);
  const auto data = generate_dataset(w, cfg.data_samples, rng);
  auto os = open_out(dir / "dataset.csv");
  write_dataset_csv(os, w, data);
  std::cout << "wrote " << data.size() << " samples to " << (dir / "dataset.csv").string() << '\n';
  return kOk;
}

int cmd_train(const Common& c, std::size_t eval_seeds) {
  const RunConfig cfg = resolve_config(c);
  const fs::path dir = prepare_out(c, cfg, "train");
  const WorldSpec w = default_world();
  const Vocabulary vocab = world_vocabulary(w);
  CounterRng rng(cfg.data_seed, 1);
  const auto data = generate_dataset(w, cfg.data_samples, rng);
  const ModelConfig mc = model_config(cfg);
  const Schedule sched = make_schedule(mc.steps, mc.beta_start, mc.beta_end);
  TrainConfig tc = train_config(cfg);
  const long report = std::max(1L, tc.steps / 20);
  const TrainResult res = train(vocab, data, init_joint(mc, vocab.size(), cfg.init_seed), sched, tc,
                                {true, false}, [&](const LogEntry& e) {
                                  if (e.step % report == 0)
                                    std::cout << "step " << e.step << " loss " << g17(e.loss) << '\n'
                                              << std::flush;
                                });
  Model m{w, vocab, res.params, sched};
  save_model((dir / "model.bin").string(), m);
  {
    auto os = open_out(dir / "train_log.csv");
    os << "step,loss\n";
    for (const auto& e : res.log) os << e.step << ',' << g17(e.loss) << '\n';
  }
  std::cout << "final_loss " << g17(res.final_loss) << '\n';
  if (eval_seeds > 0) {
    auto os = open_out(dir / "accuracy.csv");
    os << "prompt,seeds,accuracy,mean_style\n";
    for (std::size_t k = 0; k < w.classes.size(); ++k)
      for (std::size_t s = 0; s < w.styles.size(); ++s) {
        const std::string text = make_prompt(w, k, s);
        const TextEmbedding e = m.embed(text);
        std::size_t hit = 0;
        double style = 0.0;
        for (std::size_t seed = 0; seed < eval_seeds; ++seed) {
          const Matrix x = generate(m, e, seed);
          hit += oracle_classify(w, x).class_index == k;
          style += oracle_style(w, x, k);
        }
        const double acc = static_cast<double>(hit) / eval_seeds;
        os << text << ',' << eval_seeds << ',' << g17(acc) << ',' << g17(style / eval_seeds) << '\n';
        std::cout << text << ": accuracy " << acc << '\n';
      }
  }
  return kOk;
}

int cmd_sample(const Common& c, const std::string& prompt, const std::string& sampler) {
  const RunConfig cfg = resolve_config(c);
  const fs::path dir = prepare_out(c, cfg, "sample");
  const Model m = require_model(c, dir);
  const TextEmbedding e = m.embed(prompt);
  const SamplerMode mode = sampler == "ddpm" ? SamplerMode::kDdpm : SamplerMode::kDdim;
  auto os = open_out(dir / "samples.csv");
  os << "seed,class,style";
  for (std::size_t i = 0; i < kImageDim; ++i) os << ",x0_" << i;
  os << '\n';
  std::vector<Matrix> images;
  for (std::size_t i = 0; i < c.seeds; ++i) {
    const std::uint64_t seed = c.seed + i;
    CounterRng rng(seed, 0xD0D0ull);
    const Matrix x = generate(m, e, AttnMask::all(e.length()), initial_noise(seed), mode, &rng);
    const auto cls = oracle_classify(m.world, x);
    os << seed << ',' << m.world.classes[cls.class_index].name << ','
       << g17(oracle_style(m.world, x, cls.class_index));
    for (double v : x.values()) os << ',' << g17(v);
    os << '\n';
    images.push_back(x);
  }
  write_pgm_file(dir / "samples.pgm", images);
  return kOk;
}

struct EditFlags {
  std::string recipe = "swap";
  std::string from, to;
  std::string positions;
  std::string mask;
  std::string lambda;
  double weight = 0.5;
  double scale = 1.0;
  std::string mask_mode = "exclude";
  std::string boundary = "after-eos";
};

void add_edit_flags(CLI::App* sub, EditFlags& f, bool need_from) {
  auto* from = sub->add_option("--from", f.from, "source prompt");
  if (need_from) from->required();
  sub->add_option("--to", f.to, "target prompt (defaults to the source)");
  sub->add_option("--recipe", f.recipe, "swap|soft_swap|scale|style|soft_mix|mask")->capture_default_str();
  sub->add_option("--positions", f.positions,
                  "rows for swap/soft_swap/scale, 1-based, e.g. 5 or 5-6 or 2,5 (default: differing tokens)");
  sub->add_option("--mask", f.mask, "masked rows for the mask recipe, 1-based inclusive i-j (M_i-j)");
  sub->add_option("--lambda", f.lambda, "soft_mix weights, comma separated, one per row");
  sub->add_option("--weight", f.weight, "soft_swap weight on the source")->capture_default_str();
  sub->add_option("--scale", f.scale, "scale factor c")->capture_default_str();
  sub->add_option("--mask-mode", f.mask_mode, "exclude|zero")
      ->check(CLI::IsMember({"exclude", "zero"}))->capture_default_str();
  sub->add_option("--style-boundary", f.boundary, "after-eos|at-eos")
      ->check(CLI::IsMember({"after-eos", "at-eos"}))->capture_default_str();
}

EditRecipe build_recipe(const EditFlags& f, std::size_t L) {
  EditRecipe r;
  r.kind = parse_edit_kind(f.recipe);
  if (!f.positions.empty()) r.positions = parse_positions(f.positions, L);
  r.weight = f.weight;
  r.scale = f.scale;
  r.mask_mode = f.mask_mode == "zero" ? MaskMode::kZero : MaskMode::kExclude;
  r.boundary = f.boundary == "at-eos" ? StyleBoundary::kAtEos : StyleBoundary::kAfterEos;
  if (r.kind == EditKind::kMask) {
    if (f.mask.empty()) throw ArgumentError("mask recipe needs --mask");
    std::tie(r.mask_first, r.mask_last) = parse_span(f.mask, L);
  }
  if (r.kind == EditKind::kSoftMix) {
    if (f.lambda.empty()) throw ArgumentError("soft_mix recipe needs --lambda");
    r.lambda = parse_doubles(f.lambda);
  }
  return r;
}

int cmd_edit(const Common& c, const EditFlags& f) {
  const RunConfig cfg = resolve_config(c);
  const fs::path dir = prepare_out(c, cfg, "edit");
  const Model m = require_model(c, dir);
  const std::string to = f.to.empty() ? f.from : f.to;
  const EditRecipe r = build_recipe(f, m.max_len());
  std::vector<EditReportRow> rows;
  std::vector<Matrix> images;
  for (std::size_t i = 0; i < c.seeds; ++i) {
    const std::uint64_t seed = c.seed + i;
    const EditOutcome out = run_edit(m, f.from, to, r, seed);
    rows.push_back({seed, f.recipe, out.metrics});
    images.push_back(out.image_src);
    images.push_back(out.image_star);
  }
  auto os = open_out(dir / "edit.csv");
  write_edit_report(os, m.world, rows);
  write_pgm_file(dir / "edit.pgm", images);
  std::size_t changed = 0;
  for (const auto& row : rows) changed += row.metrics.class_star != row.metrics.class_src;
  std::cout << "edited " << rows.size() << " seeds; class changed on " << changed << '\n';
  return kOk;
}

int cmd_mask_sweep(const Common& c, const std::string& prompt, const std::string& mode) {
  const RunConfig cfg = resolve_config(c);
  const fs::path dir = prepare_out(c, cfg, "mask-sweep");
  const Model m = require_model(c, dir);
  const TokenSeq tok = m.tokens(prompt);
  const TextEmbedding e = m.embed(prompt);
  const std::size_t L = e.length();
  const std::size_t sl = tok.semantic_len;
  const MaskMode mm = mode == "zero" ? MaskMode::kZero : MaskMode::kExclude;

  struct Span {
    std::string family;
    std::size_t first, last;  // 0-based half-open
  };
  std::vector<Span> spans;
  for (std::size_t i = 0; i < L; ++i) spans.push_back({"single", i, i + 1});
  for (std::size_t j = 1; j <= L; ++j) spans.push_back({"prefix", 0, j});
  for (std::size_t j = 0; j < L; ++j) spans.push_back({"suffix", j, L});
  spans.push_back({"semantic", 0, sl});
  spans.push_back({"pad_tail", L - (L - sl + 1) / 2, L});

  std::vector<Matrix> base;
  std::vector<std::size_t> base_class;
  for (std::size_t i = 0; i < c.seeds; ++i) {
    base.push_back(generate(m, e, AttnMask::all(L), initial_noise(c.seed + i)));
    base_class.push_back(oracle_classify(m.world, base.back()).class_index);
  }

  auto os = open_out(dir / "mask_sweep.csv");
  os << "family,first,last,seeds,class_match,ci_low,ci_high,mean_style,mean_delta_l2\n";
  std::vector<Matrix> grid{base.front()};
  for (const auto& s : spans) {
    const bool all_masked = s.first == 0 && s.last == L;
    if (all_masked && mm == MaskMode::kExclude) {
      os << s.family << ',' << s.first + 1 << ',' << s.last << ',' << c.seeds << ",,,,,\n";
      continue;
    }
    const AttnMask mask = AttnMask::excluding_range(L, s.first, s.last);
    std::size_t match = 0;
    double style = 0.0, delta = 0.0;
    for (std::size_t i = 0; i < c.seeds; ++i) {
      const Matrix x = generate(m, e, mask, initial_noise(c.seed + i), SamplerMode::kDdim, nullptr, mm);
      const std::size_t k = oracle_classify(m.world, x).class_index;
      match += k == base_class[i];
      style += oracle_style(m.world, x, k);
      delta += frobenius_norm(x - base[i]);
      if (i == 0 && s.family != "semantic" && s.family != "pad_tail") grid.push_back(x);
    }
    const auto [lo, hi] = wilson(match, c.seeds);
    os << s.family << ',' << s.first + 1 << ',' << s.last << ',' << c.seeds << ','
       << g17(static_cast<double>(match) / c.seeds) << ',' << g17(lo) << ',' << g17(hi) << ','
       << g17(style / c.seeds) << ',' << g17(delta / c.seeds) << '\n';
  }
  write_pgm_file(dir / "mask_sweep.pgm", grid);
  std::cout << "swept " << spans.size() << " masks over " << c.seeds << " seeds\n";
  return kOk;
}

int cmd_svd_dirs(const Common& c, const std::string& prompt, const std::string& side, std::size_t top) {
  const RunConfig cfg = resolve_config(c);
  const fs::path dir = prepare_out(c, cfg, "svd-dirs");
  const Model m = require_model(c, dir);
  const TextEmbedding e = m.embed(prompt);
  const SvdFactors f = svd(e.data);
  {
    auto os = open_out(dir / "singular_values.csv");
    os << "k,sigma\n";
    for (std::size_t k = 0; k < f.sigma.size(); ++k) os << k << ',' << g17(f.sigma[k]) << '\n';
  }
  const auto strengths = default_strengths(e.dim());
  auto os = open_out(dir / "svd_dirs.csv");
  std::vector<Matrix> grid;
  bool header = true;
  for (DirectionSide s : {DirectionSide::kRight, DirectionSide::kLeft}) {
    if (side != "both" && to_string(s) != side) continue;
    for (std::size_t k = 0; k < std::min(top, f.sigma.size()); ++k) {
      const SweepReport r = direction_sweep(m, prompt, s, k, strengths, c.seed);
      write_sweep_csv(os, m.world, r, header);
      header = false;
      if (grid.empty()) grid.push_back(r.unedited);
      for (const auto& en : r.entries) grid.push_back(en.image);
    }
  }
  write_pgm_file(dir / "svd_dirs.pgm", grid);
  return kOk;
}

int cmd_opt_lambda(const Common& c, const std::string& from, const std::string& to) {
  const RunConfig cfg = resolve_config(c);
  const fs::path dir = prepare_out(c, cfg, "opt-lambda");
  const Model m = require_model(c, dir);
  const OptContext ctx = make_opt_context(m, from, to, c.seed, cfg.gamma);
  OptConfig oc;
  oc.steps = cfg.opt_steps;
  oc.learning_rate = cfg.opt_lr;
  oc.gamma = cfg.gamma;
  oc.fd_step = cfg.fd_step;
  oc.seed = c.seed;
  const OptResult res = optimize(ctx, oc);
  {
    auto os = open_out(dir / "trajectory.csv");
    write_trajectory_csv(os, res.trajectory);
  }
  const auto lam = res.params.lambda();
  const auto diff = diff_positions(ctx.t_s, ctx.t_t);
  double in = 0.0, other = 0.0;
  std::size_t n_other = 0;
  for (std::size_t i = 0; i < ctx.t_s.semantic_len; ++i) {
    if (std::find(diff.begin(), diff.end(), i) != diff.end()) {
      in += lam[i];
    } else {
      other += lam[i];
      ++n_other;
    }
  }
  in /= std::max<std::size_t>(diff.size(), 1);
  other /= std::max<std::size_t>(n_other, 1);
  {
    auto os = open_out(dir / "lambda.csv");
    os << "row,lambda,differs\n";
    for (std::size_t i = 0; i < lam.size(); ++i)
      os << i + 1 << ',' << g17(lam[i]) << ','
         << (std::find(diff.begin(), diff.end(), i) != diff.end() ? 1 : 0) << '\n';
  }
  const Matrix hard = generate(*ctx.model, mix_swap(ctx.e_s, ctx.e_t, diff), AttnMask::all(lam.size()), ctx.x_T);
  write_pgm_file(dir / "opt_lambda.pgm", {ctx.image_src, hard, render_mix(ctx, lam)});
  std::cout << "loss " << g17(res.trajectory.front().loss) << " -> " << g17(res.trajectory.back().loss)
            << "\nmean lambda at differing rows " << g17(in) << ", other semantic rows " << g17(other)
            << '\n';
  return kOk;
}

int cmd_invert(const Common& c, const std::string& prompt, const EditFlags& f) {
  const RunConfig cfg = resolve_config(c);
  const fs::path dir = prepare_out(c, cfg, "invert");
  const Model m = require_model(c, dir);
  const WorldSpec& w = m.world;
  const auto cls = prompt_class(w, prompt);
  if (!cls) throw ArgumentError("prompt '" + prompt + "' names no class");
  std::optional<std::size_t> style;
  {
    std::istringstream ss(prompt);
    for (std::string word; ss >> word;)
      for (std::size_t k = 0; k < w.styles.size(); ++k)
        if (w.styles[k].name == word) style = k;
  }
  const double brightness = style ? w.styles[*style].brightness : 1.0;
  const std::string to = f.to.empty() ? prompt : f.to;
  EditFlags ef = f;
  ef.from = prompt;
  const EditRecipe r = build_recipe(ef, m.max_len());
  const TokenSeq t_s = m.tokens(prompt), t_t = m.tokens(to);
  const TextEmbedding e_s = m.embed(prompt), e_t = m.embed(to);
  const MixedEmbedding mixed = apply_recipe(r, e_s, e_t, t_s, t_t);

  auto os = open_out(dir / "invert.csv");
  os << "seed,roundtrip_linf,class_real,class_regen,class_edit,style_edit,background_l2\n";
  std::vector<Matrix> grid;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < c.seeds; ++i) {
    const std::uint64_t seed = c.seed + i;
    CounterRng rng(seed, 0x1E7Aull);
    const Sample real = render(w, *cls, brightness, rng);
    const Matrix x_T = invert(m, e_s, real.x0);
    const Matrix regen = generate(m, e_s, AttnMask::all(e_s.length()), x_T);
    const Matrix edited =
        generate(m, mixed.embedding, mixed.mask, x_T, SamplerMode::kDdim, nullptr, r.mask_mode);
    const double linf = max_abs(regen - real.x0);
    ok += linf < 0.05;
    const EditMetrics em = measure_edit(w, real.x0, edited, cls, prompt_class(w, to));
    os << seed << ',' << g17(linf) << ',' << w.classes[oracle_classify(w, real.x0).class_index].name << ','
       << w.classes[oracle_classify(w, regen).class_index].name << ',' << w.classes[em.class_star].name
       << ',' << g17(em.style_star) << ',' << g17(em.background_l2) << '\n';
    grid.insert(grid.end(), {real.x0, regen, edited});
  }
  write_pgm_file(dir / "invert.pgm", grid);
  std::cout << "round trip below 0.05 on " << ok << "/" << c.seeds << " samples\n";
  return kOk;
}

int cmd_verify(const Common& c, bool timings) {
  const RunConfig cfg = resolve_config(c);
  const fs::path dir = prepare_out(c, cfg, "verify");
  std::ostringstream table;
  std::size_t failures = 0, total = 0;
  for (const auto& s : verify::run_all()) {
    table << (s.passed() ? "PASS " : "FAIL ") << s.name << '\n';
    for (const auto& ch : s.checks) {
      table << "  " << (ch.passed ? "ok   " : "FAIL ") << ch.name;
      if (!ch.detail.empty()) table << "  (" << ch.detail << ')';
      table << '\n';
      ++total;
      failures += !ch.passed;
    }
    if (timings) std::cerr << s.name << ": " << s.seconds << " s\n";
  }
  table << total - failures << '/' << total << " checks passed\n";
  std::cout << table.str();
  auto os = open_out(dir / "verify.txt");
  os << table.str();
  return failures == 0 ? kOk : kVerify;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toy text-embedding editing lab: train a tiny text-conditioned diffusion model and probe it."};
  app.require_subcommand(1);
  app.footer(
      "Rows are numbered from 1 on the command line: row 1 is BOS, the prompt words follow, then EOS and\n"
      "PAD. A mask M_i-j (--mask i-j) hides rows i..j inclusive; internally this is [i-1, j).\n"
      "Exit codes: 0 ok, 1 usage, 2 config, 3 numeric/training failure, 4 verification failure.");

  Common common;
  std::size_t eval_seeds = 200;
  std::string prompt, sampler = "ddim", side = "both", mask_mode = "exclude";
  std::size_t top = 3;
  bool timings = false;
  EditFlags ef;

  auto* gen = app.add_subcommand("gen-data", "render the toy dataset to dataset.csv");
  add_common(gen, common, false, false);

  auto* tr = app.add_subcommand("train", "train encoder and denoiser; writes model.bin");
  add_common(tr, common, false, false);
  tr->add_option("--eval-seeds", eval_seeds, "seeds per prompt for the accuracy report (0 = skip)")
      ->capture_default_str();

  auto* smp = app.add_subcommand("sample", "generate images for a prompt");
  add_common(smp, common, true, true);
  smp->add_option("--prompt", prompt, "prompt text")->required();
  smp->add_option("--sampler", sampler, "ddim|ddpm")->check(CLI::IsMember({"ddim", "ddpm"}))->capture_default_str();

  auto* ed = app.add_subcommand("edit", "apply an embedding edit recipe and regenerate");
  add_common(ed, common, true, true);
  add_edit_flags(ed, ef, true);

  auto* ms = app.add_subcommand("mask-sweep", "single, prefix and suffix mask families for one prompt");
  add_common(ms, common, true, true);
  ms->add_option("--prompt", prompt, "prompt text")->required();
  ms->add_option("--mask-mode", mask_mode, "exclude|zero")
      ->check(CLI::IsMember({"exclude", "zero"}))->capture_default_str();

  auto* sd = app.add_subcommand("svd-dirs", "walk the embedding along its singular directions");
  add_common(sd, common, true, true);
  sd->add_option("--prompt", prompt, "prompt text")->required();
  sd->add_option("--side", side, "right|left|both")->check(CLI::IsMember({"right", "left", "both"}))->capture_default_str();
  sd->add_option("--top", top, "directions per side")->capture_default_str();

  auto* ol = app.add_subcommand("opt-lambda", "optimize per-row mixing weights for a swap");
  add_common(ol, common, true, true);
  ol->add_option("--from", ef.from, "source prompt")->required();
  ol->add_option("--to", ef.to, "target prompt")->required();

  auto* inv = app.add_subcommand("invert", "DDIM-invert rendered samples, then edit and regenerate");
  add_common(inv, common, true, true);
  inv->add_option("--prompt", prompt, "prompt describing the rendered sample")->required();
  inv->add_option("--to", ef.to, "target prompt for the edit (defaults to the prompt)");
  inv->add_option("--recipe", ef.recipe, "edit recipe")->capture_default_str();
  inv->add_option("--positions", ef.positions, "rows for swap/scale, 1-based");
  inv->add_option("--mask", ef.mask, "masked rows, 1-based i-j");
  inv->add_option("--scale", ef.scale, "scale factor c")->capture_default_str();
  inv->add_option("--weight", ef.weight, "soft_swap weight on the source")->capture_default_str();

  auto* ver = app.add_subcommand("verify", "run every oracle and invariant suite");
  add_common(ver, common, false, false);
  ver->add_flag("--timings", timings, "print suite timings to stderr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }
  if (common.seeds == 0) {
    std::cerr << "error: --seeds must be positive\n";
    return kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(common);
    if (tr->parsed()) return cmd_train(common, eval_seeds);
    if (smp->parsed()) return cmd_sample(common, prompt, sampler);
    if (ed->parsed()) return cmd_edit(common, ef);
    if (ms->parsed()) return cmd_mask_sweep(common, prompt, mask_mode);
    if (sd->parsed()) return cmd_svd_dirs(common, prompt, side, top);
    if (ol->parsed()) return cmd_opt_lambda(common, ef.from, ef.to);
    if (inv->parsed()) return cmd_invert(common, prompt, ef);
    if (ver->parsed()) return cmd_verify(common, timings);
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  }
  return kUsage;
}

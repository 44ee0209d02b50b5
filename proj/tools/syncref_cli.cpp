// SPDX-License-Identifier: Apache-2.0
//
// syncref: refine, ablate, bench, inspect and oracle-check.
//
// Exit status: 0 success, 1 data or verification failure, 2 usage error.
// Diagnostics go to stderr; data goes to files only (inspect prints its
// summary to stdout).

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "syncref/syncref.hpp"

namespace {

using namespace syncref;
namespace fs = std::filesystem;

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BundleArgs {
  std::string dir;
  std::string captions, text_vlm, image_vlm, text_sent;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--bundle", dir,
                   "Directory holding captions.jsonl, text_vlm.emb, image_vlm.emb and "
                   "text_sent.emb; explicit paths override it");
    cmd.add_option("--captions", captions, "Caption corpus (JSON lines)");
    cmd.add_option("--text-vlm", text_vlm, "Caption embeddings in the joint space");
    cmd.add_option("--image-vlm", image_vlm, "Image embeddings in the joint space");
    cmd.add_option("--text-sent", text_sent, "Caption sentence embeddings");
  }

  BundlePaths resolve() const {
    BundlePaths p;
    if (!dir.empty()) p = synthbench::bench_paths(dir);
    if (!captions.empty()) p.corpus = captions;
    if (!text_vlm.empty()) p.text_vlm = text_vlm;
    if (!image_vlm.empty()) p.image_vlm = image_vlm;
    if (!text_sent.empty()) p.text_sent = text_sent;
    const std::pair<const char*, const fs::path*> required[] = {
        {"--captions", &p.corpus},
        {"--text-vlm", &p.text_vlm},
        {"--image-vlm", &p.image_vlm},
        {"--text-sent", &p.text_sent}};
    for (const auto& [flag, path] : required) {
      if (path->empty()) throw UsageError(std::string(flag) + " is required (or --bundle)");
    }
    return p;
  }
};

struct Logger {
  int verbosity = 1;
  template <typename... Parts>
  void info(const Parts&... parts) const {
    if (verbosity < 1) return;
    std::cerr << "syncref: ";
    (std::cerr << ... << parts);
    std::cerr << '\n';
  }
};

std::size_t default_workers() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

SelectionKind selection_from(const std::string& s) {
  if (auto k = parse_selection_kind(s)) return *k;
  throw UsageError("unknown strategy '" + s + "' (one, t2i, t2t, i2t, i2i)");
}

ScorerKind scorer_from(const std::string& s) {
  if (auto k = parse_scorer_kind(s)) return *k;
  throw UsageError("unknown scorer '" + s + "' (cos, ret)");
}

simkernel::Accumulation accumulation_from(const std::string& s) {
  if (s == "f32") return simkernel::Accumulation::f32;
  if (s == "f64") return simkernel::Accumulation::f64;
  throw UsageError("unknown accumulation '" + s + "' (f32, f64)");
}

double parse_number(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw UsageError("not a number: '" + s + "'");
  return v;
}

// Expands list items: plain values, or "a..b" / "a..b:step" ranges.
std::vector<double> expand_numbers(const std::vector<std::string>& items, double default_step) {
  std::vector<double> out;
  for (const auto& item : items) {
    const auto dots = item.find("..");
    if (dots == std::string::npos) {
      out.push_back(parse_number(item));
      continue;
    }
    const auto colon = item.find(':', dots + 2);
    const double lo = parse_number(item.substr(0, dots));
    const double hi = parse_number(item.substr(dots + 2, colon == std::string::npos
                                                             ? std::string::npos
                                                             : colon - dots - 2));
    const double step =
        colon == std::string::npos ? default_step : parse_number(item.substr(colon + 1));
    if (!(step > 0.0) || !(hi >= lo)) throw UsageError("bad range '" + item + "'");
    const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
    for (std::size_t i = 0; i < count; ++i) {
      // Round to 12 decimals so 0.1 + 2 * 0.1 reads back as 0.3.
      out.push_back(std::round((lo + static_cast<double>(i) * step) * 1e12) / 1e12);
    }
  }
  return out;
}

std::vector<std::size_t> expand_counts(const std::vector<std::string>& items,
                                       const char* flag) {
  std::vector<std::size_t> out;
  for (double v : expand_numbers(items, 1.0)) {
    if (!(v >= 1.0) || v != std::floor(v)) {
      throw UsageError(std::string(flag) + " values must be positive integers");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

void check_tau(double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw UsageError("tau must lie in [0, 1]");
}

DatasetBundle load(const BundleArgs& args, const Logger& log) {
  const auto paths = args.resolve();
  auto bundle = load_bundle(paths);
  log.info("loaded ", bundle.captions(), " captions, ", bundle.images(), " images, d=",
           bundle.text_vlm.dim(), ", d_s=", bundle.text_sent.dim());
  return bundle;
}

// ---------------------------------------------------------------------------

struct RefineArgs {
  BundleArgs bundle;
  std::string out;
  std::string strategy = "t2i";
  std::string scorer = "ret";
  std::size_t k = 15;
  std::size_t k_r = 2;
  double tau = 0.9;
  std::size_t workers = default_workers();
  std::string accumulation = "f32";

  PipelineConfig config() const {
    check_tau(tau);
    PipelineConfig c;
    c.strategy = {selection_from(strategy), k};
    c.scorer = {scorer_from(scorer), 1.0, k_r};
    c.tau = tau;
    c.workers = workers;
    c.accumulation = accumulation_from(accumulation);
    try {
      c.validate();
    } catch (const Error& e) {
      throw UsageError(e.message());
    }
    return c;
  }
};

void add_pipeline_flags(CLI::App& cmd, RefineArgs& a) {
  cmd.add_option("--strategy", a.strategy, "Candidate selection: one, t2i, t2t, i2t, i2i");
  cmd.add_option("--scorer", a.scorer, "Alignment scorer: cos, ret");
  cmd.add_option("-K,--K", a.k, "Candidates per caption");
  cmd.add_option("--kr", a.k_r, "Captions retrieved per image (ret scorer)");
  cmd.add_option("--tau", a.tau, "Fraction of pairs kept, in [0, 1]");
  cmd.add_option("--workers", a.workers, "Worker threads");
  cmd.add_option("--accumulation", a.accumulation,
                 "Retrieval dot-product accumulator: f32, f64");
}

int cmd_refine(const RefineArgs& a, const Logger& log) {
  const auto config = a.config();
  if (a.out.empty()) throw UsageError("--out is required");
  const auto bundle = load(a.bundle, log);
  const auto manifest = refine(bundle, config);
  write_manifest(bundle, manifest, a.out);
  log.info("kept ", manifest.stats.n_kept, " of ", manifest.stats.n_input, " pairs in ",
           format_score(manifest.stats.times.total_ms), " ms -> ", a.out);
  return kOk;
}

// ---------------------------------------------------------------------------

struct AblateArgs {
  BundleArgs bundle;
  std::string out;
  std::vector<std::string> strategies{"t2i"};
  std::vector<std::string> scorers{"ret"};
  std::vector<std::string> k_list{"15"};
  std::vector<std::string> kr_list{"2"};
  std::vector<std::string> tau_list{"0.9"};
  std::size_t workers = default_workers();
  std::string accumulation = "f32";

  std::vector<PipelineConfig> grid() const {
    const auto ks = expand_counts(k_list, "--K-list");
    const auto krs = expand_counts(kr_list, "--kr-list");
    const auto taus = expand_numbers(tau_list, 0.1);
    for (double t : taus) check_tau(t);
    std::vector<PipelineConfig> out;
    for (const auto& s : strategies) {
      for (const auto& f : scorers) {
        for (std::size_t k : ks) {
          for (std::size_t kr : krs) {
            for (double t : taus) {
              PipelineConfig c;
              c.strategy = {selection_from(s), k};
              c.scorer = {scorer_from(f), 1.0, kr};
              c.tau = t;
              c.workers = workers;
              c.accumulation = accumulation_from(accumulation);
              out.push_back(c);
            }
          }
        }
      }
    }
    if (out.empty()) throw UsageError("ablation grid is empty");
    return out;
  }
};

int cmd_ablate(const AblateArgs& a, const Logger& log) {
  const auto grid = a.grid();
  if (a.out.empty()) throw UsageError("--out is required");
  const auto bundle = load(a.bundle, log);
  const auto rows = ablate(bundle, grid);
  write_atomically(a.out, [&](std::ostream& out) { write_ablation_csv(out, rows); });
  log.info("wrote ", rows.size(), " ablation rows -> ", a.out);
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_bench(const synthbench::BenchSpec& spec, const std::string& dir, const Logger& log) {
  if (dir.empty()) throw UsageError("--out-dir is required");
  try {
    spec.validate();
  } catch (const Error& e) {
    throw UsageError(e.message());
  }
  const auto planted = synthbench::generate(spec);
  synthbench::write_bench(planted, dir);
  log.info("wrote planted bundle n=", spec.n, " (", synthbench::corrupted_count(planted),
           " corrupted) -> ", dir);
  return kOk;
}

// ---------------------------------------------------------------------------

nlohmann::json describe_matrix(const EmbeddingMatrix& m) {
  return {{"rows", m.rows()},
          {"dim", m.dim()},
          {"normalized", m.normalized()},
          {"max_norm_deviation", m.max_norm_deviation()}};
}

nlohmann::json describe_file(const fs::path& path) {
  if (path.extension() == ".jsonl") {
    const auto corpus = read_corpus(path);
    return {{"path", path.string()}, {"kind", "corpus"}, {"records", corpus.size()}};
  }
  const auto m = read_matrix(path, ReadOptions{false});
  auto j = describe_matrix(m);
  j["path"] = path.string();
  j["kind"] = "matrix";
  return j;
}

int cmd_inspect(const BundleArgs& bundle_args, const std::vector<std::string>& files,
                const Logger& log) {
  nlohmann::json report;
  if (!files.empty()) {
    report["files"] = nlohmann::json::array();
    for (const auto& f : files) report["files"].push_back(describe_file(f));
  }
  const bool any_bundle_flag = !bundle_args.dir.empty() || !bundle_args.captions.empty() ||
                               !bundle_args.text_vlm.empty() ||
                               !bundle_args.image_vlm.empty() ||
                               !bundle_args.text_sent.empty();
  if (any_bundle_flag) {
    const auto b = load(bundle_args, log);
    report["bundle"] = {{"captions", b.captions()},
                        {"images", b.images()},
                        {"paired", b.paired()},
                        {"text_vlm", describe_matrix(b.text_vlm)},
                        {"image_vlm", describe_matrix(b.image_vlm)},
                        {"text_sent", describe_matrix(b.text_sent)}};
  }
  if (report.is_null()) throw UsageError("nothing to inspect: give files or a bundle");
  std::cout << report.dump(2) << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_oracle_check(const RefineArgs& a, double tolerance, bool inject_fault,
                     const Logger& log) {
  const auto config = a.config();
  const auto bundle = load(a.bundle, log);
  if (bundle.captions() > synthbench::kOracleMaxRows ||
      bundle.images() > synthbench::kOracleMaxRows) {
    throw Error(ErrorKind::size_guard, "oracle-check is limited to " +
                                           std::to_string(synthbench::kOracleMaxRows) +
                                           " rows");
  }
  auto engine = refine(bundle, config);
  if (inject_fault && !engine.entries.empty()) engine.entries.front().score += 1e-3;
  const auto reference = synthbench::oracle_refine(bundle, config);
  const auto diff = synthbench::compare_manifests(engine, reference, tolerance);
  if (!diff.identical) {
    std::cerr << "syncref: oracle mismatch at rank " << diff.first_divergent_rank << ": "
              << diff.detail << '\n';
    return kFailure;
  }
  log.info("oracle agreement on ", engine.entries.size(), " kept and ",
           engine.pruned.size(), " pruned pairs");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dataset refinement for synthetic image-caption pairs"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_version_flag("--version", "syncref 0.1.0");
  Logger log;
  app.add_flag("-q,--quiet", [&](std::int64_t) { log.verbosity = 0; }, "Only report errors");

  RefineArgs refine_args;
  auto* refine_cmd = app.add_subcommand("refine", "Select, score and prune a bundle");
  refine_args.bundle.add_to(*refine_cmd);
  refine_cmd->add_option("--out", refine_args.out,
                         "Manifest path; statistics go to <out>.stats.json");
  add_pipeline_flags(*refine_cmd, refine_args);

  AblateArgs ablate_args;
  auto* ablate_cmd = app.add_subcommand(
      "ablate", "Run a grid of configurations; lists accept a,b,c or lo..hi[:step]");
  ablate_args.bundle.add_to(*ablate_cmd);
  ablate_cmd->add_option("--out", ablate_args.out, "CSV output path");
  ablate_cmd->add_option("--strategies", ablate_args.strategies, "Selection strategies")
      ->delimiter(',');
  ablate_cmd->add_option("--scorers", ablate_args.scorers, "Scorers")->delimiter(',');
  ablate_cmd->add_option("--K-list", ablate_args.k_list, "Candidate counts")->delimiter(',');
  ablate_cmd->add_option("--kr-list", ablate_args.kr_list, "Retrieval depths")
      ->delimiter(',');
  ablate_cmd->add_option("--tau-list", ablate_args.tau_list, "Keep ratios (range step 0.1)")
      ->delimiter(',');
  ablate_cmd->add_option("--workers", ablate_args.workers, "Worker threads");
  ablate_cmd->add_option("--accumulation", ablate_args.accumulation,
                         "Retrieval dot-product accumulator: f32, f64");

  synthbench::BenchSpec spec;
  std::string bench_dir;
  auto* bench_cmd = app.add_subcommand("bench", "Write a planted benchmark bundle");
  bench_cmd->add_option("--n", spec.n, "Captions, images and latents");
  bench_cmd->add_option("--d", spec.d, "Joint embedding dimension");
  bench_cmd->add_option("--ds", spec.d_s, "Sentence embedding dimension");
  bench_cmd->add_option("--sigma-text", spec.sigma_text, "Caption noise scale");
  bench_cmd->add_option("--sigma-image", spec.sigma_image, "Image noise scale");
  bench_cmd->add_option("--p-corrupt", spec.p_corrupt, "Probability an image is swapped");
  bench_cmd->add_option("--seed", spec.seed, "Random seed");
  bench_cmd->add_option("--out-dir", bench_dir, "Output directory");

  BundleArgs inspect_bundle;
  std::vector<std::string> inspect_files;
  auto* inspect_cmd = app.add_subcommand("inspect", "Summarize files or a bundle as JSON");
  inspect_bundle.add_to(*inspect_cmd);
  inspect_cmd->add_option("files", inspect_files, "Matrix (.emb) or corpus (.jsonl) files");

  RefineArgs check_args;
  double tolerance = 1e-5;
  bool inject_fault = false;
  auto* check_cmd = app.add_subcommand(
      "oracle-check", "Compare refine against the brute-force reference (small bundles)");
  check_args.bundle.add_to(*check_cmd);
  add_pipeline_flags(*check_cmd, check_args);
  check_cmd->add_option("--tolerance", tolerance, "Absolute score tolerance");
  check_cmd->add_flag("--inject-fault", inject_fault)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*refine_cmd) return cmd_refine(refine_args, log);
    if (*ablate_cmd) return cmd_ablate(ablate_args, log);
    if (*bench_cmd) return cmd_bench(spec, bench_dir, log);
    if (*inspect_cmd) return cmd_inspect(inspect_bundle, inspect_files, log);
    if (*check_cmd) return cmd_oracle_check(check_args, tolerance, inject_fault, log);
  } catch (const UsageError& e) {
    std::cerr << "syncref: error kind=usage message=" << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "syncref: error " << e.what() << '\n';
    return kFailure;
  } catch (const std::exception& e) {
    std::cerr << "syncref: error kind=internal message=" << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

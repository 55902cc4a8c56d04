// lensctr command-line entry point. Exit codes: 0 ok, 1 validation error, 2 runtime failure.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <CLI11.hpp>

#include "lensctr/config_io.hpp"
#include "lensctr/diagnostics.hpp"
#include "lensctr/lens.hpp"
#include "lensctr/trainer.hpp"

namespace fs = std::filesystem;
using namespace lensctr;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct CheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Writes to stdout and the run log at once.
class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

 protected:
  int overflow(int c) override {
    if (c == EOF) return !EOF;
    const bool ok = a_->sputc(static_cast<char>(c)) != EOF && b_->sputc(static_cast<char>(c)) != EOF;
    return ok ? c : EOF;
  }
  int sync() override { return a_->pubsync() | b_->pubsync(); }

 private:
  std::streambuf* a_;
  std::streambuf* b_;
};

std::string utc_stamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y%m%dT%H%M%SZ");
  return s.str();
}

/// <out>/<hash>-<timestamp>, with a numeric suffix if that already exists.
fs::path make_run_dir(const fs::path& out, const std::string& hash) {
  const fs::path base = out / (hash + "-" + utc_stamp());
  fs::path dir = base;
  for (int n = 1; fs::exists(dir); ++n) dir = base.string() + "-" + std::to_string(n);
  fs::create_directories(dir);
  return dir;
}

void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// A run directory whose log mirrors stdout.
struct Run {
  fs::path dir;
  std::ofstream log_file;
  TeeBuf tee;
  std::ostream log;

  Run(const fs::path& out, const Json& resolved, const std::string& command)
      : dir(make_run_dir(out, config_hash(resolved))),
        log_file(dir / "run.log"),
        tee(std::cout.rdbuf(), log_file.rdbuf()),
        log(&tee) {
    write_json(dir / "resolved_config.json", resolved);
    log << "command: " << command << "\nconfig hash: " << config_hash(resolved) << "\nrun directory: " << dir.string()
        << '\n';
    log_file << "resolved config:\n" << resolved.dump(2) << '\n';
    log_file.flush();
  }
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ValidationError("bad seed '" + item + "' in --seeds");
    seeds.push_back(v);
  }
  if (seeds.empty()) throw ValidationError("--seeds is empty");
  return seeds;
}

std::string join_seeds(const std::vector<std::uint64_t>& seeds) {
  std::string s;
  for (std::size_t i = 0; i < seeds.size(); ++i) s += (i ? "," : "") + std::to_string(seeds[i]);
  return s;
}

synth::Dataset generate_for(const RunConfig& config, std::ostream& log) {
  log << "generating dataset (seed " << config.dataset.seed << ")\n";
  return synth::generate(config.dataset);
}

void print_stats(std::ostream& log, const synth::DatasetStats& s) {
  log << "train " << s.n_train << "  eval " << s.n_eval << "  samples/item " << s.samples_per_item
      << "  positive rate " << s.train_positive_rate << " / " << s.eval_positive_rate << "  mean history "
      << s.mean_valid_len << "  oracle eval AUC " << s.oracle_eval_auc << '\n';
}

// ---- subcommands ---------------------------------------------------------

int cmd_gen_data(const std::string& spec_path, const std::string& out, const std::optional<std::uint64_t>& seed) {
  Json doc = load_json_file(spec_path);
  synth::DatasetSpec spec = doc.is_object() && doc.contains("dataset")
                                ? load_run_config(spec_path).dataset
                                : dataset_spec_from_json(doc);
  if (seed) spec.seed = *seed;
  spec.validate();
  Json resolved = to_json(spec);
  resolved.erase("threads");  // output does not depend on it
  Run run(out, resolved, "gen-data");
  synth::Dataset data = synth::generate(spec);
  synth::write_dataset(data, run.dir);
  print_stats(run.log, data.stats);
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out, const std::optional<std::uint64_t>& seed,
              const std::string& data_dir) {
  RunConfig config = load_run_config(config_path);
  if (seed) config.train.seed = *seed;
  synth::Dataset data;
  if (!data_dir.empty()) {
    data = synth::read_dataset(data_dir);
    config.dataset = data.spec;
  }
  config.resolve();
  const Json resolved = to_json(config);
  Run run(out, resolved, "train");
  if (data_dir.empty()) data = generate_for(config, run.log);
  print_stats(run.log, data.stats);

  auto model = make_model(config.model);
  run.log << "model: " << to_string(config.model.family) << ", " << model->params().total_size() << " parameters ("
          << lens_parameter_count(*model) << " in LENS modules)\n";
  MetricsReport report = train(*model, data.train, data.eval, config.train, &run.log);
  report.config_hash = config_hash(resolved);

  Json metrics = {{"auc", report.auc},         {"logloss", report.logloss},
                  {"n_pos", report.n_pos},     {"n_neg", report.n_neg},
                  {"seed", report.seed},       {"config_hash", report.config_hash},
                  {"steps", report.steps},     {"final_train_loss", report.final_train_loss}};
  write_json(run.dir / "metrics.json", metrics);
  {
    std::ofstream csv(run.dir / "metrics.csv");
    csv.precision(17);
    csv << "auc,logloss,n_pos,n_neg,seed,config_hash,steps,final_train_loss\n"
        << report.auc << ',' << report.logloss << ',' << report.n_pos << ',' << report.n_neg << ',' << report.seed << ','
        << report.config_hash << ',' << report.steps << ',' << report.final_train_loss << '\n';
    std::ofstream curve(run.dir / "curve.csv");
    curve.precision(17);
    curve << "step,auc,logloss\n";
    for (const EvalPoint& p : report.curve) curve << p.step << ',' << p.auc << ',' << p.logloss << '\n';
  }
  save_checkpoint(run.dir / "model", *model, report.config_hash);
  run.log << std::setprecision(6) << "eval AUC " << report.auc << "  logloss " << report.logloss << "\ncheckpoint "
          << (run.dir / "model").string() << ".{json,bin}\n";
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out, const std::string& seeds,
               const std::string& data_dir) {
  RunConfig config = load_run_config(config_path);
  if (!seeds.empty()) config.seeds = parse_seeds(seeds);
  synth::Dataset data;
  if (!data_dir.empty()) {
    data = synth::read_dataset(data_dir);
    config.dataset = data.spec;
  }
  config.resolve();
  const Json resolved = to_json(config);
  Run run(out, resolved, "ablate --seeds " + join_seeds(config.seeds));
  if (data_dir.empty()) data = generate_for(config, run.log);
  print_stats(run.log, data.stats);

  const ExperimentSpec spec = config.experiment();
  AblationReport report = run_ablation(spec, data, &run.log);
  {
    std::ofstream results(run.dir / "results.csv");
    write_results_csv(results, report);
    std::ofstream summary(run.dir / "summary.csv");
    write_summary_csv(summary, report);
  }
  run.log << std::fixed << std::setprecision(4);
  for (const CellSummary& s : report.summary) {
    run.log << std::left << std::setw(28) << s.cell_id << " AUC " << s.auc_mean << " ± " << s.auc_std << "  (n=" << s.n
            << ")\n";
  }
  for (const auto& [label, value] : report.deltas) run.log << label << ": " << std::showpos << value << std::noshowpos << '\n';
  std::size_t failed = 0;
  for (const CellRun& r : report.runs) failed += !r.error.empty();
  if (failed) run.log << failed << " run(s) failed; see the error column of results.csv\n";
  return 0;
}

int cmd_gradcheck(const std::string& config_path, std::uint64_t seed) {
  std::vector<std::pair<std::string, ModelConfig>> configs;
  if (config_path.empty()) {
    configs.emplace_back("tiny, item condition", diag::tiny_config(ConditionSource::kItem));
    configs.emplace_back("tiny, item_seq condition", diag::tiny_config(ConditionSource::kItemSeq));
  } else {
    RunConfig config = load_run_config(config_path);
    config.resolve();
    std::cout << "config hash: " << config_hash(to_json(config)) << '\n';
    configs.emplace_back(config_path, config.model);
  }
  constexpr double kTolerance = 1e-5;
  bool ok = true;
  for (const auto& [name, model] : configs) {
    const GradCheckReport r = diag::grad_check_model(model, seed);
    const bool pass = r.max_rel_error <= kTolerance;
    ok = ok && pass;
    std::cout << (pass ? "PASS " : "FAIL ") << name << ": max relative error " << std::scientific << std::setprecision(3)
              << r.max_rel_error << " over " << r.entries_checked << " entries (worst " << r.worst_param << "["
              << r.worst_index << "])" << std::defaultfloat << '\n';
  }
  if (!ok) throw CheckFailed("gradient check exceeded relative error " + std::to_string(kTolerance));
  return 0;
}

int cmd_param_count(const std::string& config_path) {
  RunConfig config = load_run_config(config_path);
  config.resolve();
  const ModelConfig& m = config.model;
  const lens::ParamCount c = lens::param_count(m);
  auto model = make_model(m);
  const std::size_t emb = model->params().size_with_prefix("emb.");
  std::cout << "config hash: " << config_hash(to_json(config)) << '\n'
            << "q=" << m.q << " D=" << m.d_model << " L_max=" << m.l_max << " N_L=" << m.n_layers << " r=" << m.lens.rank
            << " d_c=" << c.condition_dim << " (" << to_string(m.resolved_condition()) << ")\n"
            << "QueryPos " << c.query_pos << '\n'
            << "TCQG " << c.tcqg << '\n'
            << "TCPB " << c.tcpb << '\n';
  if (c.tcpb_tabulated != c.tcpb) std::cout << "TCPB (N_L(qDr + L_max r) form) " << c.tcpb_tabulated << '\n';
  std::cout << "LENS + QueryPos " << c.total() << '\n'
            << "embedding tables " << emb << '\n'
            << "ratio " << std::fixed << std::setprecision(2) << 100.0 * static_cast<double>(c.total()) / static_cast<double>(emb)
            << "%\n"
            << "model total (as configured) " << model->params().total_size() << '\n';
  return 0;
}

int cmd_bench_attn(const diag::AttnBenchOptions& options) {
  const auto timings = diag::bench_attention(options);
  std::cout << "q=" << options.q << " D=" << options.d_model << " heads=" << options.heads << " batch=" << options.batch
            << " repeats=" << options.repeats << " (forward + backward, one layer)\n"
            << std::setw(8) << "L" << std::setw(14) << "median ms" << std::setw(14) << "ms / L" << std::setw(12)
            << "ratio" << '\n';
  for (std::size_t i = 0; i < timings.size(); ++i) {
    const auto& t = timings[i];
    std::cout << std::setw(8) << t.length << std::fixed << std::setprecision(3) << std::setw(14) << 1e3 * t.median
              << std::setprecision(5) << std::setw(14) << 1e3 * t.median / static_cast<double>(t.length)
              << std::setprecision(3) << std::setw(12);
    if (i == 0) {
      std::cout << "-";
    } else {
      std::cout << t.median / timings[i - 1].median;
    }
    std::cout << std::defaultfloat << '\n';
  }
  return 0;
}

int cmd_export_bias(std::string checkpoint, const std::string& out, std::size_t n_items) {
  fs::path base(checkpoint);
  if (base.extension() == ".json" || base.extension() == ".bin") base.replace_extension();
  if (!fs::exists(base.string() + ".json") || !fs::exists(base.string() + ".bin")) {
    throw ValidationError("checkpoint '" + base.string() + "' needs both .json and .bin files");
  }
  LoadedCheckpoint loaded = load_checkpoint(base);
  Json resolved = {{"checkpoint_config_hash", loaded.config_hash}, {"model", to_json(loaded.model->config())},
                   {"items", n_items}};
  Run run(out, resolved, "export-bias");
  for (const fs::path& p : diag::export_bias(*loaded.model, run.dir, n_items)) run.log << "wrote " << p.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Tape tensors are large and short-lived; keep them off mmap and out of trim.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
  CLI::App app{"lensctr: synthetic CTR data, latent-query models with LENS, training and ablations"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "lensctr 0.1.0");

  std::string spec_path, config_path, out_dir, seeds, data_dir, checkpoint;
  std::optional<std::uint64_t> seed;
  std::uint64_t grad_seed = 1;
  std::size_t export_items = 20;
  diag::AttnBenchOptions bench;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--spec", spec_path, "Dataset spec (JSON), or a run config with a dataset section")
      ->required()
      ->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "Parent directory of the run directory")->required();
  gen->add_option("--seed", seed, "Override the dataset seed");

  auto* tr = app.add_subcommand("train", "Train one model with one seed");
  tr->add_option("--config", config_path, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", out_dir, "Parent directory of the run directory")->required();
  tr->add_option("--seed", seed, "Override the training seed");
  tr->add_option("--data", data_dir, "Use a dataset directory written by gen-data")->check(CLI::ExistingDirectory);

  auto* ab = app.add_subcommand("ablate", "Run the ablation grid over several seeds");
  ab->add_option("--config", config_path, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  ab->add_option("--seeds", seeds, "Comma-separated seeds, e.g. 42,123,456");
  ab->add_option("--out", out_dir, "Parent directory of the run directory")->required();
  ab->add_option("--data", data_dir, "Use a dataset directory written by gen-data")->check(CLI::ExistingDirectory);

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check on a small model");
  gc->add_option("--config", config_path, "Run config whose model to check (default: the tiny LENS configs)")
      ->check(CLI::ExistingFile);
  gc->add_option("--seed", grad_seed, "Seed for parameters and inputs");

  auto* pc = app.add_subcommand("param-count", "Parameter cost of QueryPos and the LENS modules");
  pc->add_option("--config", config_path, "Run config (JSON)")->required()->check(CLI::ExistingFile);

  auto* ba = app.add_subcommand("bench-attn", "Cross-attention timing against sequence length");
  ba->add_option("--q", bench.q, "Number of latent queries");
  ba->add_option("--lengths", bench.lengths, "Sequence lengths")->delimiter(',');
  ba->add_option("--repeats", bench.repeats, "Timed runs per length (median reported)");
  ba->add_option("--d-model", bench.d_model, "Model width");
  ba->add_option("--heads", bench.heads, "Attention heads");
  ba->add_option("--batch", bench.batch, "Batch size");

  auto* eb = app.add_subcommand("export-bias", "Dump position-bias and LENS tables as CSV");
  eb->add_option("--checkpoint", checkpoint, "Checkpoint path (model, model.json or model.bin)")->required();
  eb->add_option("--out", out_dir, "Parent directory of the run directory")->required();
  eb->add_option("--items", export_items, "Items 1..n to export target-conditioned tables for");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    if (*gen) return cmd_gen_data(spec_path, out_dir, seed);
    if (*tr) return cmd_train(config_path, out_dir, seed, data_dir);
    if (*ab) return cmd_ablate(config_path, out_dir, seeds, data_dir);
    if (*gc) return cmd_gradcheck(config_path, grad_seed);
    if (*pc) return cmd_param_count(config_path);
    if (*ba) return cmd_bench_attn(bench);
    if (*eb) return cmd_export_bias(checkpoint, out_dir, export_items);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const CheckFailed& e) {
    std::cerr << "check failed: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}

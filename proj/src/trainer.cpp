#include "lensctr/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <ostream>
#include <thread>

#include "lensctr/config_io.hpp"
#include "lensctr/hash.hpp"
#include "lensctr/lens.hpp"
#include "lensctr/metrics.hpp"

namespace lensctr {

using num::Tape;
using num::Var;

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ValidationError("train config: " + msg);
  };
  require(learning_rate > 0.0, "learning_rate must be > 0");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(eval_batch_size >= 1, "eval_batch_size must be >= 1");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must lie in [0, 1)");
  require(epsilon > 0.0, "epsilon must be > 0");
}

double bce_loss(std::span<const double> logits, std::span<const double> labels) {
  if (logits.size() != labels.size()) throw std::invalid_argument("bce_loss: size mismatch");
  if (logits.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    total += std::max(z, 0.0) - z * labels[i] + std::log1p(std::exp(-std::abs(z)));
  }
  return total / static_cast<double>(logits.size());
}

void Adam::step(ParameterStore& store) {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (Parameter& p : store.entries()) {
    if (!p.value.requires_grad()) continue;
    const auto g = p.value.grad();
    for (double x : g) {
      if (!std::isfinite(x)) throw std::runtime_error("non-finite gradient in parameter '" + p.name + "'");
    }
    auto& [m, v] = moments_[p.name];
    if (m.empty()) {
      m.assign(g.size(), 0.0);
      v.assign(g.size(), 0.0);
    }
    auto w = p.value.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      w[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

std::vector<double> predict_records(CtrModel& model, std::span<const SampleRecord> records, std::size_t batch_size,
                                    std::size_t threads) {
  std::vector<double> out(records.size());
  const std::size_t n_batches = (records.size() + batch_size - 1) / batch_size;
  const bool had_grad = !model.params().entries().empty() && model.params().entries().front().value.requires_grad();
  model.params().set_requires_grad(false);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    try {
      for (std::size_t b; (b = next.fetch_add(1)) < n_batches;) {
        const std::size_t begin = b * batch_size, end = std::min(records.size(), begin + batch_size);
        Batch batch = make_batch(records.subspan(begin, end - begin), model.config().l_max);
        const auto p = model.predict(batch);
        std::copy(p.begin(), p.end(), out.begin() + static_cast<std::ptrdiff_t>(begin));
      }
    } catch (...) {
      std::lock_guard lock(failure_mu);
      if (!failure) failure = std::current_exception();
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n_batches));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (had_grad) model.params().set_requires_grad(true);
  if (failure) std::rethrow_exception(failure);
  return out;
}

MetricsReport evaluate(CtrModel& model, std::span<const SampleRecord> records, const TrainConfig& config) {
  MetricsReport r;
  r.seed = config.seed;
  const auto probs = predict_records(model, records, config.eval_batch_size, config.eval_threads);
  std::vector<double> labels(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    labels[i] = records[i].label;
    (records[i].label ? r.n_pos : r.n_neg) += 1;
  }
  r.auc = evaluate_auc(probs, labels);
  r.logloss = logloss(probs, labels);
  return r;
}

MetricsReport train(CtrModel& model, std::span<const SampleRecord> train_set, std::span<const SampleRecord> eval_set,
                    const TrainConfig& config, std::ostream* log) {
  config.validate();
  ParameterStore& store = model.params();
  model.initialize(config.seed);
  store.set_requires_grad(true);
  Adam adam(config);

  std::vector<std::size_t> order(train_set.size());
  std::vector<EvalPoint> curve;
  double last_loss = 0.0;
  std::vector<SampleRecord> chunk;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(mix_seed(config.seed, fnv1a64("epoch") ^ epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    double epoch_loss = 0.0;
    std::size_t epoch_batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      chunk.clear();
      for (std::size_t i = begin; i < end; ++i) chunk.push_back(train_set[order[i]]);
      Batch batch = make_batch(chunk, model.config().l_max);

      Tape tape;
      tape.set_finite_checks(false);
      Var loss = num::bce_with_logits(model.logits(tape, batch), batch.labels);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        throw std::runtime_error("non-finite training loss at step " + std::to_string(adam.steps() + 1));
      }
      tape.backward(loss);
      adam.step(store);
      store.zero_grad();
      last_loss = value;
      epoch_loss += value;
      ++epoch_batches;

      if (config.eval_every && adam.steps() % config.eval_every == 0 && !eval_set.empty()) {
        MetricsReport m = evaluate(model, eval_set, config);
        curve.push_back({adam.steps(), m.auc, m.logloss});
        if (log) *log << "step " << adam.steps() << " eval_auc " << m.auc << " eval_logloss " << m.logloss << '\n';
      }
    }
    if (log && epoch_batches) {
      *log << "epoch " << epoch + 1 << " mean_train_loss " << epoch_loss / static_cast<double>(epoch_batches) << '\n';
    }
  }
  store.set_requires_grad(false);

  MetricsReport report = evaluate(model, eval_set, config);
  report.steps = adam.steps();
  report.final_train_loss = last_loss;
  report.curve = std::move(curve);
  return report;
}

void save_checkpoint(const std::filesystem::path& path, const CtrModel& model, const std::string& config_hash) {
  Json manifest;
  manifest["format"] = "lensctr-checkpoint/1";
  manifest["config_hash"] = config_hash;
  manifest["model"] = to_json(model.config());
  Json shapes = Json::array();
  for (const Parameter& p : model.params().entries()) shapes.push_back({{"name", p.name}, {"shape", p.value.shape()}});
  manifest["parameters"] = shapes;
  manifest["total_values"] = model.params().total_size();

  std::filesystem::path base = path;
  if (base.has_parent_path()) std::filesystem::create_directories(base.parent_path());
  {
    std::ofstream out(base.string() + ".bin", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + base.string() + ".bin");
    static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian doubles");
    for (const Parameter& p : model.params().entries()) {
      out.write(reinterpret_cast<const char*>(p.value.ptr()), static_cast<std::streamsize>(p.value.numel() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint values");
  }
  std::ofstream out(base.string() + ".json", std::ios::binary);
  out << manifest.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write checkpoint manifest");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::filesystem::path base = path;
  if (base.extension() == ".json" || base.extension() == ".bin") base.replace_extension();
  nlohmann::json manifest = load_json_file(base.string() + ".json");
  if (manifest.value("format", "") != "lensctr-checkpoint/1") {
    throw std::runtime_error(base.string() + ".json: not a checkpoint manifest");
  }
  LoadedCheckpoint loaded;
  loaded.config_hash = manifest.at("config_hash").get<std::string>();
  loaded.model = make_model(model_config_from_json(manifest.at("model")));
  const auto& shapes = manifest.at("parameters");
  auto& entries = loaded.model->params().entries();
  if (shapes.size() != entries.size()) throw std::runtime_error("checkpoint parameter list does not match the model");
  std::ifstream in(base.string() + ".bin", std::ios::binary);
  if (!in) throw std::runtime_error("missing checkpoint values " + base.string() + ".bin");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Parameter& p = entries[i];
    if (shapes[i].at("name").get<std::string>() != p.name || shapes[i].at("shape").get<num::Shape>() != p.value.shape()) {
      throw std::runtime_error("checkpoint entry " + std::to_string(i) + " does not match parameter '" + p.name + "'");
    }
    in.read(reinterpret_cast<char*>(p.value.ptr()), static_cast<std::streamsize>(p.value.numel() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint values truncated at parameter '" + p.name + "'");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error("checkpoint has trailing bytes");
  return loaded;
}

std::size_t lens_parameter_count(const CtrModel& model) { return model.params().size_with_prefix("lens."); }

std::vector<ExperimentCell> staged_grid(const ModelConfig& base) {
  std::vector<ExperimentCell> cells;
  ModelConfig m = base;
  m.family = ModelFamily::kLatentQuery;
  m.lens.enabled = false;
  m.position = PositionMechanism::kNone;
  m.switches = CapacitySwitches{};
  m.switches.k_pool = base.switches.k_pool;
  cells.push_back({"I.no_switches", "I", m});
  m.switches.seq_pooling_tokens = true;
  cells.push_back({"I.seq_pooling", "I", m});
  m.switches.ns_tokens_in_boosting = true;
  cells.push_back({"I.ns_boosting", "I", m});
  m.switches.per_query_ffn = true;
  cells.push_back({"I.per_query_ffn", "I", m});  // all switches: the backbone reference

  for (auto [id, mech] : {std::pair{"II.global", PositionMechanism::kGlobal}, std::pair{"II.abs_emb", PositionMechanism::kAbsEmb},
                          std::pair{"II.query_pos", PositionMechanism::kQuerySpecific}}) {
    ModelConfig p = m;
    p.position = mech;
    cells.push_back({id, "II", p});
  }
  ModelConfig lens = m;
  lens.position = PositionMechanism::kQuerySpecific;
  lens.lens = base.lens;
  lens.lens.enabled = true;
  lens.lens.tcqg = lens.lens.tcpb = true;
  for (auto [id, src] : {std::pair{"III.item", ConditionSource::kItem}, std::pair{"III.item_seq", ConditionSource::kItemSeq},
                         std::pair{"III.auto", ConditionSource::kAuto}}) {
    ModelConfig l = lens;
    l.lens.condition = src;
    cells.push_back({id, "III", l});
  }
  ModelConfig no_tcpb = lens, no_tcqg = lens;
  no_tcpb.lens.condition = no_tcqg.lens.condition = ConditionSource::kAuto;
  no_tcpb.lens.tcpb = false;
  no_tcqg.lens.tcqg = false;
  cells.push_back({"IV.without_tcpb", "IV", no_tcpb});
  cells.push_back({"IV.without_tcqg", "IV", no_tcqg});

  ModelConfig din = base;
  din.family = ModelFamily::kDin;
  din.lens.enabled = false;
  cells.push_back({"baseline.din", "baseline", din});
  return cells;
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

AblationReport summarize(const std::vector<CellRun>& runs) {
  AblationReport report;
  report.runs = runs;
  std::vector<std::string> order;
  std::map<std::string, std::vector<const CellRun*>> by_cell;
  for (const CellRun& r : runs) {
    if (!by_cell.count(r.cell_id)) order.push_back(r.cell_id);
    by_cell[r.cell_id].push_back(&r);
  }
  std::map<std::string, double> means;
  for (const std::string& id : order) {
    std::vector<double> aucs, losses;
    for (const CellRun* r : by_cell[id]) {
      if (!r->error.empty()) continue;
      aucs.push_back(r->auc);
      losses.push_back(r->logloss);
    }
    CellSummary s;
    s.cell_id = id;
    s.part = by_cell[id].front()->part;
    s.n = aucs.size();
    std::tie(s.auc_mean, s.auc_std) = mean_std(aucs);
    std::tie(s.logloss_mean, s.logloss_std) = mean_std(losses);
    report.summary.push_back(s);
    if (s.n) means[id] = s.auc_mean;
  }
  auto delta = [&](const char* label, const char* a, const char* b) {
    if (means.count(a) && means.count(b)) report.deltas.emplace_back(label, means[a] - means[b]);
  };
  delta("delta_modules_over_querypos_base", "III.auto", "II.query_pos");
  delta("delta_final_lens_vs_backbone_ref", "III.auto", "I.per_query_ffn");
  delta("delta_final_lens_vs_din", "III.auto", "baseline.din");
  return report;
}

AblationReport run_ablation(const ExperimentSpec& spec, const synth::Dataset& data, std::ostream* log) {
  const std::vector<ExperimentCell> cells = spec.cells.empty() ? staged_grid(spec.model) : spec.cells;
  struct Job {
    const ExperimentCell* cell;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const ExperimentCell& c : cells)
    for (std::uint64_t s : spec.seeds) jobs.push_back({&c, s});

  std::vector<CellRun> runs(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto work = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < jobs.size();) {
      const Job& job = jobs[k];
      CellRun& run = runs[k];
      run.cell_id = job.cell->id;
      run.part = job.cell->part;
      run.seed = job.seed;
      const auto start = std::chrono::steady_clock::now();
      try {
        auto model = make_model(job.cell->model);
        TrainConfig tc = spec.train;
        tc.seed = job.seed;
        MetricsReport m = train(*model, data.train, data.eval, tc);
        run.auc = m.auc;
        run.logloss = m.logloss;
        run.params_total = model->params().total_size();
        run.params_lens = lens_parameter_count(*model);
      } catch (const std::exception& e) {
        run.error = e.what();
      }
      run.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (log) {
        std::lock_guard lock(log_mu);
        *log << run.cell_id << " seed " << run.seed;
        if (run.error.empty()) *log << " auc " << run.auc << " logloss " << run.logloss;
        else *log << " FAILED: " << run.error;
        *log << " (" << run.wall_seconds << " s)\n";
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(spec.workers, jobs.size()));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return summarize(runs);
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10f", v);
  return buf;
}

}  // namespace

void write_results_csv(std::ostream& out, const AblationReport& report) {
  out << "cell_id,part,seed,auc,logloss,params_total,params_lens,wall_seconds,error\n";
  for (const CellRun& r : report.runs) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << r.cell_id << ',' << r.part << ',' << r.seed << ',' << (r.error.empty() ? fmt(r.auc) : "") << ','
        << (r.error.empty() ? fmt(r.logloss) : "") << ',' << r.params_total << ',' << r.params_lens << ','
        << fmt(r.wall_seconds) << ',' << err << '\n';
  }
}

void write_summary_csv(std::ostream& out, const AblationReport& report) {
  out << "cell_id,part,n,auc_mean,auc_std,logloss_mean,logloss_std\n";
  for (const CellSummary& s : report.summary) {
    out << s.cell_id << ',' << s.part << ',' << s.n << ',' << fmt(s.auc_mean) << ',' << fmt(s.auc_std) << ','
        << fmt(s.logloss_mean) << ',' << fmt(s.logloss_std) << '\n';
  }
  out << "\ndelta,value\n";
  for (const auto& [label, v] : report.deltas) out << label << ',' << fmt(v) << '\n';
}

}  // namespace lensctr

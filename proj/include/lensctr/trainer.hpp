#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lensctr/backbone.hpp"
#include "lensctr/synthdata.hpp"

namespace lensctr {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 256;
  std::size_t epochs = 1;
  std::uint64_t seed = 42;
  /// Evaluate every n optimiser steps in addition to the end of training; 0 = end only.
  std::size_t eval_every = 0;
  std::size_t eval_batch_size = 1024;
  std::size_t eval_threads = 1;

  void validate() const;
};

/// Mean numerically stable binary cross-entropy computed from logits.
double bce_loss(std::span<const double> logits, std::span<const double> labels);

class Adam {
 public:
  explicit Adam(const TrainConfig& config) : config_(config) {}
  /// One bias-corrected update of every parameter from its gradient. Throws
  /// std::runtime_error naming the parameter on a non-finite gradient.
  void step(ParameterStore& store);
  std::size_t steps() const { return t_; }

 private:
  TrainConfig config_;
  std::size_t t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

struct EvalPoint {
  std::size_t step = 0;
  double auc = 0.0;
  double logloss = 0.0;
};

struct MetricsReport {
  double auc = 0.0;
  double logloss = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::size_t steps = 0;
  double final_train_loss = 0.0;
  std::vector<EvalPoint> curve;
};

/// Probabilities for `records`, in order. Batches are spread over `threads` workers.
std::vector<double> predict_records(CtrModel& model, std::span<const SampleRecord> records, std::size_t batch_size,
                                    std::size_t threads);

MetricsReport evaluate(CtrModel& model, std::span<const SampleRecord> records, const TrainConfig& config);

/// Initialises the model from config.seed, trains for config.epochs over
/// `train` (shuffled per epoch from the seed) and evaluates on `eval`.
/// Throws std::runtime_error with the step index on a non-finite loss.
MetricsReport train(CtrModel& model, std::span<const SampleRecord> train_set, std::span<const SampleRecord> eval_set,
                    const TrainConfig& config, std::ostream* log = nullptr);

/// Checkpoint: `<path>.json` (config hash, model config, parameter shapes) and
/// `<path>.bin` (little-endian doubles in declaration order).
void save_checkpoint(const std::filesystem::path& path, const CtrModel& model, const std::string& config_hash);
struct LoadedCheckpoint {
  std::unique_ptr<CtrModel> model;
  std::string config_hash;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// One ablation cell: a named model variant.
struct ExperimentCell {
  std::string id;
  std::string part;
  ModelConfig model;
};

struct ExperimentSpec {
  synth::DatasetSpec dataset;
  ModelConfig model;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{42, 123, 456};
  /// Empty means the staged grid built from `model`.
  std::vector<ExperimentCell> cells;
  std::size_t workers = 1;
};

/// The staged grid: capacity switches, position mechanisms, condition sources,
/// single-module removals and the DIN baseline, all derived from `base`.
std::vector<ExperimentCell> staged_grid(const ModelConfig& base);

struct CellRun {
  std::string cell_id;
  std::string part;
  std::uint64_t seed = 0;
  double auc = 0.0;
  double logloss = 0.0;
  std::size_t params_total = 0;
  std::size_t params_lens = 0;
  double wall_seconds = 0.0;
  std::string error;
};

struct CellSummary {
  std::string cell_id;
  std::string part;
  std::size_t n = 0;
  double auc_mean = 0.0;
  double auc_std = 0.0;
  double logloss_mean = 0.0;
  double logloss_std = 0.0;
};

struct AblationReport {
  std::vector<CellRun> runs;
  std::vector<CellSummary> summary;
  /// (label, value) delta rows; only emitted when both cells succeeded.
  std::vector<std::pair<std::string, double>> deltas;
};

/// Mean and sample standard deviation (n - 1); std is 0 for a single value.
std::pair<double, double> mean_std(const std::vector<double>& values);

AblationReport summarize(const std::vector<CellRun>& runs);

/// Runs every (cell, seed); a failing cell is recorded and the grid continues.
AblationReport run_ablation(const ExperimentSpec& spec, const synth::Dataset& data, std::ostream* log = nullptr);

void write_results_csv(std::ostream& out, const AblationReport& report);
void write_summary_csv(std::ostream& out, const AblationReport& report);

/// Trainable parameters owned by LENS modules (gate and TCPB).
std::size_t lens_parameter_count(const CtrModel& model);

}  // namespace lensctr

#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lensctr/model_config.hpp"
#include "lensctr/record.hpp"

namespace lensctr::synth {

inline constexpr const char* kSchemaVersion = "lensctr-dataset/1";

enum class HistoryProtocol { kTypedExposure, kAllExposure, kClickOnly };
std::string to_string(HistoryProtocol p);
HistoryProtocol parse_history_protocol(const std::string& s);

/// Strength of each planted click mechanism (logit units).
struct PlantedSignal {
  /// Decayed, action-signed match between the candidate's type and the most
  /// recent exposures.
  double recency_weight = 2.0;
  /// Type-match rate inside the age window picked by the candidate's profile.
  double target_match_weight = 2.0;
  std::size_t position_profile_count = 4;
  /// Candidate type is one of the user's preferred types.
  double metadata_weight = 1.0;
  double item_bias_std = 0.3;
  double recency_decay = 0.6;
  std::size_t recency_window = 8;
};

struct DatasetSpec {
  std::size_t n_items = 1000;
  std::size_t n_users = 200;
  std::size_t n_samples = 20000;
  std::size_t l_max = 50;
  /// First n of [item category, user segment, context hour, popularity (dense)].
  std::size_t n_nonseq_fields = 2;
  double target_samples_per_item = 20.0;
  PlantedSignal signal;
  HistoryProtocol protocol = HistoryProtocol::kTypedExposure;
  std::uint64_t seed = 42;

  double positive_rate = 0.1;
  std::size_t n_types = 8;
  double zipf_exponent = 1.1;
  /// Probability that an exposure is drawn from the user's preferred types.
  double preferred_type_prob = 0.7;
  double eval_fraction = 0.2;
  /// Unrecorded exposures simulated per user before the first record, so
  /// histories start populated and train/eval rows come from the same regime.
  std::size_t history_warmup = 0;
  /// Worker threads for generation; 0 picks the hardware concurrency.
  std::size_t threads = 1;

  /// Throws ValidationError, including when n_samples / n_items is more than
  /// 15% away from target_samples_per_item.
  void validate() const;
  /// Vocabulary a model needs for this dataset.
  VocabConfig vocab() const;
};

struct DatasetStats {
  std::size_t n_train = 0;
  std::size_t n_eval = 0;
  double samples_per_item = 0.0;
  double train_positive_rate = 0.0;
  double eval_positive_rate = 0.0;
  double mean_valid_len = 0.0;
  double base_logit = 0.0;
  /// AUC of the true click probabilities on the eval split.
  double oracle_eval_auc = 0.0;
};

struct Dataset {
  DatasetSpec spec;
  DatasetStats stats;
  std::vector<SampleRecord> train;
  std::vector<SampleRecord> eval;
};

/// Latent structure of the synthetic world, derived from the spec alone.
struct World {
  std::vector<std::size_t> item_type;     // index 0 unused
  std::vector<double> item_bias;          // index 0 unused
  std::vector<double> item_popularity;    // normalised rank in [0, 1), 0 = most popular
  std::vector<std::vector<std::int64_t>> items_by_type;  // sorted by popularity
  std::vector<std::array<std::size_t, 2>> user_types;
  /// Age window [first, last) of each position profile; age 0 = most recent.
  std::vector<std::pair<std::size_t, std::size_t>> profile_windows;

  std::size_t profile(std::int64_t item) const { return item_type[static_cast<std::size_t>(item)] % profile_windows.size(); }
};

World build_world(const DatasetSpec& spec);

/// Action-signed weight of one exposure in the recency term.
double action_sign(std::int64_t action);

Dataset generate(const DatasetSpec& spec);

/// Line format, one record per line, tab-separated:
/// user_id item_id label time_index seq_items seq_actions cat_fields dense_fields
/// List fields are comma-separated and may be empty. The first line is a header.
void write_records(std::ostream& out, std::span<const SampleRecord> records);
std::vector<SampleRecord> read_records(std::istream& in, const std::string& source = "<stream>");

/// Streams records in file order, optionally through a seeded shuffle buffer.
class RecordReader {
 public:
  RecordReader(std::istream& in, std::string source, std::size_t shuffle_buffer = 0, std::uint64_t seed = 0);
  std::optional<SampleRecord> next();
  /// Up to `n` records; empty at end of input.
  std::vector<SampleRecord> next_batch(std::size_t n);

 private:
  std::optional<SampleRecord> read_one();

  std::istream& in_;
  std::string source_;
  std::size_t capacity_;
  std::mt19937_64 rng_;
  std::vector<SampleRecord> buffer_;
  std::uint64_t offset_ = 0;
  bool header_checked_ = false;
};

/// Writes train.tsv, eval.tsv and manifest.json into `dir`.
void write_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

/// Check used by tests: every history token of a click_only record appeared as a
/// positive earlier in the same user's stream.
bool click_only_consistent(const std::vector<SampleRecord>& records);

}  // namespace lensctr::synth

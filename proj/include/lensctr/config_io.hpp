#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "lensctr/model_config.hpp"
#include "lensctr/synthdata.hpp"
#include "lensctr/trainer.hpp"

namespace lensctr {

using Json = nlohmann::ordered_json;

/// Serialisers emit every field; parsers accept partial documents (missing
/// keys keep defaults) and reject unknown keys with ValidationError.
Json to_json(const ModelConfig& c);
Json to_json(const synth::DatasetSpec& s);
Json to_json(const TrainConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
synth::DatasetSpec dataset_spec_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// A whole run document with sections dataset / model / train / ablation.
struct RunConfig {
  synth::DatasetSpec dataset;
  ModelConfig model;
  TrainConfig train;
  /// Ablation section: seeds, workers and optional explicit cells whose
  /// `model` entries are merge patches over the base model section.
  std::vector<std::uint64_t> seeds{42, 123, 456};
  std::size_t workers = 1;
  std::vector<ExperimentCell> cells;

  /// Fills the model vocabulary and density from the dataset section and
  /// validates everything.
  void resolve();
  ExperimentSpec experiment() const;
};

Json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json load_json_file(const std::filesystem::path& path);

/// 16 hex digits of FNV-1a over the compact, key-sorted dump of `j`.
std::string config_hash(const nlohmann::json& j);

}  // namespace lensctr

#include "lensctr/config_io.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "lensctr/hash.hpp"
#include "lensctr/tensor.hpp"

namespace lensctr {

namespace {

/// Reads known keys from one JSON object and rejects the rest.
class Section {
 public:
  Section(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ValidationError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path(key) + ": " + e.what());
    }
  }

  template <typename Enum, typename Parse>
  void get_enum(const char* key, Enum& out, Parse parse) {
    std::string s;
    bool present = j_.contains(key);
    get(key, s);
    if (present) out = parse(s);
  }

  const nlohmann::json* child(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  std::string path(const std::string& key) const { return where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ValidationError("unknown key '" + path(it.key()) + "'");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

Json to_json(const ModelConfig& c) {
  Json j;
  j["family"] = to_string(c.family);
  j["q"] = c.q;
  j["d_model"] = c.d_model;
  j["n_layers"] = c.n_layers;
  j["heads"] = c.heads;
  j["l_max"] = c.l_max;
  j["mlp_head"] = c.mlp_head;
  j["ffn_mult"] = c.ffn_mult;
  j["switches"] = {{"seq_pooling_tokens", c.switches.seq_pooling_tokens},
                   {"ns_tokens_in_boosting", c.switches.ns_tokens_in_boosting},
                   {"per_query_ffn", c.switches.per_query_ffn},
                   {"k_pool", c.switches.k_pool}};
  j["position_mechanism"] = to_string(c.position);
  j["lens"] = {{"enabled", c.lens.enabled},
               {"tcqg", c.lens.tcqg},
               {"tcpb", c.lens.tcpb},
               {"rank", c.lens.rank},
               {"condition_source", to_string(c.lens.condition)}};
  j["din"] = {{"attn_mlp", c.din.attn_mlp}, {"full_side", c.din.full_side}};
  j["vocab"] = {{"n_items", c.vocab.n_items},
                {"cat_cardinalities", c.vocab.cat_cardinalities},
                {"n_dense", c.vocab.n_dense}};
  j["samples_per_item"] = c.samples_per_item;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  Section s(j, "model");
  s.get_enum("family", c.family, parse_model_family);
  s.get("q", c.q);
  s.get("d_model", c.d_model);
  s.get("n_layers", c.n_layers);
  s.get("heads", c.heads);
  s.get("l_max", c.l_max);
  s.get("mlp_head", c.mlp_head);
  s.get("ffn_mult", c.ffn_mult);
  s.get_enum("position_mechanism", c.position, parse_position_mechanism);
  s.get("samples_per_item", c.samples_per_item);
  if (auto* sw = s.child("switches")) {
    Section t(*sw, "model.switches");
    t.get("seq_pooling_tokens", c.switches.seq_pooling_tokens);
    t.get("ns_tokens_in_boosting", c.switches.ns_tokens_in_boosting);
    t.get("per_query_ffn", c.switches.per_query_ffn);
    t.get("k_pool", c.switches.k_pool);
    t.finish();
  }
  if (auto* l = s.child("lens")) {
    Section t(*l, "model.lens");
    t.get("enabled", c.lens.enabled);
    t.get("tcqg", c.lens.tcqg);
    t.get("tcpb", c.lens.tcpb);
    t.get("rank", c.lens.rank);
    t.get_enum("condition_source", c.lens.condition, parse_condition_source);
    t.finish();
  }
  if (auto* d = s.child("din")) {
    Section t(*d, "model.din");
    t.get("attn_mlp", c.din.attn_mlp);
    t.get("full_side", c.din.full_side);
    t.finish();
  }
  if (auto* v = s.child("vocab")) {
    Section t(*v, "model.vocab");
    t.get("n_items", c.vocab.n_items);
    t.get("cat_cardinalities", c.vocab.cat_cardinalities);
    t.get("n_dense", c.vocab.n_dense);
    t.finish();
  }
  s.finish();
  return c;
}

Json to_json(const synth::DatasetSpec& s) {
  Json j;
  j["n_items"] = s.n_items;
  j["n_users"] = s.n_users;
  j["n_samples"] = s.n_samples;
  j["l_max"] = s.l_max;
  j["n_nonseq_fields"] = s.n_nonseq_fields;
  j["target_samples_per_item"] = s.target_samples_per_item;
  j["planted_signal"] = {{"recency_weight", s.signal.recency_weight},
                         {"target_match_weight", s.signal.target_match_weight},
                         {"position_profile_count", s.signal.position_profile_count},
                         {"metadata_weight", s.signal.metadata_weight},
                         {"item_bias_std", s.signal.item_bias_std},
                         {"recency_decay", s.signal.recency_decay},
                         {"recency_window", s.signal.recency_window}};
  j["history_protocol"] = synth::to_string(s.protocol);
  j["seed"] = s.seed;
  j["positive_rate"] = s.positive_rate;
  j["n_types"] = s.n_types;
  j["zipf_exponent"] = s.zipf_exponent;
  j["preferred_type_prob"] = s.preferred_type_prob;
  j["eval_fraction"] = s.eval_fraction;
  j["history_warmup"] = s.history_warmup;
  j["threads"] = s.threads;
  return j;
}

synth::DatasetSpec dataset_spec_from_json(const nlohmann::json& j) {
  synth::DatasetSpec d;
  Section s(j, "dataset");
  s.get("n_items", d.n_items);
  s.get("n_users", d.n_users);
  s.get("n_samples", d.n_samples);
  s.get("l_max", d.l_max);
  s.get("n_nonseq_fields", d.n_nonseq_fields);
  s.get("target_samples_per_item", d.target_samples_per_item);
  s.get_enum("history_protocol", d.protocol, synth::parse_history_protocol);
  s.get("seed", d.seed);
  s.get("positive_rate", d.positive_rate);
  s.get("n_types", d.n_types);
  s.get("zipf_exponent", d.zipf_exponent);
  s.get("preferred_type_prob", d.preferred_type_prob);
  s.get("eval_fraction", d.eval_fraction);
  s.get("history_warmup", d.history_warmup);
  s.get("threads", d.threads);
  if (auto* p = s.child("planted_signal")) {
    Section t(*p, "dataset.planted_signal");
    t.get("recency_weight", d.signal.recency_weight);
    t.get("target_match_weight", d.signal.target_match_weight);
    t.get("position_profile_count", d.signal.position_profile_count);
    t.get("metadata_weight", d.signal.metadata_weight);
    t.get("item_bias_std", d.signal.item_bias_std);
    t.get("recency_decay", d.signal.recency_decay);
    t.get("recency_window", d.signal.recency_window);
    t.finish();
  }
  s.finish();
  return d;
}

Json to_json(const TrainConfig& c) {
  Json j;
  j["learning_rate"] = c.learning_rate;
  j["betas"] = {c.beta1, c.beta2};
  j["epsilon"] = c.epsilon;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["eval_every"] = c.eval_every;
  j["eval_batch_size"] = c.eval_batch_size;
  j["eval_threads"] = c.eval_threads;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  Section s(j, "train");
  s.get("learning_rate", c.learning_rate);
  std::vector<double> betas{c.beta1, c.beta2};
  s.get("betas", betas);
  if (betas.size() != 2) throw ValidationError("train.betas must hold two values");
  c.beta1 = betas[0];
  c.beta2 = betas[1];
  s.get("epsilon", c.epsilon);
  s.get("batch_size", c.batch_size);
  s.get("epochs", c.epochs);
  s.get("seed", c.seed);
  s.get("eval_every", c.eval_every);
  s.get("eval_batch_size", c.eval_batch_size);
  s.get("eval_threads", c.eval_threads);
  s.finish();
  return c;
}

void RunConfig::resolve() {
  dataset.validate();
  auto apply = [&](ModelConfig& m) {
    m.vocab = dataset.vocab();
    m.samples_per_item = static_cast<double>(dataset.n_samples) / static_cast<double>(dataset.n_items);
    if (m.l_max != dataset.l_max) {
      throw ValidationError("model.l_max (" + std::to_string(m.l_max) + ") differs from dataset.l_max (" +
                            std::to_string(dataset.l_max) + ")");
    }
    m.validate();
  };
  apply(model);
  for (ExperimentCell& cell : cells) apply(cell.model);
  train.validate();
  if (seeds.empty()) throw ValidationError("ablation.seeds must not be empty");
}

ExperimentSpec RunConfig::experiment() const {
  ExperimentSpec e;
  e.dataset = dataset;
  e.model = model;
  e.train = train;
  e.seeds = seeds;
  e.cells = cells;
  e.workers = workers;
  return e;
}

Json to_json(const RunConfig& c) {
  Json j;
  j["dataset"] = to_json(c.dataset);
  j["model"] = to_json(c.model);
  j["train"] = to_json(c.train);
  Json ab;
  ab["seeds"] = c.seeds;
  ab["workers"] = c.workers;
  ab["cells"] = Json::array();
  for (const ExperimentCell& cell : c.cells) {
    ab["cells"].push_back({{"id", cell.id}, {"part", cell.part}, {"model", to_json(cell.model)}});
  }
  j["ablation"] = ab;
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  Section s(j, "config");
  nlohmann::json model_json = nlohmann::json::object();
  if (auto* d = s.child("dataset")) c.dataset = dataset_spec_from_json(*d);
  if (auto* m = s.child("model")) model_json = *m;
  c.model = model_config_from_json(model_json);
  if (!j.contains("model") || !j.at("model").contains("l_max")) c.model.l_max = c.dataset.l_max;
  if (auto* t = s.child("train")) c.train = train_config_from_json(*t);
  if (auto* a = s.child("ablation")) {
    Section t(*a, "ablation");
    t.get("seeds", c.seeds);
    t.get("workers", c.workers);
    if (auto* cells = t.child("cells")) {
      if (!cells->is_array()) throw ValidationError("ablation.cells must be an array");
      for (const auto& cj : *cells) {
        Section cs(cj, "ablation.cells[]");
        ExperimentCell cell;
        cs.get("id", cell.id);
        cs.get("part", cell.part);
        nlohmann::json patched = model_json;
        if (auto* patch = cs.child("model")) patched.merge_patch(*patch);
        if (!patched.contains("l_max")) patched["l_max"] = c.model.l_max;
        cell.model = model_config_from_json(patched);
        cs.finish();
        if (cell.id.empty()) throw ValidationError("ablation.cells[] needs an id");
        c.cells.push_back(std::move(cell));
      }
    }
    t.finish();
  }
  s.finish();
  return c;
}

nlohmann::json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig c = run_config_from_json(load_json_file(path));
  c.resolve();
  return c;
}

std::string config_hash(const nlohmann::json& j) {
  // nlohmann::json (not ordered_json) stores object keys sorted.
  const std::string canonical = nlohmann::json(j).dump();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical)));
  return buf;
}

}  // namespace lensctr

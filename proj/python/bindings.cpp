// Thin Python surface over the C++ core. Structured arguments cross as JSON
// text; the pure-Python wrapper in lensctr/__init__.py handles dicts.

#include <optional>
#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "lensctr/config_io.hpp"
#include "lensctr/diagnostics.hpp"
#include "lensctr/lens.hpp"
#include "lensctr/metrics.hpp"

namespace py = pybind11;
using namespace lensctr;

namespace {

RunConfig resolved(const std::string& text) {
  RunConfig c = run_config_from_json(nlohmann::json::parse(text));
  c.resolve();
  return c;
}

Json stats_json(const synth::DatasetStats& s) {
  return {{"n_train", s.n_train},
          {"n_eval", s.n_eval},
          {"samples_per_item", s.samples_per_item},
          {"train_positive_rate", s.train_positive_rate},
          {"eval_positive_rate", s.eval_positive_rate},
          {"mean_valid_len", s.mean_valid_len},
          {"oracle_eval_auc", s.oracle_eval_auc}};
}

std::string resolve_config(const std::string& text) { return to_json(resolved(text)).dump(); }

std::string hash_config(const std::string& text) { return config_hash(to_json(resolved(text))); }

std::string param_count_json(const std::string& text) {
  const RunConfig c = resolved(text);
  const lens::ParamCount n = lens::param_count(c.model);
  const std::size_t emb = make_model(c.model)->params().size_with_prefix("emb.");
  return Json{{"query_pos", n.query_pos}, {"tcqg", n.tcqg},          {"tcpb", n.tcpb},
              {"tcpb_tabulated", n.tcpb_tabulated}, {"condition_dim", n.condition_dim},
              {"embedding", emb}}
      .dump();
}

std::string generate_json(const std::string& spec_text, const std::string& out_dir) {
  const synth::DatasetSpec spec = dataset_spec_from_json(nlohmann::json::parse(spec_text));
  spec.validate();
  const synth::Dataset data = synth::generate(spec);
  if (!out_dir.empty()) synth::write_dataset(data, out_dir);
  return stats_json(data.stats).dump();
}

std::string train_json(const std::string& text, std::optional<std::uint64_t> seed, const std::string& checkpoint) {
  RunConfig c = run_config_from_json(nlohmann::json::parse(text));
  if (seed) c.train.seed = *seed;
  c.resolve();
  const synth::Dataset data = synth::generate(c.dataset);
  auto model = make_model(c.model);
  MetricsReport r = train(*model, data.train, data.eval, c.train);
  r.config_hash = config_hash(to_json(c));
  if (!checkpoint.empty()) save_checkpoint(checkpoint, *model, r.config_hash);
  Json curve = Json::array();
  for (const EvalPoint& p : r.curve) curve.push_back({{"step", p.step}, {"auc", p.auc}, {"logloss", p.logloss}});
  return Json{{"auc", r.auc},
              {"logloss", r.logloss},
              {"n_pos", r.n_pos},
              {"n_neg", r.n_neg},
              {"seed", r.seed},
              {"config_hash", r.config_hash},
              {"steps", r.steps},
              {"final_train_loss", r.final_train_loss},
              {"curve", curve}}
      .dump();
}

std::pair<std::string, std::string> ablate_csv(const std::string& text, std::vector<std::uint64_t> seeds) {
  RunConfig c = run_config_from_json(nlohmann::json::parse(text));
  if (!seeds.empty()) c.seeds = std::move(seeds);
  c.resolve();
  const synth::Dataset data = synth::generate(c.dataset);
  const AblationReport report = run_ablation(c.experiment(), data);
  std::ostringstream results, summary;
  write_results_csv(results, report);
  write_summary_csv(summary, report);
  return {results.str(), summary.str()};
}

std::vector<double> predict_eval(const std::string& checkpoint, const std::string& dataset_dir) {
  LoadedCheckpoint loaded = load_checkpoint(checkpoint);
  const synth::Dataset data = synth::read_dataset(dataset_dir);
  return predict_records(*loaded.model, data.eval, 1024, 1);
}

std::pair<double, std::string> grad_check_tiny(const std::string& condition, std::uint64_t seed) {
  const GradCheckReport r = diag::grad_check_model(diag::tiny_config(parse_condition_source(condition)), seed);
  return {r.max_rel_error, r.worst_param};
}

std::vector<std::pair<std::size_t, double>> bench(std::size_t q, std::vector<std::size_t> lengths, std::size_t repeats) {
  diag::AttnBenchOptions o;
  o.q = q;
  o.lengths = std::move(lengths);
  o.repeats = repeats;
  std::vector<std::pair<std::size_t, double>> out;
  for (const auto& t : diag::bench_attention(o)) out.emplace_back(t.length, t.median);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "lensctr C++ core";
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);

  const auto release = py::call_guard<py::gil_scoped_release>();
  m.def("resolve_config", &resolve_config, py::arg("config_json"));
  m.def("config_hash", &hash_config, py::arg("config_json"));
  m.def("param_count", &param_count_json, py::arg("config_json"));
  m.def("generate", &generate_json, py::arg("spec_json"), py::arg("out_dir") = "", release);
  m.def("train", &train_json, py::arg("config_json"), py::arg("seed") = std::nullopt, py::arg("checkpoint") = "",
        release);
  m.def("ablate", &ablate_csv, py::arg("config_json"), py::arg("seeds") = std::vector<std::uint64_t>{}, release);
  m.def("predict_eval", &predict_eval, py::arg("checkpoint"), py::arg("dataset_dir"), release);
  m.def("grad_check_tiny", &grad_check_tiny, py::arg("condition") = "item_seq", py::arg("seed") = 1, release);
  m.def("bench_attention", &bench, py::arg("q") = 16, py::arg("lengths") = std::vector<std::size_t>{512, 1024, 2048},
        py::arg("repeats") = 5, release);
  m.def(
      "evaluate_auc",
      [](const std::vector<double>& s, const std::vector<double>& y) { return evaluate_auc(s, y); },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "pairwise_auc",
      [](const std::vector<double>& s, const std::vector<double>& y) { return pairwise_auc(s, y); },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "logloss", [](const std::vector<double>& p, const std::vector<double>& y) { return logloss(p, y); },
      py::arg("probs"), py::arg("labels"));
}

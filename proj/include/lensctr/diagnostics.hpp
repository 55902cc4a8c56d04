#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "lensctr/backbone.hpp"
#include "lensctr/params.hpp"

namespace lensctr::diag {

/// q=2, D=4, L=6, one layer, rank 2, full LENS with the given condition source.
ModelConfig tiny_config(ConditionSource source);

/// Uniform random records for `config`'s vocabulary, lengths in [min_len, l_max].
std::vector<SampleRecord> random_records(std::mt19937_64& rng, std::size_t n, const ModelConfig& config,
                                         std::size_t min_len = 0);

/// Gradient check of the BCE loss of a freshly built model. Every parameter is
/// redrawn from N(0, 0.3) first so zero-initialised modules are exercised, and
/// the first record of the batch has an empty history.
GradCheckReport grad_check_model(const ModelConfig& config, std::uint64_t seed, std::size_t batch_size = 4);

struct AttnBenchOptions {
  std::size_t q = 16;
  std::vector<std::size_t> lengths{512, 1024, 2048};
  std::size_t d_model = 32;
  std::size_t heads = 2;
  std::size_t batch = 8;
  std::size_t repeats = 5;
  std::uint64_t seed = 7;
};

struct AttnTiming {
  std::size_t length = 0;
  std::vector<double> seconds;  // one per repeat
  double median = 0.0;
};

/// Forward plus backward of one cross-attention layer with a query-specific
/// position bias over fully valid sequences of each length.
std::vector<AttnTiming> bench_attention(const AttnBenchOptions& options);

double median(std::vector<double> values);

/// Writes static_bias.csv (layer,query,column,bias), and for LENS models
/// tcpb_bias.csv (layer,item,query,column,bias) and tcqg_gate.csv
/// (item,query,dim,gate) for items 1..n_items. Column l_max - 1 is the most
/// recent behaviour. With the item_seq condition the sequence half of the
/// condition vector is zero. Returns the files written.
std::vector<std::filesystem::path> export_bias(const CtrModel& model, const std::filesystem::path& dir,
                                               std::size_t n_items);

}  // namespace lensctr::diag

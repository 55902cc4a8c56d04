#include "lensctr/synthdata.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "lensctr/config_io.hpp"
#include "lensctr/hash.hpp"
#include "lensctr/metrics.hpp"
#include "lensctr/tensor.hpp"

namespace lensctr::synth {

namespace {

constexpr double kStrongClickProb = 0.3;
constexpr double kHateProb = 0.1;
constexpr std::size_t kPilotUsers = 128;
constexpr std::size_t kContextCardinality = 24;
constexpr const char* kHeader =
    "user_id\titem_id\tlabel\ttime_index\tseq_items\tseq_actions\tcat_fields\tdense_fields";

/// Uniform double in [0, 1) from the top 53 bits; avoids implementation-defined
/// standard distributions so files match across standard libraries.
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double normal(std::mt19937_64& rng) {
  const double u1 = 1.0 - uniform01(rng), u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::vector<double> zipf_cdf(std::size_t n, double exponent) {
  std::vector<double> cdf(n);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) cdf[r] = (total += std::pow(static_cast<double>(r + 1), -exponent));
  for (double& c : cdf) c /= total;
  return cdf;
}

std::size_t sample_cdf(const std::vector<double>& cdf, double u) {
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct Samplers {
  std::vector<std::int64_t> by_rank;  // global popularity order
  std::vector<double> global_cdf;
  std::vector<std::vector<double>> type_cdf;
};

Samplers make_samplers(const DatasetSpec& spec, const World& world) {
  Samplers s;
  s.by_rank.resize(spec.n_items);
  for (std::size_t i = 1; i <= spec.n_items; ++i) {
    const auto rank = static_cast<std::size_t>(std::llround(world.item_popularity[i] * static_cast<double>(spec.n_items)));
    s.by_rank[rank] = static_cast<std::int64_t>(i);
  }
  s.global_cdf = zipf_cdf(spec.n_items, spec.zipf_exponent);
  for (const auto& items : world.items_by_type) {
    s.type_cdf.push_back(items.empty() ? std::vector<double>{} : zipf_cdf(items.size(), spec.zipf_exponent));
  }
  return s;
}

struct UserStream {
  std::vector<SampleRecord> records;
  std::vector<double> oracle;  // true click probability per record
  std::size_t positives = 0;
};

std::size_t records_for_user(const DatasetSpec& spec, std::size_t u) {
  return spec.n_samples / spec.n_users + (u < spec.n_samples % spec.n_users ? 1 : 0);
}

class Simulator {
 public:
  Simulator(const DatasetSpec& spec, const World& world, const Samplers& samplers)
      : spec_(spec), world_(world), samplers_(samplers) {}

  double logit(double base, std::size_t user, std::int64_t item, const std::vector<std::int64_t>& items,
               const std::vector<std::int64_t>& actions) const {
    const PlantedSignal& sig = spec_.signal;
    const std::size_t type = world_.item_type[static_cast<std::size_t>(item)];
    const std::size_t n = items.size();
    auto match = [&](std::size_t age) { return world_.item_type[static_cast<std::size_t>(items[n - 1 - age])] == type; };

    double recency = 0.0, decay = 1.0;
    for (std::size_t a = 0; a < std::min(n, sig.recency_window); ++a, decay *= sig.recency_decay) {
      if (match(a)) recency += decay * action_sign(actions[n - 1 - a]);
    }
    const auto [first, last] = world_.profile_windows[world_.profile(item)];
    double hits = 0.0;
    for (std::size_t a = first; a < std::min(n, last); ++a) hits += match(a) ? 1.0 : 0.0;
    const double profile_match = hits / static_cast<double>(last - first);

    const auto& pref = world_.user_types[user];
    const double meta = (type == pref[0] || type == pref[1]) ? 1.0 : 0.0;
    return base + world_.item_bias[static_cast<std::size_t>(item)] + sig.metadata_weight * meta +
           sig.recency_weight * recency + sig.target_match_weight * profile_match;
  }

  UserStream run(std::size_t user, double base, bool keep_records) const {
    std::mt19937_64 rng(mix_seed(spec_.seed, fnv1a64("user") ^ static_cast<std::uint64_t>(user)));
    const std::size_t n = records_for_user(spec_, user);
    const auto& pref = world_.user_types[user];
    std::vector<std::int64_t> items, actions;
    items.reserve(n + spec_.history_warmup);
    actions.reserve(n + spec_.history_warmup);
    std::vector<std::size_t> positives;  // indices into items

    UserStream out;
    if (keep_records) {
      out.records.reserve(n);
      out.oracle.reserve(n);
    }
    const std::size_t warmup = spec_.history_warmup;
    for (std::size_t step = 0; step < warmup + n; ++step) {
      const bool recorded = step >= warmup;
      const std::size_t k = step - (recorded ? warmup : step);
      // Fixed number of draws per exposure so streams stay aligned across bases.
      const double u_pref = uniform01(rng), u_which = uniform01(rng), u_type = uniform01(rng);
      const double u_item = uniform01(rng), u_click = uniform01(rng), u_action = uniform01(rng);

      std::int64_t item;
      std::size_t type = u_pref < spec_.preferred_type_prob ? pref[u_which < 0.5 ? 0 : 1]
                                                           : std::min(spec_.n_types - 1, static_cast<std::size_t>(u_type * static_cast<double>(spec_.n_types)));
      if (world_.items_by_type[type].empty()) {
        item = samplers_.by_rank[sample_cdf(samplers_.global_cdf, u_item)];
      } else {
        item = world_.items_by_type[type][sample_cdf(samplers_.type_cdf[type], u_item)];
      }

      const double p = sigmoid(logit(base, user, item, items, actions));
      const int label = u_click < p ? 1 : 0;
      const Action action = label ? (u_action < kStrongClickProb ? Action::kStrong : Action::kClick)
                                  : (u_action < kHateProb ? Action::kHate : Action::kSkip);
      if (recorded) out.positives += static_cast<std::size_t>(label);

      if (keep_records && recorded) {
        SampleRecord r;
        r.user_id = static_cast<std::int64_t>(user);
        r.item_id = item;
        r.label = label;
        r.time_index = static_cast<std::int64_t>(k);
        fill_history(r, items, actions, positives);
        fill_fields(r, user, item, k);
        out.records.push_back(std::move(r));
        out.oracle.push_back(p);
      }
      items.push_back(item);
      actions.push_back(static_cast<std::int64_t>(action));
      if (label) positives.push_back(items.size() - 1);
    }
    return out;
  }

 private:
  void fill_history(SampleRecord& r, const std::vector<std::int64_t>& items, const std::vector<std::int64_t>& actions,
                    const std::vector<std::size_t>& positives) const {
    const std::size_t l = spec_.l_max;
    if (spec_.protocol == HistoryProtocol::kClickOnly) {
      const std::size_t begin = positives.size() > l ? positives.size() - l : 0;
      for (std::size_t j = begin; j < positives.size(); ++j) {
        r.seq_items.push_back(items[positives[j]]);
        r.seq_actions.push_back(actions[positives[j]]);
      }
      return;
    }
    const std::size_t begin = items.size() > l ? items.size() - l : 0;
    r.seq_items.assign(items.begin() + static_cast<std::ptrdiff_t>(begin), items.end());
    if (spec_.protocol == HistoryProtocol::kTypedExposure) {
      r.seq_actions.assign(actions.begin() + static_cast<std::ptrdiff_t>(begin), actions.end());
    } else {
      r.seq_actions.assign(r.seq_items.size(), static_cast<std::int64_t>(Action::kSkip));
    }
  }

  void fill_fields(SampleRecord& r, std::size_t user, std::int64_t item, std::size_t k) const {
    const auto& pref = world_.user_types[user];
    const std::int64_t all_cat[3] = {
        static_cast<std::int64_t>(world_.item_type[static_cast<std::size_t>(item)]),
        static_cast<std::int64_t>(pref[0] * spec_.n_types + pref[1]),
        static_cast<std::int64_t>(k % kContextCardinality),
    };
    for (std::size_t f = 0; f < std::min<std::size_t>(spec_.n_nonseq_fields, 3); ++f) r.cat_fields.push_back(all_cat[f]);
    if (spec_.n_nonseq_fields >= 4) r.dense_fields.push_back(world_.item_popularity[static_cast<std::size_t>(item)]);
  }

  const DatasetSpec& spec_;
  const World& world_;
  const Samplers& samplers_;
};

double calibrate_base(const DatasetSpec& spec, const Simulator& sim) {
  const std::size_t pilot = std::min(spec.n_users, kPilotUsers);
  auto rate = [&](double base) {
    std::size_t pos = 0, total = 0;
    for (std::size_t u = 0; u < pilot; ++u) {
      pos += sim.run(u, base, false).positives;
      total += records_for_user(spec, u);
    }
    return total ? static_cast<double>(pos) / static_cast<double>(total) : 0.0;
  };
  double lo = -25.0, hi = 10.0;
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    (rate(mid) < spec.positive_rate ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::string join_ints(const std::vector<std::int64_t>& v) {
  std::string s;
  char buf[24];
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v[i]);
    s.append(buf, end);
  }
  return s;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  char buf[40];
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v[i]);
    s.append(buf, end);
  }
  return s;
}

[[noreturn]] void parse_error(const std::string& source, std::uint64_t offset, const std::string& msg) {
  throw std::runtime_error(source + ": byte " + std::to_string(offset) + ": " + msg);
}

template <typename T>
T parse_number(std::string_view text, const std::string& source, std::uint64_t offset, const char* what) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    parse_error(source, offset, std::string("bad ") + what + " '" + std::string(text) + "'");
  }
  return value;
}

template <typename T>
std::vector<T> parse_list(std::string_view text, const std::string& source, std::uint64_t offset, const char* what) {
  std::vector<T> out;
  if (text.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = text.find(',', start);
    out.push_back(parse_number<T>(text.substr(start, comma - start), source, offset, what));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

SampleRecord parse_line(std::string_view line, const std::string& source, std::uint64_t offset) {
  std::string_view cols[8];
  std::size_t n = 0, start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (n == 8) parse_error(source, offset, "more than 8 tab-separated fields");
    cols[n++] = line.substr(start, tab - start);
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  if (n != 8) parse_error(source, offset, "expected 8 tab-separated fields, got " + std::to_string(n));
  SampleRecord r;
  r.user_id = parse_number<std::int64_t>(cols[0], source, offset, "user_id");
  r.item_id = parse_number<std::int64_t>(cols[1], source, offset, "item_id");
  r.label = parse_number<int>(cols[2], source, offset, "label");
  if (r.label != 0 && r.label != 1) parse_error(source, offset, "label must be 0 or 1");
  r.time_index = parse_number<std::int64_t>(cols[3], source, offset, "time_index");
  r.seq_items = parse_list<std::int64_t>(cols[4], source, offset, "sequence item");
  r.seq_actions = parse_list<std::int64_t>(cols[5], source, offset, "action");
  if (r.seq_items.size() != r.seq_actions.size()) parse_error(source, offset, "sequence item/action counts differ");
  for (std::int64_t a : r.seq_actions) {
    if (a < 0 || a >= kActionCount) parse_error(source, offset, "action type out of range");
  }
  r.cat_fields = parse_list<std::int64_t>(cols[6], source, offset, "categorical field");
  r.dense_fields = parse_list<double>(cols[7], source, offset, "dense field");
  return r;
}

std::uint64_t file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return fnv1a64(ss.str());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::string to_string(HistoryProtocol p) {
  switch (p) {
    case HistoryProtocol::kTypedExposure: return "typed_exposure";
    case HistoryProtocol::kAllExposure: return "all_exposure";
    case HistoryProtocol::kClickOnly: return "click_only";
  }
  return "typed_exposure";
}

HistoryProtocol parse_history_protocol(const std::string& s) {
  if (s == "typed_exposure") return HistoryProtocol::kTypedExposure;
  if (s == "all_exposure") return HistoryProtocol::kAllExposure;
  if (s == "click_only") return HistoryProtocol::kClickOnly;
  throw ValidationError("unknown history protocol '" + s + "'");
}

double action_sign(std::int64_t action) {
  switch (static_cast<Action>(action)) {
    case Action::kSkip: return -0.3;
    case Action::kClick: return 1.0;
    case Action::kStrong: return 1.5;
    case Action::kHate: return -1.5;
  }
  return 0.0;
}

void DatasetSpec::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ValidationError("dataset spec: " + msg);
  };
  require(n_items >= 1 && n_users >= 1 && n_samples >= 1 && l_max >= 1, "sizes must be positive");
  require(n_types >= 2, "n_types must be at least 2");
  require(n_nonseq_fields <= 4, "n_nonseq_fields must be in [0, 4]");
  require(target_samples_per_item > 0.0, "target_samples_per_item must be positive");
  const double density = static_cast<double>(n_samples) / static_cast<double>(n_items);
  require(std::abs(density - target_samples_per_item) <= 0.15 * target_samples_per_item,
          "n_samples / n_items = " + std::to_string(density) + " is more than 15% away from target " +
              std::to_string(target_samples_per_item));
  require(positive_rate > 0.0 && positive_rate < 1.0, "positive_rate must lie in (0, 1)");
  require(zipf_exponent > 0.0, "zipf_exponent must be positive");
  require(preferred_type_prob >= 0.0 && preferred_type_prob <= 1.0, "preferred_type_prob must lie in [0, 1]");
  require(eval_fraction >= 0.0 && eval_fraction < 1.0, "eval_fraction must lie in [0, 1)");
  const std::size_t k = signal.position_profile_count;
  require(k >= 1 && k <= 16, "position_profile_count must be in [1, 16]");
  require((std::size_t{1} << k) - 1 <= l_max, "l_max too short for " + std::to_string(k) + " position profiles");
  require(signal.recency_decay >= 0.0 && signal.recency_decay <= 1.0, "recency_decay must lie in [0, 1]");
  require(signal.item_bias_std >= 0.0, "item_bias_std must be non-negative");
}

VocabConfig DatasetSpec::vocab() const {
  VocabConfig v;
  v.n_items = n_items;
  const std::size_t cards[3] = {n_types, n_types * n_types, kContextCardinality};
  for (std::size_t f = 0; f < std::min<std::size_t>(n_nonseq_fields, 3); ++f) v.cat_cardinalities.push_back(cards[f]);
  v.n_dense = n_nonseq_fields >= 4 ? 1 : 0;
  return v;
}

World build_world(const DatasetSpec& spec) {
  World w;
  const std::size_t n = spec.n_items;
  w.item_type.assign(n + 1, 0);
  w.item_bias.assign(n + 1, 0.0);
  w.item_popularity.assign(n + 1, 0.0);
  w.items_by_type.resize(spec.n_types);

  std::vector<std::int64_t> order(n);
  std::iota(order.begin(), order.end(), 1);
  std::mt19937_64 perm_rng(mix_seed(spec.seed, fnv1a64("popularity")));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[perm_rng() % i]);
  for (std::size_t rank = 0; rank < n; ++rank) {
    w.item_popularity[static_cast<std::size_t>(order[rank])] = static_cast<double>(rank) / static_cast<double>(n);
  }
  for (std::size_t i = 1; i <= n; ++i) {
    std::mt19937_64 rng(mix_seed(spec.seed, fnv1a64("item") ^ i));
    w.item_type[i] = rng() % spec.n_types;
    w.item_bias[i] = spec.signal.item_bias_std * normal(rng);
  }
  for (std::int64_t item : order) w.items_by_type[w.item_type[static_cast<std::size_t>(item)]].push_back(item);

  w.user_types.resize(spec.n_users);
  for (std::size_t u = 0; u < spec.n_users; ++u) {
    std::mt19937_64 rng(mix_seed(spec.seed, fnv1a64("prefs") ^ u));
    const std::size_t a = rng() % spec.n_types;
    std::size_t b = rng() % (spec.n_types - 1);
    if (b >= a) ++b;
    w.user_types[u] = {std::min(a, b), std::max(a, b)};
  }

  const std::size_t k = spec.signal.position_profile_count;
  const std::size_t span = std::min<std::size_t>(spec.l_max, 64);
  const std::size_t unit = std::max<std::size_t>(1, span / ((std::size_t{1} << k) - 1));
  for (std::size_t p = 0; p < k; ++p) {
    w.profile_windows.emplace_back(unit * ((std::size_t{1} << p) - 1), unit * ((std::size_t{1} << (p + 1)) - 1));
  }
  return w;
}

Dataset generate(const DatasetSpec& spec) {
  spec.validate();
  const World world = build_world(spec);
  const Samplers samplers = make_samplers(spec, world);
  const Simulator sim(spec, world, samplers);

  Dataset data;
  data.spec = spec;
  data.stats.base_logit = calibrate_base(spec, sim);

  std::vector<UserStream> streams(spec.n_users);
  std::size_t workers = spec.threads ? spec.threads : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, spec.n_users);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t u; (u = next.fetch_add(1)) < spec.n_users;) streams[u] = sim.run(u, data.stats.base_logit, true);
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  std::vector<double> eval_oracle, eval_labels;
  double train_pos = 0.0, eval_pos = 0.0, total_len = 0.0;
  for (UserStream& s : streams) {
    const std::size_t n = s.records.size();
    const auto n_eval = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.eval_fraction + 0.5));
    for (std::size_t k = 0; k < n; ++k) {
      SampleRecord& r = s.records[k];
      total_len += static_cast<double>(r.seq_items.size());
      if (k + n_eval >= n) {
        eval_pos += r.label;
        eval_oracle.push_back(s.oracle[k]);
        eval_labels.push_back(r.label);
        data.eval.push_back(std::move(r));
      } else {
        train_pos += r.label;
        data.train.push_back(std::move(r));
      }
    }
  }
  DatasetStats& st = data.stats;
  st.n_train = data.train.size();
  st.n_eval = data.eval.size();
  st.samples_per_item = static_cast<double>(st.n_train + st.n_eval) / static_cast<double>(spec.n_items);
  st.train_positive_rate = st.n_train ? train_pos / static_cast<double>(st.n_train) : 0.0;
  st.eval_positive_rate = st.n_eval ? eval_pos / static_cast<double>(st.n_eval) : 0.0;
  st.mean_valid_len = total_len / static_cast<double>(std::max<std::size_t>(1, st.n_train + st.n_eval));
  if (eval_pos > 0.0 && eval_pos < static_cast<double>(st.n_eval)) st.oracle_eval_auc = evaluate_auc(eval_oracle, eval_labels);
  if (std::abs(st.samples_per_item - spec.target_samples_per_item) > 0.15 * spec.target_samples_per_item) {
    throw std::runtime_error("realised samples/item " + std::to_string(st.samples_per_item) + " misses target " +
                             std::to_string(spec.target_samples_per_item));
  }
  return data;
}

void write_records(std::ostream& out, std::span<const SampleRecord> records) {
  out << '#' << kSchemaVersion << '\t' << kHeader << '\n';
  std::string line;
  for (const SampleRecord& r : records) {
    line.clear();
    line += std::to_string(r.user_id) + '\t' + std::to_string(r.item_id) + '\t' + std::to_string(r.label) + '\t' +
            std::to_string(r.time_index) + '\t' + join_ints(r.seq_items) + '\t' + join_ints(r.seq_actions) + '\t' +
            join_ints(r.cat_fields) + '\t' + join_doubles(r.dense_fields) + '\n';
    out << line;
  }
  if (!out) throw std::runtime_error("failed writing dataset records");
}

std::vector<SampleRecord> read_records(std::istream& in, const std::string& source) {
  RecordReader reader(in, source);
  std::vector<SampleRecord> out;
  while (auto r = reader.next()) out.push_back(std::move(*r));
  return out;
}

RecordReader::RecordReader(std::istream& in, std::string source, std::size_t shuffle_buffer, std::uint64_t seed)
    : in_(in), source_(std::move(source)), capacity_(shuffle_buffer), rng_(seed) {}

std::optional<SampleRecord> RecordReader::read_one() {
  std::string line;
  while (true) {
    const std::uint64_t start = offset_;
    if (!std::getline(in_, line)) {
      if (!header_checked_) parse_error(source_, 0, "missing header line");
      return std::nullopt;
    }
    offset_ += line.size() + 1;
    if (in_.eof()) parse_error(source_, start, "truncated record (no trailing newline)");
    if (!header_checked_) {
      const std::string expect = std::string("#") + kSchemaVersion + '\t' + kHeader;
      if (line != expect) parse_error(source_, start, "schema mismatch: expected header '" + expect + "'");
      header_checked_ = true;
      continue;
    }
    if (line.empty()) continue;
    return parse_line(line, source_, start);
  }
}

std::optional<SampleRecord> RecordReader::next() {
  if (capacity_ == 0) return read_one();
  while (buffer_.size() < capacity_) {
    auto r = read_one();
    if (!r) break;
    buffer_.push_back(std::move(*r));
  }
  if (buffer_.empty()) return std::nullopt;
  const std::size_t j = rng_() % buffer_.size();
  std::swap(buffer_[j], buffer_.back());
  SampleRecord r = std::move(buffer_.back());
  buffer_.pop_back();
  return r;
}

std::vector<SampleRecord> RecordReader::next_batch(std::size_t n) {
  std::vector<SampleRecord> out;
  while (out.size() < n) {
    auto r = next();
    if (!r) break;
    out.push_back(std::move(*r));
  }
  return out;
}

void write_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::pair<const char*, const std::vector<SampleRecord>*> files[] = {{"train.tsv", &data.train},
                                                                             {"eval.tsv", &data.eval}};
  nlohmann::ordered_json manifest;
  manifest["schema_version"] = kSchemaVersion;
  manifest["spec"] = to_json(data.spec);
  manifest["spec"].erase("threads");  // output does not depend on it
  const DatasetStats& st = data.stats;
  manifest["stats"] = {{"n_train", st.n_train},
                       {"n_eval", st.n_eval},
                       {"samples_per_item", st.samples_per_item},
                       {"train_positive_rate", st.train_positive_rate},
                       {"eval_positive_rate", st.eval_positive_rate},
                       {"mean_valid_len", st.mean_valid_len},
                       {"base_logit", st.base_logit},
                       {"oracle_eval_auc", st.oracle_eval_auc}};
  for (const auto& [name, records] : files) {
    const auto path = dir / name;
    {
      std::ofstream out(path, std::ios::binary);
      if (!out) throw std::runtime_error("cannot write " + path.string());
      write_records(out, *records);
    }
    manifest["files"][name] = {{"records", records->size()}, {"fnv1a64", hex64(file_hash(path))}};
  }
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << manifest.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream min(manifest_path);
  if (!min) throw std::runtime_error("missing manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(min);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(manifest_path.string() + ": " + e.what());
  }
  const std::string version = manifest.value("schema_version", "");
  if (version != kSchemaVersion) {
    throw std::runtime_error(manifest_path.string() + ": schema mismatch: '" + version + "', expected '" +
                             kSchemaVersion + "'");
  }
  Dataset data;
  data.spec = dataset_spec_from_json(manifest.at("spec"));
  const auto& st = manifest.at("stats");
  data.stats.n_train = st.at("n_train").get<std::size_t>();
  data.stats.n_eval = st.at("n_eval").get<std::size_t>();
  data.stats.samples_per_item = st.at("samples_per_item").get<double>();
  data.stats.train_positive_rate = st.at("train_positive_rate").get<double>();
  data.stats.eval_positive_rate = st.at("eval_positive_rate").get<double>();
  data.stats.mean_valid_len = st.at("mean_valid_len").get<double>();
  data.stats.base_logit = st.at("base_logit").get<double>();
  data.stats.oracle_eval_auc = st.at("oracle_eval_auc").get<double>();
  for (auto [name, target] : {std::pair{"train.tsv", &data.train}, std::pair{"eval.tsv", &data.eval}}) {
    std::ifstream in(dir / name, std::ios::binary);
    if (!in) throw std::runtime_error("missing " + (dir / name).string());
    *target = read_records(in, (dir / name).string());
    const auto expect = manifest.at("files").at(name).at("records").get<std::size_t>();
    if (target->size() != expect) {
      throw std::runtime_error((dir / name).string() + ": " + std::to_string(target->size()) +
                               " records, manifest says " + std::to_string(expect));
    }
  }
  return data;
}

bool click_only_consistent(const std::vector<SampleRecord>& records) {
  std::map<std::int64_t, std::vector<const SampleRecord*>> by_user;
  for (const SampleRecord& r : records) by_user[r.user_id].push_back(&r);
  for (auto& [user, rs] : by_user) {
    std::sort(rs.begin(), rs.end(), [](auto* a, auto* b) { return a->time_index < b->time_index; });
    std::vector<std::int64_t> clicked;
    for (const SampleRecord* r : rs) {
      const std::size_t n = r->seq_items.size();
      if (n > clicked.size()) return false;
      if (!std::equal(r->seq_items.begin(), r->seq_items.end(), clicked.end() - static_cast<std::ptrdiff_t>(n))) return false;
      for (std::int64_t a : r->seq_actions) {
        if (!is_positive(a)) return false;
      }
      if (r->label) clicked.push_back(r->item_id);
    }
  }
  return true;
}

}  // namespace lensctr::synth

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace lensctr {

/// The four behaviour categories of a typed exposure history.
enum class Action : std::int8_t { kSkip = 0, kClick = 1, kStrong = 2, kHate = 3 };
inline constexpr std::int64_t kActionCount = 4;
inline constexpr std::int64_t kPaddingItem = 0;
inline constexpr std::int64_t kPaddingAction = -1;

inline bool is_positive(std::int64_t action) {
  return action == static_cast<std::int64_t>(Action::kClick) || action == static_cast<std::int64_t>(Action::kStrong);
}

/// One example: candidate, label, behaviour sequence (oldest first) and
/// non-sequential fields.
struct SampleRecord {
  std::int64_t user_id = 0;
  std::int64_t item_id = 0;
  int label = 0;
  std::int64_t time_index = 0;
  std::vector<std::int64_t> seq_items;
  std::vector<std::int64_t> seq_actions;
  std::vector<std::int64_t> cat_fields;
  std::vector<double> dense_fields;

  std::size_t valid_len() const { return seq_items.size(); }
  bool operator==(const SampleRecord&) const = default;
};

/// Sequence side of a batch, stored [B x width] with valid tokens first.
/// Positions >= valid_len hold kPaddingItem / kPaddingAction.
struct SequenceBatch {
  std::size_t batch = 0;
  std::size_t width = 0;
  std::vector<std::int64_t> item_ids;
  std::vector<std::int64_t> action_types;
  std::vector<std::size_t> valid_len;
};

/// Model input assembled from records.
struct Batch {
  std::size_t size = 0;
  std::vector<std::int64_t> target;
  SequenceBatch seq;
  std::size_t n_cat = 0;
  std::size_t n_dense = 0;
  std::vector<std::int64_t> cat_fields;  // [size x n_cat]
  std::vector<double> dense_fields;      // [size x n_dense]
  std::vector<double> labels;
};

/// Packs records into a batch. Sequences longer than l_max keep their most
/// recent l_max tokens. The sequence width is the longest kept sequence (at
/// least 1) unless `pad_to_lmax` is set.
Batch make_batch(std::span<const SampleRecord> records, std::size_t l_max, bool pad_to_lmax = false);

}  // namespace lensctr

#include "lensctr/record.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace lensctr {

Batch make_batch(std::span<const SampleRecord> records, std::size_t l_max, bool pad_to_lmax) {
  Batch b;
  b.size = records.size();
  if (records.empty()) return b;
  b.n_cat = records.front().cat_fields.size();
  b.n_dense = records.front().dense_fields.size();
  std::size_t width = pad_to_lmax ? l_max : 1;
  for (const SampleRecord& r : records) {
    if (r.seq_items.size() != r.seq_actions.size()) {
      throw std::invalid_argument("record for user " + std::to_string(r.user_id) +
                                  " has mismatched item/action sequence lengths");
    }
    if (r.cat_fields.size() != b.n_cat || r.dense_fields.size() != b.n_dense) {
      throw std::invalid_argument("records in one batch disagree on non-sequential field counts");
    }
    width = std::max(width, std::min(r.seq_items.size(), l_max));
  }
  b.seq.batch = b.size;
  b.seq.width = width;
  b.seq.item_ids.assign(b.size * width, kPaddingItem);
  b.seq.action_types.assign(b.size * width, kPaddingAction);
  b.seq.valid_len.resize(b.size);
  b.target.resize(b.size);
  b.labels.resize(b.size);
  b.cat_fields.reserve(b.size * b.n_cat);
  b.dense_fields.reserve(b.size * b.n_dense);
  for (std::size_t i = 0; i < b.size; ++i) {
    const SampleRecord& r = records[i];
    const std::size_t keep = std::min(r.seq_items.size(), l_max);
    const std::size_t skip = r.seq_items.size() - keep;
    std::copy_n(r.seq_items.begin() + static_cast<std::ptrdiff_t>(skip), keep, b.seq.item_ids.begin() + i * width);
    std::copy_n(r.seq_actions.begin() + static_cast<std::ptrdiff_t>(skip), keep,
                b.seq.action_types.begin() + i * width);
    b.seq.valid_len[i] = keep;
    b.target[i] = r.item_id;
    b.labels[i] = r.label;
    b.cat_fields.insert(b.cat_fields.end(), r.cat_fields.begin(), r.cat_fields.end());
    b.dense_fields.insert(b.dense_fields.end(), r.dense_fields.begin(), r.dense_fields.end());
  }
  return b;
}

}  // namespace lensctr

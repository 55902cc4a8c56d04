#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>

#include "lensctr/tape.hpp"

namespace lensctr {

enum class InitKind { kZeros, kOnes, kNormal, kXavierUniform };

struct InitSpec {
  InitKind kind = InitKind::kZeros;
  double scale = 0.0;  // std for kNormal; ignored otherwise

  static InitSpec zeros() { return {InitKind::kZeros, 0.0}; }
  static InitSpec ones() { return {InitKind::kOnes, 0.0}; }
  static InitSpec normal(double std) { return {InitKind::kNormal, std}; }
  static InitSpec xavier() { return {InitKind::kXavierUniform, 0.0}; }
  std::string describe() const;
};

struct Parameter {
  std::string name;
  num::Tensor value;
  InitSpec init;
};

/// Named dense parameters in declaration order. References returned by add()
/// and at() stay valid for the lifetime of the store.
class ParameterStore {
 public:
  num::Tensor& add(const std::string& name, num::Shape shape, InitSpec init);

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  num::Tensor& at(const std::string& name);
  const num::Tensor& at(const std::string& name) const;
  const Parameter& entry(const std::string& name) const;

  std::deque<Parameter>& entries() { return params_; }
  const std::deque<Parameter>& entries() const { return params_; }

  /// Fills every parameter from its InitSpec. Each tensor draws from its own
  /// stream seeded by (seed, name), so adding a parameter never perturbs others.
  void initialize(std::uint64_t seed);
  void zero_grad();
  void set_requires_grad(bool on);
  std::size_t total_size() const;
  /// Sum of sizes over parameters whose name starts with `prefix`.
  std::size_t size_with_prefix(const std::string& prefix) const;

 private:
  std::deque<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t entries_checked = 0;
};

using ScalarFn = std::function<num::Var(num::Tape&)>;

/// Compares reverse-mode gradients of `fn` against central differences for
/// every entry of every parameter in `store`. Relative error per entry is
/// |a - n| / max(1, |a|, |n|). Throws on a non-finite loss.
GradCheckReport grad_check(const ScalarFn& fn, ParameterStore& store, double step = 1e-5);

}  // namespace lensctr

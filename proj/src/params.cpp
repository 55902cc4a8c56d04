#include "lensctr/params.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "lensctr/hash.hpp"

namespace lensctr {

std::string InitSpec::describe() const {
  std::ostringstream os;
  switch (kind) {
    case InitKind::kZeros: return "zeros";
    case InitKind::kOnes: return "ones";
    case InitKind::kNormal: os << "normal(0," << scale << ")"; return os.str();
    case InitKind::kXavierUniform: return "xavier_uniform";
  }
  return "unknown";
}

num::Tensor& ParameterStore::add(const std::string& name, num::Shape shape, InitSpec init) {
  if (index_.count(name)) throw std::logic_error("duplicate parameter '" + name + "'");
  index_.emplace(name, params_.size());
  params_.push_back(Parameter{name, num::Tensor(std::move(shape)), init});
  return params_.back().value;
}

num::Tensor& ParameterStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return params_[it->second].value;
}

const num::Tensor& ParameterStore::at(const std::string& name) const { return entry(name).value; }

const Parameter& ParameterStore::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return params_[it->second];
}

void ParameterStore::initialize(std::uint64_t seed) {
  for (Parameter& p : params_) {
    std::mt19937_64 rng(mix_seed(seed, fnv1a64(p.name)));
    auto values = p.value.values();
    switch (p.init.kind) {
      case InitKind::kZeros: std::fill(values.begin(), values.end(), 0.0); break;
      case InitKind::kOnes: std::fill(values.begin(), values.end(), 1.0); break;
      case InitKind::kNormal: {
        std::normal_distribution<double> dist(0.0, p.init.scale);
        for (double& v : values) v = dist(rng);
        break;
      }
      case InitKind::kXavierUniform: {
        const auto& s = p.value.shape();
        const double fan_in = s.size() >= 2 ? static_cast<double>(s[s.size() - 2]) : 1.0;
        const double fan_out = s.empty() ? 1.0 : static_cast<double>(s.back());
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (double& v : values) v = dist(rng);
        break;
      }
    }
  }
}

void ParameterStore::zero_grad() {
  for (Parameter& p : params_) p.value.zero_grad();
}

void ParameterStore::set_requires_grad(bool on) {
  for (Parameter& p : params_) p.value.set_requires_grad(on);
}

std::size_t ParameterStore::total_size() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.value.numel();
  return n;
}

std::size_t ParameterStore::size_with_prefix(const std::string& prefix) const {
  std::size_t n = 0;
  for (const Parameter& p : params_) {
    if (p.name.compare(0, prefix.size(), prefix) == 0) n += p.value.numel();
  }
  return n;
}

GradCheckReport grad_check(const ScalarFn& fn, ParameterStore& store, double step) {
  auto evaluate = [&]() {
    num::Tape tape;
    const double v = fn(tape).value()[0];
    if (!std::isfinite(v)) throw std::runtime_error("grad_check: non-finite loss");
    return v;
  };

  store.set_requires_grad(true);
  {
    num::Tape tape;
    num::Var loss = fn(tape);
    if (loss.numel() != 1) throw std::invalid_argument("grad_check: function must return a scalar");
    if (!std::isfinite(loss.value()[0])) throw std::runtime_error("grad_check: non-finite loss");
    tape.backward(loss);
  }

  GradCheckReport report;
  for (Parameter& p : store.entries()) {
    auto values = p.value.values();
    auto grads = p.value.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = evaluate();
      values[i] = saved - step;
      const double down = evaluate();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = grads[i];
      const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
      const double err = std::abs(analytic - numeric) / denom;
      ++report.entries_checked;
      if (err > report.max_rel_error || report.worst_param.empty()) {
        if (err >= report.max_rel_error) {
          report.max_rel_error = err;
          report.worst_param = p.name;
          report.worst_index = i;
          report.analytic = analytic;
          report.numeric = numeric;
        }
      }
    }
  }
  store.zero_grad();
  return report;
}

}  // namespace lensctr

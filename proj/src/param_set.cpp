#include "metastyle/param_set.hpp"

#include "metastyle/error.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace metastyle {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_mix(std::uint64_t& h, std::string_view bytes) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
}

std::string shape_string(const torch::Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

}  // namespace

void ParamSet::add(std::string name, torch::Tensor value) {
  if (contains(name)) {
    throw ParameterError("duplicate parameter name '" + name + "'");
  }
  entries_.emplace_back(std::move(name), std::move(value));
}

ParamSet ParamSet::with(std::string_view name, torch::Tensor value) const {
  ParamSet out = *this;
  for (auto& [n, t] : out.entries_) {
    if (n == name) {
      if (!t.sizes().equals(value.sizes())) {
        throw ParameterError("replacement for '" + n + "' has shape " + shape_string(value) +
                             ", expected " + shape_string(t));
      }
      t = std::move(value);
      return out;
    }
  }
  throw ParameterError("no parameter named '" + std::string(name) + "'");
}

const torch::Tensor& ParamSet::at(std::string_view name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw ParameterError("no parameter named '" + std::string(name) + "'");
}

bool ParamSet::contains(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return true;
  }
  return false;
}

std::vector<torch::Tensor> ParamSet::tensors() const {
  std::vector<torch::Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.first);
  return out;
}

std::string ParamSet::schema_hash() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& [name, t] : entries_) {
    fnv_mix(h, name);
    fnv_mix(h, "[");
    for (auto d : t.sizes()) {
      fnv_mix(h, std::to_string(d));
      fnv_mix(h, ",");
    }
    fnv_mix(h, "]");
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

bool ParamSet::same_schema(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first != other.entries_[i].first) return false;
    if (!entries_[i].second.sizes().equals(other.entries_[i].second.sizes())) return false;
  }
  return true;
}

ParamSet ParamSet::detached_clone() const {
  ParamSet out;
  out.entries_.reserve(entries_.size());
  for (const auto& [n, t] : entries_) out.entries_.emplace_back(n, t.detach().clone());
  return out;
}

ParamSet ParamSet::as_leaves() const {
  ParamSet out;
  out.entries_.reserve(entries_.size());
  for (const auto& [n, t] : entries_) {
    out.entries_.emplace_back(n, t.detach().clone().set_requires_grad(true));
  }
  return out;
}

ParamSet ParamSet::to(torch::ScalarType dtype) const {
  ParamSet out;
  out.entries_.reserve(entries_.size());
  for (const auto& [n, t] : entries_) out.entries_.emplace_back(n, t.detach().to(dtype).clone());
  return out;
}

ParamSet ParamSet::rebuild(std::vector<torch::Tensor> values) const {
  if (values.size() != entries_.size()) {
    throw ParameterError("rebuild expects " + std::to_string(entries_.size()) + " tensors, got " +
                         std::to_string(values.size()));
  }
  ParamSet out;
  out.entries_.reserve(entries_.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!values[i].sizes().equals(entries_[i].second.sizes())) {
      throw ParameterError("rebuild: '" + entries_[i].first + "' has shape " +
                           shape_string(values[i]) + ", expected " +
                           shape_string(entries_[i].second));
    }
    out.entries_.emplace_back(entries_[i].first, std::move(values[i]));
  }
  return out;
}

bool ParamSet::all_finite() const {
  for (const auto& e : entries_) {
    if (!torch::isfinite(e.second).all().item<bool>()) return false;
  }
  return true;
}

bool ParamSet::bit_equal(const ParamSet& other) const {
  if (!same_schema(other)) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto a = entries_[i].second.detach().contiguous();
    auto b = other.entries_[i].second.detach().contiguous();
    if (a.scalar_type() != b.scalar_type()) return false;
    if (std::memcmp(a.data_ptr(), b.data_ptr(), a.numel() * a.element_size()) != 0) return false;
  }
  return true;
}

void require_same_schema(const ParamSet& a, const ParamSet& b, std::string_view what) {
  if (!a.same_schema(b)) {
    throw ParameterError(std::string(what) + ": schema mismatch (" + a.schema_hash() + " vs " +
                         b.schema_hash() + ")");
  }
}

std::int64_t param_count(const ParamSet& params) {
  std::int64_t n = 0;
  for (const auto& e : params.entries()) n += e.second.numel();
  return n;
}

ParamSet sgd_step(const ParamSet& params, const ParamSet& grads, double lr) {
  require_same_schema(params, grads, "sgd_step");
  std::vector<torch::Tensor> out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back(params.entries()[i].second - lr * grads.entries()[i].second);
  }
  return params.rebuild(std::move(out));
}

double global_norm(const ParamSet& values) {
  double sq = 0.0;
  for (const auto& e : values.entries()) {
    sq += e.second.detach().to(torch::kDouble).square().sum().item<double>();
  }
  return std::sqrt(sq);
}

}  // namespace metastyle

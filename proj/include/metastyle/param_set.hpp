#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace metastyle {

// Ordered collection of named parameter arrays.
//
// A ParamSet is treated as immutable once built: every operation returning a
// ParamSet produces fresh tensors, so copies may share storage safely. Entries
// may carry autograd history (e.g. adapted weights that still depend on the
// meta-parameters), which is what makes second-order meta-gradients possible.
class ParamSet {
 public:
  using Entry = std::pair<std::string, torch::Tensor>;

  ParamSet() = default;

  // Appends an entry; throws ParameterError on duplicate names.
  void add(std::string name, torch::Tensor value);

  // Copy with one entry replaced (same shape required).
  ParamSet with(std::string_view name, torch::Tensor value) const;

  const torch::Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<torch::Tensor> tensors() const;
  std::vector<std::string> names() const;
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  // Hex digest over (name, shape) pairs in order. Independent of values and dtype.
  std::string schema_hash() const;
  bool same_schema(const ParamSet& other) const;

  // Fresh storage, no autograd history.
  ParamSet detached_clone() const;
  // Fresh leaf tensors with requires_grad set.
  ParamSet as_leaves() const;
  ParamSet to(torch::ScalarType dtype) const;

  // Rebuilds a ParamSet with this schema from a list of tensors in entry order.
  ParamSet rebuild(std::vector<torch::Tensor> values) const;

  bool all_finite() const;
  bool bit_equal(const ParamSet& other) const;

 private:
  std::vector<Entry> entries_;
};

// Throws ParameterError naming `what` unless both sets share a schema.
void require_same_schema(const ParamSet& a, const ParamSet& b, std::string_view what);

std::int64_t param_count(const ParamSet& params);

// Elementwise params - lr * grads.
ParamSet sgd_step(const ParamSet& params, const ParamSet& grads, double lr);

// sqrt of the sum of squares of every entry.
double global_norm(const ParamSet& values);

}  // namespace metastyle

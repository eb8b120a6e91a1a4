#pragma once

#include "metastyle/param_set.hpp"

#include <cstdint>

namespace metastyle {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment estimates, one entry per parameter, plus the step count.
struct AdamState {
  ParamSet m;
  ParamSet v;
  std::int64_t step = 0;

  static AdamState zeros_like(const ParamSet& params);

  // Flattened as "m/<name>", "v/<name>" and a one-element "step" entry.
  ParamSet to_param_set() const;
  static AdamState from_param_set(const ParamSet& flat);
};

// Bias-corrected Adam update; returns the new parameters and advances state.
// Gradients are detached; the returned parameters carry no autograd history.
ParamSet adam_step(const ParamSet& params, const ParamSet& grads, AdamState& state,
                   const AdamOptions& options);

}  // namespace metastyle

#include "metastyle/adam.hpp"

#include "metastyle/error.hpp"

#include <cmath>

namespace metastyle {

AdamState AdamState::zeros_like(const ParamSet& params) {
  AdamState s;
  for (const auto& [name, t] : params.entries()) {
    s.m.add(name, torch::zeros_like(t.detach()));
    s.v.add(name, torch::zeros_like(t.detach()));
  }
  return s;
}

ParamSet AdamState::to_param_set() const {
  ParamSet flat;
  for (const auto& [name, t] : m.entries()) flat.add("m/" + name, t);
  for (const auto& [name, t] : v.entries()) flat.add("v/" + name, t);
  // float32 represents every step count we will reach (< 2^24) exactly.
  flat.add("step", torch::tensor({static_cast<float>(step)}));
  return flat;
}

AdamState AdamState::from_param_set(const ParamSet& flat) {
  AdamState s;
  for (const auto& [name, t] : flat.entries()) {
    if (name.starts_with("m/")) {
      s.m.add(name.substr(2), t);
    } else if (name.starts_with("v/")) {
      s.v.add(name.substr(2), t);
    } else if (name == "step") {
      s.step = static_cast<std::int64_t>(t.item<double>());
    } else {
      throw ParameterError("unexpected optimizer state entry '" + name + "'");
    }
  }
  require_same_schema(s.m, s.v, "optimizer state");
  return s;
}

ParamSet adam_step(const ParamSet& params, const ParamSet& grads, AdamState& state,
                   const AdamOptions& options) {
  require_same_schema(params, grads, "adam_step gradients");
  if (state.m.empty() && !params.empty()) state = AdamState::zeros_like(params);
  require_same_schema(params, state.m, "adam_step state");

  torch::NoGradGuard no_grad;
  const std::int64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(options.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(options.beta2, static_cast<double>(t));

  std::vector<torch::Tensor> new_p, new_m, new_v;
  new_p.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params.entries()[i].second;
    const auto g = grads.entries()[i].second.detach().to(p.scalar_type());
    auto m = options.beta1 * state.m.entries()[i].second + (1.0 - options.beta1) * g;
    auto v = options.beta2 * state.v.entries()[i].second + (1.0 - options.beta2) * g * g;
    auto update = (m / bc1) / ((v / bc2).sqrt() + options.eps);
    new_p.push_back(p.detach() - options.lr * update);
    new_m.push_back(std::move(m));
    new_v.push_back(std::move(v));
  }
  state.m = state.m.rebuild(std::move(new_m));
  state.v = state.v.rebuild(std::move(new_v));
  state.step = t;
  return params.rebuild(std::move(new_p));
}

}  // namespace metastyle

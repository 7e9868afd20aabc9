#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include <nlohmann/json.hpp>

#include "deflare/model/params.hpp"

namespace deflare {

// teacher <- alpha * teacher + (1 - alpha) * student
template <class T>
void ema_update(ParamSet<T>& teacher, const ParamSet<T>& student, double alpha) {
  if (!(alpha >= 0 && alpha < 1)) throw ConfigError("ema alpha must be in [0, 1)");
  if (!shape_congruent(teacher, student)) throw DimensionError("ema_update: parameter sets differ");
  const T a = static_cast<T>(alpha), b = static_cast<T>(1 - alpha);
  for (auto it = teacher.begin(); it != teacher.end(); ++it) {
    const Tensor<T>& s = student.at(it->first);
    auto t = it->second.data();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = alpha == 0 ? s[i] : a * t[i] + b * s[i];
  }
}

struct ScheduleConfig {
  double eta0 = 1e-4;              // base learning rate
  std::size_t n_warm = 100;        // warm-up iterations
  std::size_t total_epochs = 40;
  std::size_t ramp_epochs = 5;     // unsupervised weight ramp
  std::size_t mixup_start_epoch = 10;
  double mixup_alpha = 0.4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t grad_accum_steps = 1;
  double ema_alpha = 0.999;

  void validate() const {
    if (!(eta0 > 0)) throw ConfigError("schedule.eta0 must be > 0");
    if (n_warm < 1) throw ConfigError("schedule.n_warm must be >= 1");
    if (mixup_start_epoch > total_epochs) throw ConfigError("schedule.mixup_start_epoch must be <= total_epochs");
    if (!(mixup_alpha > 0)) throw ConfigError("schedule.mixup_alpha must be > 0");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1)) throw ConfigError("schedule.adam_beta1 must be in [0, 1)");
    if (!(adam_beta2 >= 0 && adam_beta2 < 1)) throw ConfigError("schedule.adam_beta2 must be in [0, 1)");
    if (!(adam_eps > 0)) throw ConfigError("schedule.adam_eps must be > 0");
    if (grad_accum_steps < 1) throw ConfigError("schedule.grad_accum_steps must be >= 1");
    if (!(ema_alpha >= 0 && ema_alpha < 1)) throw ConfigError("schedule.ema_alpha must be in [0, 1)");
  }
};

inline void to_json(nlohmann::json& j, const ScheduleConfig& c) {
  j = {{"eta0", c.eta0},
       {"n_warm", c.n_warm},
       {"total_epochs", c.total_epochs},
       {"ramp_epochs", c.ramp_epochs},
       {"mixup_start_epoch", c.mixup_start_epoch},
       {"mixup_alpha", c.mixup_alpha},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},
       {"adam_eps", c.adam_eps},
       {"grad_accum_steps", c.grad_accum_steps},
       {"ema_alpha", c.ema_alpha}};
}

inline void from_json(const nlohmann::json& j, ScheduleConfig& c) {
  c.eta0 = j.value("eta0", c.eta0);
  c.n_warm = j.value("n_warm", c.n_warm);
  c.total_epochs = j.value("total_epochs", c.total_epochs);
  c.ramp_epochs = j.value("ramp_epochs", c.ramp_epochs);
  c.mixup_start_epoch = j.value("mixup_start_epoch", c.mixup_start_epoch);
  c.mixup_alpha = j.value("mixup_alpha", c.mixup_alpha);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.grad_accum_steps = j.value("grad_accum_steps", c.grad_accum_steps);
  c.ema_alpha = j.value("ema_alpha", c.ema_alpha);
  c.validate();
}

// Linear warm-up to eta0 over n_warm iterations, then cosine decay reaching
// zero at `final_iteration`.
inline double lr_schedule(std::size_t t, std::size_t final_iteration, const ScheduleConfig& c) {
  if (t <= c.n_warm) return c.eta0 * static_cast<double>(t) / static_cast<double>(c.n_warm);
  if (final_iteration <= c.n_warm || t >= final_iteration) return 0.0;
  const double progress = static_cast<double>(t - c.n_warm) / static_cast<double>(final_iteration - c.n_warm);
  return c.eta0 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// Sigmoid-shaped ramp exp(-5 (1 - e/R)^2) up to eta_max at e = R.
inline double unsup_ramp(double epoch, std::size_t ramp_epochs, double eta_max) {
  if (ramp_epochs == 0 || epoch >= static_cast<double>(ramp_epochs)) return eta_max;
  const double x = 1.0 - std::max(0.0, epoch) / static_cast<double>(ramp_epochs);
  return eta_max * std::exp(-5.0 * x * x);
}

template <class T>
struct AdamState {
  ParamSet<T> m;
  ParamSet<T> v;
  std::size_t t = 0;

  static AdamState zeros_like(const ParamSet<T>& p) {
    AdamState s;
    for (const auto& [name, value] : p) {
      s.m.emplace(name, Tensor<T>::zeros(value.shape()));
      s.v.emplace(name, Tensor<T>::zeros(value.shape()));
    }
    return s;
  }
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam. Returns false, leaving everything untouched, when any
// gradient entry is non-finite.
template <class T>
bool adam_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state, double lr,
               const AdamOptions& o = {}) {
  if (!shape_congruent(params, grads) || !shape_congruent(params, state.m)) {
    throw DimensionError("adam_step: parameter, gradient and moment sets differ");
  }
  for (const auto& [name, g] : grads)
    if (!g.all_finite()) return false;
  ++state.t;
  const double c1 = 1 - std::pow(o.beta1, static_cast<double>(state.t));
  const double c2 = 1 - std::pow(o.beta2, static_cast<double>(state.t));
  for (auto& [name, p] : params) {
    const Tensor<T>& g = grads.at(name);
    auto m = state.m.at(name).data();
    auto v = state.v.at(name).data();
    auto x = p.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = static_cast<T>(o.beta1 * m[i] + (1 - o.beta1) * g[i]);
      v[i] = static_cast<T>(o.beta2 * v[i] + (1 - o.beta2) * g[i] * g[i]);
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      x[i] = static_cast<T>(x[i] - lr * mhat / (std::sqrt(vhat) + o.eps));
    }
  }
  return true;
}

}  // namespace deflare

#pragma once

// Central finite-difference check of tape gradients.

#include "koopgen/tape.hpp"

#include <functional>
#include <limits>
#include <string>

namespace koopgen::net {

/// Builds a scalar loss on a fresh tape from the current parameter values.
using LossClosure = std::function<Var(Tape&, const ParamStore&)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// Relative error is |a − f| / max(|a|, |f|, floor).
  double floor = 1e-6;
  /// Optional hook applied to the analytic gradients before comparison.
  std::function<void(Gradients&)> tamper;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  bool passed = true;
};

inline Gradients analytic_gradients(const LossClosure& loss, const ParamStore& params) {
  Tape tape;
  Var l = loss(tape, params);
  tape.backward(l);
  return tape.parameter_gradients(params);
}

inline double evaluate_loss(const LossClosure& loss, const ParamStore& params) {
  Tape tape;
  return loss(tape, params).value().data[0];
}

inline GradCheckReport grad_check(const LossClosure& loss, ParamStore& params, double tol,
                                  const GradCheckOptions& opt = {}) {
  Gradients g = analytic_gradients(loss, params);
  if (opt.tamper) opt.tamper(g);

  GradCheckReport rep;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& data = params[p].value.data;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + opt.step;
      const double up = evaluate_loss(loss, params);
      data[i] = saved - opt.step;
      const double down = evaluate_loss(loss, params);
      data[i] = saved;

      const double numeric = (up - down) / (2.0 * opt.step);
      const double analytic = g[p].data[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++rep.checked;
      if (!(rel <= rep.max_rel_error)) {
        rep.max_rel_error = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
        rep.worst_param = params[p].name;
        rep.worst_index = i;
        rep.analytic = analytic;
        rep.numeric = numeric;
      }
    }
  }
  rep.passed = rep.max_rel_error <= tol;
  return rep;
}

}  // namespace koopgen::net

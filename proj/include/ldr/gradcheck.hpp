// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ldr/autodiff.hpp"

namespace ldr {

struct GradCheckOptions {
  double step = 1e-5;          // central difference half-width
  double rel_tolerance = 1e-4;
  double abs_tolerance = 1e-7; // used where max(|analytic|, |numeric|) < denom_floor
  double denom_floor = 1e-6;
  double max_excluded = 0.01;  // fraction of entries a check may skip
};

/// Forward evaluation for a finite-difference probe. `signature` captures
/// discrete routing decisions (Top-K indices); a perturbation that changes
/// it is not differentiable and is excluded.
struct Probe {
  Var<double> loss;
  std::vector<std::int32_t> signature{};
};

using ProbeFn = std::function<Probe(Tape<double>&)>;

struct GradCheckResult {
  std::string module;
  std::string name;
  std::size_t checked = 0;   // entries compared
  std::size_t excluded = 0;  // entries skipped because of a selection flip
  std::size_t failed = 0;
  double max_rel_error = 0;  // over entries judged by the relative criterion
  double max_abs_error = 0;
  bool passed = false;
};

/// Compares the tape gradient of fn's scalar loss w.r.t. every entry of every
/// leaf against central differences.
GradCheckResult check_gradients(const std::string& name, const ProbeFn& fn,
                                const std::vector<Var<double>>& leaves,
                                const GradCheckOptions& options = {});

/// Module names accepted by run_gradcheck: ops, prior, dmm, experts, rfa,
/// backbone, losses, model.
const std::vector<std::string>& gradcheck_modules();

/// Runs the suite (one module, or all when empty). Throws ConfigError on an
/// unknown module. `report` is called after each check.
std::vector<GradCheckResult> run_gradcheck(
    const std::string& module = {}, const GradCheckOptions& options = {},
    const std::function<void(const GradCheckResult&)>& report = {});

}  // namespace ldr

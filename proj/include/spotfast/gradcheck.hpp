#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "spotfast/autograd.hpp"

namespace spotfast {

struct GradCheckEntry {
  std::string name;
  std::int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  /// Entries whose finite differences at step and step/2 disagree (a kink or
  /// roundoff-dominated difference); replaced by fresh draws, not scored.
  std::vector<GradCheckEntry> unreliable;
  double max_rel_error = 0.0;
  std::string worst;
};

struct GradCheckOptions {
  std::int64_t samples = 120;
  double step = 1e-5;  // near cbrt(machine eps), balancing truncation and roundoff
  // Denominator floor: gradients below this magnitude are compared absolutely.
  double floor = 1e-6;
  std::uint64_t seed = 1234;
  // Entries worse than this are re-estimated at step/2 before scoring.
  double recheck_above = 1e-4;
};

/// Central finite differences against backprop for a random sample of
/// parameter entries. A mismatching entry whose estimate shifts when the step
/// is halved, or whose one-sided differences disagree, sits on a kink (or in
/// roundoff) and cannot be scored; it is swapped for another draw. `loss` must rebuild the graph on every call and be a
/// deterministic function of the parameter values.
GradCheckReport check_gradients(const std::vector<std::pair<std::string, Var*>>& params,
                                const std::function<Var()>& loss,
                                const GradCheckOptions& options = {});

}  // namespace spotfast

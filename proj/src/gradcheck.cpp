#include "spotfast/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "spotfast/error.hpp"

namespace spotfast {

GradCheckReport check_gradients(const std::vector<std::pair<std::string, Var*>>& params,
                                const std::function<Var()>& loss, const GradCheckOptions& options) {
  require(!params.empty(), "check_gradients: no parameters");
  std::int64_t total = 0;
  for (const auto& [name, p] : params) total += p->value().numel();
  require(total > 0, "check_gradients: parameters are empty");

  for (const auto& [name, p] : params) p->zero_grad();
  loss().backward();
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& [name, p] : params)
    analytic.push_back(p->grad().shape() == p->shape() ? p->grad() : Tensor::zeros(p->shape()));

  GradCheckReport report;
  NoGradGuard no_grad;
  struct Probe {
    double up, down;
  };
  auto probe = [&](double& slot, double h) {
    const double saved = slot;
    slot = saved + h;
    const double up = loss().value()[0];
    slot = saved - h;
    const double down = loss().value()[0];
    slot = saved;
    return Probe{up, down};
  };

  // Draws without replacement over the flattened parameter space until
  // enough entries are scored or every entry has been tried.
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::int64_t> dist(0, total - 1);
  std::unordered_set<std::int64_t> tried;
  const std::int64_t want = std::min(options.samples, total);
  while (static_cast<std::int64_t>(report.entries.size()) < want &&
         static_cast<std::int64_t>(tried.size()) < total) {
    std::int64_t flat = dist(rng);
    if (!tried.insert(flat).second) continue;
    std::size_t pi = 0;
    while (flat >= params[pi].second->value().numel()) flat -= params[pi++].second->value().numel();
    double& slot = params[pi].second->mutable_value()[flat];

    GradCheckEntry e;
    e.name = params[pi].first;
    e.index = flat;
    e.analytic = analytic[pi][flat];
    const Probe full = probe(slot, options.step);
    e.numeric = (full.up - full.down) / (2.0 * options.step);
    e.rel_error = std::abs(e.analytic - e.numeric) /
                  std::max({std::abs(e.analytic), std::abs(e.numeric), options.floor});
    if (e.rel_error > options.recheck_above) {
      const double h = options.step, gap = std::abs(e.analytic - e.numeric);
      const Probe halved = probe(slot, 0.5 * h);
      const double at = loss().value()[0];
      const double forward = (full.up - at) / h, backward = (at - full.down) / h;
      const double half = (halved.up - halved.down) / h;
      if (std::abs(half - e.numeric) > 0.1 * gap || std::abs(forward - backward) > 0.2 * gap) {
        report.unreliable.push_back(std::move(e));
        continue;
      }
    }
    if (report.worst.empty() || e.rel_error > report.max_rel_error) {
      report.max_rel_error = e.rel_error;
      report.worst = e.name + "[" + std::to_string(flat) + "]";
    }
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace spotfast

#include "ncx/bound.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "ncx/errors.hpp"

namespace ncx {

namespace {
void check_params(std::size_t n, double epsilon, double delta) {
  if (n == 0) throw ContractError("bound: need at least one residual");
  if (!(epsilon > 0)) throw ContractError("bound: epsilon must be > 0, got " + std::to_string(epsilon));
  if (!(delta > 0) || !(delta < 1))
    throw ContractError("bound: delta must be in (0, 1), got " + std::to_string(delta));
}

double dkw_band(std::size_t n, double delta) {
  return std::sqrt(std::log(2.0 / delta) / (2.0 * static_cast<double>(n)));
}
}  // namespace

BoundReport compute_bound(std::span<const ResidualSample> residuals, double epsilon,
                          double delta) {
  check_params(residuals.size(), epsilon, delta);
  BoundReport rep;
  rep.epsilon = epsilon;
  rep.delta = delta;
  rep.n = residuals.size();
  for (const auto& r : residuals)
    if (r.delta > epsilon) ++rep.count_exceeding;
  const double frac = static_cast<double>(rep.count_exceeding) / static_cast<double>(rep.n);
  rep.raw_lower_bound = 1.0 - frac - 2.0 * dkw_band(rep.n, delta);
  rep.probability_lower_bound = std::clamp(rep.raw_lower_bound, 0.0, 1.0);
  return rep;
}

double empirical_cdf(std::span<const ResidualSample> residuals, double x) {
  if (residuals.empty()) throw ContractError("empirical_cdf: no residuals");
  std::size_t count = 0;
  for (const auto& r : residuals)
    if (r.delta <= x) ++count;
  return static_cast<double>(count) / static_cast<double>(residuals.size());
}

double epsilon_for_target(std::span<const ResidualSample> residuals, double delta,
                          double target_prob) {
  if (residuals.empty()) throw ContractError("epsilon_for_target: no residuals");
  if (!(delta > 0) || !(delta < 1))
    throw ContractError("epsilon_for_target: delta must be in (0, 1)");

  // candidate quantiles: every positive residual value, plus an epsilon
  // just above zero (ε must be strictly positive)
  std::vector<double> candidates;
  candidates.push_back(std::numeric_limits<double>::denorm_min());
  for (const auto& r : residuals)
    if (r.delta > 0) candidates.push_back(r.delta);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  for (double eps : candidates) {
    if (compute_bound(residuals, eps, delta).probability_lower_bound >= target_prob) return eps;
  }
  const double best =
      compute_bound(residuals, candidates.back(), delta).probability_lower_bound;
  throw InfeasibleError("epsilon_for_target: target " + std::to_string(target_prob) +
                        " unachievable; best possible lower bound is " + std::to_string(best) +
                        " with n = " + std::to_string(residuals.size()));
}

}  // namespace ncx

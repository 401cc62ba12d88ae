#pragma once

#include <cstddef>
#include <span>

namespace ncx {

/// One residual Δ = observed gap − estimate, from a hypothesis never used
/// to train the estimator.
struct ResidualSample {
  double delta = 0.0;
};

struct BoundReport {
  double epsilon = 0.0;
  double delta = 0.0;  // confidence parameter
  std::size_t n = 0;
  std::size_t count_exceeding = 0;      // |{i : Δ_i > ε}|, strict
  double probability_lower_bound = 0.0;  // clamped to [0, 1]
  double raw_lower_bound = 0.0;          // unclamped, for diagnostics
};

/// Lower bound on P[|true − empirical loss| <= estimate + ε] from n
/// calibration residuals:
///   1 − |{i : Δ_i > ε}|/n − 2·sqrt(ln(2/δ)/(2n)),
/// clamped to [0, 1]. Natural log; Δ_i = ε does not count as a violation.
BoundReport compute_bound(std::span<const ResidualSample> residuals, double epsilon,
                          double delta);

/// Right-continuous empirical CDF: fraction of residuals <= x.
double empirical_cdf(std::span<const ResidualSample> residuals, double x);

/// Smallest residual quantile ε with compute_bound(...) >= target_prob.
/// Raises InfeasibleError (stating the best achievable bound) when even
/// ε beyond every residual cannot reach the target.
double epsilon_for_target(std::span<const ResidualSample> residuals, double delta,
                          double target_prob);

}  // namespace ncx

#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ncx/bound.hpp"
#include "ncx/errors.hpp"
#include "ncx/rng.hpp"

using namespace ncx;

TEST_SUITE_BEGIN("bound");

namespace {
std::vector<ResidualSample> residuals_of(std::initializer_list<double> vs) {
  std::vector<ResidualSample> out;
  for (double v : vs) out.push_back({v});
  return out;
}
}  // namespace

TEST_CASE("bound value matches the scripted oracle at n=100, delta=0.05") {
  std::vector<ResidualSample> rs(100, ResidualSample{0.0});
  BoundReport rep = compute_bound(rs, 0.5, 0.05);
  CHECK(rep.count_exceeding == 0);
  // independently scripted arithmetic
  const double oracle = 1.0 - 0.0 - 2.0 * std::sqrt(std::log(2.0 / 0.05) / (2.0 * 100.0));
  CHECK(std::fabs(rep.probability_lower_bound - oracle) < 1e-12);
  CHECK(std::fabs(rep.probability_lower_bound - 0.7284) < 1e-4);
}

TEST_CASE("total violation clamps to zero, raw value retained") {
  std::vector<ResidualSample> rs(50, ResidualSample{3.0});
  BoundReport rep = compute_bound(rs, 1.0, 0.05);
  CHECK(rep.count_exceeding == 50);
  CHECK(rep.probability_lower_bound == 0.0);
  CHECK(rep.raw_lower_bound < 0.0);
}

TEST_CASE("bound approaches one as n grows with no violations") {
  double prev = -1.0;
  for (std::size_t n : {std::size_t{100}, std::size_t{10000}, std::size_t{1000000}}) {
    std::vector<ResidualSample> rs(n, ResidualSample{0.0});
    const double b = compute_bound(rs, 0.1, 0.05).probability_lower_bound;
    CHECK(b > prev);
    prev = b;
  }
  CHECK(prev > 0.99);
}

TEST_CASE("parameter validation") {
  std::vector<ResidualSample> rs(10, ResidualSample{0.0});
  CHECK_THROWS_AS(compute_bound(rs, 0.0, 0.05), ContractError);
  CHECK_THROWS_AS(compute_bound(rs, -1.0, 0.05), ContractError);
  CHECK_THROWS_AS(compute_bound(rs, 0.5, 0.0), ContractError);
  CHECK_THROWS_AS(compute_bound(rs, 0.5, 1.0), ContractError);
  CHECK_THROWS_AS(compute_bound({}, 0.5, 0.05), ContractError);
  // strict inequality: residual == epsilon is not a violation
  CHECK(compute_bound(residuals_of({0.5, 0.5}), 0.5, 0.05).count_exceeding == 0);
}

TEST_CASE("empirical cdf steps") {
  auto rs = residuals_of({1.0, 2.0, 3.0});
  CHECK(empirical_cdf(rs, 0.0) == 0.0);
  CHECK(empirical_cdf(rs, 3.0) == 1.0);
  CHECK(empirical_cdf(rs, 5.0) == 1.0);
  CHECK(empirical_cdf(rs, 2.0) == doctest::Approx(2.0 / 3).epsilon(1e-15));
  CHECK(empirical_cdf(rs, 2.0 - 1e-12) == doctest::Approx(1.0 / 3).epsilon(1e-15));  // right-continuous
}

TEST_CASE("ecdf stays inside the DKW band nearly always") {
  // 300 trials of n = 1000 uniforms against the identity CDF
  Rng rng(104);
  const double band = std::sqrt(std::log(2.0 / 0.01) / (2.0 * 1000.0));
  int exceed = 0;
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> u(1000);
    for (double& v : u) v = rng.uniform();
    std::sort(u.begin(), u.end());
    double sup = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      const double hi = static_cast<double>(i + 1) / 1000.0 - u[i];
      const double lo = u[i] - static_cast<double>(i) / 1000.0;
      sup = std::max({sup, hi, lo});
    }
    if (sup > band) ++exceed;
  }
  CHECK(exceed <= 3);  // frequency <= delta = 0.01
}

TEST_CASE("epsilon_for_target: step location, floor, infeasible") {
  std::vector<ResidualSample> rs(400, ResidualSample{0.2});
  CHECK(epsilon_for_target(rs, 0.05, 0.5) == 0.2);

  // target 0 is met at the smallest positive candidate
  CHECK(epsilon_for_target(rs, 0.05, 0.0) == std::numeric_limits<double>::denorm_min());

  std::vector<ResidualSample> tiny(4, ResidualSample{0.0});
  CHECK_THROWS_WITH_AS(epsilon_for_target(tiny, 0.05, 0.9), doctest::Contains("best possible"),
                       InfeasibleError);
}

TEST_CASE("epsilon_for_target scans to the tightest feasible quantile") {
  Rng rng(105);
  std::vector<ResidualSample> rs;
  for (int i = 0; i < 200; ++i) rs.push_back({rng.normal() * 0.5});
  const double target = 0.6;
  const double eps = epsilon_for_target(rs, 0.05, target);
  CHECK(compute_bound(rs, eps, 0.05).probability_lower_bound >= target);

  // every strictly smaller candidate quantile fails the target
  std::vector<double> candidates{std::numeric_limits<double>::denorm_min()};
  for (const auto& r : rs)
    if (r.delta > 0 && r.delta < eps) candidates.push_back(r.delta);
  std::sort(candidates.begin(), candidates.end());
  if (!candidates.empty() && candidates.back() < eps)
    CHECK(compute_bound(rs, candidates.back(), 0.05).probability_lower_bound < target);
}

TEST_CASE("bound is monotone in epsilon and permutation-invariant") {
  Rng rng(106);
  std::vector<ResidualSample> rs;
  for (int i = 0; i < 100; ++i) rs.push_back({rng.uniform(-1, 1)});
  double prev = -1;
  for (double eps = 0.05; eps < 1.3; eps += 0.05) {
    const double b = compute_bound(rs, eps, 0.1).probability_lower_bound;
    CHECK(b >= prev);
    prev = b;
  }
  auto shuffled = rs;
  std::swap(shuffled[0], shuffled[50]);
  std::swap(shuffled[3], shuffled[97]);
  CHECK(compute_bound(shuffled, 0.4, 0.1).probability_lower_bound ==
        compute_bound(rs, 0.4, 0.1).probability_lower_bound);
}

TEST_SUITE_END();

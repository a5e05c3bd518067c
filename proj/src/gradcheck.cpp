#include "vle/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "vle/errors.hpp"
#include "vle/rng.hpp"

namespace vle {

double numeric_gradient_check(const GradProblem& problem, const Eigen::VectorXd& at,
                              double step, std::size_t coord_budget, std::uint64_t seed) {
  if (!problem.loss || !problem.gradient) {
    throw InvalidArgument("numeric_gradient_check: problem callbacks not set");
  }
  if (!(step > 0.0)) {
    throw InvalidArgument("numeric_gradient_check: step must be positive");
  }
  const auto dim = static_cast<std::size_t>(at.size());
  if (dim == 0) {
    throw InvalidArgument("numeric_gradient_check: empty parameter vector");
  }

  const std::size_t budget = std::min(dim, std::max<std::size_t>(coord_budget, 200));
  Rng rng(seed);
  const std::vector<std::size_t> coords = rng.sample_indices(dim, budget);

  const Eigen::VectorXd analytic = problem.gradient(at);
  if (static_cast<std::size_t>(analytic.size()) != dim) {
    throw InvalidArgument("numeric_gradient_check: gradient size does not match parameters");
  }

  Eigen::VectorXd x = at;
  double worst = 0.0;
  for (const std::size_t i : coords) {
    const double saved = x(static_cast<Eigen::Index>(i));
    x(static_cast<Eigen::Index>(i)) = saved + step;
    const double up = problem.loss(x);
    x(static_cast<Eigen::Index>(i)) = saved - step;
    const double down = problem.loss(x);
    x(static_cast<Eigen::Index>(i)) = saved;

    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic(static_cast<Eigen::Index>(i));
    const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    worst = std::max(worst, rel);
  }
  return worst;
}

double certified_gradient_error(const GradProblem& problem, const Eigen::VectorXd& at,
                                std::uint64_t seed) {
  const double err = numeric_gradient_check(problem, at, 1e-3, 200, seed);
  if (err < 1e-4) return err;
  return numeric_gradient_check(problem, at, 1e-4, 200, seed);
}

}  // namespace vle

#pragma once

// Central finite differences in double precision.
//
// The error of one instance is the vector relative error
//   |g_analytic - g_numeric|_2 / max(|g_analytic|_2, |g_numeric|_2)
// over the checked coordinates. A coordinate whose +h or -h evaluation
// changes the piecewise signature (ReLU signs, max-pool winners) straddles a
// kink and is skipped.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace gradcheck {

struct Result {
  double rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t rejected = 0;
};

template <typename F, typename S>
Result compare(const std::vector<double*>& coords, const std::vector<double>& analytic, F&& f,
               S&& signature, double h = 1e-4) {
  Result r;
  const auto base = signature();
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    double& x = *coords[i];
    const double x0 = x;
    x = x0 + h;
    const double fp = f();
    const bool kp = signature() != base;
    x = x0 - h;
    const double fm = f();
    const bool km = signature() != base;
    x = x0;
    if (kp || km) {
      ++r.rejected;
      continue;
    }
    const double num = (fp - fm) / (2.0 * h);
    diff2 += (num - analytic[i]) * (num - analytic[i]);
    a2 += analytic[i] * analytic[i];
    n2 += num * num;
    ++r.checked;
  }
  const double scale = std::max(std::sqrt(a2), std::sqrt(n2));
  r.rel_error = scale > 0.0 ? std::sqrt(diff2) / scale : 0.0;
  return r;
}

struct SuiteEntry {
  std::string name;
  std::size_t instances = 0;
  double worst = 0.0;
  std::size_t checked = 0;
  std::size_t rejected = 0;
};

// Every differentiable kernel and every full network, `instances` random
// small cases each.
std::vector<SuiteEntry> run_suite(std::uint64_t seed, std::size_t instances);

}  // namespace gradcheck

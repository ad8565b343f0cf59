// Certified gap of the convex family against T, with its analytic floor and fitted exponent.
#include "oclab/oclab.hpp"

#include <cstdio>

int main() {
  using namespace oclab;
  FamilyParams p{Family::Convex, 1000.0, 12.0, 0.0, 1.0, 2};
  std::vector<std::pair<double, double>> pts;
  std::printf("%6s %14s %14s\n", "T", "gap", "floor");
  for (int T = 1; T <= 64; T *= 2) {
    const GapBound g = gap_lower_bound(p, T);
    std::printf("%6d %14.6e %14.6e\n", T, g.computed, g.floor);
    if (T >= 4) pts.push_back({double(T), g.computed});
  }
  const FitResult f = fit_exponent(pts);
  std::printf("slope %.4f (r^2 %.6f)\n", f.slope, f.r_squared);
}

// Two-phase methods on a strongly convex hard instance: where the switch happens and how fast the tail closes.
#include "oclab/oclab.hpp"

#include <cstdio>

int main() {
  using namespace oclab;
  const ChainSpec s = build_strongly_convex(100.0, 12.0, 1.0, 100.0, 4);
  const ChainObjective f(s, solve(s));
  for (const char* id : {"anpe-restart", "hybrid", "agd"}) {
    const RunTrace tr = run_optimizer(id, f, 1e-12, 200000);
    std::printf("%-13s calls %6ld  final gap %.3e", id, tr.records.empty() ? 0L : tr.records.back().oracle_calls,
                tr.final_gap());
    const long sw = switch_calls(tr);
    if (sw >= 0) std::printf("  switch at %ld", sw);
    std::printf("\n");
  }
}

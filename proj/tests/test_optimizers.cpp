#include "oclab/optimizers.hpp"

#include <gtest/gtest.h>

using namespace oclab;

namespace {

double model(const Vec& g, const Mat& H, double M, const Vec& h) {
  return g.dot(h) + 0.5 * h.dot(H * h) + M / 6.0 * std::pow(h.norm(), 3);
}

Mat random_symmetric(Index n, Rng& rng) {
  Mat A(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) A(i, j) = gaussian_vector(1, rng)[0];
  return 0.5 * (A + A.transpose());
}

QuadraticObjective well_conditioned_quadratic(Index n, double lo, double hi, std::uint64_t seed) {
  Rng rng(seed);
  const Mat Q = Eigen::HouseholderQR<Mat>(random_symmetric(n, rng)).householderQ();
  const Vec ev = Vec::LinSpaced(n, lo, hi);
  const Mat A = Q * ev.asDiagonal() * Q.transpose();
  return QuadraticObjective(0.5 * (A + A.transpose()), gaussian_vector(n, rng));
}

void expect_trace_invariants(const RunTrace& tr) {
  for (std::size_t i = 1; i < tr.records.size(); ++i) {
    EXPECT_EQ(tr.records[i].oracle_calls, tr.records[i - 1].oracle_calls + 1);
    EXPECT_LE(tr.records[i].f_gap, tr.records[i - 1].f_gap);
  }
  for (const auto& r : tr.records) EXPECT_GE(r.f_gap, 0.0);
}

// Counts every call the optimizer makes directly on the objective.
struct CountingQuadratic {
  QuadraticObjective base;
  mutable long values = 0, gradients = 0, hessians = 0;
  Index dim() const { return base.dim(); }
  double value(const Vec& x) const { return ++values, base.value(x); }
  Vec gradient(const Vec& x) const { return ++gradients, base.gradient(x); }
  Mat hessian(const Vec& x) const { return ++hessians, base.hessian(x); }
  Constants constants() const { return base.constants(); }
  std::optional<double> gap(const Vec& x) const { return base.gap(x); }
};

}  // namespace

// ---------------------------------------------------------------------------
// Cubic subproblem

TEST(CubicSubproblemTest, OneDimensionalExample) {
  Vec g(2);
  g << 1, 0;
  const Vec h = cubic_subproblem_solve(g, Mat::Identity(2, 2), 6.0);
  const double t = (-1.0 + std::sqrt(13.0)) / 6.0;
  EXPECT_NEAR(t, 0.434259, 1e-6);
  EXPECT_NEAR(h[0], -t, 1e-12);
  EXPECT_NEAR(h[1], 0.0, 1e-15);
}

TEST(CubicSubproblemTest, ZeroGradientPositiveCurvature) {
  Rng rng(1);
  const Mat B = random_symmetric(5, rng);
  const Vec h = cubic_subproblem_solve(Vec::Zero(5), B * B.transpose(), 2.0);
  EXPECT_EQ(h.norm(), 0.0);
}

TEST(CubicSubproblemTest, ScalingInvariance) {
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const Mat H = random_symmetric(6, rng);
    const Vec g = gaussian_vector(6, rng);
    const Vec a = cubic_subproblem_solve(g, H, 1.5);
    const Vec b = cubic_subproblem_solve(7.0 * g, 7.0 * H, 7.0 * 1.5);
    EXPECT_LE((a - b).norm(), 1e-10 * (1.0 + a.norm()));
  }
}

TEST(CubicSubproblemTest, StationaryAndGloballyMinimal) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const Index n = 2 + i % 7;
    const Mat H = random_symmetric(n, rng);
    const Vec g = gaussian_vector(n, rng);
    const double M = std::exp(gaussian_vector(1, rng)[0]);
    const Vec h = cubic_subproblem_solve(g, H, M);
    EXPECT_LE(cubic_model_residual(g, H * h, h, M), 1e-8 * (1.0 + g.norm()));
    // Global optimality: H + (M/2)|h| I must be positive semidefinite.
    Eigen::SelfAdjointEigenSolver<Mat> es(H);
    EXPECT_GE(es.eigenvalues()[0] + 0.5 * M * h.norm(), -1e-8);
    const double best = model(g, H, M, h);
    for (int j = 0; j < 50; ++j) EXPECT_LE(best, model(g, H, M, h + 0.1 * gaussian_vector(n, rng)) + 1e-12);
  }
}

TEST(CubicSubproblemTest, HardCase) {
  Mat H = Vec::LinSpaced(4, -1.0, 2.0).asDiagonal();
  Vec g(4);
  g << 0.0, 1e-3, 0.5, 0.2;  // orthogonal to the bottom eigenvector e_1
  const double M = 2.0;
  const Vec h = cubic_subproblem_solve(g, H, M);
  EXPECT_LE(cubic_model_residual(g, H * h, h, M), 1e-8 * (1.0 + g.norm()));
  EXPECT_NEAR(0.5 * M * h.norm(), 1.0, 1e-8);  // multiplier pinned at -lambda_min
  EXPECT_GT(std::abs(h[0]), 0.1);               // a component along the bottom eigenvector is needed
  Vec flipped = h;
  flipped[0] = -h[0];
  EXPECT_NEAR(model(g, H, M, h), model(g, H, M, flipped), 1e-12);
}

TEST(CubicSubproblemTest, StructuredOverloadsMatchDense) {
  Rng rng(4);
  const Basis b = Basis::random(12, 5, 2);
  for (int i = 0; i < 20; ++i) {
    Tridiagonal T;
    T.diag = gaussian_vector(5, rng);
    T.off = gaussian_vector(4, rng);
    const Vec gc = gaussian_vector(5, rng);
    const Vec dense = cubic_subproblem_solve(gc, T.dense(), 1.3);
    EXPECT_LE((cubic_subproblem_solve(gc, T, 1.3) - dense).norm(), 1e-9 * (1.0 + dense.norm()));
    ChainHessian H;
    H.V = b.shared_vectors();
    H.chain = T;
    H.shift = 0.1 * (i % 3);
    const Vec g = gaussian_vector(12, rng);
    const Vec ref = cubic_subproblem_solve(g, H.dense(), 1.3);
    EXPECT_LE((cubic_subproblem_solve(g, H, 1.3) - ref).norm(), 1e-9 * (1.0 + ref.norm()));
  }
}

TEST(CubicSubproblemTest, InvalidInputsRejected) {
  const Mat H = Mat::Identity(2, 2);
  Vec g(2);
  g << 1.0, std::nan("");
  EXPECT_THROW(cubic_subproblem_solve(g, H, 1.0), InvalidInput);
  EXPECT_THROW(cubic_subproblem_solve(Vec::Ones(2), H, 0.0), InvalidInput);
  EXPECT_THROW(cubic_subproblem_solve(CubicSubproblem{Vec::Ones(2), H, -1.0}), InvalidInput);
}

// ---------------------------------------------------------------------------
// Oracle accounting

TEST(CountedOracleTest, EveryRequestCountsOnce) {
  CountingQuadratic f{well_conditioned_quadratic(6, 1.0, 4.0, 5)};
  const RunTrace tr = cubic_newton(f, Vec::Zero(6), 1.0, 1e-12, 50);
  ASSERT_FALSE(tr.records.empty());
  EXPECT_EQ(tr.records.back().oracle_calls, f.hessians);
  EXPECT_EQ(f.hessians, f.gradients);
  expect_trace_invariants(tr);
}

TEST(CountedOracleTest, BlackBoxGapUsesGradientBound) {
  struct NoGap {
    QuadraticObjective q;
    Index dim() const { return q.dim(); }
    double value(const Vec& x) const { return q.value(x); }
    Vec gradient(const Vec& x) const { return q.gradient(x); }
    Mat hessian(const Vec& x) const { return q.hessian(x); }
    Constants constants() const { return q.constants(); }
    std::optional<double> gap(const Vec&) const { return std::nullopt; }
  };
  const NoGap f{well_conditioned_quadratic(4, 2.0, 3.0, 6)};
  RunTrace tr;
  CountedOracle<NoGap> o(f, tr);
  const Vec x = Vec::Ones(4);
  o.query(x, 1);
  const double gn = f.gradient(x).norm();
  EXPECT_NEAR(tr.records[0].f_gap, gn * gn / (2.0 * 2.0), 1e-12 * gn * gn);
  EXPECT_GE(tr.records[0].f_gap, *f.q.gap(x) * (1 - 1e-12));
}

// ---------------------------------------------------------------------------
// Methods on quadratics

TEST(GradientDescentTest, OneDimensionalGeometric) {
  const QuadraticObjective f(Mat::Constant(1, 1, 2.0), Vec::Constant(1, 2.0), Constants{4.0, 1.0, 2.0, 1.0});
  const RunTrace tr = gradient_descent(f, Vec::Zero(1), 1e-12, 1000);
  EXPECT_TRUE(tr.complete);
  for (std::size_t i = 1; i < tr.records.size(); ++i)
    if (tr.records[i - 1].f_gap > 1e-14) EXPECT_NEAR(tr.records[i].f_gap / tr.records[i - 1].f_gap, 0.25, 1e-9);
}

TEST(GradientDescentTest, BudgetExhaustionFlagged) {
  const QuadraticObjective f = well_conditioned_quadratic(10, 1e-3, 1.0, 7);
  const RunTrace tr = gradient_descent(f, Vec::Zero(10), 1e-14, 20);
  EXPECT_FALSE(tr.complete);
  EXPECT_EQ(tr.records.size(), 20u);
  expect_trace_invariants(tr);
}

TEST(AgdTest, PerfectlyConditionedConvergesFast) {
  const QuadraticObjective f = well_conditioned_quadratic(8, 3.0, 3.0, 8);
  const RunTrace tr = agd(f, Vec::Zero(8), AgdMode::StronglyConvex, 1e-12, 1000);
  EXPECT_TRUE(tr.complete);
  EXPECT_LE(tr.records.back().oracle_calls, 5);
}

TEST(AgdTest, StronglyConvexRateTracksConditionNumber) {
  // Calls to reach a fixed accuracy grow like sqrt(condition number).
  std::vector<double> calls;
  for (double kappa : {1e2, 1e4}) {
    const QuadraticObjective f = well_conditioned_quadratic(40, 1.0, kappa, 9);
    const RunTrace tr = agd(f, Vec::Zero(40), AgdMode::StronglyConvex, 1e-10 * *f.gap(Vec::Zero(40)), 100000);
    ASSERT_TRUE(tr.complete);
    calls.push_back(double(tr.records.back().oracle_calls));
    expect_trace_invariants(tr);
  }
  const double ratio = calls[1] / calls[0];
  EXPECT_GT(ratio, 5.0);
  EXPECT_LT(ratio, 20.0);
}

TEST(NewtonLinesearchTest, QuadraticInOneStep) {
  const QuadraticObjective f = well_conditioned_quadratic(6, 0.5, 50.0, 10);
  const RunTrace tr = newton_linesearch(f, Vec::Zero(6), 1e-20, 10);
  EXPECT_LE(tr.final_gap(), 1e-20 + 1e-12 * *f.gap(Vec::Zero(6)));
  EXPECT_LE(tr.records.size(), 2u);
}

TEST(CubicNewtonTest, QuadraticConvergesInFewSteps) {
  const QuadraticObjective f = well_conditioned_quadratic(6, 1.0, 10.0, 11);
  const RunTrace tr = cubic_newton(f, Vec::Zero(6), 1e-6, 1e-12, 100);
  EXPECT_TRUE(tr.complete);
  EXPECT_LE(tr.records.back().oracle_calls, 5);
}

TEST(CubicNewtonTest, StartAtMinimizerTerminatesImmediately) {
  const QuadraticObjective f = well_conditioned_quadratic(6, 1.0, 10.0, 12);
  const RunTrace tr = cubic_newton(f, f.minimizer(), 1.0, 1e-12, 100);
  EXPECT_TRUE(tr.complete);
  EXPECT_EQ(tr.records.size(), 1u);
  EXPECT_LE(tr.final_gap(), 1e-12);
}

TEST(AnpeTest, StartAtMinimizerTerminatesImmediately) {
  const QuadraticObjective f = well_conditioned_quadratic(5, 1.0, 10.0, 13);
  const RunTrace tr = anpe(f, f.minimizer(), 1e-12, 100);
  EXPECT_TRUE(tr.complete);
  EXPECT_EQ(tr.records.size(), 1u);
}

TEST(AnpeTest, ConvergesOnConvexHardInstance) {
  const ChainSpec s = build_convex(1000.0, 12.0, 1.0, 16);
  const ChainObjective f(s, solve(s));
  const double g0 = *f.gap(Vec::Zero(f.dim()));
  const RunTrace tr = anpe(f, Vec::Zero(f.dim()), 1e-6 * g0, 100000);
  EXPECT_TRUE(tr.complete);
  expect_trace_invariants(tr);
}

TEST(RestartTest, EpochLengthExample) {
  EXPECT_EQ(restart_epoch_length(1.0, 1.0, 1.0, 1.0), 2);
  EXPECT_NEAR(quadratic_phase_threshold(12.0, 1.0), 1.0 / 576.0, 1e-18);
  EXPECT_THROW(restart_epoch_length(0.0, 1.0, 1.0, 1.0), InvalidInput);
}

TEST(RestartTest, EpochsHalveAndTailIsFast) {
  const ChainSpec s = build_strongly_convex(100.0, 12.0, 1.0, 100.0, 4);
  const ChainObjective f(s, solve(s));
  const RunTrace tr = anpe_restart(f, Vec::Zero(f.dim()), 1e-14, 100000, 1.0);
  EXPECT_TRUE(tr.complete);
  double start = -1.0;
  int epochs = 0;
  bool switched = false;
  for (const auto& e : tr.events) {
    if (e.label == "epoch_start") start = e.f_gap;
    if (e.label == "epoch_end") {
      EXPECT_LE(e.f_gap, start / 2.0);
      start = e.f_gap;
      ++epochs;
    }
    if (e.label == "switch") {
      switched = true;
      EXPECT_LT(e.f_gap, quadratic_phase_threshold(12.0, 1.0));
    }
  }
  EXPECT_GE(epochs, 1);
  EXPECT_TRUE(switched);
  expect_trace_invariants(tr);
}

TEST(HybridTest, WellConditionedSkipsToSecondPhase) {
  QuadraticObjective f = well_conditioned_quadratic(5, 1.0, 2.0, 14);
  // Start close enough that the first gap is already below the threshold.
  const Vec w0 = f.minimizer() + 1e-3 * Vec::Ones(5);
  const RunTrace tr = hybrid(f, w0, 1e-14, 100);
  ASSERT_FALSE(tr.events.empty());
  EXPECT_EQ(tr.events.front().label, "switch");
  EXPECT_EQ(tr.events.front().oracle_calls, 0);
  EXPECT_TRUE(tr.complete);
}

TEST(HybridTest, TwoPhasesOnHardInstance) {
  const ChainSpec s = build_strongly_convex(1000.0, 12.0, 1.0, 60.0, 4);
  const ChainObjective f(s, solve(s));
  const RunTrace tr = hybrid(f, Vec::Zero(f.dim()), 1e-12, 100000);
  EXPECT_TRUE(tr.complete);
  long sw = -1;
  for (const auto& e : tr.events)
    if (e.label == "switch") sw = e.oracle_calls;
  EXPECT_GT(sw, 10);
  EXPECT_LE(tr.records.back().oracle_calls - sw, 10);
}

TEST(TraceTest, CallsToReach) {
  RunTrace tr;
  tr.records = {{1, 1.0, 0, 0}, {2, 0.1, 0, 0}, {3, 0.01, 0, 0}};
  EXPECT_EQ(tr.calls_to_reach(0.5), 2);
  EXPECT_EQ(tr.calls_to_reach(0.01), 3);
  EXPECT_EQ(tr.calls_to_reach(1e-3), -1);
  EXPECT_EQ(tr.final_gap(), 0.01);
}

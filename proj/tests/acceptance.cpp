// Acceptance run: one PASS/FAIL line per criterion.
// Exit status is 0 when the set of failing criteria equals the --expect-fail set.
#include "oclab/oclab.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>

using namespace oclab;

namespace {

// Tolerances.
constexpr double kFstarRel = 1e-8;
constexpr double kCoordAbs = 1e-6;
constexpr double kSumRel = 1e-8;
constexpr double kConvexSlope = -3.5, kConvexSlopeTol = 0.1;
constexpr double kKOrderSlopeTol = 0.15;
constexpr int kKOrderFitFrom = 32, kKOrderFitTo = 1024;
constexpr int kHidingTrials = 1000;
constexpr double kAnpeSlope = 2.0 / 7.0, kAgdSlope = 0.5, kRateTol = 0.05;
constexpr double kTailIncrement = 0.8;
constexpr int kTailRun = 3;
constexpr double kHybridSlope = 0.5, kHybridTol = 0.05;
constexpr int kCubicProblems = 1000, kCubicHard = 10;
constexpr double kCubicResidual = 1e-8;

struct Outcome {
  bool passed = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (passed) detail << "first failure: " << what << "; ";
      passed = false;
    }
  }
};

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

bool close_rel(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(std::abs(a), std::abs(b)); }

// Strongly convex specs shared by several criteria (basis construction dominates their cost).
const std::vector<ChainSpec>& sc_specs() {
  static const std::vector<ChainSpec> specs{build_strongly_convex(100.0, 12.0, 1.0, 60.0, 4),
                                            build_strongly_convex(75.0, 12.0, 1.0, 100.0, 4),
                                            build_strongly_convex(200.0, 12.0, 2.0, 120.0, 4)};
  return specs;
}

std::string sc_label(const ChainSpec& s) {
  return "sc(mu1=" + fmt(s.mu1) + ",lambda=" + fmt(s.lambda) + ",D=" + fmt(s.D) + ")";
}

void compare_solutions(Outcome& out, const MinimizerSolution& closed, const MinimizerSolution& generic,
                       const std::string& label, double& worst_f, double& worst_x) {
  const double df = std::abs(closed.f_star - generic.f_star) / std::max(std::abs(closed.f_star), 1e-300);
  const double dx = (closed.chain_coords - generic.chain_coords).cwiseAbs().maxCoeff();
  worst_f = std::max(worst_f, df);
  worst_x = std::max(worst_x, dx);
  out.require(df <= kFstarRel, label + " f* rel " + fmt(df));
  out.require(dx <= kCoordAbs, label + " coords " + fmt(dx));
}

// 1. Closed-form minimizers against the generic Newton solver.
Outcome minimizer_equivalence() {
  Outcome out;
  double wf = 0.0, wx = 0.0;
  int cases = 0;
  const std::vector<int> Ts{2, 4, 8, 16, 32, 64};
  // Convex: with mu1 = 8, mu2 = 12 the smoothing radius is 1; D places r = D^2/(48 T^3) in each regime.
  for (int regime = 1; regime <= 3; ++regime)
    for (int T : Ts) {
      const double Tf = T;
      const double r = regime == 1 ? 0.25 / (Tf * Tf) : regime == 2 ? 1.0 / Tf : 4.0;
      const ChainSpec s = build_convex(8.0, 12.0, std::sqrt(48.0 * r * Tf * Tf * Tf), T);
      out.require(s.gamma_case == regime, "convex regime placement T=" + std::to_string(T));
      for (const ChainSpec& c : {s, with_chain_length(s, 2 * T)}) {
        compare_solutions(out, solve_convex_closed_form(c), solve_generic(c),
                          "convex regime " + std::to_string(regime) + " T=" + std::to_string(c.T), wf, wx);
        ++cases;
      }
    }
  for (int k = 1; k <= 3; ++k)
    for (int T : Ts) {
      const ChainSpec s = build_korder(k, 1.0, 1.0, T);
      for (const ChainSpec& c : {s, with_chain_length(s, 2 * T)}) {
        compare_solutions(out, korder_closed_form(c), solve_generic(c),
                          "korder k=" + std::to_string(k) + " T=" + std::to_string(c.T), wf, wx);
        ++cases;
      }
    }
  // The strongly convex chain length is set by gamma; T only enters through T_tilde >= 2T.
  for (const ChainSpec& base : sc_specs())
    for (int T : Ts) {
      ChainSpec s = base;
      s.T = T;
      out.require(s.T_tilde >= 2 * T, "sc chain shorter than 2T");
      compare_solutions(out, solve_strongly_convex_shooting(s), solve_generic(s), sc_label(s) + " T=" + std::to_string(T),
                        wf, wx);
      ++cases;
    }
  out.detail << cases << " cases, worst f* rel " << fmt(wf) << ", worst coord " << fmt(wx);
  return out;
}

// 2. Strongly convex minimizer structure.
Outcome strongly_convex_structure() {
  Outcome out;
  double min_margin = std::numeric_limits<double>::infinity();
  for (const ChainSpec& s : sc_specs()) {
    const MinimizerSolution sol = solve(s);
    const Vec& w = sol.chain_coords;
    const double target = s.gamma / s.lambda_tilde();
    out.require(close_rel(w.sum(), target, kSumRel), sc_label(s) + " sum");
    bool mono = w.minCoeff() >= 0.0;
    for (Index t = 0; t + 1 < w.size(); ++t) mono = mono && w[t] >= w[t + 1];
    out.require(mono, sc_label(s) + " monotone");
    const PropertyReport rep = property_report(s, sol);
    int applicable = 0;
    for (const auto& c : rep.checks) {
      if (!c.applicable) continue;
      ++applicable;
      min_margin = std::min(min_margin, c.margin);
      out.require(c.passed && c.margin >= 0.0, sc_label(s) + " " + c.name + " margin " + fmt(c.margin));
    }
    out.require(applicable == 5, sc_label(s) + " expected 5 applicable checks");
  }
  out.detail << sc_specs().size() << " specs, smallest margin " << fmt(min_margin);
  return out;
}

// 3. Smoothness, curvature and direction-norm certification.
Outcome smoothness() {
  Outcome out;
  std::vector<ChainSpec> specs = sc_specs();
  for (int T : {4, 16}) {
    specs.push_back(build_convex(1000.0, 12.0, 1.0, T));
    specs.push_back(build_convex(1.0, 12.0, 30.0, T));
    specs.push_back(build_convex(1.0, 12.0, 1e5, T));
    for (int k = 1; k <= 3; ++k) specs.push_back(build_korder(k, 1.0, 1.0, T));
  }
  double worst_ratio = 0.0, worst_fd = 0.0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const VerifyReport r = verify_instance(specs[i], 100 + i);
    for (std::size_t j = 0; j < r.lipschitz.size(); ++j)
      worst_ratio = std::max(worst_ratio, r.lipschitz[j].second / r.lipschitz_bounds[j].second);
    worst_fd = std::max({worst_fd, r.fd_gradient, r.fd_hessian});
    out.require(r.passed, r.family + " spec " + std::to_string(i));
  }
  out.detail << specs.size() << " specs, max probe/bound " << fmt(worst_ratio) << ", max fd error " << fmt(worst_fd);
  return out;
}

// 4. Convex lower-bound floor and regime-1 exponent.
Outcome convex_lower_bound() {
  Outcome out;
  const std::vector<FamilyParams> params{{Family::Convex, 1000.0, 12.0, 0.0, 1.0, 2},
                                         {Family::Convex, 100.0, 12.0, 0.0, 10.0, 2},
                                         {Family::Convex, 1.0, 12.0, 0.0, 30.0, 2},
                                         {Family::Convex, 1.0, 12.0, 0.0, 1e5, 2}};
  int violations = 0;
  for (const FamilyParams& p : params)
    for (int T = 1; T <= 64; ++T) {
      const GapBound g = gap_lower_bound(p, T);
      if (g.computed < g.floor) {
        if (violations == 0)
          out.detail << "gap below floor at mu1=" << fmt(p.mu1) << " D=" << fmt(p.D) << " T=" << T
                     << " (computed/floor " << fmt(g.computed / g.floor) << "); ";
        ++violations;
      }
    }
  out.require(violations == 0, "floor");
  std::vector<std::pair<double, double>> pts;
  for (int T = 1; T <= 64; ++T) pts.push_back({double(T), gap_lower_bound(params[0], T).computed});
  const FitResult fit = fit_exponent(pts);
  out.require(std::abs(fit.slope - kConvexSlope) <= kConvexSlopeTol, "slope");
  out.detail << violations << " floor violations over " << params.size() * 64 << " cases, regime-1 slope "
             << fmt(fit.slope);
  return out;
}

// 5. k-th order lower-bound floor and exponent.
Outcome korder_lower_bound() {
  Outcome out;
  for (int k = 1; k <= 3; ++k) {
    const FamilyParams p{Family::KOrder, 0.0, 1.0, 0.0, 1.0, k};
    double worst = std::numeric_limits<double>::infinity();
    for (int T = 1; T <= 32; ++T) {
      const GapBound g = gap_lower_bound(p, T);
      worst = std::min(worst, g.computed / g.floor);
      out.require(g.computed >= g.floor, "k=" + std::to_string(k) + " T=" + std::to_string(T));
    }
    // The exponent is fitted where the local slope has settled; below T = 32 it is still drifting.
    std::vector<std::pair<double, double>> pts;
    for (int T = kKOrderFitFrom; T <= kKOrderFitTo; T *= 2) pts.push_back({double(T), gap_lower_bound(p, T).computed});
    const double slope = fit_exponent(pts).slope, expect = -(3.0 * k + 1.0) / 2.0;
    out.require(std::abs(slope - expect) <= kKOrderSlopeTol, "k=" + std::to_string(k) + " slope");
    if (k > 1) out.detail << "; ";
    out.detail << "k=" << k << " slope " << fmt(slope) << " (target " << fmt(expect) << "), min gap/floor "
               << fmt(worst);
  }
  return out;
}

// 6. Information hiding and replay.
Outcome information_hiding() {
  Outcome out;
  const std::vector<std::pair<std::string, ChainSpec>> specs{
      {"strongly convex", sc_specs()[0]},
      {"convex", build_convex(1000.0, 12.0, 1.0, 32)},
      {"korder", build_korder(3, 1.0, 1.0, 32)}};
  Rng rng(2024);
  for (const auto& [name, s] : specs) {
    InformationHidingCheck check(s);
    const Index m = s.chain_length();
    const Mat& V = s.basis.vectors();
    std::uniform_int_distribution<Index> pick(1, m);
    std::uniform_real_distribution<double> lg(-3.0, 3.0);
    int ok = 0;
    for (int trial = 0; trial < kHidingTrials; ++trial) {
      const Index t = trial == 0 ? 1 : pick(rng);
      Point w = Point::Zero(s.dim);
      if (t > 1) w = V.leftCols(t - 1) * gaussian_vector(t - 1, rng);
      if (trial % 2 == 1) {
        // Component outside the chain span.
        Vec u = gaussian_vector(s.dim, rng);
        u -= V * (V.transpose() * u);
        u -= V * (V.transpose() * u);
        w += u;
      }
      w *= std::pow(10.0, lg(rng));
      ok += check(w, static_cast<int>(t), 7000 + trial);
    }
    out.require(ok == kHidingTrials, name + " hiding");
    out.detail << name << " " << ok << "/" << kHidingTrials << "; ";
  }
  const std::vector<FamilyParams> games{{Family::StronglyConvex, 100.0, 12.0, 1.0, 60.0, 2},
                                        {Family::Convex, 1000.0, 12.0, 0.0, 1.0, 2},
                                        {Family::KOrder, 0.0, 1.0, 0.0, 1.0, 3}};
  for (const FamilyParams& p : games) {
    const GameAlgorithm algo = game_algorithm("agd", p);
    const GameResult a = run_resisting_game(algo, p, 4, 31), b = run_resisting_game(algo, p, 4, 31);
    bool same = a.transcript.replies_digest == b.transcript.replies_digest &&
                a.transcript.suboptimality == b.transcript.suboptimality;
    for (std::size_t i = 0; same && i < a.transcript.queries.size(); ++i)
      same = a.transcript.queries[i] == b.transcript.queries[i] && a.transcript.reveals[i] == b.transcript.reveals[i];
    out.require(same, to_string(p.family) + " replay");
  }
  out.detail << "replay bit-identical for " << games.size() << " families";
  return out;
}

// 7. Game soundness for the built-in algorithms.
Outcome adversary_soundness() {
  Outcome out;
  const std::vector<FamilyParams> params{{Family::Convex, 1000.0, 12.0, 0.0, 1.0, 2},
                                         {Family::Convex, 1.0, 12.0, 0.0, 1e5, 2},
                                         {Family::KOrder, 0.0, 1.0, 0.0, 1.0, 1},
                                         {Family::KOrder, 0.0, 1.0, 0.0, 1.0, 2},
                                         {Family::KOrder, 0.0, 1.0, 0.0, 1.0, 3},
                                         {Family::StronglyConvex, 100.0, 12.0, 1.0, 60.0, 2}};
  int games = 0;
  double min_ratio = std::numeric_limits<double>::infinity();
  for (const FamilyParams& p : params)
    for (int T : {2, 4, 8, 16}) {
      const double gap = gap_lower_bound(p, T).computed;
      for (const std::string id : {"zero", "gd", "agd", "cubic-newton"}) {
        const GameResult r = run_resisting_game(game_algorithm(id, p), p, T, 17);
        const double sub = r.transcript.suboptimality.back();
        min_ratio = std::min(min_ratio, sub / gap);
        out.require(sub >= gap * (1.0 - 1e-9), to_string(p.family) + " " + id + " T=" + std::to_string(T));
        ++games;
      }
    }
  out.detail << games << " games, min suboptimality/gap " << fmt(min_ratio);
  return out;
}

// Calls needed to reach the certified gap on the doubled chain, for each T.
std::vector<std::pair<double, double>> rate_points(const std::string& id, const FamilyParams& p,
                                                   const std::vector<int>& Ts, Outcome& out) {
  std::vector<std::pair<double, double>> pts;
  for (int T : Ts) {
    const ChainSpec s = benchmark_instance(p, T);
    const ChainObjective f(s, solve(s));
    const double eps = gap_lower_bound(p, T).computed;
    const RunTrace tr = run_optimizer(id, f, eps, 10000000);
    out.require(tr.complete, id + " incomplete at T=" + std::to_string(T));
    if (tr.complete) pts.push_back({1.0 / eps, double(tr.calls_to_reach(eps))});
  }
  return pts;
}

// 8. Upper-bound rates.
Outcome upper_bound_rates() {
  Outcome out;
  const std::vector<int> Ts{4, 8, 16, 32, 64, 128, 256};
  const auto agd_pts = rate_points("agd", {Family::Convex, 1.0, 12.0, 0.0, 1e5, 2}, Ts, out);
  const auto anpe_pts = rate_points("anpe", {Family::Convex, 1000.0, 12.0, 0.0, 1.0, 2}, Ts, out);
  const double agd_slope = fit_exponent(agd_pts).slope, anpe_slope = fit_exponent(anpe_pts).slope;
  out.require(std::abs(agd_slope - kAgdSlope) <= kRateTol, "agd slope");
  out.require(std::abs(anpe_slope - kAnpeSlope) <= kRateTol, "anpe slope");
  out.detail << "agd slope " << fmt(agd_slope) << ", anpe slope " << fmt(anpe_slope) << "; ";

  // Restarted A-NPE then cubic Newton on a strongly convex instance.
  const ChainSpec s = build_strongly_convex(100.0, 12.0, 1.0, 100.0, 4);
  const ChainObjective f(s, solve(s));
  const RunTrace tr = anpe_restart(f, Vec::Zero(f.dim()), 0.0, 100000, 1.0);
  double start = -1.0, worst_ratio = 0.0;
  int epochs = 0;
  bool switched = false;
  std::vector<double> tail;
  for (const auto& e : tr.events) {
    if (e.label == "epoch_start") start = e.f_gap;
    if (e.label == "epoch_end" || e.label == "switch") {
      if (start > 0.0) {
        worst_ratio = std::max(worst_ratio, e.f_gap / start);
        ++epochs;
      }
      start = e.f_gap;
      if (e.label == "switch") switched = true;
    }
    if (switched && e.label == "iterate") tail.push_back(e.f_gap);
  }
  out.require(switched, "restart never reached the quadratic phase");
  out.require(epochs >= 2 && worst_ratio <= 0.5, "restart halving");
  const double scale = std::pow(s.lambda, 3) / (s.mu2_or_muk * s.mu2_or_muk);
  std::vector<double> z;
  for (double g : tail)
    if (g > 0.0 && g < scale) z.push_back(std::log2(std::log2(scale / g)));
  int run = 0, best_run = 0;
  for (std::size_t i = 1; i < z.size(); ++i) {
    run = z[i] - z[i - 1] >= kTailIncrement ? run + 1 : 0;
    best_run = std::max(best_run, run);
  }
  out.require(best_run >= kTailRun, "doubly exponential tail");
  out.detail << epochs << " epochs, worst epoch ratio " << fmt(worst_ratio) << ", tail run " << best_run;
  return out;
}

// 9. Hybrid phase-1 calls against the condition number.
Outcome hybrid_condition() {
  Outcome out;
  std::vector<std::pair<double, double>> pts;
  for (double mu1 : {1e2, 1e3, 1e4}) {
    const ChainSpec s = build_strongly_convex(mu1, 12.0, 1.0, 60.0, 4);
    const ChainObjective f(s, solve(s));
    const RunTrace tr = hybrid(f, Vec::Zero(f.dim()), 1e-12, 10000000);
    const long sw = switch_calls(tr);
    out.require(sw > 0, "no phase switch at mu1=" + fmt(mu1));
    pts.push_back({mu1 / s.lambda, double(sw)});
    out.detail << "mu1/lambda=" << fmt(mu1 / s.lambda) << ": " << sw << " calls; ";
  }
  const double slope = fit_exponent(pts).slope;
  out.require(std::abs(slope - kHybridSlope) <= kHybridTol, "slope");
  out.detail << "slope " << fmt(slope);
  return out;
}

// 10. Cubic subproblem stationarity, including hard cases.
Outcome cubic_subproblems() {
  Outcome out;
  Rng rng(77);
  std::uniform_int_distribution<int> dim(1, 40);
  std::uniform_real_distribution<double> lg(-2.0, 2.0);
  double worst = 0.0, worst_psd = 0.0;
  for (int i = 0; i < kCubicProblems; ++i) {
    const bool hard = i < kCubicHard;
    const int n = hard ? 2 + i : dim(rng);
    const double M = std::pow(10.0, lg(rng));
    Vec g;
    Mat H;
    if (hard) {
      // Bottom eigenvalue negative with g orthogonal to its eigenvector and small enough
      // that the easy-case secular root does not exist.
      const Mat Q = Eigen::HouseholderQR<Mat>(Mat::Random(n, n)).householderQ();
      Vec ev(n);
      ev[0] = -std::pow(10.0, lg(rng));
      for (int j = 1; j < n; ++j) ev[j] = ev[0] + 0.5 + std::abs(gaussian_vector(1, rng)[0]) * 3.0;
      H = Q * ev.asDiagonal() * Q.transpose();
      H = 0.5 * (H + H.transpose());
      Vec c = gaussian_vector(n, rng);
      c[0] = 0.0;
      // |(H - ev0 I)^+ g| <= half of the hard-case radius -2 ev0 / M.
      const double radius = -2.0 * ev[0] / M;
      const double gap = ev[1] - ev[0];
      c *= 0.5 * radius * gap / c.norm();
      g = Q * c;
    } else {
      const Mat A = Mat::Random(n, n) * std::pow(10.0, lg(rng));
      H = 0.5 * (A + A.transpose());
      g = gaussian_vector(n, rng) * std::pow(10.0, lg(rng));
    }
    const Vec h = cubic_subproblem_solve(g, H, M);
    const double res = cubic_model_residual(g, H * h, h, M);
    const double rel = res / (1.0 + g.norm());
    worst = std::max(worst, rel);
    out.require(rel <= kCubicResidual, std::string(hard ? "hard" : "random") + " case " + std::to_string(i) +
                                           " residual " + fmt(rel));
    // Global minimizer condition H + (M/2)|h| I positive semidefinite.
    Mat S = H;
    S.diagonal().array() += 0.5 * M * h.norm();
    const double lo = Eigen::SelfAdjointEigenSolver<Mat>(S, Eigen::EigenvaluesOnly).eigenvalues()[0];
    const double scale = 1.0 + H.norm();
    worst_psd = std::max(worst_psd, -lo / scale);
    out.require(lo >= -1e-8 * scale, "case " + std::to_string(i) + " not a global minimizer");
  }
  out.detail << kCubicProblems << " problems (" << kCubicHard << " hard), worst residual/(1+|g|) " << fmt(worst)
             << ", worst psd deficit " << fmt(worst_psd);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"oclab acceptance run"};
  std::vector<int> only, expect_fail;
  app.add_option("--only", only, "criteria to run (default all)");
  app.add_option("--expect-fail", expect_fail, "criteria known to fail");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"minimizer oracle equivalence", minimizer_equivalence},
      {"strongly convex structure", strongly_convex_structure},
      {"smoothness certification", smoothness},
      {"convex lower-bound certification", convex_lower_bound},
      {"k-th order lower-bound certification", korder_lower_bound},
      {"information hiding", information_hiding},
      {"adversary soundness", adversary_soundness},
      {"upper-bound rates", upper_bound_rates},
      {"hybrid condition sweep", hybrid_condition},
      {"cubic subproblem", cubic_subproblems}};

  std::set<int> failed;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.passed = false;
      o.detail << "exception: " << e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.passed) failed.insert(id);
    std::printf("[%s] %2d %s (%.1fs): %s\n", o.passed ? "PASS" : "FAIL", id, criteria[i].first.c_str(), secs,
                o.detail.str().c_str());
    std::fflush(stdout);
  }
  std::set<int> expected;
  for (int id : expect_fail)
    if (only.empty() || std::find(only.begin(), only.end(), id) != only.end()) expected.insert(id);
  std::printf("%zu failed", failed.size());
  if (!expected.empty()) std::printf(", %zu expected", expected.size());
  std::printf("\n");
  return failed == expected ? 0 : 1;
}

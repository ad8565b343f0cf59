#pragma once

#include "minimizers.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <concepts>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace oclab {

// ---------------------------------------------------------------------------
// Shifted linear solves for the three Hessian representations

/// Solves (H + shift I) x = b; nullopt if the shifted matrix is not positive definite.
inline std::optional<Vec> shifted_solve(const Mat& H, double shift, const Vec& b) {
  Mat A = H;
  A.diagonal().array() += shift;
  Eigen::LLT<Mat> llt(A);
  if (llt.info() != Eigen::Success) return std::nullopt;
  Vec x = llt.solve(b);
  if (!x.allFinite()) return std::nullopt;
  return x;
}

inline std::optional<Vec> shifted_solve(const Tridiagonal& H, double shift, const Vec& b) {
  return H.solve_shifted(shift, b);
}

inline std::optional<Vec> shifted_solve(const ChainHessian& H, double shift, const Vec& b) {
  const double s = H.shift + shift;
  const Mat& V = *H.V;
  const Vec c = V.transpose() * b;
  auto y = H.chain.solve_shifted(s, c);
  if (!y || !(s > 0.0)) return std::nullopt;
  return Vec((b - V * c) / s + V * *y);
}

inline Mat to_dense(const Mat& H) { return H; }
inline Mat to_dense(const Tridiagonal& H) { return H.dense(); }
inline Mat to_dense(const ChainHessian& H) { return H.dense(); }

/// H + shift I in the same representation.
inline Mat with_shift(Mat H, double shift) {
  H.diagonal().array() += shift;
  return H;
}
inline Tridiagonal with_shift(Tridiagonal H, double shift) {
  H.diag.array() += shift;
  return H;
}
inline ChainHessian with_shift(ChainHessian H, double shift) {
  H.shift += shift;
  return H;
}

inline Vec hess_apply(const Mat& H, const Vec& x) { return H * x; }
inline Vec hess_apply(const Tridiagonal& H, const Vec& x) { return H.apply(x); }
inline Vec hess_apply(const ChainHessian& H, const Vec& x) { return H.apply(x); }

// ---------------------------------------------------------------------------
// Cubic-regularized model

/// min_h <g,h> + (1/2)<Hh,h> + (M/6)|h|^3
struct CubicSubproblem {
  Vec g;
  Mat H;
  double M = 1.0;
};

inline double cubic_model_residual(const Vec& g, const Vec& Hh, const Vec& h, double M) {
  return (g + Hh + 0.5 * M * h.norm() * h).norm();
}

namespace detail {

/// Secular-equation root in r = |h| given a callable returning |h(r)| and d|h|/dr.
template <class NormFn>
double secular_root(double r_lo, double r_hi, NormFn&& norm_at) {
  // psi(r) = 1/|h(r)| - 1/r is increasing on (r_lo, inf); Newton with bisection safeguard.
  double lo = r_lo, hi = r_hi;
  double r = 0.5 * (lo + hi);
  for (int it = 0; it < 300; ++it) {
    double dn = 0.0;
    const double n = norm_at(r, dn);
    const double phi = n - r;
    if (std::abs(phi) <= 1e-15 * (1.0 + r)) return r;
    if (phi > 0.0) lo = r;
    else hi = r;
    const double psi = 1.0 / n - 1.0 / r;
    const double dpsi = -dn / (n * n) + 1.0 / (r * r);
    double rn = r - psi / dpsi;
    if (!(rn > lo && rn < hi) || !std::isfinite(rn)) rn = 0.5 * (lo + hi);
    if (hi - lo <= 4e-16 * hi) return 0.5 * (lo + hi);
    r = rn;
  }
  return r;
}


/// Root in eps of |h(eps)| = 2 (eps - lmin) / M on (eps_lo, eps_hi); same safeguarded Newton as above.
template <class NormFn>
double secular_root_shifted(double eps_lo, double eps_hi, double lmin, double M, NormFn&& norm_at) {
  double lo = eps_lo, hi = eps_hi;
  double e = 0.5 * (lo + hi);
  for (int it = 0; it < 400; ++it) {
    double dn = 0.0;
    const double n = norm_at(e, dn);
    const double r = 2.0 * (e - lmin) / M;
    const double phi = n - r;
    if (std::abs(phi) <= 1e-15 * (1.0 + r)) return e;
    if (phi > 0.0) lo = e;
    else hi = e;
    if (hi - lo <= 4e-16 * hi) return 0.5 * (lo + hi);
    const double psi = 1.0 / n - 1.0 / r;
    const double dpsi = -dn / (n * n) + (2.0 / M) / (r * r);
    double en = e - psi / dpsi;
    if (!(en > lo && en < hi) || !std::isfinite(en)) en = 0.5 * (lo + hi);
    e = en;
  }
  return e;
}

/// Newton steps on g + H h + (M/2)|h| h = 0 in the original coordinates; removes the
/// eigensolver's backward error. A step is kept only if it lowers the residual.
inline Vec refine_cubic_stationarity(const Vec& g, const Mat& H, double M, Vec h) {
  double res = cubic_model_residual(g, H * h, h, M);
  for (int it = 0; it < 2 && res > 0.0; ++it) {
    const double hn = h.norm();
    if (hn == 0.0) break;
    const Vec F = g + H * h + 0.5 * M * hn * h;
    Mat J = H;
    J.diagonal().array() += 0.5 * M * hn;
    J.noalias() += (0.5 * M / hn) * h * h.transpose();
    const Vec step = Eigen::PartialPivLU<Mat>(J).solve(F);
    if (!step.allFinite()) break;
    const Vec hn_new = h - step;
    const double rn = cubic_model_residual(g, H * hn_new, hn_new, M);
    if (!(rn < res)) break;
    h = hn_new;
    res = rn;
  }
  return h;
}

}  // namespace detail

/// Dense solver via eigendecomposition; handles the hard case.
inline Vec cubic_subproblem_solve(const Vec& g, const Mat& H, double M) {
  if (!(M > 0.0) || !std::isfinite(M)) throw InvalidInput("cubic subproblem: M must be positive and finite");
  if (!g.allFinite() || !H.allFinite()) throw InvalidInput("cubic subproblem: non-finite input");
  if (H.rows() != g.size() || H.cols() != g.size()) throw InvalidInput("cubic subproblem: shape mismatch");
  const Index n = g.size();
  const double gn = g.norm();
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (H + H.transpose()));
  const Vec& lam = es.eigenvalues();
  const Mat& Q = es.eigenvectors();
  const Vec gh = Q.transpose() * g;
  const double lmin = lam[0];
  const double hscale = std::max({std::abs(lam[0]), std::abs(lam[n - 1]), 1e-300});
  const double r_min = std::max(0.0, -2.0 * lmin / M);
  if (gn == 0.0 && lmin >= 0.0) return Vec::Zero(n);
  // Bottom eigenspace.
  const double tol_eig = 1e-12 * hscale;
  double g_bottom = 0.0;
  for (Index i = 0; i < n; ++i)
    if (lam[i] <= lmin + tol_eig) g_bottom = std::max(g_bottom, std::abs(gh[i]));
  // Work with eps = sigma + lmin and gaps lam_i - lmin so the small denominator near the
  // hard case is the unknown itself rather than a difference of large numbers.
  Vec gaps(n);
  for (Index i = 0; i < n; ++i) gaps[i] = lam[i] - lmin;
  auto norm_excl = [&](double eps) {  // |h| using only components off the bottom eigenspace
    double s = 0.0;
    for (Index i = 0; i < n; ++i) {
      if (lam[i] <= lmin + tol_eig) continue;
      const double q = gh[i] / (gaps[i] + eps);
      s += q * q;
    }
    return std::sqrt(s);
  };
  const double eps_lo = std::max(lmin, 0.0);  // sigma = eps - lmin >= max(0, -lmin)
  const bool hard = r_min > 0.0 && g_bottom <= 1e-13 * std::max(gn, 1e-300) && norm_excl(0.0) <= r_min;
  Vec hh(n);
  if (hard) {
    for (Index i = 0; i < n; ++i) hh[i] = lam[i] <= lmin + tol_eig ? 0.0 : -gh[i] / gaps[i];
    const double tau = std::sqrt(std::max(0.0, r_min * r_min - hh.squaredNorm()));
    hh[0] += tau;  // eigenvalues are sorted, column 0 is a bottom eigenvector
    return detail::refine_cubic_stationarity(g, H, M, Q * hh);
  }
  auto norm_at = [&](double eps, double& dn) {
    double s = 0.0, ds = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double den = gaps[i] + eps;
      const double q = gh[i] / den;
      s += q * q;
      ds -= 2.0 * q * q / den;
    }
    const double nr = std::sqrt(s);
    dn = nr > 0 ? 0.5 * ds / nr : 0.0;
    return nr;
  };
  const double r_hi = (-lmin + std::sqrt(lmin * lmin + 2.0 * M * gn)) / M * (1.0 + 1e-12) + 1e-300;
  const double eps_hi = std::max(0.5 * M * r_hi + lmin, eps_lo + 1e-300) * (1.0 + 1e-12);
  const double eps = detail::secular_root_shifted(eps_lo, eps_hi, lmin, M, norm_at);
  for (Index i = 0; i < n; ++i) hh[i] = -gh[i] / (gaps[i] + eps);
  return detail::refine_cubic_stationarity(g, H, M, Q * hh);
}

inline Vec cubic_subproblem_solve(const CubicSubproblem& p) { return cubic_subproblem_solve(p.g, p.H, p.M); }

/// Tridiagonal solver via LDL^T solves; positive semidefinite H expected, otherwise falls back to dense.
inline Vec cubic_subproblem_solve(const Vec& g, const Tridiagonal& H, double M) {
  if (!(M > 0.0) || !g.allFinite()) throw InvalidInput("cubic subproblem: invalid input");
  const double gn = g.norm();
  const Index n = g.size();
  if (gn == 0.0) {
    const auto ext = H.extreme_eigenvalues();
    if (ext.first >= 0.0) return Vec::Zero(n);
    return cubic_subproblem_solve(g, H.dense(), M);
  }
  const auto ext = H.extreme_eigenvalues();
  const double lmin = ext.first;
  if (lmin < 0.0) return cubic_subproblem_solve(g, H.dense(), M);
  auto norm_at = [&](double r, double& dn) {
    const double sig = 0.5 * M * r;
    auto h = H.solve_shifted(sig, g);
    if (!h) {
      dn = 0.0;
      return std::numeric_limits<double>::infinity();
    }
    auto z = H.solve_shifted(sig, *h);
    const double nr = h->norm();
    dn = z ? -0.5 * M * h->dot(*z) / nr : 0.0;
    return nr;
  };
  const double r_hi = (-lmin + std::sqrt(lmin * lmin + 2.0 * M * gn)) / M * (1.0 + 1e-12);
  const double r = detail::secular_root(0.0, r_hi, norm_at);
  auto h = H.solve_shifted(0.5 * M * r, -g);
  if (!h) return cubic_subproblem_solve(g, H.dense(), M);
  return *h;
}

/// Factored solver: the minimizer lies in span{V, g}; reduce and solve there.
inline Vec cubic_subproblem_solve(const Vec& g, const ChainHessian& H, double M) {
  if (H.shift < 0.0) return cubic_subproblem_solve(g, H.dense(), M);
  const Mat& V = *H.V;
  const Index p = V.cols();
  const Vec c = V.transpose() * g;
  const Vec perp = g - V * c;
  const double pn = perp.norm();
  const bool extra = pn > 1e-14 * std::max(g.norm(), 1e-300);
  Tridiagonal R;
  R.diag = Vec::Constant(p + (extra ? 1 : 0), H.shift);
  R.off = Vec::Zero(std::max<Index>(0, R.diag.size() - 1));
  R.diag.head(p) += H.chain.diag;
  if (p > 1) R.off.head(p - 1) = H.chain.off;
  Vec gr(R.diag.size());
  gr.head(p) = c;
  if (extra) gr[p] = pn;
  const Vec hr = cubic_subproblem_solve(gr, R, M);
  Vec h = V * hr.head(p);
  if (extra) h += (hr[p] / pn) * perp;
  return h;
}

// ---------------------------------------------------------------------------
// Objectives

/// Constants an optimizer may read: gradient and Hessian Lipschitz bounds, strong convexity, radius.
struct Constants {
  double mu1 = 0.0;
  double mu2 = 0.0;
  double lambda = 0.0;
  double D = 0.0;
};

template <class F>
concept Objective = requires(const F& f, const Vec& x) {
  { f.dim() } -> std::convertible_to<Index>;
  { f.value(x) } -> std::convertible_to<double>;
  { f.gradient(x) } -> std::convertible_to<Vec>;
  f.hessian(x);
  { f.constants() } -> std::convertible_to<Constants>;
  { f.gap(x) } -> std::convertible_to<std::optional<double>>;
};

inline Constants constants_of(const ChainSpec& s) {
  Constants c;
  c.lambda = s.lambda;
  c.D = s.D;
  if (s.family == Family::KOrder) {
    c.mu1 = s.k == 1 ? s.mu2_or_muk : 0.0;
    c.mu2 = s.k == 2 ? s.mu2_or_muk : 0.0;
  } else {
    c.mu1 = s.mu1;
    c.mu2 = s.mu2_or_muk;
  }
  return c;
}

/// The hard function restricted to chain coordinates; same values as the rotated function on span{v}.
class ChainObjective {
 public:
  explicit ChainObjective(ChainSpec spec, std::optional<MinimizerSolution> sol = std::nullopt)
      : spec_(std::move(spec)), sol_(std::move(sol)), c_(constants_of(spec_)) {}

  Index dim() const { return spec_.chain_length(); }
  double value(const Vec& x) const { return spec_.scale * chain_value_hat(spec_, x); }
  Vec gradient(const Vec& x) const { return spec_.scale * chain_gradient_hat(spec_, x); }
  Tridiagonal hessian(const Vec& x) const {
    Tridiagonal H = chain_hessian_hat(spec_, x);
    H.diag *= spec_.scale;
    H.off *= spec_.scale;
    return H;
  }
  Constants constants() const { return c_; }
  Constants& constants_mut() { return c_; }
  std::optional<double> gap(const Vec& x) const {
    if (!sol_) return std::nullopt;
    return spec_.scale * chain_gap_hat(spec_, x, sol_->chain_coords);
  }
  const ChainSpec& spec() const { return spec_; }
  const std::optional<MinimizerSolution>& solution() const { return sol_; }

 private:
  ChainSpec spec_;
  std::optional<MinimizerSolution> sol_;
  Constants c_;
};

/// The hard function in ambient coordinates with the factored Hessian.
class AmbientObjective {
 public:
  explicit AmbientObjective(ChainSpec spec, std::optional<MinimizerSolution> sol = std::nullopt)
      : spec_(std::move(spec)), sol_(std::move(sol)), c_(constants_of(spec_)) {}

  Index dim() const { return spec_.dim; }
  double value(const Vec& w) const { return evaluate(spec_, w, 0).value; }
  Vec gradient(const Vec& w) const { return evaluate(spec_, w, 1).gradient; }
  ChainHessian hessian(const Vec& w) const { return *evaluate(spec_, w, 2).hessian; }
  Constants constants() const { return c_; }
  std::optional<double> gap(const Vec& w) const {
    if (!sol_) return std::nullopt;
    const Mat& V = spec_.basis.vectors();
    const Vec x = V.transpose() * w;
    return spec_.scale * chain_gap_hat(spec_, x, sol_->chain_coords) + 0.5 * spec_.lambda * (w - V * x).squaredNorm();
  }
  const ChainSpec& spec() const { return spec_; }

 private:
  ChainSpec spec_;
  std::optional<MinimizerSolution> sol_;
  Constants c_;
};

/// Convex quadratic 0.5 x^T A x - b^T x with known minimizer; used in tests and examples.
class QuadraticObjective {
 public:
  QuadraticObjective(Mat A, Vec b, Constants c = {}) : A_(std::move(A)), b_(std::move(b)), c_(c) {
    xstar_ = A_.ldlt().solve(b_);
    fstar_ = -0.5 * b_.dot(xstar_);
    Eigen::SelfAdjointEigenSolver<Mat> es(A_);
    if (c_.mu1 == 0.0) c_.mu1 = es.eigenvalues().maxCoeff();
    if (c_.lambda == 0.0) c_.lambda = std::max(0.0, es.eigenvalues().minCoeff());
    if (c_.mu2 == 0.0) c_.mu2 = 1.0;
  }
  Index dim() const { return b_.size(); }
  double value(const Vec& x) const { return 0.5 * x.dot(A_ * x) - b_.dot(x); }
  Vec gradient(const Vec& x) const { return A_ * x - b_; }
  Mat hessian(const Vec&) const { return A_; }
  Constants constants() const { return c_; }
  std::optional<double> gap(const Vec& x) const {
    const Vec d = x - xstar_;
    return 0.5 * d.dot(A_ * d);
  }
  const Vec& minimizer() const { return xstar_; }

 private:
  Mat A_;
  Vec b_;
  Constants c_;
  Vec xstar_;
  double fstar_ = 0.0;
};

// ---------------------------------------------------------------------------
// Traces and counted oracle access

struct TraceRecord {
  long oracle_calls = 0;
  double f_gap = 0.0;
  double grad_norm = 0.0;
  double elapsed_ms = 0.0;
};

/// Marks points of interest in a run (epoch ends, phase switches, iterates).
struct TraceEvent {
  std::string label;
  long oracle_calls = 0;
  double f_gap = 0.0;
};

struct RunTrace {
  std::vector<TraceRecord> records;
  std::string optimizer_id;
  std::map<std::string, double> params;
  std::vector<TraceEvent> events;
  bool complete = false;

  /// Oracle calls at which the recorded gap first reaches eps; -1 if never.
  long calls_to_reach(double eps) const {
    for (const auto& r : records)
      if (r.f_gap <= eps) return r.oracle_calls;
    return -1;
  }
  double final_gap() const { return records.empty() ? std::numeric_limits<double>::infinity() : records.back().f_gap; }
};

template <class H>
struct Query {
  double value = 0.0;
  Vec gradient;
  std::optional<H> hessian;
};

/**
 * @brief Counts oracle calls and logs one trace record per call.
 *
 * A call returns value and gradient, plus the Hessian when order 2 is requested.
 * The logged gap is best-so-far over queried points and iterates passed to `observe`;
 * without a known minimum it falls back to |grad|^2/(2 lambda) when lambda > 0.
 */
template <Objective F>
class CountedOracle {
 public:
  using Hess = decltype(std::declval<const F&>().hessian(std::declval<const Vec&>()));

  CountedOracle(const F& f, RunTrace& trace) : f_(f), trace_(trace), start_(std::chrono::steady_clock::now()) {}

  Query<Hess> query(const Vec& x, int order) {
    if (x.size() != f_.dim()) throw InvalidInput("optimizer: point dimension does not match the objective");
    if (!x.allFinite()) throw NumericalFailure("optimizer produced a non-finite point");
    Query<Hess> q;
    q.value = f_.value(x);
    q.gradient = f_.gradient(x);
    if (order >= 2) q.hessian = f_.hessian(x);
    ++calls_;
    const double gn = q.gradient.norm();
    const double gp = point_gap(x, gn);
    best_ = std::min(best_, gp);
    last_gap_ = gp;
    TraceRecord r;
    r.oracle_calls = calls_;
    r.f_gap = best_;
    r.grad_norm = gn;
    r.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    trace_.records.push_back(r);
    return q;
  }

  /// Includes an iterate that was not queried in the best-so-far gap (no oracle call is charged).
  double observe(const Vec& x) {
    const double gp = point_gap(x, std::numeric_limits<double>::quiet_NaN());
    if (gp < best_) {
      best_ = gp;
      if (!trace_.records.empty()) trace_.records.back().f_gap = best_;
    }
    return gp;
  }

  /// Gap at x without charging a call (benchmark bookkeeping only).
  double gap_at(const Vec& x) const { return point_gap(x, std::numeric_limits<double>::quiet_NaN()); }

  void event(const std::string& label, double gap) { trace_.events.push_back({label, calls_, gap}); }

  long calls() const { return calls_; }
  double best_gap() const { return best_; }
  double last_gap() const { return last_gap_; }
  const F& objective() const { return f_; }

 private:
  double point_gap(const Vec& x, double grad_norm) const {
    if (x.size() != f_.dim()) throw InvalidInput("optimizer: point dimension does not match the objective");
    if (auto g = f_.gap(x)) return std::max(0.0, *g);
    const double lam = f_.constants().lambda;
    if (std::isnan(grad_norm)) grad_norm = f_.gradient(x).norm();
    if (lam > 0.0) return grad_norm * grad_norm / (2.0 * lam);
    return grad_norm;
  }

  const F& f_;
  RunTrace& trace_;
  std::chrono::steady_clock::time_point start_;
  long calls_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
  double last_gap_ = std::numeric_limits<double>::infinity();
};

// ---------------------------------------------------------------------------
// First-order methods

template <Objective F>
RunTrace gradient_descent(const F& f, Vec w0, double eps, long budget) {
  RunTrace tr;
  tr.optimizer_id = "gd";
  const double L = f.constants().mu1;
  if (!(L > 0.0)) throw InvalidInput("gradient_descent: needs a gradient Lipschitz constant");
  tr.params = {{"eps", eps}, {"budget", double(budget)}, {"step", 1.0 / L}};
  CountedOracle<F> o(f, tr);
  Vec x = std::move(w0);
  while (o.calls() < budget) {
    const auto q = o.query(x, 1);
    if (o.best_gap() <= eps) {
      tr.complete = true;
      break;
    }
    x -= q.gradient / L;
  }
  return tr;
}

enum class AgdMode { Convex, StronglyConvex };

namespace detail {

/// Runs accelerated gradient descent until `stop(gap)` returns true or the budget is spent.
template <Objective F, class Stop>
Vec agd_loop(CountedOracle<F>& o, Vec x, AgdMode mode, long budget, Stop&& stop) {
  const Constants c = o.objective().constants();
  const double L = c.mu1;
  if (!(L > 0.0)) throw InvalidInput("agd: needs a gradient Lipschitz constant");
  Vec y = x, x_prev = x;
  double t = 1.0;
  double beta_sc = 0.0;
  if (mode == AgdMode::StronglyConvex) {
    if (!(c.lambda > 0.0)) throw InvalidInput("agd: strongly convex mode needs lambda > 0");
    const double q = std::sqrt(c.lambda / L);
    beta_sc = (1.0 - q) / (1.0 + q);
  }
  while (o.calls() < budget) {
    const auto qy = o.query(y, 1);
    if (stop(o.best_gap())) return y;
    const Vec xn = y - qy.gradient / L;
    o.observe(xn);
    if (stop(o.best_gap())) return xn;
    double beta = beta_sc;
    if (mode == AgdMode::Convex) {
      const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      beta = (t - 1.0) / tn;
      t = tn;
    }
    y = xn + beta * (xn - x_prev);
    x_prev = xn;
  }
  return x_prev;
}

}  // namespace detail

template <Objective F>
RunTrace agd(const F& f, Vec w0, AgdMode mode, double eps, long budget) {
  RunTrace tr;
  tr.optimizer_id = "agd";
  const Constants c = f.constants();
  tr.params = {{"eps", eps},
               {"budget", double(budget)},
               {"L", c.mu1},
               {"lambda", c.lambda},
               {"strongly_convex", mode == AgdMode::StronglyConvex ? 1.0 : 0.0}};
  CountedOracle<F> o(f, tr);
  detail::agd_loop(o, std::move(w0), mode, budget, [&](double gap) { return gap <= eps; });
  tr.complete = o.best_gap() <= eps;
  return tr;
}

// ---------------------------------------------------------------------------
// Second-order methods

template <Objective F>
RunTrace newton_linesearch(const F& f, Vec w0, double eps, long budget) {
  RunTrace tr;
  tr.optimizer_id = "newton-ls";
  tr.params = {{"eps", eps}, {"budget", double(budget)}, {"armijo", 1e-4}, {"backtrack", 0.5}};
  CountedOracle<F> o(f, tr);
  Vec x = std::move(w0);
  if (budget < 1) return tr;
  auto q = o.query(x, 2);
  while (o.best_gap() > eps && o.calls() < budget) {
    auto d = shifted_solve(*q.hessian, 0.0, -q.gradient);
    if (!d || d->dot(q.gradient) >= 0.0) d = shifted_solve(*q.hessian, 1e-12, -q.gradient);
    if (!d) throw NumericalFailure("newton: singular Hessian");
    const double slope = d->dot(q.gradient);
    double alpha = 1.0;
    bool accepted = false;
    while (o.calls() < budget) {
      const Vec xn = x + alpha * *d;
      auto qn = o.query(xn, 2);
      if (qn.value <= q.value + 1e-4 * alpha * slope || o.best_gap() <= eps) {
        x = xn;
        q = std::move(qn);
        accepted = true;
        break;
      }
      alpha *= 0.5;
      if (alpha < 1e-20) break;
    }
    o.event("iterate", o.gap_at(x));
    if (!accepted) break;
  }
  tr.complete = o.best_gap() <= eps;
  return tr;
}

namespace detail {

template <Objective F, class Stop>
Vec cubic_newton_loop(CountedOracle<F>& o, Vec x, double M, long budget, Stop&& stop) {
  while (o.calls() < budget) {
    const auto q = o.query(x, 2);
    o.event("iterate", o.gap_at(x));
    if (stop(o.best_gap())) break;
    const Vec h = cubic_subproblem_solve(q.gradient, *q.hessian, M);
    if (h.norm() == 0.0) break;
    x += h;
  }
  return x;
}

}  // namespace detail

template <Objective F>
RunTrace cubic_newton(const F& f, Vec w0, double M, double eps, long budget) {
  if (!(M > 0.0)) throw InvalidInput("cubic_newton: M must be positive");
  RunTrace tr;
  tr.optimizer_id = "cubic-newton";
  tr.params = {{"eps", eps}, {"budget", double(budget)}, {"M", M}};
  CountedOracle<F> o(f, tr);
  detail::cubic_newton_loop(o, std::move(w0), M, budget, [&](double gap) { return gap <= eps; });
  tr.complete = o.best_gap() <= eps;
  return tr;
}

/**
 * @brief Accelerated Newton proximal extragradient settings.
 *
 * The step parameter lambda_k is searched so that theta = L2 * lambda_k * |y - x_tilde| / 2
 * lands in [sigma_lo, sigma_hi]. The extragradient update requires the relative error
 * |lambda_k grad f(y) + y - x_tilde| <= sigma_hat |y - x_tilde|; when a single regularized
 * Newton step misses it, further cubic-Newton steps on the proximal subproblem are taken.
 */
struct AnpeOptions {
  double sigma_lo = 0.15;
  double sigma_hi = 0.5;
  double sigma_hat = 0.5;
  int max_search = 60;
  int max_inner = 30;
};

namespace detail {

/// One A-NPE run of at most `iters` outer iterations from w0; returns the last main iterate.
template <Objective F, class Stop>
Vec anpe_loop(CountedOracle<F>& o, const Vec& w0, long budget, long iters, const AnpeOptions& opt, Stop&& stop) {
  const double L2 = o.objective().constants().mu2;
  if (!(L2 > 0.0)) throw InvalidInput("anpe: needs a Hessian Lipschitz constant");
  Vec x = w0, y = w0;
  double A = 0.0;
  // Initial step from the gradient scale at the start.
  auto q0 = o.query(y, 2);
  if (stop(o.best_gap())) return y;
  double lam = std::sqrt(2.0 * opt.sigma_hi / (L2 * std::max(q0.gradient.norm(), 1e-300)));
  for (long k = 0; k < iters && o.calls() < budget; ++k) {
    double lam_lo = 0.0, lam_hi = std::numeric_limits<double>::infinity();
    Vec y_new, xt;
    double a = 0.0;
    bool found = false;
    for (int s = 0; s < opt.max_search && o.calls() < budget; ++s) {
      a = 0.5 * (lam + std::sqrt(lam * lam + 4.0 * lam * A));
      xt = (A * y + a * x) / (A + a);
      const auto q = o.query(xt, 2);
      if (stop(o.best_gap())) return xt;
      // Newton step on the proximal subproblem.
      const Vec step = [&] {
        auto d = shifted_solve(*q.hessian, 1.0 / lam, -q.gradient);
        if (!d) throw NumericalFailure("anpe: proximal Newton system not positive definite");
        return *d;
      }();
      const double theta = 0.5 * L2 * lam * step.norm();
      if (theta >= opt.sigma_lo && theta <= opt.sigma_hi) {
        y_new = xt + step;
        found = true;
        break;
      }
      if (theta < opt.sigma_lo) lam_lo = lam;
      else lam_hi = lam;
      lam = std::isinf(lam_hi) ? lam * 4.0 : (lam_lo > 0.0 ? std::sqrt(lam_lo * lam_hi) : lam / 4.0);
    }
    if (!found) {
      if (o.calls() >= budget) break;
      throw NumericalFailure("anpe: large-step condition unreachable");
    }
    auto qy = o.query(y_new, 2);
    if (stop(o.best_gap())) return y_new;
    // Relative-error test; refine with cubic-Newton steps on the proximal subproblem if needed.
    for (int inner = 0;; ++inner) {
      const Vec dlt = y_new - xt;
      const double err = (lam * qy.gradient + dlt).norm();
      if (err <= opt.sigma_hat * dlt.norm()) break;
      if (inner >= opt.max_inner || o.calls() >= budget)
        throw NumericalFailure("anpe: proximal subproblem not solved to tolerance");
      const Vec gp = qy.gradient + dlt / lam;
      const Vec hp = cubic_subproblem_solve(gp, with_shift(*qy.hessian, 1.0 / lam), L2);
      y_new += hp;
      qy = o.query(y_new, 2);
      if (stop(o.best_gap())) return y_new;
    }
    A += a;
    x -= a * qy.gradient;
    y = y_new;
    o.event("iterate", o.observe(y));
  }
  return y;
}

}  // namespace detail

template <Objective F>
RunTrace anpe(const F& f, Vec w0, double eps, long budget, const AnpeOptions& opt = {}) {
  RunTrace tr;
  tr.optimizer_id = "anpe";
  tr.params = {{"eps", eps},
               {"budget", double(budget)},
               {"sigma_lo", opt.sigma_lo},
               {"sigma_hi", opt.sigma_hi},
               {"sigma_hat", opt.sigma_hat}};
  CountedOracle<F> o(f, tr);
  detail::anpe_loop(o, w0, budget, std::numeric_limits<long>::max(), opt, [&](double gap) { return gap <= eps; });
  tr.complete = o.best_gap() <= eps;
  return tr;
}

/// Epoch length ceil((4 c mu2 D / lambda)^(2/7)).
inline long restart_epoch_length(double c_cal, double mu2, double D, double lambda) {
  if (!(c_cal > 0 && mu2 > 0 && D > 0 && lambda > 0)) throw InvalidInput("restart: parameters must be positive");
  return static_cast<long>(std::ceil(std::pow(4.0 * c_cal * mu2 * D / lambda, 2.0 / 7.0) - 1e-12));
}

/// Gap level below which the quadratic phase takes over: lambda^3 / (4 mu2^2).
inline double quadratic_phase_threshold(double mu2, double lambda) { return lambda * lambda * lambda / (4.0 * mu2 * mu2); }

template <Objective F>
RunTrace anpe_restart(const F& f, Vec w0, double eps, long budget, double c_cal = 1.0, const AnpeOptions& opt = {}) {
  const Constants c = f.constants();
  if (!(c.lambda > 0.0)) throw InvalidInput("anpe_restart: needs lambda > 0");
  const long tau = restart_epoch_length(c_cal, c.mu2, c.D, c.lambda);
  const double threshold = quadratic_phase_threshold(c.mu2, c.lambda);
  RunTrace tr;
  tr.optimizer_id = "anpe-restart";
  tr.params = {{"eps", eps}, {"budget", double(budget)}, {"c_cal", c_cal}, {"tau", double(tau)}, {"threshold", threshold}};
  CountedOracle<F> o(f, tr);
  Vec y = std::move(w0);
  double gap = o.gap_at(y);
  o.event("epoch_start", gap);
  // Epochs stop early once the gap estimate crosses the switch threshold.
  bool crossed = gap < threshold;
  auto stop = [&](double g) {
    if (g < threshold) crossed = true;
    return g <= eps || crossed;
  };
  while (!crossed && gap > eps && o.calls() < budget) {
    y = detail::anpe_loop(o, y, budget, tau, opt, stop);
    gap = o.gap_at(y);
    if (crossed || o.best_gap() <= eps) break;
    o.event("epoch_end", gap);
  }
  if (gap > eps && o.best_gap() > eps && o.calls() < budget) {
    o.event("switch", gap);
    detail::cubic_newton_loop(o, y, c.mu2, budget, [&](double g) { return g <= eps; });
  }
  tr.complete = o.best_gap() <= eps;
  return tr;
}

template <Objective F>
RunTrace hybrid(const F& f, Vec w0, double eps, long budget) {
  const Constants c = f.constants();
  if (!(c.lambda > 0.0)) throw InvalidInput("hybrid: needs lambda > 0");
  const double threshold = quadratic_phase_threshold(c.mu2, c.lambda);
  RunTrace tr;
  tr.optimizer_id = "hybrid";
  tr.params = {{"eps", eps}, {"budget", double(budget)}, {"threshold", threshold}};
  CountedOracle<F> o(f, tr);
  Vec x = std::move(w0);
  if (o.gap_at(x) >= threshold)
    x = detail::agd_loop(o, x, AgdMode::StronglyConvex, budget,
                         [&](double gap) { return gap < threshold || gap <= eps; });
  o.event("switch", o.gap_at(x));
  if (o.best_gap() > eps && o.calls() < budget)
    detail::cubic_newton_loop(o, x, c.mu2, budget, [&](double gap) { return gap <= eps; });
  tr.complete = o.best_gap() <= eps;
  return tr;
}

/// Doubles c until every restart epoch on `f` halves the gap; gives up after 20 doublings.
template <Objective F>
double calibrate_restart_constant(const F& f, const Vec& w0, long budget, int epochs = 4) {
  double c = 1.0;
  for (int attempt = 0; attempt < 20; ++attempt, c *= 2.0) {
    RunTrace tr = anpe_restart(f, w0, 0.0, budget, c);
    std::vector<double> ends;
    double start = -1.0;
    bool ok = true;
    int seen = 0;
    for (const auto& e : tr.events) {
      if (e.label == "epoch_start") start = e.f_gap;
      if (e.label == "epoch_end" && seen < epochs) {
        if (e.f_gap > start / 2.0) ok = false;
        start = e.f_gap;
        ++seen;
      }
    }
    if (ok) return c;
  }
  throw NumericalFailure("restart calibration did not find a halving constant");
}

}  // namespace oclab

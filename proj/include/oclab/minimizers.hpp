#pragma once

#include "hard_instances.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace oclab {

enum class Regime { Cubic, Mixed, Quadratic, NA };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::Cubic: return "Cubic";
    case Regime::Mixed: return "Mixed";
    case Regime::Quadratic: return "Quadratic";
    case Regime::NA: return "NA";
  }
  return "?";
}

inline Regime regime_from_string(const std::string& s) {
  if (s == "Cubic") return Regime::Cubic;
  if (s == "Mixed") return Regime::Mixed;
  if (s == "Quadratic") return Regime::Quadratic;
  if (s == "NA") return Regime::NA;
  throw InvalidInput("unknown regime: " + s);
}

/**
 * @brief Minimizer in chain coordinates.
 *
 * `f_star` is the minimum of the rotated function; `f_hat_star` the unscaled chain minimum
 * (so f_star = scale * f_hat_star). `kkt_residual` is the gradient norm of the rotated function.
 */
struct MinimizerSolution {
  Vec chain_coords;
  double f_star = 0.0;
  double f_hat_star = 0.0;
  double delta = 0.0;
  Regime regime = Regime::NA;
  double kkt_residual = 0.0;
  std::optional<double> norm_bound;
};

namespace detail {

inline MinimizerSolution finish(const ChainSpec& s, Vec x, double delta, Regime regime,
                                std::optional<double> f_hat = std::nullopt) {
  MinimizerSolution sol;
  sol.f_hat_star = f_hat ? *f_hat : chain_value_hat(s, x);
  sol.f_star = s.scale * sol.f_hat_star;
  sol.delta = delta;
  sol.regime = regime;
  sol.kkt_residual = s.scale * chain_gradient_hat(s, x).norm();
  sol.chain_coords = std::move(x);
  return sol;
}

inline Vec linear_profile(double delta, Index T) {
  Vec x(T);
  for (Index t = 0; t < T; ++t) x[t] = delta * static_cast<double>(T - t);
  return x;
}

}  // namespace detail

/// Values of the three convex-regime formulas, used by the solver and for boundary checks.
struct ConvexRegimeFormulas {
  double delta[3];
  double f_hat[3];
};

inline ConvexRegimeFormulas convex_regime_formulas(double gamma, double Delta, int T) {
  const double t = T;
  ConvexRegimeFormulas r{};
  r.delta[0] = std::sqrt(gamma / (1.0 + t * t));
  r.f_hat[0] = -(2.0 / 3.0) * std::pow(gamma, 1.5) * t / std::sqrt(1.0 + t * t);
  const double d2 = (gamma + Delta * Delta) / (Delta * t + std::sqrt(Delta * Delta * t * t + gamma + Delta * Delta));
  r.delta[1] = d2;
  r.f_hat[1] = t * d2 * d2 * d2 / 3.0 + Delta * t * t * d2 * d2 - t * (Delta * Delta + gamma) * d2 +
               Delta * Delta * Delta / 3.0;
  const double q = gamma + 2.0 * Delta * Delta;
  r.delta[2] = q / (2.0 * Delta * (t + 1.0));
  r.f_hat[2] = -t * q * q / (4.0 * Delta * (t + 1.0)) + (t + 1.0) * Delta * Delta * Delta / 3.0;
  return r;
}

/// 0, 1 or 2 for the cubic, mixed and quadratic rows.
inline int convex_regime_index(double gamma, double Delta, int T) {
  const double t = T;
  if (gamma <= Delta * Delta * (1.0 + t * t) / (t * t)) return 0;
  if (gamma <= 2.0 * Delta * Delta * t) return 1;
  return 2;
}

/// Upper bound on |w_hat|^2 from the regime table.
inline double convex_norm_bound(double gamma, double Delta, int T, int regime_index) {
  const double t = T, D2 = Delta * Delta;
  switch (regime_index) {
    case 0: return gamma * std::pow(1.0 + t, 3) / (3.0 * (1.0 + t * t));
    case 1: return std::pow(gamma + D2, 2) * std::pow(t + 1.0, 3) / (12.0 * D2 * t * t);
    default: return (t + 1.0) * std::pow(gamma + 2.0 * D2, 2) / (12.0 * D2);
  }
}

inline MinimizerSolution solve_convex_closed_form(const ChainSpec& s) {
  if (s.family != Family::Convex) throw InvalidInput("solve_convex_closed_form: family must be Convex");
  const int idx = convex_regime_index(s.gamma, s.delta, s.T);
  const auto f = convex_regime_formulas(s.gamma, s.delta, s.T);
  static const Regime labels[3] = {Regime::Cubic, Regime::Mixed, Regime::Quadratic};
  auto sol = detail::finish(s, detail::linear_profile(f.delta[idx], s.T), f.delta[idx], labels[idx], f.f_hat[idx]);
  sol.norm_bound = convex_norm_bound(s.gamma, s.delta, s.T, idx);
  return sol;
}

inline MinimizerSolution korder_closed_form(const ChainSpec& s) {
  if (s.family != Family::KOrder) throw InvalidInput("korder_closed_form: family must be KOrder");
  const double k = s.k, t = s.T;
  const double tk1 = std::pow(t, k) + 1.0;
  const double delta = std::pow(s.gamma / tk1, 1.0 / k);
  const double f_hat = -k * t * std::pow(s.gamma, (k + 1.0) / k) / ((k + 1.0) * std::pow(tk1, 1.0 / k));
  auto sol = detail::finish(s, detail::linear_profile(delta, s.T), delta, Regime::NA, f_hat);
  sol.norm_bound = std::pow(s.gamma / tk1, 2.0 / k) * std::pow(1.0 + t, 3) / 3.0;
  return sol;
}

namespace detail {

/// Damped Newton on the unscaled chain objective; returns the final point.
inline Vec newton_chain(const ChainSpec& s, Vec x, double tol, int max_iter) {
  int it = 0;
  double shift = 0.0;  // Levenberg-Marquardt shift, adapted between iterations
  for (; it < max_iter; ++it) {
    const Vec g = chain_gradient_hat(s, x);
    const double gn = g.norm();
    if (!std::isfinite(gn)) throw NumericalFailure("generic solver: non-finite gradient");
    if (gn <= tol) break;
    const Tridiagonal H = chain_hessian_hat(s, x);
    const double floor_shift = 1e-14 * (1.0 + H.diag.cwiseAbs().maxCoeff()) + 1e-300;
    std::optional<Vec> d = H.solve_shifted(shift, -g);
    while (!d || !d->allFinite() || d->dot(g) >= 0.0) {
      shift = std::max(10.0 * shift, floor_shift);
      if (shift > 1e300) throw NumericalFailure("generic solver: singular Newton system");
      d = H.solve_shifted(shift, -g);
    }
    const double f0 = chain_value_hat(s, x);
    const double slope = d->dot(g);
    double alpha = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 80; ++ls) {
      const Vec xn = x + alpha * *d;
      const double fn = chain_value_hat(s, xn);
      if (fn <= f0 + 1e-4 * alpha * slope || chain_gradient_hat(s, xn).norm() < (1.0 - 1e-4 * alpha) * gn) {
        x = xn;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) throw NumericalFailure("generic solver: line search failed");
    shift = alpha == 1.0 ? (shift <= floor_shift ? 0.0 : 0.1 * shift) : std::max(10.0 * shift, floor_shift);
  }
  if (it >= max_iter) throw NumericalFailure("generic solver: no convergence within iteration limit");
  // A few undamped steps, kept only when they reduce the gradient.
  for (int p = 0; p < 3; ++p) {
    const Vec g = chain_gradient_hat(s, x);
    const auto d = chain_hessian_hat(s, x).solve_shifted(0.0, -g);
    if (!d || !d->allFinite()) break;
    const Vec xn = x + *d;
    if (chain_gradient_hat(s, xn).norm() < g.norm()) x = xn;
    else break;
  }
  return x;
}

/// Coordinate-wise exact minimization sweeps; recovers tiny tail entries to relative precision.
inline void coordinate_sweeps(const ChainSpec& s, Vec& x, int sweeps) {
  const Index m = x.size();
  const double lt = s.lambda_tilde();
  for (int sw = 0; sw < sweeps; ++sw) {
    for (Index t = 0; t < m; ++t) {
      auto dphi = [&](double y, double& curv) {
        double v = lt * y - (t == 0 ? s.gamma : 0.0);
        curv = lt;
        if (t > 0) {
          v -= s.g(x[t - 1] - y, 1);
          curv += s.g(x[t - 1] - y, 2);
        }
        if (t + 1 < m) {
          v += s.g(y - x[t + 1], 1);
          curv += s.g(y - x[t + 1], 2);
        }
        return v;
      };
      double y = x[t], curv = 0.0;
      // Bracket the root of the increasing derivative.
      double lo = y, hi = y, step = std::max(std::abs(y), 1e-300);
      while (dphi(lo, curv) > 0.0) {
        lo -= step;
        step *= 2.0;
      }
      step = std::max(std::abs(y), 1e-300);
      while (dphi(hi, curv) < 0.0) {
        hi += step;
        step *= 2.0;
      }
      for (int it = 0; it < 200; ++it) {
        const double v = dphi(y, curv);
        if (v == 0.0) break;
        if (v > 0.0) hi = y;
        else lo = y;
        double yn = y - v / curv;
        if (!(yn > lo && yn < hi)) yn = 0.5 * (lo + hi);
        if (yn == y) break;
        y = yn;
      }
      x[t] = y;
    }
  }
}

}  // namespace detail

/// Damped Newton with backtracking on chain coordinates; independent cross-check for the closed forms.
inline MinimizerSolution solve_generic(const ChainSpec& s) {
  const Index m = s.chain_length();
  if (m < 1 || m > 4096) throw InvalidInput("solve_generic: chain length must be in 1..4096");
  const double tol = 1e-10 * std::max(1.0, s.gamma);
  Vec x = detail::newton_chain(s, Vec::Zero(m), tol, 10000);
  if (s.family == Family::StronglyConvex) {
    for (Index t = 0; t < m; ++t)
      if (std::abs(x[t]) < 1e-20 * std::abs(x[0])) x[t] = 0.0;
    detail::coordinate_sweeps(s, x, 3);
  }
  return detail::finish(s, std::move(x), 0.0, Regime::NA);
}

namespace detail {

/// Forward recursion from w_1; returns -1 (start too small), +1 (too large) and the trajectory.
inline int shoot(double w1, double gamma, double lt, Index m, Vec& w) {
  const double target = gamma / lt;
  w.setZero(m);
  w[0] = w1;
  double sum = w1;
  for (Index t = 0; t + 1 < m; ++t) {
    const double rad = gamma - lt * sum;
    if (rad < 0.0) return +1;
    const double next = w[t] - std::sqrt(rad);
    if (next < 0.0) return -1;
    w[t + 1] = next;
    sum += next;
  }
  return sum > target ? +1 : (sum < target ? -1 : 0);
}

}  // namespace detail

inline MinimizerSolution solve_strongly_convex_shooting(const ChainSpec& s) {
  if (s.family != Family::StronglyConvex) throw InvalidInput("shooting: family must be StronglyConvex");
  const double lt = s.lambda_tilde();
  if (!(lt > 0.0)) throw InvalidInput("shooting: regularization must be positive");
  const Index m = s.chain_length();
  const double gamma = s.gamma;
  double lo = std::sqrt(gamma) / 2.0;
  double hi = std::sqrt(gamma) + std::sqrt(2.0 * std::pow(gamma, 1.5) / lt);
  Vec w(m), best(m);
  // Nonnegative coordinates summing to gamma/lt put w_1 in [0, gamma/lt]; widen to that when needed.
  if (detail::shoot(lo, gamma, lt, m, w) > 0) lo = 0.0;
  if (detail::shoot(hi, gamma, lt, m, w) < 0) hi = gamma / lt;
  if (detail::shoot(lo, gamma, lt, m, w) > 0 || detail::shoot(hi, gamma, lt, m, w) < 0)
    throw NumericalFailure("shooting: initial bracket does not contain the root");
  detail::shoot(lo, gamma, lt, m, best);
  int steps = 0;
  for (; steps < 200; ++steps) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const int side = detail::shoot(mid, gamma, lt, m, w);
    if (side == 0) {
      best = w;
      break;
    }
    if (side < 0) {
      lo = mid;
      best = w;
    } else {
      hi = mid;
    }
  }
  if (steps >= 200) throw NumericalFailure("shooting: bisection did not terminate");
  // Local polish: the truncated trajectory seeds Newton, then coordinate sweeps fix the tail.
  const double tol = 1e-10 * std::max(1.0, gamma);
  Vec x = detail::newton_chain(s, best, tol, 10000);
  for (Index t = 0; t < m; ++t)
    if (std::abs(x[t]) < 1e-20 * std::abs(x[0])) x[t] = 0.0;
  detail::coordinate_sweeps(s, x, 3);
  return detail::finish(s, std::move(x), 0.0, Regime::NA);
}

/// Dispatches to the closed form or shooting solver for the spec's family.
inline MinimizerSolution solve(const ChainSpec& s) {
  switch (s.family) {
    case Family::StronglyConvex: return solve_strongly_convex_shooting(s);
    case Family::Convex: return solve_convex_closed_form(s);
    case Family::KOrder: return korder_closed_form(s);
  }
  throw InvalidInput("unknown family");
}

// ---------------------------------------------------------------------------
// Property report

struct PropertyCheck {
  std::string name;
  bool applicable = true;
  bool passed = true;
  double margin = 0.0;
  std::string detail;
};

struct PropertyReport {
  std::vector<PropertyCheck> checks;
  bool all_passed() const {
    for (const auto& c : checks)
      if (c.applicable && !c.passed) return false;
    return true;
  }
};

namespace detail {

/// Item-2 style tail check: exists t0 <= m/2 with w_{t0+k} >= A * 18^(-2^k) for all k.
/// Works on log values with exact doubling continuation once entries fall below 1e-100.
inline PropertyCheck doubly_exponential_tail(const Vec& w, double lt) {
  PropertyCheck c;
  c.name = "tail 18^(-2^k) floor";
  const Index m = w.size();
  const double A = 9.0 * lt;
  const double lnA = std::log(A), ln18 = std::log(18.0), c0 = std::log(lt);
  Index p = m;  // first index handled by the continuation
  for (Index t = 0; t < m; ++t)
    if (!(w[t] >= 1e-100)) {
      p = t;
      break;
    }
  // When p < m, anchor the continuation at p-1 (a normal double) and extend by l_t - c0 = 2(l_{t-1} - c0).
  const bool cont = p < m && p > 0;
  const double anchor = cont ? std::log(w[p - 1]) - c0 : 0.0;
  auto scaled_margin = [&](Index t0, Index k) {
    const Index t = t0 + k;
    if (t < p || !cont) {
      if (!(w[t] > 0.0)) return -std::numeric_limits<double>::infinity();
      return (std::log(w[t]) - lnA) / std::ldexp(1.0, static_cast<int>(std::min<Index>(k, 1000))) + ln18;
    }
    // l_t = 2^(t-p+1) * anchor + c0, divided by 2^k.
    const double e = static_cast<double>(t0 - p + 1);
    return std::ldexp(anchor, static_cast<int>(e)) + (c0 - lnA) / std::ldexp(1.0, static_cast<int>(std::min<Index>(k, 1000))) + ln18;
  };
  double best = -std::numeric_limits<double>::infinity();
  Index witness = -1;
  for (Index t0 = 0; t0 < m && 2 * (t0 + 1) <= m; ++t0) {
    double worst = std::numeric_limits<double>::infinity();
    for (Index k = 0; t0 + k < m; ++k) {
      worst = std::min(worst, scaled_margin(t0, k));
      if (worst < 0.0) break;
    }
    if (worst > best) {
      best = worst;
      witness = t0;
    }
    if (worst >= 0.0) break;
  }
  c.passed = best >= 0.0;
  c.margin = best;
  std::ostringstream os;
  os << "witness t0 = " << (witness + 1) << " (1-based), scaled log margin";
  c.detail = os.str();
  return c;
}

}  // namespace detail

/// Evaluates the applicable structural inequalities and reports margins (positive = satisfied).
inline PropertyReport property_report(const ChainSpec& s, const MinimizerSolution& sol) {
  PropertyReport rep;
  const Vec& w = sol.chain_coords;
  if (s.family == Family::StronglyConvex) {
    const double lt = s.lambda_tilde();
    if (!(lt > 0.0)) throw InvalidInput("property_report: regularization must be positive");
    const double mu2 = s.mu2_or_muk;
    const bool hyp = s.gamma >= 1e4 * std::pow(s.lambda / mu2, 2) && s.delta >= std::sqrt(s.gamma) * (1 - 1e-15);
    // Item 1: linear-decay floor.
    PropertyCheck c1;
    c1.name = "linear-decay floor";
    c1.margin = std::numeric_limits<double>::infinity();
    for (Index t = 0; t < w.size(); ++t) {
      const double bound = std::max(0.0, std::pow(s.gamma, 0.75) / (7.0 * std::sqrt(lt)) +
                                              std::sqrt(s.gamma) * (0.5 - static_cast<double>(t + 1)));
      c1.margin = std::min(c1.margin, w[t] - bound);
    }
    c1.passed = c1.margin >= 0.0;
    c1.detail = "min_t w_t - max{0, floor_t}";
    // Item 2.
    PropertyCheck c2 = detail::doubly_exponential_tail(w, lt);
    // Item 3: norm bound.
    PropertyCheck c3;
    c3.name = "norm bound";
    const double nb = 2.0 * std::pow(s.gamma, 1.75) / std::pow(lt, 1.5);
    c3.margin = nb - w.squaredNorm();
    c3.passed = c3.margin >= 0.0;
    c3.detail = "2 gamma^(7/4) / lambda_tilde^(3/2) - |w|^2";
    // Structure: sum, monotonicity, sign.
    PropertyCheck c4;
    c4.name = "sum equals gamma/lambda_tilde";
    const double target = s.gamma / lt;
    c4.margin = 1e-8 - std::abs(w.sum() - target) / target;
    c4.passed = c4.margin >= 0.0;
    c4.detail = "1e-8 - relative error";
    PropertyCheck c5;
    c5.name = "nonincreasing and nonnegative";
    c5.margin = w.size() > 0 ? w[w.size() - 1] : 0.0;
    for (Index t = 0; t + 1 < w.size(); ++t) c5.margin = std::min(c5.margin, w[t] - w[t + 1]);
    c5.passed = c5.margin >= 0.0;
    c5.detail = "min of successive differences and last entry";
    for (PropertyCheck* c : {&c1, &c2, &c3}) {
      c->applicable = hyp;
      if (!hyp) c->detail += " (hypotheses not met)";
    }
    rep.checks = {c1, c2, c3, c4, c5};
  } else {
    PropertyCheck cn;
    cn.name = "norm bound";
    if (sol.norm_bound) {
      cn.margin = *sol.norm_bound - w.squaredNorm();
      cn.passed = cn.margin >= 0.0;
      cn.detail = "table bound - |w|^2";
    } else {
      cn.applicable = false;
    }
    rep.checks.push_back(cn);
    if (s.D > 0.0) {
      // Minimizer of the doubled chain under the same parameters must stay within D.
      ChainSpec twice = s;
      twice.T = 2 * s.T;
      twice.dim = 4 * static_cast<Index>(s.T);
      const MinimizerSolution big = s.family == Family::Convex ? solve_convex_closed_form(twice)
                                                               : korder_closed_form(twice);
      PropertyCheck cd;
      cd.name = "doubled-chain minimizer within D";
      cd.margin = s.D - big.chain_coords.norm();
      cd.passed = cd.margin >= -1e-12 * s.D;
      cd.detail = "D - |w_2T|";
      rep.checks.push_back(cd);
    }
    PropertyCheck cs;
    cs.name = "delta nonnegative";
    cs.margin = sol.delta;
    cs.passed = sol.delta >= 0.0;
    rep.checks.push_back(cs);
  }
  return rep;
}

inline std::string to_table(const PropertyReport& rep) {
  std::ostringstream os;
  os << std::left << std::setw(34) << "check" << std::setw(8) << "status" << std::setw(16) << "margin"
     << "detail\n";
  for (const auto& c : rep.checks) {
    const char* st = !c.applicable ? "n/a" : (c.passed ? "pass" : "FAIL");
    os << std::left << std::setw(34) << c.name << std::setw(8) << st << std::setw(16) << std::setprecision(6)
       << c.margin << c.detail << "\n";
  }
  return os.str();
}

}  // namespace oclab

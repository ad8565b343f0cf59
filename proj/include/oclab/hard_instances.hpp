#pragma once

#include "core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace oclab {

enum class Family { StronglyConvex, Convex, KOrder };

inline std::string to_string(Family f) {
  switch (f) {
    case Family::StronglyConvex: return "StronglyConvex";
    case Family::Convex: return "Convex";
    case Family::KOrder: return "KOrder";
  }
  return "?";
}

inline Family family_from_string(const std::string& s) {
  if (s == "StronglyConvex" || s == "strong") return Family::StronglyConvex;
  if (s == "Convex" || s == "convex") return Family::Convex;
  if (s == "KOrder" || s == "korder") return Family::KOrder;
  throw InvalidInput("unknown family: " + s);
}

/// |x|^3/3 up to |x| = delta, continued quadratically beyond.
struct SmoothedCubic {
  double delta;
};

inline double g_eval(const SmoothedCubic& g, double x, int order) {
  const double D = g.delta;
  const double a = std::abs(x);
  const double s = x < 0 ? -1.0 : 1.0;
  if (a <= D) {
    switch (order) {
      case 0: return a * a * a / 3.0;
      case 1: return x * a;
      case 2: return 2.0 * a;
      case 3: return 2.0 * s;
      default: break;
    }
  } else {
    switch (order) {
      case 0: return D * x * x - D * D * a + D * D * D / 3.0;
      case 1: return s * (2.0 * D * a - D * D);
      case 2: return 2.0 * D;
      case 3: return 0.0;
      default: break;
    }
  }
  throw InvalidInput("g_eval: order must be 0..3");
}

/// |x|^(k+1)/(k+1).
struct PowerG {
  int k;
};

inline double g_eval(const PowerG& g, double x, int order) {
  if (order < 0) throw InvalidInput("PowerG: negative order");
  if (order > g.k + 1) return 0.0;
  const double a = std::abs(x);
  double coef = order == 0 ? 1.0 / (g.k + 1) : 1.0;
  for (int j = g.k + 2 - order; j <= g.k; ++j) coef *= j;
  const double sgn = (order % 2 == 1 && x < 0) ? -1.0 : 1.0;
  return sgn * coef * std::pow(a, g.k + 1 - order);
}

inline double factorial(int n) {
  double r = 1.0;
  for (int i = 2; i <= n; ++i) r *= i;
  return r;
}

/**
 * @brief One member of a hard family.
 *
 * Chain length m is T_tilde for the strongly convex family and T otherwise.
 * `D` and `gamma_case` are carried for reporting; `gamma_case` is the
 * parameter-schedule branch for the convex family (1..3) and 0 elsewhere.
 */
struct ChainSpec {
  Family family = Family::Convex;
  int k = 2;
  double mu1 = 0.0;
  double mu2_or_muk = 0.0;
  double lambda = 0.0;
  double gamma = 0.0;
  double delta = 0.0;
  int T = 1;
  int T_tilde = 0;
  Index dim = 0;
  Basis basis;
  double scale = 0.0;
  double D = 0.0;
  int gamma_case = 0;

  Index chain_length() const { return family == Family::StronglyConvex ? T_tilde : T; }
  /// Regularization weight relative to `scale`; equals 12*lambda/mu2 for the strongly convex family.
  double lambda_tilde() const { return scale > 0 ? lambda / scale : 0.0; }

  double g(double x, int order) const {
    if (family == Family::KOrder) return g_eval(PowerG{k}, x, order);
    return g_eval(SmoothedCubic{delta}, x, order);
  }
};

/// Calls f(a, b) for each chain term; b < 0 marks an endpoint term <v_a, w>.
template <class F>
void for_each_term(const ChainSpec& s, Index m, F&& f) {
  const bool endpoints = s.family != Family::StronglyConvex;
  if (endpoints && m > 0) f(Index{0}, Index{-1});
  for (Index i = 0; i + 1 < m; ++i) f(i, i + 1);
  if (endpoints && m > 0) f(m - 1, Index{-1});
}

inline double term_arg(const Vec& x, Index a, Index b) { return b < 0 ? x[a] : x[a] - x[b]; }

/// Sum of g over the chain terms minus gamma * x_1 (no regularizer).
inline double chain_core_value(const ChainSpec& s, const Vec& x) {
  double v = 0.0;
  for_each_term(s, x.size(), [&](Index a, Index b) { v += s.g(term_arg(x, a, b), 0); });
  return v - s.gamma * x[0];
}

inline Vec chain_core_gradient(const ChainSpec& s, const Vec& x) {
  Vec gr = Vec::Zero(x.size());
  for_each_term(s, x.size(), [&](Index a, Index b) {
    const double gp = s.g(term_arg(x, a, b), 1);
    gr[a] += gp;
    if (b >= 0) gr[b] -= gp;
  });
  gr[0] -= s.gamma;
  return gr;
}

inline Tridiagonal chain_core_hessian(const ChainSpec& s, const Vec& x) {
  const Index m = x.size();
  Tridiagonal H{Vec::Zero(m), Vec::Zero(m > 0 ? m - 1 : 0)};
  for_each_term(s, m, [&](Index a, Index b) {
    const double c = s.g(term_arg(x, a, b), 2);
    H.diag[a] += c;
    if (b >= 0) {
      H.diag[b] += c;
      H.off[a] -= c;
    }
  });
  return H;
}

/// Unscaled chain objective: core plus (lambda_tilde/2)|x|^2. The rotated f equals scale times this.
inline double chain_value_hat(const ChainSpec& s, const Vec& x) {
  return chain_core_value(s, x) + 0.5 * s.lambda_tilde() * x.squaredNorm();
}

inline Vec chain_gradient_hat(const ChainSpec& s, const Vec& x) {
  return chain_core_gradient(s, x) + s.lambda_tilde() * x;
}

inline Tridiagonal chain_hessian_hat(const ChainSpec& s, const Vec& x) {
  Tridiagonal H = chain_core_hessian(s, x);
  H.diag.array() += s.lambda_tilde();
  return H;
}

/// g(a) - g(b) - g'(b)(a - b), integrated piecewise so that nearby arguments do not cancel.
inline double g_bregman(const ChainSpec& s, double a, double b) {
  if (a == b) return 0.0;
  const double lo = std::min(a, b), hi = std::max(a, b);
  std::vector<double> inner;
  const double marks[3] = {-s.delta, 0.0, s.delta};
  for (double c : marks)
    if (c > lo && c < hi && (s.family != Family::KOrder || c == 0.0)) inner.push_back(c);
  std::sort(inner.begin(), inner.end());
  if (a < b) std::reverse(inner.begin(), inner.end());
  std::vector<double> path{b};
  path.insert(path.end(), inner.begin(), inner.end());
  path.push_back(a);
  // Integral of (a - u) g''(u) du from b to a; the integrand is polynomial on each piece.
  static const double xg[4] = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526};
  static const double wg[4] = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538};
  double total = 0.0;
  for (std::size_t p = 0; p + 1 < path.size(); ++p) {
    const double half = 0.5 * (path[p + 1] - path[p]), mid = 0.5 * (path[p + 1] + path[p]);
    double acc = 0.0;
    for (int q = 0; q < 4; ++q) {
      const double u = mid + half * xg[q];
      acc += wg[q] * (a - u) * s.g(u, 2);
    }
    total += acc * half;
  }
  return total;
}

/// f_hat(x) - f_hat(xstar) evaluated through Bregman terms; assumes nothing about stationarity of xstar.
inline double chain_gap_hat(const ChainSpec& s, const Vec& x, const Vec& xstar) {
  double v = 0.0;
  for_each_term(s, x.size(), [&](Index a, Index b) { v += g_bregman(s, term_arg(x, a, b), term_arg(xstar, a, b)); });
  const Vec d = x - xstar;
  v += 0.5 * s.lambda_tilde() * d.squaredNorm();
  v += chain_gradient_hat(s, xstar).dot(d);
  return v;
}

// ---------------------------------------------------------------------------
// Builders

inline constexpr std::uint64_t kDefaultSeed = 20170101;

inline ChainSpec build_strongly_convex(double mu1, double mu2, double lambda, double D, int T,
                                       std::uint64_t seed = kDefaultSeed) {
  if (!(mu1 > 0 && mu2 > 0 && lambda > 0 && D > 0) || T < 1)
    throw InvalidInput("build_strongly_convex: parameters must be positive");
  if (mu1 / lambda < 68.0)
    throw ConditionViolated("mu1/lambda >= 68", "mu1/lambda = " + std::to_string(mu1 / lambda));
  if (mu2 * D / lambda < 694.0)
    throw ConditionViolated("mu2*D/lambda >= 694", "mu2*D/lambda = " + std::to_string(mu2 * D / lambda));
  ChainSpec s;
  s.family = Family::StronglyConvex;
  s.k = 2;
  s.mu1 = mu1;
  s.mu2_or_muk = mu2;
  s.lambda = lambda;
  s.D = D;
  const double from_mu1 = std::pow(3.0 * (mu1 - lambda) / (2.0 * mu2), 2);
  const double from_D =
      std::exp((8.0 * std::log(D) + 6.0 * std::log(12.0 * lambda) - std::log(16.0) - 6.0 * std::log(mu2)) / 7.0);
  s.gamma = std::min(from_mu1, from_D);
  s.delta = std::sqrt(s.gamma);
  const double ratio = mu2 / (6.0 * lambda);
  const double need = std::max({4.0 * s.gamma * ratio * ratio + 1.0, 2.0 * T, s.gamma * ratio + 1.0});
  s.T = T;
  s.T_tilde = static_cast<int>(std::ceil(need - 1e-12 * need));
  s.dim = 2 * static_cast<Index>(s.T_tilde);
  s.scale = mu2 / 12.0;
  s.basis = Basis::random(s.dim, s.T_tilde, seed);
  return s;
}

inline ChainSpec build_convex(double mu1, double mu2, double D, int T, std::uint64_t seed = kDefaultSeed) {
  if (!(mu1 > 0 && mu2 > 0 && D > 0) || T < 1) throw InvalidInput("build_convex: parameters must be positive");
  ChainSpec s;
  s.family = Family::Convex;
  s.k = 2;
  s.mu1 = mu1;
  s.mu2_or_muk = mu2;
  s.lambda = 0.0;
  s.D = D;
  s.delta = 3.0 * mu1 / (2.0 * mu2);
  const double Tf = T;
  const double r = D * D / (48.0 * s.delta * s.delta * Tf * Tf * Tf);
  if (r <= 1.0 / (Tf * Tf)) {
    s.gamma = D * D / (48.0 * Tf);
    s.gamma_case = 1;
  } else if (r <= 1.0) {
    s.gamma = D * s.delta / std::sqrt(12.0 * Tf);
    s.gamma_case = 2;
  } else {
    s.gamma = D * s.delta / std::sqrt(3.0 * Tf);
    s.gamma_case = 3;
  }
  s.T = T;
  s.T_tilde = 0;
  s.dim = 2 * static_cast<Index>(T);
  s.scale = mu2 / 12.0;
  s.basis = Basis::random(s.dim, T, seed);
  return s;
}

inline ChainSpec build_korder(int k, double muk, double D, int T, std::uint64_t seed = kDefaultSeed) {
  if (k < 1 || !(muk > 0 && D > 0) || T < 1) throw InvalidInput("build_korder: invalid parameters");
  ChainSpec s;
  s.family = Family::KOrder;
  s.k = k;
  s.mu2_or_muk = muk;
  s.D = D;
  const double kk = k, tt = T;
  s.gamma = std::exp(0.5 * kk * std::log(3.0) + kk * std::log(D) + std::log1p(std::pow(2.0 * tt, kk)) -
                     1.5 * kk * std::log1p(2.0 * tt));
  s.delta = 0.0;
  s.T = T;
  s.dim = 2 * static_cast<Index>(T);
  s.scale = muk / (factorial(k) * std::pow(2.0, (kk + 3.0) / 2.0));
  s.basis = Basis::random(s.dim, T, seed);
  return s;
}

/// Same parameters (gamma, delta, scale) with a new chain length m; the ambient dimension becomes 2m.
inline ChainSpec with_chain_length(const ChainSpec& s, int m, std::uint64_t seed = kDefaultSeed) {
  if (m < 1) throw InvalidInput("chain length must be positive");
  ChainSpec r = s;
  if (s.family == Family::StronglyConvex) r.T_tilde = m;
  else r.T = m;
  r.dim = 2 * static_cast<Index>(m);
  r.basis = Basis::random(r.dim, m, seed);
  return r;
}

// ---------------------------------------------------------------------------
// Oracle

namespace detail {

/// Evaluates with basis columns V (d x p, p <= m); chain coordinates beyond p are taken as zero.
/// Throws if the reply would depend on a column that is not supplied; contributions below
/// `leak_tol` relative to the reply (rounding in coordinates that are zero in exact arithmetic) are dropped,
/// and chain coordinates below leak_tol * |w| are treated as zero.
inline OracleReply evaluate_with(const ChainSpec& s, const std::shared_ptr<const Mat>& Vp, const Point& w,
                                 int order, double leak_tol = 1e-12) {
  const Mat& V = *Vp;
  if (order < 0 || order > 2) throw InvalidInput("evaluate: order must be 0, 1 or 2");
  if (w.size() != V.rows()) throw InvalidInput("evaluate: dimension mismatch");
  if (!w.allFinite()) throw InvalidInput("evaluate: non-finite query");
  const Index m = s.chain_length();
  const Index p = V.cols();
  Vec x = Vec::Zero(m);
  x.head(p) = V.transpose() * w;
  // Coordinates at rounding level of |w| are zero in exact arithmetic (v_t is chosen orthogonal to w).
  const double zero_tol = leak_tol * w.norm();
  for (Index j = 0; j < p; ++j)
    if (std::abs(x[j]) <= zero_tol) x[j] = 0.0;
  OracleReply r;
  r.order = order;
  r.value = s.scale * chain_core_value(s, x) + 0.5 * s.lambda * w.squaredNorm();
  if (order >= 1) {
    const Vec gc = s.scale * chain_core_gradient(s, x);
    if (p < m && gc.tail(m - p).cwiseAbs().maxCoeff() > leak_tol * (1.0 + gc.cwiseAbs().maxCoeff()))
      throw InvalidInput("evaluate: reply depends on an unsupplied basis vector");
    r.gradient = V * gc.head(p) + s.lambda * w;
  }
  if (order >= 2) {
    Tridiagonal Hc = chain_core_hessian(s, x);
    if (p < m) {
      const double hs = leak_tol * s.scale * (1.0 + Hc.diag.cwiseAbs().maxCoeff());
      const bool leaks = s.scale * Hc.diag.tail(m - p).cwiseAbs().maxCoeff() > hs ||
                         (p > 0 && s.scale * Hc.off.tail(m - p).cwiseAbs().maxCoeff() > hs);
      if (leaks) throw InvalidInput("evaluate: Hessian depends on an unsupplied basis vector");
    }
    ChainHessian H;
    H.V = Vp;
    H.chain.diag = s.scale * Hc.diag.head(p);
    H.chain.off = s.scale * Hc.off.head(p > 0 ? p - 1 : 0);
    H.shift = s.lambda;
    r.hessian = std::move(H);
  }
  return r;
}

}  // namespace detail

inline OracleReply evaluate(const ChainSpec& s, const Point& w, int order) {
  if (w.size() != s.dim) throw InvalidInput("evaluate: dimension mismatch");
  return detail::evaluate_with(s, s.basis.shared_vectors(), w, order);
}

/// k-th derivative tensor in chain coordinates applied to chain-coordinate directions.
inline double kth_form_chain(const ChainSpec& s, const Vec& x, const std::vector<Vec>& dirs) {
  const int k = s.k;
  double acc = 0.0;
  for_each_term(s, x.size(), [&](Index a, Index b) {
    double prod = s.g(term_arg(x, a, b), k);
    for (const Vec& u : dirs) prod *= term_arg(u, a, b);
    acc += prod;
  });
  return s.scale * acc;
}

inline double kth_form(const ChainSpec& s, const Point& w, const std::vector<Point>& dirs) {
  if (s.family != Family::KOrder) throw InvalidInput("kth_form: family must be KOrder");
  if (static_cast<int>(dirs.size()) != s.k) throw InvalidInput("kth_form: need exactly k directions");
  if (w.size() != s.dim) throw InvalidInput("kth_form: dimension mismatch");
  const Mat& V = s.basis.vectors();
  std::vector<Vec> pd;
  pd.reserve(dirs.size());
  for (const Point& d : dirs) {
    if (d.size() != s.dim) throw InvalidInput("kth_form: dimension mismatch");
    pd.push_back(V.transpose() * d);
  }
  return kth_form_chain(s, V.transpose() * w, pd);
}

}  // namespace oclab

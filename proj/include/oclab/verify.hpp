#pragma once

#include "optimizers.hpp"

namespace oclab {

// Probes on ChainSpec instances work in chain coordinates: w = V x maps R^m isometrically
// onto span{v}, and off-span directions only see the lambda/2 |w|^2 term.

namespace detail {

/// Largest absolute entry of a - b relative to max(|b|_max, 1).
inline double rel_max_dev(const Mat& a, const Mat& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

}  // namespace detail

/// Central-difference check of the gradient (order 1) or Hessian (order 2) of any objective.
template <Objective F>
double fd_check(const F& f, const Vec& w, int order, double step) {
  if (!(step > 0.0)) throw InvalidInput("fd_check: step must be positive");
  if (order != 1 && order != 2) throw InvalidInput("fd_check: order must be 1 or 2");
  const Index n = f.dim();
  if (w.size() != n) throw InvalidInput("fd_check: dimension mismatch");
  if (order == 1) {
    const Vec g = f.gradient(w);
    Vec fd(n);
    Vec p = w;
    for (Index i = 0; i < n; ++i) {
      p[i] = w[i] + step;
      const double up = f.value(p);
      p[i] = w[i] - step;
      const double dn = f.value(p);
      p[i] = w[i];
      fd[i] = (up - dn) / (2.0 * step);
    }
    return detail::rel_max_dev(fd, g);
  }
  const Mat H = to_dense(f.hessian(w));
  Mat fd(n, n);
  Vec p = w;
  for (Index i = 0; i < n; ++i) {
    p[i] = w[i] + step;
    const Vec up = f.gradient(p);
    p[i] = w[i] - step;
    const Vec dn = f.gradient(p);
    p[i] = w[i];
    fd.col(i) = (up - dn) / (2.0 * step);
  }
  return detail::rel_max_dev(0.5 * (fd + fd.transpose()), H);
}

/// Ambient oracle (for d <= 512) or chain coordinates otherwise; `w` must match the chosen space.
inline bool fd_uses_ambient(const ChainSpec& s) { return s.dim <= 512; }

inline double fd_check(const ChainSpec& s, const Vec& w, int order, double step) {
  if (fd_uses_ambient(s)) return fd_check(AmbientObjective(s), w, order, step);
  return fd_check(ChainObjective(s), w, order, step);
}

/// Analytic Lipschitz constant of the derivative of the given order.
inline double lipschitz_bound(const ChainSpec& s, int order) {
  switch (s.family) {
    case Family::StronglyConvex:
      if (order == 1) return 2.0 * s.mu2_or_muk * s.delta / 3.0 + s.lambda;
      if (order == 2) return s.mu2_or_muk;
      break;
    case Family::Convex:
      if (order == 1) return 2.0 * s.mu2_or_muk * s.delta / 3.0;
      if (order == 2) return s.mu2_or_muk;
      break;
    case Family::KOrder:
      if (order == s.k) return s.mu2_or_muk;
      break;
  }
  throw InvalidInput("lipschitz_bound: derivative order not covered for this family");
}

/// Sampling radius: twice the norm of the minimizer (at least 1).
inline double probe_radius(const ChainSpec& s) {
  const MinimizerSolution sol = solve(s);
  return 2.0 * std::max(1.0, sol.chain_coords.norm());
}

namespace detail {

/// Endpoint pairs: half long segments across the ball, half short segments around a random point.
inline std::pair<Vec, Vec> sample_segment(Index m, double radius, Rng& rng, int i) {
  Vec a = random_in_ball(m, radius, rng);
  if (i % 2 == 0) return {a, random_in_ball(m, radius, rng)};
  std::uniform_real_distribution<double> ud(-6.0, 0.0);
  const double len = radius * std::pow(10.0, ud(rng));
  return {a, a + len * random_unit_vector(m, rng)};
}

inline Tridiagonal scaled_hessian(const ChainSpec& s, const Vec& x) {
  Tridiagonal H = chain_hessian_hat(s, x);
  H.diag *= s.scale;
  H.off *= s.scale;
  return H;
}

inline double tridiag_op_norm(const Tridiagonal& H) {
  const auto e = H.extreme_eigenvalues();
  return std::max(std::abs(e.first), std::abs(e.second));
}

}  // namespace detail

/**
 * @brief Largest observed ratio |D^j f(w) - D^j f(w')| / |w - w'| over sampled segments.
 *
 * Orders 1 and 2 use exact vector and operator norms. Higher orders maximize the
 * multilinear-form difference over `n_dirs` random unit direction tuples per segment.
 */
inline double lipschitz_probe(const ChainSpec& s, int order, int n_segments, std::uint64_t seed, int n_dirs = 64) {
  if (order < 1) throw InvalidInput("lipschitz_probe: order must be positive");
  if (s.family != Family::KOrder && order > 2) throw InvalidInput("lipschitz_probe: order exceeds family");
  if (s.family == Family::KOrder && order > s.k) throw InvalidInput("lipschitz_probe: order exceeds k");
  const Index m = s.chain_length();
  const double radius = probe_radius(s);
  Rng rng(seed);
  double best = 0.0;
  for (int i = 0; i < n_segments; ++i) {
    auto [a, b] = detail::sample_segment(m, radius, rng, i);
    const double dist = (a - b).norm();
    if (dist == 0.0) continue;
    double diff = 0.0;
    if (order == 1) {
      diff = (s.scale * (chain_gradient_hat(s, a) - chain_gradient_hat(s, b))).norm();
    } else if (order == 2) {
      Tridiagonal Ha = detail::scaled_hessian(s, a), Hb = detail::scaled_hessian(s, b);
      Ha.diag -= Hb.diag;
      Ha.off -= Hb.off;
      diff = detail::tridiag_op_norm(Ha);
    } else {
      auto form = [&](const Vec& x, const std::vector<Vec>& dirs) {
        double acc = 0.0;
        for_each_term(s, m, [&](Index p, Index q) {
          double prod = s.g(term_arg(x, p, q), order);
          for (const Vec& u : dirs) prod *= term_arg(u, p, q);
          acc += prod;
        });
        return acc;
      };
      for (int t = 0; t < n_dirs; ++t) {
        std::vector<Vec> dirs;
        for (int j = 0; j < order; ++j) dirs.push_back(random_unit_vector(m, rng));
        const double fa = form(a, dirs), fb = form(b, dirs);
        diff = std::max(diff, s.scale * std::abs(fa - fb));
      }
    }
    best = std::max(best, diff / dist);
  }
  return best;
}

/// Minimum of u^T H(w) u over sampled points and unit directions, and of the exact smallest eigenvalue at each point.
inline double convexity_probe(const ChainSpec& s, int n_pairs, std::uint64_t seed) {
  const Index m = s.chain_length();
  const double radius = probe_radius(s);
  Rng rng(seed);
  double lo = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n_pairs; ++i) {
    const Vec x = random_in_ball(m, radius, rng);
    const Vec u = random_unit_vector(m, rng);
    Tridiagonal H = detail::scaled_hessian(s, x);
    lo = std::min(lo, u.dot(H.apply(u)));
    lo = std::min(lo, H.extreme_eigenvalues().first);
  }
  if (s.dim > m) lo = std::min(lo, s.lambda);  // directions orthogonal to every v
  return lo;
}

/// Operator norm of sum_i r_i r_i^T assembled densely in chain coordinates.
inline double chain_direction_norm(const ChainSpec& s) {
  const Index m = s.chain_length();
  Mat R = Mat::Zero(m, m);
  for_each_term(s, m, [&](Index a, Index b) {
    R(a, a) += 1.0;
    if (b < 0) return;
    R(b, b) += 1.0;
    R(a, b) -= 1.0;
    R(b, a) -= 1.0;
  });
  Eigen::SelfAdjointEigenSolver<Mat> es(R, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

struct VerifyReport {
  std::string family;
  double fd_gradient = 0.0;
  double fd_hessian = 0.0;
  std::vector<std::pair<int, double>> lipschitz;  ///< (order, estimate)
  std::vector<std::pair<int, double>> lipschitz_bounds;
  double min_curvature = 0.0;
  double curvature_floor = 0.0;
  double direction_norm = 0.0;
  bool passed = false;
};

/// Runs every probe on `s` with the documented sample counts and tolerances.
inline VerifyReport verify_instance(const ChainSpec& s, std::uint64_t seed, int n_segments = 1000) {
  VerifyReport r;
  r.family = to_string(s.family);
  Rng rng(seed);
  const double radius = probe_radius(s);
  const Index n = fd_uses_ambient(s) ? s.dim : s.chain_length();
  double fg = 0.0, fh = 0.0;
  for (int i = 0; i < 5; ++i) {
    const Vec w = random_in_ball(n, radius, rng);
    const double h = 1e-5 * (1.0 + w.norm());
    fg = std::max(fg, fd_check(s, w, 1, h));
    if (n <= 512) fh = std::max(fh, fd_check(s, w, 2, h));
  }
  r.fd_gradient = fg;
  r.fd_hessian = fh;
  bool ok = fg <= 1e-6 && fh <= 1e-6;
  std::vector<int> orders;
  if (s.family == Family::KOrder) orders = {s.k};
  else orders = {1, 2};
  for (int o : orders) {
    const double est = lipschitz_probe(s, o, n_segments, seed + static_cast<std::uint64_t>(o));
    const double bound = lipschitz_bound(s, o);
    r.lipschitz.push_back({o, est});
    r.lipschitz_bounds.push_back({o, bound});
    ok = ok && est <= bound * (1.0 + 1e-8);
  }
  r.min_curvature = convexity_probe(s, 200, seed + 7);
  r.curvature_floor = s.lambda;
  ok = ok && r.min_curvature >= s.lambda - 1e-10;
  r.direction_norm = chain_direction_norm(s);
  ok = ok && r.direction_norm <= 4.0 + 1e-12;
  r.passed = ok;
  return r;
}

}  // namespace oclab

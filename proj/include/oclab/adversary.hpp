#pragma once

#include "optimizers.hpp"

#include <cstring>
#include <functional>

namespace oclab {

/// Parameters shared by every member of a family; T is supplied separately.
struct FamilyParams {
  Family family = Family::Convex;
  double mu1 = 0.0;
  double mu2 = 0.0;  ///< mu2, or mu_k for the k-th order family
  double lambda = 0.0;
  double D = 0.0;
  int k = 2;
};

/// Builds the family member used as the T-round hard instance (chain length T for convex/k-th order).
inline ChainSpec build_instance(const FamilyParams& p, int T, std::uint64_t seed = kDefaultSeed) {
  switch (p.family) {
    case Family::StronglyConvex: return build_strongly_convex(p.mu1, p.mu2, p.lambda, p.D, T, seed);
    case Family::Convex: return build_convex(p.mu1, p.mu2, p.D, T, seed);
    case Family::KOrder: return build_korder(p.k, p.mu2, p.D, T, seed);
  }
  throw InvalidInput("unknown family");
}

// ---------------------------------------------------------------------------
// Adversary state

/**
 * @brief Revealed basis vectors and logged queries of a resisting-oracle game.
 *
 * `span` holds an orthonormal basis of span{queries, revealed}; new vectors are drawn
 * orthogonal to it from a generator seeded once per game.
 */
struct AdversaryState {
  Index dim = 0;
  Mat revealed;  ///< d x t
  std::vector<Point> query_log;
  std::uint64_t seed = 0;
  Rng rng;
  Mat span;
  Index span_cols = 0;

  AdversaryState(Index d, std::uint64_t s) : dim(d), revealed(d, 0), seed(s), rng(s), span(d, 0) {
    if (d <= 0) throw InvalidInput("adversary: dimension must be positive");
  }

  Index revealed_count() const { return revealed.cols(); }

  void add_to_span(const Vec& z_in) {
    Vec z = z_in;
    const double before = z.norm();
    if (before == 0.0) return;
    detail::mgs_pass(span, span_cols, z);
    double after = z.norm();
    if (after < 1e-6 * before) {
      detail::mgs_pass(span, span_cols, z);
      after = z.norm();
    }
    if (after <= 1e-12 * before) return;
    if (span.cols() == span_cols) span.conservativeResize(Eigen::NoChange, std::max<Index>(4, 2 * span_cols));
    span.col(span_cols++) = z / after;
  }
};

/// Logs `new_query` and reveals a unit vector orthogonal to all queries and revealed vectors.
inline Vec next_basis_vector(AdversaryState& st, const Point& new_query) {
  if (new_query.size() != st.dim) throw InvalidInput("next_basis_vector: dimension mismatch");
  if (!new_query.allFinite()) throw InvalidInput("next_basis_vector: non-finite query");
  const Index used = static_cast<Index>(st.query_log.size()) + 1 + st.revealed_count();
  if (st.dim < used + 1) throw DimensionExhausted("adversary: ambient dimension exhausted");
  st.query_log.push_back(new_query);
  st.add_to_span(new_query);
  const Vec v = detail::orthogonal_unit(st.span, st.span_cols, st.rng);
  st.revealed.conservativeResize(Eigen::NoChange, st.revealed.cols() + 1);
  st.revealed.col(st.revealed.cols() - 1) = v;
  st.add_to_span(v);
  return v;
}

// ---------------------------------------------------------------------------
// Game

struct GameHistory {
  Index dim = 0;
  std::vector<Point> queries;
  std::vector<OracleReply> replies;
};

/// A deterministic algorithm: maps everything seen so far to the next query.
using GameAlgorithm = std::function<Point(const GameHistory&)>;

struct GameTranscript {
  std::vector<Point> queries;
  std::vector<Vec> reveals;
  std::uint64_t replies_digest = 0;
  std::vector<double> suboptimality;
};

struct GameResult {
  ChainSpec spec;  ///< the finalized instance
  MinimizerSolution solution;
  RunTrace trace;
  GameTranscript transcript;
};

namespace detail {

inline void fnv1a(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
}

inline void digest_reply(std::uint64_t& h, const OracleReply& r) {
  fnv1a(h, &r.value, sizeof r.value);
  fnv1a(h, r.gradient.data(), sizeof(double) * static_cast<std::size_t>(r.gradient.size()));
  if (r.hessian) {
    const auto& c = r.hessian->chain;
    fnv1a(h, c.diag.data(), sizeof(double) * static_cast<std::size_t>(c.diag.size()));
    fnv1a(h, c.off.data(), sizeof(double) * static_cast<std::size_t>(c.off.size()));
    fnv1a(h, &r.hessian->shift, sizeof(double));
  }
}

/// Instance played during a T-round game: the doubled chain for convex families.
inline ChainSpec game_instance(const FamilyParams& p, int T) {
  ChainSpec s = build_instance(p, T);
  if (p.family != Family::StronglyConvex) {
    s.T = 2 * T;
    s.dim = 4 * static_cast<Index>(T);
  }
  return s;
}

}  // namespace detail

/// Suboptimality of w under `s`, given the revealed columns (any completion is orthogonal to w).
inline double game_suboptimality(const ChainSpec& s, const MinimizerSolution& sol, const Mat& revealed,
                                 const Point& w) {
  Vec x = Vec::Zero(s.chain_length());
  const Vec head = revealed.transpose() * w;
  x.head(head.size()) = head;
  const double off_chain = (w - revealed * head).squaredNorm();
  return s.scale * chain_gap_hat(s, x, sol.chain_coords) + 0.5 * s.lambda * off_chain;
}

/**
 * @brief Plays T rounds of the resisting-oracle game against `algo`.
 *
 * Each reply is computed from the vectors revealed so far; the evaluation throws if it
 * would need a vector not yet chosen. After round T the basis is completed with vectors
 * orthogonal to every query and revealed vector.
 */
inline GameResult run_resisting_game(const GameAlgorithm& algo, const FamilyParams& params, int T,
                                     std::uint64_t seed = kDefaultSeed) {
  if (T < 1) throw InvalidInput("game: T must be positive");
  ChainSpec s = detail::game_instance(params, T);
  const Index m = s.chain_length();
  if (m < T) throw InvalidInput("game: chain shorter than the number of rounds");
  // The linear-gradient family has a constant Hessian over the whole chain: first-order replies only.
  const int oracle_order = s.family == Family::KOrder ? std::min(s.k, 2) : 2;
  AdversaryState st(s.dim, seed);
  GameHistory hist;
  hist.dim = s.dim;
  GameResult res;
  std::uint64_t digest = 1469598103934665603ULL;
  for (int t = 0; t < T; ++t) {
    Point w = algo(hist);
    if (w.size() != s.dim || !w.allFinite()) throw AlgorithmFault("game: algorithm returned an invalid point");
    next_basis_vector(st, w);
    auto Vp = std::make_shared<const Mat>(st.revealed);
    OracleReply r = detail::evaluate_with(s, Vp, w, oracle_order);
    detail::digest_reply(digest, r);
    hist.queries.push_back(w);
    hist.replies.push_back(std::move(r));
  }
  Mat Q(s.dim, T);
  for (int t = 0; t < T; ++t) Q.col(t) = hist.queries[t];
  s.basis = Basis::completed(s.dim, m, seed ^ 0x9E3779B97F4A7C15ULL, st.revealed, Q);
  res.solution = solve(s);
  res.trace.optimizer_id = "resisting-game";
  res.trace.params = {{"T", double(T)}, {"seed", double(seed)}};
  for (int t = 0; t < T; ++t) {
    const double gap = game_suboptimality(s, res.solution, st.revealed, hist.queries[t]);
    res.trace.records.push_back({t + 1, gap, hist.replies[t].gradient.norm(), 0.0});
    res.transcript.suboptimality.push_back(gap);
  }
  res.trace.complete = true;
  res.transcript.queries = hist.queries;
  for (Index j = 0; j < st.revealed.cols(); ++j) res.transcript.reveals.push_back(st.revealed.col(j));
  res.transcript.replies_digest = digest;
  res.spec = std::move(s);
  return res;
}

// ---------------------------------------------------------------------------
// Certified gap

struct GapBound {
  double computed = 0.0;  ///< exact certified gap for this T
  double floor = 0.0;     ///< analytic lower bound on the gap
};

/// Item-1 floor on the t-th (1-based) minimizer coordinate of the strongly convex chain.
inline double sc_linear_floor(double gamma, double lt, int t) {
  return std::max(0.0, std::pow(gamma, 0.75) / (7.0 * std::sqrt(lt)) + std::sqrt(gamma) * (0.5 - t));
}

inline GapBound gap_lower_bound(const FamilyParams& p, int T) {
  if (T < 1) throw InvalidInput("gap_lower_bound: T must be positive");
  GapBound b;
  const ChainSpec s = build_instance(p, T);
  const double Tf = T;
  switch (p.family) {
    case Family::Convex: {
      const ChainSpec s2 = with_chain_length(s, 2 * T);
      b.computed = s.scale * (solve_convex_closed_form(s).f_hat_star - solve_convex_closed_form(s2).f_hat_star);
      b.floor = std::min(p.mu2 * std::pow(p.D, 3) / (30000.0 * std::pow(Tf, 3.5)),
                         p.mu1 * p.D * p.D / (576.0 * Tf * Tf));
      break;
    }
    case Family::KOrder: {
      const ChainSpec s2 = with_chain_length(s, 2 * T);
      b.computed = s.scale * (korder_closed_form(s).f_hat_star - korder_closed_form(s2).f_hat_star);
      const double kk = p.k;
      b.floor = p.mu2 * std::pow(std::sqrt(2.0), kk + 1.0) * std::pow(p.D, kk + 1.0) /
                (12.0 * std::pow(3.0, kk + 1.0) * factorial(p.k + 1) * kk * std::pow(Tf, (3.0 * kk + 1.0) / 2.0));
      break;
    }
    case Family::StronglyConvex: {
      const MinimizerSolution sol = solve(s);
      const Vec& w = sol.chain_coords;
      const Index m = w.size();
      b.computed = 0.5 * s.lambda * w.tail(m - (T - 1)).squaredNorm();
      const double lt = s.lambda_tilde();
      const double tail = 9.0 * lt * std::pow(18.0, -std::pow(2.0, Tf));
      const double coord = std::max(sc_linear_floor(s.gamma, lt, T), tail);
      b.floor = 0.5 * s.lambda * coord * coord;
      break;
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Information hiding

namespace detail {

inline bool close(double a, double b, double tol) { return std::abs(a - b) <= tol * (1.0 + std::abs(a)); }

}  // namespace detail

/**
 * @brief Replaces v_{t+1}, v_{t+2}, ... by a different admissible choice and checks that
 * value, gradient and Hessian at w are unchanged to 1e-10.
 *
 * The replacement applies two random Householder reflections that fix v_1..v_t and w, so
 * the new vectors stay orthonormal and orthogonal to everything the oracle may have used.
 * Hessians are compared densely for d <= 256 and through a random probe product otherwise.
 * `t` is 1-based; w must be orthogonal to v_t, v_{t+1}, ...
 * The class form keeps one workspace for repeated trials on the same instance.
 */
class InformationHidingCheck {
 public:
  explicit InformationHidingCheck(ChainSpec s)
      : s_(std::move(s)), Va_(s_.basis.shared_vectors()), work_(std::make_shared<Mat>(*Va_)) {}

  bool operator()(const Point& w, int t, std::uint64_t seed = 1) {
    const Index m = s_.chain_length();
    if (w.size() != s_.dim) throw InvalidInput("information hiding: dimension mismatch");
    if (t < 1 || t > m) throw InvalidInput("information hiding: t out of range");
    const Mat& V = *Va_;
    const double tol_orth = 1e-10 * std::max(1.0, w.norm());
    const Vec later = V.rightCols(m - (t - 1)).transpose() * w;
    if (later.size() > 0 && later.cwiseAbs().maxCoeff() > tol_orth)
      throw InvalidInput("information hiding: w has a component on v_t or later");
    // Fixed space: v_1..v_t (already orthonormal) plus the residual of w.
    const auto Vt = V.leftCols(t);
    Vec wr = w - Vt * (Vt.transpose() * w);
    wr -= Vt * (Vt.transpose() * wr);
    const double wn = wr.norm();
    if (wn > 1e-12 * std::max(1.0, w.norm())) wr /= wn;
    else wr.setZero();
    auto project_out = [&](Vec& u) {
      u -= Vt * (Vt.transpose() * u);
      u -= wr * wr.dot(u);
    };
    Rng rng(seed);
    Mat U(s_.dim, 2);
    for (int rep = 0; rep < 2; ++rep) {
      Vec u = gaussian_vector(s_.dim, rng);
      project_out(u);
      project_out(u);
      const double un = u.norm();
      if (un == 0.0) return true;  // nothing left to vary
      U.col(rep) = u / un;
    }
    // (I - 2 u2 u2^T)(I - 2 u1 u1^T) = I - U B U^T
    Eigen::Matrix2d B;
    B << 2.0, 0.0, -4.0 * U.col(1).dot(U.col(0)), 2.0;
    Mat& V2 = *work_;
    V2.leftCols(t) = V.leftCols(t);
    if (m > t) {
      const auto tail = V.rightCols(m - t);
      const Mat P = B * (U.transpose() * tail);
      const Vec u0 = U.col(0), u1 = U.col(1);
      for (Index j = 0; j < m - t; ++j) V2.col(t + j) = tail.col(j) - P(0, j) * u0 - P(1, j) * u1;
    }
    const OracleReply a = detail::evaluate_with(s_, Va_, w, 2);
    const OracleReply b = detail::evaluate_with(s_, work_, w, 2);
    const double tol = 1e-10;
    if (!detail::close(a.value, b.value, tol)) return false;
    if ((a.gradient - b.gradient).norm() > tol * (1.0 + a.gradient.norm())) return false;
    if (s_.dim <= 256) {
      const Mat Ha = a.dense_hessian(), Hb = b.dense_hessian();
      return (Ha - Hb).norm() <= tol * (1.0 + Ha.norm());
    }
    const Vec z = random_unit_vector(s_.dim, rng);
    const Vec ha = a.hessian->apply(z), hb = b.hessian->apply(z);
    return (ha - hb).norm() <= tol * (1.0 + ha.norm());
  }

  const ChainSpec& spec() const { return s_; }

 private:
  ChainSpec s_;
  std::shared_ptr<const Mat> Va_;
  std::shared_ptr<Mat> work_;
};

inline bool verify_information_hiding(const ChainSpec& s, const Point& w, int t, std::uint64_t seed = 1) {
  InformationHidingCheck check(s);
  return check(w, t, seed);
}

// ---------------------------------------------------------------------------
// Built-in deterministic algorithms

inline GameAlgorithm zero_returner() {
  return [](const GameHistory& h) { return Point(Point::Zero(h.dim)); };
}

/// Gradient descent from 0 with a fixed step.
inline GameAlgorithm game_gradient_descent(double step) {
  return [step](const GameHistory& h) {
    if (h.queries.empty()) return Point(Point::Zero(h.dim));
    return Point(h.queries.back() - step * h.replies.back().gradient);
  };
}

/// Nesterov's accelerated method from 0 for convex objectives; queries the extrapolated points.
inline GameAlgorithm game_agd(double L) {
  return [L](const GameHistory& h) {
    Point y = Point::Zero(h.dim), x_prev = y;
    double t = 1.0;
    for (std::size_t i = 0; i < h.replies.size(); ++i) {
      const Point x = h.queries[i] - h.replies[i].gradient / L;
      const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      y = x + ((t - 1.0) / tn) * (x - x_prev);
      x_prev = x;
      t = tn;
    }
    return y;
  };
}

/// Cubic-regularized Newton from 0 with weight M; a zero-curvature model when replies carry no Hessian.
inline GameAlgorithm game_cubic_newton(double M) {
  return [M](const GameHistory& h) {
    if (h.queries.empty()) return Point(Point::Zero(h.dim));
    const OracleReply& r = h.replies.back();
    if (!r.hessian) return Point(h.queries.back() + cubic_subproblem_solve(r.gradient, Mat(Mat::Zero(h.dim, h.dim)), M));
    return Point(h.queries.back() + cubic_subproblem_solve(r.gradient, *r.hessian, M));
  };
}

/// Step/regularization constants suited to the family: 1/L for first-order methods and M for cubic Newton.
inline std::pair<double, double> game_constants(const FamilyParams& p) {
  double L = p.family == Family::KOrder ? (p.k == 1 ? p.mu2 : 1.0) : p.mu1 + p.lambda;
  double M = p.family == Family::KOrder ? (p.k == 2 ? p.mu2 : 1.0) : p.mu2;
  return {L, M};
}

}  // namespace oclab

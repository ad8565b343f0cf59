#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>

namespace oclab {

using Index = Eigen::Index;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Points live in the ambient space as plain dense vectors.
using Point = Vec;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidInput : Error {
  using Error::Error;
};
struct NumericalFailure : Error {
  using Error::Error;
};
struct DimensionExhausted : Error {
  using Error::Error;
};
struct AlgorithmFault : Error {
  using Error::Error;
};
/// Raised when a construction's sufficient conditions fail; `which` names the inequality.
struct ConditionViolated : Error {
  std::string which;
  ConditionViolated(std::string inequality, const std::string& detail)
      : Error("condition violated: " + inequality + " (" + detail + ")"), which(std::move(inequality)) {}
};

inline bool all_finite(const Vec& v) { return v.allFinite(); }

/// Deterministic 64-bit generator used everywhere a seed appears.
using Rng = std::mt19937_64;

inline Vec gaussian_vector(Index n, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vec v(n);
  for (Index i = 0; i < n; ++i) v[i] = nd(rng);
  return v;
}

inline Vec random_unit_vector(Index n, Rng& rng) {
  Vec v = gaussian_vector(n, rng);
  double nrm = v.norm();
  while (nrm == 0.0) {
    v = gaussian_vector(n, rng);
    nrm = v.norm();
  }
  return v / nrm;
}

/// Uniform sample from the ball of radius `radius` in R^n.
inline Vec random_in_ball(Index n, double radius, Rng& rng) {
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  Vec u = random_unit_vector(n, rng);
  return u * (radius * std::pow(ud(rng), 1.0 / static_cast<double>(n)));
}

namespace detail {

/// Orthogonalizes `z` against the columns of `Q` (first `cols` of them) by modified Gram-Schmidt.
inline void mgs_pass(const Mat& Q, Index cols, Vec& z) {
  for (Index j = 0; j < cols; ++j) z -= Q.col(j).dot(z) * Q.col(j);
}

/// Returns a unit vector orthogonal to the first `cols` columns of Q, drawn from `rng`.
/// A second pass runs when the residual drops below 1e-6 of the pre-projection norm.
inline Vec orthogonal_unit(const Mat& Q, Index cols, Rng& rng) {
  const Index d = Q.rows();
  if (cols >= d) throw DimensionExhausted("no orthogonal direction left");
  for (int attempt = 0; attempt < 64; ++attempt) {
    Vec z = gaussian_vector(d, rng);
    const double before = z.norm();
    mgs_pass(Q, cols, z);
    double after = z.norm();
    if (after < 1e-6 * before) {
      const double again_before = after;
      mgs_pass(Q, cols, z);
      after = z.norm();
      if (after < 1e-6 * again_before || after == 0.0) continue;
    }
    return z / after;
  }
  throw NumericalFailure("orthogonalization failed repeatedly");
}

}  // namespace detail

/**
 * @brief Orthonormal vectors v_1..v_m in R^d, reproducible from (seed, dim, count).
 *
 * The first `prefix` columns may be supplied explicitly (used by the adversary);
 * the rest are generated lazily, orthogonal to the prefix and to optional
 * constraint vectors. Copies share the materialized matrix.
 */
class Basis {
 public:
  Basis() = default;

  static Basis random(Index dim, Index count, std::uint64_t seed) {
    return Basis(dim, count, seed, Mat(dim, 0), Mat(dim, 0));
  }

  /// `prefix` must have orthonormal columns; `avoid` columns are spanned-out of the completion.
  static Basis completed(Index dim, Index count, std::uint64_t seed, Mat prefix, Mat avoid) {
    if (prefix.rows() != dim || avoid.rows() != dim) throw InvalidInput("basis prefix dimension mismatch");
    if (prefix.cols() > count) throw InvalidInput("basis prefix longer than count");
    return Basis(dim, count, seed, std::move(prefix), std::move(avoid));
  }

  Index dim() const { return dim_; }
  Index count() const { return count_; }
  std::uint64_t seed() const { return seed_; }
  bool empty() const { return !store_; }

  /// d x m matrix whose columns are the basis vectors.
  const Mat& vectors() const {
    if (!store_) throw InvalidInput("empty basis");
    std::call_once(store_->once, [this] { materialize(); });
    return store_->V;
  }

  Vec vector(Index j) const { return vectors().col(j); }

  /// Shared handle to the materialized matrix (no copy).
  std::shared_ptr<const Mat> shared_vectors() const {
    vectors();
    return std::shared_ptr<const Mat>(store_, &store_->V);
  }

 private:
  struct Store {
    Mat prefix;
    Mat avoid;
    std::once_flag once;
    Mat V;
  };

  Basis(Index dim, Index count, std::uint64_t seed, Mat prefix, Mat avoid)
      : dim_(dim), count_(count), seed_(seed), store_(std::make_shared<Store>()) {
    if (dim <= 0 || count < 0) throw InvalidInput("basis needs positive dimension");
    store_->prefix = std::move(prefix);
    store_->avoid = std::move(avoid);
    const Index needed = count + store_->avoid.cols();
    if (needed > dim) throw DimensionExhausted("basis does not fit in ambient dimension");
  }

  /// Seeded Gaussian columns, projected off the fixed columns (avoid-space, prefix) by two
  /// block Gram-Schmidt passes, then orthonormalized by Householder QR with diag(R) > 0,
  /// which equals Gram-Schmidt on the same columns in exact arithmetic.
  void materialize() const {
    Store& s = *store_;
    const Index p = s.prefix.cols();
    const Index q = s.avoid.cols();
    Mat F(dim_, q + p);
    Index filled = 0;
    // Orthonormal basis of span(avoid, prefix); the prefix need not be orthogonal to the avoid set.
    for (Index j = 0; j < q + p; ++j) {
      Vec z = j < q ? Vec(s.avoid.col(j)) : Vec(s.prefix.col(j - q));
      const double before = z.norm();
      detail::mgs_pass(F, filled, z);
      double after = z.norm();
      if (after < 1e-6 * before) {
        detail::mgs_pass(F, filled, z);
        after = z.norm();
      }
      if (after <= 1e-12 * std::max(1.0, before)) continue;  // dependent constraint
      F.col(filled++) = z / after;
    }
    const auto Fk = F.leftCols(filled);
    const Index fresh = count_ - p;
    s.V.resize(dim_, count_);
    s.V.leftCols(p) = s.prefix;
    if (fresh == 0) return;
    Rng rng(seed_);
    std::normal_distribution<double> nd(0.0, 1.0);
    Mat G(dim_, fresh);
    for (Index j = 0; j < fresh; ++j)
      for (Index i = 0; i < dim_; ++i) G(i, j) = nd(rng);
    for (int pass = 0; pass < 2 && filled > 0; ++pass) G.noalias() -= Fk * (Fk.transpose() * G);
    Eigen::HouseholderQR<Mat> qr(G);
    Mat Q = qr.householderQ() * Mat::Identity(dim_, fresh);
    const auto& R = qr.matrixQR();
    for (Index j = 0; j < fresh; ++j) {
      if (!(std::abs(R(j, j)) > 1e-10 * std::sqrt(double(dim_)))) throw NumericalFailure("basis: degenerate draw");
      if (R(j, j) < 0) Q.col(j) = -Q.col(j);
    }
    // One more projection pass keeps the new columns orthogonal to the fixed ones at rounding level.
    if (filled > 0) Q.noalias() -= Fk * (Fk.transpose() * Q);
    s.V.rightCols(fresh) = Q;
  }

  Index dim_ = 0;
  Index count_ = 0;
  std::uint64_t seed_ = 0;
  std::shared_ptr<Store> store_;
};

/// Chain coordinates (<v_1,w>, ..., <v_m,w>).
inline Vec project_to_chain(const Basis& basis, const Point& w) {
  if (basis.empty() || w.size() != basis.dim()) throw InvalidInput("project_to_chain: dimension mismatch");
  return basis.vectors().transpose() * w;
}

/// Ambient point sum_j c_j v_j.
inline Point lift_from_chain(const Basis& basis, const Vec& chain_coords) {
  if (basis.empty() || chain_coords.size() != basis.count())
    throw InvalidInput("lift_from_chain: length mismatch");
  return basis.vectors() * chain_coords;
}

/// Symmetric tridiagonal matrix plus a multiple of the identity.
struct Tridiagonal {
  Vec diag;  ///< length m
  Vec off;   ///< length m-1, entry (i, i+1)

  Index size() const { return diag.size(); }

  Vec apply(const Vec& x) const {
    Vec y = diag.cwiseProduct(x);
    const Index m = diag.size();
    for (Index i = 0; i + 1 < m; ++i) {
      y[i] += off[i] * x[i + 1];
      y[i + 1] += off[i] * x[i];
    }
    return y;
  }

  Mat dense() const {
    const Index m = diag.size();
    Mat H = Mat::Zero(m, m);
    H.diagonal() = diag;
    for (Index i = 0; i + 1 < m; ++i) H(i, i + 1) = H(i + 1, i) = off[i];
    return H;
  }

  /// Solves (T + shift I) x = b by LDL^T without pivoting; returns nullopt if a pivot is not positive.
  std::optional<Vec> solve_shifted(double shift, const Vec& b) const {
    const Index m = diag.size();
    Vec d(m), l(m > 0 ? m - 1 : 0), x = b;
    for (Index i = 0; i < m; ++i) {
      double di = diag[i] + shift;
      if (i > 0) di -= l[i - 1] * l[i - 1] * d[i - 1];
      if (!(di > 0.0) || !std::isfinite(di)) return std::nullopt;
      d[i] = di;
      if (i + 1 < m) l[i] = off[i] / di;
    }
    for (Index i = 1; i < m; ++i) x[i] -= l[i - 1] * x[i - 1];
    for (Index i = 0; i < m; ++i) x[i] /= d[i];
    for (Index i = m - 2; i >= 0; --i) x[i] -= l[i] * x[i + 1];
    return x;
  }

  /// Number of eigenvalues strictly below `x` (Sturm count).
  Index count_below(double x) const {
    const Index m = diag.size();
    Index c = 0;
    double q = 1.0;
    for (Index i = 0; i < m; ++i) {
      const double e2 = i > 0 ? off[i - 1] * off[i - 1] : 0.0;
      q = diag[i] - x - (i > 0 ? e2 / q : 0.0);
      if (q == 0.0) q = -1e-300;
      if (q < 0.0) ++c;
    }
    return c;
  }

  /// Smallest and largest eigenvalue by bisection on the Sturm count.
  std::pair<double, double> extreme_eigenvalues() const {
    const Index m = diag.size();
    if (m == 0) return {0.0, 0.0};
    double lo = diag[0], hi = diag[0];
    for (Index i = 0; i < m; ++i) {
      const double r = (i > 0 ? std::abs(off[i - 1]) : 0.0) + (i + 1 < m ? std::abs(off[i]) : 0.0);
      lo = std::min(lo, diag[i] - r);
      hi = std::max(hi, diag[i] + r);
    }
    const double scale = std::max({std::abs(lo), std::abs(hi), 1e-300});
    auto bisect = [&](Index k) {  // k-th smallest eigenvalue, 0-based
      double a = lo - 1e-12 * scale, b = hi + 1e-12 * scale;
      for (int it = 0; it < 200 && b - a > 4e-16 * scale; ++it) {
        const double mid = 0.5 * (a + b);
        if (count_below(mid) > k) b = mid;
        else a = mid;
      }
      return 0.5 * (a + b);
    };
    return {bisect(0), bisect(m - 1)};
  }
};

/**
 * @brief Hessian of the form V * C * V^T + shift * I, with V having orthonormal columns
 * and C symmetric tridiagonal.
 */
struct ChainHessian {
  std::shared_ptr<const Mat> V;
  Tridiagonal chain;
  double shift = 0.0;

  Index dim() const { return V->rows(); }

  Vec apply(const Vec& x) const {
    Vec y = shift * x;
    if (V->cols() > 0) y.noalias() += *V * chain.apply(V->transpose() * x);
    return y;
  }

  Mat dense() const {
    Mat H = *V * chain.dense() * V->transpose();
    H.diagonal().array() += shift;
    return 0.5 * (H + H.transpose());
  }
};

/// Value and derivatives at a query point. `order` is the highest derivative populated.
struct OracleReply {
  double value = 0.0;
  Vec gradient;
  std::optional<ChainHessian> hessian;
  int order = 0;

  Mat dense_hessian() const {
    if (!hessian) throw InvalidInput("reply carries no Hessian");
    return hessian->dense();
  }
};

}  // namespace oclab

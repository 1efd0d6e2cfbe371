#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/SparseLU>

#include "hosar/error.hpp"
#include "hosar/rng.hpp"
#include "hosar/types.hpp"
#include "hosar/weights.hpp"

namespace hosar {

/// Stacked parameter (lambda', beta')'.
template <typename Scalar>
struct Theta {
  Vec<Scalar> lambda;
  Vec<Scalar> beta;

  Index p() const { return lambda.size(); }
  Index k() const { return beta.size(); }
  Index size() const { return p() + k(); }

  Vec<Scalar> stacked() const {
    Vec<Scalar> v(size());
    v << lambda, beta;
    return v;
  }

  static Theta from_stacked(const Vec<Scalar>& v, Index p) {
    return Theta{v.head(p), v.tail(v.size() - p)};
  }
};

template <typename Scalar>
struct SarDataset {
  Vec<Scalar> y;
  Mat<Scalar> X;
  SpatialWeightSet<Scalar> weights;
  std::optional<Mat<Scalar>> Z;

  Index n() const { return y.size(); }
  Index p() const { return weights.p(); }
  Index k() const { return X.cols(); }
};

/// Numerical column rank by column-pivoted QR; pivots below
/// tol * (largest column norm) count as zero.
template <typename Derived>
Index column_rank(const Eigen::MatrixBase<Derived>& m, double tol = 1e-10) {
  if (m.cols() == 0) return 0;
  Eigen::ColPivHouseholderQR<Mat<typename Derived::Scalar>> qr(m);
  qr.setThreshold(tol);
  return qr.rank();
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

/// Checks dimensions, finiteness and the rank conditions of a dataset.
template <typename Scalar>
void validate_dataset(const SarDataset<Scalar>& data) {
  const Index n = data.n();
  if (n < 1) throw Error(ErrorCode::Validation, "empty response vector");
  if (data.X.rows() != n) throw Error(ErrorCode::Validation, "X has " + std::to_string(data.X.rows()) + " rows, y has " + std::to_string(n));
  if (data.weights.n() != n) throw Error(ErrorCode::Validation, "weights are " + std::to_string(data.weights.n()) + "x" + std::to_string(data.weights.n()) + ", expected n = " + std::to_string(n));
  if (!all_finite(data.y) || !all_finite(data.X)) throw Error(ErrorCode::Validation, "y and X must be finite");
  if (column_rank(data.X) < data.k()) throw Error(ErrorCode::Conditioning, "X does not have full column rank");
  if (data.Z) {
    const auto& z = *data.Z;
    if (z.rows() != n) throw Error(ErrorCode::Validation, "Z has the wrong number of rows");
    if (!all_finite(z)) throw Error(ErrorCode::Validation, "Z must be finite");
    if (column_rank(z) < z.cols()) throw Error(ErrorCode::Conditioning, "instrument columns are collinear");
  }
}

/// S(lambda) = I - sum_i lambda_i W_i.
template <typename Scalar>
SpMat<Scalar> spatial_filter(const SpatialWeightSet<Scalar>& w, const Vec<Scalar>& lambda) {
  SpMat<Scalar> s(w.n(), w.n());
  s.setIdentity();
  for (Index i = 0; i < w.p(); ++i) {
    if (lambda(i) != Scalar(0)) s -= lambda(i) * w[i];
  }
  s.makeCompressed();
  return s;
}

/// R = (W_1 y, ..., W_p y).
template <typename Scalar>
Mat<Scalar> spatial_lags(const SpatialWeightSet<Scalar>& w, const Vec<Scalar>& y) {
  Mat<Scalar> r(w.n(), w.p());
  for (Index i = 0; i < w.p(); ++i) r.col(i) = w[i] * y;
  return r;
}

/// LU factorization of S(lambda) with a sign-tracked log determinant.
///
/// Sparse LU is used while S is sparse; above a fill fraction of
/// `dense_fill` (or for small n) a dense partial-pivot LU is faster.
template <typename Scalar>
class SpatialSystem {
 public:
  static constexpr double dense_fill = 0.05;

  SpatialSystem(const SpatialWeightSet<Scalar>& w, const Vec<Scalar>& lambda) : s_(spatial_filter(w, lambda)) {
    const Index n = s_.rows();
    const double fill = static_cast<double>(s_.nonZeros()) / (static_cast<double>(n) * static_cast<double>(n));
    if (n <= 64 || fill > dense_fill) {
      auto lu = std::make_shared<Eigen::PartialPivLU<Mat<Scalar>>>(Mat<Scalar>(s_));
      const auto& packed = lu->matrixLU();
      const Vec<Scalar> diag = packed.diagonal();
      const Scalar max_pivot = diag.cwiseAbs().maxCoeff();
      const Scalar tiny = Scalar(n) * std::numeric_limits<Scalar>::epsilon() * max_pivot;
      if (!(max_pivot > Scalar(0)) || (diag.cwiseAbs().array() <= tiny).any() || !diag.allFinite()) {
        throw Error(ErrorCode::SingularModel, "S(lambda) is singular");
      }
      log_abs_det_ = diag.cwiseAbs().array().log().sum();
      int sign = static_cast<int>(lu->permutationP().determinant());
      for (Index i = 0; i < n; ++i) sign *= diag(i) < Scalar(0) ? -1 : 1;
      sign_ = sign;
      dense_ = std::move(lu);
    } else {
      auto lu = std::make_shared<Eigen::SparseLU<SpMat<Scalar>, Eigen::COLAMDOrdering<int>>>();
      lu->analyzePattern(s_);
      lu->factorize(s_);
      if (lu->info() != Eigen::Success) throw Error(ErrorCode::SingularModel, "S(lambda) is singular");
      log_abs_det_ = lu->logAbsDeterminant();
      sign_ = static_cast<int>(lu->signDeterminant());
      if (!std::isfinite(static_cast<double>(log_abs_det_)) || sign_ == 0) {
        throw Error(ErrorCode::SingularModel, "S(lambda) is singular");
      }
      sparse_ = std::move(lu);
    }
  }

  const SpMat<Scalar>& matrix() const { return s_; }
  Index n() const { return s_.rows(); }

  Scalar log_abs_det() const { return log_abs_det_; }
  int det_sign() const { return sign_; }

  /// log|S|, defined only when the determinant is positive.
  Scalar log_det() const {
    if (sign_ <= 0) throw Error(ErrorCode::NonpositiveDeterminant, "det S(lambda) <= 0; the pseudo-likelihood is undefined");
    return log_abs_det_;
  }

  template <typename Rhs>
  Mat<Scalar> solve(const Eigen::MatrixBase<Rhs>& b) const {
    Mat<Scalar> x = dense_ ? Mat<Scalar>(dense_->solve(b)) : Mat<Scalar>(sparse_->solve(b));
    if (!x.allFinite()) throw Error(ErrorCode::SingularModel, "solve with S(lambda) produced non-finite values");
    return x;
  }

  Mat<Scalar> inverse() const { return solve(Mat<Scalar>::Identity(n(), n())); }

 private:
  SpMat<Scalar> s_;
  std::shared_ptr<const Eigen::PartialPivLU<Mat<Scalar>>> dense_;
  std::shared_ptr<const Eigen::SparseLU<SpMat<Scalar>, Eigen::COLAMDOrdering<int>>> sparse_;
  Scalar log_abs_det_ = 0;
  int sign_ = 0;
};

/// S(lambda)^{-1} and G_i(lambda) = W_i S(lambda)^{-1}, formed densely once.
template <typename Scalar>
struct Resolvent {
  Mat<Scalar> s_inv;
  std::vector<Mat<Scalar>> g;

  Resolvent(const SpatialWeightSet<Scalar>& w, const SpatialSystem<Scalar>& system) : s_inv(system.inverse()) {
    g.reserve(static_cast<std::size_t>(w.p()));
    for (Index i = 0; i < w.p(); ++i) g.push_back(w[i] * s_inv);
  }

  Index p() const { return static_cast<Index>(g.size()); }
  const Mat<Scalar>& G(Index i) const { return g[static_cast<std::size_t>(i)]; }
};

/// tr(G_j G_i), or tr(G_j' G_i) when `transpose_first`.
template <typename Scalar>
Scalar trace_GjGi(const Resolvent<Scalar>& res, Index j, Index i, bool transpose_first) {
  const auto& gj = res.G(j);
  const auto& gi = res.G(i);
  if (transpose_first) return gj.cwiseProduct(gi).sum();
  const Index n = gi.rows();
  Scalar acc(0);
  for (Index a = 0; a < n; ++a) acc += gj.row(a).dot(gi.col(a));
  return acc;
}

/// p x p matrix with (i, j) entry tr(G_j G_i) (or tr(G_j' G_i)); symmetric.
template <typename Scalar>
Mat<Scalar> trace_products(const Resolvent<Scalar>& res, bool transpose_first) {
  const Index p = res.p();
  Mat<Scalar> out(p, p);
  for (Index i = 0; i < p; ++i) {
    for (Index j = 0; j <= i; ++j) {
      out(i, j) = trace_GjGi(res, j, i, transpose_first);
      out(j, i) = out(i, j);
    }
  }
  return out;
}

/// Cached quantities of the objective at one (theta, sigma^2).
template <typename Scalar>
class ObjectiveState {
 public:
  ObjectiveState(const SarDataset<Scalar>& data, const Theta<Scalar>& theta, Scalar sigma2)
      : theta_(theta), sigma2_(sigma2), system_(data.weights, theta.lambda), lags_(spatial_lags(data.weights, data.y)) {
    if (theta.p() != data.p() || theta.k() != data.k()) throw Error(ErrorCode::Validation, "theta dimensions do not match the dataset");
    if (!(sigma2 > Scalar(0)) || !std::isfinite(static_cast<double>(sigma2))) throw Error(ErrorCode::Validation, "sigma^2 must be positive and finite");
    if (!theta.lambda.allFinite() || !theta.beta.allFinite()) throw Error(ErrorCode::Validation, "theta must be finite");
    resid_ = data.y - lags_ * theta.lambda - data.X * theta.beta;
  }

  const Theta<Scalar>& theta() const { return theta_; }
  Scalar sigma2() const { return sigma2_; }
  const SpatialSystem<Scalar>& system() const { return system_; }
  /// S(lambda) y - X beta.
  const Vec<Scalar>& resid() const { return resid_; }
  const Mat<Scalar>& lags() const { return lags_; }
  Scalar log_det() const { return system_.log_det(); }

  /// -(2/n) times the Gaussian log pseudo-likelihood.
  Scalar neg2_loglik() const {
    const Scalar n(resid_.size());
    return std::log(Scalar(2) * std::numbers::pi_v<Scalar> * sigma2_) - Scalar(2) / n * log_det() +
           resid_.squaredNorm() / (n * sigma2_);
  }

 private:
  Theta<Scalar> theta_;
  Scalar sigma2_;
  SpatialSystem<Scalar> system_;
  Mat<Scalar> lags_;
  Vec<Scalar> resid_;
};

template <typename Scalar>
Scalar neg2_loglik(const SarDataset<Scalar>& data, const Theta<Scalar>& theta, Scalar sigma2) {
  return ObjectiveState<Scalar>(data, theta, sigma2).neg2_loglik();
}

template <typename Scalar>
struct Derivatives {
  Vec<Scalar> score;
  Mat<Scalar> hessian;
};

namespace detail {

template <typename Scalar>
Vec<Scalar> score_from(const ObjectiveState<Scalar>& st, const SarDataset<Scalar>& data, const Resolvent<Scalar>& res) {
  const Index p = data.p();
  const Scalar n(data.n());
  const Scalar s2 = st.sigma2();
  const Scalar scale = Scalar(2) / (s2 * n);
  // R lambda + X beta - y
  const Vec<Scalar> fitted_gap = -st.resid();
  Vec<Scalar> xi(p + data.k());
  for (Index i = 0; i < p; ++i) {
    xi(i) = scale * (s2 * res.G(i).trace() + st.lags().col(i).dot(fitted_gap));
  }
  xi.tail(data.k()) = scale * (data.X.transpose() * fitted_gap);
  return xi;
}

template <typename Scalar>
Mat<Scalar> hessian_from(const ObjectiveState<Scalar>& st, const SarDataset<Scalar>& data, const Resolvent<Scalar>& res) {
  const Index p = data.p();
  const Index k = data.k();
  const Scalar n(data.n());
  const Scalar scale = Scalar(2) / (n * st.sigma2());
  const auto& r = st.lags();
  Mat<Scalar> h(p + k, p + k);
  h.topLeftCorner(p, p) = Scalar(2) / n * trace_products(res, false) + scale * (r.transpose() * r);
  h.topRightCorner(p, k) = scale * (r.transpose() * data.X);
  h.bottomLeftCorner(k, p) = h.topRightCorner(p, k).transpose();
  h.bottomRightCorner(k, k) = scale * (data.X.transpose() * data.X);
  // exact symmetry; the blocks above agree only up to rounding of the products
  h = Scalar(0.5) * (h + h.transpose()).eval();
  return h;
}

}  // namespace detail

/// Gradient of neg2_loglik in theta at fixed sigma^2.
template <typename Scalar>
Vec<Scalar> score(const SarDataset<Scalar>& data, const Theta<Scalar>& theta, Scalar sigma2) {
  ObjectiveState<Scalar> st(data, theta, sigma2);
  Resolvent<Scalar> res(data.weights, st.system());
  return detail::score_from(st, data, res);
}

/// Hessian of neg2_loglik in theta at fixed sigma^2; exactly symmetric.
template <typename Scalar>
Mat<Scalar> hessian(const SarDataset<Scalar>& data, const Theta<Scalar>& theta, Scalar sigma2) {
  ObjectiveState<Scalar> st(data, theta, sigma2);
  Resolvent<Scalar> res(data.weights, st.system());
  return detail::hessian_from(st, data, res);
}

/// Score and Hessian sharing one factorization and one dense inverse.
template <typename Scalar>
Derivatives<Scalar> score_and_hessian(const SarDataset<Scalar>& data, const Theta<Scalar>& theta, Scalar sigma2) {
  ObjectiveState<Scalar> st(data, theta, sigma2);
  Resolvent<Scalar> res(data.weights, st.system());
  return {detail::score_from(st, data, res), detail::hessian_from(st, data, res)};
}

/// Xi = E(H) at the true parameter (depends on X, the weights and theta0 only).
template <typename Scalar>
Mat<Scalar> expected_hessian(const SarDataset<Scalar>& data, const Theta<Scalar>& theta0, Scalar sigma2_0) {
  const Index p = data.p();
  const Index k = data.k();
  const Scalar n(data.n());
  SpatialSystem<Scalar> system(data.weights, theta0.lambda);
  Resolvent<Scalar> res(data.weights, system);
  const Vec<Scalar> mean = data.X * theta0.beta;
  Mat<Scalar> a(data.n(), p);
  for (Index i = 0; i < p; ++i) a.col(i) = res.G(i) * mean;

  const Scalar scale = Scalar(2) / (n * sigma2_0);
  Mat<Scalar> xi(p + k, p + k);
  xi.topLeftCorner(p, p) = Scalar(2) / n * (trace_products(res, false) + trace_products(res, true)) + scale * (a.transpose() * a);
  xi.topRightCorner(p, k) = scale * (a.transpose() * data.X);
  xi.bottomLeftCorner(k, p) = xi.topRightCorner(p, k).transpose();
  xi.bottomRightCorner(k, k) = scale * (data.X.transpose() * data.X);
  xi = Scalar(0.5) * (xi + xi.transpose()).eval();
  return xi;
}

/// Central error moments feeding the score-variance correction.
template <typename Scalar>
struct MomentInputs {
  Scalar mu3 = 0;
  Scalar mu4 = 3;
  Scalar sigma2 = 1;

  static MomentInputs gaussian(Scalar sigma2) { return {Scalar(0), Scalar(3) * sigma2 * sigma2, sigma2}; }

  void validate() const {
    if (!std::isfinite(static_cast<double>(mu3)) || !std::isfinite(static_cast<double>(mu4)) ||
        !std::isfinite(static_cast<double>(sigma2)) || !(sigma2 > Scalar(0))) {
      throw Error(ErrorCode::Validation, "error moments must be finite with sigma^2 > 0");
    }
    // Jensen, with slack for sample moments computed in floating point
    if (mu4 < sigma2 * sigma2 * (Scalar(1) - Scalar(1e-12))) throw Error(ErrorCode::Validation, "mu4 < sigma^4");
  }
};

/// Omega: the non-Gaussian part of n E(xi xi') = 2 Xi + Omega.
///
/// The lambda-lambda block uses the symmetric third-moment term
/// (2 mu3 / n s^4) sum_r (c_rr,i b_r,j + c_rr,j b_r,i), which is what the
/// covariance of the score quadratic forms produces.
template <typename Scalar>
Mat<Scalar> score_variance_correction(const SarDataset<Scalar>& data, const Theta<Scalar>& theta0, const MomentInputs<Scalar>& m) {
  m.validate();
  const Index p = data.p();
  const Index k = data.k();
  const Index nn = data.n();
  const Scalar n(nn);
  const Scalar s4 = m.sigma2 * m.sigma2;
  Mat<Scalar> omega = Mat<Scalar>::Zero(p + k, p + k);
  if (m.mu3 == Scalar(0) && m.mu4 == Scalar(3) * s4) return omega;

  SpatialSystem<Scalar> system(data.weights, theta0.lambda);
  Resolvent<Scalar> res(data.weights, system);
  const Vec<Scalar> mean = data.X * theta0.beta;
  Mat<Scalar> c(nn, p);  // diagonals of C_i = G_i + G_i'
  Mat<Scalar> b(nn, p);  // b_j = G_j X beta0
  for (Index i = 0; i < p; ++i) {
    c.col(i) = Scalar(2) * res.G(i).diagonal();
    b.col(i) = res.G(i) * mean;
  }
  const Mat<Scalar> cb = c.transpose() * b;  // (i, j) = sum_r c_rr,i b_r,j
  omega.topLeftCorner(p, p) = Scalar(2) * m.mu3 / (n * s4) * (cb + cb.transpose()) +
                              (m.mu4 - Scalar(3) * s4) / (n * s4) * (c.transpose() * c);
  const Mat<Scalar> lb = Scalar(2) * m.mu3 / (n * s4) * (data.X.transpose() * c);  // k x p
  omega.bottomLeftCorner(k, p) = lb;
  omega.topRightCorner(p, k) = lb.transpose();
  return omega;
}

enum class ErrorDist { StdNormal, T6, HetNormal };

/// h_j = n (sum_r |x_r1| + |x_r2|)^{-1} (|x_j1| + |x_j2|); averages to one.
template <typename Scalar>
Vec<Scalar> heteroskedastic_variances(const Mat<Scalar>& X) {
  if (X.cols() < 2) throw Error(ErrorCode::InvalidDesign, "heteroskedastic errors need at least two regressors");
  const Vec<Scalar> s = X.col(0).cwiseAbs() + X.col(1).cwiseAbs();
  const Scalar total = s.sum();
  if (!(total > Scalar(0))) throw Error(ErrorCode::InvalidDesign, "heteroskedastic scale is zero");
  return Scalar(X.rows()) / total * s;
}

template <typename Scalar>
Vec<Scalar> draw_errors(const Mat<Scalar>& X, ErrorDist dist, Stream& stream) {
  const Index n = X.rows();
  Vec<Scalar> u(n);
  switch (dist) {
    case ErrorDist::StdNormal:
      for (Index j = 0; j < n; ++j) u(j) = Scalar(stream.normal());
      break;
    case ErrorDist::T6:
      for (Index j = 0; j < n; ++j) u(j) = Scalar(stream.student_t(6.0));
      break;
    case ErrorDist::HetNormal: {
      const Vec<Scalar> h = heteroskedastic_variances(X);
      for (Index j = 0; j < n; ++j) u(j) = std::sqrt(h(j)) * Scalar(stream.normal());
      break;
    }
  }
  return u;
}

/// y solving S(lambda0) y = X beta0 + u.
template <typename Scalar>
Vec<Scalar> simulate(const SpatialWeightSet<Scalar>& w, const Mat<Scalar>& X, const Vec<Scalar>& beta0,
                     const Vec<Scalar>& lambda0, const Vec<Scalar>& u) {
  Vec<Scalar> rhs = X * beta0 + u;
  if ((lambda0.array() == Scalar(0)).all()) return rhs;
  SpatialSystem<Scalar> system(w, lambda0);
  return system.solve(rhs);
}

template <typename Scalar>
Vec<Scalar> simulate(const SpatialWeightSet<Scalar>& w, const Mat<Scalar>& X, const Vec<Scalar>& beta0,
                     const Vec<Scalar>& lambda0, ErrorDist dist, Stream& stream) {
  return simulate(w, X, beta0, lambda0, draw_errors(X, dist, stream));
}

/// Seeded convenience: errors from the stream keyed (seed, 0, Errors).
template <typename Scalar>
Vec<Scalar> simulate(const SpatialWeightSet<Scalar>& w, const Mat<Scalar>& X, const Vec<Scalar>& beta0,
                     const Vec<Scalar>& lambda0, ErrorDist dist, std::uint64_t seed) {
  Stream stream(seed, 0, StreamTag::Errors);
  return simulate(w, X, beta0, lambda0, dist, stream);
}

}  // namespace hosar

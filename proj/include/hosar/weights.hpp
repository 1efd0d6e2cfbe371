#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "hosar/error.hpp"
#include "hosar/rng.hpp"
#include "hosar/types.hpp"

namespace hosar {

/// The p spatial weight matrices of a higher-order SAR model.
///
/// Every matrix is n x n, has finite entries and an exactly zero diagonal.
/// Instances are immutable after construction.
template <typename Scalar>
class SpatialWeightSet {
 public:
  SpatialWeightSet() = default;

  SpatialWeightSet(Index n, std::vector<SpMat<Scalar>> mats) : n_(n), mats_(std::move(mats)) {
    if (n_ < 1) throw Error(ErrorCode::InvalidDesign, "sample size must be positive");
    h_scale_.reserve(mats_.size());
    for (std::size_t i = 0; i < mats_.size(); ++i) {
      auto& w = mats_[i];
      if (w.rows() != n_ || w.cols() != n_) {
        throw Error(ErrorCode::InvalidDesign, "weight matrix " + std::to_string(i + 1) + " is not " +
                                                  std::to_string(n_) + "x" + std::to_string(n_));
      }
      w.prune(Scalar(0));
      w.makeCompressed();
      Scalar max_abs(0);
      for (Index c = 0; c < w.outerSize(); ++c) {
        for (typename SpMat<Scalar>::InnerIterator it(w, c); it; ++it) {
          if (!std::isfinite(static_cast<double>(it.value()))) {
            throw Error(ErrorCode::InvalidDesign, "weight matrix " + std::to_string(i + 1) + " has a non-finite entry");
          }
          if (it.row() == it.col()) {
            throw Error(ErrorCode::InvalidDesign, "weight matrix " + std::to_string(i + 1) +
                                                      " has a nonzero diagonal entry at " + std::to_string(it.row() + 1));
          }
          max_abs = std::max(max_abs, Scalar(std::abs(it.value())));
        }
      }
      h_scale_.push_back(max_abs > Scalar(0) ? Scalar(1) / max_abs : std::numeric_limits<Scalar>::infinity());
    }
  }

  Index n() const { return n_; }
  Index p() const { return static_cast<Index>(mats_.size()); }

  const SpMat<Scalar>& operator[](Index i) const { return mats_[static_cast<std::size_t>(i)]; }
  const std::vector<SpMat<Scalar>>& matrices() const { return mats_; }

  /// Reciprocal of the largest absolute entry of matrix i (infinite for a zero matrix).
  Scalar h_scale(Index i) const { return h_scale_[static_cast<std::size_t>(i)]; }

 private:
  Index n_ = 0;
  std::vector<SpMat<Scalar>> mats_;
  std::vector<Scalar> h_scale_;
};

/// Spectral norm by power iteration on A'A from the normalized ones vector.
///
/// Stops once the eigen-residual ||A'A v - mu v|| falls below tol * mu.
template <typename Scalar>
Scalar spectral_norm(const SpMat<Scalar>& a, Scalar tol = Scalar(1e-10), int max_iter = 10000) {
  const Index n = a.cols();
  if (n == 0 || a.nonZeros() == 0) return Scalar(0);
  Vec<Scalar> v = Vec<Scalar>::Ones(n) / std::sqrt(Scalar(n));
  Scalar mu(0);
  for (int it = 0; it < max_iter; ++it) {
    Vec<Scalar> av = a * v;
    Vec<Scalar> w = a.transpose() * av;
    mu = v.dot(w);
    const Scalar wn = w.norm();
    if (wn == Scalar(0)) return Scalar(0);
    if ((w - mu * v).norm() <= tol * mu) break;
    v = w / wn;
  }
  return std::sqrt(mu);
}

/// Symmetric circulant weight matrix of neighbour order `order`: ones at the
/// `order` nearest positions on each side of the diagonal (cyclically),
/// scaled by 1/(2 order) so rows sum to one and the spectral norm is one.
template <typename Scalar>
SpMat<Scalar> circulant_weight(Index order, Index n) {
  if (order < 1 || 2 * order + 1 > n) {
    throw Error(ErrorCode::InvalidDesign, "circulant order " + std::to_string(order) + " needs n >= " +
                                              std::to_string(2 * order + 1) + ", got n = " + std::to_string(n));
  }
  const Scalar value = Scalar(1) / Scalar(2 * order);
  std::vector<Eigen::Triplet<Scalar>> trip;
  trip.reserve(static_cast<std::size_t>(2 * order * n));
  for (Index r = 0; r < n; ++r) {
    for (Index d = 1; d <= order; ++d) {
      trip.emplace_back(r, (r + d) % n, value);
      trip.emplace_back(r, (r - d + n) % n, value);
    }
  }
  SpMat<Scalar> w(n, n);
  w.setFromTriplets(trip.begin(), trip.end());
  w.makeCompressed();
  return w;
}

/// Bounded-connectivity design: W_i is the circulant of order i, i = 1..p.
template <typename Scalar>
SpatialWeightSet<Scalar> circulant_weights(Index n, Index p) {
  if (p < 1) throw Error(ErrorCode::InvalidDesign, "p must be positive");
  std::vector<SpMat<Scalar>> mats;
  for (Index i = 1; i <= p; ++i) mats.push_back(circulant_weight<Scalar>(i, n));
  return SpatialWeightSet<Scalar>(n, std::move(mats));
}

/// Standard normal cdf.
template <typename Scalar>
Scalar normal_cdf(Scalar x) {
  return Scalar(0.5) * std::erfc(-x / std::sqrt(Scalar(2)));
}

/// Divergent-connectivity design. For each matrix i and ordered pair r != s,
/// draw d ~ U[-3,3] and c ~ U[0,1] from the stream keyed (seed, i, Weights)
/// and keep Phi(-d) when c < n^{1/3}/100. The draw is then symmetrized as
/// (W + W')/2 and divided by its spectral norm.
template <typename Scalar>
SpatialWeightSet<Scalar> random_sparse_weights(Index n, Index p, std::uint64_t seed) {
  if (n < 2) throw Error(ErrorCode::InvalidDesign, "random sparse design needs n >= 2");
  if (p < 1) throw Error(ErrorCode::InvalidDesign, "p must be positive");
  const double threshold = std::cbrt(static_cast<double>(n)) / 100.0;
  std::vector<SpMat<Scalar>> mats;
  for (Index i = 0; i < p; ++i) {
    Stream stream(seed, static_cast<std::uint64_t>(i), StreamTag::Weights);
    std::vector<Eigen::Triplet<Scalar>> trip;
    for (Index r = 0; r < n; ++r) {
      for (Index s = 0; s < n; ++s) {
        if (r == s) continue;
        const double d = stream.uniform(-3.0, 3.0);
        const double c = stream.uniform(0.0, 1.0);
        if (c < threshold) trip.emplace_back(r, s, normal_cdf(Scalar(-d)));
      }
    }
    SpMat<Scalar> raw(n, n);
    raw.setFromTriplets(trip.begin(), trip.end());
    SpMat<Scalar> sym = (raw + SpMat<Scalar>(raw.transpose())) * Scalar(0.5);
    const Scalar norm = spectral_norm(sym);
    if (norm > Scalar(0)) sym /= norm;
    sym.makeCompressed();
    mats.push_back(std::move(sym));
  }
  return SpatialWeightSet<Scalar>(n, std::move(mats));
}

template <typename Scalar>
struct RingWeights {
  SpatialWeightSet<Scalar> weights;
  std::vector<Index> isolated_rows;  // per ring: rows left all-zero
};

/// Distance-band design: ring i links pairs with i-1 < d <= i (ring 1 also
/// takes d = 0), then each row with a neighbour is normalized to sum to one.
template <typename Scalar>
RingWeights<Scalar> distance_ring_weights(const Mat<Scalar>& distances, Index p) {
  const Index n = distances.rows();
  if (n < 1 || distances.cols() != n) throw Error(ErrorCode::InvalidDesign, "distance matrix must be square");
  if (p < 1) throw Error(ErrorCode::InvalidDesign, "p must be positive");
  for (Index l = 0; l < n; ++l) {
    if (distances(l, l) != Scalar(0)) throw Error(ErrorCode::InvalidDesign, "distance matrix diagonal must be zero");
    for (Index k = 0; k < n; ++k) {
      const Scalar d = distances(l, k);
      if (!std::isfinite(static_cast<double>(d)) || d < Scalar(0)) {
        throw Error(ErrorCode::InvalidDesign, "distances must be finite and nonnegative");
      }
      if (d != distances(k, l)) throw Error(ErrorCode::InvalidDesign, "distance matrix is not symmetric");
    }
  }

  std::vector<std::vector<Eigen::Triplet<Scalar>>> trip(static_cast<std::size_t>(p));
  Mat<Index> degree = Mat<Index>::Zero(n, p);
  for (Index l = 0; l < n; ++l) {
    for (Index k = 0; k < n; ++k) {
      if (l == k) continue;
      const Scalar d = distances(l, k);
      const Index ring = d == Scalar(0) ? 1 : static_cast<Index>(std::ceil(static_cast<double>(d)));
      if (ring > p) continue;
      trip[static_cast<std::size_t>(ring - 1)].emplace_back(l, k, Scalar(1));
      ++degree(l, ring - 1);
    }
  }

  RingWeights<Scalar> out;
  std::vector<SpMat<Scalar>> mats;
  for (Index i = 0; i < p; ++i) {
    auto& t = trip[static_cast<std::size_t>(i)];
    for (auto& e : t) e = Eigen::Triplet<Scalar>(e.row(), e.col(), Scalar(1) / Scalar(degree(e.row(), i)));
    SpMat<Scalar> w(n, n);
    w.setFromTriplets(t.begin(), t.end());
    mats.push_back(std::move(w));
    out.isolated_rows.push_back((degree.col(i).array() == 0).count());
  }
  out.weights = SpatialWeightSet<Scalar>(n, std::move(mats));
  return out;
}

}  // namespace hosar

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sre/rng.hpp"
#include "sre/synth_world.hpp"
#include "sre/tensor.hpp"

namespace sre {

class RankDeficientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// k x d matrix whose columns are latent directions. Wraps a Tensor so the
// trainer can flip requires_grad to freeze or unfreeze it.
class DirectionMatrix {
 public:
  DirectionMatrix() = default;
  explicit DirectionMatrix(Tensor matrix) : matrix_(std::move(matrix)) {
    if (matrix_.rank() != 2) throw ShapeError("DirectionMatrix: expected [k,d], got " + shape_str(matrix_.shape()));
  }

  std::size_t latent_dim() const { return matrix_.dim(0); }
  std::size_t count() const { return matrix_.dim(1); }
  double operator()(std::size_t row, std::size_t col) const { return matrix_.at(row, col); }

  std::vector<double> column(std::size_t col) const {
    std::vector<double> out(latent_dim());
    for (std::size_t r = 0; r < out.size(); ++r) out[r] = (*this)(r, col);
    return out;
  }

  const Tensor& tensor() const { return matrix_; }
  Tensor& tensor() { return matrix_; }

  bool requires_grad() const { return matrix_.requires_grad(); }
  void set_requires_grad(bool on) { matrix_.set_requires_grad(on); }

  // max |D^T D - I|
  double orthonormality_error() const {
    const std::size_t k = latent_dim(), d = count();
    double worst = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) {
        double dot = 0.0;
        for (std::size_t r = 0; r < k; ++r) dot += (*this)(r, a) * (*this)(r, b);
        worst = std::max(worst, std::abs(dot - (a == b ? 1.0 : 0.0)));
      }
    }
    return worst;
  }

 private:
  Tensor matrix_;
};

namespace detail {

inline Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (std::size_t r = 0; r < t.dim(0); ++r)
    for (std::size_t c = 0; c < t.dim(1); ++c) m(r, c) = t.at(r, c);
  return m;
}

inline std::vector<double> to_row_major(const Eigen::MatrixXd& m) {
  std::vector<double> out(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[r * m.cols() + c] = m(r, c);
  return out;
}

// Thin QR with diag(R) >= 0. Throws when the smallest singular value < 1e-10.
inline Eigen::MatrixXd orthonormal_factor(const Eigen::MatrixXd& a) {
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(sv.size() - 1) < 1e-10) {
    throw RankDeficientError("orthonormalize: direction matrix is rank deficient (smallest singular value " +
                             std::to_string(sv.size() ? sv(sv.size() - 1) : 0.0) + ")");
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), a.cols());
  const Eigen::MatrixXd& packed = qr.matrixQR();
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    if (packed(j, j) < 0) q.col(j) *= -1.0;
  }
  return q;
}

}  // namespace detail

inline DirectionMatrix init_random_orthonormal(std::size_t k, std::size_t d, std::uint64_t seed) {
  if (d > k) {
    throw std::invalid_argument("init_random_orthonormal: " + std::to_string(d) + " directions do not fit in " +
                                std::to_string(k) + " latent dimensions");
  }
  Rng rng(derive_seed(seed, "directions"));
  Eigen::MatrixXd g(k, d);
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t c = 0; c < d; ++c) g(r, c) = rng.normal();
  return DirectionMatrix(Tensor::matrix(k, d, detail::to_row_major(detail::orthonormal_factor(g))));
}

// Closed-form initialisation in the style of weight-matrix factorisation:
// eigenvectors of Q^T Q (the right singular vectors of the generator's mixing
// weights) by descending eigenvalue. Q's singular values are all 1, so the
// solver returns an arbitrary rotation of the factor axes inside row-space(Q);
// columns beyond m come from the null space. Each column's sign is fixed so
// its largest-magnitude entry is positive.
inline DirectionMatrix init_sefa_analog(const MixingMap& map, std::size_t d) {
  const std::size_t k = map.latent_dim();
  if (d > k) {
    throw std::invalid_argument("init_sefa_analog: " + std::to_string(d) + " directions do not fit in " +
                                std::to_string(k) + " latent dimensions");
  }
  const Eigen::MatrixXd q = detail::to_eigen(map.q());
  const Eigen::MatrixXd gram = q.transpose() * q;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const Eigen::VectorXd& values = eig.eigenvalues();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(values.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return values(a) > values(b); });

  Eigen::MatrixXd cols(k, d);
  for (std::size_t c = 0; c < d; ++c) {
    Eigen::VectorXd v = eig.eigenvectors().col(order[c]);
    Eigen::Index peak = 0;
    v.cwiseAbs().maxCoeff(&peak);
    if (v(peak) < 0) v = -v;
    cols.col(static_cast<Eigen::Index>(c)) = v;
  }
  return DirectionMatrix(Tensor::matrix(k, d, detail::to_row_major(detail::orthonormal_factor(cols))));
}

// ẑ = z + D ε for a batch: z [n,k], eps [n,d] -> [n,k]. Recorded on the tape
// whenever D (or z, eps) requires grad.
inline Tensor shift(const Tensor& z, const DirectionMatrix& directions, const Tensor& eps) {
  if (z.rank() != 2 || z.dim(1) != directions.latent_dim()) {
    throw ShapeError("shift: latents " + shape_str(z.shape()) + " do not match directions " +
                     shape_str(directions.tensor().shape()));
  }
  if (eps.rank() != 2 || eps.dim(1) != directions.count() || eps.dim(0) != z.dim(0)) {
    throw ShapeError("shift: scales " + shape_str(eps.shape()) + " do not match latents " + shape_str(z.shape()) +
                     " and directions " + shape_str(directions.tensor().shape()));
  }
  return add(z, matmul(eps, transpose(directions.tensor())));
}

// Single latent vector form.
inline std::vector<double> shift(std::span<const double> z, const DirectionMatrix& directions,
                                 std::span<const double> eps) {
  if (z.size() != directions.latent_dim() || eps.size() != directions.count()) {
    throw ShapeError("shift: latent of size " + std::to_string(z.size()) + " and scales of size " +
                     std::to_string(eps.size()) + " do not match directions " +
                     shape_str(directions.tensor().shape()));
  }
  std::vector<double> out(z.begin(), z.end());
  for (std::size_t r = 0; r < out.size(); ++r)
    for (std::size_t c = 0; c < eps.size(); ++c) out[r] += directions(r, c) * eps[c];
  return out;
}

// Replaces D in place by the orthonormal factor of its QR decomposition.
inline void orthonormalize(DirectionMatrix& directions) {
  const Eigen::MatrixXd q = detail::orthonormal_factor(detail::to_eigen(directions.tensor()));
  auto data = directions.tensor().mutable_data();
  const auto flat = detail::to_row_major(q);
  std::copy(flat.begin(), flat.end(), data.begin());
}

inline DirectionMatrix ground_truth_directions(const MixingMap& map) {
  NoGradGuard no_grad;
  return DirectionMatrix(transpose(map.q()));
}

struct Match {
  std::size_t direction;
  std::size_t factor;
  double cosine;  // absolute value
};

// Greedy maximum-weight matching on |cos| between columns of `learned` and
// `truth`: take the global max, strike its row and column, repeat.
// Returned in the order the pairs were picked.
inline std::vector<Match> greedy_match(const DirectionMatrix& learned, const DirectionMatrix& truth) {
  if (learned.latent_dim() != truth.latent_dim()) {
    throw ShapeError("greedy_match: latent dimensions differ");
  }
  const std::size_t d = learned.count(), m = truth.count(), k = learned.latent_dim();
  std::vector<double> cos(d * m);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double dot = 0, na = 0, nb = 0;
      for (std::size_t r = 0; r < k; ++r) {
        dot += learned(r, i) * truth(r, j);
        na += learned(r, i) * learned(r, i);
        nb += truth(r, j) * truth(r, j);
      }
      cos[i * m + j] = (na > 0 && nb > 0) ? std::abs(dot) / std::sqrt(na * nb) : 0.0;
    }
  }
  std::vector<bool> row_used(d, false), col_used(m, false);
  std::vector<Match> matches;
  for (std::size_t step = 0; step < std::min(d, m); ++step) {
    Match best{0, 0, -1.0};
    for (std::size_t i = 0; i < d; ++i) {
      if (row_used[i]) continue;
      for (std::size_t j = 0; j < m; ++j) {
        if (!col_used[j] && cos[i * m + j] > best.cosine) best = {i, j, cos[i * m + j]};
      }
    }
    row_used[best.direction] = true;
    col_used[best.factor] = true;
    matches.push_back(best);
  }
  return matches;
}

// Mean matched |cos| over the truth columns, in [0, 1].
inline double alignment_score(const DirectionMatrix& learned, const DirectionMatrix& truth) {
  const auto matches = greedy_match(learned, truth);
  double total = 0.0;
  for (const auto& m : matches) total += m.cosine;
  return truth.count() == 0 ? 0.0 : total / static_cast<double>(truth.count());
}

}  // namespace sre

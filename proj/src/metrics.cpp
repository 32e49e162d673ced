#include "bad/metrics.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>

#include "bad/autodiff.hpp"

namespace bad::metrics {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

void moments(const Tensor& x, Vec& mean, Mat& cov) {
  const auto n = static_cast<Eigen::Index>(x.rows());
  const auto d = static_cast<Eigen::Index>(x.cols());
  Mat m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = static_cast<double>(x(i, j));
  }
  mean = m.colwise().mean();
  const Mat centered = m.rowwise() - mean.transpose();
  cov = centered.transpose() * centered / static_cast<double>(n - 1);
}

Mat sqrt_psd(const Mat& s) {
  Eigen::SelfAdjointEigenSolver<Mat> es(s);
  if (es.info() != Eigen::Success) throw NumericError("frechet distance: eigendecomposition failed");
  const Vec root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_gaussian_distance(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("frechet distance: feature dimensions differ");
  const std::size_t d = a.cols();
  if (a.rows() < d + 1 || b.rows() < d + 1) {
    throw std::invalid_argument("frechet distance: need at least " + std::to_string(d + 1) + " samples per side");
  }
  Vec mu_a, mu_b;
  Mat s_a, s_b;
  moments(a, mu_a, s_a);
  moments(b, mu_b, s_b);
  if (!s_a.allFinite() || !s_b.allFinite()) throw NumericError("frechet distance: non-finite covariance");
  // Tr((S_a S_b)^1/2) = Tr((S_a^1/2 S_b S_a^1/2)^1/2), which is symmetric PSD.
  const Mat ra = sqrt_psd(s_a);
  Mat inner = ra * s_b * ra;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(inner, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("frechet distance: eigendecomposition failed");
  const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (mu_a - mu_b).squaredNorm() + s_a.trace() + s_b.trace() - 2.0 * cross;
  return std::max(0.0, value);
}

Tensor sequence_features(std::span<const TokenSequence> sequences, std::size_t vocabulary) {
  if (sequences.empty()) throw std::invalid_argument("sequence_features: no sequences");
  Tensor out = Tensor::matrix(sequences.size(), 2 * vocabulary);
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto& s = sequences[i];
    if (s.size() < 2) throw std::invalid_argument("sequence_features: sequences need length >= 2");
    for (std::size_t t = 0; t < s.size(); ++t) {
      if (s[t] >= vocabulary) throw std::out_of_range("sequence_features: token outside vocabulary");
      out(i, s[t]) += real(1) / static_cast<real>(s.size());
      if (t + 1 < s.size()) {
        const std::size_t move = (s[t + 1] + vocabulary - s[t]) % vocabulary;
        out(i, vocabulary + move) += real(1) / static_cast<real>(s.size() - 1);
      }
    }
  }
  return out;
}

}  // namespace bad::metrics

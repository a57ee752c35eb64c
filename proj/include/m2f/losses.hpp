#pragma once

#include <span>

#include "m2f/tensor.hpp"

namespace m2f::losses {

struct TripletDistances {
  double d_ap = 0.0;  // anchor - positive
  double d_an = 0.0;  // anchor - negative
  double d_pn = 0.0;  // positive - negative
};

struct MarginComponents {
  double m_sim = 0.0;
  double m_dissim = 0.0;
  double m_am = 0.0;  // m_sim + m_dissim
};

struct ExtractorLossConfig {
  double lambda_amt = 20.0;
  double lambda_cov = 5.0;
  double lambda_var = 1.0;
  double eps = 1e-4;                // inside the variance square root
  bool squared_covariance = true;   // false sums raw off-diagonal entries
  bool detach_margin = false;       // true treats m_am as a constant of the distances
};

inline constexpr double kProbabilityFloor = 1e-12;

double pairwise_distance(std::span<const double> u, std::span<const double> v);
Tensor pairwise_distance(const Tensor& u, const Tensor& v);

// Row-wise Euclidean distances of two [N, d] batches -> [N].
Tensor row_distances(const Tensor& a, const Tensor& b);

// m_sim = 1 + 2 / e^(4 d_ap), m_dissim = 1 + 2 / e^(4 - 4 d_an).
MarginComponents adaptive_margin(double d_ap, double d_an);

struct MarginTensors {
  Tensor m_sim, m_dissim, m_am;
};
MarginTensors adaptive_margin(const Tensor& d_ap, const Tensor& d_an);

// d_ap - (d_an + d_pn) / 2 + m_am, without a hinge.
double amt_loss(const TripletDistances& t);
Tensor amt_loss(const Tensor& d_ap, const Tensor& d_an, const Tensor& d_pn, bool detach_margin = false);

// (1/d) sum_j (1 - sqrt(Var(z[:, j]) + eps)), unbiased variance. Needs N >= 2.
Tensor variance_loss(const Tensor& z, double eps = 1e-4);

// (1/d) sum_{i != j} Cov(z)_{ij}^2 (or the raw entries when !squared),
// unbiased covariance. Needs N >= 2.
Tensor covariance_loss(const Tensor& z, bool squared = true);

struct ExtractorLoss {
  Tensor total;
  Tensor amt;  // mean over triplets
  Tensor cov;  // summed over the three triplet batches
  Tensor var;  // likewise
  Tensor d_ap, d_an, d_pn;
};

Tensor combine_extractor_loss(const Tensor& amt, const Tensor& cov, const Tensor& var,
                              const ExtractorLossConfig& cfg);

// Full objective on anchor/positive/negative representation batches [N, d].
ExtractorLoss extractor_loss(const Tensor& za, const Tensor& zp, const Tensor& zn,
                             const ExtractorLossConfig& cfg = {});

// Mean negative log-probability of the labelled class; probs is [n, C] or
// [M, k, C] with labels flattened in row-major order.
Tensor cross_entropy(const Tensor& probs, std::span<const int> labels);

}  // namespace m2f::losses

#include "m2f/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace m2f::losses {

double pairwise_distance(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw DimensionError("pairwise_distance: lengths " + std::to_string(u.size()) + " and " +
                         std::to_string(v.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) acc += (u[i] - v[i]) * (u[i] - v[i]);
  return std::sqrt(acc);
}

Tensor pairwise_distance(const Tensor& u, const Tensor& v) {
  if (u.shape() != v.shape()) {
    throw DimensionError("pairwise_distance: shapes " + shape_str(u.shape()) + " and " + shape_str(v.shape()));
  }
  return sqrt(sum(square(sub(u, v))));
}

Tensor row_distances(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || a.shape() != b.shape()) {
    throw DimensionError("row_distances: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  return sqrt(sum_axis(square(sub(a, b)), 1));
}

MarginComponents adaptive_margin(double d_ap, double d_an) {
  MarginComponents m;
  m.m_sim = 1.0 + 2.0 / std::exp(4.0 * d_ap);
  m.m_dissim = 1.0 + 2.0 / std::exp(-4.0 * d_an + 4.0);
  m.m_am = m.m_sim + m.m_dissim;
  return m;
}

MarginTensors adaptive_margin(const Tensor& d_ap, const Tensor& d_an) {
  MarginTensors m;
  m.m_sim = add_scalar(scale(exp(scale(d_ap, -4.0)), 2.0), 1.0);
  m.m_dissim = add_scalar(scale(exp(add_scalar(scale(d_an, 4.0), -4.0)), 2.0), 1.0);
  m.m_am = add(m.m_sim, m.m_dissim);
  return m;
}

double amt_loss(const TripletDistances& t) {
  return t.d_ap - (t.d_an + t.d_pn) / 2.0 + adaptive_margin(t.d_ap, t.d_an).m_am;
}

Tensor amt_loss(const Tensor& d_ap, const Tensor& d_an, const Tensor& d_pn, bool detach_margin) {
  const MarginTensors m =
      detach_margin ? adaptive_margin(d_ap.detach(), d_an.detach()) : adaptive_margin(d_ap, d_an);
  return add(sub(d_ap, scale(add(d_an, d_pn), 0.5)), m.m_am);
}

namespace {

Tensor centered(const Tensor& z, const char* op) {
  if (z.rank() != 2) throw DimensionError(std::string(op) + ": expected [N, d], got " + shape_str(z.shape()));
  if (z.dim(0) < 2) {
    throw std::invalid_argument(std::string(op) + ": needs at least 2 representations, got " +
                                std::to_string(z.dim(0)));
  }
  return add_row(z, neg(mean_axis(z, 0)));
}

}  // namespace

Tensor variance_loss(const Tensor& z, double eps) {
  const Tensor c = centered(z, "variance_loss");
  const double n = static_cast<double>(z.dim(0));
  const Tensor var = scale(sum_axis(square(c), 0), 1.0 / (n - 1.0));
  return mean(neg(add_scalar(sqrt(add_scalar(var, eps)), -1.0)));
}

Tensor covariance_loss(const Tensor& z, bool squared) {
  const Tensor c = centered(z, "covariance_loss");
  const double n = static_cast<double>(z.dim(0));
  const double d = static_cast<double>(z.dim(1));
  const Tensor cov = scale(matmul(transpose(c), c), 1.0 / (n - 1.0));
  // Diagonal of cov equals the per-column variances.
  const Tensor var = scale(sum_axis(square(c), 0), 1.0 / (n - 1.0));
  const Tensor off = squared ? sub(sum(square(cov)), sum(square(var))) : sub(sum(cov), sum(var));
  return scale(off, 1.0 / d);
}

Tensor combine_extractor_loss(const Tensor& amt, const Tensor& cov, const Tensor& var,
                              const ExtractorLossConfig& cfg) {
  if (cfg.lambda_amt < 0.0 || cfg.lambda_cov < 0.0 || cfg.lambda_var < 0.0) {
    throw std::invalid_argument("extractor loss weights must be non-negative");
  }
  return add(add(scale(amt, cfg.lambda_amt), scale(cov, cfg.lambda_cov)), scale(var, cfg.lambda_var));
}

ExtractorLoss extractor_loss(const Tensor& za, const Tensor& zp, const Tensor& zn,
                             const ExtractorLossConfig& cfg) {
  if (za.shape() != zp.shape() || za.shape() != zn.shape()) {
    throw DimensionError("extractor_loss: batches " + shape_str(za.shape()) + ", " + shape_str(zp.shape()) +
                         ", " + shape_str(zn.shape()) + " differ");
  }
  ExtractorLoss out;
  out.d_ap = row_distances(za, zp);
  out.d_an = row_distances(za, zn);
  out.d_pn = row_distances(zp, zn);
  out.amt = mean(amt_loss(out.d_ap, out.d_an, out.d_pn, cfg.detach_margin));
  out.var = add(add(variance_loss(za, cfg.eps), variance_loss(zp, cfg.eps)), variance_loss(zn, cfg.eps));
  out.cov = add(add(covariance_loss(za, cfg.squared_covariance), covariance_loss(zp, cfg.squared_covariance)),
                covariance_loss(zn, cfg.squared_covariance));
  out.total = combine_extractor_loss(out.amt, out.cov, out.var, cfg);
  return out;
}

Tensor cross_entropy(const Tensor& probs, std::span<const int> labels) {
  if (probs.rank() != 2 && probs.rank() != 3) {
    throw DimensionError("cross_entropy: expected [n, C] or [M, k, C], got " + shape_str(probs.shape()));
  }
  const std::size_t classes = probs.shape().back();
  const Tensor flat = probs.rank() == 2 ? probs : reshape(probs, {probs.numel() / classes, classes});
  return neg(mean(log_clamped(pick(flat, labels), kProbabilityFloor)));
}

}  // namespace m2f::losses

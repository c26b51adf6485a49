#include <cmath>

#include "neon/training.hpp"

namespace neon {
namespace {

void check_batch(const MatrixXd& probs, std::span<const int> labels, Eigen::Index classes,
                 const char* what) {
  if (probs.cols() != classes || static_cast<std::size_t>(probs.rows()) != labels.size())
    throw nn::DimensionError(std::string(what) + ": probabilities " +
                             nn::shape_string(probs.rows(), probs.cols()) + " vs " +
                             std::to_string(labels.size()) + " labels");
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const auto row = probs.row(i);
    if (!row.allFinite() || row.minCoeff() < 0.0 || std::abs(row.sum() - 1.0) > 1e-9)
      throw ValidationError(std::string(what) + ": row " + std::to_string(i) +
                            " is not a valid simplex");
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= classes)
      throw ValidationError(std::string(what) + ": label out of range in row " +
                            std::to_string(i));
  }
}

}  // namespace

double focal_loss(const MatrixXd& need_probs, std::span<const int> labels, double gamma) {
  if (!(gamma >= 0.0)) throw ValidationError("focal_loss: gamma must be >= 0");
  check_batch(need_probs, labels, static_cast<Eigen::Index>(kNeedCount), "focal_loss");
  double loss = 0.0;
  for (Eigen::Index i = 0; i < need_probs.rows(); ++i) {
    const double q = need_probs(i, labels[static_cast<std::size_t>(i)]);
    const double qc = std::max(q, kProbabilityFloor);
    loss -= std::pow(1.0 - q, gamma) * std::log(qc);
  }
  return loss;
}

MatrixXd focal_loss_grad(const MatrixXd& need_probs, std::span<const int> labels, double gamma) {
  check_batch(need_probs, labels, static_cast<Eigen::Index>(kNeedCount), "focal_loss_grad");
  MatrixXd grad(need_probs.rows(), need_probs.cols());
  for (Eigen::Index i = 0; i < need_probs.rows(); ++i) {
    const int t = labels[static_cast<std::size_t>(i)];
    const double q = need_probs(i, t);
    const double one_minus = 1.0 - q;
    // dL/dq for L = -(1-q)^gamma log(max(q, floor)).
    double dl_dq = 0.0;
    if (one_minus > 0.0) {
      const double log_q = std::log(std::max(q, kProbabilityFloor));
      if (gamma != 0.0) dl_dq += gamma * std::pow(one_minus, gamma - 1.0) * log_q;
      if (q >= kProbabilityFloor) dl_dq -= std::pow(one_minus, gamma) / q;
    }
    // dq_t/ds_j = q_t (delta_tj - q_j)
    for (Eigen::Index j = 0; j < need_probs.cols(); ++j)
      grad(i, j) = dl_dq * q * ((j == t ? 1.0 : 0.0) - need_probs(i, j));
  }
  return grad;
}

double way_loss(const MatrixXd& way_probs, std::span<const int> labels) {
  check_batch(way_probs, labels, static_cast<Eigen::Index>(kWayCount), "way_loss");
  double loss = 0.0;
  for (Eigen::Index i = 0; i < way_probs.rows(); ++i)
    loss -= std::log(std::max(way_probs(i, labels[static_cast<std::size_t>(i)]), kProbabilityFloor));
  return loss;
}

MatrixXd way_loss_grad(const MatrixXd& way_probs, std::span<const int> labels) {
  check_batch(way_probs, labels, static_cast<Eigen::Index>(kWayCount), "way_loss_grad");
  MatrixXd grad = way_probs;
  for (Eigen::Index i = 0; i < grad.rows(); ++i) grad(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  return grad;
}

}  // namespace neon

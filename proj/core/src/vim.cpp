#include "d3ood/detectors.hpp"
#include "d3ood/error.hpp"

#include <algorithm>
#include <cmath>

namespace d3ood::detectors {

VimModel vim_fit(std::span<const std::vector<double>> bank_features, std::span<const std::vector<double>> bank_logits,
                 std::size_t residual_dim, const ClassifierHead* head) {
  if (bank_features.empty()) throw UsageError("ViM fit needs a non-empty bank");
  if (bank_features.size() != bank_logits.size()) throw DataError("ViM fit: features and logits differ in count");
  const auto m = bank_features.front().size();
  const auto n = bank_features.size();
  if (residual_dim < 1 || residual_dim >= m) throw UsageError("ViM residual_dim must lie in [1, m)");
  if (n < m) {
    throw NumericalError("ViM fit is rank-deficient: " + std::to_string(n) + " samples for m=" + std::to_string(m));
  }

  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < n; ++i) {
    if (bank_features[i].size() != m) throw DataError("ViM bank rows differ in dimension");
    x.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(bank_features[i].data(),
                                                                                static_cast<Eigen::Index>(m));
  }

  VimModel model;
  if (head != nullptr) {
    if (head->feature_dim() != m) throw DataError("ViM fit: head does not match the bank dimension");
    // Point where every logit vanishes: Wᵀo = −b, minimum-norm solution.
    model.offset = head->weights.transpose().completeOrthogonalDecomposition().solve(-head->bias);
  } else {
    model.offset = x.colwise().mean().transpose();
  }
  x.rowwise() -= model.offset.transpose();

  const Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(n);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericalError("ViM eigendecomposition failed");
  // Eigenvalues ascend, so the residual space is the leading block of columns.
  model.residual_basis = eig.eigenvectors().leftCols(static_cast<Eigen::Index>(residual_dim));

  const auto& values = eig.eigenvalues();
  const double tol = std::max(values.maxCoeff(), 0.0) * 1e-12 * static_cast<double>(m);
  const auto rank = (values.array() > tol).count();
  model.rank_deficient = rank < static_cast<Eigen::Index>(m - residual_dim);

  double mean_max_logit = 0.0;
  double mean_residual = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_max_logit += *std::max_element(bank_logits[i].begin(), bank_logits[i].end());
    mean_residual += (x.row(static_cast<Eigen::Index>(i)) * model.residual_basis).norm();
  }
  mean_max_logit /= static_cast<double>(n);
  mean_residual /= static_cast<double>(n);
  model.alpha = mean_residual > 0.0 ? mean_max_logit / mean_residual : 1.0;
  return model;
}

VimModel vim_fit(std::span<const RepresentationRecord> bank, std::size_t residual_dim, const ClassifierHead* head) {
  std::vector<std::vector<double>> features;
  std::vector<std::vector<double>> logits;
  features.reserve(bank.size());
  logits.reserve(bank.size());
  for (const auto& rec : bank) {
    features.push_back(rec.features);
    logits.push_back(rec.logits);
  }
  return vim_fit(features, logits, residual_dim, head);
}

double vim_residual_norm(std::span<const double> features, const VimModel& model) {
  if (static_cast<Eigen::Index>(features.size()) != model.offset.size()) {
    throw DataError("ViM query dimension does not match the model");
  }
  const Eigen::Map<const Eigen::VectorXd> h(features.data(), static_cast<Eigen::Index>(features.size()));
  return (model.residual_basis.transpose() * (h - model.offset)).norm();
}

double vim_score(const RepresentationRecord& record, const VimModel& model) {
  std::vector<double> extended(record.logits);
  extended.push_back(model.alpha * vim_residual_norm(record.features, model));
  const double lse = metrics::log_sum_exp(extended);
  return 1.0 - std::exp(extended.back() - lse);
}

}  // namespace d3ood::detectors

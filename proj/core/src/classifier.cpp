#include "d3ood/error.hpp"
#include "d3ood/toydiff.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace d3ood::toy {

namespace {

Eigen::MatrixXd feature_matrix(const ToyClassifier& clf, const std::vector<Point>& points) {
  Eigen::MatrixXd phi(static_cast<Eigen::Index>(points.size()), static_cast<Eigen::Index>(clf.num_features()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto f = clf.features(points[i]);
    for (std::size_t k = 0; k < f.size(); ++k) phi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = f[k];
  }
  return phi;
}

/// Row-wise softmax of logits, returned in place.
void softmax_rows(Eigen::MatrixXd& z) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double peak = z.row(i).maxCoeff();
    z.row(i) = (z.row(i).array() - peak).exp();
    z.row(i) /= z.row(i).sum();
  }
}

double mean_cross_entropy(const Eigen::MatrixXd& logits, const std::vector<int>& labels) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double peak = logits.row(i).maxCoeff();
    const double lse = peak + std::log((logits.row(i).array() - peak).exp().sum());
    total += lse - logits(i, labels[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(logits.rows());
}

std::string describe(const TrainConfig& cfg) {
  std::ostringstream os;
  os << "steps=" << cfg.steps << " learning_rate=" << cfg.learning_rate << " l2=" << cfg.l2
     << " n_centers=" << cfg.n_centers << " bandwidth=" << cfg.bandwidth << " seed=" << cfg.seed;
  return os.str();
}

}  // namespace

std::vector<double> ToyClassifier::features(std::span<const double> x) const {
  if (x.size() != input_dim()) throw DataError("toy classifier: input dimension mismatch");
  std::vector<double> phi(num_features());
  const double denom = 2.0 * bandwidth * bandwidth;
  for (std::size_t k = 0; k < phi.size(); ++k) {
    double sq = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double d = x[j] - centers(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j));
      sq += d * d;
    }
    phi[k] = std::exp(-sq / denom);
  }
  return phi;
}

Eigen::MatrixXd ToyClassifier::feature_jacobian(std::span<const double> x) const {
  const auto phi = features(x);
  Eigen::MatrixXd jac(centers.rows(), centers.cols());
  const double inv_bw2 = 1.0 / (bandwidth * bandwidth);
  for (Eigen::Index k = 0; k < centers.rows(); ++k) {
    for (Eigen::Index j = 0; j < centers.cols(); ++j) {
      jac(k, j) = -phi[static_cast<std::size_t>(k)] * (x[static_cast<std::size_t>(j)] - centers(k, j)) * inv_bw2;
    }
  }
  return jac;
}

std::vector<double> ToyClassifier::logits(std::span<const double> x) const { return head.logits(features(x)); }

int ToyClassifier::predict(std::span<const double> x) const {
  const auto z = logits(x);
  return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

ToyClassifier train_toy_classifier(const LabeledPoints& data, std::size_t num_classes, const TrainConfig& cfg) {
  if (data.points.empty() || data.points.size() != data.labels.size()) {
    throw DataError("train_toy_classifier: need a non-empty labeled dataset");
  }
  if (num_classes < 2) throw UsageError("train_toy_classifier: need C >= 2");
  std::vector<bool> seen(num_classes, false);
  for (int y : data.labels) {
    if (y < 0 || y >= static_cast<int>(num_classes)) throw DataError("train_toy_classifier: label out of range");
    seen[static_cast<std::size_t>(y)] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw DataError("train_toy_classifier: every class must be represented");
  }
  if (cfg.steps < 0 || !(cfg.learning_rate > 0.0) || !(cfg.bandwidth > 0.0) || cfg.n_centers == 0) {
    throw UsageError("train_toy_classifier: invalid config (" + describe(cfg) + ")");
  }

  const std::size_t n = data.points.size();
  const std::size_t d = data.points.front().size();
  const std::size_t n_centers = std::min(cfg.n_centers, n);

  // Seeded partial Fisher-Yates over the training points picks the centers.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  RngStream rng(cfg.seed, {kSplitTrain, 0xFFFFFFFFu, 0xC0u});
  for (std::size_t i = 0; i < n_centers; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.uniform() * static_cast<double>(n - i));
    std::swap(order[i], order[std::min(j, n - 1)]);
  }

  ToyClassifier clf;
  clf.bandwidth = cfg.bandwidth;
  clf.centers.resize(static_cast<Eigen::Index>(n_centers), static_cast<Eigen::Index>(d));
  for (std::size_t k = 0; k < n_centers; ++k) {
    for (std::size_t j = 0; j < d; ++j) {
      clf.centers(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = data.points[order[k]][j];
    }
  }
  const auto c = static_cast<Eigen::Index>(num_classes);
  clf.head.weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_centers), c);
  clf.head.bias = Eigen::VectorXd::Zero(c);

  const Eigen::MatrixXd phi = feature_matrix(clf, data.points);
  Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), c);
  for (std::size_t i = 0; i < n; ++i) targets(static_cast<Eigen::Index>(i), data.labels[i]) = 1.0;
  const double inv_n = 1.0 / static_cast<double>(n);

  for (int step = 0; step < cfg.steps; ++step) {
    Eigen::MatrixXd probs = (phi * clf.head.weights).rowwise() + clf.head.bias.transpose();
    softmax_rows(probs);
    const Eigen::MatrixXd residual = probs - targets;
    const Eigen::MatrixXd grad_w = inv_n * phi.transpose() * residual + cfg.l2 * clf.head.weights;
    const Eigen::VectorXd grad_b = inv_n * residual.colwise().sum().transpose();
    clf.head.weights -= cfg.learning_rate * grad_w;
    clf.head.bias -= cfg.learning_rate * grad_b;
    if (!clf.head.weights.allFinite() || !clf.head.bias.allFinite()) {
      throw NumericalError("toy classifier training diverged at step " + std::to_string(step) + " (" +
                           describe(cfg) + ")");
    }
  }
  const Eigen::MatrixXd logits = (phi * clf.head.weights).rowwise() + clf.head.bias.transpose();
  if (!std::isfinite(mean_cross_entropy(logits, data.labels))) {
    throw NumericalError("toy classifier training produced a non-finite loss (" + describe(cfg) + ")");
  }
  return clf;
}

double cross_entropy(const ToyClassifier& clf, const LabeledPoints& data) {
  const Eigen::MatrixXd phi = feature_matrix(clf, data.points);
  const Eigen::MatrixXd logits = (phi * clf.head.weights).rowwise() + clf.head.bias.transpose();
  return mean_cross_entropy(logits, data.labels);
}

double accuracy(const ToyClassifier& clf, const LabeledPoints& data) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.points.size(); ++i) hits += clf.predict(data.points[i]) == data.labels[i];
  return data.points.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(data.points.size());
}

RepresentationRecord embed(std::span<const double> point, const ToyClassifier& clf, std::string id) {
  RepresentationRecord rec;
  rec.id = std::move(id);
  rec.features = clf.features(point);
  rec.logits = clf.head.logits(rec.features);
  return rec;
}

std::vector<RepresentationRecord> embed_batch(std::span<const Point> points, const ToyClassifier& clf,
                                              std::string_view id_prefix) {
  std::vector<RepresentationRecord> out;
  out.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) out.push_back(embed(points[i], clf, std::string(id_prefix) + std::to_string(i)));
  return out;
}

void save_classifier(const ToyClassifier& clf, const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["bandwidth"] = clf.bandwidth;
  nlohmann::json centers = nlohmann::json::array();
  for (Eigen::Index k = 0; k < clf.centers.rows(); ++k) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < clf.centers.cols(); ++j) row.push_back(clf.centers(k, j));
    centers.push_back(std::move(row));
  }
  doc["centers"] = std::move(centers);
  nlohmann::json weights = nlohmann::json::array();
  for (Eigen::Index i = 0; i < clf.head.weights.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < clf.head.weights.cols(); ++j) row.push_back(clf.head.weights(i, j));
    weights.push_back(std::move(row));
  }
  doc["head"]["weights"] = std::move(weights);
  doc["head"]["bias"] = std::vector<double>(clf.head.bias.data(), clf.head.bias.data() + clf.head.bias.size());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

ToyClassifier load_classifier(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  ToyClassifier clf;
  try {
    const auto doc = nlohmann::json::parse(in);
    clf.bandwidth = doc.at("bandwidth").get<double>();
    const auto centers = doc.at("centers").get<std::vector<std::vector<double>>>();
    const auto weights = doc.at("head").at("weights").get<std::vector<std::vector<double>>>();
    const auto bias = doc.at("head").at("bias").get<std::vector<double>>();
    if (centers.empty() || weights.size() != centers.size() || bias.size() < 2) {
      throw DataError(path.string() + ": inconsistent classifier shapes");
    }
    const auto nc = static_cast<Eigen::Index>(centers.size());
    const auto d = static_cast<Eigen::Index>(centers.front().size());
    const auto c = static_cast<Eigen::Index>(bias.size());
    clf.centers.resize(nc, d);
    clf.head.weights.resize(nc, c);
    for (Eigen::Index k = 0; k < nc; ++k) {
      if (static_cast<Eigen::Index>(centers[static_cast<std::size_t>(k)].size()) != d ||
          static_cast<Eigen::Index>(weights[static_cast<std::size_t>(k)].size()) != c) {
        throw DataError(path.string() + ": ragged classifier arrays");
      }
      for (Eigen::Index j = 0; j < d; ++j) clf.centers(k, j) = centers[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
      for (Eigen::Index j = 0; j < c; ++j) clf.head.weights(k, j) = weights[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
    }
    clf.head.bias = Eigen::Map<const Eigen::VectorXd>(bias.data(), c);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed classifier: " + e.what());
  }
  return clf;
}

}  // namespace d3ood::toy

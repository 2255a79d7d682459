#include "d3ood/detectors.hpp"
#include "d3ood/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <string>

namespace d3ood::detectors {

namespace {

void require_head(const RepresentationRecord& record, const ClassifierHead& head) {
  if (record.feature_dim() != head.feature_dim() || record.num_classes() != head.num_classes()) {
    throw DataError("record '" + record.id + "' dimensions do not match the classifier head");
  }
}

double squared_norm(const double* v, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += v[i] * v[i];
  return acc;
}

std::vector<double> unit(std::span<const double> h, const std::string& id) {
  const double n = std::sqrt(squared_norm(h.data(), h.size()));
  if (!(n > 0.0)) throw NumericalError("zero-norm feature vector for '" + id + "'");
  std::vector<double> out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = h[i] / n;
  return out;
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

}  // namespace

double msp_score(const RepresentationRecord& record) {
  const auto p = metrics::softmax(record.logits);
  return *std::max_element(p.values().begin(), p.values().end());
}

double energy_score(const RepresentationRecord& record) { return metrics::log_sum_exp(record.logits); }

double mls_score(const RepresentationRecord& record) {
  if (record.logits.empty()) throw DataError("record has no logits");
  return *std::max_element(record.logits.begin(), record.logits.end());
}

double odin_score(const RepresentationRecord& record, double temperature, double perturbation) {
  if (!(temperature > 0.0)) throw UsageError("ODIN temperature must be > 0");
  if (perturbation != 0.0) {
    throw UsageError("ODIN input perturbation needs the input-space classifier (toy mode); "
                     "representation-only scoring supports perturbation 0 only");
  }
  std::vector<double> scaled(record.logits);
  for (double& z : scaled) z /= temperature;
  const auto p = metrics::softmax(scaled);
  return *std::max_element(p.values().begin(), p.values().end());
}

double odin_score(std::span<const double> point, const toy::ToyClassifier& clf, double temperature,
                  double perturbation) {
  if (!(temperature > 0.0)) throw UsageError("ODIN temperature must be > 0");
  if (perturbation < 0.0) throw UsageError("ODIN perturbation must be >= 0");
  std::vector<double> x(point.begin(), point.end());
  if (perturbation > 0.0) {
    const auto z = clf.logits(x);
    const auto predicted = static_cast<Eigen::Index>(std::max_element(z.begin(), z.end()) - z.begin());
    std::vector<double> scaled(z);
    for (double& v : scaled) v /= temperature;
    const double lse = metrics::log_sum_exp(scaled);
    Eigen::VectorXd dlogp_dz(static_cast<Eigen::Index>(z.size()));
    for (Eigen::Index j = 0; j < dlogp_dz.size(); ++j) {
      dlogp_dz(j) = ((j == predicted ? 1.0 : 0.0) - std::exp(scaled[static_cast<std::size_t>(j)] - lse)) / temperature;
    }
    const Eigen::VectorXd grad = clf.feature_jacobian(x).transpose() * (clf.head.weights * dlogp_dz);
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double g = grad(static_cast<Eigen::Index>(j));
      x[j] += perturbation * static_cast<double>((g > 0.0) - (g < 0.0));
    }
  }
  return odin_score(embed(x, clf), temperature);
}

std::string_view to_string(GradNormOrientation orientation) noexcept {
  return orientation == GradNormOrientation::ProbabilityToUniform ? "p-to-u" : "u-to-p";
}

GradNormOrientation parse_gradnorm_orientation(std::string_view name) {
  if (name == "p-to-u") return GradNormOrientation::ProbabilityToUniform;
  if (name == "u-to-p") return GradNormOrientation::UniformToProbability;
  throw UsageError("unknown GradNorm orientation '" + std::string(name) + "' (expected p-to-u or u-to-p)");
}

Eigen::MatrixXd gradnorm_gradient(const RepresentationRecord& record, const ClassifierHead& head, double temperature,
                                  GradNormOrientation orientation) {
  require_head(record, head);
  if (!(temperature > 0.0)) throw UsageError("GradNorm temperature must be > 0");
  const auto logits = head.logits(record.features);
  std::vector<double> scaled(logits);
  for (double& z : scaled) z /= temperature;
  const double lse = metrics::log_sum_exp(scaled);
  const auto c = static_cast<Eigen::Index>(scaled.size());
  Eigen::VectorXd log_p(c);
  Eigen::VectorXd p(c);
  for (Eigen::Index j = 0; j < c; ++j) {
    log_p(j) = scaled[static_cast<std::size_t>(j)] - lse;
    p(j) = std::exp(log_p(j));
  }
  Eigen::VectorXd dloss_dz(c);
  if (orientation == GradNormOrientation::ProbabilityToUniform) {
    // L = Σ p log(p C);  ∂L/∂z_j = p_j (log p_j − Σ p_i log p_i)
    const double neg_entropy = p.dot(log_p);
    dloss_dz = p.array() * (log_p.array() - neg_entropy);
  } else {
    // L = −log C − (1/C) Σ log p_i;  ∂L/∂z_j = p_j − 1/C
    dloss_dz = p.array() - 1.0 / static_cast<double>(c);
  }
  const Eigen::Map<const Eigen::VectorXd> h(record.features.data(), static_cast<Eigen::Index>(record.features.size()));
  return h * (dloss_dz / temperature).transpose();
}

double gradnorm_score(const RepresentationRecord& record, const ClassifierHead& head, double temperature,
                      GradNormOrientation orientation) {
  return gradnorm_gradient(record, head, temperature, orientation).cwiseAbs().sum();
}

FeatureBank knn_fit(std::span<const std::vector<double>> bank_features, std::size_t k) {
  if (bank_features.empty()) throw UsageError("KNN feature bank is empty");
  if (k < 1 || k > bank_features.size()) throw UsageError("KNN k must lie in [1, bank size]");
  const auto m = bank_features.front().size();
  FeatureBank bank;
  bank.k = k;
  bank.rows.resize(static_cast<Eigen::Index>(bank_features.size()), static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < bank_features.size(); ++i) {
    if (bank_features[i].size() != m) throw DataError("KNN bank rows differ in dimension");
    const auto u = unit(bank_features[i], "bank row " + std::to_string(i));
    for (std::size_t j = 0; j < m; ++j) bank.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = u[j];
  }
  return bank;
}

FeatureBank knn_fit(std::span<const RepresentationRecord> bank, std::size_t k) {
  std::vector<std::vector<double>> features;
  features.reserve(bank.size());
  for (const auto& rec : bank) features.push_back(rec.features);
  return knn_fit(features, k);
}

double knn_score(const RepresentationRecord& record, const FeatureBank& bank) {
  const auto m = static_cast<std::size_t>(bank.rows.cols());
  if (record.feature_dim() != m) throw DataError("KNN query dimension does not match the bank");
  const auto q = unit(record.features, record.id);
  std::vector<double> distances(static_cast<std::size_t>(bank.rows.rows()));
  for (Eigen::Index i = 0; i < bank.rows.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double d = q[j] - bank.rows(i, static_cast<Eigen::Index>(j));
      acc += d * d;
    }
    distances[static_cast<std::size_t>(i)] = std::sqrt(acc);
  }
  const auto kth = distances.begin() + static_cast<std::ptrdiff_t>(bank.k - 1);
  std::nth_element(distances.begin(), kth, distances.end());
  return -*kth;
}

// ---------------------------------------------------------------------------

namespace {

class MspDetector final : public Detector {
 public:
  std::string name() const override { return "msp"; }
  ScoreRecord score(const PairedRecord& pair) const override { return {pair.input.id, msp_score(pair.input), {}, 0}; }
};

class EnergyDetector final : public Detector {
 public:
  std::string name() const override { return "energy"; }
  ScoreRecord score(const PairedRecord& pair) const override {
    return {pair.input.id, energy_score(pair.input), {}, 0};
  }
};

class MlsDetector final : public Detector {
 public:
  std::string name() const override { return "mls"; }
  ScoreRecord score(const PairedRecord& pair) const override { return {pair.input.id, mls_score(pair.input), {}, 0}; }
};

class OdinDetector final : public Detector {
 public:
  explicit OdinDetector(double temperature) : temperature_(temperature) {}
  std::string name() const override { return "odin"; }
  ScoreRecord score(const PairedRecord& pair) const override {
    return {pair.input.id, odin_score(pair.input, temperature_), {}, 0};
  }

 private:
  double temperature_;
};

class GradNormDetector final : public Detector {
 public:
  GradNormDetector(ClassifierHead head, double temperature, GradNormOrientation orientation)
      : head_(std::move(head)), temperature_(temperature), orientation_(orientation) {}
  std::string name() const override { return "gradnorm"; }
  ScoreRecord score(const PairedRecord& pair) const override {
    return {pair.input.id, gradnorm_score(pair.input, head_, temperature_, orientation_), {}, 0};
  }

 private:
  ClassifierHead head_;
  double temperature_;
  GradNormOrientation orientation_;
};

class KnnDetector final : public Detector {
 public:
  explicit KnnDetector(FeatureBank bank) : bank_(std::move(bank)) {}
  std::string name() const override { return "knn"; }
  ScoreRecord score(const PairedRecord& pair) const override { return {pair.input.id, knn_score(pair.input, bank_), {}, 0}; }

 private:
  FeatureBank bank_;
};

class VimDetector final : public Detector {
 public:
  explicit VimDetector(VimModel model) : model_(std::move(model)) {}
  std::string name() const override { return "vim"; }
  ScoreRecord score(const PairedRecord& pair) const override { return {pair.input.id, vim_score(pair.input, model_), {}, 0}; }

 private:
  VimModel model_;
};

class D3Detector final : public Detector {
 public:
  D3Detector(std::string name, ClassifierHead head, D3Config cfg, std::span<const PairedRecord> calibration)
      : name_(std::move(name)), head_(std::move(head)), cfg_(cfg), stats_(calibrate(calibration, head_, cfg_)) {}
  std::string name() const override { return name_; }
  ScoreRecord score(const PairedRecord& pair) const override { return d3_score(pair, head_, cfg_, stats_); }

 private:
  std::string name_;
  ClassifierHead head_;
  D3Config cfg_;
  CalibrationStats stats_;
};

class MetricDetector final : public Detector {
 public:
  MetricDetector(metrics::MetricKind kind, ClassifierHead head, D3Config cfg)
      : kind_(kind), head_(std::move(head)), cfg_(cfg) {}
  std::string name() const override { return std::string(metrics::to_string(kind_)); }
  ScoreRecord score(const PairedRecord& pair) const override {
    const auto out = pair_outputs(pair, head_, cfg_);
    const auto value = metrics::evaluate(kind_, out.input_features, out.input_logits, out.generation_features,
                                         out.generation_logits);
    ScoreRecord rec{pair.input.id, kind_ == metrics::MetricKind::EpsCos ? value.value : -value.value, {}, 0};
    if (kind_ == metrics::MetricKind::EpsKl) {
      const auto kl = metrics::eps_kl(metrics::softmax(out.input_logits), metrics::softmax(out.generation_logits));
      if (kl.denominator_clamped) rec.flags |= kKlDenominatorClamped;
    }
    return rec;
  }

 private:
  metrics::MetricKind kind_;
  ClassifierHead head_;
  D3Config cfg_;
};

const ClassifierHead& need_head(const DetectorContext& ctx, std::string_view name) {
  if (ctx.head == nullptr) throw UsageError("detector '" + std::string(name) + "' requires the classifier head");
  return *ctx.head;
}

}  // namespace

std::vector<std::string> detector_names() {
  return {"msp", "odin", "energy", "gradnorm", "vim", "knn", "mls", "d3", "d3plus",
          "eps_kl", "eps_l2", "eps_kl_alt", "eps_cos"};
}

bool needs_calibration(std::string_view name) { return name == "d3" || name == "d3plus"; }
bool needs_bank(std::string_view name) { return name == "knn" || name == "vim"; }
bool needs_head(std::string_view name) {
  return name == "gradnorm" || name == "vim" || needs_calibration(name) || name.starts_with("eps_");
}

std::unique_ptr<Detector> make_detector(std::string_view name, const DetectorContext& ctx) {
  if (name == "msp") return std::make_unique<MspDetector>();
  if (name == "energy") return std::make_unique<EnergyDetector>();
  if (name == "mls") return std::make_unique<MlsDetector>();
  if (name == "odin") return std::make_unique<OdinDetector>(ctx.odin_temperature);
  if (name == "gradnorm") {
    return std::make_unique<GradNormDetector>(need_head(ctx, name), ctx.temperature, ctx.gradnorm_orientation);
  }
  if (name == "knn") {
    if (ctx.bank.empty()) throw UsageError("detector 'knn' requires a feature-bank manifest");
    return std::make_unique<KnnDetector>(knn_fit(ctx.bank, ctx.knn_k));
  }
  if (name == "vim") {
    if (ctx.bank.empty()) throw UsageError("detector 'vim' requires a feature-bank manifest");
    const auto m = ctx.bank.front().feature_dim();
    const auto residual = ctx.vim_residual_dim == 0 ? std::max<std::size_t>(1, m / 2) : ctx.vim_residual_dim;
    return std::make_unique<VimDetector>(vim_fit(ctx.bank, residual, &need_head(ctx, name)));
  }
  if (name == "d3" || name == "d3plus") {
    if (ctx.calibration.size() < 2) {
      throw UsageError("detector '" + std::string(name) + "' requires an InD-calibration manifest with >= 2 pairs");
    }
    auto cfg = ctx.d3;
    if (name == "d3plus") cfg.rectify.mode = rectify::Mode::Vra;
    return std::make_unique<D3Detector>(std::string(name), need_head(ctx, name), cfg, ctx.calibration);
  }
  if (name.starts_with("eps_")) {
    return std::make_unique<MetricDetector>(metrics::parse_metric_kind(name), need_head(ctx, name), ctx.d3);
  }
  throw UsageError("unknown detector '" + std::string(name) + "'");
}

std::vector<ScoreRecord> score_all(const Detector& detector, std::span<const PairedRecord> pairs) {
  std::vector<ScoreRecord> out;
  out.reserve(pairs.size());
  for (const auto& pair : pairs) out.push_back(detector.score(pair));
  return out;
}

void save_scores(std::span<const ScoreRecord> scores, std::string_view detector, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "id,detector,score,flags\n";
  for (const auto& s : scores) {
    out << s.id << ',' << detector << ',' << format_double(s.score) << ',' << flags_to_string(s.flags) << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

ScoreFile load_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("id,detector,score,flags", 0) != 0) {
    throw DataError(path.string() + ": malformed score file header");
  }
  ScoreFile file;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t pos; (pos = line.find(',', start)) != std::string::npos; start = pos + 1) {
      fields.push_back(line.substr(start, pos - start));
    }
    fields.push_back(line.substr(start));
    if (fields.size() != 4) throw DataError(path.string() + ": row " + std::to_string(row) + ": expected 4 columns");
    if (file.detector.empty()) {
      file.detector = fields[1];
    } else if (file.detector != fields[1]) {
      throw DataError(path.string() + ": row " + std::to_string(row) + ": mixed detectors in one score file");
    }
    ScoreRecord rec;
    rec.id = fields[0];
    const auto& s = fields[2];
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), rec.score);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(rec.score)) {
      throw DataError(path.string() + ": row " + std::to_string(row) + ": bad score '" + s + "'");
    }
    rec.flags = parse_flags(fields[3]);
    file.scores.push_back(std::move(rec));
    ++row;
  }
  return file;
}

void save_calibration(const CalibrationStats& stats, const D3Config& cfg, const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["kl_min"] = stats.kl_min;
  doc["kl_max"] = stats.kl_max;
  doc["l2_min"] = stats.l2_min;
  doc["l2_max"] = stats.l2_max;
  doc["kl_degenerate"] = stats.kl_degenerate;
  doc["l2_degenerate"] = stats.l2_degenerate;
  doc["count"] = stats.count;
  doc["config"]["lambda"] = cfg.lambda;
  doc["config"]["rectify"] = std::string(rectify::to_string(cfg.rectify.mode));
  doc["config"]["c"] = cfg.rectify.c;
  doc["config"]["alpha"] = cfg.rectify.alpha;
  doc["config"]["beta"] = cfg.rectify.beta;
  doc["config"]["removal_target"] = std::string(rectify::to_string(cfg.removal_target));
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

CalibrationStats load_calibration(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  CalibrationStats stats;
  try {
    const auto doc = nlohmann::json::parse(in);
    stats.kl_min = doc.at("kl_min").get<double>();
    stats.kl_max = doc.at("kl_max").get<double>();
    stats.l2_min = doc.at("l2_min").get<double>();
    stats.l2_max = doc.at("l2_max").get<double>();
    stats.kl_degenerate = doc.at("kl_degenerate").get<bool>();
    stats.l2_degenerate = doc.at("l2_degenerate").get<bool>();
    stats.count = doc.at("count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed calibration: " + e.what());
  }
  return stats;
}

}  // namespace d3ood::detectors

#pragma once

#include "d3ood/metrics.hpp"
#include "d3ood/rectify.hpp"
#include "d3ood/repr_store.hpp"
#include "d3ood/toydiff.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace d3ood::detectors {

// All detectors return scores where higher means "more in-distribution".

enum ScoreFlag : std::uint32_t {
  kNoFlags = 0,
  kKlDenominatorClamped = 1u << 0,
  kNormalizationDegenerate = 1u << 1,
};

/// "kl_denominator_clamped;normalization_degenerate" style, empty if none.
std::string flags_to_string(std::uint32_t flags);
std::uint32_t parse_flags(std::string_view text);

struct D3Components {
  double eps_kl_raw = 0.0;
  double eps_l2_raw = 0.0;
  double eps_kl_normalized = 0.0;
  double eps_l2_normalized = 0.0;
};

struct ScoreRecord {
  std::string id;
  double score = 0.0;
  std::optional<D3Components> components;
  std::uint32_t flags = kNoFlags;
};

// ---------------------------------------------------------------------------
// D³ / D³+

/// Normalized metrics are floored here before their reciprocals are taken.
inline constexpr double kScoreFloor = 1e-6;

/// Min/max of the raw metrics over the InD calibration pairs.
struct CalibrationStats {
  double kl_min = 0.0;
  double kl_max = 1.0;
  double l2_min = 0.0;
  double l2_max = 1.0;
  bool kl_degenerate = false;
  bool l2_degenerate = false;
  std::size_t count = 0;
};

struct D3Config {
  double lambda = 0.5;
  rectify::RectifyConfig rectify;
  rectify::RemovalTarget removal_target = rectify::RemovalTarget::Generation;

  void validate() const;
};

/// Features and logits of both sides of a pair after the configured removal.
struct PairOutputs {
  std::vector<double> input_features;
  std::vector<double> input_logits;
  std::vector<double> generation_features;
  std::vector<double> generation_logits;
};

PairOutputs pair_outputs(const PairedRecord& pair, const ClassifierHead& head, const D3Config& cfg);

struct RawDisparity {
  double eps_kl = 0.0;
  double eps_l2 = 0.0;
  bool kl_denominator_clamped = false;
};

RawDisparity raw_disparity(const PairedRecord& pair, const ClassifierHead& head, const D3Config& cfg);

/// Exact extremes of the raw metrics over the calibration set (which needs
/// at least two pairs). A zero range is flagged and that metric is then
/// left unnormalized.
CalibrationStats calibrate(std::span<const PairedRecord> ind_pairs, const ClassifierHead& head, const D3Config& cfg);

/// Affine min-max normalization; values outside the calibration range are
/// extrapolated, not clamped.
double normalize(double raw, double lo, double hi, bool degenerate) noexcept;

/// λ/ε̃_KL + (1−λ)/ε̃_ℓ2 with both normalized metrics floored at kScoreFloor.
double ensemble(double lambda, double kl_normalized, double l2_normalized) noexcept;

ScoreRecord d3_score(const PairedRecord& pair, const ClassifierHead& head, const D3Config& cfg,
                     const CalibrationStats& stats);

// ---------------------------------------------------------------------------
// Baselines

double msp_score(const RepresentationRecord& record);
double energy_score(const RepresentationRecord& record);
double mls_score(const RepresentationRecord& record);

/// Representation-only ODIN: max softmax(logits / T). Input perturbation
/// needs the full input-space model, so a non-zero `perturbation` is a
/// UsageError here.
double odin_score(const RepresentationRecord& record, double temperature, double perturbation = 0.0);

/// ODIN on a raw toy point: steps `perturbation` along the sign of the
/// input gradient of log max-softmax(f(x)/T), then rescores.
double odin_score(std::span<const double> point, const toy::ToyClassifier& clf, double temperature,
                  double perturbation);

enum class GradNormOrientation {
  ProbabilityToUniform,  // KL(g ‖ u)
  UniformToProbability,  // KL(u ‖ g)
};

std::string_view to_string(GradNormOrientation orientation) noexcept;
GradNormOrientation parse_gradnorm_orientation(std::string_view name);

/// ∂KL/∂W (m × C) for the record's features pushed through the head at
/// temperature T.
Eigen::MatrixXd gradnorm_gradient(const RepresentationRecord& record, const ClassifierHead& head, double temperature,
                                  GradNormOrientation orientation = GradNormOrientation::ProbabilityToUniform);

/// Entrywise ℓ1 norm of gradnorm_gradient.
double gradnorm_score(const RepresentationRecord& record, const ClassifierHead& head, double temperature,
                      GradNormOrientation orientation = GradNormOrientation::ProbabilityToUniform);

/// Unit-normalized InD features for nearest-neighbour search.
struct FeatureBank {
  Eigen::MatrixXd rows;  // count × m, unit ℓ2 rows
  std::size_t k = 1;
};

FeatureBank knn_fit(std::span<const std::vector<double>> bank_features, std::size_t k = 1);
FeatureBank knn_fit(std::span<const RepresentationRecord> bank, std::size_t k = 1);
/// −(k-th smallest ℓ2 distance) between the normalized query and the bank.
double knn_score(const RepresentationRecord& record, const FeatureBank& bank);

/// Residual-subspace model: features are shifted by `offset`, projected
/// onto the span of the `residual_dim` least-variance principal directions,
/// and the norm is scaled by `alpha` to form a virtual logit.
struct VimModel {
  Eigen::MatrixXd residual_basis;  // m × residual_dim, orthonormal columns
  Eigen::VectorXd offset;          // m
  double alpha = 1.0;
  bool rank_deficient = false;
};

/// Without a head the offset is the feature mean; with one it is the
/// point −pinv(Wᵀ)·b at which all logits vanish.
VimModel vim_fit(std::span<const std::vector<double>> bank_features, std::span<const std::vector<double>> bank_logits,
                 std::size_t residual_dim, const ClassifierHead* head = nullptr);
VimModel vim_fit(std::span<const RepresentationRecord> bank, std::size_t residual_dim,
                 const ClassifierHead* head = nullptr);

double vim_residual_norm(std::span<const double> features, const VimModel& model);
/// 1 − softmax([logits, alpha·residual])[C].
double vim_score(const RepresentationRecord& record, const VimModel& model);

enum class Decision { InD, OoD };

/// InD iff score > threshold (a score equal to the threshold is OoD).
Decision decide(double score, double threshold) noexcept;

// ---------------------------------------------------------------------------
// Uniform detector interface

class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::string name() const = 0;
  virtual ScoreRecord score(const PairedRecord& pair) const = 0;
};

/// What the named detectors may need. Spans and pointers are non-owning and
/// must outlive make_detector; fitted state (calibration, bank, ViM model)
/// is copied into the detector.
struct DetectorContext {
  const ClassifierHead* head = nullptr;
  std::span<const PairedRecord> calibration;
  std::span<const RepresentationRecord> bank;
  D3Config d3;
  double temperature = 1.0;
  double odin_temperature = 1000.0;
  GradNormOrientation gradnorm_orientation = GradNormOrientation::ProbabilityToUniform;
  std::size_t knn_k = 1;
  std::size_t vim_residual_dim = 0;  // 0 means m / 2
};

/// Names: msp, odin, energy, mls, gradnorm, knn, vim, d3, d3plus, and the
/// single-metric ablations eps_kl, eps_l2, eps_kl_alt, eps_cos. d3 uses
/// ctx.d3 as given; d3plus forces VRA clipping. The metric detectors use
/// ctx.d3's removal wiring and return the negated distance (cosine as is).
/// Missing context is a UsageError naming what is needed.
std::unique_ptr<Detector> make_detector(std::string_view name, const DetectorContext& ctx);

std::vector<std::string> detector_names();
bool needs_calibration(std::string_view name);
bool needs_bank(std::string_view name);
bool needs_head(std::string_view name);

std::vector<ScoreRecord> score_all(const Detector& detector, std::span<const PairedRecord> pairs);

/// Score file: header "id,detector,score,flags", one row per record.
void save_scores(std::span<const ScoreRecord> scores, std::string_view detector, const std::filesystem::path& path);

struct ScoreFile {
  std::string detector;
  std::vector<ScoreRecord> scores;
};
ScoreFile load_scores(const std::filesystem::path& path);

void save_calibration(const CalibrationStats& stats, const D3Config& cfg, const std::filesystem::path& path);
CalibrationStats load_calibration(const std::filesystem::path& path);

}  // namespace d3ood::detectors

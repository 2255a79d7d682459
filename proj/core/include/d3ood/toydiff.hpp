#pragma once

#include "d3ood/repr_store.hpp"
#include "d3ood/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace d3ood::toy {

using Point = std::vector<double>;

// ---------------------------------------------------------------------------
// Gaussian-mixture data

struct GaussianComponent {
  double weight = 1.0;
  Point mean;
  double variance = 1.0;  // isotropic
};

struct ClassMixture {
  double prior = 1.0;
  std::vector<GaussianComponent> components;
};

/// Class-structured mixture of isotropic Gaussians.
struct GmmSpec {
  std::vector<ClassMixture> classes;

  std::size_t dim() const;
  std::size_t num_classes() const noexcept { return classes.size(); }
  /// Throws UsageError on non-normalized weights/priors, non-positive
  /// variances or inconsistent dimensions.
  void validate() const;
};

/// d = 2, three classes of two components each on a ring of radius 2.5,
/// component standard deviation 0.5. Class c owns hexagon vertices 2c and 2c+1.
GmmSpec default_ind_spec();
/// The InD template with every mean shifted by `shift` and every variance
/// multiplied by `variance_scale`.
GmmSpec shifted_spec(const GmmSpec& spec, std::span<const double> shift, double variance_scale);
/// default_ind_spec() shifted by (5, 5) (about 14 InD standard deviations)
/// with variances inflated by 1.5.
GmmSpec default_ood_spec();

struct LabeledPoints {
  std::vector<Point> points;
  std::vector<int> labels;
};

/// Draws n points; point i uses its own stream (seed, split, i).
LabeledPoints sample_gmm(const GmmSpec& spec, std::size_t n, std::uint64_t seed, std::uint32_t split);

// ---------------------------------------------------------------------------
// Diffusion

/// Linear beta schedule with its cumulative products. Time steps run
/// 1..T; alpha_bar(0) == 1 denotes clean data.
struct DiffusionSchedule {
  std::vector<double> beta;
  std::vector<double> alpha_bar_values;

  int T() const noexcept { return static_cast<int>(beta.size()); }
  double alpha_bar(int t) const;
  double beta_at(int t) const;
};

DiffusionSchedule make_schedule(int T, double beta_start, double beta_end);

/// Draw from q(x_t | x_0) = N(√ᾱ_t x0, (1 − ᾱ_t) I). t == 0 returns x0.
Point forward_marginal_sample(std::span<const double> x0, int t, const DiffusionSchedule& schedule,
                              RngStream& rng);

/// log p_t(x) of the diffused mixture, optionally restricted to one class
/// (then the class-conditional density, not the joint).
double gmm_log_density(std::span<const double> x, int t, const GmmSpec& spec, const DiffusionSchedule& schedule,
                       std::optional<int> class_condition = std::nullopt);

/// ∇ₓ log p_t(x), exact for the diffused mixture.
Point gmm_score(std::span<const double> x, int t, const GmmSpec& spec, const DiffusionSchedule& schedule,
                std::optional<int> class_condition = std::nullopt);

/// ∇ₓ log p_t(y | x) = ∇ log p_t(x | y) − ∇ log p_t(x).
Point class_log_posterior_gradient(std::span<const double> x, int t, const GmmSpec& spec,
                                   const DiffusionSchedule& schedule, int class_index);

/// p_t(y | x) for every class.
std::vector<double> class_posterior(std::span<const double> x, int t, const GmmSpec& spec,
                                    const DiffusionSchedule& schedule);

enum class Sampler { Ancestral, Ddim };

std::string_view to_string(Sampler sampler) noexcept;
Sampler parse_sampler(std::string_view name);

/// Classifier guidance; scale 0 (or no class) is unconditional sampling.
struct Guidance {
  double scale = 0.0;
  std::optional<int> class_index;

  bool active() const noexcept { return class_index.has_value(); }
};

struct ReverseConfig {
  Sampler sampler = Sampler::Ddim;
  Guidance guidance;
  int t_start = -1;  // -1 means T
};

/// Stream coordinates of one reconstruction. Forward noise uses step 0 and
/// ancestral reverse step t uses step t.
struct SampleKey {
  std::uint64_t seed = 0;
  std::uint32_t split = 0;
  std::uint32_t index = 0;
};

/// Noises x_input to t_start with the closed-form marginal, then runs the
/// reverse process back to t = 0 driven by the (guided) analytic score.
Point reverse_sample(std::span<const double> x_input, const GmmSpec& spec, const DiffusionSchedule& schedule,
                     const ReverseConfig& cfg, const SampleKey& key);

// ---------------------------------------------------------------------------
// Classifier under protection

/// Radial-basis feature map followed by a linear softmax head.
struct ToyClassifier {
  Eigen::MatrixXd centers;  // n_c × d
  double bandwidth = 1.0;
  ClassifierHead head;

  std::size_t num_features() const noexcept { return static_cast<std::size_t>(centers.rows()); }
  std::size_t input_dim() const noexcept { return static_cast<std::size_t>(centers.cols()); }

  /// φ_k(x) = exp(−‖x − c_k‖² / (2·bandwidth²)); equals 1 at a center.
  std::vector<double> features(std::span<const double> x) const;
  /// ∂φ/∂x, n_c × d.
  Eigen::MatrixXd feature_jacobian(std::span<const double> x) const;
  std::vector<double> logits(std::span<const double> x) const;
  int predict(std::span<const double> x) const;
};

struct TrainConfig {
  int steps = 1500;
  double learning_rate = 2.0;
  double l2 = 1e-4;
  std::size_t n_centers = 24;
  double bandwidth = 1.0;
  std::uint64_t seed = 0;
};

/// Full-batch gradient descent on the softmax cross-entropy of a linear
/// head over fixed radial-basis features. Centers are a seeded sample of
/// the training points. Throws NumericalError if the loss diverges.
ToyClassifier train_toy_classifier(const LabeledPoints& data, std::size_t num_classes, const TrainConfig& cfg);

/// Mean softmax cross-entropy of the classifier on the data.
double cross_entropy(const ToyClassifier& clf, const LabeledPoints& data);
double accuracy(const ToyClassifier& clf, const LabeledPoints& data);

RepresentationRecord embed(std::span<const double> point, const ToyClassifier& clf, std::string id = {});
std::vector<RepresentationRecord> embed_batch(std::span<const Point> points, const ToyClassifier& clf,
                                              std::string_view id_prefix);

void save_classifier(const ToyClassifier& clf, const std::filesystem::path& path);
ToyClassifier load_classifier(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Benchmark generation

struct SamplerConfig {
  Sampler sampler = Sampler::Ddim;
  /// Guidance scale toward the classifier's predicted class; 0 = unconditional.
  double guidance_scale = 1.0;
  int t_start = -1;  // -1 means T
};

/// One paired split: raw points, their reconstructions and the embedded pairs.
struct PairedSplit {
  std::string name;
  DatasetRole role = DatasetRole::InDTest;
  std::vector<Point> points;
  std::vector<Point> generations;
  std::vector<PairedRecord> pairs;
};

struct Benchmark {
  PairedSplit calibration;
  PairedSplit ind_test;
  PairedSplit ood_test;
  std::vector<RepresentationRecord> bank;
};

/// Stream split ids used by the generators.
inline constexpr std::uint32_t kSplitTrain = 0;
inline constexpr std::uint32_t kSplitCalibration = 1;
inline constexpr std::uint32_t kSplitIndTest = 2;
inline constexpr std::uint32_t kSplitOodTest = 3;
inline constexpr std::uint32_t kSplitBank = 4;

/// Samples n points for each paired split (InD calibration, InD test, OoD
/// test) and n_bank InD points for the feature bank, reconstructs every
/// paired point through the diffusion model trained on `spec_in`, and embeds
/// both sides. Deterministic given seed.
Benchmark build_benchmark(const GmmSpec& spec_in, const GmmSpec& spec_out, const ToyClassifier& clf,
                          const DiffusionSchedule& schedule, const SamplerConfig& sampler, std::size_t n,
                          std::size_t n_bank, std::uint64_t seed);

/// Everything needed to regenerate a toy benchmark from scratch.
struct ToyPipelineConfig {
  GmmSpec ind = default_ind_spec();
  GmmSpec ood = default_ood_spec();
  int T = 24;
  double beta_start = 1e-4;
  double beta_end = 0.25;
  SamplerConfig sampler;
  std::size_t n_per_split = 500;
  std::size_t n_bank = 1000;
  std::size_t n_train = 1500;
  TrainConfig train;
  std::uint64_t seed = 0;
};

struct ToyPipeline {
  ToyClassifier classifier;
  DiffusionSchedule schedule;
  Benchmark benchmark;
};

/// Samples training data, trains the classifier and builds the benchmark.
ToyPipeline run_toy_pipeline(const ToyPipelineConfig& cfg);

/// Writes record files, labels, the head, the classifier and one manifest
/// per dataset into `dir`, plus a `benchmark.json` index. Returns manifests
/// in the order calibration, InD test, OoD test, feature bank.
std::vector<DatasetManifest> write_benchmark(const ToyPipeline& pipeline, const std::filesystem::path& dir,
                                             RecordFormat format);

}  // namespace d3ood::toy

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace d3ood {

/// Penultimate features and logits of one sample as produced by the
/// classifier under protection. Probabilities are never stored; they are
/// always recomputed from the logits.
struct RepresentationRecord {
  std::string id;
  std::vector<double> features;
  std::vector<double> logits;

  std::size_t feature_dim() const noexcept { return features.size(); }
  std::size_t num_classes() const noexcept { return logits.size(); }

  friend bool operator==(const RepresentationRecord&, const RepresentationRecord&) = default;
};

/// An input x together with its diffusion generation x̂.
struct PairedRecord {
  RepresentationRecord input;
  RepresentationRecord generation;
  std::optional<int> label;
};

/// Last linear layer of the classifier: logits = weightsᵀ·h + bias.
struct ClassifierHead {
  Eigen::MatrixXd weights;  // m × C
  Eigen::VectorXd bias;     // C

  std::size_t feature_dim() const noexcept { return static_cast<std::size_t>(weights.rows()); }
  std::size_t num_classes() const noexcept { return static_cast<std::size_t>(weights.cols()); }

  std::vector<double> logits(std::span<const double> features) const;
};

enum class RecordFormat { Text, BinaryV1 };

RecordFormat parse_record_format(std::string_view name);
std::string_view to_string(RecordFormat format) noexcept;
/// Text for ".csv"/".txt", binary-v1 for ".d3r"; anything else is a DataError.
RecordFormat format_from_extension(const std::filesystem::path& path);

/// Reads a record file. Every record is checked for finiteness and for a
/// shared (m, C); the offending row index is reported on failure.
std::vector<RepresentationRecord> load_records(const std::filesystem::path& path, RecordFormat format);
/// `empty_shape` gives the (m, C) written into the header when `records` is
/// empty; it defaults to (1, 2).
void save_records(std::span<const RepresentationRecord> records, const std::filesystem::path& path,
                  RecordFormat format, std::optional<std::pair<std::size_t, std::size_t>> empty_shape = {});

/// Reads only the header of a record file: (m, C, count).
struct RecordFileShape {
  std::size_t m = 0;
  std::size_t num_classes = 0;
  std::size_t count = 0;
};
RecordFileShape peek_shape(const std::filesystem::path& path, RecordFormat format);

/// Pairs inputs with generations. When the ids are aligned index-by-index
/// the input order is kept as-is; otherwise generations are matched by id,
/// and the first input whose id has no generation is reported.
std::vector<PairedRecord> pair_datasets(std::span<const RepresentationRecord> inputs,
                                        std::span<const RepresentationRecord> generations);

/// Checks that every record shares one (m, C) with m >= 1 and C >= 2.
void validate_dimensions(std::span<const RepresentationRecord> records);

void save_head(const ClassifierHead& head, const std::filesystem::path& path);
ClassifierHead load_head(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Manifests

enum class DatasetRole { InDCalibration, InDTest, OoDTest, FeatureBank };

std::string_view to_string(DatasetRole role) noexcept;
DatasetRole parse_dataset_role(std::string_view name);

/// Provenance of one dataset on disk. Paired datasets carry a second record
/// file for the generations; a feature bank only has `path`.
struct DatasetManifest {
  std::string name;
  DatasetRole role = DatasetRole::InDTest;
  std::filesystem::path path;
  std::optional<std::filesystem::path> generation_path;
  std::optional<std::filesystem::path> labels_path;
  RecordFormat format = RecordFormat::Text;
  std::size_t m = 0;
  std::size_t num_classes = 0;
  std::size_t count = 0;
  std::string checksum;
  std::string generation_checksum;
};

/// "fnv1a64:<16 hex digits>" over the raw file bytes.
std::string file_checksum(const std::filesystem::path& path);

/// Writes the manifest as JSON. Relative paths are stored as given.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
/// Reads a manifest and resolves relative record paths against its directory.
DatasetManifest load_manifest(const std::filesystem::path& path);
/// Re-checks count and checksum against the referenced files.
void verify_manifest(const DatasetManifest& manifest);

/// Loads the records referenced by a manifest (pairs them for paired roles).
std::vector<PairedRecord> load_paired(const DatasetManifest& manifest);
std::vector<RepresentationRecord> load_single(const DatasetManifest& manifest);

}  // namespace d3ood

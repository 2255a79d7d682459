#include "d3ood/error.hpp"
#include "d3ood/repr_store.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>

namespace d3ood {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_json(const json& doc, const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : base / p; }

}  // namespace

std::string_view to_string(DatasetRole role) noexcept {
  switch (role) {
    case DatasetRole::InDCalibration: return "InD-calibration";
    case DatasetRole::InDTest: return "InD-test";
    case DatasetRole::OoDTest: return "OoD-test";
    case DatasetRole::FeatureBank: return "feature-bank";
  }
  return "?";
}

DatasetRole parse_dataset_role(std::string_view name) {
  for (auto role : {DatasetRole::InDCalibration, DatasetRole::InDTest, DatasetRole::OoDTest,
                    DatasetRole::FeatureBank}) {
    if (to_string(role) == name) return role;
  }
  throw DataError("unknown dataset role '" + std::string(name) + "'");
}

std::string file_checksum(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::uint64_t hash = 0xcbf29ce484222325ull;
  char buf[1 << 14];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      hash ^= static_cast<unsigned char>(buf[i]);
      hash *= 0x100000001b3ull;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(hash));
  return std::string("fnv1a64:") + hex;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  json doc;
  doc["name"] = manifest.name;
  doc["role"] = std::string(to_string(manifest.role));
  doc["format"] = std::string(to_string(manifest.format));
  doc["path"] = manifest.path.generic_string();
  if (manifest.generation_path) doc["generation_path"] = manifest.generation_path->generic_string();
  if (manifest.labels_path) doc["labels_path"] = manifest.labels_path->generic_string();
  doc["m"] = manifest.m;
  doc["C"] = manifest.num_classes;
  doc["count"] = manifest.count;
  doc["checksum"] = manifest.checksum;
  if (!manifest.generation_checksum.empty()) doc["generation_checksum"] = manifest.generation_checksum;
  write_json(doc, path);
}

DatasetManifest load_manifest(const fs::path& path) {
  const auto doc = read_json(path);
  const auto base = path.parent_path();
  DatasetManifest manifest;
  try {
    manifest.name = doc.at("name").get<std::string>();
    manifest.role = parse_dataset_role(doc.at("role").get<std::string>());
    manifest.format = parse_record_format(doc.at("format").get<std::string>());
    manifest.path = resolve(base, doc.at("path").get<std::string>());
    if (doc.contains("generation_path")) {
      manifest.generation_path = resolve(base, doc["generation_path"].get<std::string>());
    }
    if (doc.contains("labels_path")) manifest.labels_path = resolve(base, doc["labels_path"].get<std::string>());
    manifest.m = doc.at("m").get<std::size_t>();
    manifest.num_classes = doc.at("C").get<std::size_t>();
    manifest.count = doc.at("count").get<std::size_t>();
    manifest.checksum = doc.at("checksum").get<std::string>();
    manifest.generation_checksum = doc.value("generation_checksum", std::string{});
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed manifest: " + e.what());
  } catch (const UsageError& e) {
    throw DataError(path.string() + ": malformed manifest: " + e.what());
  }
  return manifest;
}

void verify_manifest(const DatasetManifest& manifest) {
  const auto check = [&](const fs::path& file, const std::string& expected) {
    const auto shape = peek_shape(file, manifest.format);
    if (shape.count != manifest.count) {
      throw DataError(manifest.name + ": manifest count " + std::to_string(manifest.count) + " but " +
                      file.string() + " holds " + std::to_string(shape.count) + " records");
    }
    if (shape.count > 0 && (shape.m != manifest.m || shape.num_classes != manifest.num_classes)) {
      throw DataError(manifest.name + ": manifest dimensions disagree with " + file.string());
    }
    if (!expected.empty() && file_checksum(file) != expected) {
      throw DataError(manifest.name + ": checksum mismatch for " + file.string());
    }
  };
  check(manifest.path, manifest.checksum);
  if (manifest.generation_path) check(*manifest.generation_path, manifest.generation_checksum);
}

std::vector<RepresentationRecord> load_single(const DatasetManifest& manifest) {
  verify_manifest(manifest);
  return load_records(manifest.path, manifest.format);
}

std::vector<PairedRecord> load_paired(const DatasetManifest& manifest) {
  if (!manifest.generation_path) {
    throw DataError(manifest.name + ": manifest of role " + std::string(to_string(manifest.role)) +
                    " has no generation_path");
  }
  verify_manifest(manifest);
  const auto inputs = load_records(manifest.path, manifest.format);
  const auto generations = load_records(*manifest.generation_path, manifest.format);
  auto pairs = pair_datasets(inputs, generations);
  if (manifest.labels_path) {
    std::ifstream in(*manifest.labels_path);
    if (!in) throw DataError("cannot open " + manifest.labels_path->string());
    for (auto& pair : pairs) {
      int label = 0;
      if (!(in >> label)) throw DataError(manifest.labels_path->string() + ": fewer labels than records");
      pair.label = label;
    }
  }
  return pairs;
}

void save_head(const ClassifierHead& head, const fs::path& path) {
  json doc;
  doc["m"] = head.feature_dim();
  doc["C"] = head.num_classes();
  json rows = json::array();
  for (Eigen::Index i = 0; i < head.weights.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < head.weights.cols(); ++j) row.push_back(head.weights(i, j));
    rows.push_back(std::move(row));
  }
  doc["weights"] = std::move(rows);
  doc["bias"] = std::vector<double>(head.bias.data(), head.bias.data() + head.bias.size());
  write_json(doc, path);
}

ClassifierHead load_head(const fs::path& path) {
  const auto doc = read_json(path);
  ClassifierHead head;
  try {
    const auto m = doc.at("m").get<Eigen::Index>();
    const auto c = doc.at("C").get<Eigen::Index>();
    const auto& rows = doc.at("weights");
    if (static_cast<Eigen::Index>(rows.size()) != m) throw DataError(path.string() + ": weights row count != m");
    head.weights.resize(m, c);
    for (Eigen::Index i = 0; i < m; ++i) {
      if (static_cast<Eigen::Index>(rows[i].size()) != c) {
        throw DataError(path.string() + ": weights row " + std::to_string(i) + " length != C");
      }
      for (Eigen::Index j = 0; j < c; ++j) head.weights(i, j) = rows[i][j].get<double>();
    }
    const auto bias = doc.at("bias").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(bias.size()) != c) throw DataError(path.string() + ": bias length != C");
    head.bias = Eigen::Map<const Eigen::VectorXd>(bias.data(), c);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed head: " + e.what());
  }
  return head;
}

}  // namespace d3ood

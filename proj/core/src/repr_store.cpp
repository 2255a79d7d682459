#include "d3ood/repr_store.hpp"

#include "d3ood/error.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <tuple>
#include <unordered_map>

namespace d3ood {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'D', '3', 'R', '1'};
constexpr std::uint32_t kBinaryVersion = 1;

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double parse_value(std::string_view field, std::size_t row, const fs::path& path) {
  field = trim(field);
  double value = 0.0;
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw DataError(path.string() + ": row " + std::to_string(row) + ": cannot parse value '" +
                    std::string(field) + "'");
  }
  if (!std::isfinite(value)) {
    throw DataError(path.string() + ": row " + std::to_string(row) + ": non-finite value");
  }
  return value;
}

struct TextHeader {
  std::size_t m = 0;
  std::size_t num_classes = 0;
};

TextHeader parse_text_header(std::string_view line, const fs::path& path) {
  const auto fields = split_fields(trim(line));
  if (fields.empty() || trim(fields[0]) != "id") {
    throw DataError(path.string() + ": malformed header: first column must be 'id'");
  }
  TextHeader header;
  std::size_t i = 1;
  for (; i < fields.size() && trim(fields[i]).starts_with('f'); ++i) ++header.m;
  for (; i < fields.size() && trim(fields[i]).starts_with('l'); ++i) ++header.num_classes;
  if (i != fields.size() || header.m < 1 || header.num_classes < 2) {
    throw DataError(path.string() +
                    ": malformed header: expected id, >=1 'f*' feature columns, >=2 'l*' logit columns");
  }
  return header;
}

std::ifstream open_input(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

std::vector<RepresentationRecord> load_text(const fs::path& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": missing header");
  const auto header = parse_text_header(line, path);
  std::vector<RepresentationRecord> records;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto fields = split_fields(trim(line));
    if (fields.size() != 1 + header.m + header.num_classes) {
      throw DataError(path.string() + ": row " + std::to_string(row) + ": expected " +
                      std::to_string(1 + header.m + header.num_classes) + " columns, found " +
                      std::to_string(fields.size()));
    }
    RepresentationRecord rec;
    rec.id = std::string(trim(fields[0]));
    rec.features.reserve(header.m);
    rec.logits.reserve(header.num_classes);
    for (std::size_t j = 0; j < header.m; ++j) rec.features.push_back(parse_value(fields[1 + j], row, path));
    for (std::size_t j = 0; j < header.num_classes; ++j) {
      rec.logits.push_back(parse_value(fields[1 + header.m + j], row, path));
    }
    records.push_back(std::move(rec));
    ++row;
  }
  return records;
}

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    out.write(bytes.data(), sizeof(T));
  } else {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }
}

template <typename T>
T read_le(std::istream& in, const fs::path& path, std::string_view what) {
  std::array<char, sizeof(T)> bytes{};
  if (!in.read(bytes.data(), sizeof(T))) {
    throw DataError(path.string() + ": truncated binary file while reading " + std::string(what));
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

struct BinaryHeader {
  std::uint64_t m = 0;
  std::uint64_t num_classes = 0;
  std::uint64_t count = 0;
};

BinaryHeader read_binary_header(std::istream& in, const fs::path& path) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError(path.string() + ": malformed header: bad magic (expected D3R1)");
  }
  const auto version = read_le<std::uint32_t>(in, path, "version");
  if (version != kBinaryVersion) {
    throw DataError(path.string() + ": malformed header: unsupported version " + std::to_string(version));
  }
  BinaryHeader header;
  header.m = read_le<std::uint64_t>(in, path, "m");
  header.num_classes = read_le<std::uint64_t>(in, path, "C");
  header.count = read_le<std::uint64_t>(in, path, "count");
  if (header.m < 1 || header.num_classes < 2) {
    throw DataError(path.string() + ": malformed header: need m >= 1 and C >= 2");
  }
  return header;
}

std::vector<RepresentationRecord> load_binary(const fs::path& path) {
  auto in = open_input(path, std::ios::in | std::ios::binary);
  const auto header = read_binary_header(in, path);
  std::vector<RepresentationRecord> records(header.count);
  for (std::uint64_t i = 0; i < header.count; ++i) {
    const auto len = read_le<std::uint32_t>(in, path, "id length");
    records[i].id.resize(len);
    if (len > 0 && !in.read(records[i].id.data(), len)) {
      throw DataError(path.string() + ": row " + std::to_string(i) + ": truncated id");
    }
  }
  for (std::uint64_t i = 0; i < header.count; ++i) {
    auto& rec = records[i];
    rec.features.resize(header.m);
    rec.logits.resize(header.num_classes);
    for (auto& v : rec.features) v = read_le<double>(in, path, "payload");
    for (auto& v : rec.logits) v = read_le<double>(in, path, "payload");
    const auto finite = [](double v) { return std::isfinite(v); };
    if (!std::all_of(rec.features.begin(), rec.features.end(), finite) ||
        !std::all_of(rec.logits.begin(), rec.logits.end(), finite)) {
      throw DataError(path.string() + ": row " + std::to_string(i) + ": non-finite value");
    }
  }
  return records;
}

std::ofstream open_output(const fs::path& path, std::ios::openmode mode) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

std::pair<std::size_t, std::size_t> common_shape(std::span<const RepresentationRecord> records) {
  if (records.empty()) return {0, 0};
  validate_dimensions(records);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto finite = [](double v) { return std::isfinite(v); };
    if (!std::ranges::all_of(records[i].features, finite) || !std::ranges::all_of(records[i].logits, finite)) {
      throw DataError("record " + std::to_string(i) + ": non-finite value");
    }
  }
  return {records.front().feature_dim(), records.front().num_classes()};
}

}  // namespace

std::vector<double> ClassifierHead::logits(std::span<const double> features) const {
  if (features.size() != feature_dim()) {
    throw DataError("feature dimension " + std::to_string(features.size()) + " does not match head (m=" +
                    std::to_string(feature_dim()) + ")");
  }
  const Eigen::Map<const Eigen::VectorXd> h(features.data(), static_cast<Eigen::Index>(features.size()));
  const Eigen::VectorXd z = weights.transpose() * h + bias;
  return {z.data(), z.data() + z.size()};
}

RecordFormat parse_record_format(std::string_view name) {
  if (name == "text") return RecordFormat::Text;
  if (name == "binary-v1" || name == "binary") return RecordFormat::BinaryV1;
  throw UsageError("unknown record format '" + std::string(name) + "' (expected text or binary-v1)");
}

std::string_view to_string(RecordFormat format) noexcept {
  return format == RecordFormat::Text ? "text" : "binary-v1";
}

RecordFormat format_from_extension(const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".csv" || ext == ".txt") return RecordFormat::Text;
  if (ext == ".d3r") return RecordFormat::BinaryV1;
  throw DataError("cannot infer record format from extension of " + path.string());
}

void validate_dimensions(std::span<const RepresentationRecord> records) {
  if (records.empty()) return;
  const auto m = records.front().feature_dim();
  const auto c = records.front().num_classes();
  if (m < 1 || c < 2) throw DataError("records need m >= 1 and C >= 2");
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].feature_dim() != m || records[i].num_classes() != c) {
      throw DataError("record " + std::to_string(i) + " ('" + records[i].id + "') has dimensions (" +
                      std::to_string(records[i].feature_dim()) + ", " + std::to_string(records[i].num_classes()) +
                      "), expected (" + std::to_string(m) + ", " + std::to_string(c) + ")");
    }
  }
}

std::vector<RepresentationRecord> load_records(const fs::path& path, RecordFormat format) {
  return format == RecordFormat::Text ? load_text(path) : load_binary(path);
}

void save_records(std::span<const RepresentationRecord> records, const fs::path& path, RecordFormat format,
                  std::optional<std::pair<std::size_t, std::size_t>> empty_shape) {
  auto [m, c] = common_shape(records);
  if (records.empty()) std::tie(m, c) = empty_shape.value_or(std::pair<std::size_t, std::size_t>{1, 2});
  if (m < 1 || c < 2) throw DataError("save_records: need m >= 1 and C >= 2");
  if (format == RecordFormat::Text) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].id.find_first_of(",\n\r") != std::string::npos) {
        throw DataError("record " + std::to_string(i) + ": id contains a delimiter");
      }
    }
    auto out = open_output(path, std::ios::out);
    out << "id";
    for (std::size_t j = 0; j < m; ++j) out << ",f" << j;
    for (std::size_t j = 0; j < c; ++j) out << ",l" << j;
    out << '\n';
    for (const auto& rec : records) {
      out << rec.id;
      for (double v : rec.features) out << ',' << format_double(v);
      for (double v : rec.logits) out << ',' << format_double(v);
      out << '\n';
    }
    if (!out) throw DataError("failed writing " + path.string());
    return;
  }
  auto out = open_output(path, std::ios::out | std::ios::binary);
  out.write(kMagic, 4);
  write_le<std::uint32_t>(out, kBinaryVersion);
  write_le<std::uint64_t>(out, m);
  write_le<std::uint64_t>(out, c);
  write_le<std::uint64_t>(out, records.size());
  for (const auto& rec : records) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(rec.id.size()));
    out.write(rec.id.data(), static_cast<std::streamsize>(rec.id.size()));
  }
  for (const auto& rec : records) {
    for (double v : rec.features) write_le<double>(out, v);
    for (double v : rec.logits) write_le<double>(out, v);
  }
  if (!out) throw DataError("failed writing " + path.string());
}

RecordFileShape peek_shape(const fs::path& path, RecordFormat format) {
  if (format == RecordFormat::BinaryV1) {
    auto in = open_input(path, std::ios::in | std::ios::binary);
    const auto header = read_binary_header(in, path);
    return {header.m, header.num_classes, header.count};
  }
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": missing header");
  const auto header = parse_text_header(line, path);
  std::size_t count = 0;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) ++count;
  }
  return {header.m, header.num_classes, count};
}

std::vector<PairedRecord> pair_datasets(std::span<const RepresentationRecord> inputs,
                                        std::span<const RepresentationRecord> generations) {
  if (inputs.size() != generations.size()) {
    throw DataError("pair_datasets: length mismatch (" + std::to_string(inputs.size()) + " inputs, " +
                    std::to_string(generations.size()) + " generations)");
  }
  const auto check_dims = [](const RepresentationRecord& a, const RepresentationRecord& b, std::size_t k) {
    if (a.feature_dim() != b.feature_dim() || a.num_classes() != b.num_classes()) {
      throw DataError("pair_datasets: dimension mismatch at index " + std::to_string(k));
    }
  };
  std::vector<PairedRecord> pairs;
  pairs.reserve(inputs.size());
  const bool aligned = std::equal(inputs.begin(), inputs.end(), generations.begin(),
                                  [](const auto& a, const auto& b) { return a.id == b.id; });
  if (aligned) {
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      check_dims(inputs[k], generations[k], k);
      pairs.push_back({inputs[k], generations[k], std::nullopt});
    }
    return pairs;
  }
  std::unordered_map<std::string_view, std::size_t> by_id;
  by_id.reserve(generations.size());
  for (std::size_t k = 0; k < generations.size(); ++k) {
    if (!by_id.emplace(generations[k].id, k).second) {
      throw DataError("pair_datasets: duplicate generation id '" + generations[k].id + "'");
    }
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto it = by_id.find(inputs[k].id);
    if (it == by_id.end()) {
      throw DataError("pair_datasets: id mismatch at index " + std::to_string(k) + " (input '" + inputs[k].id +
                      "' has no generation)");
    }
    check_dims(inputs[k], generations[it->second], k);
    pairs.push_back({inputs[k], generations[it->second], std::nullopt});
    by_id.erase(it);
  }
  return pairs;
}

}  // namespace d3ood

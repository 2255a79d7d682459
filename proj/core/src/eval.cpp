#include "d3ood/eval.hpp"

#include "d3ood/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

namespace d3ood::eval {

namespace {

void require_nonempty(std::span<const double> ind, std::span<const double> ood) {
  if (ind.empty() || ood.empty()) throw DataError("evaluation needs non-empty InD and OoD score lists");
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

/// Detectors in first-seen order and OoD datasets in first-seen order.
std::pair<std::vector<std::string>, std::vector<std::string>> table_axes(std::span<const EvalReport> reports) {
  std::vector<std::string> rows;
  std::vector<std::string> cols;
  for (const auto& r : reports) {
    if (std::find(rows.begin(), rows.end(), r.detector) == rows.end()) rows.push_back(r.detector);
    if (std::find(cols.begin(), cols.end(), r.ood_dataset) == cols.end()) cols.push_back(r.ood_dataset);
  }
  return {rows, cols};
}

const EvalReport* find_report(std::span<const EvalReport> reports, const std::string& det, const std::string& ood) {
  for (const auto& r : reports) {
    if (r.detector == det && r.ood_dataset == ood) return &r;
  }
  return nullptr;
}

}  // namespace

double auroc(std::span<const double> ind_scores, std::span<const double> ood_scores) {
  require_nonempty(ind_scores, ood_scores);
  std::vector<double> ind(ind_scores.begin(), ind_scores.end());
  std::vector<double> ood(ood_scores.begin(), ood_scores.end());
  std::sort(ind.begin(), ind.end());
  std::sort(ood.begin(), ood.end());
  // Count pairs with ind > ood and ties exactly in integers.
  std::uint64_t greater = 0;
  std::uint64_t ties = 0;
  std::size_t below = 0;  // ood values strictly less than the current ind value
  std::size_t upto = 0;   // ood values <= the current ind value
  for (double v : ind) {
    while (below < ood.size() && ood[below] < v) ++below;
    while (upto < ood.size() && ood[upto] <= v) ++upto;
    greater += below;
    ties += upto - below;
  }
  const double total = 2.0 * static_cast<double>(ind.size()) * static_cast<double>(ood.size());
  const std::uint64_t less = static_cast<std::uint64_t>(ind.size()) * ood.size() - greater - ties;
  // Evaluate from the smaller side so auroc(a, b) + auroc(b, a) rounds to 1.
  if (greater >= less) return 1.0 - static_cast<double>(2 * less + ties) / total;
  return static_cast<double>(2 * greater + ties) / total;
}

FprAtTpr fpr_at_tpr(std::span<const double> ind_scores, std::span<const double> ood_scores, double tpr_target) {
  require_nonempty(ind_scores, ood_scores);
  if (!(tpr_target > 0.0 && tpr_target <= 1.0)) throw UsageError("tpr target must lie in (0, 1]");
  std::vector<double> ind(ind_scores.begin(), ind_scores.end());
  std::sort(ind.begin(), ind.end(), std::greater<>());
  const auto n = ind.size();
  const auto reaches = [&](std::size_t k) { return static_cast<double>(k) / static_cast<double>(n) >= tpr_target; };
  std::size_t k = std::min<std::size_t>(n, static_cast<std::size_t>(std::ceil(tpr_target * static_cast<double>(n))));
  while (k > 1 && reaches(k - 1)) --k;
  while (k < n && !reaches(k)) ++k;
  // At most k-1 InD scores exceed the k-th largest, so the supremum of valid
  // thresholds is just below it.
  const double kth = ind[k - 1];
  FprAtTpr out;
  out.threshold_s = std::nextafter(kth, -std::numeric_limits<double>::infinity());
  const auto above = [&](std::span<const double> xs) {
    return static_cast<double>(std::count_if(xs.begin(), xs.end(), [&](double v) { return v > out.threshold_s; }));
  };
  out.tpr = above(ind_scores) / static_cast<double>(ind_scores.size());
  out.fpr = above(ood_scores) / static_cast<double>(ood_scores.size());
  return out;
}

EvalReport evaluate(std::string detector, std::string ood_dataset, std::span<const double> ind_scores,
                    std::span<const double> ood_scores) {
  EvalReport report;
  report.detector = std::move(detector);
  report.ood_dataset = std::move(ood_dataset);
  report.auroc = auroc(ind_scores, ood_scores);
  const auto fpr = fpr_at_tpr(ind_scores, ood_scores, 0.95);
  report.fpr_at_95tpr = fpr.fpr;
  report.threshold_s = fpr.threshold_s;
  report.n_ind = ind_scores.size();
  report.n_ood = ood_scores.size();
  return report;
}

std::vector<double> score_values(std::span<const detectors::ScoreRecord> scores) {
  std::vector<double> out;
  out.reserve(scores.size());
  for (const auto& s : scores) out.push_back(s.score);
  return out;
}

void write_report_csv(std::span<const EvalReport> reports, const std::filesystem::path& path) {
  const auto [rows, cols] = table_axes(reports);
  auto out = open_out(path);
  out << "detector";
  for (const auto& c : cols) out << ',' << c << "_fpr95," << c << "_auroc";
  out << ",average_fpr95,average_auroc\n";
  for (const auto& det : rows) {
    out << det;
    double fpr_sum = 0.0;
    double auroc_sum = 0.0;
    std::size_t n = 0;
    for (const auto& c : cols) {
      if (const auto* r = find_report(reports, det, c)) {
        out << ',' << fixed(r->fpr_at_95tpr, 6) << ',' << fixed(r->auroc, 6);
        fpr_sum += r->fpr_at_95tpr;
        auroc_sum += r->auroc;
        ++n;
      } else {
        out << ",,";
      }
    }
    if (n > 0) {
      out << ',' << fixed(fpr_sum / static_cast<double>(n), 6) << ',' << fixed(auroc_sum / static_cast<double>(n), 6);
    } else {
      out << ",,";
    }
    out << '\n';
  }
}

void write_report_json(std::span<const EvalReport> reports, const std::filesystem::path& path) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& r : reports) {
    doc.push_back({{"detector", r.detector},
                   {"ood_dataset", r.ood_dataset},
                   {"fpr_at_95tpr", r.fpr_at_95tpr},
                   {"auroc", r.auroc},
                   {"threshold_s", r.threshold_s},
                   {"n_ind", r.n_ind},
                   {"n_ood", r.n_ood}});
  }
  auto out = open_out(path);
  out << doc.dump(2) << '\n';
}

std::vector<EvalReport> read_report_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<EvalReport> reports;
  try {
    for (const auto& item : nlohmann::json::parse(in)) {
      EvalReport r;
      r.detector = item.at("detector").get<std::string>();
      r.ood_dataset = item.at("ood_dataset").get<std::string>();
      r.fpr_at_95tpr = item.at("fpr_at_95tpr").get<double>();
      r.auroc = item.at("auroc").get<double>();
      r.threshold_s = item.at("threshold_s").get<double>();
      r.n_ind = item.at("n_ind").get<std::size_t>();
      r.n_ood = item.at("n_ood").get<std::size_t>();
      reports.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed report: " + e.what());
  }
  return reports;
}

std::string render_table(std::span<const EvalReport> reports) {
  const auto [rows, cols] = table_axes(reports);
  std::ostringstream os;
  os << "| Method |";
  for (const auto& c : cols) os << ' ' << c << " FPR95 | " << c << " AUROC |";
  os << " Average FPR95 | Average AUROC |\n|---|";
  for (std::size_t i = 0; i < cols.size() + 1; ++i) os << "---|---|";
  os << '\n';
  for (const auto& det : rows) {
    os << "| " << det << " |";
    double fpr_sum = 0.0;
    double auroc_sum = 0.0;
    std::size_t n = 0;
    for (const auto& c : cols) {
      if (const auto* r = find_report(reports, det, c)) {
        os << ' ' << fixed(100.0 * r->fpr_at_95tpr, 2) << " | " << fixed(100.0 * r->auroc, 2) << " |";
        fpr_sum += r->fpr_at_95tpr;
        auroc_sum += r->auroc;
        ++n;
      } else {
        os << " - | - |";
      }
    }
    if (n > 0) {
      os << ' ' << fixed(100.0 * fpr_sum / static_cast<double>(n), 2) << " | "
         << fixed(100.0 * auroc_sum / static_cast<double>(n), 2) << " |\n";
    } else {
      os << " - | - |\n";
    }
  }
  return os.str();
}

}  // namespace d3ood::eval

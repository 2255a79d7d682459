#include "cli.hpp"

#include "d3ood/detectors.hpp"
#include "d3ood/error.hpp"
#include "d3ood/eval.hpp"
#include "d3ood/rectify.hpp"
#include "d3ood/repr_store.hpp"
#include "d3ood/toydiff.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace d3ood::cli {
namespace {

namespace fs = std::filesystem;

constexpr const char* kOutputRootEnv = "D3OOD_OUTPUT_ROOT";
constexpr const char* kRunConfigName = "run_config.toml";

fs::path default_out(const std::string& command) {
  const char* root = std::getenv(kOutputRootEnv);
  return (root != nullptr && *root != '\0' ? fs::path(root) : fs::path("d3ood-out")) / command;
}

fs::path resolve_out(const std::string& out, const std::string& command) {
  return out.empty() ? default_out(command) : fs::path(out);
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

// Toy pipeline knobs shared by gen-toy and ablate.
struct ToyOptions {
  std::uint64_t seed = 0;
  std::size_t n = 500;
  std::size_t n_bank = 1000;
  std::size_t n_train = 1500;
  int T = 24;
  double beta_start = 1e-4;
  double beta_end = 0.25;
  std::string sampler = "ddim";
  double guidance_scale = 1.0;
  int t_start = -1;
  int train_steps = 1500;
  double learning_rate = 2.0;
  std::size_t n_centers = 24;
  double bandwidth = 1.0;
  bool quick = false;

  void add_to(CLI::App* app) {
    app->add_option("--seed", seed, "Seed for every random draw")->capture_default_str();
    app->add_option("--n", n, "Samples per paired split")->capture_default_str();
    app->add_option("--n-bank", n_bank, "Feature-bank size")->capture_default_str();
    app->add_option("--n-train", n_train, "Classifier training points")->capture_default_str();
    app->add_option("--T", T, "Diffusion steps")->capture_default_str();
    app->add_option("--beta-start", beta_start)->capture_default_str();
    app->add_option("--beta-end", beta_end)->capture_default_str();
    app->add_option("--sampler", sampler)->check(CLI::IsMember({"ddim", "ancestral"}))->capture_default_str();
    app->add_option("--guidance-scale", guidance_scale, "0 = unconditional")->capture_default_str();
    app->add_option("--t-start", t_start, "Noise level of the corruption, -1 = T")->capture_default_str();
    app->add_option("--train-steps", train_steps)->capture_default_str();
    app->add_option("--learning-rate", learning_rate)->capture_default_str();
    app->add_option("--n-centers", n_centers)->capture_default_str();
    app->add_option("--bandwidth", bandwidth)->capture_default_str();
    app->add_flag("--quick", quick, "n=10, n-bank=50, n-train=300");
  }

  toy::ToyPipelineConfig config() const {
    toy::ToyPipelineConfig cfg;
    cfg.seed = seed;
    cfg.n_per_split = quick ? 10 : n;
    cfg.n_bank = quick ? 50 : n_bank;
    cfg.n_train = quick ? 300 : n_train;
    cfg.T = T;
    cfg.beta_start = beta_start;
    cfg.beta_end = beta_end;
    cfg.sampler.sampler = toy::parse_sampler(sampler);
    cfg.sampler.guidance_scale = guidance_scale;
    cfg.sampler.t_start = t_start;
    cfg.train.steps = train_steps;
    cfg.train.learning_rate = learning_rate;
    cfg.train.n_centers = n_centers;
    cfg.train.bandwidth = bandwidth;
    cfg.train.seed = seed;
    return cfg;
  }
};

// D³ knobs shared by score and calibrate.
struct D3Options {
  double lambda = 0.5;
  std::string rectify = "react";
  std::string clip_levels = "auto";
  double clip_c = 0.1;
  double vra_alpha = 0.1;
  double vra_beta = 0.5;
  std::string removal_target = "generation";

  void add_to(CLI::App* app) {
    app->add_option("--lambda", lambda, "Ensemble weight of the KL term")->capture_default_str();
    app->add_option("--rectify", rectify)->check(CLI::IsMember({"none", "react", "vra"}))->capture_default_str();
    app->add_option("--clip-levels", clip_levels,
                    "fixed: use --clip-c/--vra-alpha/--vra-beta; bank: feature-bank percentiles; "
                    "auto: bank when a feature bank is given")
        ->check(CLI::IsMember({"auto", "fixed", "bank"}))
        ->capture_default_str();
    app->add_option("--clip-c", clip_c)->capture_default_str();
    app->add_option("--vra-alpha", vra_alpha)->capture_default_str();
    app->add_option("--vra-beta", vra_beta)->capture_default_str();
    app->add_option("--removal-target", removal_target)
        ->check(CLI::IsMember({"generation", "input", "both", "none"}))
        ->capture_default_str();
  }

  detectors::D3Config config(std::span<const RepresentationRecord> bank) const {
    detectors::D3Config cfg;
    cfg.lambda = lambda;
    cfg.removal_target = rectify::parse_removal_target(removal_target);
    const auto mode = rectify::parse_mode(rectify);
    const bool from_bank = clip_levels == "bank" || (clip_levels == "auto" && !bank.empty());
    if (from_bank) {
      if (bank.empty()) throw UsageError("--clip-levels bank requires a feature-bank manifest");
      cfg.rectify = rectify::percentile_clip_levels(bank, mode);
    } else {
      cfg.rectify.mode = mode;
      cfg.rectify.c = clip_c;
      cfg.rectify.alpha = vra_alpha;
      cfg.rectify.beta = vra_beta;
    }
    cfg.validate();
    return cfg;
  }
};

// Dataset inputs: either a gen-toy directory or explicit manifests.
struct Inputs {
  std::string benchmark;
  std::string calibration;
  std::string bank;
  std::string head;
  std::vector<std::string> datasets;

  void add_to(CLI::App* app, bool with_datasets) {
    app->add_option("--benchmark", benchmark, "Directory written by gen-toy");
    app->add_option("--calibration", calibration, "InD-calibration manifest");
    app->add_option("--bank", bank, "Feature-bank manifest");
    app->add_option("--head", head, "Classifier head (JSON)");
    if (with_datasets) app->add_option("--dataset", datasets, "Manifest of a dataset to score (repeatable)");
  }
};

struct LoadedInputs {
  std::optional<ClassifierHead> head;
  std::vector<PairedRecord> calibration;
  std::vector<RepresentationRecord> bank;
  std::vector<std::pair<std::string, std::vector<PairedRecord>>> datasets;
};

DatasetManifest checked_manifest(const fs::path& path, std::optional<DatasetRole> role) {
  auto mf = load_manifest(path);
  if (role && mf.role != *role) {
    throw DataError(path.string() + ": expected a " + std::string(to_string(*role)) + " manifest, found " +
                    std::string(to_string(mf.role)));
  }
  verify_manifest(mf);
  return mf;
}

LoadedInputs load_inputs(const Inputs& in) {
  fs::path calibration = in.calibration;
  fs::path bank = in.bank;
  fs::path head = in.head;
  std::vector<fs::path> datasets(in.datasets.begin(), in.datasets.end());

  if (!in.benchmark.empty()) {
    const fs::path dir = in.benchmark;
    std::ifstream f(dir / "benchmark.json");
    if (!f) throw DataError("cannot read " + (dir / "benchmark.json").string());
    nlohmann::json index;
    try {
      f >> index;
    } catch (const nlohmann::json::exception& e) {
      throw DataError((dir / "benchmark.json").string() + ": " + e.what());
    }
    if (head.empty()) head = dir / index.at("head").get<std::string>();
    const bool explicit_datasets = !datasets.empty();
    for (const auto& name : index.at("manifests")) {
      const fs::path p = dir / name.get<std::string>();
      const auto role = load_manifest(p).role;
      if (role == DatasetRole::InDCalibration && calibration.empty()) calibration = p;
      if (role == DatasetRole::FeatureBank && bank.empty()) bank = p;
      if ((role == DatasetRole::InDTest || role == DatasetRole::OoDTest) && !explicit_datasets) datasets.push_back(p);
    }
  }

  LoadedInputs out;
  if (!head.empty()) out.head = load_head(head);
  if (!calibration.empty()) out.calibration = load_paired(checked_manifest(calibration, DatasetRole::InDCalibration));
  if (!bank.empty()) out.bank = load_single(checked_manifest(bank, DatasetRole::FeatureBank));
  for (const auto& p : datasets) {
    auto mf = checked_manifest(p, std::nullopt);
    if (mf.role == DatasetRole::FeatureBank) throw UsageError(p.string() + ": a feature bank has no pairs to score");
    out.datasets.emplace_back(mf.name, load_paired(mf));
  }
  return out;
}

// The invoked command's options, as a section that --config reads back.
void echo_config(const CLI::App& cmd, const fs::path& dir) {
  make_dirs(dir);
  write_text(dir / kRunConfigName, "[" + cmd.get_name() + "]\n" + cmd.config_to_str(true, false));
}

// ---------------------------------------------------------------------------

struct GenToy {
  ToyOptions toy;
  std::string out;
  std::string format = "text";

  int run(const CLI::App& cmd) const {
    const auto dir = resolve_out(out, "gen-toy");
    echo_config(cmd, dir);
    const auto pipeline = toy::run_toy_pipeline(toy.config());
    const auto manifests = toy::write_benchmark(pipeline, dir, parse_record_format(format));
    for (const auto& mf : manifests) {
      std::cout << to_string(mf.role) << ' ' << mf.name << ' ' << mf.count << ' ' << mf.checksum << '\n';
    }
    return 0;
  }
};

struct Score {
  Inputs inputs;
  D3Options d3;
  std::vector<std::string> detectors{"d3"};
  std::string stats;
  double temperature = 1.0;
  double odin_temperature = 1000.0;
  std::string gradnorm_orientation = "p-to-u";
  std::size_t knn_k = 1;
  std::size_t vim_dim = 0;
  std::string out;

  int run(const CLI::App& cmd) const {
    for (const auto& name : detectors) {
      const auto known = detectors::detector_names();
      if (std::find(known.begin(), known.end(), name) == known.end()) {
        throw UsageError("unknown detector '" + name + "'");
      }
    }
    const auto dir = resolve_out(out, "score");
    echo_config(cmd, dir);
    const auto data = load_inputs(inputs);
    if (data.datasets.empty()) throw UsageError("no datasets to score (use --benchmark or --dataset)");

    std::optional<detectors::CalibrationStats> fixed_stats;
    if (!stats.empty()) fixed_stats = detectors::load_calibration(stats);

    detectors::DetectorContext ctx;
    ctx.head = data.head ? &*data.head : nullptr;
    ctx.calibration = data.calibration;
    ctx.bank = data.bank;
    ctx.d3 = d3.config(data.bank);
    ctx.temperature = temperature;
    ctx.odin_temperature = odin_temperature;
    ctx.gradnorm_orientation = detectors::parse_gradnorm_orientation(gradnorm_orientation);
    ctx.knn_k = knn_k;
    ctx.vim_residual_dim = vim_dim;

    for (const auto& name : detectors) {
      const bool d3_family = name == "d3" || name == "d3plus";
      if (detectors::needs_calibration(name) && data.calibration.empty() && !(d3_family && fixed_stats)) {
        throw UsageError("detector '" + name + "' requires an InD-calibration manifest (--calibration)");
      }
      if (detectors::needs_bank(name) && data.bank.empty()) {
        throw UsageError("detector '" + name + "' requires a feature-bank manifest (--bank)");
      }
      if (detectors::needs_head(name) && !data.head) {
        throw UsageError("detector '" + name + "' requires the classifier head (--head)");
      }

      std::unique_ptr<detectors::Detector> det;
      detectors::D3Config d3cfg = ctx.d3;
      if (name == "d3plus") d3cfg.rectify.mode = rectify::Mode::Vra;
      if (!(d3_family && fixed_stats)) det = detectors::make_detector(name, ctx);

      for (const auto& [dataset, pairs] : data.datasets) {
        std::vector<detectors::ScoreRecord> scores;
        if (det) {
          scores = detectors::score_all(*det, pairs);
        } else {
          scores.reserve(pairs.size());
          for (const auto& p : pairs) scores.push_back(detectors::d3_score(p, *data.head, d3cfg, *fixed_stats));
        }
        const auto path = dir / "scores" / name / (dataset + ".csv");
        make_dirs(path.parent_path());
        detectors::save_scores(scores, name, path);
        std::cout << path.string() << ' ' << scores.size() << '\n';
      }
    }
    return 0;
  }
};

struct Calibrate {
  Inputs inputs;
  D3Options d3;
  std::string out;

  int run(const CLI::App& cmd) const {
    const auto dir = resolve_out(out, "calibrate");
    echo_config(cmd, dir);
    const auto data = load_inputs(inputs);
    if (data.calibration.empty()) throw UsageError("calibrate requires an InD-calibration manifest (--calibration)");
    if (!data.head) throw UsageError("calibrate requires the classifier head (--head)");
    const auto cfg = d3.config(data.bank);
    const auto stats = detectors::calibrate(data.calibration, *data.head, cfg);
    detectors::save_calibration(stats, cfg, dir / "calibration.json");
    std::cout << (dir / "calibration.json").string() << '\n';
    return 0;
  }
};

struct Eval {
  std::string scores;
  std::string ind = "ind_test";
  std::vector<std::string> ood;
  std::vector<std::string> detectors;
  std::string out;

  int run(const CLI::App& cmd) const {
    fs::path root = scores;
    if (fs::is_directory(root / "scores")) root /= "scores";
    if (!fs::is_directory(root)) throw DataError("score directory not found: " + root.string());

    std::vector<std::string> names = detectors;
    if (names.empty()) {
      for (const auto& e : fs::directory_iterator(root)) {
        if (e.is_directory()) names.push_back(e.path().filename().string());
      }
      std::sort(names.begin(), names.end());
    }
    if (names.empty()) throw DataError("no detector directories under " + root.string());

    std::vector<std::string> oods = ood;
    if (oods.empty()) {
      for (const auto& e : fs::directory_iterator(root / names.front())) {
        if (e.path().extension() == ".csv" && e.path().stem() != ind) oods.push_back(e.path().stem().string());
      }
      std::sort(oods.begin(), oods.end());
    }
    if (oods.empty()) throw UsageError("no OoD score files found (use --ood)");

    const auto load = [&](const std::string& det, const std::string& dataset) {
      const auto path = root / det / (dataset + ".csv");
      if (!fs::exists(path)) throw DataError("missing score file " + path.string());
      auto file = detectors::load_scores(path);
      if (file.detector != det) {
        throw DataError("detector mismatch in " + path.string() + ": file holds '" + file.detector + "'");
      }
      return eval::score_values(file.scores);
    };

    std::vector<eval::EvalReport> reports;
    for (const auto& det : names) {
      const auto ind_scores = load(det, ind);
      for (const auto& o : oods) reports.push_back(eval::evaluate(det, o, ind_scores, load(det, o)));
    }

    const auto dir = resolve_out(out, "eval");
    echo_config(cmd, dir);
    eval::write_report_csv(reports, dir / "report.csv");
    eval::write_report_json(reports, dir / "report.json");
    const auto table = eval::render_table(reports);
    write_text(dir / "report.md", table);
    std::cout << table;
    return 0;
  }
};

struct Ablate {
  ToyOptions toy;
  std::vector<double> lambdas{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<int> time_steps{2, 6, 12, 24};
  std::vector<std::string> modes{"react"};
  std::vector<std::string> targets{"generation"};
  std::vector<std::string> conditional{"true"};
  std::string out;

  // An axis given alone is swept with the other held at its reference value
  // (λ = 0.5, T = --T); with neither given the full default grid runs.
  eval::SweepGrid grid(const CLI::App& cmd) const {
    eval::SweepGrid g;
    const bool lambdas_given = cmd.count("--lambdas") > 0;
    const bool steps_given = cmd.count("--time-steps") > 0;
    g.lambdas = steps_given && !lambdas_given ? std::vector<double>{0.5} : lambdas;
    g.time_steps = lambdas_given && !steps_given ? std::vector<int>{toy.T} : time_steps;
    g.modes.clear();
    for (const auto& m : modes) g.modes.push_back(rectify::parse_mode(m));
    g.targets.clear();
    for (const auto& t : targets) g.targets.push_back(rectify::parse_removal_target(t));
    g.conditional.clear();
    for (const auto& c : conditional) g.conditional.push_back(c == "true");
    g.validate();
    return g;
  }

  int run(const CLI::App& cmd) const {
    const auto g = grid(cmd);
    const auto dir = resolve_out(out, "ablate");
    echo_config(cmd, dir);
    const auto results = eval::sweep(g, toy.config());
    eval::write_sweep_csv(results, dir / "sweep.csv");

    // Each curve varies one axis with the others held at a reference value:
    // λ = 0.5 and T = 24 when present in the grid, otherwise the first value.
    const auto pick = [](const auto& values, auto preferred) {
      return std::find(values.begin(), values.end(), preferred) != values.end() ? preferred : values.front();
    };
    const double lambda_ref = pick(g.lambdas, 0.5);
    const int t_ref = pick(g.time_steps, 24);
    const auto matches = [&](const eval::SweepPoint& p) {
      return p.mode == g.modes.front() && p.target == g.targets.front() && p.conditional == g.conditional.front();
    };

    std::map<double, const eval::SweepResult*> by_lambda;
    std::map<int, const eval::SweepResult*> by_t;
    for (const auto& r : results) {
      if (!matches(r.point)) continue;
      if (r.point.T == t_ref) by_lambda.emplace(r.point.lambda, &r);
      if (r.point.lambda == lambda_ref) by_t.emplace(r.point.T, &r);
    }
    std::string lambda_csv = "lambda,auroc,fpr95\n";
    for (const auto& [l, r] : by_lambda) {
      lambda_csv += std::to_string(l) + ',' + std::to_string(r->report.auroc) + ',' +
                    std::to_string(r->report.fpr_at_95tpr) + '\n';
    }
    std::string t_csv = "T,auroc,fpr95\n";
    for (const auto& [t, r] : by_t) {
      t_csv += std::to_string(t) + ',' + std::to_string(r->report.auroc) + ',' +
               std::to_string(r->report.fpr_at_95tpr) + '\n';
    }
    write_text(dir / "plot_lambda.csv", lambda_csv);
    write_text(dir / "plot_T.csv", t_csv);
    std::cout << (dir / "sweep.csv").string() << ' ' << results.size() << " rows\n";
    return 0;
  }
};

struct Report {
  std::string report;
  std::string out;

  int run() const {
    const auto reports = eval::read_report_json(report);
    const auto table = eval::render_table(reports);
    if (!out.empty()) write_text(out, table);
    std::cout << table;
    return 0;
  }
};

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Diffusion-disparity OoD scoring and evaluation", "d3ood"};
  app.set_config("--config", "", "TOML/INI file with option values; command-line flags take precedence");
  app.require_subcommand(1);

  GenToy gen;
  auto* gen_cmd = app.add_subcommand("gen-toy", "Generate the analytic toy benchmark");
  gen.toy.add_to(gen_cmd);
  gen_cmd->add_option("--out", gen.out, std::string("Output directory (default $") + kOutputRootEnv + "/gen-toy)");
  gen_cmd->add_option("--format", gen.format)->check(CLI::IsMember({"text", "binary-v1"}))->capture_default_str();

  Score score;
  auto* score_cmd = app.add_subcommand("score", "Score datasets with one or more detectors");
  score.inputs.add_to(score_cmd, true);
  score.d3.add_to(score_cmd);
  score_cmd->add_option("--detector", score.detectors, "Comma-separated detector names")
      ->delimiter(',')
      ->capture_default_str();
  score_cmd->add_option("--stats", score.stats, "calibration.json from the calibrate command (d3, d3plus)");
  score_cmd->add_option("--temperature", score.temperature, "GradNorm temperature")->capture_default_str();
  score_cmd->add_option("--odin-temperature", score.odin_temperature)->capture_default_str();
  score_cmd->add_option("--gradnorm-orientation", score.gradnorm_orientation)
      ->check(CLI::IsMember({"p-to-u", "u-to-p"}))
      ->capture_default_str();
  score_cmd->add_option("--knn-k", score.knn_k)->capture_default_str();
  score_cmd->add_option("--vim-dim", score.vim_dim, "ViM residual dimension, 0 = m/2")->capture_default_str();
  score_cmd->add_option("--out", score.out);

  Calibrate calibrate;
  auto* cal_cmd = app.add_subcommand("calibrate", "Compute D3 min/max normalization statistics");
  calibrate.inputs.add_to(cal_cmd, false);
  calibrate.d3.add_to(cal_cmd);
  cal_cmd->add_option("--out", calibrate.out);

  Eval ev;
  auto* eval_cmd = app.add_subcommand("eval", "FPR@95 and AUROC tables from score files");
  eval_cmd->add_option("--scores", ev.scores, "Score directory (scores/<detector>/<dataset>.csv)")->required();
  eval_cmd->add_option("--ind", ev.ind, "InD dataset name")->capture_default_str();
  eval_cmd->add_option("--ood", ev.ood, "OoD dataset names (default: all others)")->delimiter(',');
  eval_cmd->add_option("--detector", ev.detectors, "Detectors to include (default: all)")->delimiter(',');
  eval_cmd->add_option("--out", ev.out);

  Ablate ablate;
  auto* abl_cmd = app.add_subcommand("ablate", "D3 sweep over lambda, T, rectification, removal target, guidance");
  ablate.toy.add_to(abl_cmd);
  abl_cmd->add_option("--lambdas", ablate.lambdas)->delimiter(',')->capture_default_str();
  abl_cmd->add_option("--time-steps", ablate.time_steps)->delimiter(',')->capture_default_str();
  abl_cmd->add_option("--modes", ablate.modes)
      ->delimiter(',')
      ->check(CLI::IsMember({"none", "react", "vra"}))
      ->capture_default_str();
  abl_cmd->add_option("--targets", ablate.targets)
      ->delimiter(',')
      ->check(CLI::IsMember({"generation", "input", "both", "none"}))
      ->capture_default_str();
  abl_cmd->add_option("--conditional", ablate.conditional)
      ->delimiter(',')
      ->check(CLI::IsMember({"true", "false"}))
      ->capture_default_str();
  abl_cmd->add_option("--out", ablate.out);

  Report report;
  auto* rep_cmd = app.add_subcommand("report", "Render a report.json as a markdown table");
  rep_cmd->add_option("--report", report.report, "report.json from eval")->required();
  rep_cmd->add_option("--out", report.out, "Also write the table here");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_code(ErrorKind::Usage);
  }

  try {
    if (*gen_cmd) return gen.run(*gen_cmd);
    if (*score_cmd) return score.run(*score_cmd);
    if (*cal_cmd) return calibrate.run(*cal_cmd);
    if (*eval_cmd) return ev.run(*eval_cmd);
    if (*abl_cmd) return ablate.run(*abl_cmd);
    if (*rep_cmd) return report.run();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << '\n';
    return exit_code(ErrorKind::Data);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(ErrorKind::Data);
  }
  return exit_code(ErrorKind::Usage);
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace d3ood::cli

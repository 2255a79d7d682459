#include "d3ood/error.hpp"
#include "d3ood/toydiff.hpp"

#include <json.hpp>

#include <fstream>

namespace d3ood::toy {

namespace fs = std::filesystem;

namespace {

PairedSplit make_split(std::string name, DatasetRole role, const GmmSpec& source, const GmmSpec& spec_in,
                       const ToyClassifier& clf, const DiffusionSchedule& schedule, const SamplerConfig& sampler,
                       std::size_t n, std::uint64_t seed, std::uint32_t split, std::string_view id_prefix) {
  PairedSplit out;
  out.name = std::move(name);
  out.role = role;
  auto drawn = sample_gmm(source, n, seed, split);
  out.points = std::move(drawn.points);
  out.generations.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ReverseConfig cfg;
    cfg.sampler = sampler.sampler;
    cfg.t_start = sampler.t_start;
    if (sampler.guidance_scale > 0.0) {
      cfg.guidance.scale = sampler.guidance_scale;
      cfg.guidance.class_index = clf.predict(out.points[i]);
    }
    out.generations.push_back(
        reverse_sample(out.points[i], spec_in, schedule, cfg, {seed, split, static_cast<std::uint32_t>(i)}));
  }
  const auto inputs = embed_batch(out.points, clf, id_prefix);
  const auto generations = embed_batch(out.generations, clf, id_prefix);
  out.pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.pairs.push_back({inputs[i], generations[i], drawn.labels[i]});
  return out;
}

std::string extension(RecordFormat format) { return format == RecordFormat::Text ? ".csv" : ".d3r"; }

DatasetManifest write_paired(const PairedSplit& split, const fs::path& dir, RecordFormat format, std::size_t m,
                             std::size_t c) {
  std::vector<RepresentationRecord> inputs;
  std::vector<RepresentationRecord> generations;
  inputs.reserve(split.pairs.size());
  generations.reserve(split.pairs.size());
  for (const auto& p : split.pairs) {
    inputs.push_back(p.input);
    generations.push_back(p.generation);
  }
  DatasetManifest manifest;
  manifest.name = split.name;
  manifest.role = split.role;
  manifest.format = format;
  manifest.path = split.name + ".inputs" + extension(format);
  manifest.generation_path = split.name + ".generations" + extension(format);
  manifest.labels_path = split.name + ".labels.txt";
  manifest.m = m;
  manifest.num_classes = c;
  manifest.count = split.pairs.size();
  save_records(inputs, dir / manifest.path, format, std::pair{m, c});
  save_records(generations, dir / *manifest.generation_path, format, std::pair{m, c});
  {
    std::ofstream labels(dir / *manifest.labels_path, std::ios::trunc);
    if (!labels) throw DataError("cannot write " + (dir / *manifest.labels_path).string());
    for (const auto& p : split.pairs) labels << p.label.value_or(-1) << '\n';
  }
  manifest.checksum = file_checksum(dir / manifest.path);
  manifest.generation_checksum = file_checksum(dir / *manifest.generation_path);
  save_manifest(manifest, dir / (split.name + ".manifest.json"));
  return manifest;
}

}  // namespace

Benchmark build_benchmark(const GmmSpec& spec_in, const GmmSpec& spec_out, const ToyClassifier& clf,
                          const DiffusionSchedule& schedule, const SamplerConfig& sampler, std::size_t n,
                          std::size_t n_bank, std::uint64_t seed) {
  spec_in.validate();
  spec_out.validate();
  if (spec_in.dim() != spec_out.dim()) throw UsageError("InD and OoD mixtures must share a dimension");
  if (spec_in.dim() != clf.input_dim()) throw UsageError("classifier input dimension does not match the mixtures");
  if (sampler.guidance_scale < 0.0) throw UsageError("guidance scale must be >= 0");

  Benchmark bench;
  bench.calibration = make_split("ind_calibration", DatasetRole::InDCalibration, spec_in, spec_in, clf, schedule,
                                 sampler, n, seed, kSplitCalibration, "cal-");
  bench.ind_test = make_split("ind_test", DatasetRole::InDTest, spec_in, spec_in, clf, schedule, sampler, n, seed,
                              kSplitIndTest, "ind-");
  bench.ood_test = make_split("ood_test", DatasetRole::OoDTest, spec_out, spec_in, clf, schedule, sampler, n, seed,
                              kSplitOodTest, "ood-");
  const auto bank_points = sample_gmm(spec_in, n_bank, seed, kSplitBank);
  bench.bank = embed_batch(bank_points.points, clf, "bank-");
  return bench;
}

ToyPipeline run_toy_pipeline(const ToyPipelineConfig& cfg) {
  cfg.ind.validate();
  ToyPipeline pipeline;
  const auto train = sample_gmm(cfg.ind, cfg.n_train, cfg.seed, kSplitTrain);
  auto train_cfg = cfg.train;
  train_cfg.seed = cfg.seed;
  pipeline.classifier = train_toy_classifier(train, cfg.ind.num_classes(), train_cfg);
  pipeline.schedule = make_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
  pipeline.benchmark = build_benchmark(cfg.ind, cfg.ood, pipeline.classifier, pipeline.schedule, cfg.sampler,
                                       cfg.n_per_split, cfg.n_bank, cfg.seed);
  return pipeline;
}

std::vector<DatasetManifest> write_benchmark(const ToyPipeline& pipeline, const fs::path& dir, RecordFormat format) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  const auto m = pipeline.classifier.num_features();
  const auto c = pipeline.classifier.head.num_classes();
  const auto& bench = pipeline.benchmark;

  std::vector<DatasetManifest> manifests;
  manifests.push_back(write_paired(bench.calibration, dir, format, m, c));
  manifests.push_back(write_paired(bench.ind_test, dir, format, m, c));
  manifests.push_back(write_paired(bench.ood_test, dir, format, m, c));

  DatasetManifest bank;
  bank.name = "feature_bank";
  bank.role = DatasetRole::FeatureBank;
  bank.format = format;
  bank.path = "feature_bank.records" + extension(format);
  bank.m = m;
  bank.num_classes = c;
  bank.count = bench.bank.size();
  save_records(bench.bank, dir / bank.path, format, std::pair{m, c});
  bank.checksum = file_checksum(dir / bank.path);
  save_manifest(bank, dir / "feature_bank.manifest.json");
  manifests.push_back(bank);

  save_head(pipeline.classifier.head, dir / "head.json");
  save_classifier(pipeline.classifier, dir / "classifier.json");

  nlohmann::json index;
  index["manifests"] = {"ind_calibration.manifest.json", "ind_test.manifest.json", "ood_test.manifest.json",
                        "feature_bank.manifest.json"};
  index["head"] = "head.json";
  index["classifier"] = "classifier.json";
  index["T"] = pipeline.schedule.T();
  std::ofstream out(dir / "benchmark.json", std::ios::trunc);
  if (!out) throw DataError("cannot write " + (dir / "benchmark.json").string());
  out << index.dump(2) << '\n';

  // Manifests returned with paths resolved against dir, as load_manifest does.
  for (auto& mf : manifests) {
    mf.path = dir / mf.path;
    if (mf.generation_path) mf.generation_path = dir / *mf.generation_path;
    if (mf.labels_path) mf.labels_path = dir / *mf.labels_path;
  }
  return manifests;
}

}  // namespace d3ood::toy

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "proxygap/dataset_io.hpp"
#include "proxygap/metrics.hpp"
#include "proxygap/pretrain.hpp"
#include "proxygap/probe.hpp"
#include "proxygap/svg_chart.hpp"

namespace proxygap {

constexpr const char* kHarnessVersion = "1.0.0";

struct ThetaVector {
  double b = 0, rho = 0, eta = 0, p = 0;
  int d = 1;
};

inline void to_json(nlohmann::json& j, const ThetaVector& t) {
  j = nlohmann::json{{"b", t.b}, {"rho", t.rho}, {"eta", t.eta}, {"p", t.p}, {"d", t.d}};
}

struct ScaleSpec {
  int64_t n_train = 50000;
  int64_t n_eval = 5000;  // val, test, and ood sizes
  int n_layers = 4;
  int width = 128;
  int pretrain_epochs = 12;
  int probe_epochs = 100;
};

inline ScaleSpec full_scale() { return ScaleSpec{}; }
inline ScaleSpec smoke_scale() { return ScaleSpec{8000, 1000, 2, 64, 4, 30}; }

inline void to_json(nlohmann::json& j, const ScaleSpec& s) {
  j = nlohmann::json{{"n_train", s.n_train},
                     {"n_eval", s.n_eval},
                     {"n_layers", s.n_layers},
                     {"width", s.width},
                     {"pretrain_epochs", s.pretrain_epochs},
                     {"probe_epochs", s.probe_epochs}};
}

struct ExperimentSpec {
  std::string name;  // primary | background_only | relevance_only | custom
  ThetaVector theta_a, theta_b;
  std::vector<uint64_t> seeds{42, 123, 456};
  std::string scale = "full";  // full | smoke
  ScaleSpec scale_spec;
  std::filesystem::path out_dir;
  int workers = 1;
};

inline ThetaVector primary_theta_a() { return {0.95, 0.10, 0.08, 0.95, 5}; }
inline ThetaVector primary_theta_b() { return {0.30, 0.95, 0.01, 0.35, 2}; }

// primary: the asymmetric pair; background_only: background coordinates kept,
// relevance pinned to (0.60, 0.03) on both sides; relevance_only: relevance
// coordinates kept, background pinned to (0.60, 0.65, 3) on both sides
inline ExperimentSpec make_experiment_spec(const std::string& name,
                                           const std::string& scale) {
  ExperimentSpec spec;
  spec.name = name;
  spec.scale = scale;
  if (scale == "full")
    spec.scale_spec = full_scale();
  else if (scale == "smoke")
    spec.scale_spec = smoke_scale();
  else
    throw std::invalid_argument("unknown scale: " + scale);

  if (name == "primary") {
    spec.theta_a = primary_theta_a();
    spec.theta_b = primary_theta_b();
  } else if (name == "background_only") {
    spec.theta_a = primary_theta_a();
    spec.theta_b = primary_theta_b();
    for (auto* t : {&spec.theta_a, &spec.theta_b}) {
      t->rho = 0.60;
      t->eta = 0.03;
    }
  } else if (name == "relevance_only") {
    spec.theta_a = primary_theta_a();
    spec.theta_b = primary_theta_b();
    for (auto* t : {&spec.theta_a, &spec.theta_b}) {
      t->b = 0.60;
      t->p = 0.65;
      t->d = 3;
    }
  } else if (name == "custom") {
    spec.theta_a = primary_theta_a();
    spec.theta_b = primary_theta_b();
  } else {
    throw std::invalid_argument("unknown experiment name: " + name);
  }
  return spec;
}

// custom experiment overrides: keys a.b, a.rho, ..., b.d patch individual
// theta coordinates on top of the primary pair
inline ExperimentSpec parse_custom_spec(const std::string& text, const std::string& scale) {
  ExperimentSpec spec = make_experiment_spec("custom", scale);
  for (const auto& [key, value] : parse_kv_text(text)) {
    ThetaVector* target = nullptr;
    std::string coord = key;
    if (key.rfind("a.", 0) == 0) {
      target = &spec.theta_a;
      coord = key.substr(2);
    } else if (key.rfind("b.", 0) == 0) {
      target = &spec.theta_b;
      coord = key.substr(2);
    } else {
      throw std::invalid_argument("custom spec: keys must start with a. or b.: " + key);
    }
    if (coord == "b") target->b = std::stod(value);
    else if (coord == "rho") target->rho = std::stod(value);
    else if (coord == "eta") target->eta = std::stod(value);
    else if (coord == "p") target->p = std::stod(value);
    else if (coord == "d") target->d = std::stoi(value);
    else throw std::invalid_argument("custom spec: unknown coordinate: " + key);
  }
  return spec;
}

inline void to_json(nlohmann::json& j, const ExperimentSpec& s) {
  j = nlohmann::json{{"name", s.name},       {"theta_a", s.theta_a},
                     {"theta_b", s.theta_b}, {"seeds", s.seeds},
                     {"scale", s.scale},     {"scale_spec", s.scale_spec},
                     {"out_dir", s.out_dir.string()}, {"workers", s.workers}};
}

// ----------------------------- derived configs -----------------------------

inline DatasetConfig dataset_config_for(const ExperimentSpec& spec, uint64_t run_seed,
                                        int dataset_index /* 0=A, 1=B */) {
  const ThetaVector& t = dataset_index == 0 ? spec.theta_a : spec.theta_b;
  DatasetConfig cfg;
  cfg.b = t.b;
  cfg.rho = t.rho;
  cfg.eta = t.eta;
  cfg.p = t.p;
  cfg.d = t.d;
  cfg.n_train = spec.scale_spec.n_train;
  cfg.n_val = spec.scale_spec.n_eval;
  cfg.n_test = spec.scale_spec.n_eval;
  cfg.n_ood = spec.scale_spec.n_eval;
  cfg.seed = derive_key(run_seed, "dataset", static_cast<uint64_t>(dataset_index));
  return cfg;
}

inline BackboneConfig backbone_config_for(const ExperimentSpec& spec) {
  BackboneConfig cfg;
  cfg.n_layers = spec.scale_spec.n_layers;
  cfg.width = spec.scale_spec.width;
  return cfg;
}

inline TrainConfig train_config_for(const ExperimentSpec& spec, uint64_t run_seed,
                                    int dataset_index) {
  TrainConfig cfg;
  cfg.epochs = spec.scale_spec.pretrain_epochs;
  cfg.seed = derive_key(run_seed, "pretrain", static_cast<uint64_t>(dataset_index));
  return cfg;
}

inline ProbeConfig probe_config_for(const ExperimentSpec& spec, uint64_t run_seed,
                                    int dataset_index) {
  ProbeConfig cfg;
  cfg.epochs = spec.scale_spec.probe_epochs;
  cfg.seed = derive_key(run_seed, "probe", static_cast<uint64_t>(dataset_index));
  return cfg;
}

// every named stream key one run derives, for the collision audit
inline std::vector<std::pair<std::string, uint64_t>> seed_derivation_audit(
    const ExperimentSpec& spec) {
  std::vector<std::pair<std::string, uint64_t>> keys;
  for (uint64_t run_seed : spec.seeds) {
    for (int di = 0; di < 2; ++di) {
      const std::string tag = di == 0 ? "A" : "B";
      const auto base = "seed" + std::to_string(run_seed) + "/" + tag + "/";
      const auto ds = dataset_config_for(spec, run_seed, di);
      keys.emplace_back(base + "dataset", ds.seed);
      keys.emplace_back(base + "train-split", split_key(ds, "train"));
      keys.emplace_back(base + "val-split", split_key(ds, "val"));
      keys.emplace_back(base + "test-split", split_key(ds, "test"));
      keys.emplace_back(base + "ood-split", split_key(ds, "ood"));
      keys.emplace_back(base + "ood-shift", derive_key(ds.seed, "ood-shift"));
      keys.emplace_back(base + "pretrain", train_config_for(spec, run_seed, di).seed);
      keys.emplace_back(base + "probe", probe_config_for(spec, run_seed, di).seed);
    }
  }
  return keys;
}

// ----------------------------- dataset cache -----------------------------

inline std::string dataset_cache_key(const DatasetConfig& cfg) {
  std::ostringstream os;
  os << std::setprecision(17) << "v" << kSplitFileVersion << "|b=" << cfg.b
     << "|rho=" << cfg.rho << "|eta=" << cfg.eta << "|p=" << cfg.p << "|d=" << cfg.d
     << "|ntr=" << cfg.n_train << "|nv=" << cfg.n_val << "|nte=" << cfg.n_test
     << "|no=" << cfg.n_ood << "|seed=" << cfg.seed;
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(os.str());
  return hex.str();
}

// generate-or-reuse keyed by the content hash of (theta, seed, sizes)
inline SplitSet load_or_generate_dataset(const std::filesystem::path& cache_root,
                                         const DatasetConfig& cfg) {
  const auto dir = cache_root / dataset_cache_key(cfg);
  const bool complete = std::filesystem::exists(dir / "train.bin") &&
                        std::filesystem::exists(dir / "val.bin") &&
                        std::filesystem::exists(dir / "test.bin") &&
                        std::filesystem::exists(dir / "ood.bin");
  if (complete) {
    SplitSet cached = read_split_set(dir);
    if (cached.config == cfg) return cached;
    // stale or colliding cache entry: fall through and regenerate
  }
  SplitSet fresh = gen_dataset(cfg);
  const auto tmp = dir.parent_path() / (dir.filename().string() + ".tmp");
  std::filesystem::remove_all(tmp);
  write_split_set(tmp, fresh);
  std::filesystem::remove_all(dir);
  std::filesystem::rename(tmp, dir);
  return fresh;
}

// ----------------------------- runner -----------------------------

struct CellOutcome {
  uint64_t run_seed = 0;
  int dataset_index = 0;  // 0=A, 1=B
  double proxy = 0;
  double main_test = 0, main_ood = 0;
  std::optional<double> diag_test, diag_ood;
  std::optional<std::string> diag_inapplicable_reason;
  double wall_seconds = 0;
  nlohmann::json paths;
};

struct RunManifest {
  nlohmann::json json;
  std::filesystem::path manifest_path;
  std::filesystem::path report_csv_path;
  std::filesystem::path report_json_path;
  ConfigReport report;
};

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline CellOutcome run_cell(const ExperimentSpec& spec, uint64_t run_seed,
                            int dataset_index, const std::filesystem::path& run_dir,
                            std::string& stage) {
  using clock = std::chrono::steady_clock;
  const auto cell_start = clock::now();
  const std::string tag = dataset_index == 0 ? "A" : "B";
  const auto cell_dir = run_dir / "cells" / ("seed" + std::to_string(run_seed) + "_" + tag);
  std::filesystem::create_directories(cell_dir);

  CellOutcome out;
  out.run_seed = run_seed;
  out.dataset_index = dataset_index;

  stage = "dataset";
  const DatasetConfig ds_cfg = dataset_config_for(spec, run_seed, dataset_index);
  const SplitSet splits = load_or_generate_dataset(run_dir / "datasets", ds_cfg);
  out.paths["dataset"] = (run_dir / "datasets" / dataset_cache_key(ds_cfg)).string();

  stage = "pretrain";
  const BackboneConfig bb_cfg = backbone_config_for(spec);
  const TrainConfig tr_cfg = train_config_for(spec, run_seed, dataset_index);
  const auto train_start = clock::now();
  auto pretrained = pretrain<float>(splits, bb_cfg, tr_cfg);
  const double train_wall =
      std::chrono::duration<double>(clock::now() - train_start).count();

  stage = "proxy";
  out.proxy = proxy_score(pretrained.trace, pretrained.params.count());

  stage = "persist-pretrain";
  const nlohmann::json provenance{{"run_seed", run_seed},
                                  {"dataset_tag", tag},
                                  {"dataset_seed", ds_cfg.seed},
                                  {"train_seed", tr_cfg.seed},
                                  {"probe_seed", probe_config_for(spec, run_seed, dataset_index).seed}};
  const auto record = make_run_record(ds_cfg, bb_cfg, tr_cfg, pretrained.trace, out.proxy,
                                      pretrained.params.count(), train_wall, provenance);
  write_text(cell_dir / "run_record.json", record.dump(2) + "\n");
  save_checkpoint(cell_dir / "checkpoint.bin", pretrained.params);
  out.paths["run_record"] = (cell_dir / "run_record.json").string();
  out.paths["checkpoint"] = (cell_dir / "checkpoint.bin").string();

  stage = "features";
  const auto features = extract_feature_set(pretrained.params, splits);

  stage = "probe-main";
  const ProbeConfig probe_cfg = probe_config_for(spec, run_seed, dataset_index);
  const auto main_run = run_main_protocol(features, probe_cfg);
  out.main_test = main_run.test_acc;
  out.main_ood = main_run.ood_acc;
  write_text(cell_dir / "probe_main.json",
             make_probe_record(main_run, probe_cfg).dump(2) + "\n");
  out.paths["probe_main"] = (cell_dir / "probe_main.json").string();

  stage = "probe-diag";
  try {
    const auto diag_run = run_diag_protocol(features, probe_cfg);
    out.diag_test = diag_run.test_acc;
    out.diag_ood = diag_run.ood_acc;
    write_text(cell_dir / "probe_diag.json",
               make_probe_record(diag_run, probe_cfg).dump(2) + "\n");
  } catch (const ProtocolInapplicable& e) {
    out.diag_inapplicable_reason = e.what();
    const nlohmann::json record{{"protocol", "diag"},
                                {"probe", probe_cfg},
                                {"applicable", false},
                                {"reason", e.what()},
                                {"seed", probe_cfg.seed}};
    write_text(cell_dir / "probe_diag.json", record.dump(2) + "\n");
  }
  out.paths["probe_diag"] = (cell_dir / "probe_diag.json").string();

  out.wall_seconds = std::chrono::duration<double>(clock::now() - cell_start).count();
  stage = "done";
  return out;
}

}  // namespace detail

// Runs the (dataset x seed) grid, aggregates the gap report, and persists
// CSV/JSON/charts plus a manifest. Cells are independent and executed by
// spec.workers threads; outputs are byte-identical for identical specs
// (timing fields, which live in the manifest and run records, excepted).
// on_cell, when set, is invoked under a lock as each cell completes.
inline RunManifest run_experiment(
    const ExperimentSpec& spec,
    const std::function<void(const CellOutcome&)>& on_cell = {}) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  if (spec.seeds.empty()) throw std::invalid_argument("run_experiment: no seeds");
  if (spec.name != "primary" && spec.name != "background_only" &&
      spec.name != "relevance_only" && spec.name != "custom")
    throw std::invalid_argument("run_experiment: unknown experiment name: " + spec.name);

  const auto& run_dir = spec.out_dir;
  std::filesystem::create_directories(run_dir);
  std::filesystem::create_directories(run_dir / "cells");
  std::filesystem::create_directories(run_dir / "datasets");
  std::filesystem::create_directories(run_dir / "charts");

  struct CellTask {
    uint64_t run_seed;
    int dataset_index;
  };
  std::vector<CellTask> tasks;
  for (uint64_t s : spec.seeds)
    for (int di = 0; di < 2; ++di) tasks.push_back({s, di});

  std::vector<CellOutcome> outcomes(tasks.size());
  std::vector<std::optional<std::string>> errors(tasks.size());
  std::vector<std::string> stages(tasks.size(), "pending");

  const int workers = std::max(1, std::min<int>(spec.workers,
                                                static_cast<int>(tasks.size())));
  std::atomic<size_t> next{0};
  std::mutex report_mutex;
  auto worker_fn = [&] {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= tasks.size()) break;
      try {
        outcomes[i] = detail::run_cell(spec, tasks[i].run_seed, tasks[i].dataset_index,
                                       run_dir, stages[i]);
        if (on_cell) {
          std::lock_guard<std::mutex> lock(report_mutex);
          on_cell(outcomes[i]);
        }
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  if (workers == 1) {
    worker_fn();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker_fn);
    for (auto& t : pool) t.join();
  }

  nlohmann::json cells_json = nlohmann::json::array();
  bool failed = false;
  for (size_t i = 0; i < tasks.size(); ++i) {
    nlohmann::json c{{"seed", tasks[i].run_seed},
                     {"dataset", tasks[i].dataset_index == 0 ? "A" : "B"},
                     {"stage", stages[i]}};
    if (errors[i]) {
      c["error"] = *errors[i];
      failed = true;
    } else {
      c["paths"] = outcomes[i].paths;
      c["wall_time_seconds"] = outcomes[i].wall_seconds;
    }
    cells_json.push_back(c);
  }

  RunManifest manifest;
  manifest.manifest_path = run_dir / "manifest.json";
  nlohmann::json mj{{"spec", spec},
                    {"harness_version", kHarnessVersion},
                    {"cells", cells_json},
                    {"created_unix", static_cast<int64_t>(std::time(nullptr))}};

  if (failed) {
    mj["status"] = "partial";
    manifest.json = mj;
    detail::write_text(manifest.manifest_path, mj.dump(2) + "\n");
    std::string summary;
    for (size_t i = 0; i < tasks.size(); ++i)
      if (errors[i])
        summary += "seed" + std::to_string(tasks[i].run_seed) +
                   (tasks[i].dataset_index == 0 ? "/A" : "/B") + " failed at stage " +
                   stages[i] + ": " + *errors[i] + "; ";
    throw std::runtime_error("run_experiment: " + summary);
  }

  std::vector<SeedReport> seed_reports;
  for (size_t si = 0; si < spec.seeds.size(); ++si) {
    const auto& a = outcomes[si * 2];
    const auto& b = outcomes[si * 2 + 1];
    seed_reports.push_back(compute_seed_report(spec.seeds[si], a.proxy, b.proxy,
                                               a.main_ood, b.main_ood, a.diag_ood,
                                               b.diag_ood));
  }
  manifest.report = aggregate(spec.name, seed_reports);

  manifest.report_csv_path = run_dir / "report.csv";
  manifest.report_json_path = run_dir / "report.json";
  detail::write_text(manifest.report_csv_path, report_to_csv(manifest.report));
  detail::write_text(manifest.report_json_path,
                     nlohmann::json(manifest.report).dump(2) + "\n");

  const auto per_seed_path = run_dir / "charts" / "per_seed_gaps.svg";
  const auto means_path = run_dir / "charts" / "config_means.svg";
  detail::write_text(per_seed_path, emit_per_seed_chart(manifest.report));
  detail::write_text(means_path, emit_config_means_chart({manifest.report}));

  mj["status"] = "complete";
  mj["report_csv"] = manifest.report_csv_path.string();
  mj["report_json"] = manifest.report_json_path.string();
  mj["charts"] = {per_seed_path.string(), means_path.string()};
  mj["total_wall_time_seconds"] = std::chrono::duration<double>(clock::now() - start).count();
  manifest.json = mj;
  detail::write_text(manifest.manifest_path, mj.dump(2) + "\n");
  return manifest;
}

// chart files for one or more persisted reports
inline std::vector<std::filesystem::path> emit_charts(
    const std::vector<ConfigReport>& reports, const std::filesystem::path& out_dir) {
  if (reports.empty()) throw std::invalid_argument("emit_charts: no reports");
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> paths;
  for (const auto& r : reports) {
    const auto path = out_dir / (r.name + "_per_seed_gaps.svg");
    detail::write_text(path, emit_per_seed_chart(r));
    paths.push_back(path);
  }
  const auto means = out_dir / "config_means.svg";
  detail::write_text(means, emit_config_means_chart(reports));
  paths.push_back(means);
  return paths;
}

// ----------------------------- table verification -----------------------------

struct VerifyResult {
  bool pass = true;
  std::vector<std::string> diffs;
};

namespace detail {
inline char sign_of(double v) { return v > 0 ? '+' : (v < 0 ? '-' : '0'); }
}

// Compares gap signs and criterion counts (not magnitudes) between a report
// and a reference table in the standard CSV format.
inline VerifyResult verify_tables(const ConfigReport& report,
                                  const std::string& reference_csv) {
  VerifyResult result;
  const auto rows = parse_gap_csv(reference_csv);

  std::vector<GapTableRow> ref_seeds;
  std::optional<GapTableRow> ref_mean;
  for (const auto& row : rows) {
    if (row.seed == "mean")
      ref_mean = row;
    else
      ref_seeds.push_back(row);
  }

  if (ref_seeds.size() != report.seeds.size()) {
    result.pass = false;
    result.diffs.push_back("shape mismatch: report has " +
                           std::to_string(report.seeds.size()) + " seeds, reference has " +
                           std::to_string(ref_seeds.size()));
    return result;
  }
  for (size_t i = 0; i < ref_seeds.size(); ++i) {
    if (ref_seeds[i].seed != std::to_string(report.seeds[i].seed)) {
      result.pass = false;
      result.diffs.push_back("shape mismatch: row " + std::to_string(i) + " seed " +
                             std::to_string(report.seeds[i].seed) + " vs reference " +
                             ref_seeds[i].seed);
      return result;
    }
  }

  auto check_sign = [&](const std::string& where, const std::string& column,
                        double got, double want) {
    if (detail::sign_of(got) != detail::sign_of(want)) {
      result.pass = false;
      result.diffs.push_back(where + " " + column + ": sign " +
                             std::string(1, detail::sign_of(got)) + " vs reference " +
                             std::string(1, detail::sign_of(want)));
    }
  };

  int ref_reversals = 0, ref_diagnostic = 0;
  for (size_t i = 0; i < ref_seeds.size(); ++i) {
    const auto& mine = report.seeds[i];
    const auto& ref = ref_seeds[i];
    const std::string where = "seed " + ref.seed;
    check_sign(where, "proxy_gap", mine.delta_proxy, ref.proxy);
    check_sign(where, "main_gap", mine.delta_main, ref.main);
    if (mine.delta_diag.has_value() != ref.diag.has_value()) {
      result.pass = false;
      result.diffs.push_back(where + " diag_gap: presence mismatch");
    } else if (mine.delta_diag) {
      check_sign(where, "diag_gap", *mine.delta_diag, *ref.diag);
    }
    if (ref.proxy > 0 && ref.main > 0) ++ref_reversals;
    if (ref.proxy > 0 && ref.diag && *ref.diag > 0) ++ref_diagnostic;
  }

  if (ref_reversals != report.reversal_count) {
    result.pass = false;
    result.diffs.push_back("all-sample reversal count: " +
                           std::to_string(report.reversal_count) + " vs reference " +
                           std::to_string(ref_reversals));
  }
  if (ref_diagnostic != report.diagnostic_count) {
    result.pass = false;
    result.diffs.push_back("diagnostic criterion count: " +
                           std::to_string(report.diagnostic_count) + " vs reference " +
                           std::to_string(ref_diagnostic));
  }

  if (ref_mean) {
    check_sign("mean", "proxy_gap", report.mean_delta_proxy, ref_mean->proxy);
    check_sign("mean", "main_gap", report.mean_delta_main, ref_mean->main);
    if (report.mean_delta_diag && ref_mean->diag)
      check_sign("mean", "diag_gap", *report.mean_delta_diag, *ref_mean->diag);
  }
  return result;
}

}  // namespace proxygap

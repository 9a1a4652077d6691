// proxygap CLI: run experiment grids, re-emit charts, verify gap tables
// against a reference, and generate datasets.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "proxygap/experiment.hpp"

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

fs::path default_out_root() {
  if (const char* env = std::getenv("PROXYGAP_OUT_ROOT")) return fs::path(env);
  return fs::path("runs");
}

proxygap::ConfigReport load_report(const fs::path& path) {
  return nlohmann::json::parse(read_file(path)).get<proxygap::ConfigReport>();
}

void print_report(const proxygap::ConfigReport& report) {
  std::cout << "\n" << proxygap::report_to_csv(report);
  std::cout << "all-sample reversal: " << report.reversal_count << "/"
            << report.seeds.size() << " seeds\n"
            << "diagnostic criterion: " << report.diagnostic_count << "/"
            << report.seeds.size() << " seeds";
  if (report.diag_contributing < static_cast<int>(report.seeds.size()))
    std::cout << " (" << report.diag_contributing << " with applicable diagnostics)";
  std::cout << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic pretraining-vs-OOD-probe gap harness"};
  app.require_subcommand(1);

  // ---- run ----
  auto* run_cmd = app.add_subcommand("run", "run an experiment grid");
  std::string name;
  std::string scale = "full";
  std::vector<uint64_t> seeds{42, 123, 456};
  std::string out_override;
  std::string custom_config;
  int workers = 1;
  run_cmd->add_option("name", name,
                      "experiment: primary | background_only | relevance_only | custom")
      ->required();
  run_cmd->add_option("--scale", scale, "full | smoke")->check(CLI::IsMember({"full", "smoke"}));
  run_cmd->add_option("--seeds", seeds, "run seeds")->delimiter(',');
  run_cmd->add_option("--out", out_override, "output directory (default $PROXYGAP_OUT_ROOT/<name>-<scale>)");
  run_cmd->add_option("--workers", workers, "concurrent (dataset x seed) cells")
      ->check(CLI::PositiveNumber);
  run_cmd->add_option("--config", custom_config, "key/value theta overrides (custom only)");

  // ---- charts ----
  auto* charts_cmd = app.add_subcommand("charts", "emit SVG charts for persisted reports");
  std::vector<std::string> report_paths;
  std::string charts_out = "charts";
  charts_cmd->add_option("reports", report_paths, "report.json files")->required();
  charts_cmd->add_option("--out", charts_out, "chart output directory");

  // ---- verify ----
  auto* verify_cmd =
      app.add_subcommand("verify", "compare a report's gap signs and criterion counts "
                                   "against a reference CSV");
  std::string verify_report, verify_reference;
  verify_cmd->add_option("report", verify_report, "report.json")->required();
  verify_cmd->add_option("reference", verify_reference, "reference CSV")->required();

  // ---- gen-data ----
  auto* gen_cmd = app.add_subcommand("gen-data", "generate dataset splits only");
  std::string gen_config;
  std::string gen_out;
  gen_cmd->add_option("config", gen_config, "dataset config file (key = value)")->required();
  gen_cmd->add_option("--out", gen_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      proxygap::ExperimentSpec spec =
          name == "custom" && !custom_config.empty()
              ? proxygap::parse_custom_spec(read_file(custom_config), scale)
              : proxygap::make_experiment_spec(name, scale);
      if (name == "custom" && custom_config.empty())
        throw std::invalid_argument("custom experiments need --config");
      spec.seeds = seeds;
      spec.workers = workers;
      spec.out_dir = out_override.empty() ? default_out_root() / (name + "-" + scale)
                                          : fs::path(out_override);

      std::cout << "running " << name << " at " << scale << " scale, "
                << seeds.size() << " seeds x 2 datasets, " << workers
                << " worker(s)\n  -> " << spec.out_dir.string() << std::endl;
      const auto manifest = proxygap::run_experiment(spec, [](const auto& cell) {
        std::cout << "  cell seed" << cell.run_seed
                  << (cell.dataset_index == 0 ? "/A" : "/B")
                  << " done: proxy=" << cell.proxy << " main_ood=" << cell.main_ood
                  << " diag_ood="
                  << (cell.diag_ood ? std::to_string(*cell.diag_ood) : "n/a") << " ("
                  << static_cast<int>(cell.wall_seconds) << "s)" << std::endl;
      });
      print_report(manifest.report);
      std::cout << "manifest: " << manifest.manifest_path.string() << "\n";
      return 0;
    }

    if (*charts_cmd) {
      std::vector<proxygap::ConfigReport> reports;
      for (const auto& p : report_paths) reports.push_back(load_report(p));
      const auto paths = proxygap::emit_charts(reports, charts_out);
      for (const auto& p : paths) std::cout << p.string() << "\n";
      return 0;
    }

    if (*verify_cmd) {
      const auto report = load_report(verify_report);
      const auto result = proxygap::verify_tables(report, read_file(verify_reference));
      for (const auto& d : result.diffs) std::cout << "DIFF: " << d << "\n";
      std::cout << (result.pass ? "PASS" : "FAIL") << "\n";
      return result.pass ? 0 : 1;
    }

    if (*gen_cmd) {
      const auto cfg = proxygap::parse_dataset_config_kv(read_file(gen_config));
      const fs::path out = gen_out.empty()
                               ? default_out_root() / "datasets" / proxygap::dataset_cache_key(cfg)
                               : fs::path(gen_out);
      const auto splits = proxygap::gen_dataset(cfg);
      proxygap::write_split_set(out, splits);
      std::cout << "wrote " << splits.train.size() << "/" << splits.val.size() << "/"
                << splits.test.size() << "/" << splits.ood.size()
                << " train/val/test/ood examples to " << out.string() << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace proxygap {

// Sign conventions: the proxy gap is A-B while both OOD gaps are B-A, so a
// positive value always means "the proxy prefers A" / "B wins OOD".
struct SeedReport {
  uint64_t seed = 0;
  double proxy_a = 0, proxy_b = 0;
  double main_a = 0, main_b = 0;
  std::optional<double> diag_a, diag_b;

  double delta_proxy = 0;  // proxy_a - proxy_b
  double delta_main = 0;   // main_b - main_a
  std::optional<double> delta_diag;

  bool all_sample_reversal = false;   // delta_proxy > 0 && delta_main > 0
  bool diagnostic_criterion = false;  // delta_proxy > 0 && delta_diag > 0
  bool diag_applicable = false;
};

struct ConfigReport {
  std::string name;
  std::vector<SeedReport> seeds;
  double mean_delta_proxy = 0;
  double mean_delta_main = 0;
  std::optional<double> mean_delta_diag;  // over contributing seeds only
  int reversal_count = 0;
  int diagnostic_count = 0;
  int diag_contributing = 0;
};

// Strict inequalities throughout: a zero gap never counts as a reversal,
// and an absent diagnostic never satisfies the criterion.
inline SeedReport compute_seed_report(uint64_t seed, double proxy_a, double proxy_b,
                                      double main_a, double main_b,
                                      std::optional<double> diag_a = std::nullopt,
                                      std::optional<double> diag_b = std::nullopt) {
  if (!std::isfinite(proxy_a) || !std::isfinite(proxy_b))
    throw std::invalid_argument("compute_seed_report: proxies must be finite");
  auto acc_ok = [](double a) { return a >= 0.0 && a <= 1.0; };
  if (!acc_ok(main_a) || !acc_ok(main_b) || (diag_a && !acc_ok(*diag_a)) ||
      (diag_b && !acc_ok(*diag_b)))
    throw std::invalid_argument("compute_seed_report: accuracies must be in [0,1]");

  SeedReport r;
  r.seed = seed;
  r.proxy_a = proxy_a;
  r.proxy_b = proxy_b;
  r.main_a = main_a;
  r.main_b = main_b;
  r.diag_a = diag_a;
  r.diag_b = diag_b;
  r.delta_proxy = proxy_a - proxy_b;
  r.delta_main = main_b - main_a;
  r.diag_applicable = diag_a.has_value() && diag_b.has_value();
  if (r.diag_applicable) r.delta_diag = *diag_b - *diag_a;
  r.all_sample_reversal = r.delta_proxy > 0 && r.delta_main > 0;
  r.diagnostic_criterion = r.delta_proxy > 0 && r.delta_diag && *r.delta_diag > 0;
  return r;
}

inline ConfigReport aggregate(const std::string& name,
                              const std::vector<SeedReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate: no seed reports");
  ConfigReport cr;
  cr.name = name;
  cr.seeds = reports;
  double diag_sum = 0;
  for (const auto& r : reports) {
    cr.mean_delta_proxy += r.delta_proxy;
    cr.mean_delta_main += r.delta_main;
    if (r.diag_applicable) {
      diag_sum += *r.delta_diag;
      ++cr.diag_contributing;
    }
    if (r.all_sample_reversal) ++cr.reversal_count;
    if (r.diagnostic_criterion) ++cr.diagnostic_count;
  }
  cr.mean_delta_proxy /= static_cast<double>(reports.size());
  cr.mean_delta_main /= static_cast<double>(reports.size());
  if (cr.diag_contributing > 0)
    cr.mean_delta_diag = diag_sum / static_cast<double>(cr.diag_contributing);
  return cr;
}

// ----------------------------- CSV -----------------------------
// Shared 6-decimal formatting keeps the CSV and the chart labels equal as
// strings.

inline std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

constexpr const char* kGapCsvHeader =
    "seed,proxy_gap_A_minus_B,main_gap_B_minus_A,diag_gap_B_minus_A";

inline std::string report_to_csv(const ConfigReport& cr) {
  std::ostringstream os;
  os << kGapCsvHeader << "\n";
  for (const auto& r : cr.seeds) {
    os << r.seed << "," << format_metric(r.delta_proxy) << ","
       << format_metric(r.delta_main) << ","
       << (r.delta_diag ? format_metric(*r.delta_diag) : "") << "\n";
  }
  os << "mean," << format_metric(cr.mean_delta_proxy) << ","
     << format_metric(cr.mean_delta_main) << ","
     << (cr.mean_delta_diag ? format_metric(*cr.mean_delta_diag) : "") << "\n";
  return os.str();
}

struct GapTableRow {
  std::string seed;  // number or "mean"
  double proxy = 0, main = 0;
  std::optional<double> diag;
};

inline std::vector<GapTableRow> parse_gap_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line))
    throw std::invalid_argument("parse_gap_csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kGapCsvHeader)
    throw std::invalid_argument("parse_gap_csv: unexpected header: " + line);

  std::vector<GapTableRow> rows;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    size_t start = 0;
    for (size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        cells.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    if (cells.size() != 4)
      throw std::invalid_argument("parse_gap_csv: expected 4 cells: " + line);
    GapTableRow row;
    row.seed = cells[0];
    row.proxy = std::stod(cells[1]);
    row.main = std::stod(cells[2]);
    if (!cells[3].empty()) row.diag = std::stod(cells[3]);
    rows.push_back(row);
  }
  if (rows.empty()) throw std::invalid_argument("parse_gap_csv: no data rows");
  return rows;
}

// ----------------------------- JSON -----------------------------

inline void to_json(nlohmann::json& j, const SeedReport& r) {
  j = nlohmann::json{{"seed", r.seed},
                     {"proxy_a", r.proxy_a},
                     {"proxy_b", r.proxy_b},
                     {"main_a", r.main_a},
                     {"main_b", r.main_b},
                     {"diag_a", r.diag_a ? nlohmann::json(*r.diag_a) : nlohmann::json()},
                     {"diag_b", r.diag_b ? nlohmann::json(*r.diag_b) : nlohmann::json()},
                     {"delta_proxy", r.delta_proxy},
                     {"delta_main", r.delta_main},
                     {"delta_diag",
                      r.delta_diag ? nlohmann::json(*r.delta_diag) : nlohmann::json()},
                     {"all_sample_reversal", r.all_sample_reversal},
                     {"diagnostic_criterion", r.diagnostic_criterion},
                     {"diag_applicable", r.diag_applicable}};
}

inline void from_json(const nlohmann::json& j, SeedReport& r) {
  j.at("seed").get_to(r.seed);
  j.at("proxy_a").get_to(r.proxy_a);
  j.at("proxy_b").get_to(r.proxy_b);
  j.at("main_a").get_to(r.main_a);
  j.at("main_b").get_to(r.main_b);
  auto opt = [&](const char* key) -> std::optional<double> {
    if (j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  r.diag_a = opt("diag_a");
  r.diag_b = opt("diag_b");
  r.delta_diag = opt("delta_diag");
  j.at("delta_proxy").get_to(r.delta_proxy);
  j.at("delta_main").get_to(r.delta_main);
  j.at("all_sample_reversal").get_to(r.all_sample_reversal);
  j.at("diagnostic_criterion").get_to(r.diagnostic_criterion);
  j.at("diag_applicable").get_to(r.diag_applicable);
}

inline void to_json(nlohmann::json& j, const ConfigReport& cr) {
  j = nlohmann::json{
      {"name", cr.name},
      {"seeds", cr.seeds},
      {"mean_delta_proxy", cr.mean_delta_proxy},
      {"mean_delta_main", cr.mean_delta_main},
      {"mean_delta_diag",
       cr.mean_delta_diag ? nlohmann::json(*cr.mean_delta_diag) : nlohmann::json()},
      {"reversal_count", cr.reversal_count},
      {"diagnostic_count", cr.diagnostic_count},
      {"diag_contributing", cr.diag_contributing}};
}

inline void from_json(const nlohmann::json& j, ConfigReport& cr) {
  j.at("name").get_to(cr.name);
  j.at("seeds").get_to(cr.seeds);
  j.at("mean_delta_proxy").get_to(cr.mean_delta_proxy);
  j.at("mean_delta_main").get_to(cr.mean_delta_main);
  if (j.at("mean_delta_diag").is_null())
    cr.mean_delta_diag = std::nullopt;
  else
    cr.mean_delta_diag = j.at("mean_delta_diag").get<double>();
  j.at("reversal_count").get_to(cr.reversal_count);
  j.at("diagnostic_count").get_to(cr.diagnostic_count);
  j.at("diag_contributing").get_to(cr.diag_contributing);
}

}  // namespace proxygap

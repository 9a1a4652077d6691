#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "proxygap/datagen.hpp"

namespace proxygap {

inline void to_json(nlohmann::json& j, const DatasetConfig& c) {
  j = nlohmann::json{{"b", c.b},           {"rho", c.rho},
                     {"eta", c.eta},       {"p", c.p},
                     {"d", c.d},           {"n_train", c.n_train},
                     {"n_val", c.n_val},   {"n_test", c.n_test},
                     {"n_ood", c.n_ood},   {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, DatasetConfig& c) {
  j.at("b").get_to(c.b);
  j.at("rho").get_to(c.rho);
  j.at("eta").get_to(c.eta);
  j.at("p").get_to(c.p);
  j.at("d").get_to(c.d);
  j.at("n_train").get_to(c.n_train);
  j.at("n_val").get_to(c.n_val);
  j.at("n_test").get_to(c.n_test);
  j.at("n_ood").get_to(c.n_ood);
  j.at("seed").get_to(c.seed);
}

// ----------------------------- split files -----------------------------
// Layout: "PGDS" | u32 version | u32 json_len | header JSON | records.
// One record = 64 token bytes + label + informative + bucket_u1 + bucket_u2,
// with 255 marking an absent bucket. Integers little-endian; bit-exact
// across platforms.

constexpr uint32_t kSplitFileVersion = 1;
constexpr int kRecordBytes = kSeqLen + 4;

struct SplitFile {
  DatasetConfig config;
  std::string split_name;
  std::vector<LabeledExample> examples;
  std::optional<BackgroundPermutation> ood_permutation;
};

namespace detail {
inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}
}  // namespace detail

inline void write_split_file(const std::filesystem::path& path,
                             const DatasetConfig& config,
                             const std::string& split_name,
                             const std::vector<LabeledExample>& examples,
                             const BackgroundPermutation* ood_perm = nullptr) {
  nlohmann::json header{{"config", config},
                        {"split", split_name},
                        {"count", examples.size()}};
  if (ood_perm != nullptr) {
    header["ood_permutation"] = std::vector<int>(ood_perm->begin(), ood_perm->end());
  }
  const std::string hs = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("write_split_file: cannot open " + path.string());
  os.write("PGDS", 4);
  detail::put_u32(os, kSplitFileVersion);
  detail::put_u32(os, static_cast<uint32_t>(hs.size()));
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& ex : examples) {
    os.write(reinterpret_cast<const char*>(ex.tokens.data()), kSeqLen);
    const unsigned char tail[4] = {ex.label, static_cast<unsigned char>(ex.informative ? 1 : 0),
                                   ex.bucket_u1, ex.bucket_u2};
    os.write(reinterpret_cast<const char*>(tail), 4);
  }
  if (!os) throw std::runtime_error("write_split_file: write failed for " + path.string());
}

inline SplitFile read_split_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_split_file: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string_view(magic, 4) != "PGDS")
    throw std::runtime_error("read_split_file: bad magic in " + path.string());
  const uint32_t version = detail::get_u32(is);
  if (version != kSplitFileVersion)
    throw std::runtime_error("read_split_file: unsupported version in " + path.string());
  const uint32_t json_len = detail::get_u32(is);
  std::string hs(json_len, '\0');
  is.read(hs.data(), json_len);
  const nlohmann::json header = nlohmann::json::parse(hs);

  SplitFile f;
  header.at("config").get_to(f.config);
  header.at("split").get_to(f.split_name);
  const auto count = header.at("count").get<uint64_t>();
  if (header.contains("ood_permutation")) {
    BackgroundPermutation perm{};
    const auto v = header.at("ood_permutation").get<std::vector<int>>();
    if (v.size() != perm.size())
      throw std::runtime_error("read_split_file: bad permutation size");
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<TokenId>(v[i]);
    f.ood_permutation = perm;
  }

  f.examples.resize(count);
  for (auto& ex : f.examples) {
    is.read(reinterpret_cast<char*>(ex.tokens.data()), kSeqLen);
    unsigned char tail[4];
    is.read(reinterpret_cast<char*>(tail), 4);
    ex.label = tail[0];
    ex.informative = tail[1] != 0;
    ex.bucket_u1 = tail[2];
    ex.bucket_u2 = tail[3];
  }
  if (!is) throw std::runtime_error("read_split_file: truncated file " + path.string());
  return f;
}

inline void write_split_set(const std::filesystem::path& dir, const SplitSet& s) {
  std::filesystem::create_directories(dir);
  write_split_file(dir / "train.bin", s.config, "train", s.train);
  write_split_file(dir / "val.bin", s.config, "val", s.val);
  write_split_file(dir / "test.bin", s.config, "test", s.test);
  write_split_file(dir / "ood.bin", s.config, "ood", s.ood, &s.ood_permutation);
}

inline SplitSet read_split_set(const std::filesystem::path& dir) {
  SplitSet s;
  auto train = read_split_file(dir / "train.bin");
  s.config = train.config;
  s.train = std::move(train.examples);
  s.val = read_split_file(dir / "val.bin").examples;
  s.test = read_split_file(dir / "test.bin").examples;
  auto ood = read_split_file(dir / "ood.bin");
  s.ood = std::move(ood.examples);
  if (ood.ood_permutation) s.ood_permutation = *ood.ood_permutation;
  return s;
}

// ----------------------------- key/value config text -----------------------------
// Plain `key = value` lines, '#' comments. Used by the gen-data subcommand
// and for custom experiment overrides.

inline std::vector<std::pair<std::string, std::string>> parse_kv_text(
    const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream is(text);
  std::string line;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
  };
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

inline DatasetConfig parse_dataset_config_kv(const std::string& text) {
  DatasetConfig cfg;
  cfg.n_train = 50000;
  cfg.n_val = 5000;
  cfg.n_test = 5000;
  cfg.n_ood = 5000;
  bool have_b = false, have_rho = false, have_eta = false, have_p = false, have_d = false;
  for (const auto& [key, value] : parse_kv_text(text)) {
    if (key == "b") { cfg.b = std::stod(value); have_b = true; }
    else if (key == "rho") { cfg.rho = std::stod(value); have_rho = true; }
    else if (key == "eta") { cfg.eta = std::stod(value); have_eta = true; }
    else if (key == "p") { cfg.p = std::stod(value); have_p = true; }
    else if (key == "d") { cfg.d = std::stoi(value); have_d = true; }
    else if (key == "n_train") cfg.n_train = std::stoll(value);
    else if (key == "n_val") cfg.n_val = std::stoll(value);
    else if (key == "n_test") cfg.n_test = std::stoll(value);
    else if (key == "n_ood") cfg.n_ood = std::stoll(value);
    else if (key == "seed") cfg.seed = std::stoull(value);
    else throw std::invalid_argument("unknown dataset config key: " + key);
  }
  if (!have_b || !have_rho || !have_eta || !have_p || !have_d)
    throw std::invalid_argument("dataset config must set b, rho, eta, p, d");
  cfg.validate();
  return cfg;
}

}  // namespace proxygap

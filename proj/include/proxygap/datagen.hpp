#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "proxygap/rng.hpp"
#include "proxygap/vocab.hpp"

namespace proxygap {

constexpr int kSeqLen = 64;
constexpr int kBackgroundLen = 58;
constexpr int kSuffixLen = 6;
constexpr int kChunkLen = 4;
constexpr uint8_t kNoBucket = 255;

// Generator parameter vector theta = (b, rho, eta, p, d) plus split sizes
// and the dataset seed.
struct DatasetConfig {
  double b = 0.0;    // background strength: prob a filler slot copies the motif
  double rho = 0.0;  // relevance prevalence: prob an example is informative
  double eta = 0.0;  // relevance noise: prob the bucket used for u2 is flipped
  double p = 0.0;    // repeat probability: prob a right-side chunk mirrors
  int d = 1;         // maximum nesting depth
  int64_t n_train = 1;
  int64_t n_val = 1;
  int64_t n_test = 1;
  int64_t n_ood = 1;
  uint64_t seed = 0;

  void validate() const {
    auto prob_ok = [](double x) { return x >= 0.0 && x <= 1.0; };
    if (!prob_ok(b) || !prob_ok(rho) || !prob_ok(eta) || !prob_ok(p))
      throw std::invalid_argument("DatasetConfig: probabilities must be in [0,1]");
    if (d < 1) throw std::invalid_argument("DatasetConfig: d must be >= 1");
    if (n_train < 1 || n_val < 1 || n_test < 1 || n_ood < 1)
      throw std::invalid_argument("DatasetConfig: split sizes must be >= 1");
  }

  bool operator==(const DatasetConfig&) const = default;
};

// One 64-token sequence. Positions 0..57 hold the background prefix,
// positions 58..63 hold [marker, u1, marker, u2, query, answer].
struct LabeledExample {
  std::array<TokenId, kSeqLen> tokens{};
  uint8_t label = 0;  // 0/1, encoded by the answer token
  bool informative = false;
  uint8_t bucket_u1 = kNoBucket;
  uint8_t bucket_u2 = kNoBucket;

  bool operator==(const LabeledExample&) const = default;
};

struct SplitSet {
  DatasetConfig config;
  std::vector<LabeledExample> train, val, test, ood;
  std::array<TokenId, Vocabulary::total_size> ood_permutation{};
};

// ----------------------------- background -----------------------------
// Nested OPEN/MID/CLOSE template. A depth-k unit is
//   OPEN body(k) MID (mirror of left body with prob p | fresh body) CLOSE
// where body(1) is a 4-token filler chunk and body(k) is a depth-(k-1)
// unit. With probability b a filler slot copies a periodic motif over the
// content vocabulary (base drawn once per sequence), otherwise it is a
// uniform content draw. Units are tiled and truncated to 58 positions.
// Structure draws (depth, motif base, b-coins, fresh filler) come from
// `structure`; mirror coins come from `mirror` so the OOD shift can re-draw
// them independently.
inline std::array<TokenId, kBackgroundLen> gen_background(double b, double p,
                                                          int d, Rng& structure,
                                                          Rng& mirror) {
  if (b < 0.0 || b > 1.0 || p < 0.0 || p > 1.0 || d < 1)
    throw std::invalid_argument("gen_background: invalid parameters");

  const int depth = 1 + static_cast<int>(structure.below(static_cast<uint32_t>(d)));
  const int motif_base = static_cast<int>(structure.below(Vocabulary::content_size));

  std::vector<TokenId> out;
  out.reserve(2 * kBackgroundLen);
  int filler_counter = 0;

  auto emit_chunk = [&] {
    for (int s = 0; s < kChunkLen; ++s) {
      TokenId t;
      if (structure.bernoulli(b)) {
        t = Vocabulary::content_token((motif_base + filler_counter) %
                                      Vocabulary::content_size);
      } else {
        t = Vocabulary::content_token(
            static_cast<int>(structure.below(Vocabulary::content_size)));
      }
      ++filler_counter;
      out.push_back(t);
    }
  };

  auto emit_unit = [&](auto&& self, int k) -> void {
    auto emit_body = [&](int kk) {
      if (kk <= 1) {
        emit_chunk();
      } else {
        self(self, kk - 1);
      }
    };
    out.push_back(Vocabulary::open);
    const size_t left_begin = out.size();
    emit_body(k);
    const size_t left_end = out.size();
    out.push_back(Vocabulary::mid);
    if (mirror.bernoulli(p)) {
      out.insert(out.end(), out.begin() + static_cast<ptrdiff_t>(left_begin),
                 out.begin() + static_cast<ptrdiff_t>(left_end));
    } else {
      emit_body(k);
    }
    out.push_back(Vocabulary::close);
  };

  while (out.size() < kBackgroundLen) emit_unit(emit_unit, depth);

  std::array<TokenId, kBackgroundLen> prefix{};
  for (int i = 0; i < kBackgroundLen; ++i) prefix[i] = out[static_cast<size_t>(i)];
  return prefix;
}

// ----------------------------- relevance suffix -----------------------------

struct RelevanceSuffix {
  std::array<TokenId, kSuffixLen> tokens{};
  uint8_t label = 0;
  bool informative = false;
  uint8_t bucket_u1 = kNoBucket;
  uint8_t bucket_u2 = kNoBucket;
};

// On informative examples the answer encodes the *intended* same/different
// bucket relation, while with probability eta the bucket actually used to
// draw u2 is flipped; observed same-bucket(u1,u2) therefore disagrees with
// the label with probability eta. Non-informative examples draw u1, u2 from
// content + relevance vocabulary and an independent uniform label.
inline RelevanceSuffix gen_relevance_suffix(Rng& rng, double rho, double eta) {
  if (rho < 0.0 || rho > 1.0 || eta < 0.0 || eta > 1.0)
    throw std::invalid_argument("gen_relevance_suffix: invalid parameters");

  RelevanceSuffix s;
  s.informative = rng.bernoulli(rho);
  TokenId u1, u2;
  if (s.informative) {
    u1 = static_cast<TokenId>(Vocabulary::relevance_begin +
                              rng.below(Vocabulary::relevance_size));
    const int b1 = Vocabulary::bucket_of(u1);
    const bool intended_same = rng.below(2) == 1;
    const int intended_bucket = intended_same ? b1 : 1 - b1;
    const bool flip = rng.bernoulli(eta);
    const int used_bucket = flip ? 1 - intended_bucket : intended_bucket;
    u2 = Vocabulary::relevance_token(
        used_bucket, static_cast<int>(rng.below(Vocabulary::bucket_size)));
    s.label = intended_same ? 1 : 0;
    s.bucket_u1 = static_cast<uint8_t>(b1);
    s.bucket_u2 = static_cast<uint8_t>(used_bucket);
  } else {
    // contiguous range [relevance_begin, 80) = relevance + content vocab
    constexpr uint32_t kDistractorSpan =
        Vocabulary::relevance_size + Vocabulary::content_size;
    u1 = static_cast<TokenId>(Vocabulary::relevance_begin + rng.below(kDistractorSpan));
    u2 = static_cast<TokenId>(Vocabulary::relevance_begin + rng.below(kDistractorSpan));
    s.label = static_cast<uint8_t>(rng.below(2));
  }
  s.tokens = {Vocabulary::marker, u1, Vocabulary::marker, u2, Vocabulary::query,
              s.label ? Vocabulary::label1 : Vocabulary::label0};
  return s;
}

// ----------------------------- examples and splits -----------------------------

inline uint64_t split_key(const DatasetConfig& cfg, std::string_view split_name) {
  return derive_key(cfg.seed, split_name);
}

inline LabeledExample gen_example(const DatasetConfig& cfg, uint64_t split,
                                  uint64_t index) {
  Rng structure = derive_rng(split, "bg-struct", index);
  Rng mirror = derive_rng(split, "bg-mirror", index);
  Rng suffix_rng = derive_rng(split, "suffix", index);

  LabeledExample ex;
  const auto bg = gen_background(cfg.b, cfg.p, cfg.d, structure, mirror);
  const auto sfx = gen_relevance_suffix(suffix_rng, cfg.rho, cfg.eta);
  for (int i = 0; i < kBackgroundLen; ++i) ex.tokens[static_cast<size_t>(i)] = bg[static_cast<size_t>(i)];
  for (int i = 0; i < kSuffixLen; ++i)
    ex.tokens[static_cast<size_t>(kBackgroundLen + i)] = sfx.tokens[static_cast<size_t>(i)];
  ex.label = sfx.label;
  ex.informative = sfx.informative;
  ex.bucket_u1 = sfx.bucket_u1;
  ex.bucket_u2 = sfx.bucket_u2;
  return ex;
}

// ----------------------------- OOD shift -----------------------------

using BackgroundPermutation = std::array<TokenId, Vocabulary::total_size>;

// seeded bijection over scaffold + content ids; identity on all other ids
inline BackgroundPermutation make_background_permutation(uint64_t shift_seed) {
  std::vector<TokenId> bg_ids;
  for (int t = 0; t < Vocabulary::total_size; ++t)
    if (Vocabulary::is_background(static_cast<TokenId>(t)))
      bg_ids.push_back(static_cast<TokenId>(t));

  std::vector<TokenId> shuffled = bg_ids;
  Rng rng = derive_rng(shift_seed, "perm");
  rng.shuffle(shuffled.begin(), shuffled.end());

  BackgroundPermutation perm{};
  for (int t = 0; t < Vocabulary::total_size; ++t) perm[static_cast<size_t>(t)] = static_cast<TokenId>(t);
  for (size_t i = 0; i < bg_ids.size(); ++i) perm[bg_ids[i]] = shuffled[i];
  return perm;
}

inline BackgroundPermutation identity_permutation() {
  BackgroundPermutation perm{};
  for (int t = 0; t < Vocabulary::total_size; ++t) perm[static_cast<size_t>(t)] = static_cast<TokenId>(t);
  return perm;
}

// Rewrites positions 0..57: the background is regenerated with the original
// structure stream but mirror coins drawn from `mirror`, then `perm` is
// applied to the background positions. Positions 58..63, the label, and the
// bucket record are untouched.
inline LabeledExample apply_ood_shift_example(const LabeledExample& ex,
                                              const DatasetConfig& cfg,
                                              Rng structure, Rng mirror,
                                              const BackgroundPermutation& perm) {
  LabeledExample out = ex;
  const auto bg = gen_background(cfg.b, cfg.p, cfg.d, structure, mirror);
  for (int i = 0; i < kBackgroundLen; ++i) out.tokens[static_cast<size_t>(i)] = perm[bg[static_cast<size_t>(i)]];
  return out;
}

inline void apply_ood_shift(std::vector<LabeledExample>& examples,
                            const DatasetConfig& cfg, uint64_t split,
                            uint64_t shift_seed,
                            const BackgroundPermutation& perm) {
  for (size_t i = 0; i < examples.size(); ++i) {
    examples[i] = apply_ood_shift_example(
        examples[i], cfg, derive_rng(split, "bg-struct", i),
        derive_rng(shift_seed, "mirror", i), perm);
  }
}

// ----------------------------- dataset -----------------------------

inline std::vector<LabeledExample> gen_split(const DatasetConfig& cfg,
                                             std::string_view split_name,
                                             int64_t count) {
  const uint64_t key = split_key(cfg, split_name);
  std::vector<LabeledExample> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i)
    out.push_back(gen_example(cfg, key, static_cast<uint64_t>(i)));
  return out;
}

// train/val/test i.i.d. from theta; ood from the same process transformed by
// the background shift. Fully determined by cfg.seed via named streams, so
// changing one split's size never changes another split's contents.
inline SplitSet gen_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  SplitSet s;
  s.config = cfg;
  s.train = gen_split(cfg, "train", cfg.n_train);
  s.val = gen_split(cfg, "val", cfg.n_val);
  s.test = gen_split(cfg, "test", cfg.n_test);
  s.ood = gen_split(cfg, "ood", cfg.n_ood);

  const uint64_t shift_seed = derive_key(cfg.seed, "ood-shift");
  s.ood_permutation = make_background_permutation(shift_seed);
  apply_ood_shift(s.ood, cfg, split_key(cfg, "ood"), shift_seed, s.ood_permutation);
  return s;
}

}  // namespace proxygap

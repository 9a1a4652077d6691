#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "proxygap/rng.hpp"
#include "proxygap/tensor.hpp"

namespace proxygap {

struct BackboneConfig {
  int n_layers = 4;
  int width = 128;
  int n_heads = 4;
  int mlp_ratio = 4;
  double dropout = 0.1;
  int seq_len = 64;
  int vocab_size = 80;

  void validate() const {
    if (n_layers < 1 || width < 1 || n_heads < 1 || mlp_ratio < 1 || seq_len < 1 ||
        vocab_size < 1)
      throw std::invalid_argument("BackboneConfig: dimensions must be positive");
    if (width % n_heads != 0)
      throw std::invalid_argument("BackboneConfig: width must be divisible by n_heads");
    if (dropout < 0.0 || dropout >= 1.0)
      throw std::invalid_argument("BackboneConfig: dropout must be in [0,1)");
  }

  bool operator==(const BackboneConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const BackboneConfig& c) {
  j = nlohmann::json{{"n_layers", c.n_layers}, {"width", c.width},
                     {"n_heads", c.n_heads},   {"mlp_ratio", c.mlp_ratio},
                     {"dropout", c.dropout},   {"seq_len", c.seq_len},
                     {"vocab_size", c.vocab_size}};
}

inline void from_json(const nlohmann::json& j, BackboneConfig& c) {
  j.at("n_layers").get_to(c.n_layers);
  j.at("width").get_to(c.width);
  j.at("n_heads").get_to(c.n_heads);
  j.at("mlp_ratio").get_to(c.mlp_ratio);
  j.at("dropout").get_to(c.dropout);
  j.at("seq_len").get_to(c.seq_len);
  j.at("vocab_size").get_to(c.vocab_size);
}

// closed-form parameter count; a pure function of the architecture
inline int64_t backbone_param_count(const BackboneConfig& cfg) {
  const int64_t c = cfg.width, v = cfg.vocab_size, t = cfg.seq_len;
  const int64_t r = static_cast<int64_t>(cfg.mlp_ratio) * c;
  const int64_t per_layer = 4 * c * c + 2 * c * r + r + 9 * c;
  return v * c + t * c + cfg.n_layers * per_layer + 2 * c + c * v + v;
}

// Pre-layer-norm blocks, learned absolute positional embeddings, a final
// layer norm, and an untied output projection. Linear weights are stored
// [in, out].
template <typename Real>
struct BackboneParams {
  BackboneConfig config;

  Tensor<Real> tok_emb;  // [vocab, width]
  Tensor<Real> pos_emb;  // [seq_len, width]
  struct Layer {
    Tensor<Real> ln1_g, ln1_b;
    Tensor<Real> wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor<Real> ln2_g, ln2_b;
    Tensor<Real> w1, b1, w2, b2;
  };
  std::vector<Layer> layers;
  Tensor<Real> lnf_g, lnf_b;
  Tensor<Real> head_w, head_b;  // [width, vocab], [vocab]

  // checkpoint field order; every traversal of the parameters uses this
  std::vector<Tensor<Real>> all() const {
    std::vector<Tensor<Real>> out{tok_emb, pos_emb};
    for (const auto& l : layers) {
      for (const auto& t : {l.ln1_g, l.ln1_b, l.wq, l.bq, l.wk, l.bk, l.wv, l.bv,
                            l.wo, l.bo, l.ln2_g, l.ln2_b, l.w1, l.b1, l.w2, l.b2})
        out.push_back(t);
    }
    out.push_back(lnf_g);
    out.push_back(lnf_b);
    out.push_back(head_w);
    out.push_back(head_b);
    return out;
  }

  // aligned with all(): true only for the non-embedding weight matrices
  // (norms, biases, and embeddings are excluded from weight decay)
  std::vector<bool> decay_mask() const {
    std::vector<bool> out{false, false};  // tok_emb, pos_emb
    for (size_t l = 0; l < layers.size(); ++l) {
      // ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2
      const bool layer_mask[] = {false, false, true, false, true, false, true, false,
                                 true,  false, false, false, true, false, true, false};
      out.insert(out.end(), std::begin(layer_mask), std::end(layer_mask));
    }
    out.push_back(false);  // lnf_g
    out.push_back(false);  // lnf_b
    out.push_back(true);   // head_w
    out.push_back(false);  // head_b
    return out;
  }

  int64_t count() const {
    int64_t n = 0;
    for (const auto& t : all()) n += t->size();
    return n;
  }
};

// matrices (including embeddings) ~ Normal(0, 0.02); norms at identity;
// biases zero; draw order = checkpoint field order
template <typename Real>
BackboneParams<Real> init_backbone(const BackboneConfig& cfg, uint64_t seed) {
  cfg.validate();
  BackboneParams<Real> params;
  params.config = cfg;
  const int64_t c = cfg.width;
  const int64_t r = static_cast<int64_t>(cfg.mlp_ratio) * c;

  Rng rng = derive_rng(seed, "backbone-init");
  auto normal_mat = [&](int64_t rows, int64_t cols) {
    auto t = make_tensor<Real>({rows, cols}, true);
    for (auto& w : t->value) w = static_cast<Real>(rng.normal(0.0, 0.02));
    return t;
  };
  auto fill_vec = [&](int64_t n, Real value) {
    auto t = make_tensor<Real>({n}, true);
    std::fill(t->value.begin(), t->value.end(), value);
    return t;
  };

  params.tok_emb = normal_mat(cfg.vocab_size, c);
  params.pos_emb = normal_mat(cfg.seq_len, c);
  params.layers.resize(static_cast<size_t>(cfg.n_layers));
  for (auto& l : params.layers) {
    l.ln1_g = fill_vec(c, Real(1));
    l.ln1_b = fill_vec(c, Real(0));
    l.wq = normal_mat(c, c);
    l.bq = fill_vec(c, Real(0));
    l.wk = normal_mat(c, c);
    l.bk = fill_vec(c, Real(0));
    l.wv = normal_mat(c, c);
    l.bv = fill_vec(c, Real(0));
    l.wo = normal_mat(c, c);
    l.bo = fill_vec(c, Real(0));
    l.ln2_g = fill_vec(c, Real(1));
    l.ln2_b = fill_vec(c, Real(0));
    l.w1 = normal_mat(c, r);
    l.b1 = fill_vec(r, Real(0));
    l.w2 = normal_mat(r, c);
    l.b2 = fill_vec(c, Real(0));
  }
  params.lnf_g = fill_vec(c, Real(1));
  params.lnf_b = fill_vec(c, Real(0));
  params.head_w = normal_mat(c, cfg.vocab_size);
  params.head_b = fill_vec(cfg.vocab_size, Real(0));
  return params;
}

template <typename Real>
struct ForwardOut {
  Tensor<Real> logits;  // [batch*seq_len, vocab]
  Tensor<Real> hidden;  // [batch*seq_len, width], after the final norm
  int64_t batch = 0;
};

// Causal forward pass over `batch` sequences of seq_len tokens (flattened).
// Dropout sites: attention weights and each residual-branch output, active
// only when train=true, with masks drawn from streams keyed by
// (dropout_step_key, layer, site).
template <typename Real>
ForwardOut<Real> forward(Tape<Real>& tape, const BackboneParams<Real>& params,
                         const std::vector<uint8_t>& tokens, int64_t batch,
                         bool train = false, uint64_t dropout_step_key = 0) {
  const auto& cfg = params.config;
  const int64_t t = cfg.seq_len, c = cfg.width, h = cfg.n_heads;
  const int64_t hd = c / h;
  if (static_cast<int64_t>(tokens.size()) != batch * t)
    throw TensorShapeError("forward: expected batch*seq_len tokens");

  std::vector<int32_t> ids(tokens.size());
  std::vector<int32_t> pos_ids(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i) {
    ids[i] = tokens[i];
    pos_ids[i] = static_cast<int32_t>(static_cast<int64_t>(i) % t);
  }

  auto x = add(tape, embedding_lookup(tape, params.tok_emb, std::move(ids)),
               embedding_lookup(tape, params.pos_emb, std::move(pos_ids)));

  const Real inv_sqrt_hd = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(hd)));

  for (int layer = 0; layer < cfg.n_layers; ++layer) {
    const auto& l = params.layers[static_cast<size_t>(layer)];
    auto site_rng = [&](int site) {
      return derive_rng(dropout_step_key, "dropout-site", static_cast<uint64_t>(layer),
                        static_cast<uint64_t>(site));
    };

    auto normed = layer_norm(tape, x, l.ln1_g, l.ln1_b);
    auto q = split_heads(tape, linear(tape, normed, l.wq, l.bq), batch, h);
    auto k = split_heads(tape, linear(tape, normed, l.wk, l.bk), batch, h);
    auto v = split_heads(tape, linear(tape, normed, l.wv, l.bv), batch, h);

    auto scores = scale(tape, matmul(tape, q, k, false, true), inv_sqrt_hd);
    auto attn = softmax(tape, causal_mask(tape, scores), 2);
    {
      Rng rng = site_rng(0);
      attn = dropout(tape, attn, cfg.dropout, train, rng);
    }
    auto ctx = matmul(tape, attn, v);  // [B*H, T, hd]
    auto attn_out = linear(tape, merge_heads(tape, ctx, h), l.wo, l.bo);
    {
      Rng rng = site_rng(1);
      attn_out = dropout(tape, attn_out, cfg.dropout, train, rng);
    }
    x = add(tape, x, attn_out);

    auto normed2 = layer_norm(tape, x, l.ln2_g, l.ln2_b);
    auto mid = gelu(tape, linear(tape, normed2, l.w1, l.b1));
    auto mlp_out = linear(tape, mid, l.w2, l.b2);
    {
      Rng rng = site_rng(2);
      mlp_out = dropout(tape, mlp_out, cfg.dropout, train, rng);
    }
    x = add(tape, x, mlp_out);
  }

  ForwardOut<Real> out;
  out.hidden = layer_norm(tape, x, params.lnf_g, params.lnf_b);
  out.logits = linear(tape, out.hidden, params.head_w, params.head_b);
  out.batch = batch;
  return out;
}

// mean next-token cross-entropy in nats over the seq_len-1 predicted
// positions of every sequence in the batch
template <typename Real>
Tensor<Real> nll_loss(Tape<Real>& tape, const ForwardOut<Real>& fwd,
                      const std::vector<uint8_t>& tokens, int seq_len) {
  std::vector<int32_t> targets(tokens.size());
  for (int64_t i = 0; i < static_cast<int64_t>(tokens.size()); ++i) {
    const int64_t pos = i % seq_len;
    targets[static_cast<size_t>(i)] =
        pos + 1 < seq_len ? tokens[static_cast<size_t>(i + 1)] : kIgnoreTarget;
  }
  return cross_entropy(tape, fwd.logits, std::move(targets));
}

// final-norm hidden state at position seq_len-2 (the query token, i.e. the
// last position of the answer-excluding prefix), dropout off
template <typename Real>
std::vector<Real> extract_feature(const BackboneParams<Real>& params,
                                  const std::vector<uint8_t>& example_tokens) {
  const auto& cfg = params.config;
  if (static_cast<int64_t>(example_tokens.size()) != cfg.seq_len)
    throw TensorShapeError("extract_feature: expected one full sequence");
  Tape<Real> tape(false);
  auto fwd = forward(tape, params, example_tokens, 1, false);
  const int64_t c = cfg.width;
  const int64_t row = cfg.seq_len - 2;
  std::vector<Real> feature(static_cast<size_t>(c));
  std::copy_n(fwd.hidden->value.data() + row * c, c, feature.data());
  return feature;
}

// ----------------------------- checkpoints -----------------------------
// "PGCK" | u32 version | u32 json_len | config JSON | float32 weights in
// checkpoint field order

constexpr uint32_t kCheckpointVersion = 1;

template <typename Real>
void save_checkpoint(const std::filesystem::path& path,
                     const BackboneParams<Real>& params) {
  const std::string header = nlohmann::json{{"config", params.config}}.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
  os.write("PGCK", 4);
  const uint32_t version = kCheckpointVersion;
  const auto json_len = static_cast<uint32_t>(header.size());
  unsigned char lead[8] = {
      static_cast<unsigned char>(version),       static_cast<unsigned char>(version >> 8),
      static_cast<unsigned char>(version >> 16), static_cast<unsigned char>(version >> 24),
      static_cast<unsigned char>(json_len),      static_cast<unsigned char>(json_len >> 8),
      static_cast<unsigned char>(json_len >> 16), static_cast<unsigned char>(json_len >> 24)};
  os.write(reinterpret_cast<const char*>(lead), 8);
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& t : params.all()) {
    for (Real v : t->value) {
      const auto f = static_cast<float>(v);
      os.write(reinterpret_cast<const char*>(&f), sizeof(float));
    }
  }
  if (!os) throw std::runtime_error("save_checkpoint: write failed " + path.string());
}

template <typename Real>
BackboneParams<Real> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string_view(magic, 4) != "PGCK")
    throw std::runtime_error("load_checkpoint: bad magic in " + path.string());
  unsigned char lead[8];
  is.read(reinterpret_cast<char*>(lead), 8);
  const uint32_t version = static_cast<uint32_t>(lead[0]) | (static_cast<uint32_t>(lead[1]) << 8) |
                           (static_cast<uint32_t>(lead[2]) << 16) | (static_cast<uint32_t>(lead[3]) << 24);
  if (version != kCheckpointVersion)
    throw std::runtime_error("load_checkpoint: unsupported version");
  const uint32_t json_len = static_cast<uint32_t>(lead[4]) | (static_cast<uint32_t>(lead[5]) << 8) |
                            (static_cast<uint32_t>(lead[6]) << 16) | (static_cast<uint32_t>(lead[7]) << 24);
  std::string header(json_len, '\0');
  is.read(header.data(), json_len);
  BackboneConfig cfg;
  nlohmann::json::parse(header).at("config").get_to(cfg);

  auto params = init_backbone<Real>(cfg, 0);
  for (const auto& t : params.all()) {
    for (auto& v : t->value) {
      float f;
      is.read(reinterpret_cast<char*>(&f), sizeof(float));
      v = static_cast<Real>(f);
    }
  }
  if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path.string());
  return params;
}

}  // namespace proxygap

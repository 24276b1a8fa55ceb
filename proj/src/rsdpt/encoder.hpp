#pragma once

#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "rsdpt/ops.hpp"
#include "rsdpt/rng.hpp"

namespace rsdpt {

struct EncoderConfig {
  int num_layers = 4;
  int hidden_size = 128;
  int num_heads = 4;
  int ff_size = 512;
  int vocab_size = 0;
  int max_positions = 320;
  int num_segments = 2;
  double dropout_rate = 0.1;
  double layer_norm_eps = 1e-12;

  void validate() const {
    if (num_layers < 0) throw data_error("num_layers must be >= 0");
    if (hidden_size <= 0 || num_heads <= 0 || hidden_size % num_heads != 0)
      throw data_error("hidden_size must be a positive multiple of num_heads");
    if (ff_size <= 0) throw data_error("ff_size must be positive");
    if (vocab_size < 6) throw data_error("vocab_size must cover the special tokens");
    if (max_positions < 8) throw data_error("max_positions must be >= 8");
    if (num_segments != 2) throw data_error("num_segments must be 2");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw data_error("dropout_rate must be in [0,1)");
  }

  int head_dim() const { return hidden_size / num_heads; }

  nlohmann::json to_json() const {
    return {{"num_layers", num_layers},     {"hidden_size", hidden_size},
            {"num_heads", num_heads},       {"ff_size", ff_size},
            {"vocab_size", vocab_size},     {"max_positions", max_positions},
            {"num_segments", num_segments}, {"dropout_rate", dropout_rate},
            {"layer_norm_eps", layer_norm_eps}};
  }

  static EncoderConfig from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.num_layers = j.at("num_layers").get<int>();
    c.hidden_size = j.at("hidden_size").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.ff_size = j.at("ff_size").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_positions = j.at("max_positions").get<int>();
    c.num_segments = j.value("num_segments", 2);
    c.dropout_rate = j.value("dropout_rate", 0.1);
    c.layer_norm_eps = j.value("layer_norm_eps", 1e-12);
    c.validate();
    return c;
  }
};

template <typename T>
struct LayerParams {
  TensorPtr<T> wq, bq, wk, bk, wv, bv, wo, bo;
  TensorPtr<T> attn_ln_gamma, attn_ln_beta;
  TensorPtr<T> w1, b1, w2, b2;
  TensorPtr<T> ffn_ln_gamma, ffn_ln_beta;
};

// All learnable tensors of the encoder plus the MLM/NSP/response-selection
// heads, addressable by unique name for checkpointing and freezing.
template <typename T>
struct Parameters {
  EncoderConfig config;
  TensorPtr<T> token_emb, pos_emb, seg_emb, emb_ln_gamma, emb_ln_beta;
  std::vector<LayerParams<T>> layers;
  TensorPtr<T> pooler_w, pooler_b;
  TensorPtr<T> mlm_w, mlm_b;
  TensorPtr<T> nsp_w, nsp_b;
  TensorPtr<T> rs_w, rs_b;
  std::vector<std::pair<std::string, TensorPtr<T>>> named;

  static Parameters zeros(const EncoderConfig& cfg) {
    cfg.validate();
    Parameters p;
    p.config = cfg;
    const int h = cfg.hidden_size;
    auto reg = [&p](const std::string& name, int rows, int cols) {
      auto t = make_tensor<T>(rows, cols);
      t->name = name;
      p.named.emplace_back(name, t);
      return t;
    };
    p.token_emb = reg("embeddings.token", cfg.vocab_size, h);
    p.pos_emb = reg("embeddings.position", cfg.max_positions, h);
    p.seg_emb = reg("embeddings.segment", cfg.num_segments, h);
    p.emb_ln_gamma = reg("embeddings.ln.gamma", 1, h);
    p.emb_ln_beta = reg("embeddings.ln.beta", 1, h);
    p.layers.resize(cfg.num_layers);
    for (int l = 0; l < cfg.num_layers; ++l) {
      const std::string base = "layer." + std::to_string(l) + ".";
      auto& lp = p.layers[l];
      lp.wq = reg(base + "attn.wq", h, h);
      lp.bq = reg(base + "attn.bq", 1, h);
      lp.wk = reg(base + "attn.wk", h, h);
      lp.bk = reg(base + "attn.bk", 1, h);
      lp.wv = reg(base + "attn.wv", h, h);
      lp.bv = reg(base + "attn.bv", 1, h);
      lp.wo = reg(base + "attn.wo", h, h);
      lp.bo = reg(base + "attn.bo", 1, h);
      lp.attn_ln_gamma = reg(base + "attn.ln.gamma", 1, h);
      lp.attn_ln_beta = reg(base + "attn.ln.beta", 1, h);
      lp.w1 = reg(base + "ffn.w1", h, cfg.ff_size);
      lp.b1 = reg(base + "ffn.b1", 1, cfg.ff_size);
      lp.w2 = reg(base + "ffn.w2", cfg.ff_size, h);
      lp.b2 = reg(base + "ffn.b2", 1, h);
      lp.ffn_ln_gamma = reg(base + "ffn.ln.gamma", 1, h);
      lp.ffn_ln_beta = reg(base + "ffn.ln.beta", 1, h);
    }
    p.pooler_w = reg("pooler.w", h, h);
    p.pooler_b = reg("pooler.b", 1, h);
    p.mlm_w = reg("heads.mlm.w", h, cfg.vocab_size);
    p.mlm_b = reg("heads.mlm.b", 1, cfg.vocab_size);
    p.nsp_w = reg("heads.nsp.w", h, 2);
    p.nsp_b = reg("heads.nsp.b", 1, 2);
    p.rs_w = reg("heads.rs.w", h, 1);
    p.rs_b = reg("heads.rs.b", 1, 1);
    return p;
  }

  // Truncated-normal(0.02) weights, zero biases, unit layer-norm scales.
  static Parameters init(const EncoderConfig& cfg, Rng& rng) {
    Parameters p = zeros(cfg);
    for (auto& [name, t] : p.named) {
      if (name.ends_with("gamma")) {
        std::fill(t->v.begin(), t->v.end(), T(1));
      } else if (t->rows > 1) {  // biases and shifts are 1-row, stay zero
        for (auto& v : t->v) v = T(rng.next_trunc_normal(0.02));
      }
    }
    return p;
  }

  TensorPtr<T> find(const std::string& name) const {
    for (const auto& [n, t] : named)
      if (n == name) return t;
    throw data_error("no such parameter: " + name);
  }

  Parameters clone() const {
    Parameters p = zeros(config);
    for (std::size_t i = 0; i < named.size(); ++i) p.named[i].second->v = named[i].second->v;
    return p;
  }

  void zero_grads() {
    for (auto& [name, t] : named) t->zero_grad();
  }

  void set_trainable(const std::set<std::string>& trainable) {
    for (auto& [name, t] : named) {
      t->needs_grad = trainable.count(name) > 0;
      if (!t->needs_grad) t->g.clear();  // frozen tensors carry no gradient buffer
    }
  }

  void save(const std::string& dir) const;
  static Parameters load(const std::string& dir);
};

// One encoded sequence, already padded: ids, segments, and a 0/1 key mask.
struct EncodedSeq {
  std::vector<int> input_ids;
  std::vector<int> segment_ids;
  std::vector<int> attention_mask;
};

template <typename T>
struct ForwardResult {
  std::vector<TensorPtr<T>> hidden;  // L+1 states, [len x H] each
  TensorPtr<T> t_cls;                // pooled [1 x H]
};

namespace detail {

// Builders emit the padding as a strict suffix; when that holds we drop the
// padded tail before running the stack instead of masking it.
inline int prefix_length(const std::vector<int>& mask) {
  std::size_t i = 0;
  while (i < mask.size() && mask[i] == 1) ++i;
  for (std::size_t j = i; j < mask.size(); ++j)
    if (mask[j] != 0) return -1;
  return static_cast<int>(i);
}

}  // namespace detail

template <typename T>
TensorPtr<T> embed(Tape<T>* tape, const EncodedSeq& seq, const Parameters<T>& params,
                   int len, bool train, Rng* rng) {
  const auto& cfg = params.config;
  if (len > cfg.max_positions) throw data_error("sequence longer than max_positions");
  std::vector<int> ids(seq.input_ids.begin(), seq.input_ids.begin() + len);
  std::vector<int> segs(seq.segment_ids.begin(), seq.segment_ids.begin() + len);
  std::vector<int> pos(len);
  for (int i = 0; i < len; ++i) pos[i] = i;
  for (int id : ids)
    if (id < 0 || id >= cfg.vocab_size) throw data_error("token id out of range");
  for (int s : segs)
    if (s < 0 || s >= cfg.num_segments) throw data_error("segment id out of range");

  auto tok = gather_rows(tape, params.token_emb, ids);
  auto pe = gather_rows(tape, params.pos_emb, pos);
  auto se = gather_rows(tape, params.seg_emb, segs);
  auto sum = add(tape, add(tape, tok, pe), se);
  auto normed = layer_norm(tape, sum, params.emb_ln_gamma, params.emb_ln_beta,
                           T(cfg.layer_norm_eps));
  if (train && cfg.dropout_rate > 0.0 && rng != nullptr)
    normed = dropout(tape, normed, cfg.dropout_rate, *rng);
  return normed;
}

// Multi-head scaled dot-product self-attention block (projection, residual,
// layer norm). Masked keys receive exactly zero weight.
template <typename T>
TensorPtr<T> attention(Tape<T>* tape, const TensorPtr<T>& hidden,
                       const std::vector<int>& key_mask, const LayerParams<T>& lp,
                       const EncoderConfig& cfg, bool train, Rng* rng) {
  const int d = cfg.head_dim();
  const T inv_sqrt_d = T(1) / std::sqrt(T(d));
  auto q = add_row(tape, matmul(tape, hidden, lp.wq), lp.bq);
  auto k = add_row(tape, matmul(tape, hidden, lp.wk), lp.bk);
  auto v = add_row(tape, matmul(tape, hidden, lp.wv), lp.bv);
  std::vector<TensorPtr<T>> heads;
  heads.reserve(cfg.num_heads);
  for (int h = 0; h < cfg.num_heads; ++h) {
    auto qh = slice_cols(tape, q, h * d, (h + 1) * d);
    auto kh = slice_cols(tape, k, h * d, (h + 1) * d);
    auto vh = slice_cols(tape, v, h * d, (h + 1) * d);
    auto scores = matmul_nt(tape, qh, kh, inv_sqrt_d);
    auto weights = softmax_rows_masked(tape, scores, key_mask);
    heads.push_back(matmul(tape, weights, vh));
  }
  auto ctx = cfg.num_heads == 1 ? heads[0] : concat_cols(tape, heads);
  auto proj = add_row(tape, matmul(tape, ctx, lp.wo), lp.bo);
  if (train && cfg.dropout_rate > 0.0 && rng != nullptr)
    proj = dropout(tape, proj, cfg.dropout_rate, *rng);
  auto res = add(tape, hidden, proj);
  return layer_norm(tape, res, lp.attn_ln_gamma, lp.attn_ln_beta, T(cfg.layer_norm_eps));
}

template <typename T>
TensorPtr<T> feed_forward(Tape<T>* tape, const TensorPtr<T>& hidden, const LayerParams<T>& lp,
                          const EncoderConfig& cfg, bool train, Rng* rng) {
  auto h1 = gelu(tape, add_row(tape, matmul(tape, hidden, lp.w1), lp.b1));
  auto h2 = add_row(tape, matmul(tape, h1, lp.w2), lp.b2);
  if (train && cfg.dropout_rate > 0.0 && rng != nullptr)
    h2 = dropout(tape, h2, cfg.dropout_rate, *rng);
  auto res = add(tape, hidden, h2);
  return layer_norm(tape, res, lp.ffn_ln_gamma, lp.ffn_ln_beta, T(cfg.layer_norm_eps));
}

template <typename T>
ForwardResult<T> forward(Tape<T>* tape, const EncodedSeq& seq, const Parameters<T>& params,
                         bool train = false, Rng* rng = nullptr) {
  const int n = static_cast<int>(seq.input_ids.size());
  if (n == 0) throw data_error("empty input");
  if (seq.segment_ids.size() != seq.input_ids.size() ||
      seq.attention_mask.size() != seq.input_ids.size())
    throw data_error("input field lengths differ");
  int len = detail::prefix_length(seq.attention_mask);
  std::vector<int> key_mask;
  if (len == 0) throw data_error("fully masked row");
  if (len > 0) {
    key_mask.assign(len, 1);
  } else {
    len = n;
    key_mask = seq.attention_mask;
  }
  ForwardResult<T> out;
  out.hidden.reserve(params.config.num_layers + 1);
  out.hidden.push_back(embed(tape, seq, params, len, train, rng));
  for (const auto& lp : params.layers) {
    auto attended = attention(tape, out.hidden.back(), key_mask, lp, params.config, train, rng);
    out.hidden.push_back(feed_forward(tape, attended, lp, params.config, train, rng));
  }
  auto first = pick_row(tape, out.hidden.back(), 0);
  out.t_cls = tanh_op(tape, add_row(tape, matmul(tape, first, params.pooler_w), params.pooler_b));
  return out;
}

// Logits over the vocabulary at the masked positions, [num_positions x V].
template <typename T>
TensorPtr<T> mlm_logits(Tape<T>* tape, const TensorPtr<T>& final_hidden,
                        const std::vector<int>& positions, const Parameters<T>& params) {
  for (int p : positions)
    if (p < 0 || p >= final_hidden->rows) throw data_error("mlm position out of range");
  auto picked = gather_rows(tape, final_hidden, positions);
  return add_row(tape, matmul(tape, picked, params.mlm_w), params.mlm_b);
}

template <typename T>
TensorPtr<T> nsp_logits(Tape<T>* tape, const TensorPtr<T>& t_cls, const Parameters<T>& params) {
  return add_row(tape, matmul(tape, t_cls, params.nsp_w), params.nsp_b);
}

template <typename T>
TensorPtr<T> rs_logit(Tape<T>* tape, const TensorPtr<T>& t_cls, const Parameters<T>& params) {
  return add_row(tape, matmul(tape, t_cls, params.rs_w), params.rs_b);
}

// g(c, r) = sigma(W_task^T t_cls + b), clamped strictly inside (0, 1).
template <typename T>
T rs_score_from_logit(T z) {
  const T s = T(1) / (T(1) + std::exp(-z));
  const T lo = std::numeric_limits<T>::min();
  const T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
  return std::min(std::max(s, lo), hi);
}

template <typename T>
T rs_score(const EncodedSeq& seq, const Parameters<T>& params) {
  auto fwd = forward<T>(nullptr, seq, params);
  auto z = rs_logit<T>(nullptr, fwd.t_cls, params);
  return rs_score_from_logit(z->v[0]);
}

// ---- checkpoint io ----------------------------------------------------

namespace detail {

inline std::string tensor_filename(const std::string& name) {
  std::string f = name;
  for (char& c : f)
    if (c == '.') c = '_';
  return f + ".bin";
}

}  // namespace detail

template <typename T>
void Parameters<T>::save(const std::string& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream out(fs::path(dir) / "config.json");
    if (!out.is_open()) throw data_error("cannot write checkpoint config: " + dir);
    out << config.to_json().dump(2) << '\n';
  }
  nlohmann::json manifest = nlohmann::json::object();
  for (const auto& [name, t] : named) {
    const std::string filename = detail::tensor_filename(name);
    manifest[name] = {{"shape", {t->rows, t->cols}}, {"dtype", "f32"}, {"filename", filename}};
    std::ofstream bin(fs::path(dir) / filename, std::ios::binary);
    if (!bin.is_open()) throw data_error("cannot write tensor file: " + filename);
    std::vector<float> buf(t->v.begin(), t->v.end());
    bin.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out.is_open()) throw data_error("cannot write checkpoint manifest: " + dir);
  out << manifest.dump(2) << '\n';
}

template <typename T>
Parameters<T> Parameters<T>::load(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream cfg_in(fs::path(dir) / "config.json");
  if (!cfg_in.is_open()) throw data_error("cannot open checkpoint config in " + dir);
  EncoderConfig cfg = EncoderConfig::from_json(nlohmann::json::parse(cfg_in));
  std::ifstream man_in(fs::path(dir) / "manifest.json");
  if (!man_in.is_open()) throw data_error("cannot open checkpoint manifest in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(man_in);

  Parameters p = zeros(cfg);
  for (auto& [name, t] : p.named) {
    if (!manifest.contains(name)) throw data_error("checkpoint missing tensor: " + name);
    const auto& entry = manifest.at(name);
    const std::vector<int> shape = entry.at("shape");
    if (shape.size() != 2 || shape[0] != t->rows || shape[1] != t->cols)
      throw data_error("checkpoint shape mismatch for " + name);
    const std::string dtype = entry.at("dtype");
    if (dtype != "f32") throw data_error("unsupported dtype for " + name);
    const std::string filename = entry.at("filename");
    std::ifstream bin(fs::path(dir) / filename, std::ios::binary);
    if (!bin.is_open()) throw data_error("cannot open tensor file: " + filename);
    std::vector<float> buf(t->size());
    bin.read(reinterpret_cast<char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (static_cast<std::size_t>(bin.gcount()) != buf.size() * sizeof(float))
      throw data_error("tensor file truncated: " + filename);
    for (std::size_t i = 0; i < buf.size(); ++i) t->v[i] = T(buf[i]);
  }
  return p;
}

}  // namespace rsdpt

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "rsdpt/corpus.hpp"
#include "rsdpt/encoder.hpp"
#include "rsdpt/pretrain.hpp"
#include "rsdpt/vocab.hpp"

namespace rsdpt {

struct TrainConfig {
  int batch_size = 32;
  double learning_rate = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  double warmup_fraction = 0.1;
  std::int64_t max_steps = 0;  // 0: derived from epochs for fine-tuning
  int max_context_len = 280;
  int max_response_len = 40;
  int vft_layers = -1;  // -1: tune all layers (T = L)
  int negatives_per_positive = 1;
  int epochs = 3;
  double clip_norm = 1.0;  // 0 disables clipping
  bool freeze_embeddings = false;
  std::uint64_t seed = 13;

  int seq_len() const { return max_context_len + max_response_len; }

  void validate() const {
    if (learning_rate <= 0) throw usage_error("learning_rate must be positive");
    if (batch_size < 1) throw usage_error("batch_size must be >= 1");
    if (negatives_per_positive < 1) throw usage_error("negatives_per_positive must be >= 1");
    if (warmup_fraction < 0 || warmup_fraction >= 1)
      throw usage_error("warmup_fraction must be in [0,1)");
    if (max_context_len < 3 || max_response_len < 1)
      throw usage_error("sequence length split too small");
    if (epochs < 1) throw usage_error("epochs must be >= 1");
  }

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

enum class Objective { kMlm, kNsp, kMlmNsp };

Objective objective_from_string(const std::string& s);
std::string objective_to_string(Objective o);

// ---- losses ------------------------------------------------------------

template <typename T>
struct DptLossValue {
  TensorPtr<T> loss;
  double mlm = 0.0;
  double nsp = 0.0;
  double total = 0.0;
};

// L_DPT = L_MLM + L_NSP: mean cross entropy over all masked positions in the
// batch plus mean 2-way cross entropy over examples.
template <typename T>
DptLossValue<T> dpt_loss(Tape<T>* tape, const std::vector<PretrainExample>& batch,
                         const Parameters<T>& params, Objective objective = Objective::kMlmNsp,
                         bool train = false, Rng* rng = nullptr) {
  if (batch.empty()) throw data_error("dpt_loss: empty batch");
  std::int64_t total_masked = 0;
  for (const auto& ex : batch) total_masked += static_cast<std::int64_t>(ex.mlm_positions.size());
  const bool use_mlm = objective != Objective::kNsp;
  const bool use_nsp = objective != Objective::kMlm;
  if (use_mlm && total_masked == 0) throw data_error("dpt_loss: batch has no masked positions");

  std::vector<TensorPtr<T>> parts;
  std::vector<T> weights;
  double mlm_value = 0.0, nsp_value = 0.0;
  for (const auto& ex : batch) {
    EncodedSeq seq{ex.input_ids, ex.segment_ids, ex.attention_mask};
    auto fwd = forward(tape, seq, params, train, rng);
    if (use_mlm && !ex.mlm_positions.empty()) {
      auto logits = mlm_logits(tape, fwd.hidden.back(), ex.mlm_positions, params);
      auto ce = cross_entropy_rows(tape, logits, ex.mlm_targets);
      mlm_value += static_cast<double>(ce->v[0]);
      parts.push_back(ce);
      weights.push_back(T(1) / T(total_masked));
    }
    if (use_nsp) {
      auto logits = nsp_logits(tape, fwd.t_cls, params);
      auto ce = cross_entropy_rows(tape, logits, {ex.nsp_label});
      nsp_value += static_cast<double>(ce->v[0]);
      parts.push_back(ce);
      weights.push_back(T(1) / T(batch.size()));
    }
  }
  DptLossValue<T> out;
  out.loss = weighted_sum(tape, parts, weights);
  out.mlm = use_mlm ? mlm_value / static_cast<double>(total_masked) : 0.0;
  out.nsp = use_nsp ? nsp_value / static_cast<double>(batch.size()) : 0.0;
  out.total = static_cast<double>(out.loss->v[0]);
  return out;
}

template <typename T>
struct FtLossValue {
  TensorPtr<T> loss;
  double value = 0.0;
  double accuracy = 0.0;
};

// Mean binary cross entropy of g(c, r) over the batch (Eq.-style pointwise
// objective); accuracy counts score > 0.5 as a positive prediction.
template <typename T>
FtLossValue<T> finetune_loss(Tape<T>* tape, const std::vector<std::pair<EncodedSeq, int>>& batch,
                             const Parameters<T>& params, bool train = false, Rng* rng = nullptr) {
  if (batch.empty()) throw data_error("finetune_loss: empty batch");
  std::vector<TensorPtr<T>> parts;
  std::vector<T> weights;
  int correct = 0;
  for (const auto& [seq, label] : batch) {
    if (label != 0 && label != 1) throw data_error("finetune_loss: label must be 0 or 1");
    auto fwd = forward(tape, seq, params, train, rng);
    auto z = rs_logit(tape, fwd.t_cls, params);
    const bool predicted_positive = z->v[0] > T(0);
    if (predicted_positive == (label == 1)) ++correct;
    parts.push_back(bce_with_logit(tape, z, label));
    weights.push_back(T(1) / T(batch.size()));
  }
  FtLossValue<T> out;
  out.loss = weighted_sum(tape, parts, weights);
  out.value = static_cast<double>(out.loss->v[0]);
  out.accuracy = static_cast<double>(correct) / static_cast<double>(batch.size());
  return out;
}

// ---- optimizer ---------------------------------------------------------

template <typename T>
struct OptimizerState {
  struct Moments {
    std::vector<T> m;
    std::vector<T> v;
  };
  std::map<std::string, Moments> moments;
  std::int64_t step = 0;
};

// One AdamW update over every trainable parameter: decoupled weight decay
// (multi-row tensors only; biases and layer-norm parameters are excluded)
// applied before the bias-corrected Adam delta. Frozen tensors are untouched.
template <typename T>
void adamw_step(Parameters<T>& params, OptimizerState<T>& state, const TrainConfig& cfg,
                double step_lr) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, tensor] : params.named) {
    if (!tensor->needs_grad) continue;
    if (tensor->g.size() != tensor->size())
      throw data_error("missing gradient for trainable tensor: " + name);
    auto& mom = state.moments[name];
    if (mom.m.size() != tensor->size()) {
      mom.m.assign(tensor->size(), T(0));
      mom.v.assign(tensor->size(), T(0));
    }
    const bool decay = cfg.weight_decay > 0 && tensor->rows > 1;
    const T wd_scale = decay ? T(1.0 - step_lr * cfg.weight_decay) : T(1);
    for (std::size_t i = 0; i < tensor->size(); ++i) {
      const T g = tensor->g[i];
      tensor->v[i] *= wd_scale;
      mom.m[i] = T(cfg.beta1) * mom.m[i] + T(1.0 - cfg.beta1) * g;
      mom.v[i] = T(cfg.beta2) * mom.v[i] + T(1.0 - cfg.beta2) * g * g;
      const T mhat = mom.m[i] / T(bc1);
      const T vhat = mom.v[i] / T(bc2);
      tensor->v[i] -= T(step_lr) * mhat / (std::sqrt(vhat) + T(cfg.epsilon));
    }
  }
}

// Scale trainable gradients so their global norm is at most clip_norm.
template <typename T>
double clip_gradients(Parameters<T>& params, double clip_norm) {
  double sq = 0.0;
  for (auto& [name, tensor] : params.named) {
    if (!tensor->needs_grad || tensor->g.empty()) continue;
    for (const T g : tensor->g) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (clip_norm > 0 && norm > clip_norm) {
    const T s = T(clip_norm / norm);
    for (auto& [name, tensor] : params.named) {
      if (!tensor->needs_grad || tensor->g.empty()) continue;
      for (T& g : tensor->g) g *= s;
    }
  }
  return norm;
}

// Linear warmup over warmup_fraction * max_steps, then linear decay to zero.
double lr_schedule(std::int64_t step, const TrainConfig& cfg);

// Names of the tensors tuned when the top `top_layers` encoder layers are
// unfrozen. Embeddings (unless frozen by flag), pooler, and task heads are
// always tuned.
std::set<std::string> select_trainable(int num_layers, int top_layers,
                                       bool freeze_embeddings = false);

// Per-epoch negative resampling: each positive is emitted with k distinct
// negatives drawn from the pool (its own response excluded). The stream is a
// pure function of (seed, epoch).
std::vector<FineTuneExample> resample_negatives(const std::vector<FineTuneExample>& positives,
                                                const std::vector<std::string>& pool, int k,
                                                int epoch, std::uint64_t seed);

// ---- training loops (float) ---------------------------------------------

struct PretrainSource {
  std::function<PretrainExample(std::int64_t)> at;
};

PretrainSource source_from_generator(std::shared_ptr<PretrainGenerator> gen);
PretrainSource source_from_examples(std::shared_ptr<std::vector<PretrainExample>> examples);

// JSONL sink for training records, echoed to stderr at info level.
class TrainLog {
 public:
  explicit TrainLog(const std::string& path);  // empty path: stderr echo only
  void write(const nlohmann::json& record);

 private:
  std::ofstream file_;
  bool enabled_ = false;
};

struct PostTrainOptions {
  Objective objective = Objective::kMlmNsp;
  std::string out_dir;
  std::string log_path;
  std::int64_t log_every = 50;
  std::int64_t ckpt_every = 0;  // 0: final checkpoint only
  std::string resume_dir;       // continue a previous run (restores optimizer)
};

Parameters<float> post_train(const PretrainSource& source, Parameters<float> params,
                             const TrainConfig& cfg, const PostTrainOptions& opts);

struct FineTuneOptions {
  bool with_eot = true;
  std::string out_dir;
  std::string log_path;
  std::int64_t log_every = 20;
  int threads = 1;  // validation scoring
};

Parameters<float> fine_tune(const std::vector<FineTuneExample>& train,
                            const std::vector<EvalInstance>& valid, const Vocab& vocab,
                            Parameters<float> params, const TrainConfig& cfg,
                            const FineTuneOptions& opts);

// Checkpoint helpers shared by resume and the CLI.
void save_optimizer_state(const OptimizerState<float>& state, const std::string& dir);
bool load_optimizer_state(OptimizerState<float>& state, const std::string& dir);

EncodedSeq to_encoded(const ModelInput& input);

}  // namespace rsdpt

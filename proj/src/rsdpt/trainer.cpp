#include "rsdpt/trainer.hpp"

#include <algorithm>
#include <filesystem>

#include "rsdpt/eval.hpp"

namespace rsdpt {
namespace {

// Stream tags keep the data, dropout, and shuffle rng streams disjoint for a
// given --seed.
constexpr std::uint64_t kDropoutStream = 0x8000000000000000ULL;
constexpr std::uint64_t kShuffleStream = 0x4000000000000000ULL;

std::set<std::string> drop_unused_heads(std::set<std::string> names, bool keep_mlm, bool keep_nsp,
                                        bool keep_rs) {
  // Heads outside the active objective get no gradient signal; leaving them
  // "trainable" would only let weight decay erode them.
  for (auto it = names.begin(); it != names.end();) {
    if ((!keep_mlm && it->starts_with("heads.mlm")) ||
        (!keep_nsp && it->starts_with("heads.nsp")) ||
        (!keep_rs && it->starts_with("heads.rs"))) {
      it = names.erase(it);
    } else {
      ++it;
    }
  }
  return names;
}

void ensure_trainable_grads(Parameters<float>& params) {
  for (auto& [name, t] : params.named)
    if (t->needs_grad) t->ensure_grad();
}

}  // namespace

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"betas", {beta1, beta2}},
          {"epsilon", epsilon},
          {"weight_decay", weight_decay},
          {"warmup_fraction", warmup_fraction},
          {"max_steps", max_steps},
          {"max_context_len", max_context_len},
          {"max_response_len", max_response_len},
          {"vft_layers", vft_layers},
          {"negatives_per_positive", negatives_per_positive},
          {"epochs", epochs},
          {"clip_norm", clip_norm},
          {"freeze_embeddings", freeze_embeddings},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  if (j.contains("betas")) {
    const auto betas = j.at("betas").get<std::vector<double>>();
    if (betas.size() != 2) throw usage_error("betas must have two entries");
    c.beta1 = betas[0];
    c.beta2 = betas[1];
  }
  c.epsilon = j.value("epsilon", c.epsilon);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.max_context_len = j.value("max_context_len", c.max_context_len);
  c.max_response_len = j.value("max_response_len", c.max_response_len);
  c.vft_layers = j.value("vft_layers", c.vft_layers);
  c.negatives_per_positive = j.value("negatives_per_positive", c.negatives_per_positive);
  c.epochs = j.value("epochs", c.epochs);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.freeze_embeddings = j.value("freeze_embeddings", c.freeze_embeddings);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

Objective objective_from_string(const std::string& s) {
  if (s == "mlm") return Objective::kMlm;
  if (s == "nsp") return Objective::kNsp;
  if (s == "mlm+nsp") return Objective::kMlmNsp;
  throw usage_error("objective must be one of mlm, nsp, mlm+nsp");
}

std::string objective_to_string(Objective o) {
  switch (o) {
    case Objective::kMlm: return "mlm";
    case Objective::kNsp: return "nsp";
    default: return "mlm+nsp";
  }
}

double lr_schedule(std::int64_t step, const TrainConfig& cfg) {
  if (cfg.max_steps <= 0) throw usage_error("lr_schedule requires max_steps > 0");
  const std::int64_t warmup =
      static_cast<std::int64_t>(std::llround(cfg.warmup_fraction * static_cast<double>(cfg.max_steps)));
  step = std::clamp<std::int64_t>(step, 0, cfg.max_steps);
  if (warmup > 0 && step < warmup)
    return cfg.learning_rate * static_cast<double>(step) / static_cast<double>(warmup);
  if (cfg.max_steps == warmup) return cfg.learning_rate;
  return cfg.learning_rate * static_cast<double>(cfg.max_steps - step) /
         static_cast<double>(cfg.max_steps - warmup);
}

std::set<std::string> select_trainable(int num_layers, int top_layers, bool freeze_embeddings) {
  if (top_layers < 0 || top_layers > num_layers)
    throw usage_error("vft_layers must be in [0, " + std::to_string(num_layers) + "]");
  std::set<std::string> names;
  if (!freeze_embeddings) {
    names.insert("embeddings.token");
    names.insert("embeddings.position");
    names.insert("embeddings.segment");
    names.insert("embeddings.ln.gamma");
    names.insert("embeddings.ln.beta");
  }
  const char* layer_tensors[] = {"attn.wq",       "attn.bq",      "attn.wk",     "attn.bk",
                                 "attn.wv",       "attn.bv",      "attn.wo",     "attn.bo",
                                 "attn.ln.gamma", "attn.ln.beta", "ffn.w1",      "ffn.b1",
                                 "ffn.w2",        "ffn.b2",       "ffn.ln.gamma", "ffn.ln.beta"};
  for (int l = num_layers - top_layers; l < num_layers; ++l)
    for (const char* t : layer_tensors)
      names.insert("layer." + std::to_string(l) + "." + t);
  names.insert("pooler.w");
  names.insert("pooler.b");
  names.insert("heads.mlm.w");
  names.insert("heads.mlm.b");
  names.insert("heads.nsp.w");
  names.insert("heads.nsp.b");
  names.insert("heads.rs.w");
  names.insert("heads.rs.b");
  return names;
}

std::vector<FineTuneExample> resample_negatives(const std::vector<FineTuneExample>& positives,
                                                const std::vector<std::string>& pool, int k,
                                                int epoch, std::uint64_t seed) {
  if (k < 1) throw usage_error("negatives per positive must be >= 1");
  if (static_cast<int>(pool.size()) <= k) throw data_error("pool too small");
  Rng rng = Rng(seed).derive(static_cast<std::uint64_t>(epoch));
  std::vector<FineTuneExample> out;
  out.reserve(positives.size() * (1 + k));
  for (const auto& pos : positives) {
    out.push_back({pos.context, pos.response, 1});
    std::vector<int> eligible;
    eligible.reserve(pool.size());
    for (int i = 0; i < static_cast<int>(pool.size()); ++i)
      if (pool[i] != pos.response) eligible.push_back(i);
    if (static_cast<int>(eligible.size()) < k)
      throw data_error("pool too small after excluding the positive response");
    const auto picks = rng.sample_without_replacement(static_cast<int>(eligible.size()), k);
    for (int p : picks) out.push_back({pos.context, pool[eligible[p]], 0});
  }
  return out;
}

PretrainSource source_from_generator(std::shared_ptr<PretrainGenerator> gen) {
  return {[gen](std::int64_t i) { return gen->at(i); }};
}

PretrainSource source_from_examples(std::shared_ptr<std::vector<PretrainExample>> examples) {
  if (examples->empty()) throw data_error("empty pretrain example set");
  return {[examples](std::int64_t i) {
    return (*examples)[static_cast<std::size_t>(i % examples->size())];
  }};
}

TrainLog::TrainLog(const std::string& path) {
  if (path.empty()) return;
  file_.open(path);
  if (!file_.is_open()) throw data_error("cannot write training log: " + path);
  enabled_ = true;
}

void TrainLog::write(const nlohmann::json& record) {
  if (enabled_) file_ << record.dump() << '\n' << std::flush;
  log_info("%s", record.dump().c_str());
}

void save_optimizer_state(const OptimizerState<float>& state, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "optimizer");
  nlohmann::json index;
  index["step"] = state.step;
  nlohmann::json entries = nlohmann::json::object();
  for (const auto& [name, mom] : state.moments) {
    std::string base = name;
    for (char& c : base)
      if (c == '.') c = '_';
    entries[name] = {{"size", mom.m.size()}, {"filename", base + ".mom"}};
    std::ofstream bin(fs::path(dir) / "optimizer" / (base + ".mom"), std::ios::binary);
    if (!bin.is_open()) throw data_error("cannot write optimizer state");
    bin.write(reinterpret_cast<const char*>(mom.m.data()),
              static_cast<std::streamsize>(mom.m.size() * sizeof(float)));
    bin.write(reinterpret_cast<const char*>(mom.v.data()),
              static_cast<std::streamsize>(mom.v.size() * sizeof(float)));
  }
  index["moments"] = entries;
  std::ofstream out(fs::path(dir) / "optimizer" / "state.json");
  if (!out.is_open()) throw data_error("cannot write optimizer state index");
  out << index.dump(2) << '\n';
}

bool load_optimizer_state(OptimizerState<float>& state, const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(dir) / "optimizer" / "state.json");
  if (!in.is_open()) return false;
  nlohmann::json index = nlohmann::json::parse(in);
  state.step = index.at("step").get<std::int64_t>();
  state.moments.clear();
  for (const auto& [name, entry] : index.at("moments").items()) {
    const auto size = entry.at("size").get<std::size_t>();
    const auto filename = entry.at("filename").get<std::string>();
    std::ifstream bin(fs::path(dir) / "optimizer" / filename, std::ios::binary);
    if (!bin.is_open()) throw data_error("cannot open optimizer state file: " + filename);
    auto& mom = state.moments[name];
    mom.m.resize(size);
    mom.v.resize(size);
    bin.read(reinterpret_cast<char*>(mom.m.data()),
             static_cast<std::streamsize>(size * sizeof(float)));
    bin.read(reinterpret_cast<char*>(mom.v.data()),
             static_cast<std::streamsize>(size * sizeof(float)));
    if (!bin) throw data_error("optimizer state file truncated: " + filename);
  }
  return true;
}

Parameters<float> post_train(const PretrainSource& source, Parameters<float> params,
                             const TrainConfig& cfg, const PostTrainOptions& opts) {
  cfg.validate();
  if (cfg.max_steps <= 0) throw usage_error("post_train requires max_steps > 0");
  if (opts.out_dir.empty()) throw usage_error("post_train requires an output directory");

  const int L = params.config.num_layers;
  auto trainable = drop_unused_heads(select_trainable(L, L),
                                     opts.objective != Objective::kNsp,
                                     opts.objective != Objective::kMlm,
                                     /*keep_rs=*/false);
  params.set_trainable(trainable);

  OptimizerState<float> state;
  std::int64_t start_step = 0;
  if (!opts.resume_dir.empty()) {
    if (!load_optimizer_state(state, opts.resume_dir))
      throw data_error("resume directory has no optimizer state: " + opts.resume_dir);
    start_step = state.step;
    log_info("resuming post-training at step %lld", static_cast<long long>(start_step));
  }

  TrainLog log(opts.log_path);
  Rng base(cfg.seed);
  for (std::int64_t step = start_step; step < cfg.max_steps; ++step) {
    std::vector<PretrainExample> batch;
    batch.reserve(cfg.batch_size);
    for (int j = 0; j < cfg.batch_size; ++j)
      batch.push_back(source.at(step * cfg.batch_size + j));
    Rng dropout_rng = base.derive(kDropoutStream + static_cast<std::uint64_t>(step));
    Tape<float> tape;
    params.zero_grads();
    auto loss = dpt_loss(&tape, batch, params, opts.objective, /*train=*/true, &dropout_rng);
    tape.backward(loss.loss);
    ensure_trainable_grads(params);
    clip_gradients(params, cfg.clip_norm);
    const double lr = lr_schedule(step, cfg);
    adamw_step(params, state, cfg, lr);

    if (opts.log_every > 0 && ((step + 1) % opts.log_every == 0 || step + 1 == cfg.max_steps)) {
      log.write({{"step", step + 1},
                 {"lr", lr},
                 {"mlm", loss.mlm},
                 {"nsp", loss.nsp},
                 {"dpt", loss.total}});
    }
    if (opts.ckpt_every > 0 && (step + 1) % opts.ckpt_every == 0 && step + 1 < cfg.max_steps) {
      const std::string dir = opts.out_dir + "/step-" + std::to_string(step + 1);
      params.save(dir);
      save_optimizer_state(state, dir);
    }
  }
  params.save(opts.out_dir);
  save_optimizer_state(state, opts.out_dir);
  return params;
}

EncodedSeq to_encoded(const ModelInput& input) {
  return EncodedSeq{input.input_ids, input.segment_ids, input.attention_mask};
}

namespace {

std::pair<EncodedSeq, int> encode_example(const FineTuneExample& ex, const Vocab& vocab,
                                          const TrainConfig& cfg, bool with_eot) {
  std::vector<std::vector<std::string>> context_tokens;
  context_tokens.reserve(ex.context.size());
  for (const auto& utt : ex.context) context_tokens.push_back(tokenize(utt, vocab));
  const ModelInput input =
      build_model_input(context_tokens, tokenize(ex.response, vocab), vocab,
                        cfg.max_context_len, cfg.max_response_len, with_eot);
  return {to_encoded(input), ex.label};
}

}  // namespace

Parameters<float> fine_tune(const std::vector<FineTuneExample>& train,
                            const std::vector<EvalInstance>& valid, const Vocab& vocab,
                            Parameters<float> params, const TrainConfig& cfg,
                            const FineTuneOptions& opts) {
  cfg.validate();
  if (train.empty()) throw data_error("empty training set");
  const int L = params.config.num_layers;
  const int top = cfg.vft_layers < 0 ? L : cfg.vft_layers;
  auto trainable = drop_unused_heads(select_trainable(L, top, cfg.freeze_embeddings),
                                     /*keep_mlm=*/false, /*keep_nsp=*/false, /*keep_rs=*/true);
  params.set_trainable(trainable);

  std::vector<FineTuneExample> positives;
  std::vector<std::string> pool;
  if (cfg.negatives_per_positive > 1) {
    for (const auto& ex : train)
      if (ex.label == 1) positives.push_back(ex);
    if (positives.empty()) throw data_error("no positive examples to resample around");
    std::set<std::string> seen;
    for (const auto& ex : train)
      if (seen.insert(ex.response).second) pool.push_back(ex.response);
  }

  TrainLog log(opts.log_path);
  Rng base(cfg.seed);
  OptimizerState<float> state;
  TrainConfig sched = cfg;

  Parameters<float> best = params.clone();
  double best_mrr = -1.0;
  std::int64_t global_step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<FineTuneExample> epoch_data =
        cfg.negatives_per_positive > 1
            ? resample_negatives(positives, pool, cfg.negatives_per_positive, epoch, cfg.seed)
            : train;
    Rng shuffle_rng = base.derive(kShuffleStream + static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(epoch_data);

    const std::int64_t steps_per_epoch =
        (static_cast<std::int64_t>(epoch_data.size()) + cfg.batch_size - 1) / cfg.batch_size;
    if (sched.max_steps <= 0) sched.max_steps = steps_per_epoch * cfg.epochs;

    for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
      std::vector<std::pair<EncodedSeq, int>> batch;
      const std::size_t begin = static_cast<std::size_t>(s) * cfg.batch_size;
      const std::size_t end = std::min(epoch_data.size(), begin + cfg.batch_size);
      batch.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i)
        batch.push_back(encode_example(epoch_data[i], vocab, cfg, opts.with_eot));

      Rng dropout_rng = base.derive(kDropoutStream + static_cast<std::uint64_t>(global_step));
      Tape<float> tape;
      params.zero_grads();
      auto loss = finetune_loss(&tape, batch, params, /*train=*/true, &dropout_rng);
      tape.backward(loss.loss);
      ensure_trainable_grads(params);
      clip_gradients(params, cfg.clip_norm);
      const double lr = lr_schedule(std::min(global_step, sched.max_steps), sched);
      adamw_step(params, state, cfg, lr);
      ++global_step;

      if (opts.log_every > 0 && global_step % opts.log_every == 0) {
        log.write({{"step", global_step},
                   {"epoch", epoch},
                   {"lr", lr},
                   {"loss", loss.value},
                   {"acc", loss.accuracy}});
      }
    }

    if (!valid.empty()) {
      const Metrics m = evaluate(params, vocab, valid, {1}, cfg.max_context_len,
                                 cfg.max_response_len, opts.with_eot, opts.threads);
      log.write({{"epoch", epoch}, {"val_mrr", m.mrr}, {"val_r_at_1", m.recall_at.at(1)}});
      if (m.mrr > best_mrr) {
        best_mrr = m.mrr;
        best = params.clone();
      }
    }
  }

  Parameters<float>& final_params = valid.empty() ? params : best;
  if (!opts.out_dir.empty()) final_params.save(opts.out_dir);
  return final_params;
}

}  // namespace rsdpt
